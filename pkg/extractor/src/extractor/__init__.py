"""Checkpoint-to-dump bridge for the recoverability toolkit."""

__version__ = "0.1.0"

# This package drives transformers as a batch tool; load reports and
# progress bars would drown its own output.
from transformers.utils import logging as _hf_logging

_hf_logging.set_verbosity_error()
_hf_logging.disable_progress_bar()
