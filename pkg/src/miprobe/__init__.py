"""miprobe: token-recoverability probing of embedding dumps with
certified mutual-information lower bounds."""

__version__ = "0.1.0"

from .bounds import (
    BoundConfig,
    MIBoundReport,
    binary_entropy,
    bound_report,
    empirical_token_entropy,
    estimate_delta,
    fano_token_bound,
    sentence_bound,
)
from .corpus import (
    Dump,
    DumpFormatError,
    DumpHeader,
    Manifest,
    SentenceRecord,
    ValidationReport,
    Vocabulary,
    bucket_by_length,
    load_dump,
    read_dump,
    save_dump,
    validate_dump,
    write_dump,
)
from .metrics import MetricReport, bleu_n, cosine, rouge_1, rouge_l, score_corpus, token_f1
from .oracle import (
    DiscreteJoint,
    SentenceJoint,
    VerificationReport,
    exact_conditional_entropy,
    exact_mi,
    exact_sentence_quantities,
    map_decoder_accuracy,
    verify_bounds,
)
from .probe import (
    LinearProbe,
    ProbeBatch,
    RecoverabilityResult,
    TrainConfig,
    TrainReport,
    TrainingDiverged,
    init_probe,
    load_probe,
    loss_and_grad,
    predict_tokens,
    recoverability,
    save_probe,
    train_probe,
)
