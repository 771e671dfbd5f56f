"""Session fixtures: corpora and toy checkpoints shared across tests.

The acceptance checkpoints take a few minutes of CPU training; everything
else uses a seconds-scale smoke checkpoint.
"""

import json
import subprocess

import pytest

from extractor.corpus_gen import write_domain_files
from extractor.toy_models import make_toy_checkpoint

DOMAINS = {"wiki": 10, "news": 20, "reviews": 30, "qa": 40}


def run_miprobe(*args):
    """Drive the analysis toolkit through its CLI (the interop surface)."""
    result = subprocess.run(["miprobe", *args], capture_output=True, text=True)
    assert result.returncode == 0, (
        f"miprobe {' '.join(args)} failed:\n{result.stderr[-800:]}")
    return result


def probe_train_recoverability(dump_path, out_path):
    """Trained-probe held-out recoverability, as the toolkit reports it."""
    run_miprobe("train-probe", "--dump", str(dump_path), "--out", str(out_path),
                "--seed", "0", "--epochs", "40", "--lr", "0.01",
                "--patience", "6")
    with open(str(out_path) + ".train_report.json") as fh:
        report = json.load(fh)
    return report["result"]["train_report"]["final_val_recoverability"]


@pytest.fixture(scope="session")
def corpora(tmp_path_factory):
    out = tmp_path_factory.mktemp("corpora")
    return write_domain_files(out, DOMAINS, n_sentences=600, lexicon_seed=0,
                              copy_pretrain=3000)


@pytest.fixture(scope="session")
def smoke_checkpoint(tmp_path_factory, corpora):
    """Tiny barely-trained decoder for format/shape/determinism tests."""
    out = tmp_path_factory.mktemp("ckpt") / "smoke"
    return make_toy_checkpoint("decoder", corpora["wiki"], out, seed=0,
                               steps=40, layers=2, hidden=32,
                               max_sentences=200)


@pytest.fixture(scope="session")
def encoder_checkpoint(tmp_path_factory, corpora):
    out = tmp_path_factory.mktemp("ckpt") / "toy-encoder"
    return make_toy_checkpoint("encoder", corpora["pretrain"], out, seed=0,
                               steps=2000, layers=6)


@pytest.fixture(scope="session")
def decoder_checkpoint(tmp_path_factory, corpora):
    out = tmp_path_factory.mktemp("ckpt") / "toy-decoder"
    return make_toy_checkpoint("decoder", corpora["pretrain"], out, seed=0,
                               steps=2500, layers=6, pos_init_std=0.3)
