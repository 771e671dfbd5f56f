"""Linear embedding decoder: training objective, training loop, recoverability.

The decoder maps each d-dimensional position embedding independently to
|V| token logits through a single shared affine map. It is trained with a
one-vs-rest binary cross-entropy over the whole vocabulary (every position
contributes |V| terms, one positive), computed in log-space-stable form.

Recoverability is the per-position argmax accuracy of the trained decoder.
It is an empirical proxy: any fixed decoder under-estimates the optimum
over all measurable decoders, and the downstream Fano conversion stays
valid for any decoder, optimal or not.

Mean-pooled dumps (one vector per sentence) are accepted for training as
an experimental bag-of-tokens mode — each token is paired with the pooled
vector — but recoverability is defined per position only and rejects them.

Trained probes are immutable in practice and safe to share across threads
for prediction; gradient math vectorizes over positions and the batch loss
is a plain sum, so per-batch results are fixed for a fixed reduction order.
"""

from __future__ import annotations

import dataclasses
import json
import math
import struct
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit

from .corpus import Dump, Manifest

PROBE_MAGIC = b"MIPB"
PROBE_VERSION = 1
_PROBE_HEADER = struct.Struct("<4sHII")

ZEROS = "zeros"
SCALED_GAUSSIAN = "scaled_gaussian"
SGD = "sgd"
ADAM = "adam"


class TrainingDiverged(RuntimeError):
    """Loss became non-finite; message names the epoch."""


@dataclass
class LinearProbe:
    """The decoder: W (|V| x d) and b (|V|), applied per position."""

    W: np.ndarray
    b: np.ndarray
    vocab_size: int
    d: int
    trained_on: Manifest | None = None

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)
        if self.W.shape != (self.vocab_size, self.d):
            raise ValueError(f"W shape {self.W.shape} != ({self.vocab_size}, {self.d})")
        if self.b.shape != (self.vocab_size,):
            raise ValueError(f"b shape {self.b.shape} != ({self.vocab_size},)")
        if not (np.isfinite(self.W).all() and np.isfinite(self.b).all()):
            raise ValueError("probe parameters must be finite")

    def logits(self, embeddings: np.ndarray) -> np.ndarray:
        embeddings = np.asarray(embeddings)
        if embeddings.ndim != 2 or embeddings.shape[1] != self.d:
            raise ValueError(
                f"embeddings shape {embeddings.shape} incompatible with d={self.d}"
            )
        return embeddings.astype(np.float64, copy=False) @ self.W.T + self.b


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    batch_size: int = 32  # sentences per step
    learning_rate: float = 1e-3
    optimizer: str = ADAM
    seed: int = 0
    weight_init: str = ZEROS
    early_stop_patience: int = 3
    validation_fraction: float = 0.1

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if not 0.0 <= self.validation_fraction < 1.0:
            raise ValueError("validation_fraction must be in [0, 1)")
        if self.optimizer not in (SGD, ADAM):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.weight_init not in (ZEROS, SCALED_GAUSSIAN):
            raise ValueError(f"unknown weight_init {self.weight_init!r}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class ProbeBatch:
    """Stacked position embeddings (m x d) and their target token ids (m).

    The one-hot label matrix is implicit in `token_ids`; it is never
    materialized.
    """

    embeddings: np.ndarray
    token_ids: np.ndarray

    def __post_init__(self):
        self.embeddings = np.asarray(self.embeddings)
        self.token_ids = np.asarray(self.token_ids, dtype=np.int64)
        if self.embeddings.ndim != 2:
            raise ValueError("batch embeddings must be 2-d")
        if self.token_ids.shape != (self.embeddings.shape[0],):
            raise ValueError(
                f"{self.embeddings.shape[0]} embedding rows but "
                f"{self.token_ids.shape} targets"
            )

    @property
    def m(self) -> int:
        return int(self.token_ids.size)


def init_probe(d: int, vocab_size: int, config: TrainConfig = TrainConfig()) -> LinearProbe:
    """zeros: exactly W=0, b=0. scaled_gaussian: W entries i.i.d. normal with
    standard deviation 1/sqrt(d) (seeded), b zero."""
    if d < 1 or vocab_size < 2:
        raise ValueError(f"need d >= 1 and vocab_size >= 2, got d={d}, |V|={vocab_size}")
    if config.weight_init == ZEROS:
        W = np.zeros((vocab_size, d))
    else:
        rng = np.random.default_rng(config.seed)
        W = rng.normal(0.0, 1.0 / math.sqrt(d), size=(vocab_size, d))
    return LinearProbe(W=W, b=np.zeros(vocab_size), vocab_size=vocab_size, d=d)


def loss_and_grad(probe: LinearProbe, batch: ProbeBatch):
    """One-vs-rest BCE-with-logits loss over the batch and its exact gradient.

    loss = sum over positions i and vocabulary entries t of
           -[O_it log sigma(z_it) + (1-O_it) log(1-sigma(z_it))]
    with z = W E + b, evaluated as logaddexp(0,-z) + (1-O) z so that no
    term overflows for |z| up to 1e4. The per-logit gradient is
    sigma(z) - O.
    """
    if batch.m == 0:
        raise ValueError("empty batch")
    if int(batch.token_ids.max()) >= probe.vocab_size:
        raise ValueError("batch contains token ids outside the probe vocabulary")
    if int(batch.token_ids.min()) < 0:
        raise ValueError("negative token id")
    emb = batch.embeddings
    if not np.isfinite(emb).all():
        raise ValueError("non-finite embeddings in batch")
    z = probe.logits(emb)
    rows = np.arange(batch.m)
    loss = float(np.logaddexp(0.0, -z).sum() + z.sum() - z[rows, batch.token_ids].sum())
    dz = expit(z)
    dz[rows, batch.token_ids] -= 1.0
    grad_w = dz.T @ emb.astype(np.float64, copy=False)
    grad_b = dz.sum(axis=0)
    if not math.isfinite(loss):
        raise ValueError("non-finite loss")
    return loss, grad_w, grad_b


def predict_tokens(probe: LinearProbe, embeddings: np.ndarray) -> np.ndarray:
    """Argmax token id per position; ties go to the smallest id."""
    return np.argmax(probe.logits(embeddings), axis=1)


@dataclass
class RecoverabilityResult:
    p_rec: float
    per_sentence: list
    per_position_correct: int
    total_positions: int
    n_sentences: int

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def recoverability(probe: LinearProbe, records) -> RecoverabilityResult:
    """Per-position argmax accuracy over a record set (micro over positions),
    with the per-sentence mean accuracies alongside."""
    records = list(records)
    if not records:
        raise ValueError("empty record set")
    correct = 0
    total = 0
    per_sentence = []
    for rec in records:
        if rec.embeddings.shape[0] != rec.n:
            raise ValueError(
                "recoverability needs per-position records "
                f"(record {rec.sentence_id}: {rec.embeddings.shape[0]} rows, {rec.n} tokens)"
            )
        pred = predict_tokens(probe, rec.embeddings)
        hits = int((pred == rec.tokens.astype(np.int64)).sum())
        correct += hits
        total += rec.n
        per_sentence.append(hits / rec.n)
    return RecoverabilityResult(
        p_rec=correct / total,
        per_sentence=per_sentence,
        per_position_correct=correct,
        total_positions=total,
        n_sentences=len(records),
    )


@dataclass
class TrainReport:
    config: dict
    epoch_mean_loss: list = field(default_factory=list)
    epoch_val_recoverability: list = field(default_factory=list)
    final_val_recoverability: float | None = None
    best_epoch: int | None = None
    stopped_early: bool = False
    first_batch_loss: float | None = None
    first_batch_positions: int | None = None
    n_train_sentences: int = 0
    n_val_sentences: int = 0
    wall_clock_s: float = 0.0
    trained_on: dict | None = None
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _build_batch(records) -> ProbeBatch:
    embs = []
    ids = []
    for rec in records:
        if rec.embeddings.shape[0] == rec.n:
            embs.append(rec.embeddings)
            ids.append(rec.tokens)
        else:
            # pooled record: pair every token with the single pooled row
            embs.append(np.repeat(rec.embeddings, rec.n, axis=0))
            ids.append(rec.tokens)
    return ProbeBatch(
        embeddings=np.concatenate(embs, axis=0),
        token_ids=np.concatenate(ids, axis=0),
    )


class _Optimizer:
    def __init__(self, config: TrainConfig, shapes):
        self.kind = config.optimizer
        self.lr = config.learning_rate
        self.t = 0
        if self.kind == ADAM:
            self.beta1, self.beta2, self.eps = 0.9, 0.999, 1e-8
            self.m = [np.zeros(s) for s in shapes]
            self.v = [np.zeros(s) for s in shapes]

    def step(self, params, grads):
        self.t += 1
        if self.kind == SGD:
            for p, g in zip(params, grads):
                p -= self.lr * g
            return
        for i, (p, g) in enumerate(zip(params, grads)):
            self.m[i] = self.beta1 * self.m[i] + (1 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1 - self.beta2) * g * g
            m_hat = self.m[i] / (1 - self.beta1 ** self.t)
            v_hat = self.v[i] / (1 - self.beta2 ** self.t)
            p -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def train_probe(dump: Dump, config: TrainConfig = TrainConfig()):
    """Fit a probe on a dump. Deterministic given the seed: the validation
    split is held out by sentence up front, epochs reshuffle only the
    training sentences, and early stopping watches validation
    recoverability (the best-validation weights are what you get back).

    Returns (LinearProbe, TrainReport). Raises TrainingDiverged when the
    loss goes non-finite, naming the epoch.
    """
    records = list(dump.records)
    if not records:
        raise ValueError("empty dump")
    vocab_size = dump.header.vocab_size
    d = dump.header.embedding_dim
    start = time.perf_counter()
    report = TrainReport(
        config=config.to_dict(),
        trained_on=dump.manifest.to_dict() if dump.manifest else None,
    )
    if any(rec.embeddings.shape[0] != rec.n for rec in records):
        report.notes.append(
            "mean-pooled input: experimental bag-of-tokens training "
            "(each token paired with the pooled vector)"
        )

    rng = np.random.default_rng(config.seed)
    order = rng.permutation(len(records))
    n_val = int(round(config.validation_fraction * len(records)))
    if config.validation_fraction > 0 and n_val == 0 and len(records) > 1:
        n_val = 1
    val_records = [records[i] for i in order[:n_val]]
    train_records = [records[i] for i in order[n_val:]]
    if not train_records:
        raise ValueError("validation split left no training sentences")
    report.n_train_sentences = len(train_records)
    report.n_val_sentences = len(val_records)

    probe = init_probe(d, vocab_size, config)
    opt = _Optimizer(config, [probe.W.shape, probe.b.shape])
    best_val = -1.0
    best_state = None
    stale = 0

    for epoch in range(config.epochs):
        perm = rng.permutation(len(train_records))
        batch_losses = []
        for lo in range(0, len(perm), config.batch_size):
            batch = _build_batch(train_records[i] for i in perm[lo:lo + config.batch_size])
            try:
                loss, grad_w, grad_b = loss_and_grad(probe, batch)
            except ValueError as exc:
                if "non-finite loss" in str(exc):
                    raise TrainingDiverged(f"loss diverged in epoch {epoch}") from exc
                raise
            if report.first_batch_loss is None:
                report.first_batch_loss = loss
                report.first_batch_positions = batch.m
            batch_losses.append(loss)
            opt.step([probe.W, probe.b], [grad_w, grad_b])
        if not (np.isfinite(probe.W).all() and np.isfinite(probe.b).all()):
            raise TrainingDiverged(f"parameters diverged in epoch {epoch}")
        report.epoch_mean_loss.append(float(np.mean(batch_losses)))

        eval_records = val_records if val_records else train_records
        val_rec = recoverability(probe, eval_records).p_rec
        report.epoch_val_recoverability.append(val_rec)
        if val_rec > best_val + 1e-12:
            best_val = val_rec
            best_state = (probe.W.copy(), probe.b.copy())
            report.best_epoch = epoch
            stale = 0
        else:
            stale += 1
            if config.early_stop_patience > 0 and stale >= config.early_stop_patience:
                report.stopped_early = True
                break

    if best_state is not None:
        probe.W, probe.b = best_state
    report.final_val_recoverability = best_val
    probe.trained_on = dump.manifest
    report.wall_clock_s = time.perf_counter() - start
    return probe, report


def save_probe(probe: LinearProbe, path, train_config: TrainConfig | None = None,
               tool_version: str = "") -> None:
    """Binary probe file (magic, version, shapes, b then W as f32) plus a JSON
    sidecar echoing the training config and training-dump manifest."""
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(_PROBE_HEADER.pack(PROBE_MAGIC, PROBE_VERSION,
                                    probe.vocab_size, probe.d))
        fh.write(probe.b.astype("<f4").tobytes())
        fh.write(probe.W.astype("<f4").tobytes())
    sidecar = {
        "train_config": train_config.to_dict() if train_config else None,
        "trained_on": probe.trained_on.to_dict() if probe.trained_on else None,
        "tool_version": tool_version,
        "vocab_size": probe.vocab_size,
        "d": probe.d,
    }
    probe_meta_path(path).write_text(json.dumps(sidecar, indent=2))


def probe_meta_path(path) -> Path:
    return Path(str(path) + ".meta.json")


def load_probe(path) -> LinearProbe:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _PROBE_HEADER.size:
        raise ValueError("probe file truncated")
    magic, version, vocab_size, d = _PROBE_HEADER.unpack(raw[:_PROBE_HEADER.size])
    if magic != PROBE_MAGIC:
        raise ValueError(f"bad probe magic {magic!r}")
    if version != PROBE_VERSION:
        raise ValueError(f"unsupported probe version {version}")
    expected = _PROBE_HEADER.size + 4 * vocab_size + 4 * vocab_size * d
    if len(raw) != expected:
        raise ValueError(f"probe file has {len(raw)} bytes, expected {expected}")
    off = _PROBE_HEADER.size
    b = np.frombuffer(raw, dtype="<f4", count=vocab_size, offset=off).astype(np.float64)
    off += 4 * vocab_size
    W = np.frombuffer(raw, dtype="<f4", count=vocab_size * d, offset=off)
    W = W.reshape(vocab_size, d).astype(np.float64)
    trained_on = None
    meta = probe_meta_path(path)
    if meta.exists():
        data = json.loads(meta.read_text())
        if data.get("trained_on"):
            trained_on = Manifest.from_dict(data["trained_on"])
    return LinearProbe(W=W, b=b, vocab_size=vocab_size, d=d, trained_on=trained_on)
