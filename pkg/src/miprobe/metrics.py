"""Sequence-reconstruction metrics over token-id sequences.

All metrics work directly on token ids: the probe predicts ids, and scoring
in id space avoids detokenizer ambiguity. Everything here is a pure function
of its inputs.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

BLEU_EPS = 1e-9


def token_f1(pred: Sequence[int], ref: Sequence[int]) -> float:
    """F1 of the multiset token overlap between prediction and reference."""
    if len(ref) == 0:
        raise ValueError("reference sequence must be non-empty")
    if len(pred) == 0:
        return 0.0
    overlap = sum((Counter(pred) & Counter(ref)).values())
    if overlap == 0:
        return 0.0
    precision = overlap / len(pred)
    recall = overlap / len(ref)
    return 2 * precision * recall / (precision + recall)


def _ngram_counts(seq, order):
    return Counter(tuple(seq[i:i + order]) for i in range(len(seq) - order + 1))


def bleu_n(pred: Sequence[int], ref: Sequence[int], n_max: int = 4) -> float:
    """Single-reference BLEU: geometric mean of clipped n-gram precisions
    for orders 1..n_max times the brevity penalty exp(min(0, 1-|ref|/|pred|)).

    Smoothing: an order with zero clipped matches contributes precision
    BLEU_EPS instead of zero, as does an order longer than the prediction,
    so degenerate predictions score near zero rather than undefined.
    """
    if len(ref) == 0:
        raise ValueError("reference sequence must be non-empty")
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    if len(pred) == 0:
        return 0.0
    pred = [int(t) for t in pred]
    ref = [int(t) for t in ref]
    log_precisions = []
    for order in range(1, n_max + 1):
        if len(pred) < order:
            log_precisions.append(math.log(BLEU_EPS))
            continue
        pred_counts = _ngram_counts(pred, order)
        ref_counts = _ngram_counts(ref, order)
        clipped = sum(min(c, ref_counts[g]) for g, c in pred_counts.items())
        total = len(pred) - order + 1
        p = clipped / total if clipped > 0 else BLEU_EPS
        log_precisions.append(math.log(p))
    brevity = math.exp(min(0.0, 1.0 - len(ref) / len(pred)))
    return brevity * math.exp(sum(log_precisions) / n_max)


def rouge_1(pred: Sequence[int], ref: Sequence[int]) -> float:
    """Unigram-overlap F1; identical to token_f1 by construction, reported
    separately for table parity."""
    return token_f1(pred, ref)


def _lcs_length(a, b) -> int:
    # two-row dynamic program
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        curr = [0]
        for j, y in enumerate(b, start=1):
            if x == y:
                curr.append(prev[j - 1] + 1)
            else:
                curr.append(max(prev[j], curr[j - 1]))
        prev = curr
    return prev[-1]


def rouge_l(pred: Sequence[int], ref: Sequence[int]) -> float:
    """F1 from the longest common subsequence length."""
    if len(ref) == 0:
        raise ValueError("reference sequence must be non-empty")
    if len(pred) == 0:
        return 0.0
    lcs = _lcs_length(list(pred), list(ref))
    if lcs == 0:
        return 0.0
    precision = lcs / len(pred)
    recall = lcs / len(ref)
    return 2 * precision * recall / (precision + recall)


def cosine(u, v) -> float:
    """Cosine similarity of two equal-length non-zero vectors."""
    u = np.asarray(u, dtype=np.float64).ravel()
    v = np.asarray(v, dtype=np.float64).ravel()
    if u.shape != v.shape:
        raise ValueError(f"dimension mismatch: {u.shape} vs {v.shape}")
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise ValueError("cosine undefined for zero vectors")
    return float(np.dot(u, v) / (nu * nv))


_SEQUENCE_COLUMNS = ("token_f1", "bleu_1", "bleu_2", "bleu_4", "rouge_1", "rouge_l")


@dataclass
class MetricReport:
    """Macro-averaged corpus metrics plus the per-sentence breakdown."""

    token_f1: float
    bleu_1: float
    bleu_2: float
    bleu_4: float
    rouge_1: float
    rouge_l: float
    cosine: float | None = None
    n_sentences: int = 0
    aggregation: str = "macro"
    per_sentence: list = field(default_factory=list)

    def metric_values(self) -> dict:
        vals = {name: getattr(self, name) for name in _SEQUENCE_COLUMNS}
        if self.cosine is not None:
            vals["cosine"] = self.cosine
        return vals

    def to_dict(self, include_per_sentence: bool = True) -> dict:
        out = {
            "aggregation": self.aggregation,
            "n_sentences": self.n_sentences,
            "cosine": self.cosine,
        }
        out.update({name: getattr(self, name) for name in _SEQUENCE_COLUMNS})
        if include_per_sentence:
            out["per_sentence"] = self.per_sentence
        return out

    def csv_rows(self) -> tuple[list[str], list[list]]:
        """(header, rows): one row per sentence plus an `aggregate` row."""
        cols = ["sentence", *_SEQUENCE_COLUMNS]
        if self.cosine is not None:
            cols.append("cosine")
        rows = []
        for entry in self.per_sentence:
            row = [entry["sentence"]] + [entry[c] for c in _SEQUENCE_COLUMNS]
            if self.cosine is not None:
                row.append(entry.get("cosine"))
            rows.append(row)
        agg = ["aggregate"] + [getattr(self, c) for c in _SEQUENCE_COLUMNS]
        if self.cosine is not None:
            agg.append(self.cosine)
        rows.append(agg)
        return cols, rows


def score_corpus(pairs, embedding_pairs=None) -> MetricReport:
    """Score (pred, ref) sequence pairs; macro-average of per-sentence scores.

    `embedding_pairs`, when given, must align with `pairs` and supplies
    (pred_vector, ref_vector) for the cosine column; re-embedding recovered
    text is the extractor's job, not this module's.
    """
    pairs = list(pairs)
    if not pairs:
        raise ValueError("no (pred, ref) pairs to score")
    if embedding_pairs is not None:
        embedding_pairs = list(embedding_pairs)
        if len(embedding_pairs) != len(pairs):
            raise ValueError(
                f"{len(pairs)} sequence pairs but {len(embedding_pairs)} embedding pairs"
            )
    per_sentence = []
    for idx, (pred, ref) in enumerate(pairs):
        entry = {
            "sentence": idx,
            "token_f1": token_f1(pred, ref),
            "bleu_1": bleu_n(pred, ref, 1),
            "bleu_2": bleu_n(pred, ref, 2),
            "bleu_4": bleu_n(pred, ref, 4),
            "rouge_1": rouge_1(pred, ref),
            "rouge_l": rouge_l(pred, ref),
        }
        if embedding_pairs is not None:
            entry["cosine"] = cosine(*embedding_pairs[idx])
        per_sentence.append(entry)

    def macro(name):
        return float(np.mean([e[name] for e in per_sentence]))

    return MetricReport(
        token_f1=macro("token_f1"),
        bleu_1=macro("bleu_1"),
        bleu_2=macro("bleu_2"),
        bleu_4=macro("bleu_4"),
        rouge_1=macro("rouge_1"),
        rouge_l=macro("rouge_l"),
        cosine=macro("cosine") if embedding_pairs is not None else None,
        n_sentences=len(pairs),
        per_sentence=per_sentence,
    )
