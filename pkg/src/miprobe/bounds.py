"""Mutual-information lower bounds from token recoverability.

Two bounds are produced:

* token level: average token MI >= p_rec * log(|V|-1) - H_b(p_rec), the
  Fano conversion of a decoder's accuracy. The quoted form assumes a
  uniform token prior and drops the log|V| - log(|V|-1) remainder; both
  the remainder and an empirical-entropy variant are available.
* sentence level: I(sentence; embedding) >= sum of token MIs + delta,
  where delta = H(joint tokens) - sum H(token) <= 0. delta is not
  identifiable from embeddings, so pipelines either omit the sentence
  bound or plug in a Markov estimate, always with a caveat attached.

Negative bounds are reported, never clamped: a vacuous bound is
information. Everything here is a pure function of its inputs.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

NAT = "nat"
BIT = "bit"
UNIFORM_PRIOR = "uniform_prior"
EMPIRICAL_ENTROPY = "empirical_entropy"

CAVEAT_UNIFORM_PRIOR = (
    "uniform-prior assumption: token marginals treated as uniform over the vocabulary"
)
CAVEAT_EMPIRICAL_ENTROPY = (
    "empirical-entropy variant: corpus plug-in estimate replaces the uniform token prior"
)
CAVEAT_DECODER_PROXY = (
    "p_rec comes from a trained linear decoder; the optimal-decoder value can only be higher"
)
CAVEAT_DELTA_MISSING = "delta not estimated: sentence-level bound omitted"
CAVEAT_DELTA_ESTIMATED = "delta estimated, not exact"
CAVEAT_NEGATIVE_BOUND = "bound is negative (vacuous at this recoverability/vocabulary)"


@dataclass(frozen=True)
class BoundConfig:
    log_base: str = NAT
    variant: str = UNIFORM_PRIOR
    include_vocab_gap_term: bool = False

    def __post_init__(self):
        if self.log_base not in (NAT, BIT):
            raise ValueError(f"unknown log_base {self.log_base!r}")
        if self.variant not in (UNIFORM_PRIOR, EMPIRICAL_ENTROPY):
            raise ValueError(f"unknown variant {self.variant!r}")


def _from_nats(value: float, base: str) -> float:
    return value / math.log(2.0) if base == BIT else value


def _to_nats(value: float, base: str) -> float:
    return value * math.log(2.0) if base == BIT else value


def binary_entropy(p: float, base: str = NAT) -> float:
    """-p log p - (1-p) log(1-p) with the 0 log 0 = 0 convention."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p must be in [0, 1], got {p}")
    nats = 0.0
    if 0.0 < p < 1.0:
        nats = -p * math.log(p) - (1.0 - p) * math.log(1.0 - p)
    return _from_nats(nats, base)


def fano_token_bound(p_rec: float, vocab_size: int,
                     config: BoundConfig = BoundConfig(),
                     empirical_entropy: float | None = None) -> float:
    """Lower bound on the average per-token MI implied by accuracy p_rec.

    uniform_prior: p_rec*log(|V|-1) - H_b(p_rec), optionally plus the exact
    log|V| - log(|V|-1) remainder that the large-vocabulary form drops.

    empirical_entropy: H_emp - H_b(p_rec) - (1-p_rec)*log(|V|-1), with
    H_emp the caller-supplied corpus token entropy in `config.log_base`
    units (see `empirical_token_entropy`). The remainder flag does not
    apply: this form is already exact Fano with the plug-in prior.
    """
    if vocab_size < 2:
        raise ValueError(f"vocab_size must be >= 2, got {vocab_size}")
    if not 0.0 <= p_rec <= 1.0:
        raise ValueError(f"p_rec must be in [0, 1], got {p_rec}")
    log_vm1 = math.log(vocab_size - 1)
    hb = binary_entropy(p_rec, NAT)
    if config.variant == UNIFORM_PRIOR:
        nats = p_rec * log_vm1 - hb
        if config.include_vocab_gap_term:
            nats += math.log(vocab_size) - log_vm1
    else:
        if empirical_entropy is None:
            raise ValueError("empirical_entropy variant needs the corpus token entropy")
        h_emp = _to_nats(empirical_entropy, config.log_base)
        nats = h_emp - hb - (1.0 - p_rec) * log_vm1
    return _from_nats(nats, config.log_base)


def sentence_bound(token_mi_values: Sequence[float], delta: float) -> float:
    """Sum of per-token MI values plus delta (which must be <= 0)."""
    if delta > 0:
        raise ValueError(f"delta must be <= 0 (joint entropy is subadditive), got {delta}")
    return math.fsum(token_mi_values) + delta


def empirical_token_entropy(records: Iterable, base: str = NAT) -> float:
    """Pooled unigram entropy of all token positions in a corpus."""
    counts = Counter()
    for rec in records:
        counts.update(int(t) for t in rec.tokens)
    if not counts:
        raise ValueError("empty corpus")
    total = sum(counts.values())
    nats = -math.fsum(c / total * math.log(c / total) for c in counts.values())
    return _from_nats(nats, base)


def _entropy_of_counts(counts: Counter) -> float:
    total = sum(counts.values())
    if total == 0:
        return 0.0
    return -math.fsum(c / total * math.log(c / total) for c in counts.values() if c)


def estimate_delta(records, order: str = "bigram_markov",
                   base: str = NAT) -> tuple[float, str]:
    """Plug-in estimate of delta = H(joint tokens) - sum H(token), clamped <= 0.

    The joint entropy is approximated by a stationary model of the given
    order (unigram: i.i.d. draws from the pooled token distribution;
    bigram_markov: first-token entropy plus per-step transition entropy),
    while the marginal side uses per-position corpus frequencies. The true
    delta is not identifiable from a corpus, hence the returned caveat,
    which downstream reports must carry.
    """
    records = list(records)
    if not records:
        raise ValueError("empty corpus")
    if order not in ("unigram", "bigram_markov"):
        raise ValueError(f"unknown order {order!r}")

    pooled = Counter()
    first = Counter()
    transitions: dict[int, Counter] = {}
    position_counts: list[Counter] = []
    lengths = []
    for rec in records:
        toks = [int(t) for t in rec.tokens]
        lengths.append(len(toks))
        pooled.update(toks)
        first[toks[0]] += 1
        for i, t in enumerate(toks):
            if i >= len(position_counts):
                position_counts.append(Counter())
            position_counts[i][t] += 1
        for a, b in zip(toks, toks[1:]):
            transitions.setdefault(a, Counter())[b] += 1

    h_pooled = _entropy_of_counts(pooled)
    h_first = _entropy_of_counts(first)
    h_positions = [_entropy_of_counts(c) for c in position_counts]
    total_transitions = sum(sum(c.values()) for c in transitions.values())
    if total_transitions:
        h_step = math.fsum(
            sum(c.values()) / total_transitions * _entropy_of_counts(c)
            for c in transitions.values()
        )
    else:
        h_step = 0.0

    # mean over sentences of (model joint entropy - sum of positional entropies)
    n_sent = len(records)
    joint_total = 0.0
    marginal_total = 0.0
    for n in lengths:
        if order == "unigram":
            joint_total += n * h_pooled
        else:
            joint_total += h_first + (n - 1) * h_step
        marginal_total += math.fsum(h_positions[:n])
    delta = (joint_total - marginal_total) / n_sent
    delta = min(0.0, delta)
    caveat = (
        f"{CAVEAT_DELTA_ESTIMATED} ({order} stationary approximation over "
        f"{n_sent} sentences)"
    )
    return _from_nats(delta, base), caveat


@dataclass
class MIBoundReport:
    """Recoverability converted to MI lower bounds, with every assumption
    surfaced in `caveats`."""

    p_rec: float
    vocab_size: int
    token_bound: float
    log_base: str
    variant: str
    include_vocab_gap_term: bool
    mean_sentence_length: float
    sentence_bound: float | None = None
    delta: float | None = None
    caveats: list = field(default_factory=list)

    def __post_init__(self):
        if not math.isfinite(self.token_bound):
            raise ValueError("token_bound must be finite")

    def to_dict(self) -> dict:
        return {
            "p_rec": self.p_rec,
            "vocab_size": self.vocab_size,
            "token_bound": self.token_bound,
            "sentence_bound": self.sentence_bound,
            "delta": self.delta,
            "mean_sentence_length": self.mean_sentence_length,
            "log_base": self.log_base,
            "variant": self.variant,
            "include_vocab_gap_term": self.include_vocab_gap_term,
            "caveats": list(self.caveats),
        }


def bound_report(recoverability_result, vocab_size: int,
                 config: BoundConfig = BoundConfig(),
                 delta: float | None = None,
                 empirical_entropy: float | None = None,
                 extra_caveats: Sequence[str] = ()) -> MIBoundReport:
    """Assemble the MI bound report for one recoverability evaluation.

    The sentence-level bound (mean sentence length times the token bound,
    plus delta) appears only when a delta is supplied; its absence is
    flagged rather than silently skipped.
    """
    p_rec = recoverability_result.p_rec
    mean_len = (recoverability_result.total_positions
                / recoverability_result.n_sentences)
    token_bound = fano_token_bound(p_rec, vocab_size, config, empirical_entropy)
    caveats = [CAVEAT_DECODER_PROXY]
    if config.variant == UNIFORM_PRIOR:
        caveats.append(CAVEAT_UNIFORM_PRIOR)
    else:
        caveats.append(CAVEAT_EMPIRICAL_ENTROPY)
    sent_bound = None
    if delta is not None:
        if delta > 0:
            raise ValueError(f"delta must be <= 0, got {delta}")
        sent_bound = mean_len * token_bound + delta
    else:
        caveats.append(CAVEAT_DELTA_MISSING)
    if token_bound < 0:
        caveats.append(CAVEAT_NEGATIVE_BOUND)
    caveats.extend(extra_caveats)
    return MIBoundReport(
        p_rec=p_rec,
        vocab_size=vocab_size,
        token_bound=token_bound,
        sentence_bound=sent_bound,
        delta=delta,
        mean_sentence_length=mean_len,
        log_base=config.log_base,
        variant=config.variant,
        include_vocab_gap_term=config.include_vocab_gap_term,
        caveats=caveats,
    )
