"""Exact information theory on small finite joints.

Ground truth for the bound machinery: entropies and mutual information are
computed by exhaustive summation (64-bit, compensated via math.fsum) on
explicit probability tables, and the optimal decoder is realized exactly as
the per-observation MAP rule. Alphabets are deliberately capped — this
module validates formulas, it does not scale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .bounds import BoundConfig, binary_entropy, fano_token_bound

MAX_ALPHABET = 16
MAX_TOKENS = 4
SLACK_TOL = 1e-9
JENSEN_TOL = 1e-12

PROB_SUM_TOL = 1e-12


def _check_table(prob: np.ndarray) -> np.ndarray:
    prob = np.asarray(prob, dtype=np.float64)
    if prob.size == 0:
        raise ValueError("empty probability table")
    if (prob < 0).any():
        raise ValueError("negative probability entries")
    total = math.fsum(prob.ravel().tolist())
    if abs(total - 1.0) > PROB_SUM_TOL:
        raise ValueError(f"probabilities sum to {total!r}, not 1")
    return prob


def _entropy(values) -> float:
    """Shannon entropy in nats of a probability vector (any shape)."""
    flat = np.asarray(values, dtype=np.float64).ravel()
    return -math.fsum(p * math.log(p) for p in flat.tolist() if p > 0.0)


@dataclass(frozen=True)
class DiscreteJoint:
    """Joint distribution over (token, embedding symbol): a |V| x |Omega| table."""

    prob: np.ndarray

    def __post_init__(self):
        prob = _check_table(self.prob)
        if prob.ndim != 2:
            raise ValueError("DiscreteJoint table must be 2-d (tokens x symbols)")
        object.__setattr__(self, "prob", prob)

    @property
    def vocab_size(self) -> int:
        return self.prob.shape[0]

    @property
    def emb_size(self) -> int:
        return self.prob.shape[1]

    def token_marginal(self) -> np.ndarray:
        return np.array([math.fsum(row.tolist()) for row in self.prob])

    def emb_marginal(self) -> np.ndarray:
        return np.array([math.fsum(col.tolist()) for col in self.prob.T])

    def to_jsonable(self) -> list:
        return self.prob.tolist()

    @classmethod
    def from_jsonable(cls, data) -> "DiscreteJoint":
        return cls(prob=np.asarray(data, dtype=np.float64))


def exact_mi(joint: DiscreteJoint) -> float:
    """I(t; E) in nats by direct summation; zero-probability cells contribute 0."""
    pt = joint.token_marginal()
    pe = joint.emb_marginal()
    terms = []
    for t in range(joint.vocab_size):
        for e in range(joint.emb_size):
            p = joint.prob[t, e]
            if p > 0.0:
                terms.append(p * math.log(p / (pt[t] * pe[e])))
    return math.fsum(terms)


def exact_conditional_entropy(joint: DiscreteJoint) -> float:
    """H(t | E) in nats by direct summation over the table."""
    pe = joint.emb_marginal()
    terms = []
    for t in range(joint.vocab_size):
        for e in range(joint.emb_size):
            p = joint.prob[t, e]
            if p > 0.0:
                terms.append(-p * math.log(p / pe[e]))
    return math.fsum(terms)


def map_decoder_accuracy(joint: DiscreteJoint) -> tuple[float, np.ndarray]:
    """The optimal decoder on a finite joint: map each symbol to its argmax
    token (ties to the smallest token id). Returns (accuracy, decoder table)."""
    decoder = np.argmax(joint.prob, axis=0)
    accuracy = math.fsum(joint.prob[decoder[e], e] for e in range(joint.emb_size))
    return accuracy, decoder


def decoder_accuracy(joint: DiscreteJoint, decoder) -> float:
    """Accuracy of an arbitrary decoder table (symbol index -> token id)."""
    decoder = np.asarray(decoder, dtype=np.int64)
    if decoder.shape != (joint.emb_size,):
        raise ValueError("decoder must map every embedding symbol")
    return math.fsum(joint.prob[decoder[e], e] for e in range(joint.emb_size))


def symmetrize_to_uniform(joint: DiscreteJoint) -> DiscreteJoint:
    """Mix over cyclic token relabelings to force an exactly uniform token
    marginal, keeping the relabeling index observable (each shift writes to
    its own copy of the embedding alphabet) so the MI stays nontrivial.
    Collapsing the shifts instead would average every joint to independence.
    """
    v, omega = joint.prob.shape
    out = np.zeros((v, omega * v), dtype=np.float64)
    for k in range(v):
        shifted = np.roll(joint.prob, shift=k, axis=0)
        out[:, k * omega:(k + 1) * omega] = shifted / v
    return DiscreteJoint(prob=out)


@dataclass(frozen=True)
class SentenceJoint:
    """Joint over (t_1..t_n, e), stored as an (V,)*n + (Omega,) array.

    Sizes are guarded: exhaustive enumeration is exponential in n.
    """

    prob: np.ndarray

    def __post_init__(self):
        prob = _check_table(self.prob)
        if prob.ndim < 2:
            raise ValueError("SentenceJoint needs at least one token axis plus the symbol axis")
        n = prob.ndim - 1
        vocab_sizes = set(prob.shape[:-1])
        if len(vocab_sizes) != 1:
            raise ValueError("all token axes must share one vocabulary size")
        v = vocab_sizes.pop()
        if n > MAX_TOKENS or v > MAX_ALPHABET or prob.shape[-1] > MAX_ALPHABET:
            raise ValueError(
                f"table too large to enumerate: n={n}, |V|={v}, |Omega|={prob.shape[-1]}"
            )
        object.__setattr__(self, "prob", prob)

    @property
    def n(self) -> int:
        return self.prob.ndim - 1

    @property
    def vocab_size(self) -> int:
        return self.prob.shape[0]

    @property
    def emb_size(self) -> int:
        return self.prob.shape[-1]

    def token_joint(self) -> np.ndarray:
        """p(t_1..t_n), the embedding axis summed out."""
        return self.prob.sum(axis=-1)

    def marginal_with_emb(self, token_axes: tuple) -> np.ndarray:
        """p(t_i for i in token_axes, e) with other token axes summed out."""
        drop = tuple(i for i in range(self.n) if i not in token_axes)
        return self.prob.sum(axis=drop) if drop else self.prob

    def to_jsonable(self) -> dict:
        return {"shape": list(self.prob.shape), "prob": self.prob.ravel().tolist()}

    @classmethod
    def from_jsonable(cls, data) -> "SentenceJoint":
        arr = np.asarray(data["prob"], dtype=np.float64).reshape(data["shape"])
        return cls(prob=arr)


@dataclass
class SentenceQuantities:
    i_sentence: float
    per_token_mi: list
    delta: float


def exact_sentence_quantities(sj: SentenceJoint) -> SentenceQuantities:
    """I(S;E), each I(t_i;E), and delta = H(t_1..t_n) - sum H(t_i), all exact."""
    flat = sj.prob.reshape(-1, sj.emb_size)
    i_sentence = exact_mi(DiscreteJoint(prob=flat))
    per_token = []
    for i in range(sj.n):
        table = sj.marginal_with_emb((i,))
        per_token.append(exact_mi(DiscreteJoint(prob=table)))
    token_joint = sj.token_joint()
    h_joint = _entropy(token_joint)
    h_marginals = [
        _entropy(token_joint.sum(axis=tuple(j for j in range(sj.n) if j != i)))
        for i in range(sj.n)
    ]
    delta = h_joint - math.fsum(h_marginals)
    return SentenceQuantities(i_sentence=i_sentence, per_token_mi=per_token, delta=delta)


def _conditional_entropy_chain(sj: SentenceJoint) -> tuple[float, list, list]:
    """(H(S|E), [H(t_i|E)], [H(t_i|E, t_1..t_{i-1})]), each term computed
    independently from its own marginal table."""
    h_e = _entropy(sj.prob.sum(axis=tuple(range(sj.n))))
    h_se = _entropy(sj.prob)
    h_sentence_given_e = h_se - h_e
    h_token_given_e = []
    h_token_given_e_prefix = []
    for i in range(sj.n):
        h_token_given_e.append(
            _entropy(sj.marginal_with_emb((i,))) - h_e
        )
        prefix = tuple(range(i))
        h_prefix_e = _entropy(sj.marginal_with_emb(prefix)) if prefix else h_e
        h_prefix_i_e = _entropy(sj.marginal_with_emb(prefix + (i,)))
        h_token_given_e_prefix.append(h_prefix_i_e - h_prefix_e)
    return h_sentence_given_e, h_token_given_e, h_token_given_e_prefix


@dataclass
class VerificationReport:
    seed: int
    trials: int
    checks_run: dict = field(default_factory=dict)
    failures: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "trials": self.trials,
            "passed": self.passed,
            "checks_run": dict(self.checks_run),
            "failures": list(self.failures),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "VerificationReport":
        return cls(seed=data["seed"], trials=data["trials"],
                   checks_run=dict(data["checks_run"]),
                   failures=list(data["failures"]))


def _flat_random_table(rng, shape) -> np.ndarray:
    """Flat-Dirichlet sample over a table of the given shape."""
    raw = rng.exponential(1.0, size=shape)
    return raw / raw.sum()


def verify_bounds(seed: int, trials: int) -> VerificationReport:
    """Randomized executable check of every inequality this package relies on.

    Per trial (RNG stream derived from (seed, trial), so trials are
    order-independent):

    * sentence decomposition: I(S;E) >= sum_i I(t_i;E) + delta, delta <= 0,
      the entropy chain rule, and conditioning-reduces-entropy, on a random
      sentence joint;
    * accuracy-to-MI conversion, exact form: I >= acc*log(|V|-1) - H_b(acc)
      + log|V| - log(|V|-1) on a uniform-token-marginal joint, for the MAP
      decoder and 5 random suboptimal decoders;
    * concavity step: mean of H_b over accuracies <= H_b of the mean.

    Failures are data, not errors: each carries the offending table in
    JSON-ready form for reproduction.
    """
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    report = VerificationReport(seed=seed, trials=trials)
    counts = report.checks_run
    exact_cfg = BoundConfig(include_vocab_gap_term=True)

    def fail(trial, check, detail):
        report.failures.append({"trial": trial, "check": check, **detail})

    for trial in range(trials):
        rng = np.random.default_rng([seed, trial])

        # --- sentence-level checks on a random joint ---
        n = int(rng.integers(2, MAX_TOKENS + 1))
        v = int(rng.integers(2, 5))
        omega = int(rng.integers(2, 5))
        sj = SentenceJoint(prob=_flat_random_table(rng, (v,) * n + (omega,)))
        q = exact_sentence_quantities(sj)
        counts["sentence_decomposition"] = counts.get("sentence_decomposition", 0) + 1
        slack = q.i_sentence - (math.fsum(q.per_token_mi) + q.delta)
        if slack < -SLACK_TOL:
            fail(trial, "sentence_decomposition",
                 {"slack": slack, "table": sj.to_jsonable()})
        if q.delta > SLACK_TOL:
            fail(trial, "delta_nonpositive",
                 {"delta": q.delta, "table": sj.to_jsonable()})

        h_s_given_e, h_t_given_e, h_t_given_e_prefix = _conditional_entropy_chain(sj)
        counts["chain_rule"] = counts.get("chain_rule", 0) + 1
        gap = abs(h_s_given_e - math.fsum(h_t_given_e_prefix))
        if gap > SLACK_TOL:
            fail(trial, "chain_rule", {"gap": gap, "table": sj.to_jsonable()})
        counts["conditioning_reduces_entropy"] = (
            counts.get("conditioning_reduces_entropy", 0) + 1
        )
        for i, (a, b) in enumerate(zip(h_t_given_e, h_t_given_e_prefix)):
            if a - b < -SLACK_TOL:
                fail(trial, "conditioning_reduces_entropy",
                     {"token": i, "slack": a - b, "table": sj.to_jsonable()})

        # --- accuracy-to-MI conversion on a uniform-marginal joint ---
        v2 = int(rng.integers(2, 7))
        omega2 = int(rng.integers(2, 7))
        base = DiscreteJoint(prob=_flat_random_table(rng, (v2, omega2)))
        uj = symmetrize_to_uniform(base)
        mi = exact_mi(uj)
        acc_map, _ = map_decoder_accuracy(uj)
        counts["fano_map_decoder"] = counts.get("fano_map_decoder", 0) + 1
        bound = fano_token_bound(min(acc_map, 1.0), uj.vocab_size, exact_cfg)
        if mi - bound < -SLACK_TOL:
            fail(trial, "fano_map_decoder",
                 {"mi": mi, "bound": bound, "accuracy": acc_map,
                  "table": uj.to_jsonable()})
        counts["fano_random_decoders"] = counts.get("fano_random_decoders", 0) + 1
        for _ in range(5):
            g = rng.integers(0, uj.vocab_size, size=uj.emb_size)
            acc = decoder_accuracy(uj, g)
            bound = fano_token_bound(min(acc, 1.0), uj.vocab_size, exact_cfg)
            if mi - bound < -SLACK_TOL:
                fail(trial, "fano_random_decoders",
                     {"mi": mi, "bound": bound, "accuracy": acc,
                      "decoder": g.tolist(), "table": uj.to_jsonable()})

        # --- concavity of the binary entropy (the averaging step) ---
        counts["binary_entropy_concavity"] = (
            counts.get("binary_entropy_concavity", 0) + 1
        )
        accs = rng.uniform(0.0, 1.0, size=int(rng.integers(2, 9)))
        mean_hb = math.fsum(binary_entropy(a) for a in accs) / accs.size
        hb_mean = binary_entropy(float(accs.mean()))
        if hb_mean - mean_hb < -JENSEN_TOL:
            fail(trial, "binary_entropy_concavity",
                 {"gap": hb_mean - mean_hb, "accuracies": accs.tolist()})

    return report
