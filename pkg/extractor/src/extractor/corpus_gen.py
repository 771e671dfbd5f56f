"""Synthetic multi-domain text for toy-scale experiments.

One shared vocabulary of pseudo-words is partitioned into classes; every
domain draws the same words but with its own class-transition matrix, so
domains differ in sequential structure (style) while sharing the lexicon,
the way real text domains do. Class-level transitions make the next word
predictable only up to its class: a causal LM can learn the structure
without needing to keep exact token identity in its topmost states, while
a masked LM is pushed to keep every visible token recoverable.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

_ONSETS = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z",
           "br", "dr", "gl", "kr", "pl", "st", "tr"]
_VOWELS = ["a", "e", "i", "o", "u", "ai", "ou"]
_CODAS = ["", "n", "r", "s", "t", "l", "m", "nd", "rk", "st"]


def _pseudo_word(rng) -> str:
    syllables = rng.integers(2, 4)
    parts = []
    for _ in range(syllables):
        parts.append(_ONSETS[rng.integers(len(_ONSETS))]
                     + _VOWELS[rng.integers(len(_VOWELS))]
                     + (_CODAS[rng.integers(len(_CODAS))] if rng.random() < 0.4 else ""))
    return "".join(parts)


def shared_lexicon(n_classes: int = 6, words_per_class: int = 60,
                   seed: int = 0) -> list[list[str]]:
    """Class-partitioned word lists, identical for every domain."""
    rng = np.random.default_rng(seed)
    seen = set()
    classes = []
    for _ in range(n_classes):
        words = []
        while len(words) < words_per_class:
            w = _pseudo_word(rng)
            if w not in seen:
                seen.add(w)
                words.append(w)
        classes.append(words)
    return classes


def _domain_transition(n_classes: int, rng) -> np.ndarray:
    """Sparse-ish row-stochastic class transitions, distinct per domain."""
    T = rng.dirichlet(np.full(n_classes, 0.3), size=n_classes)
    return T / T.sum(axis=1, keepdims=True)


def generate_domain(lexicon, seed: int, n_sentences: int,
                    length_range=(10, 28)) -> list[str]:
    rng = np.random.default_rng(seed)
    n_classes = len(lexicon)
    T = _domain_transition(n_classes, rng)
    start = rng.dirichlet(np.ones(n_classes))
    sentences = []
    for _ in range(n_sentences):
        length = int(rng.integers(length_range[0], length_range[1] + 1))
        cls = int(rng.choice(n_classes, p=start))
        words = []
        for _ in range(length):
            words.append(lexicon[cls][int(rng.integers(len(lexicon[cls])))])
            cls = int(rng.choice(n_classes, p=T[cls]))
        sentences.append(" ".join(words))
    return sentences


def copy_sentences(lexicon, n_sentences: int, seed: int, half: int = 12) -> list[str]:
    """Sentences whose second half repeats the first verbatim. Next-token
    prediction on the repeated half is solvable only by carrying exact
    token identities forward, which keeps mid-layer states token-rich in a
    causal LM the way long-range structure does in real text."""
    rng = np.random.default_rng(seed)
    words = [w for cls in lexicon for w in cls]
    out = []
    for _ in range(n_sentences):
        first = [words[int(rng.integers(len(words)))] for _ in range(half)]
        out.append(" ".join(first + first))
    return out


def write_domain_files(out_dir, domains: dict[str, int], n_sentences: int = 1500,
                       lexicon_seed: int = 0, copy_pretrain: int = 0) -> dict:
    """Write one text file per domain (one sentence per line) plus a
    pretrain.txt mixing all domains (optionally with `copy_pretrain`
    repeat-structured sentences); returns {name: path}."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    lexicon = shared_lexicon(seed=lexicon_seed)
    paths = {}
    pretrain_lines = []
    for name, seed in domains.items():
        lines = generate_domain(lexicon, seed=seed, n_sentences=n_sentences)
        path = out_dir / f"{name}.txt"
        path.write_text("\n".join(lines) + "\n")
        paths[name] = path
        pretrain_lines.extend(lines)
    if copy_pretrain:
        pretrain_lines.extend(copy_sentences(lexicon, copy_pretrain,
                                             seed=lexicon_seed + 99))
    rng = np.random.default_rng(lexicon_seed)
    order = rng.permutation(len(pretrain_lines))
    pretrain = out_dir / "pretrain.txt"
    pretrain.write_text("\n".join(pretrain_lines[i] for i in order) + "\n")
    paths["pretrain"] = pretrain
    return paths


def read_sentences(path, max_sentences: int | None = None) -> list[str]:
    lines = [ln.strip() for ln in Path(path).read_text().splitlines() if ln.strip()]
    if max_sentences is not None:
        lines = lines[:max_sentences]
    return lines
