"""Synthetic corpora with controllable recoverability.

Used by the test suite and the experiment drivers to exercise the pipeline
without any real model: token embeddings are one-hot vectors plus Gaussian
noise, so the noise amplitude dials the achievable recoverability, and a
per-layer noise schedule emulates information flow across model depth.
"""

from __future__ import annotations

import numpy as np

from .corpus import Dump, DumpHeader, Manifest, SentenceRecord


def _lengths(rng, n_sentences, length_range):
    lo, hi = length_range
    if lo < 1 or hi < lo:
        raise ValueError(f"bad length range {length_range}")
    return rng.integers(lo, hi + 1, size=n_sentences)


def _records(rng, tokens_per_sentence, noise, d, vocab_size, layer, domain_tag,
             token_to_row=None):
    records = []
    for sid, toks in enumerate(tokens_per_sentence):
        rows = toks if token_to_row is None else token_to_row[toks]
        emb = np.zeros((len(toks), d), dtype=np.float64)
        emb[np.arange(len(toks)), rows] = 1.0
        emb += noise * rng.standard_normal((len(toks), d))
        records.append(SentenceRecord(
            tokens=toks.astype(np.uint32),
            embeddings=emb.astype(np.float32),
            layer=layer,
            domain_tag=domain_tag,
            sentence_id=sid,
        ))
    return records


def separable_dump(vocab_size: int = 64, n_sentences: int = 2000,
                   noise: float = 0.01, seed: int = 0,
                   length_range=(5, 15), d: int | None = None,
                   layer: int = 0, domain_tag: str = "synthetic",
                   model_name: str = "synthetic-onehot") -> Dump:
    """Corpus where token t's embedding is one-hot(t) + noise * N(0, I).

    With small noise a linear probe recovers essentially every token, which
    makes this the convergence fixture: d defaults to vocab_size.
    """
    if d is None:
        d = vocab_size
    if d < vocab_size:
        raise ValueError("one-hot construction needs d >= vocab_size")
    rng = np.random.default_rng(seed)
    toks = [rng.integers(0, vocab_size, size=n) for n in _lengths(rng, n_sentences, length_range)]
    records = _records(rng, toks, noise, d, vocab_size, layer, domain_tag)
    header = DumpHeader(vocab_size=vocab_size, embedding_dim=d, layer=layer,
                        record_count=len(records))
    manifest = Manifest(model_name=model_name, tokenizer_id="synthetic",
                        layer=layer, domain_tag=domain_tag)
    return Dump(header=header, records=records, manifest=manifest)


def layer_family(noise_schedule, vocab_size: int = 32, n_sentences: int = 300,
                 seed: int = 0, length_range=(5, 15), d: int | None = None,
                 domain_tag: str = "synthetic",
                 model_name: str = "synthetic-layered") -> list[Dump]:
    """One dump per layer over the SAME token corpus, with layer k's
    embeddings corrupted by noise_schedule[k]. A rising schedule emulates an
    encoder that gradually abstracts away tokens; a high-low-high schedule
    emulates a mid-depth recoverability peak.
    """
    if d is None:
        d = vocab_size
    rng = np.random.default_rng(seed)
    toks = [rng.integers(0, vocab_size, size=n) for n in _lengths(rng, n_sentences, length_range)]
    dumps = []
    for layer, noise in enumerate(noise_schedule):
        layer_rng = np.random.default_rng([seed, layer])
        records = _records(layer_rng, toks, noise, d, vocab_size, layer, domain_tag)
        header = DumpHeader(vocab_size=vocab_size, embedding_dim=d, layer=layer,
                            record_count=len(records))
        manifest = Manifest(model_name=model_name, tokenizer_id="synthetic",
                            layer=layer, domain_tag=domain_tag)
        dumps.append(Dump(header=header, records=records, manifest=manifest))
    return dumps


def permuted_vocab_dump(vocab_size: int = 64, n_sentences: int = 300,
                        noise: float = 0.01, seed: int = 0,
                        length_range=(5, 15), layer: int = 0,
                        domain_tag: str = "synthetic-permuted") -> Dump:
    """Like separable_dump but token t is embedded at a permuted one-hot row,
    so a probe trained on the unpermuted domain degrades here."""
    rng = np.random.default_rng(seed)
    perm = np.random.default_rng(seed + 1).permutation(vocab_size)
    while np.all(perm == np.arange(vocab_size)):  # vanishing chance, but be safe
        perm = np.random.default_rng(seed + 2).permutation(vocab_size)
    toks = [rng.integers(0, vocab_size, size=n) for n in _lengths(rng, n_sentences, length_range)]
    records = _records(rng, toks, noise, vocab_size, vocab_size, layer,
                       domain_tag, token_to_row=perm)
    header = DumpHeader(vocab_size=vocab_size, embedding_dim=vocab_size,
                        layer=layer, record_count=len(records))
    manifest = Manifest(model_name="synthetic-onehot", tokenizer_id="synthetic",
                        layer=layer, domain_tag=domain_tag)
    return Dump(header=header, records=records, manifest=manifest)


def length_graded_dump(vocab_size: int = 32, sentences_per_band: int = 60,
                       bands=((5, 9), (10, 19), (20, 29)),
                       noise_per_band=(0.05, 0.6, 1.2), seed: int = 0,
                       layer: int = 0, domain_tag: str = "synthetic-lengths") -> Dump:
    """Noise grows with sentence length, so per-bucket metrics degrade with
    length (the qualitative long-text effect)."""
    if len(bands) != len(noise_per_band):
        raise ValueError("one noise level per length band")
    rng = np.random.default_rng(seed)
    records = []
    sid = 0
    for (lo, hi), noise in zip(bands, noise_per_band):
        lengths = rng.integers(lo, hi + 1, size=sentences_per_band)
        toks = [rng.integers(0, vocab_size, size=n) for n in lengths]
        for rec in _records(rng, toks, noise, vocab_size, vocab_size, layer, domain_tag):
            rec.sentence_id = sid
            sid += 1
            records.append(rec)
    header = DumpHeader(vocab_size=vocab_size, embedding_dim=vocab_size,
                        layer=layer, record_count=len(records))
    manifest = Manifest(model_name="synthetic-onehot", tokenizer_id="synthetic",
                        layer=layer, domain_tag=domain_tag)
    return Dump(header=header, records=records, manifest=manifest)


def markov_records(transition, initial, n_sentences: int, length: int,
                   seed: int = 0, layer: int = 0,
                   domain_tag: str = "synthetic-markov") -> list[SentenceRecord]:
    """Token sequences from a first-order Markov chain (embeddings are a
    single zero column; these records exist for token-statistics tests)."""
    transition = np.asarray(transition, dtype=np.float64)
    initial = np.asarray(initial, dtype=np.float64)
    v = initial.size
    if transition.shape != (v, v):
        raise ValueError("transition must be square and match initial")
    rng = np.random.default_rng(seed)
    records = []
    for sid in range(n_sentences):
        toks = np.empty(length, dtype=np.uint32)
        toks[0] = rng.choice(v, p=initial)
        for i in range(1, length):
            toks[i] = rng.choice(v, p=transition[toks[i - 1]])
        records.append(SentenceRecord(
            tokens=toks,
            embeddings=np.zeros((length, 1), dtype=np.float32),
            layer=layer,
            domain_tag=domain_tag,
            sentence_id=sid,
        ))
    return records
