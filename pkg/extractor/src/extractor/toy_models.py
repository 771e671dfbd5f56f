"""Build and briefly train toy checkpoints on CPU.

Two architectures at matched scale: a bidirectional encoder trained with
masked-token prediction and a causal decoder trained with next-token
prediction. Checkpoints are ordinary `save_pretrained` directories plus
the word-level vocabulary sidecar and a small `toy_meta.json`, so the
extraction pipeline treats them exactly like any local checkpoint.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch
from transformers import BertConfig, BertForMaskedLM, GPT2Config, GPT2LMHeadModel

from .corpus_gen import read_sentences
from .tokenizer import WordTokenizer

ENCODER = "encoder"
DECODER = "decoder"
META_FILENAME = "toy_meta.json"

DEFAULT_HIDDEN = 48
DEFAULT_LAYERS = 4
DEFAULT_HEADS = 4
DEFAULT_INNER = 96
DEFAULT_MAX_POS = 64


def build_model(kind: str, vocab_size: int, seed: int, hidden: int = DEFAULT_HIDDEN,
                layers: int = DEFAULT_LAYERS, heads: int = DEFAULT_HEADS,
                inner: int = DEFAULT_INNER, max_pos: int = DEFAULT_MAX_POS,
                pos_init_std: float | None = None):
    """pos_init_std widens the positional-embedding init (decoders only);
    larger values make early-layer states position-noisy, as in bigger
    models where positions interfere with raw token identity."""
    torch.manual_seed(seed)
    if kind == ENCODER:
        config = BertConfig(
            vocab_size=vocab_size, hidden_size=hidden, num_hidden_layers=layers,
            num_attention_heads=heads, intermediate_size=inner,
            max_position_embeddings=max_pos, pad_token_id=0,
        )
        return BertForMaskedLM(config)
    if kind == DECODER:
        config = GPT2Config(
            vocab_size=vocab_size, n_embd=hidden, n_layer=layers, n_head=heads,
            n_inner=inner, n_positions=max_pos, pad_token_id=0,
            bos_token_id=3, eos_token_id=3,
        )
        model = GPT2LMHeadModel(config)
        if pos_init_std:
            with torch.no_grad():
                gen = torch.Generator().manual_seed(seed + 1)
                model.transformer.wpe.weight.copy_(torch.normal(
                    0.0, pos_init_std, model.transformer.wpe.weight.shape,
                    generator=gen))
        return model
    raise ValueError(f"unknown toy model kind {kind!r}")


def _pad_batch(encoded, pad_id):
    width = max(len(ids) for ids in encoded)
    input_ids = torch.full((len(encoded), width), pad_id, dtype=torch.long)
    mask = torch.zeros((len(encoded), width), dtype=torch.long)
    for i, ids in enumerate(encoded):
        input_ids[i, :len(ids)] = torch.tensor(ids, dtype=torch.long)
        mask[i, :len(ids)] = 1
    return input_ids, mask


def _mlm_inputs(input_ids, mask, tokenizer, rng, mask_prob=0.15):
    """Standard masked-LM corruption: 80% [MASK], 10% random, 10% kept."""
    labels = torch.full_like(input_ids, -100)
    corrupted = input_ids.clone()
    positions = (mask == 1).nonzero(as_tuple=False)
    pick = rng.random(len(positions)) < mask_prob
    for (b, i), chosen in zip(positions.tolist(), pick):
        if not chosen:
            continue
        labels[b, i] = input_ids[b, i]
        roll = rng.random()
        if roll < 0.8:
            corrupted[b, i] = tokenizer.mask_id
        elif roll < 0.9:
            corrupted[b, i] = int(rng.integers(len(tokenizer.id_of_token)))
    return corrupted, labels


def train_toy(model, kind, corpus_lines, tokenizer: WordTokenizer, *,
              seed: int, steps: int, batch_size: int = 32,
              learning_rate: float = 3e-3, max_seq_len: int = 32) -> list[float]:
    """In-place brief training; returns the per-step loss trajectory."""
    encoded = [tokenizer.encode(line, max_seq_len)[0] for line in corpus_lines]
    encoded = [ids for ids in encoded if ids]
    if not encoded:
        raise ValueError("empty corpus")
    rng = np.random.default_rng(seed)
    torch.manual_seed(seed)
    optimizer = torch.optim.AdamW(model.parameters(), lr=learning_rate)
    model.train()
    losses = []
    for _ in range(steps):
        idx = rng.integers(0, len(encoded), size=batch_size)
        input_ids, mask = _pad_batch([encoded[i] for i in idx], tokenizer.pad_id)
        if kind == ENCODER:
            corrupted, labels = _mlm_inputs(input_ids, mask, tokenizer, rng)
            out = model(input_ids=corrupted, attention_mask=mask, labels=labels)
        else:
            labels = input_ids.masked_fill(mask == 0, -100)
            out = model(input_ids=input_ids, attention_mask=mask, labels=labels)
        optimizer.zero_grad()
        out.loss.backward()
        torch.nn.utils.clip_grad_norm_(model.parameters(), 1.0)
        optimizer.step()
        losses.append(float(out.loss.detach()))
    model.eval()
    return losses


def save_checkpoint(model, tokenizer: WordTokenizer, out_dir, meta: dict) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    model.save_pretrained(out_dir)
    tokenizer.save(out_dir)
    (out_dir / META_FILENAME).write_text(json.dumps(meta, indent=2))
    return out_dir


def load_meta(model_dir) -> dict:
    path = Path(model_dir) / META_FILENAME
    return json.loads(path.read_text()) if path.exists() else {}


def make_toy_checkpoint(kind: str, corpus_path, out_dir, *, seed: int = 0,
                        steps: int = 1500, batch_size: int = 32,
                        learning_rate: float = 3e-3, max_seq_len: int = 32,
                        hidden: int = DEFAULT_HIDDEN, layers: int = DEFAULT_LAYERS,
                        pos_init_std: float | None = None,
                        max_sentences: int | None = None) -> Path:
    """Build a tokenizer from the corpus, train a toy model, save everything."""
    lines = read_sentences(corpus_path, max_sentences)
    tokenizer = WordTokenizer.build(lines)
    model = build_model(kind, tokenizer.vocab_size, seed, hidden=hidden,
                        layers=layers, pos_init_std=pos_init_std)
    losses = train_toy(model, kind, lines, tokenizer, seed=seed, steps=steps,
                       batch_size=batch_size, learning_rate=learning_rate,
                       max_seq_len=max_seq_len)
    meta = {
        "kind": kind,
        "seed": seed,
        "steps": steps,
        "learning_rate": learning_rate,
        "batch_size": batch_size,
        "max_seq_len": max_seq_len,
        "hidden": hidden,
        "layers": layers,
        "pos_init_std": pos_init_std,
        "corpus": str(corpus_path),
        "first_loss": losses[0] if losses else None,
        "final_loss": losses[-1] if losses else None,
        "tokenizer_id": f"wordlevel-{tokenizer.vocab_size}",
    }
    return save_checkpoint(model, tokenizer, out_dir, meta)
