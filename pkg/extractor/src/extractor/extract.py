"""Hidden-state extraction: checkpoint directory -> embedding dumps.

Layer indexing counts the input-embedding table as layer 0, so a model
with L transformer blocks yields L+1 layers; "penultimate" selects layer
L-1, the representation entering the final block. Padding positions are
dropped from records (a padded position carries no token to recover).
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from transformers import AutoModel

from . import __version__
from .corpus_gen import read_sentences
from .dumpio import write_dump_file, write_vocab_sidecar
from .tokenizer import WordTokenizer
from .toy_models import load_meta

LOG = logging.getLogger(__name__)

PENULTIMATE = "penultimate"
ALL_LAYERS = "all"
PER_POSITION = "per_position"
MEAN_POOLED = "mean_pooled"


@dataclass
class ExtractSpec:
    model_dir: str
    corpus: str
    out_dir: str
    layers: object = PENULTIMATE  # "penultimate" | "all" | list of ints
    pooling_mode: str = PER_POSITION
    domain_tag: str = ""
    max_sentences: int | None = None
    max_seq_len: int = 32
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.max_seq_len < 1:
            raise ValueError("max_seq_len must be >= 1")
        if self.pooling_mode not in (PER_POSITION, MEAN_POOLED):
            raise ValueError(f"unknown pooling_mode {self.pooling_mode!r}")


def load_checkpoint(model_dir):
    """(base model, tokenizer, meta) for a local checkpoint directory."""
    model_dir = Path(model_dir)
    if not model_dir.is_dir():
        raise FileNotFoundError(f"unknown model: {model_dir}")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")  # LM-head weights are dropped on purpose
        model = AutoModel.from_pretrained(model_dir)
    model.eval()
    tokenizer = WordTokenizer.load(model_dir)
    return model, tokenizer, load_meta(model_dir)


def _resolve_layers(selection, n_layers_with_embedding: int) -> list[int]:
    if selection == PENULTIMATE:
        return [n_layers_with_embedding - 2]
    if selection == ALL_LAYERS:
        return list(range(n_layers_with_embedding))
    layers = [int(x) for x in selection]
    for k in layers:
        if not 0 <= k < n_layers_with_embedding:
            raise ValueError(
                f"layer {k} outside [0, {n_layers_with_embedding}) for this model")
    return layers


def _hidden_states_for(model, encoded, batch_size):
    """Yields (sentence index, [layer states (n, d)]) with padding dropped."""
    for lo in range(0, len(encoded), batch_size):
        chunk = encoded[lo:lo + batch_size]
        width = max(len(ids) for ids in chunk)
        input_ids = torch.zeros((len(chunk), width), dtype=torch.long)
        mask = torch.zeros((len(chunk), width), dtype=torch.long)
        for i, ids in enumerate(chunk):
            input_ids[i, :len(ids)] = torch.tensor(ids, dtype=torch.long)
            mask[i, :len(ids)] = 1
        with torch.no_grad():
            out = model(input_ids=input_ids, attention_mask=mask,
                        output_hidden_states=True)
        for i, ids in enumerate(chunk):
            states = [h[i, :len(ids), :].numpy().astype(np.float32)
                      for h in out.hidden_states]
            yield lo + i, states


def extract_embeddings(spec: ExtractSpec) -> list[Path]:
    """One dump file (plus manifest) per selected layer; vocabulary sidecar
    written alongside. Sentences longer than max_seq_len are truncated with
    a warning."""
    model, tokenizer, meta = load_checkpoint(spec.model_dir)
    lines = read_sentences(spec.corpus, spec.max_sentences)
    if not lines:
        raise ValueError(f"empty corpus: {spec.corpus}")
    torch.manual_seed(spec.seed)

    encoded = []
    truncated = 0
    for line in lines:
        ids, was_truncated = tokenizer.encode(line, spec.max_seq_len)
        truncated += was_truncated
        if ids:
            encoded.append(ids)
    if truncated:
        LOG.warning("truncated %d/%d sentences to %d tokens",
                    truncated, len(lines), spec.max_seq_len)

    n_layers = model.config.num_hidden_layers + 1
    layers = _resolve_layers(spec.layers, n_layers)
    per_layer = {k: [] for k in layers}
    for idx, states in _hidden_states_for(model, encoded, spec.batch_size):
        for k in layers:
            emb = states[k]
            if spec.pooling_mode == MEAN_POOLED:
                emb = emb.mean(axis=0, keepdims=True)
            per_layer[k].append((encoded[idx], emb))

    out_dir = Path(spec.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    model_name = meta.get("kind", Path(spec.model_dir).name)
    tokenizer_id = meta.get("tokenizer_id", f"wordlevel-{tokenizer.vocab_size}")
    tag = spec.domain_tag or Path(spec.corpus).stem
    paths = []
    for k in layers:
        path = out_dir / f"{Path(spec.model_dir).name}.{tag}.layer{k:02d}.mipd"
        manifest = {
            "model_name": model_name,
            "tokenizer_id": tokenizer_id,
            "layer": k,
            "pooling_mode": spec.pooling_mode,
            "domain_tag": tag,
            "created_by": f"miprobe-extractor {__version__}",
        }
        write_dump_file(path, vocab_size=tokenizer.vocab_size, layer=k,
                        sentences=per_layer[k], manifest=manifest)
        paths.append(path)
    write_vocab_sidecar(out_dir / "vocab.json", tokenizer.id_of_token)
    return paths


@dataclass
class CosineResult:
    values: list = field(default_factory=list)
    layer: int = -1

    @property
    def mean(self) -> float:
        return float(np.mean(self.values)) if self.values else float("nan")


def reembed_cosine(model_dir, original_sentences, recovered_sentences,
                   layer=PENULTIMATE, pooling: str = MEAN_POOLED,
                   max_seq_len: int = 32, batch_size: int = 32) -> CosineResult:
    """Embed both sides identically (mean-pooled at the chosen layer) and
    return the per-pair cosine similarities."""
    if len(original_sentences) != len(recovered_sentences):
        raise ValueError(
            f"{len(original_sentences)} originals vs "
            f"{len(recovered_sentences)} recovered sentences")
    if pooling != MEAN_POOLED:
        raise ValueError("re-embedding cosine is defined on pooled vectors")
    model, tokenizer, _ = load_checkpoint(model_dir)
    n_layers = model.config.num_hidden_layers + 1
    k = _resolve_layers(layer if isinstance(layer, (list, tuple)) or
                        layer in (PENULTIMATE, ALL_LAYERS) else [layer],
                        n_layers)[0]
    if not original_sentences:
        return CosineResult(values=[], layer=k)

    def pooled(sentences):
        encoded = [tokenizer.encode(s, max_seq_len)[0] or [tokenizer.unk_id]
                   for s in sentences]
        vecs = [None] * len(encoded)
        for i, states in _hidden_states_for(model, encoded, batch_size):
            vecs[i] = states[k].mean(axis=0)
        return vecs

    orig = pooled(original_sentences)
    reco = pooled(recovered_sentences)
    values = []
    for u, v in zip(orig, reco):
        nu, nv = np.linalg.norm(u), np.linalg.norm(v)
        if nu == 0.0 or nv == 0.0:
            raise ValueError("zero pooled vector")
        values.append(float(np.dot(u, v) / (nu * nv)))
    return CosineResult(values=values, layer=k)
