"""Recoverability-targeted fine-tuning with a frozen final layer.

The model's final transformer block, final norm, and output head stay
frozen (plus anything weight-tied to them, e.g. tied input embeddings);
every preceding layer is optimized so that a jointly trained linear probe
can recover the input tokens from the representation entering the final
block. The probe is discarded afterwards: the point is to reshape the
representation, not to keep the decoder.

The op emits dumps of an evaluation corpus before and after fine-tuning;
measuring the recoverability delta is the analysis toolkit's job, through
its own file formats and CLI.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from transformers import BertForMaskedLM, GPT2LMHeadModel

from .corpus_gen import read_sentences
from .extract import ExtractSpec, extract_embeddings
from .tokenizer import WordTokenizer
from .toy_models import DECODER, ENCODER, load_meta, save_checkpoint

DEFAULT_PARAM_GUARD = 5_000_000


@dataclass
class FineTuneConfig:
    model_dir: str
    corpus: str
    out_dir: str
    steps: int = 300
    learning_rate: float = 1e-3
    batch_size: int = 32
    seed: int = 0
    max_seq_len: int = 32
    max_sentences: int | None = None
    eval_corpus: str | None = None  # defaults to `corpus`
    max_params: int = DEFAULT_PARAM_GUARD
    allow_large: bool = False

    def __post_init__(self):
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")


@dataclass
class FineTuneResult:
    checkpoint: Path
    before_dump: Path
    after_dump: Path
    report: dict = field(default_factory=dict)


def _load_lm(model_dir):
    meta = load_meta(model_dir)
    kind = meta.get("kind")
    if kind == ENCODER:
        return BertForMaskedLM.from_pretrained(model_dir), kind, meta
    if kind == DECODER:
        return GPT2LMHeadModel.from_pretrained(model_dir), kind, meta
    raise ValueError(
        f"no freeze map for checkpoint at {model_dir}: toy_meta.json must "
        f"name the architecture kind")


def _frozen_param_names(model, kind) -> list[str]:
    """Final block + final norm + output head; parameters are collected
    module-wise so weight tying is handled no matter how the checkpoint
    dedupes names (a tied head freezes the embedding it shares storage
    with, because they are one Parameter)."""
    if kind == DECODER:
        modules = [model.transformer.h[-1], model.transformer.ln_f, model.lm_head]
    else:
        modules = [model.bert.encoder.layer[-1], model.cls]
    frozen_ids = {id(p) for m in modules for p in m.parameters()}
    return [n for n, p in model.named_parameters() if id(p) in frozen_ids]


def finetune_recoverability(config: FineTuneConfig) -> FineTuneResult:
    """Returns the fine-tuned checkpoint plus before/after embedding dumps
    of the evaluation corpus (penultimate layer), and a report that records
    the freeze policy and its bitwise verification."""
    model, kind, meta = _load_lm(config.model_dir)
    n_params = sum(p.numel() for p in model.parameters())
    if n_params > config.max_params and not config.allow_large:
        raise ValueError(
            f"model has {n_params} parameters, over the {config.max_params} "
            f"toy-scale guard; pass allow_large to override")

    eval_corpus = config.eval_corpus or config.corpus
    out_dir = Path(config.out_dir)
    dumps_dir = out_dir / "dumps"
    before = extract_embeddings(ExtractSpec(
        model_dir=config.model_dir, corpus=eval_corpus, out_dir=dumps_dir,
        layers="penultimate", domain_tag="finetune_eval",
        max_sentences=config.max_sentences, max_seq_len=config.max_seq_len,
        seed=config.seed))[0]

    tokenizer = WordTokenizer.load(config.model_dir)
    frozen_names = _frozen_param_names(model, kind)
    params = dict(model.named_parameters())
    for name in frozen_names:
        params[name].requires_grad_(False)
    snapshot = {name: params[name].detach().clone() for name in frozen_names}
    trainable = [p for p in model.parameters() if p.requires_grad]

    base = model.base_model
    hidden = model.config.hidden_size
    torch.manual_seed(config.seed)
    probe = torch.nn.Linear(hidden, tokenizer.vocab_size)

    losses = []
    if config.steps > 0:
        if not trainable:
            raise ValueError("freeze left no trainable parameters")
        lines = read_sentences(config.corpus, config.max_sentences)
        encoded = [tokenizer.encode(ln, config.max_seq_len)[0] for ln in lines]
        encoded = [ids for ids in encoded if ids]
        if not encoded:
            raise ValueError("empty fine-tuning corpus")
        rng = np.random.default_rng(config.seed)
        optimizer = torch.optim.AdamW(
            [*trainable, *probe.parameters()], lr=config.learning_rate)
        model.train()
        penultimate = model.config.num_hidden_layers - 1
        for _ in range(config.steps):
            idx = rng.integers(0, len(encoded), size=config.batch_size)
            chunk = [encoded[i] for i in idx]
            width = max(len(ids) for ids in chunk)
            input_ids = torch.zeros((len(chunk), width), dtype=torch.long)
            mask = torch.zeros((len(chunk), width), dtype=torch.long)
            for i, ids in enumerate(chunk):
                input_ids[i, :len(ids)] = torch.tensor(ids, dtype=torch.long)
                mask[i, :len(ids)] = 1
            out = base(input_ids=input_ids, attention_mask=mask,
                       output_hidden_states=True)
            states = out.hidden_states[penultimate]
            keep = mask.bool()
            logits = probe(states[keep])
            targets = F.one_hot(input_ids[keep],
                                tokenizer.vocab_size).to(logits.dtype)
            loss = F.binary_cross_entropy_with_logits(logits, targets,
                                                      reduction="sum")
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            losses.append(float(loss.detach()))
        model.eval()

    freeze_verified = all(
        torch.equal(params[name], snapshot[name]) for name in frozen_names)
    if not freeze_verified:
        raise RuntimeError("frozen parameters changed during fine-tuning")
    for name in frozen_names:
        params[name].requires_grad_(True)

    ckpt_meta = dict(meta)
    ckpt_meta.update({
        "finetuned_from": str(config.model_dir),
        "finetune_steps": config.steps,
        "finetune_learning_rate": config.learning_rate,
        "finetune_seed": config.seed,
    })
    save_checkpoint(model, tokenizer, out_dir, ckpt_meta)

    after = extract_embeddings(ExtractSpec(
        model_dir=out_dir, corpus=eval_corpus, out_dir=dumps_dir,
        layers="penultimate", domain_tag="finetune_eval",
        max_sentences=config.max_sentences, max_seq_len=config.max_seq_len,
        seed=config.seed))[0]

    report = {
        "kind": kind,
        "steps": config.steps,
        "learning_rate": config.learning_rate,
        "seed": config.seed,
        "total_params": n_params,
        "trainable_params": sum(p.numel() for p in trainable),
        "freeze_policy": "last transformer block + final norm + output head "
                         "(+ weight-tied tensors, e.g. tied input embeddings)",
        "frozen_params": frozen_names,
        "freeze_verified_bitwise": freeze_verified,
        "first_loss": losses[0] if losses else None,
        "final_loss": losses[-1] if losses else None,
        "before_dump": str(before),
        "after_dump": str(after),
    }
    (out_dir / "finetune_report.json").write_text(json.dumps(report, indent=2))
    return FineTuneResult(checkpoint=out_dir, before_dump=before,
                          after_dump=after, report=report)
