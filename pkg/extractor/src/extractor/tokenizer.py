"""Word-level whitespace tokenizer for toy checkpoints.

Real checkpoints ship their own subword tokenizers; the toy models built
here use a plain word-level vocabulary stored as `wordlevel_vocab.json`
({token string -> id}) inside the checkpoint directory. Ids 0..3 are
reserved for [PAD], [UNK], [MASK], [BOS].
"""

from __future__ import annotations

import json
from pathlib import Path

PAD, UNK, MASK, BOS = "[PAD]", "[UNK]", "[MASK]", "[BOS]"
SPECIALS = (PAD, UNK, MASK, BOS)
VOCAB_FILENAME = "wordlevel_vocab.json"


class WordTokenizer:
    def __init__(self, id_of_token: dict):
        self.id_of_token = dict(id_of_token)
        self.token_of_id = {i: t for t, i in self.id_of_token.items()}
        if len(self.token_of_id) != len(self.id_of_token):
            raise ValueError("duplicate ids in vocabulary")
        for i, special in enumerate(SPECIALS):
            if self.id_of_token.get(special) != i:
                raise ValueError(f"{special} must have id {i}")

    @property
    def vocab_size(self) -> int:
        return len(self.id_of_token)

    @property
    def pad_id(self) -> int:
        return 0

    @property
    def unk_id(self) -> int:
        return 1

    @property
    def mask_id(self) -> int:
        return 2

    @classmethod
    def build(cls, sentences) -> "WordTokenizer":
        """Vocabulary = specials + words in first-seen order."""
        id_of = {s: i for i, s in enumerate(SPECIALS)}
        for line in sentences:
            for word in line.split():
                if word not in id_of:
                    id_of[word] = len(id_of)
        return cls(id_of)

    def encode(self, sentence: str, max_length: int | None = None):
        """Token ids for one sentence; returns (ids, truncated_flag)."""
        words = sentence.split()
        truncated = max_length is not None and len(words) > max_length
        if truncated:
            words = words[:max_length]
        return [self.id_of_token.get(w, self.unk_id) for w in words], truncated

    def decode(self, ids) -> str:
        return " ".join(self.token_of_id.get(int(i), UNK) for i in ids)

    def save(self, directory) -> Path:
        path = Path(directory) / VOCAB_FILENAME
        path.write_text(json.dumps(self.id_of_token, indent=1))
        return path

    @classmethod
    def load(cls, directory) -> "WordTokenizer":
        path = Path(directory) / VOCAB_FILENAME
        if not path.exists():
            raise FileNotFoundError(f"no {VOCAB_FILENAME} in {directory}")
        return cls(json.loads(path.read_text()))
