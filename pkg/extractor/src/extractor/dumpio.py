"""Writer for the embedding-dump wire format consumed by the analysis
toolkit. Implemented directly against the documented byte layout (the file
format is the contract between the two packages):

    magic "MIPD" | version u16 | dtype u8 (0 = float32) | reserved u8 |
    vocab_size u32 | d u32 | layer u16 | record_count u64
    per record: n u32 | n x u32 token ids | n*d x f32 row-major floats

plus the `<dump>.manifest.json` sidecar and a `{token -> id}` vocabulary
sidecar. All integers little-endian. Files are written to a temp name and
atomically renamed on completion.
"""

from __future__ import annotations

import datetime
import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"MIPD"
FORMAT_VERSION = 1
DTYPE_FLOAT32 = 0
_HEADER = struct.Struct("<4sHBBIIHQ")


def write_dump_file(path, *, vocab_size: int, layer: int, sentences,
                    manifest: dict) -> Path:
    """`sentences` is a list of (token_ids, embedding_matrix) pairs.

    Embedding matrices are float32 rows x d; rows must equal len(token_ids)
    for per_position manifests and 1 for mean_pooled ones.
    """
    path = Path(path)
    if not sentences:
        raise ValueError("no sentences to write")
    d = int(np.asarray(sentences[0][1]).shape[1])
    pooled = manifest.get("pooling_mode") == "mean_pooled"
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, FORMAT_VERSION, DTYPE_FLOAT32, 0,
                              vocab_size, d, layer, len(sentences)))
        for ids, emb in sentences:
            ids = np.asarray(ids, dtype="<u4")
            emb = np.ascontiguousarray(emb, dtype="<f4")
            if ids.ndim != 1 or ids.size < 1:
                raise ValueError("each sentence needs at least one token")
            if int(ids.max()) >= vocab_size:
                raise ValueError("token id outside the vocabulary")
            expected_rows = 1 if pooled else ids.size
            if emb.shape != (expected_rows, d):
                raise ValueError(
                    f"embedding shape {emb.shape} != ({expected_rows}, {d})")
            if not np.isfinite(emb).all():
                raise ValueError("non-finite hidden states")
            fh.write(struct.pack("<I", ids.size))
            fh.write(ids.tobytes())
            fh.write(emb.tobytes())
    tmp.rename(path)
    sidecar = dict(manifest)
    sidecar.setdefault("created_at",
                       datetime.datetime.now(datetime.timezone.utc).isoformat())
    Path(str(path) + ".manifest.json").write_text(json.dumps(sidecar, indent=2))
    return path


def write_vocab_sidecar(path, id_of_token: dict) -> Path:
    """{token string -> id} vocabulary sidecar."""
    path = Path(path)
    path.write_text(json.dumps(id_of_token, indent=1))
    return path
