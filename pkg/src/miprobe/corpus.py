"""Embedding-dump format and corpus bookkeeping.

A dump holds one corpus of sentences for one (model, layer, domain) triple:
per sentence the token ids and the per-position hidden-state matrix. The
binary layout (all integers little-endian) is:

    magic "MIPD" | version u16 | dtype u8 (0=float32) | reserved u8 |
    vocab_size u32 | d u32 | layer u16 | record_count u64
    then per record:
    n u32 | n x u32 token ids | rows*d x f32 embeddings (row-major)

where rows == n for per-position dumps and rows == 1 for mean-pooled ones.
Pooling is recorded in the JSON manifest sidecar `<dump>.manifest.json`,
not in the binary header, so readers of pooled dumps must be told.

Concurrency: records are immutable once built; any number of readers may
stream one file through independent handles. Writing is single-writer per
sink.
"""

from __future__ import annotations

import dataclasses
import datetime
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO, Iterable, Iterator, Sequence

import numpy as np

MAGIC = b"MIPD"
FORMAT_VERSION = 1
DTYPE_FLOAT32 = 0
_HEADER_STRUCT = struct.Struct("<4sHBBIIHQ")
HEADER_SIZE = _HEADER_STRUCT.size  # 26 bytes

PER_POSITION = "per_position"
MEAN_POOLED = "mean_pooled"

# Table-2 length categories; half-open, lower edge inclusive.
DEFAULT_BUCKET_EDGES = (50, 100, 300, 800, 1500)
_DEFAULT_BUCKET_LABELS = ("short", "medium", "long", "very_long")
OTHER_BUCKET = "other"


class DumpFormatError(Exception):
    """Raised when a byte stream is not a well-formed dump."""


@dataclass(frozen=True)
class Vocabulary:
    """Token-id space shared by a dump and the probes applied to it.

    id_of_token and token_of_id must be mutual inverses over [0, size);
    size must be at least 2 (the Fano bound needs log(size-1)).
    """

    size: int
    id_of_token: dict
    token_of_id: dict
    tokenizer_id: str = ""

    def __post_init__(self):
        if self.size < 2:
            raise ValueError(f"vocabulary size must be >= 2, got {self.size}")
        if len(self.id_of_token) != self.size or len(self.token_of_id) != self.size:
            raise ValueError("vocabulary mappings must cover exactly [0, size)")
        for tok, idx in self.id_of_token.items():
            if not 0 <= idx < self.size:
                raise ValueError(f"token id {idx} outside [0, {self.size})")
            if self.token_of_id.get(idx) != tok:
                raise ValueError("id_of_token and token_of_id are not inverses")

    @classmethod
    def from_tokens(cls, tokens: Sequence[str], tokenizer_id: str = "") -> "Vocabulary":
        if len(set(tokens)) != len(tokens):
            raise ValueError("duplicate tokens")
        id_of = {tok: i for i, tok in enumerate(tokens)}
        return cls(
            size=len(tokens),
            id_of_token=id_of,
            token_of_id={i: tok for tok, i in id_of.items()},
            tokenizer_id=tokenizer_id,
        )

    @classmethod
    def from_token_map(cls, mapping: dict, tokenizer_id: str = "") -> "Vocabulary":
        """Build from the sidecar form {token string -> id}."""
        token_of_id = {int(i): tok for tok, i in mapping.items()}
        if sorted(token_of_id) != list(range(len(mapping))):
            raise ValueError("token ids must be exactly 0..len-1")
        return cls(
            size=len(mapping),
            id_of_token={tok: int(i) for tok, i in mapping.items()},
            token_of_id=token_of_id,
            tokenizer_id=tokenizer_id,
        )

    def to_token_map(self) -> dict:
        return dict(self.id_of_token)


@dataclass
class SentenceRecord:
    """One sentence at one layer: token ids plus embedding rows.

    Embeddings are float32, shape (n, d) for per-position dumps or (1, d)
    for mean-pooled ones. Records are treated as immutable once built.
    """

    tokens: np.ndarray
    embeddings: np.ndarray
    layer: int
    domain_tag: str = ""
    sentence_id: object = None

    def __post_init__(self):
        self.tokens = np.asarray(self.tokens, dtype=np.uint32)
        self.embeddings = np.ascontiguousarray(self.embeddings, dtype=np.float32)
        if self.tokens.ndim != 1 or self.tokens.size < 1:
            raise ValueError("tokens must be a non-empty 1-d sequence")
        if self.embeddings.ndim != 2:
            raise ValueError("embeddings must be a 2-d matrix")

    @property
    def n(self) -> int:
        return int(self.tokens.size)

    def check(self, vocab_size: int, d: int, layer: int | None = None,
              pooling_mode: str = PER_POSITION) -> list[str]:
        """Return invariant-violation messages (empty when clean)."""
        problems = []
        if self.tokens.size and int(self.tokens.max()) >= vocab_size:
            problems.append(
                f"token id {int(self.tokens.max())} out of range for vocab_size {vocab_size}"
            )
        expected_rows = self.n if pooling_mode == PER_POSITION else 1
        if self.embeddings.shape != (expected_rows, d):
            problems.append(
                f"embeddings shape {self.embeddings.shape} != ({expected_rows}, {d})"
            )
        if not np.isfinite(self.embeddings).all():
            problems.append("non-finite embedding values")
        if layer is not None and self.layer != layer:
            problems.append(f"record layer {self.layer} != dump layer {layer}")
        return problems


@dataclass(frozen=True)
class DumpHeader:
    vocab_size: int
    embedding_dim: int
    layer: int
    record_count: int
    format_version: int = FORMAT_VERSION
    dtype_code: int = DTYPE_FLOAT32
    magic: bytes = MAGIC

    def pack(self) -> bytes:
        return _HEADER_STRUCT.pack(
            self.magic, self.format_version, self.dtype_code, 0,
            self.vocab_size, self.embedding_dim, self.layer, self.record_count,
        )

    @classmethod
    def unpack(cls, raw: bytes) -> "DumpHeader":
        if len(raw) < HEADER_SIZE:
            raise DumpFormatError(f"header truncated: {len(raw)} < {HEADER_SIZE} bytes")
        magic, version, dtype, _reserved, vocab, d, layer, count = _HEADER_STRUCT.unpack(
            raw[:HEADER_SIZE]
        )
        if magic != MAGIC:
            raise DumpFormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
        if version != FORMAT_VERSION:
            raise DumpFormatError(f"unsupported format version {version}")
        if dtype != DTYPE_FLOAT32:
            raise DumpFormatError(f"unsupported dtype code {dtype}")
        return cls(vocab_size=vocab, embedding_dim=d, layer=layer,
                   record_count=count, format_version=version, dtype_code=dtype)


@dataclass
class Manifest:
    """JSON sidecar describing where a dump came from."""

    model_name: str
    tokenizer_id: str
    layer: int
    pooling_mode: str = PER_POSITION
    domain_tag: str = ""
    created_at: str = ""
    created_by: str = ""

    def __post_init__(self):
        if self.pooling_mode not in (PER_POSITION, MEAN_POOLED):
            raise ValueError(f"unknown pooling_mode {self.pooling_mode!r}")
        if not self.created_at:
            self.created_at = datetime.datetime.now(datetime.timezone.utc).isoformat()

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "Manifest":
        return cls(**data)


def manifest_path(dump_path) -> Path:
    return Path(str(dump_path) + ".manifest.json")


@dataclass
class Dump:
    """A materialized dump: header, optional manifest, records."""

    header: DumpHeader
    records: list
    manifest: Manifest | None = None

    @property
    def vocab_size(self) -> int:
        return self.header.vocab_size

    @property
    def embedding_dim(self) -> int:
        return self.header.embedding_dim


def write_dump(records: Sequence[SentenceRecord], header: DumpHeader,
               manifest: Manifest | None, sink) -> int:
    """Serialize records to `sink` (path or binary stream); returns bytes written.

    When `sink` is a path the manifest is emitted as `<dump>.manifest.json`.
    All records must agree with the header (and with the manifest's pooling
    mode) before anything is written.
    """
    pooling = manifest.pooling_mode if manifest is not None else PER_POSITION
    if header.record_count != len(records):
        raise ValueError(
            f"header.record_count {header.record_count} != {len(records)} records"
        )
    for i, rec in enumerate(records):
        problems = rec.check(header.vocab_size, header.embedding_dim,
                             header.layer, pooling)
        if problems:
            raise ValueError(f"record {i}: " + "; ".join(problems))

    if isinstance(sink, (str, Path)):
        with open(sink, "wb") as fh:
            written = _write_payload(records, header, fh)
        if manifest is not None:
            manifest_path(sink).write_text(json.dumps(manifest.to_dict(), indent=2))
        return written
    return _write_payload(records, header, sink)


def _write_payload(records, header, fh: BinaryIO) -> int:
    written = fh.write(header.pack())
    for rec in records:
        written += fh.write(struct.pack("<I", rec.n))
        written += fh.write(rec.tokens.astype("<u4", copy=False).tobytes())
        written += fh.write(rec.embeddings.astype("<f4", copy=False).tobytes())
    return written


def read_dump(source, *, pooling_mode: str = PER_POSITION):
    """Open a dump and return (header, record iterator).

    Records are yielded lazily in written order; only one record is held in
    memory beyond the consumer's demand, so arbitrarily large dumps stream
    in constant memory. The iterator raises DumpFormatError on truncated
    payloads or non-finite floats, naming the offending record index.

    `pooling_mode` is a reader-side hint (the binary header does not store
    pooling); pass MEAN_POOLED when the manifest sidecar says so.
    """
    fh, owns = _as_stream(source)
    try:
        header = DumpHeader.unpack(fh.read(HEADER_SIZE))
    except Exception:
        if owns:
            fh.close()
        raise
    return header, _record_iter(fh, header, pooling_mode, owns, strict=True)


def _as_stream(source):
    if isinstance(source, (str, Path)):
        return open(source, "rb"), True
    return source, False


def _record_iter(fh, header, pooling_mode, owns, strict):
    try:
        for index in range(header.record_count):
            rec, problem = _read_record(fh, header, pooling_mode, index)
            if problem is not None:
                raise DumpFormatError(f"record {index}: {problem}")
            if not np.isfinite(rec.embeddings).all():
                raise DumpFormatError(f"record {index}: non-finite embedding values")
            yield rec
        if strict and fh.read(1):
            raise DumpFormatError("trailing bytes after final record")
    finally:
        if owns:
            fh.close()


def _read_record(fh, header, pooling_mode, index):
    """Read one record's bytes; returns (record_or_None, structural_problem_or_None).

    Only structural problems (truncation, zero-token records) are reported
    here; value-level checks (finite floats, id range) are the caller's job.
    """
    raw_n = fh.read(4)
    if len(raw_n) < 4:
        return None, "truncated before record length"
    n = struct.unpack("<I", raw_n)[0]
    rows = n if pooling_mode == PER_POSITION else (1 if n else 0)
    if n < 1:
        return None, "record with zero tokens"
    id_bytes = fh.read(4 * n)
    if len(id_bytes) < 4 * n:
        return None, "truncated token ids"
    emb_bytes = fh.read(4 * rows * header.embedding_dim)
    if len(emb_bytes) < 4 * rows * header.embedding_dim:
        return None, "truncated embeddings"
    tokens = np.frombuffer(id_bytes, dtype="<u4").copy()
    embeddings = np.frombuffer(emb_bytes, dtype="<f4").reshape(
        rows, header.embedding_dim).copy()
    rec = SentenceRecord(tokens=tokens, embeddings=embeddings,
                         layer=header.layer, sentence_id=index)
    return rec, None


def save_dump(dump: Dump, path) -> int:
    """write_dump for a materialized Dump; returns bytes written."""
    return write_dump(dump.records, dump.header, dump.manifest, path)


def load_dump(path, *, with_manifest: bool = True) -> Dump:
    """Read a whole dump file into memory, attaching the manifest sidecar."""
    manifest = None
    mpath = manifest_path(path)
    if with_manifest and mpath.exists():
        manifest = Manifest.from_dict(json.loads(mpath.read_text()))
    pooling = manifest.pooling_mode if manifest is not None else PER_POSITION
    header, it = read_dump(path, pooling_mode=pooling)
    records = list(it)
    if manifest is not None:
        for rec in records:
            rec.domain_tag = manifest.domain_tag
    return Dump(header=header, records=records, manifest=manifest)


@dataclass
class ValidationReport:
    record_count: int = 0
    min_n: int | None = None
    max_n: int | None = None
    total_positions: int = 0
    violations: list = field(default_factory=list)  # (record index or None, message)

    @property
    def passed(self) -> bool:
        return not self.violations

    def add(self, index, message):
        self.violations.append((index, message))

    def to_dict(self) -> dict:
        return {
            "record_count": self.record_count,
            "min_n": self.min_n,
            "max_n": self.max_n,
            "total_positions": self.total_positions,
            "passed": self.passed,
            "violations": [
                {"record": idx, "message": msg} for idx, msg in self.violations
            ],
        }


def validate_dump(source) -> ValidationReport:
    """Scan a dump and report every invariant violation with its record index.

    Unlike read_dump this never raises on payload problems; only an
    unreadable header is an error. When `source` is a path with a manifest
    sidecar, pooling consistency is checked against it.
    """
    pooling = PER_POSITION
    if isinstance(source, (str, Path)):
        mpath = manifest_path(source)
        if mpath.exists():
            pooling = Manifest.from_dict(json.loads(mpath.read_text())).pooling_mode
    fh, owns = _as_stream(source)
    report = ValidationReport()
    try:
        header = DumpHeader.unpack(fh.read(HEADER_SIZE))
        if header.vocab_size < 2:
            report.add(None, f"header vocab_size {header.vocab_size} < 2")
        for index in range(header.record_count):
            rec, problem = _read_record(fh, header, pooling, index)
            if problem is not None:
                report.add(index, problem)
                if "truncated" in problem:
                    break  # lost framing, cannot scan further
                continue
            report.record_count += 1
            report.total_positions += rec.n
            report.min_n = rec.n if report.min_n is None else min(report.min_n, rec.n)
            report.max_n = rec.n if report.max_n is None else max(report.max_n, rec.n)
            for msg in rec.check(header.vocab_size, header.embedding_dim,
                                 header.layer, pooling):
                report.add(index, msg)
        else:
            if fh.read(1):
                report.add(None, "trailing bytes after final record")
    finally:
        if owns:
            fh.close()
    return report


def bucket_by_length(records: Iterable[SentenceRecord],
                     edges: Sequence[int] = DEFAULT_BUCKET_EDGES) -> dict:
    """Partition records into half-open length buckets [edges[k], edges[k+1]).

    Records outside every bucket go to the "other" group. The default edges
    give the named short/medium/long/very_long categories.
    """
    edges = tuple(int(e) for e in edges)
    if len(edges) < 2 or any(a >= b for a, b in zip(edges, edges[1:])):
        raise ValueError(f"edges must be strictly ascending, got {edges}")
    labels = _bucket_labels(edges)
    buckets = {label: [] for label in labels}
    buckets[OTHER_BUCKET] = []
    for rec in records:
        for (lo, hi), label in zip(zip(edges, edges[1:]), labels):
            if lo <= rec.n < hi:
                buckets[label].append(rec)
                break
        else:
            buckets[OTHER_BUCKET].append(rec)
    return buckets


def _bucket_labels(edges) -> list[str]:
    if edges == DEFAULT_BUCKET_EDGES:
        return list(_DEFAULT_BUCKET_LABELS)
    return [f"[{lo},{hi})" for lo, hi in zip(edges, edges[1:])]
