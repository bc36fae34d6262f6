"""Knowledge base ingestion and the exact flat vector index.

The knowledge base is a JSON-lines file of curated clinical snippets, each
tagged with an optional retinopathy grade and an optional macular-edema
label.  Entries are embedded, L2-normalized at build time (so cosine
similarity reduces to a dot product downstream) and stored in an immutable
index that can be persisted to a versioned binary format.
"""

from __future__ import annotations

import hashlib
import io
import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO, Iterable, Sequence

import numpy as np

INDEX_MAGIC = b"RRAGIDX1"  # 7-byte format family + 1-byte version
UNIT_NORM_TOL = 1e-6

_GRADE_RANGE = (0, 1, 2, 3, 4)
_RECORD_KEYS = {"id", "dr_grade", "me_label", "text"}


class KbParseError(ValueError):
    """A knowledge-base line failed to parse or violated an invariant."""

    def __init__(self, message: str, line: int | None = None):
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line


class IndexBuildError(ValueError):
    """Embedding or normalization failed while building an index."""


class IndexFormatError(ValueError):
    """A persisted index payload is unreadable."""


class IndexVersionError(IndexFormatError):
    pass


class IndexTruncatedError(IndexFormatError):
    pass


class IndexChecksumError(IndexFormatError):
    pass


@dataclass(frozen=True)
class KnowledgeEntry:
    """One curated clinical snippet with its class tags."""

    id: str
    dr_grade: int | None
    me_label: bool | None
    text: str

    def __post_init__(self):
        if not self.id:
            raise ValueError("entry id must be non-empty")
        if not self.text.strip():
            raise ValueError(f"entry {self.id!r}: text must be non-empty")
        if self.dr_grade is not None and self.dr_grade not in _GRADE_RANGE:
            raise ValueError(f"entry {self.id!r}: dr_grade {self.dr_grade} outside 0..4")


@dataclass(frozen=True)
class EmbeddedEntry:
    """An entry plus its unit-norm embedding (float32, the storage dtype)."""

    entry: KnowledgeEntry
    vector: np.ndarray

    def __post_init__(self):
        vec = np.asarray(self.vector, dtype=np.float32)
        vec.setflags(write=False)
        object.__setattr__(self, "vector", vec)
        if vec.ndim != 1:
            raise ValueError(f"entry {self.entry.id!r}: vector must be 1-D")
        norm = float(np.linalg.norm(vec.astype(np.float64)))
        if abs(norm - 1.0) > UNIT_NORM_TOL:
            raise ValueError(
                f"entry {self.entry.id!r}: vector norm {norm!r} is not unit within {UNIT_NORM_TOL}"
            )


class VectorIndex:
    """Immutable exact-search index over embedded knowledge entries.

    Entry order is ingestion order.  The fingerprint is the SHA-256 of the
    serialized header and records (computed on first use), so two indexes
    with identical content always share it.
    """

    def __init__(self, dimension: int, entries: Sequence[EmbeddedEntry]):
        if dimension <= 0:
            raise ValueError("dimension must be positive")
        if not entries:
            raise ValueError("index must contain at least one entry")
        for emb in entries:
            if emb.vector.shape != (dimension,):
                raise ValueError(
                    f"entry {emb.entry.id!r}: dimension {emb.vector.shape[0]} != index dimension {dimension}"
                )
        self._dimension = int(dimension)
        self._entries = tuple(entries)
        self._fingerprint: bytes | None = None

    @property
    def dimension(self) -> int:
        return self._dimension

    @property
    def entries(self) -> tuple[EmbeddedEntry, ...]:
        return self._entries

    @property
    def fingerprint(self) -> bytes:
        if self._fingerprint is None:
            self._fingerprint = hashlib.sha256(self._body_bytes()).digest()
        return self._fingerprint

    def __len__(self) -> int:
        return len(self._entries)

    def _body_bytes(self) -> bytes:
        out = io.BytesIO()
        out.write(INDEX_MAGIC)
        out.write(struct.pack("<II", self._dimension, len(self._entries)))
        for emb in self._entries:
            _write_record(out, emb)
        return out.getvalue()


def parse_kb(source: bytes | str | BinaryIO) -> list[KnowledgeEntry]:
    """Parse a JSON-lines knowledge base.

    One record per line; blank lines are ignored.  Each record is a flat
    object with keys ``id``, ``text`` (required) and ``dr_grade``,
    ``me_label`` (optional, null allowed).  Errors report the 1-based line
    number.
    """
    if isinstance(source, bytes):
        text = source.decode("utf-8")
    elif isinstance(source, str):
        text = source
    else:
        text = source.read().decode("utf-8")

    entries: list[KnowledgeEntry] = []
    seen: set[str] = set()
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise KbParseError(f"invalid JSON ({exc.msg})", lineno) from exc
        if not isinstance(record, dict):
            raise KbParseError("record must be an object", lineno)
        unknown = set(record) - _RECORD_KEYS
        if unknown:
            raise KbParseError(f"unknown keys {sorted(unknown)}", lineno)

        entry_id = record.get("id")
        if not isinstance(entry_id, str) or not entry_id:
            raise KbParseError("missing or empty 'id'", lineno)
        if entry_id in seen:
            raise KbParseError(f"duplicate id {entry_id!r}", lineno)

        text_field = record.get("text")
        if not isinstance(text_field, str) or not text_field.strip():
            raise KbParseError(f"entry {entry_id!r}: missing or empty 'text'", lineno)

        grade = record.get("dr_grade")
        if grade is not None:
            if isinstance(grade, bool) or not isinstance(grade, int):
                raise KbParseError(f"entry {entry_id!r}: dr_grade must be an integer or null", lineno)
            if grade not in _GRADE_RANGE:
                raise KbParseError(f"entry {entry_id!r}: dr_grade {grade} outside 0..4", lineno)

        me = record.get("me_label")
        if me is not None and not isinstance(me, bool):
            raise KbParseError(f"entry {entry_id!r}: me_label must be true/false/null", lineno)

        seen.add(entry_id)
        entries.append(KnowledgeEntry(id=entry_id, dr_grade=grade, me_label=me, text=text_field))
    return entries


def build_index(entries: Iterable[KnowledgeEntry], embedder) -> VectorIndex:
    """Embed entries and assemble an index.

    ``embedder`` exposes ``embed(texts) -> list of vectors`` (one fixed
    dimension).  Vectors are L2-normalized in float64 and stored as float32.
    A zero or non-finite embedding is a hard error naming the entry: it
    indicates a broken embedder, not a skippable record.
    """
    entries = list(entries)
    if not entries:
        raise IndexBuildError("cannot build an index from zero entries")

    try:
        raw = embedder.embed([e.text for e in entries])
    except Exception as exc:
        raise IndexBuildError(f"embedder failed while embedding {len(entries)} entries: {exc}") from exc
    if len(raw) != len(entries):
        raise IndexBuildError(f"embedder returned {len(raw)} vectors for {len(entries)} entries")

    dimension: int | None = None
    embedded: list[EmbeddedEntry] = []
    for entry, vec in zip(entries, raw):
        v = np.asarray(vec, dtype=np.float64)
        if v.ndim != 1:
            raise IndexBuildError(f"entry {entry.id!r}: embedding must be 1-D")
        if dimension is None:
            dimension = int(v.shape[0])
        elif v.shape[0] != dimension:
            raise IndexBuildError(
                f"entry {entry.id!r}: embedding dimension {v.shape[0]} != {dimension}"
            )
        if not np.all(np.isfinite(v)):
            raise IndexBuildError(f"entry {entry.id!r}: embedding contains non-finite values")
        norm = float(np.linalg.norm(v))
        if norm == 0.0:
            raise IndexBuildError(f"entry {entry.id!r}: embedding is the zero vector")
        embedded.append(EmbeddedEntry(entry=entry, vector=(v / norm).astype(np.float32)))

    assert dimension is not None
    return VectorIndex(dimension, embedded)


def _write_record(out: io.BytesIO, emb: EmbeddedEntry) -> None:
    entry = emb.entry
    id_bytes = entry.id.encode("utf-8")
    text_bytes = entry.text.encode("utf-8")
    meta = (0x01 if entry.dr_grade is not None else 0) | (0x02 if entry.me_label is not None else 0)
    out.write(struct.pack("<I", len(id_bytes)))
    out.write(id_bytes)
    out.write(struct.pack("<I", len(text_bytes)))
    out.write(text_bytes)
    out.write(
        struct.pack(
            "<BBB",
            meta,
            entry.dr_grade if entry.dr_grade is not None else 0,
            1 if entry.me_label else 0,
        )
    )
    out.write(emb.vector.astype("<f4").tobytes())


def save_index(index: VectorIndex, sink: str | Path | BinaryIO) -> None:
    """Write the index: header, records, then a 32-byte SHA-256 footer."""
    payload = index._body_bytes() + index.fingerprint
    if isinstance(sink, (str, Path)):
        Path(sink).write_bytes(payload)
    else:
        sink.write(payload)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise IndexTruncatedError(f"payload truncated while reading {what}")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk


def load_index(source: bytes | str | Path | BinaryIO) -> VectorIndex:
    """Read an index payload produced by :func:`save_index`.

    Verifies the format version, structural completeness, and the SHA-256
    footer before returning; a corrupted payload never yields an index.
    """
    if isinstance(source, bytes):
        data = source
    elif isinstance(source, (str, Path)):
        data = Path(source).read_bytes()
    else:
        data = source.read()

    reader = _Reader(data)
    magic = reader.take(8, "magic")
    if magic[:7] != INDEX_MAGIC[:7]:
        raise IndexFormatError("not an index payload (bad magic)")
    if magic[7:] != INDEX_MAGIC[7:]:
        raise IndexVersionError(
            f"unsupported index version {magic[7:]!r} (expected {INDEX_MAGIC[7:]!r})"
        )

    dimension, count = struct.unpack("<II", reader.take(8, "header"))
    if dimension == 0 or count == 0:
        raise IndexFormatError("header declares an empty index")

    # Walk the structure first; validated objects are built only after the
    # checksum proves the payload intact (corruption must surface as a
    # format error, not as an invariant violation inside a half-built index).
    raw: list[tuple[bytes, bytes, int, int, int, bytes]] = []
    for _ in range(count):
        (id_len,) = struct.unpack("<I", reader.take(4, "id length"))
        id_bytes = reader.take(id_len, "id")
        (text_len,) = struct.unpack("<I", reader.take(4, "text length"))
        text_bytes = reader.take(text_len, "text")
        meta, grade_byte, me_byte = struct.unpack("<BBB", reader.take(3, "metadata"))
        vec_bytes = reader.take(4 * dimension, "vector")
        raw.append((id_bytes, text_bytes, meta, grade_byte, me_byte, vec_bytes))

    footer = reader.take(32, "checksum footer")
    if reader.pos != len(data):
        raise IndexFormatError(f"{len(data) - reader.pos} trailing bytes after footer")
    digest = hashlib.sha256(data[:-32]).digest()
    if digest != footer:
        raise IndexChecksumError("checksum footer does not match payload")

    entries: list[EmbeddedEntry] = []
    try:
        for id_bytes, text_bytes, meta, grade_byte, me_byte, vec_bytes in raw:
            entries.append(
                EmbeddedEntry(
                    entry=KnowledgeEntry(
                        id=id_bytes.decode("utf-8"),
                        dr_grade=int(grade_byte) if meta & 0x01 else None,
                        me_label=bool(me_byte) if meta & 0x02 else None,
                        text=text_bytes.decode("utf-8"),
                    ),
                    vector=np.frombuffer(vec_bytes, dtype="<f4").copy(),
                )
            )
        index = VectorIndex(dimension, entries)
    except (ValueError, UnicodeDecodeError) as exc:
        raise IndexFormatError(f"checksummed payload decodes to an invalid index: {exc}") from exc
    if index.fingerprint != footer:
        # Same bytes hashed the same way; any mismatch means a decode bug.
        raise IndexChecksumError("re-serialized fingerprint does not match footer")
    return index
