"""Build, persist, filter, and merge caption stores.

A :class:`CaptionStore` is an ordered collection of captions with unit-norm
embeddings.  One representation backs both roles in the engine: the
text-embedding support consumed by projection and the caption datastore
consumed by retrieval; which role a store plays is decided at load time.

Persistence uses two files sharing a base path:

``<base>.bin``
    Binary embeddings.  Little-endian header: magic ``b"DRC1"``, version
    (uint32, currently 1), dim (uint32), count (uint64); then
    ``count * dim`` float32 values, row-major, one row per entry.

``<base>.tsv``
    UTF-8 metadata, one LF-terminated line per entry, in embedding-row
    order: ``id <TAB> source <TAB> text``.  Text comes last so it may
    contain anything except the record separator; in every field,
    backslash, tab, newline and carriage return are escaped as ``\\``,
    ``\t``, ``\n``, ``\r``.

For tiny fixtures there is also a single-file ingest form (see
:func:`read_ingest_tsv`): the metadata line with the embedding inserted as
comma-separated decimals before the text field.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import (
    CorruptHeaderError,
    CountMismatchError,
    DimMismatchError,
    DuplicateIdError,
    EmptyStoreError,
    NonFiniteError,
    StoreFormatError,
    ZeroVectorError,
)
from .vectors import UNIT_NORM_TOL, normalize

__all__ = [
    "CaptionEntry",
    "CaptionStore",
    "build_store",
    "save_store",
    "load_store",
    "filter_by_source",
    "merge_stores",
    "read_ingest_tsv",
    "read_vector_table",
    "write_vector_table",
]

logger = logging.getLogger(__name__)

STORE_MAGIC = b"DRC1"
STORE_VERSION = 1
_HEADER = struct.Struct("<4sIIQ")  # magic, version, dim, count


@dataclass(frozen=True)
class CaptionEntry:
    """One caption with its unit-norm text embedding and provenance tag."""

    id: str
    text: str
    embedding: np.ndarray
    source: str = ""


class CaptionStore:
    """Immutable, ordered caption collection with unit-norm embeddings."""

    def __init__(
        self,
        ids: Sequence[str],
        texts: Sequence[str],
        sources: Sequence[str],
        embeddings: np.ndarray,
        label: str = "",
    ):
        ids = list(ids)
        texts = list(texts)
        sources = list(sources)
        matrix = np.ascontiguousarray(np.asarray(embeddings), dtype=np.float32)
        if matrix.ndim != 2:
            raise ValueError(f"embeddings must be 2-D, got shape {matrix.shape}")
        n, dim = matrix.shape
        if dim < 1:
            raise ValueError("embedding dim must be >= 1")
        if not (len(ids) == len(texts) == len(sources) == n):
            raise CountMismatchError(
                f"{len(ids)} ids, {len(texts)} texts, {len(sources)} sources "
                f"for {n} embedding rows"
            )
        if n and not np.isfinite(matrix).all():
            raise NonFiniteError("store embeddings contain NaN or Inf")
        seen: set[str] = set()
        for i, entry_id in enumerate(ids):
            if not entry_id:
                raise ValueError(f"entry {i} has an empty id")
            if entry_id in seen:
                raise DuplicateIdError(f"duplicate id {entry_id!r}")
            seen.add(entry_id)
            if not texts[i]:
                raise ValueError(f"entry {entry_id!r} has empty text")
        if n:
            norms = np.linalg.norm(matrix.astype(np.float64), axis=1)
            bad = np.nonzero(np.abs(norms - 1.0) > UNIT_NORM_TOL)[0]
            if bad.size:
                i = int(bad[0])
                raise StoreFormatError(
                    f"entry {ids[i]!r} is not unit-norm (|v|={norms[i]:.6f})"
                )
        matrix.setflags(write=False)
        self._ids = ids
        self._texts = texts
        self._sources = sources
        self._matrix = matrix
        self.label = label

    # -- basic accessors ---------------------------------------------------

    def __len__(self) -> int:
        return self._matrix.shape[0]

    @property
    def dim(self) -> int:
        return self._matrix.shape[1]

    @property
    def ids(self) -> tuple[str, ...]:
        return tuple(self._ids)

    @property
    def texts(self) -> tuple[str, ...]:
        return tuple(self._texts)

    @property
    def sources(self) -> tuple[str, ...]:
        return tuple(self._sources)

    @property
    def matrix(self) -> np.ndarray:
        """Read-only (n, dim) float32 embedding matrix."""
        return self._matrix

    def __getitem__(self, i: int) -> CaptionEntry:
        return CaptionEntry(
            self._ids[i], self._texts[i], self._matrix[i], self._sources[i]
        )

    def __iter__(self) -> Iterator[CaptionEntry]:
        for i in range(len(self)):
            yield self[i]

    def __repr__(self) -> str:
        return (
            f"CaptionStore(n={len(self)}, dim={self.dim}, label={self.label!r})"
        )

    # -- cached derived views used by retrieval/projection ------------------

    @cached_property
    def matrix64(self) -> np.ndarray:
        m = self._matrix.astype(np.float64)
        m.setflags(write=False)
        return m

    @cached_property
    def row_norms64(self) -> np.ndarray:
        n = np.sqrt(np.einsum("ij,ij->i", self.matrix64, self.matrix64))
        n.setflags(write=False)
        return n

    @cached_property
    def id_array(self) -> np.ndarray:
        arr = np.asarray(self._ids, dtype=np.str_)
        arr.setflags(write=False)
        return arr


def build_store(
    records: Iterable[tuple[str, str, object, str]], label: str = ""
) -> CaptionStore:
    """Build a store from ``(id, text, raw_vector, source)`` records.

    Every vector is normalized to unit length; insertion order is kept.
    Raises :class:`DuplicateIdError`, :class:`DimMismatchError`,
    :class:`ZeroVectorError` or :class:`NonFiniteError` naming the
    offending record id.
    """
    ids: list[str] = []
    texts: list[str] = []
    sources: list[str] = []
    rows: list[np.ndarray] = []
    seen: set[str] = set()
    dim: int | None = None
    for entry_id, text, vector, source in records:
        entry_id = str(entry_id)
        if entry_id in seen:
            raise DuplicateIdError(f"duplicate id {entry_id!r}")
        seen.add(entry_id)
        try:
            unit = normalize(vector)
        except (ZeroVectorError, NonFiniteError, ValueError) as exc:
            raise type(exc)(f"record {entry_id!r}: {exc}") from None
        if dim is None:
            dim = unit.shape[0]
        elif unit.shape[0] != dim:
            raise DimMismatchError(
                f"record {entry_id!r} has dim {unit.shape[0]}, expected {dim}"
            )
        ids.append(entry_id)
        texts.append(str(text))
        sources.append(str(source))
        rows.append(unit)
    if not rows:
        raise EmptyStoreError("cannot build a store from zero records")
    return CaptionStore(ids, texts, sources, np.stack(rows), label=label)


# -- persistence -----------------------------------------------------------


def _escape(field: str) -> str:
    return (
        field.replace("\\", "\\\\")
        .replace("\t", "\\t")
        .replace("\n", "\\n")
        .replace("\r", "\\r")
    )


def _unescape(field: str) -> str:
    if "\\" not in field:
        return field
    out: list[str] = []
    i = 0
    n = len(field)
    while i < n:
        ch = field[i]
        if ch == "\\" and i + 1 < n:
            mapped = {"\\": "\\", "t": "\t", "n": "\n", "r": "\r"}.get(field[i + 1])
            if mapped is not None:
                out.append(mapped)
                i += 2
                continue
        out.append(ch)
        i += 1
    return "".join(out)


def _paths(base) -> tuple[Path, Path]:
    base = Path(base)
    return base.with_name(base.name + ".bin"), base.with_name(base.name + ".tsv")


def save_store(store: CaptionStore, base) -> None:
    """Write ``<base>.bin`` and ``<base>.tsv``; round-trip is bit-exact on
    embedding bytes and lossless on metadata."""
    bin_path, tsv_path = _paths(base)
    header = _HEADER.pack(STORE_MAGIC, STORE_VERSION, store.dim, len(store))
    with open(bin_path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(store.matrix, dtype="<f4").tobytes())
    lines = [
        f"{_escape(i)}\t{_escape(s)}\t{_escape(t)}\n"
        for i, s, t in zip(store.ids, store.sources, store.texts)
    ]
    tsv_path.write_text("".join(lines), encoding="utf-8")


def load_store(base, label: str | None = None) -> CaptionStore:
    """Load a store written by :func:`save_store`; rejects bad headers and
    inconsistent counts, and re-verifies the unit-norm invariant."""
    bin_path, tsv_path = _paths(base)
    data = bin_path.read_bytes()
    if len(data) < _HEADER.size:
        raise CorruptHeaderError(f"{bin_path}: file shorter than the header")
    magic, version, dim, count = _HEADER.unpack_from(data)
    if magic != STORE_MAGIC:
        raise CorruptHeaderError(f"{bin_path}: bad magic {magic!r}")
    if version != STORE_VERSION:
        raise CorruptHeaderError(f"{bin_path}: unsupported version {version}")
    if dim < 1:
        raise CorruptHeaderError(f"{bin_path}: invalid dim {dim}")
    payload = len(data) - _HEADER.size
    if payload != count * dim * 4:
        raise CountMismatchError(
            f"{bin_path}: header promises {count}x{dim} float32 "
            f"({count * dim * 4} bytes), found {payload}"
        )
    matrix = np.frombuffer(data, dtype="<f4", offset=_HEADER.size).reshape(count, dim)
    raw = tsv_path.read_text(encoding="utf-8")
    lines = raw.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if len(lines) != count:
        raise CountMismatchError(
            f"{tsv_path}: header count {count} but {len(lines)} metadata rows"
        )
    ids: list[str] = []
    sources: list[str] = []
    texts: list[str] = []
    for row, line in enumerate(lines):
        fields = line.split("\t")
        if len(fields) != 3:
            raise StoreFormatError(
                f"{tsv_path}:{row + 1}: expected 3 tab-separated fields, "
                f"got {len(fields)}"
            )
        ids.append(_unescape(fields[0]))
        sources.append(_unescape(fields[1]))
        texts.append(_unescape(fields[2]))
    if label is None:
        label = Path(base).name
    return CaptionStore(ids, texts, sources, matrix.copy(), label=label)


# -- set-style operations ----------------------------------------------------


def filter_by_source(store: CaptionStore, excluded_sources) -> CaptionStore:
    """Keep exactly the entries whose source is not excluded, in order."""
    excluded = set(excluded_sources)
    keep = [i for i, s in enumerate(store.sources) if s not in excluded]
    dropped = len(store) - len(keep)
    if not keep:
        logger.warning(
            "filter_by_source(%r) removed all %d entries", store.label, dropped
        )
    elif dropped:
        logger.info("filter_by_source(%r) dropped %d entries", store.label, dropped)
    matrix = np.ascontiguousarray(store.matrix[keep]) if keep else np.empty(
        (0, store.dim), dtype=np.float32
    )
    return CaptionStore(
        [store.ids[i] for i in keep],
        [store.texts[i] for i in keep],
        [store.sources[i] for i in keep],
        matrix,
        label=store.label,
    )


def merge_stores(
    a: CaptionStore, b: CaptionStore, dedup_on_text: bool = False
) -> CaptionStore:
    """Concatenate ``a`` then ``b`` into a new store.

    With ``dedup_on_text``, later entries whose text is byte-identical to an
    earlier one are dropped.  Id collisions are resolved by suffixing the
    colliding id from ``b`` with ``~1``, ``~2``, ...; the collision count is
    logged.
    """
    if a.dim != b.dim:
        raise DimMismatchError(f"cannot merge dim {a.dim} with dim {b.dim}")
    ids: list[str] = []
    texts: list[str] = []
    sources: list[str] = []
    rows: list[np.ndarray] = []
    used: set[str] = set()
    seen_texts: set[str] = set()
    collisions = 0
    duplicates = 0
    for entry in list(a) + list(b):
        if dedup_on_text and entry.text in seen_texts:
            duplicates += 1
            continue
        seen_texts.add(entry.text)
        entry_id = entry.id
        if entry_id in used:
            collisions += 1
            n = 1
            while f"{entry_id}~{n}" in used:
                n += 1
            entry_id = f"{entry_id}~{n}"
        used.add(entry_id)
        ids.append(entry_id)
        texts.append(entry.text)
        sources.append(entry.source)
        rows.append(entry.embedding)
    if collisions:
        logger.warning("merge resolved %d id collisions by suffixing", collisions)
    if duplicates:
        logger.info("merge dropped %d duplicate-text entries", duplicates)
    matrix = np.stack(rows) if rows else np.empty((0, a.dim), dtype=np.float32)
    return CaptionStore(ids, texts, sources, matrix, label=a.label)


# -- plain-text ingest/exchange formats --------------------------------------


def read_ingest_tsv(path) -> list[tuple[str, str, np.ndarray, str]]:
    """Parse the single-file fixture form: ``id TAB source TAB v1,...,vd TAB
    text`` per line, fields escaped as in the metadata file."""
    records = []
    raw = Path(path).read_text(encoding="utf-8")
    for row, line in enumerate(filter(None, raw.split("\n"))):
        fields = line.split("\t")
        if len(fields) != 4:
            raise StoreFormatError(
                f"{path}:{row + 1}: expected 4 tab-separated fields, got {len(fields)}"
            )
        vec = np.array(
            [float(x) for x in fields[2].split(",") if x], dtype=np.float64
        )
        records.append(
            (_unescape(fields[0]), _unescape(fields[3]), vec, _unescape(fields[1]))
        )
    return records


def read_vector_table(path) -> tuple[list[str], np.ndarray]:
    """Parse ``id TAB v1,...,vd`` lines into (ids, float32 matrix)."""
    ids: list[str] = []
    rows: list[np.ndarray] = []
    raw = Path(path).read_text(encoding="utf-8")
    dim: int | None = None
    for row, line in enumerate(filter(None, raw.split("\n"))):
        fields = line.split("\t")
        if len(fields) != 2:
            raise StoreFormatError(
                f"{path}:{row + 1}: expected 2 tab-separated fields, got {len(fields)}"
            )
        vec = np.array([float(x) for x in fields[1].split(",") if x], dtype=np.float32)
        if dim is None:
            dim = vec.shape[0]
        elif vec.shape[0] != dim:
            raise DimMismatchError(
                f"{path}:{row + 1}: dim {vec.shape[0]}, expected {dim}"
            )
        ids.append(_unescape(fields[0]))
        rows.append(vec)
    if not rows:
        raise EmptyStoreError(f"{path}: no vectors")
    return ids, np.stack(rows)


def write_vector_table(fh, ids: Sequence[str], matrix: np.ndarray) -> None:
    """Write ``id TAB v1,...,vd`` lines; values are printed with full
    round-trip precision."""
    for entry_id, row in zip(ids, np.asarray(matrix)):
        values = ",".join(repr(float(x)) for x in row)
        fh.write(f"{_escape(str(entry_id))}\t{values}\n")
