"""Dense-vector primitives for the shared audio/text embedding space.

Embeddings are stored as float32; dot products and norms are accumulated in
float64 and rounded back, so results are deterministic and rounding error
stays below the tolerances the rest of the engine assumes.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    CorruptHeaderError,
    DimMismatchError,
    NonFiniteError,
    ZeroVectorError,
)
from .validation import as_vector, check_dim

__all__ = [
    "NORM_EPS",
    "UNIT_NORM_TOL",
    "normalize",
    "cosine_similarity",
    "LinearMapper",
    "apply_mapper",
    "save_mapper",
    "load_mapper",
]

NORM_EPS = 1e-12
UNIT_NORM_TOL = 1e-5

MAPPER_MAGIC = b"DRM1"
MAPPER_VERSION = 1
_MAPPER_HEADER = struct.Struct("<4sIII")  # magic, version, out_dim, in_dim


def normalize(v) -> np.ndarray:
    """Return ``v / ||v||_2`` as a unit-norm float32 vector."""
    vec = as_vector(v)
    n = float(np.linalg.norm(vec))
    if n < NORM_EPS:
        raise ZeroVectorError(f"cannot normalize a vector with norm {n:.3e}")
    return (vec / n).astype(np.float32)


def cosine_similarity(a, b) -> float:
    """Cosine similarity of two vectors, clamped to [-1, 1].

    Inputs that compare equal element-wise short-circuit to exactly 1.0, so
    a store round-trip or an exact duplicate always scores 1.0 rather than
    1.0 minus one ulp.
    """
    va = as_vector(a, "a")
    vb = as_vector(b, "b")
    check_dim(vb.shape[0], va.shape[0], "b")
    na = float(np.linalg.norm(va))
    nb = float(np.linalg.norm(vb))
    if na < NORM_EPS or nb < NORM_EPS:
        raise ZeroVectorError("cosine similarity undefined for zero vectors")
    if np.array_equal(va, vb):
        return 1.0
    return float(np.clip(float(va @ vb) / (na * nb), -1.0, 1.0))


@dataclass(frozen=True)
class LinearMapper:
    """Affine map ``weight @ e + bias`` from the contrastive space into the
    generator input space.

    ``weight`` has shape (out_dim, in_dim), ``bias`` shape (out_dim,); both
    are stored as float32 and must be finite.
    """

    weight: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weight, dtype=np.float32)
        b = np.asarray(self.bias, dtype=np.float32)
        if w.ndim != 2 or w.shape[0] < 1 or w.shape[1] < 1:
            raise ValueError(f"weight must be a non-empty matrix, got shape {w.shape}")
        if b.shape != (w.shape[0],):
            raise DimMismatchError(
                f"bias has shape {b.shape}, expected ({w.shape[0]},)"
            )
        if not (np.isfinite(w).all() and np.isfinite(b).all()):
            raise NonFiniteError("mapper weight/bias contain NaN or Inf")
        w = np.ascontiguousarray(w)
        b = np.ascontiguousarray(b)
        w.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "weight", w)
        object.__setattr__(self, "bias", b)

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]

    @classmethod
    def identity(cls, dim: int) -> "LinearMapper":
        return cls(np.eye(dim, dtype=np.float32), np.zeros(dim, dtype=np.float32))

    def apply(self, e) -> np.ndarray:
        vec = as_vector(e, "embedding")
        check_dim(vec.shape[0], self.in_dim, "embedding")
        out = self.weight.astype(np.float64) @ vec + self.bias.astype(np.float64)
        return out.astype(np.float32)


def apply_mapper(mapper: LinearMapper, e) -> np.ndarray:
    """Apply the linear mapper to one embedding."""
    return mapper.apply(e)


def save_mapper(mapper: LinearMapper, path) -> None:
    """Write a mapper as: header (magic b"DRM1", version, out_dim, in_dim,
    all little-endian uint32 after the magic), then weight row-major and bias,
    both float32 little-endian."""
    blob = _MAPPER_HEADER.pack(
        MAPPER_MAGIC, MAPPER_VERSION, mapper.out_dim, mapper.in_dim
    )
    with open(path, "wb") as fh:
        fh.write(blob)
        fh.write(np.ascontiguousarray(mapper.weight, dtype="<f4").tobytes())
        fh.write(np.ascontiguousarray(mapper.bias, dtype="<f4").tobytes())


def load_mapper(path) -> LinearMapper:
    data = Path(path).read_bytes()
    if len(data) < _MAPPER_HEADER.size:
        raise CorruptHeaderError(f"{path}: file shorter than the mapper header")
    magic, version, out_dim, in_dim = _MAPPER_HEADER.unpack_from(data)
    if magic != MAPPER_MAGIC:
        raise CorruptHeaderError(f"{path}: bad magic {magic!r}")
    if version != MAPPER_VERSION:
        raise CorruptHeaderError(f"{path}: unsupported version {version}")
    if out_dim < 1 or in_dim < 1:
        raise CorruptHeaderError(f"{path}: invalid dims {out_dim}x{in_dim}")
    expected = _MAPPER_HEADER.size + 4 * (out_dim * in_dim + out_dim)
    if len(data) != expected:
        raise CorruptHeaderError(
            f"{path}: expected {expected} bytes for a {out_dim}x{in_dim} mapper, "
            f"got {len(data)}"
        )
    body = np.frombuffer(data, dtype="<f4", offset=_MAPPER_HEADER.size)
    weight = body[: out_dim * in_dim].reshape(out_dim, in_dim)
    bias = body[out_dim * in_dim :]
    return LinearMapper(weight.copy(), bias.copy())
