"""Projection of query embeddings onto a text-embedding support.

The projected embedding is the softmax-weighted combination of the support
vectors, with the weight on support entry ``i`` proportional to
``exp(cos(query, E_i) / temperature)``.  Since the engine keeps all stored
embeddings unit-norm, the cosine equals the raw dot product for unit
queries; arbitrary queries are normalized first so the weights are
scale-invariant.  Logits are stabilized by max-subtraction and accumulated
in float64.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from .errors import (
    DegenerateSumError,
    DimMismatchError,
    NonPositiveTemperatureError,
    ZeroVectorError,
)
from .store import CaptionStore
from .validation import as_matrix, as_vector
from .vectors import NORM_EPS

__all__ = [
    "ProjectionConfig",
    "softmax_weights",
    "project",
    "combine_with_weights",
    "weight_entropy",
    "SupportProjector",
]

DEGENERATE_NORM = 1e-9


@dataclass(frozen=True)
class ProjectionConfig:
    temperature: float = 0.01
    renormalize_output: bool = True

    def __post_init__(self):
        _check_temperature(self.temperature)


def _check_temperature(temperature: float) -> None:
    if not (math.isfinite(temperature) and temperature > 0):
        raise NonPositiveTemperatureError(
            f"temperature must be positive and finite, got {temperature}"
        )


def _support_matrix(support) -> np.ndarray:
    """Unit-norm float64 support matrix from a store or a raw array."""
    if isinstance(support, CaptionStore):
        if len(support) == 0:
            raise ZeroVectorError("support must contain at least one embedding")
        return support.matrix64 / support.row_norms64[:, None]
    m = as_matrix(support, "support")
    norms = np.linalg.norm(m, axis=1)
    if (norms < NORM_EPS).any():
        raise ZeroVectorError("support contains a zero row")
    return m / norms[:, None]


def softmax_weights(query, support, temperature: float = 0.01) -> np.ndarray:
    """Weights over the support, summing to 1 (float64).

    Max-subtraction keeps the exponentials overflow-free for any positive
    temperature.  Weights are mathematically positive; at extreme
    temperatures (cosine gap / temperature beyond ~745) the smallest ones
    underflow to exactly 0.0 in float64.
    """
    _check_temperature(temperature)
    m = _support_matrix(support)
    q = as_vector(query, "query")
    if q.shape[0] != m.shape[1]:
        raise DimMismatchError(
            f"query has dim {q.shape[0]}, support dim {m.shape[1]}"
        )
    qn = float(np.linalg.norm(q))
    if qn < NORM_EPS:
        raise ZeroVectorError("query has (near-)zero norm")
    logits = (m @ (q / qn)) / temperature
    logits -= logits.max()
    w = np.exp(logits)
    w /= w.sum()
    return w


def combine_with_weights(weights, support, renormalize: bool = True) -> np.ndarray:
    """Weighted combination of the support rows, optionally renormalized to
    unit length; rejects combinations that collapse below 1e-9 norm."""
    m = _support_matrix(support)
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (m.shape[0],):
        raise DimMismatchError(
            f"{w.shape[0] if w.ndim == 1 else w.shape} weights for "
            f"{m.shape[0]} support rows"
        )
    out = w @ m
    n = float(np.linalg.norm(out))
    if n < DEGENERATE_NORM:
        raise DegenerateSumError(
            f"weighted combination has norm {n:.3e}; support is antipodal"
        )
    if renormalize:
        out = out / n
    return out.astype(np.float32)


def project(query, support, config: ProjectionConfig | None = None) -> np.ndarray:
    """Project a query onto the support: softmax weighting then combination."""
    cfg = config or ProjectionConfig()
    w = softmax_weights(query, support, cfg.temperature)
    return combine_with_weights(w, support, renormalize=cfg.renormalize_output)


def weight_entropy(weights) -> float:
    """Shannon entropy (nats) of a weight vector; 0 log 0 counts as 0."""
    w = np.asarray(weights, dtype=np.float64)
    nz = w[w > 0]
    return float(-(nz * np.log(nz)).sum() + 0.0)


class SupportProjector(TransformerMixin, BaseEstimator):
    """Transformer that projects query embeddings onto a fitted support.

    fit(X) accepts a CaptionStore or an (n, dim) array (rows are
    normalized); transform(X) maps (m, dim) queries to (m, dim) projected
    embeddings, vectorized over the batch.
    """

    def __init__(self, temperature: float = 0.01, renormalize_output: bool = True):
        self.temperature = temperature
        self.renormalize_output = renormalize_output

    def fit(self, X, y=None):
        _check_temperature(self.temperature)
        self.support_ = _support_matrix(X)
        return self

    def _check_fitted(self) -> np.ndarray:
        support = getattr(self, "support_", None)
        if support is None:
            raise NotFittedError("SupportProjector must be fitted before use")
        return support

    def weights(self, query) -> np.ndarray:
        return softmax_weights(query, self._check_fitted(), self.temperature)

    def transform(self, X) -> np.ndarray:
        _check_temperature(self.temperature)
        support = self._check_fitted()
        single = np.asarray(X).ndim == 1
        Q = as_matrix(X, "queries")
        if Q.shape[1] != support.shape[1]:
            raise DimMismatchError(
                f"queries have dim {Q.shape[1]}, support dim {support.shape[1]}"
            )
        norms = np.linalg.norm(Q, axis=1)
        if (norms < NORM_EPS).any():
            raise ZeroVectorError("a query row has (near-)zero norm")
        logits = (Q / norms[:, None]) @ support.T / self.temperature
        logits -= logits.max(axis=1, keepdims=True)
        W = np.exp(logits)
        W /= W.sum(axis=1, keepdims=True)
        out = W @ support
        out_norms = np.linalg.norm(out, axis=1)
        if (out_norms < DEGENERATE_NORM).any():
            row = int(np.argmin(out_norms))
            raise DegenerateSumError(f"projection of query row {row} collapsed")
        if self.renormalize_output:
            out = out / out_norms[:, None]
        out = out.astype(np.float32)
        return out[0] if single else out
