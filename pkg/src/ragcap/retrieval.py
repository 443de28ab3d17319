"""Exact cosine retrieval over a caption store.

Two query modes exist.  Inference-style retrieval returns the globally
most-similar captions.  Training-style retrieval restricts candidates to an
inclusive similarity window [s_min, s_max] and, when more than ``k``
qualify, draws a uniformly random ``k``-subset with a fully specified
generator so results are reproducible across platforms:

* generator: SplitMix64 (state advances by 0x9E3779B97F4A7C15; output is the
  state mixed by two xor-multiply rounds with 0xBF58476D1CE4E5B9 and
  0x94D049BB133111EB and a final ``>> 31`` xor);
* bounded draws use rejection sampling, so they are unbiased;
* the subset is the first ``k`` slots of a partial Fisher-Yates shuffle of
  the candidate indices in store order.

A window upper bound below 1.0 therefore excludes exact duplicates of the
query by construction: a duplicate scores exactly 1.0.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .errors import DimMismatchError, EmptyStoreError, ZeroVectorError
from .store import CaptionEntry, CaptionStore
from .validation import as_vector
from .vectors import NORM_EPS

__all__ = [
    "RetrievalMode",
    "RetrievalConfig",
    "RetrievalHit",
    "scan_scores",
    "scan_similarities",
    "retrieve_topk",
    "retrieve_in_range",
    "SplitMix64",
    "sample_without_replacement",
    "derive_seed",
    "CaptionRetriever",
]

_MASK64 = (1 << 64) - 1


class RetrievalMode(str, Enum):
    TRAINING = "training"
    INFERENCE = "inference"


@dataclass(frozen=True)
class RetrievalConfig:
    """How many captions to retrieve and, in training mode, from which
    similarity window.  Inference mode ignores the window entirely."""

    k: int = 3
    s_min: float | None = 0.75
    s_max: float | None = 0.85
    mode: RetrievalMode = RetrievalMode.INFERENCE
    seed: int = 0

    def __post_init__(self):
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        object.__setattr__(self, "mode", RetrievalMode(self.mode))
        object.__setattr__(self, "seed", int(self.seed) & _MASK64)
        if self.mode is RetrievalMode.TRAINING:
            if self.s_min is None or self.s_max is None:
                raise ValueError("training mode requires s_min and s_max")
            if not (-1.0 <= self.s_min <= self.s_max <= 1.0):
                raise ValueError(
                    f"need -1 <= s_min <= s_max <= 1, got "
                    f"[{self.s_min}, {self.s_max}]"
                )


@dataclass(frozen=True)
class RetrievalHit:
    entry: CaptionEntry
    similarity: float


# -- seeded sampling ---------------------------------------------------------


class SplitMix64:
    """The SplitMix64 generator; deterministic for a given 64-bit seed."""

    def __init__(self, seed: int):
        self._state = int(seed) & _MASK64

    def next_u64(self) -> int:
        self._state = (self._state + 0x9E3779B97F4A7C15) & _MASK64
        z = self._state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return z ^ (z >> 31)

    def below(self, bound: int) -> int:
        """Unbiased uniform integer in [0, bound) via rejection sampling."""
        if bound <= 0:
            raise ValueError("bound must be positive")
        limit = (1 << 64) - ((1 << 64) % bound)
        while True:
            r = self.next_u64()
            if r < limit:
                return r % bound


def sample_without_replacement(indices: Sequence[int], k: int, seed: int) -> list[int]:
    """Uniform k-subset of ``indices`` via partial Fisher-Yates."""
    pool = list(indices)
    if k >= len(pool):
        return pool
    rng = SplitMix64(seed)
    for i in range(k):
        j = i + rng.below(len(pool) - i)
        pool[i], pool[j] = pool[j], pool[i]
    return pool[:k]


def _fnv1a64(data: str) -> int:
    h = 0xCBF29CE484222325
    for byte in data.encode("utf-8"):
        h = ((h ^ byte) * 0x100000001B3) & _MASK64
    return h


def derive_seed(seed: int, salt: str) -> int:
    """Per-item seed from a run seed and a stable string key, so batch items
    sample independently regardless of processing order."""
    return SplitMix64((int(seed) & _MASK64) ^ _fnv1a64(salt)).next_u64()


# -- scanning ----------------------------------------------------------------


def _query64(query, store: CaptionStore) -> tuple[np.ndarray, float]:
    q = as_vector(query, "query")
    if q.shape[0] != store.dim:
        raise DimMismatchError(f"query has dim {q.shape[0]}, store dim {store.dim}")
    qn = float(np.linalg.norm(q))
    if qn < NORM_EPS:
        raise ZeroVectorError("query has (near-)zero norm")
    return q, qn


def scan_scores(query, store: CaptionStore) -> np.ndarray:
    """Cosine similarity of the query against every entry, in store order,
    as a float64 array.  Rows byte-identical to the query score exactly 1.0."""
    if len(store) == 0:
        raise EmptyStoreError("cannot scan an empty store")
    q, qn = _query64(query, store)
    sims = (store.matrix64 @ q) / (store.row_norms64 * qn)
    np.clip(sims, -1.0, 1.0, out=sims)
    exact = np.all(store.matrix == q.astype(np.float32), axis=1)
    if exact.any():
        sims[exact] = 1.0
    return sims


def scan_similarities(query, store: CaptionStore) -> list[RetrievalHit]:
    """One hit per entry, in store order."""
    sims = scan_scores(query, store)
    return [RetrievalHit(store[i], float(sims[i])) for i in range(len(store))]


def _hits_descending(store: CaptionStore, sims: np.ndarray, idx: np.ndarray) -> list[RetrievalHit]:
    if idx.size == 0:
        return []
    order = np.lexsort((store.id_array[idx], -sims[idx]))
    return [RetrievalHit(store[int(i)], float(sims[int(i)])) for i in idx[order]]


def retrieve_topk(query, store: CaptionStore, k: int) -> list[RetrievalHit]:
    """The k most similar captions, descending similarity, ties broken by
    ascending id; fewer than k when the store is smaller."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    sims = scan_scores(query, store)
    order = np.lexsort((store.id_array, -sims))
    top = order[: min(k, len(store))]
    return [RetrievalHit(store[int(i)], float(sims[int(i)])) for i in top]


def retrieve_in_range(
    query,
    store: CaptionStore,
    config: RetrievalConfig,
    salt: str | None = None,
) -> list[RetrievalHit]:
    """Training-mode retrieval: up to k captions whose similarity lies in
    the inclusive window, uniformly sampled when more qualify, returned in
    descending-similarity order.

    ``salt`` (typically the query's own id) is mixed into the seed so that
    per-item draws are independent; identical (query, store, config, salt)
    always yields the identical result.  An empty window is a valid empty
    result.
    """
    if config.mode is not RetrievalMode.TRAINING:
        raise ValueError("retrieve_in_range requires a training-mode config")
    sims = scan_scores(query, store)
    candidates = np.nonzero((sims >= config.s_min) & (sims <= config.s_max))[0]
    if candidates.size > config.k:
        seed = derive_seed(config.seed, salt) if salt is not None else config.seed
        chosen = sample_without_replacement(candidates.tolist(), config.k, seed)
        candidates = np.asarray(sorted(chosen))
    return _hits_descending(store, sims, candidates)


# -- estimator wrapper --------------------------------------------------------


class CaptionRetriever(BaseEstimator):
    """Estimator-style wrapper around exact cosine retrieval.

    ``fit`` installs a :class:`CaptionStore`; ``kneighbors`` mirrors the
    scikit-learn convention and returns (similarities, indices) for a batch
    of query vectors.
    """

    def __init__(
        self,
        k: int = 3,
        s_min: float = 0.75,
        s_max: float = 0.85,
        mode: str = "inference",
        seed: int = 0,
    ):
        self.k = k
        self.s_min = s_min
        self.s_max = s_max
        self.mode = mode
        self.seed = seed

    def _check_fitted(self) -> CaptionStore:
        store = getattr(self, "store_", None)
        if store is None:
            raise NotFittedError("CaptionRetriever must be fitted with a store first")
        return store

    def config(self) -> RetrievalConfig:
        return RetrievalConfig(
            k=self.k, s_min=self.s_min, s_max=self.s_max,
            mode=RetrievalMode(self.mode), seed=self.seed,
        )

    def fit(self, store: CaptionStore, y=None):
        if not isinstance(store, CaptionStore):
            raise TypeError("fit expects a CaptionStore")
        if len(store) == 0:
            raise EmptyStoreError("cannot fit on an empty store")
        self.store_ = store
        return self

    def topk(self, query) -> list[RetrievalHit]:
        return retrieve_topk(query, self._check_fitted(), self.k)

    def in_range(self, query, salt: str | None = None) -> list[RetrievalHit]:
        return retrieve_in_range(query, self._check_fitted(), self.config(), salt=salt)

    def kneighbors(self, X, n_neighbors: int | None = None):
        store = self._check_fitted()
        k = self.k if n_neighbors is None else n_neighbors
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        sims = np.empty((X.shape[0], min(k, len(store))), dtype=np.float64)
        idx = np.empty_like(sims, dtype=np.int64)
        index_of = {entry_id: i for i, entry_id in enumerate(store.ids)}
        for row, q in enumerate(X):
            hits = retrieve_topk(q, store, k)
            sims[row] = [h.similarity for h in hits]
            idx[row] = [index_of[h.entry.id] for h in hits]
        return sims, idx
