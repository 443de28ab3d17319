"""Measurement harness: a synthetic cross-modal corpus generator with a
controllable modality gap, gap statistics, recall@k, and round-trip
reconstruction sweeps.

The simulator realizes the gap as a constant translation plus per-pair
isotropic noise.  Text embeddings are drawn in clusters inside the subspace
orthogonal to a random gap axis ``u``; each paired audio embedding is
``normalize(text_i + offset_norm * u + eps_i)`` with
``eps_i ~ N(0, noise_sigma^2 I)``.  Keeping the texts orthogonal to ``u``
makes a pure translation tilt every paired cosine by the same factor, the
cleanest model of an offset between aligned embedding cones.

:func:`synth_weak_datastore` complements the curated corpus with
weakly-annotated captions: paraphrase-scattered copies of corpus captions
whose embeddings drift part of the way along the gap axis, the way
machine-generated caption pools sit between the modality regions.  A raw
audio-side query is intercepted by these drifted near-duplicates, while a
query first projected onto the clean text support is not; this reproduces,
at desk scale, the direction of the projection ablation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import MissingGroundTruthError
from .pipeline import DomainProfile, caption_batch
from .projection import ProjectionConfig
from .store import CaptionStore
from .validation import as_matrix

__all__ = [
    "GapSpec",
    "GapStats",
    "RecallReport",
    "synth_paired_corpus",
    "synth_weak_datastore",
    "modality_gap_stats",
    "recall_at_k",
    "roundtrip_reconstruction",
]


@dataclass(frozen=True)
class GapSpec:
    """Parameters of one synthetic paired corpus."""

    dim: int = 64
    n_pairs: int = 500
    offset_norm: float = 0.5
    noise_sigma: float = 0.05
    seed: int = 0
    n_clusters: int = 20
    cluster_spread: float = 0.08
    label: str = "synthetic"

    def __post_init__(self):
        if self.dim < 2:
            raise ValueError("dim must be >= 2")
        if self.n_pairs < 1:
            raise ValueError("n_pairs must be >= 1")
        if self.offset_norm < 0 or self.noise_sigma < 0:
            raise ValueError("offset_norm and noise_sigma must be >= 0")
        if self.n_clusters < 1 or self.cluster_spread <= 0:
            raise ValueError("need n_clusters >= 1 and cluster_spread > 0")


@dataclass(frozen=True)
class GapStats:
    mean_paired_cosine: float
    mean_nn_rank: float
    n_pairs: int


@dataclass(frozen=True)
class RecallReport:
    k: int
    hits: int
    total: int
    recall: float


def _unit_rows(m: np.ndarray) -> np.ndarray:
    return m / np.linalg.norm(m, axis=1, keepdims=True)


def _synth_base(spec: GapSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gap axis, unit text embeddings (float64), cluster assignment."""
    rng = np.random.default_rng(spec.seed)
    u = rng.normal(size=spec.dim)
    u /= np.linalg.norm(u)
    centers = rng.normal(size=(spec.n_clusters, spec.dim))
    centers -= np.outer(centers @ u, u)
    centers = _unit_rows(centers)
    assign = rng.integers(0, spec.n_clusters, size=spec.n_pairs)
    jitter = rng.normal(size=(spec.n_pairs, spec.dim))
    jitter -= np.outer(jitter @ u, u)
    text64 = _unit_rows(centers[assign] + spec.cluster_spread * jitter)
    return u, text64, assign


def _text_store(spec: GapSpec, text64: np.ndarray, assign: np.ndarray) -> CaptionStore:
    ids = [f"{spec.label}-{i:04d}" for i in range(spec.n_pairs)]
    texts = [
        f"{spec.label} sound {i:04d} from cluster {int(assign[i]):02d}"
        for i in range(spec.n_pairs)
    ]
    return CaptionStore(
        ids,
        texts,
        [spec.label] * spec.n_pairs,
        text64.astype(np.float32),
        label=spec.label,
    )


def synth_paired_corpus(spec: GapSpec) -> tuple[CaptionStore, np.ndarray]:
    """Deterministically generate (text store, paired audio embeddings).

    Pair ``i`` of the returned float32 matrix corresponds to store entry
    ``i``.  The degenerate spec (offset and noise both zero) returns the
    text embeddings unchanged, bit for bit.
    """
    u, text64, assign = _synth_base(spec)
    store = _text_store(spec, text64, assign)
    if spec.offset_norm == 0 and spec.noise_sigma == 0:
        return store, store.matrix.copy()
    rng = np.random.default_rng([spec.seed, 0xA0D10])
    noise = spec.noise_sigma * rng.normal(size=(spec.n_pairs, spec.dim))
    audio64 = _unit_rows(text64 + spec.offset_norm * u + noise)
    return store, audio64.astype(np.float32)


def synth_weak_datastore(
    spec: GapSpec,
    per_item: int = 2,
    drift: float = 0.15,
    scatter: float = 0.25,
) -> CaptionStore:
    """Weakly-annotated companion captions for the corpus of ``spec``.

    For every corpus caption, ``per_item`` paraphrases are emitted whose
    embeddings are the caption embedding plus isotropic scatter of total
    norm ``scatter`` and a drift of ``drift * offset_norm`` along the
    corpus's gap axis.  Entries carry source tag ``"weak"`` and ids/texts
    derived from (but distinct from) the originals, so merging them into a
    datastore needs no dedup.
    """
    if per_item < 1:
        raise ValueError("per_item must be >= 1")
    u, text64, assign = _synth_base(spec)
    rng = np.random.default_rng([spec.seed, 0x3EAC])
    reps = np.repeat(text64, per_item, axis=0)
    psi = rng.normal(size=reps.shape) * (scatter / np.sqrt(spec.dim))
    weak64 = _unit_rows(reps + psi + drift * spec.offset_norm * u)
    ids, texts = [], []
    for i in range(spec.n_pairs):
        for m in range(per_item):
            ids.append(f"{spec.label}-weak-{i:04d}-{m}")
            texts.append(
                f"{spec.label} weak annotation {m} of sound {i:04d} "
                f"from cluster {int(assign[i]):02d}"
            )
    return CaptionStore(
        ids,
        texts,
        ["weak"] * len(ids),
        weak64.astype(np.float32),
        label=f"{spec.label}-weak",
    )


def modality_gap_stats(texts, audio) -> GapStats:
    """Paired-cosine mean and mean cross-modal nearest-neighbour rank.

    ``texts`` is a CaptionStore or an (n, dim) array; ``audio`` is the
    paired (n, dim) array, row i paired with text row i.  The rank of a
    pair is 1 plus the number of texts strictly more similar to the audio
    embedding than its own text (rank 1 = nearest).
    """
    t = texts.matrix64 if isinstance(texts, CaptionStore) else as_matrix(texts, "texts")
    a = as_matrix(audio, "audio")
    if t.shape != a.shape:
        raise ValueError(f"texts shape {t.shape} != audio shape {a.shape}")
    tn = _unit_rows(t)
    an = _unit_rows(a)
    paired = np.einsum("ij,ij->i", an, tn)
    exact = np.all(
        np.asarray(a, dtype=np.float32) == np.asarray(t, dtype=np.float32), axis=1
    )
    paired[exact] = 1.0
    sims = an @ tn.T
    own = sims[np.arange(len(an)), np.arange(len(an))]
    ranks = 1 + (sims > own[:, None]).sum(axis=1)
    return GapStats(
        mean_paired_cosine=float(paired.mean()),
        mean_nn_rank=float(ranks.mean()),
        n_pairs=len(an),
    )


def recall_at_k(
    predictions: Mapping[str, Sequence[str]],
    ground_truth: Mapping[str, str],
    k: int,
) -> RecallReport:
    """Fraction of items whose true id appears among their first k
    predicted candidate ids."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if not predictions:
        raise ValueError("no predictions to score")
    hits = 0
    for item_id, candidates in predictions.items():
        if item_id not in ground_truth:
            raise MissingGroundTruthError(item_id)
        if ground_truth[item_id] in list(candidates)[:k]:
            hits += 1
    total = len(predictions)
    return RecallReport(k=k, hits=hits, total=total, recall=hits / total)


def roundtrip_reconstruction(
    corpus: CaptionStore,
    temperatures: Sequence[float],
    backend=None,
) -> list[tuple[float, float]]:
    """Install the corpus as both support and datastore, query every
    caption's own text embedding, and report the exact-match reconstruction
    rate per temperature."""
    profile = DomainProfile(support=corpus, datastore=corpus, label=corpus.label)
    items = [(entry.id, entry.embedding) for entry in corpus]
    table: list[tuple[float, float]] = []
    for tau in temperatures:
        results = caption_batch(
            items,
            profile,
            backend=backend,
            projection=ProjectionConfig(temperature=float(tau)),
        )
        matches = sum(
            1
            for result, entry in zip(results, corpus)
            if result.error is None and result.caption == entry.text
        )
        table.append((float(tau), matches / len(corpus)))
    return table
