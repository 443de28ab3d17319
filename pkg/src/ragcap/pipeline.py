"""End-to-end flows: training-example assembly from a caption corpus,
zero-shot caption inference from audio-side embeddings, and training-free
domain adaptation by swapping or augmenting the installed stores.

Training side: each corpus caption is mapped into the generator space, its
similarity-window neighbours are retrieved from the datastore, and the
tuple is emitted for an external trainer.  Inference side: the query is
projected onto the support, the globally most-similar captions are
retrieved (the similarity window is off in this mode), and a prompt payload
is handed to the configured backend.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Iterator, Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .backend import (
    GenerationRequest,
    MockCaptionDecoder,
    render_prompt,
)
from .errors import CaptionEngineError, DimMismatchError
from .projection import (
    ProjectionConfig,
    combine_with_weights,
    softmax_weights,
    weight_entropy,
)
from .retrieval import (
    RetrievalConfig,
    RetrievalHit,
    RetrievalMode,
    retrieve_in_range,
    retrieve_topk,
)
from .store import CaptionStore, merge_stores
from .validation import as_vector
from .vectors import LinearMapper, normalize

__all__ = [
    "DEFAULT_FIXED_PROMPT",
    "DEFAULT_MAX_TOKENS",
    "PromptPayload",
    "TrainingExample",
    "DomainProfile",
    "CaptionResult",
    "AdaptMode",
    "make_training_examples",
    "caption_one",
    "caption_batch",
    "adapt_domain",
    "training_example_json",
    "caption_result_json",
    "ZeroShotCaptioner",
]

logger = logging.getLogger(__name__)

DEFAULT_FIXED_PROMPT = "Describe the audio you hear"
DEFAULT_MAX_TOKENS = 64


@dataclass(frozen=True)
class PromptPayload:
    """Conditioning tuple handed to the generator.  Serialized field order
    is always (embedding, captions, prompt)."""

    mapped_embedding: np.ndarray
    similar_captions: tuple[str, ...]
    fixed_prompt: str

    def __post_init__(self):
        if not self.fixed_prompt:
            raise ValueError("fixed_prompt must be non-empty")
        object.__setattr__(self, "similar_captions", tuple(self.similar_captions))

    def to_dict(self) -> dict:
        return {
            "embedding": [float(x) for x in np.asarray(self.mapped_embedding)],
            "captions": list(self.similar_captions),
            "prompt": self.fixed_prompt,
        }


@dataclass(frozen=True)
class TrainingExample:
    payload: PromptPayload
    target: str
    retrieval_similarities: tuple[float, ...]

    def __post_init__(self):
        if not self.target:
            raise ValueError("target caption must be non-empty")
        object.__setattr__(
            self, "retrieval_similarities", tuple(self.retrieval_similarities)
        )


@dataclass(frozen=True)
class DomainProfile:
    """The swappable pair of stores that defines a captioning domain."""

    support: CaptionStore
    datastore: CaptionStore
    label: str = ""

    def __post_init__(self):
        if self.support.dim != self.datastore.dim:
            raise DimMismatchError(
                f"support dim {self.support.dim} != datastore dim "
                f"{self.datastore.dim}"
            )

    @property
    def dim(self) -> int:
        return self.support.dim


@dataclass(frozen=True)
class CaptionResult:
    item_id: str
    caption: str
    retrieved: tuple[RetrievalHit, ...] = ()
    projection_weights_entropy: float = 0.0
    error: str | None = None


class AdaptMode(str, Enum):
    REPLACE = "replace"
    AUGMENT = "augment"


def training_example_json(example: TrainingExample) -> str:
    record = example.payload.to_dict()
    record["target"] = example.target
    record["similarities"] = list(example.retrieval_similarities)
    return json.dumps(record, ensure_ascii=False)


def caption_result_json(result: CaptionResult) -> str:
    record = {
        "item_id": result.item_id,
        "caption": result.caption,
        "retrieved": [
            {"id": h.entry.id, "similarity": h.similarity} for h in result.retrieved
        ],
        "entropy": result.projection_weights_entropy,
    }
    if result.error is not None:
        record["error"] = result.error
    return json.dumps(record, ensure_ascii=False)


def _payload_hits(hits, similar_order: str):
    if similar_order not in ("descending", "ascending"):
        raise ValueError(
            f"similar_order must be 'descending' or 'ascending', got {similar_order!r}"
        )
    return list(reversed(hits)) if similar_order == "ascending" else list(hits)


def make_training_examples(
    corpus: CaptionStore,
    datastore: CaptionStore,
    mapper: LinearMapper | None = None,
    config: RetrievalConfig | None = None,
    fixed_prompt: str = DEFAULT_FIXED_PROMPT,
    similar_order: str = "descending",
) -> Iterator[TrainingExample]:
    """Yield one training example per corpus caption.

    The caption's own text embedding is the retrieval query, so an exact
    duplicate of the target in the datastore scores 1.0 and falls outside
    any window with s_max < 1.  Items that fail are logged and skipped; the
    stream continues.
    """
    cfg = config or RetrievalConfig(mode=RetrievalMode.TRAINING)
    if cfg.mode is not RetrievalMode.TRAINING:
        raise ValueError("make_training_examples requires a training-mode config")
    mapper = mapper or LinearMapper.identity(corpus.dim)
    if mapper.in_dim != corpus.dim:
        raise DimMismatchError(
            f"mapper expects dim {mapper.in_dim}, corpus dim {corpus.dim}"
        )
    if datastore.dim != corpus.dim:
        raise DimMismatchError(
            f"datastore dim {datastore.dim} != corpus dim {corpus.dim}"
        )
    for entry in corpus:
        try:
            hits = _payload_hits(
                retrieve_in_range(entry.embedding, datastore, cfg, salt=entry.id),
                similar_order,
            )
            payload = PromptPayload(
                mapped_embedding=mapper.apply(entry.embedding),
                similar_captions=tuple(h.entry.text for h in hits),
                fixed_prompt=fixed_prompt,
            )
            yield TrainingExample(
                payload=payload,
                target=entry.text,
                retrieval_similarities=tuple(h.similarity for h in hits),
            )
        except CaptionEngineError as exc:
            logger.warning("skipping corpus item %r: %s", entry.id, exc)


def _invoke_backend(backend, payload, projected, profile, item_id) -> str:
    if hasattr(backend, "decode"):
        return backend.decode(payload, projected, profile.datastore, item_id=item_id)
    request = GenerationRequest(
        prompt_text=render_prompt(payload),
        request_id=item_id,
        max_tokens=DEFAULT_MAX_TOKENS,
        soft_prefix=payload.mapped_embedding,
    )
    return backend.generate(request)


def caption_one(
    item_id: str,
    audio_embedding,
    profile: DomainProfile,
    backend=None,
    mapper: LinearMapper | None = None,
    projection: ProjectionConfig | None = None,
    retrieval: RetrievalConfig | None = None,
    fixed_prompt: str = DEFAULT_FIXED_PROMPT,
    use_projection: bool = True,
    retrieval_query: str = "audio",
    similar_order: str = "descending",
) -> CaptionResult:
    """Caption one audio-side embedding.

    The query is projected onto the support (unless ``use_projection`` is
    off, the ablation path, in which case the normalized query is fed
    onward unchanged), the top-k captions are retrieved from the datastore
    with the similarity window off, and the backend is invoked once.
    ``retrieval_query`` selects whether retrieval sees the raw audio-side
    embedding (default) or the projected one; ``similar_order`` controls
    the caption order inside the prompt payload (the retrieval trace on
    the result always stays descending).
    """
    proj_cfg = projection or ProjectionConfig()
    retr_cfg = retrieval or RetrievalConfig(mode=RetrievalMode.INFERENCE)
    if retr_cfg.mode is not RetrievalMode.INFERENCE:
        raise ValueError("caption_one requires an inference-mode config")
    if retrieval_query not in ("audio", "projected"):
        raise ValueError(f"retrieval_query must be 'audio' or 'projected', got {retrieval_query!r}")
    backend = backend if backend is not None else MockCaptionDecoder()
    mapper = mapper or LinearMapper.identity(profile.dim)
    if mapper.in_dim != profile.dim:
        raise DimMismatchError(
            f"mapper expects dim {mapper.in_dim}, profile dim {profile.dim}"
        )
    query = as_vector(audio_embedding, "audio embedding")
    if query.shape[0] != profile.dim:
        raise DimMismatchError(
            f"audio embedding has dim {query.shape[0]}, profile dim {profile.dim}"
        )
    if use_projection:
        weights = softmax_weights(query, profile.support, proj_cfg.temperature)
        projected = combine_with_weights(
            weights, profile.support, renormalize=proj_cfg.renormalize_output
        )
        entropy = weight_entropy(weights)
    else:
        projected = normalize(query)
        entropy = 0.0
    retrieval_vec = projected if retrieval_query == "projected" else normalize(query)
    hits: list[RetrievalHit] = []
    if len(profile.datastore):
        hits = retrieve_topk(retrieval_vec, profile.datastore, retr_cfg.k)
    payload = PromptPayload(
        mapped_embedding=mapper.apply(projected),
        similar_captions=tuple(
            h.entry.text for h in _payload_hits(hits, similar_order)
        ),
        fixed_prompt=fixed_prompt,
    )
    caption = _invoke_backend(backend, payload, projected, profile, item_id)
    return CaptionResult(
        item_id=item_id,
        caption=caption,
        retrieved=tuple(hits),
        projection_weights_entropy=entropy,
    )


def caption_batch(
    items: Iterable[tuple[str, object]],
    profile: DomainProfile,
    backend=None,
    mapper: LinearMapper | None = None,
    projection: ProjectionConfig | None = None,
    retrieval: RetrievalConfig | None = None,
    fixed_prompt: str = DEFAULT_FIXED_PROMPT,
    use_projection: bool = True,
    retrieval_query: str = "audio",
    similar_order: str = "descending",
    parallelism: int = 1,
) -> list[CaptionResult]:
    """Caption a batch of (id, embedding) items.

    Output order matches input order regardless of ``parallelism``; a
    failing item yields a result with an ``error`` field and never aborts
    the batch.
    """

    def one(item) -> CaptionResult:
        item_id, embedding = item
        try:
            return caption_one(
                item_id,
                embedding,
                profile,
                backend=backend,
                mapper=mapper,
                projection=projection,
                retrieval=retrieval,
                fixed_prompt=fixed_prompt,
                use_projection=use_projection,
                retrieval_query=retrieval_query,
                similar_order=similar_order,
            )
        except CaptionEngineError as exc:
            logger.warning("item %r failed: %s", item_id, exc)
            return CaptionResult(item_id=str(item_id), caption="", error=str(exc))

    items = list(items)
    if parallelism > 1:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            return list(pool.map(one, items))
    return [one(item) for item in items]


def adapt_domain(
    current: DomainProfile,
    new_support: CaptionStore,
    new_datastore: CaptionStore,
    mode: AdaptMode | str = AdaptMode.REPLACE,
    label: str | None = None,
) -> DomainProfile:
    """Swap (replace) or merge-in (augment, deduplicating on text) the
    stores of a profile.  No model state is touched; adaptation is purely a
    data operation."""
    mode = AdaptMode(mode)
    if new_support.dim != current.dim or new_datastore.dim != current.dim:
        raise DimMismatchError("new stores must match the profile dim")
    if mode is AdaptMode.REPLACE:
        return DomainProfile(
            support=new_support,
            datastore=new_datastore,
            label=label if label is not None else new_support.label,
        )
    return DomainProfile(
        support=merge_stores(current.support, new_support, dedup_on_text=True),
        datastore=merge_stores(current.datastore, new_datastore, dedup_on_text=True),
        label=label if label is not None else current.label,
    )


class ZeroShotCaptioner(BaseEstimator):
    """Estimator facade over the captioning pipeline.

    ``fit`` installs a domain profile (or a support/datastore pair);
    ``predict`` maps an (m, dim) array of audio-side embeddings to a list of
    captions; ``adapt`` refits the profile without touching anything else.
    """

    def __init__(
        self,
        backend=None,
        mapper: LinearMapper | None = None,
        temperature: float = 0.01,
        renormalize_output: bool = True,
        k: int = 3,
        fixed_prompt: str = DEFAULT_FIXED_PROMPT,
        use_projection: bool = True,
        retrieval_query: str = "audio",
        similar_order: str = "descending",
        parallelism: int = 1,
    ):
        self.backend = backend
        self.mapper = mapper
        self.temperature = temperature
        self.renormalize_output = renormalize_output
        self.k = k
        self.fixed_prompt = fixed_prompt
        self.use_projection = use_projection
        self.retrieval_query = retrieval_query
        self.similar_order = similar_order
        self.parallelism = parallelism

    def fit(self, support, datastore: CaptionStore | None = None, label: str = ""):
        if isinstance(support, DomainProfile):
            self.profile_ = support
        else:
            self.profile_ = DomainProfile(
                support=support,
                datastore=datastore if datastore is not None else support,
                label=label or support.label,
            )
        return self

    def _check_fitted(self) -> DomainProfile:
        profile = getattr(self, "profile_", None)
        if profile is None:
            raise NotFittedError("ZeroShotCaptioner must be fitted with a profile")
        return profile

    def adapt(self, new_support, new_datastore, mode="replace", label=None):
        self.profile_ = adapt_domain(
            self._check_fitted(), new_support, new_datastore, mode=mode, label=label
        )
        return self

    def caption(self, X, ids: Sequence[str] | None = None) -> list[CaptionResult]:
        profile = self._check_fitted()
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if ids is None:
            ids = [str(i) for i in range(X.shape[0])]
        if len(ids) != X.shape[0]:
            raise ValueError(f"{len(ids)} ids for {X.shape[0]} rows")
        return caption_batch(
            zip(ids, X),
            profile,
            backend=self.backend,
            mapper=self.mapper,
            projection=ProjectionConfig(
                temperature=self.temperature,
                renormalize_output=self.renormalize_output,
            ),
            retrieval=RetrievalConfig(k=self.k, mode=RetrievalMode.INFERENCE),
            fixed_prompt=self.fixed_prompt,
            use_projection=self.use_projection,
            retrieval_query=self.retrieval_query,
            similar_order=self.similar_order,
            parallelism=self.parallelism,
        )

    def predict(self, X) -> list[str]:
        results = self.caption(X)
        failed = [r.item_id for r in results if r.error is not None]
        if failed:
            raise CaptionEngineError(f"items failed: {failed}")
        return [r.caption for r in results]
