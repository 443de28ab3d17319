"""Retrieval-augmented caption decoding over precomputed contrastive
audio/text embeddings.

The engine projects query embeddings onto a text-embedding support,
retrieves semantically similar captions from a datastore, and assembles
prompts for a pluggable generation backend.  Both stores can be swapped at
inference time for training-free domain adaptation.
"""

from .backend import (
    BackendConfig,
    GenerationRequest,
    HttpTextBackend,
    MockCaptionDecoder,
    ReplayBackend,
    load_transcript,
    mock_generate,
    render_prompt,
)
from .errors import (
    BackendError,
    BackendUnavailableError,
    CaptionEngineError,
    CorruptHeaderError,
    CountMismatchError,
    DegenerateSumError,
    DimMismatchError,
    DuplicateIdError,
    EmptyStoreError,
    MalformedResponseError,
    MissingGroundTruthError,
    NonFiniteError,
    NonPositiveTemperatureError,
    NoSourceError,
    StoreFormatError,
    ZeroVectorError,
)
from .evaluation import (
    GapSpec,
    GapStats,
    RecallReport,
    modality_gap_stats,
    recall_at_k,
    roundtrip_reconstruction,
    synth_paired_corpus,
    synth_weak_datastore,
)
from .pipeline import (
    DEFAULT_FIXED_PROMPT,
    AdaptMode,
    CaptionResult,
    DomainProfile,
    PromptPayload,
    TrainingExample,
    ZeroShotCaptioner,
    adapt_domain,
    caption_batch,
    caption_one,
    caption_result_json,
    make_training_examples,
    training_example_json,
)
from .projection import (
    ProjectionConfig,
    SupportProjector,
    combine_with_weights,
    project,
    softmax_weights,
    weight_entropy,
)
from .retrieval import (
    CaptionRetriever,
    RetrievalConfig,
    RetrievalHit,
    RetrievalMode,
    retrieve_in_range,
    retrieve_topk,
    scan_scores,
    scan_similarities,
)
from .store import (
    CaptionEntry,
    CaptionStore,
    build_store,
    filter_by_source,
    load_store,
    merge_stores,
    save_store,
)
from .vectors import (
    LinearMapper,
    apply_mapper,
    cosine_similarity,
    load_mapper,
    normalize,
    save_mapper,
)

__version__ = "0.1.0"

__all__ = [
    "AdaptMode",
    "BackendConfig",
    "BackendError",
    "BackendUnavailableError",
    "CaptionEngineError",
    "CaptionEntry",
    "CaptionResult",
    "CaptionRetriever",
    "CaptionStore",
    "CorruptHeaderError",
    "CountMismatchError",
    "DEFAULT_FIXED_PROMPT",
    "DegenerateSumError",
    "DimMismatchError",
    "DomainProfile",
    "DuplicateIdError",
    "EmptyStoreError",
    "GapSpec",
    "GapStats",
    "GenerationRequest",
    "HttpTextBackend",
    "LinearMapper",
    "MalformedResponseError",
    "MissingGroundTruthError",
    "MockCaptionDecoder",
    "NonFiniteError",
    "NonPositiveTemperatureError",
    "NoSourceError",
    "ProjectionConfig",
    "PromptPayload",
    "RecallReport",
    "ReplayBackend",
    "RetrievalConfig",
    "RetrievalHit",
    "RetrievalMode",
    "StoreFormatError",
    "SupportProjector",
    "TrainingExample",
    "ZeroShotCaptioner",
    "ZeroVectorError",
    "adapt_domain",
    "apply_mapper",
    "build_store",
    "caption_batch",
    "caption_one",
    "caption_result_json",
    "combine_with_weights",
    "cosine_similarity",
    "filter_by_source",
    "load_mapper",
    "load_store",
    "load_transcript",
    "make_training_examples",
    "merge_stores",
    "mock_generate",
    "modality_gap_stats",
    "normalize",
    "project",
    "recall_at_k",
    "render_prompt",
    "retrieve_in_range",
    "retrieve_topk",
    "roundtrip_reconstruction",
    "save_mapper",
    "save_store",
    "scan_scores",
    "scan_similarities",
    "softmax_weights",
    "synth_paired_corpus",
    "synth_weak_datastore",
    "training_example_json",
    "weight_entropy",
]
