"""Generation backends: a wire-protocol HTTP client, a transcript
recorder/replayer, and a deterministic mock decoder for closed-loop tests.

Wire protocol (one POST per request)::

    POST <endpoint> HTTP/1.1
    Content-Type: application/json
    Authorization: Bearer <token>          # only when the auth env var is set

    {"request_id": "item-0007", "prompt": "1. a dog barks\\nDescribe the audio you hear", "max_tokens": 64}

    HTTP/1.1 200 OK
    Content-Type: application/json

    {"text": "a dog barking in the distance"}

The bearer token is read from the environment variable named in
:class:`BackendConfig.auth_env` and is never logged or recorded.  Transient
transport failures (connection errors, timeouts, 5xx) are retried with
exponential backoff under the same request_id; any other response raises
immediately.

A transcript is a JSONL file of ``{"request_id", "prompt", "max_tokens",
"text"}`` records; :class:`ReplayBackend` serves captions from it with zero
network activity.
"""

from __future__ import annotations

import json
import logging
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, runtime_checkable

import numpy as np
import requests

from .errors import (
    BackendUnavailableError,
    MalformedResponseError,
    NoSourceError,
)
from .retrieval import retrieve_topk
from .store import CaptionStore

__all__ = [
    "GenerationRequest",
    "BackendConfig",
    "GenerationBackend",
    "HttpTextBackend",
    "ReplayBackend",
    "MockCaptionDecoder",
    "mock_generate",
    "render_prompt",
    "load_transcript",
]

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class GenerationRequest:
    """Transportable request.  ``soft_prefix`` (the mapped embedding) is kept
    client-side for backends that accept soft-prompt inputs; the JSON wire
    format carries only the textual fields."""

    prompt_text: str
    request_id: str
    max_tokens: int = 64
    soft_prefix: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        if not self.prompt_text:
            raise ValueError("prompt_text must be non-empty")
        if self.max_tokens < 1:
            raise ValueError(f"max_tokens must be >= 1, got {self.max_tokens}")


@dataclass(frozen=True)
class BackendConfig:
    endpoint: str
    timeout_ms: int = 10_000
    max_retries: int = 3
    max_in_flight: int = 4
    auth_env: str = "RAGCAP_BACKEND_TOKEN"
    backoff_base_s: float = 0.25

    def __post_init__(self):
        if self.timeout_ms <= 0:
            raise ValueError("timeout_ms must be positive")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if self.max_in_flight < 1:
            raise ValueError("max_in_flight must be >= 1")


@runtime_checkable
class GenerationBackend(Protocol):
    def generate(self, request: GenerationRequest) -> str: ...


def render_prompt(payload) -> str:
    """Serialize a prompt payload for text-only backends: the similar
    captions, numbered from 1 in payload order, then the fixed prompt on its
    own line."""
    lines = [f"{i}. {text}" for i, text in enumerate(payload.similar_captions, 1)]
    lines.append(payload.fixed_prompt)
    return "\n".join(lines)


class HttpTextBackend:
    """Client for the JSON wire protocol documented in the module docstring."""

    def __init__(self, config: BackendConfig, transcript_path=None):
        self.config = config
        self.transcript_path = Path(transcript_path) if transcript_path else None
        self._admission = threading.BoundedSemaphore(config.max_in_flight)
        self._transcript_lock = threading.Lock()

    def _headers(self) -> dict[str, str]:
        import os

        headers = {"Content-Type": "application/json"}
        token = os.environ.get(self.config.auth_env)
        if token:
            headers["Authorization"] = f"Bearer {token}"
        return headers

    def generate(self, request: GenerationRequest) -> str:
        cfg = self.config
        body = {
            "request_id": request.request_id,
            "prompt": request.prompt_text,
            "max_tokens": request.max_tokens,
        }
        attempts = cfg.max_retries + 1
        last_error = "no attempt made"
        for attempt in range(attempts):
            if attempt:
                time.sleep(cfg.backoff_base_s * (2 ** (attempt - 1)))
            try:
                with self._admission:
                    response = requests.post(
                        cfg.endpoint,
                        json=body,
                        headers=self._headers(),
                        timeout=cfg.timeout_ms / 1000.0,
                    )
            except (requests.ConnectionError, requests.Timeout) as exc:
                last_error = f"transport failure: {exc.__class__.__name__}"
                logger.warning(
                    "request %s attempt %d/%d failed (%s)",
                    request.request_id, attempt + 1, attempts, last_error,
                )
                continue
            if response.status_code >= 500:
                last_error = f"server error {response.status_code}"
                logger.warning(
                    "request %s attempt %d/%d failed (%s)",
                    request.request_id, attempt + 1, attempts, last_error,
                )
                continue
            if response.status_code != 200:
                raise MalformedResponseError(
                    f"request {request.request_id}: unexpected status "
                    f"{response.status_code}"
                )
            try:
                parsed = response.json()
            except ValueError:
                raise MalformedResponseError(
                    f"request {request.request_id}: response body is not JSON"
                ) from None
            text = parsed.get("text") if isinstance(parsed, dict) else None
            if not isinstance(text, str):
                raise MalformedResponseError(
                    f"request {request.request_id}: response lacks a 'text' string"
                )
            self._record(request, text)
            return text
        raise BackendUnavailableError(
            f"request {request.request_id}: gave up after {attempts} attempts "
            f"({last_error})"
        )

    def _record(self, request: GenerationRequest, text: str) -> None:
        if self.transcript_path is None:
            return
        record = {
            "request_id": request.request_id,
            "prompt": request.prompt_text,
            "max_tokens": request.max_tokens,
            "text": text,
        }
        line = json.dumps(record, ensure_ascii=False)
        with self._transcript_lock:
            with open(self.transcript_path, "a", encoding="utf-8") as fh:
                fh.write(line + "\n")


def load_transcript(path) -> dict[str, dict]:
    """Index a transcript file by request_id (last record wins)."""
    records: dict[str, dict] = {}
    raw = Path(path).read_text(encoding="utf-8")
    for line in filter(None, raw.split("\n")):
        record = json.loads(line)
        records[record["request_id"]] = record
    return records


class ReplayBackend:
    """Serve captions from a recorded transcript; no network involved."""

    def __init__(self, transcript_path):
        self._records = load_transcript(transcript_path)

    def generate(self, request: GenerationRequest) -> str:
        record = self._records.get(request.request_id)
        if record is None:
            raise BackendUnavailableError(
                f"request {request.request_id}: not present in the transcript"
            )
        return record["text"]


class MockCaptionDecoder:
    """Deterministic stand-in for the language model: returns the text of
    the datastore entry nearest to the projected embedding (ties broken by
    ascending id), falling back to the first similar caption when the
    datastore is empty.

    ``reference`` pins the decoder to a fixed caption pool regardless of the
    pipeline's datastore, which keeps it able to answer from projection when
    retrieval is ablated away.  ``fail_ids`` makes the decoder raise for the
    listed item ids, for fault-injection tests.
    """

    def __init__(self, reference: CaptionStore | None = None, fail_ids=()):
        self.reference = reference
        self.fail_ids = frozenset(fail_ids)

    def decode(self, payload, projected, datastore, item_id: str = "") -> str:
        if item_id in self.fail_ids:
            raise BackendUnavailableError(f"mock backend configured to fail {item_id!r}")
        pool = self.reference if self.reference is not None else datastore
        if pool is not None and len(pool):
            return retrieve_topk(projected, pool, 1)[0].entry.text
        if payload.similar_captions:
            return payload.similar_captions[0]
        raise NoSourceError("mock decoder has no datastore and no similar captions")


def mock_generate(payload, datastore, projected) -> str:
    """Functional form of the mock decoder (1-NN over the datastore)."""
    return MockCaptionDecoder().decode(payload, projected, datastore)
