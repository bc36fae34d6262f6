"""HTTP clients for the three model endpoints, with boundary validation.

The gateway owns response validation: no probability vector that fails the
simplex check, no grade that disagrees with its own argmax, and no empty
generation ever escapes into the pipeline.  Retries apply to transport
failures only; validation failures are never retried.
"""

from __future__ import annotations

import base64
import hashlib
import json
import time
import urllib.error
import urllib.request
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .prompt import PromptBundle
from .retrieval import DiagnosticPrediction

CLASSIFY_PROB_SUM_TOL = 1e-3


class GatewayError(Exception):
    """Base class for endpoint failures."""


class TransportError(GatewayError):
    """Connection-level failure; the only retryable category."""


class ResponseError(GatewayError):
    """Non-2xx status; the response body is preserved for diagnosis."""

    def __init__(self, status: int, body: str, url: str):
        super().__init__(f"{url} returned {status}: {body[:200]}")
        self.status = status
        self.body = body


class MalformedResponseError(GatewayError):
    """A 2xx response that violates the endpoint schema or its invariants."""


@dataclass(frozen=True)
class EndpointConfig:
    base_url: str
    timeout_ms: int = 10_000
    retries: int = 0
    auth_token: str | None = None

    def __post_init__(self):
        if self.timeout_ms <= 0:
            raise ValueError("timeout_ms must be positive")
        if self.retries < 0:
            raise ValueError("retries must be >= 0")


@dataclass(frozen=True)
class Provenance:
    k_used: int
    fallback: bool
    template_version: str


@dataclass(frozen=True)
class GeneratedReport:
    text: str
    prompt_fingerprint: str
    generator_id: str
    provenance: Provenance

    def __post_init__(self):
        if not self.text:
            raise ValueError("report text must be non-empty")


def prompt_fingerprint(rendered_prompt: str) -> str:
    return hashlib.sha256(rendered_prompt.encode("utf-8")).hexdigest()


def _post_json(cfg: EndpointConfig, path: str, payload: dict) -> dict:
    url = cfg.base_url.rstrip("/") + path
    body = json.dumps(payload).encode("utf-8")
    headers = {"Content-Type": "application/json"}
    if cfg.auth_token:
        headers["Authorization"] = f"Bearer {cfg.auth_token}"

    last_exc: Exception | None = None
    for attempt in range(cfg.retries + 1):
        request = urllib.request.Request(url, data=body, headers=headers, method="POST")
        try:
            with urllib.request.urlopen(request, timeout=cfg.timeout_ms / 1000.0) as resp:
                raw = resp.read()
            break
        except urllib.error.HTTPError as exc:
            # A status line arrived: not a transport failure, never retried.
            raise ResponseError(exc.code, exc.read().decode("utf-8", "replace"), url) from exc
        except (urllib.error.URLError, ConnectionError, TimeoutError, OSError) as exc:
            last_exc = exc
            if attempt < cfg.retries:
                time.sleep(0.05 * (attempt + 1))
    else:
        raise TransportError(f"{url}: {last_exc}") from last_exc

    try:
        decoded = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedResponseError(f"{url}: response is not JSON: {exc}") from exc
    if not isinstance(decoded, dict):
        raise MalformedResponseError(f"{url}: response is not a JSON object")
    return decoded


def encode_image_b64(image_ref: str) -> str:
    """Read local image bytes for the base64 transport profile."""
    return base64.b64encode(Path(image_ref).read_bytes()).decode("ascii")


def validate_classification(payload: dict, source: str) -> DiagnosticPrediction:
    """Enforce the classifier response schema and prediction invariants.

    The probability vector must sum to 1 within 1e-3 and agree with the
    declared grade's argmax (ties toward the lowest index); it is then
    renormalized exactly so the returned prediction satisfies the tighter
    in-memory invariant.
    """
    try:
        grade = payload["dr_grade"]
        probs = payload["dr_probs"]
        grade_conf = payload["dr_confidence"]
        me_present = payload["me_present"]
        me_conf = payload["me_confidence"]
    except (KeyError, TypeError) as exc:
        raise MalformedResponseError(f"{source}: missing field {exc}") from exc

    if isinstance(grade, bool) or not isinstance(grade, int) or grade not in range(5):
        raise MalformedResponseError(f"{source}: dr_grade {grade!r} outside 0..4")
    if not isinstance(me_present, bool):
        raise MalformedResponseError(f"{source}: me_present must be boolean")
    if not isinstance(probs, (list, tuple)) or len(probs) != 5:
        raise MalformedResponseError(f"{source}: dr_probs must have 5 entries")
    values = [float(p) for p in probs]
    if any(not np.isfinite(p) or p < 0.0 for p in values):
        raise MalformedResponseError(f"{source}: dr_probs entries must be finite and >= 0")
    total = sum(values)
    if abs(total - 1.0) > CLASSIFY_PROB_SUM_TOL:
        raise MalformedResponseError(
            f"{source}: dr_probs sum {total!r} not 1 within {CLASSIFY_PROB_SUM_TOL}"
        )
    argmax = max(range(5), key=lambda i: (values[i], -i))
    if argmax != grade:
        raise MalformedResponseError(
            f"{source}: dr_grade {grade} disagrees with argmax(dr_probs) = {argmax}"
        )
    for name, value in (("dr_confidence", grade_conf), ("me_confidence", me_conf)):
        value = float(value)
        if not 0.0 <= value <= 1.0:
            raise MalformedResponseError(f"{source}: {name} {value!r} outside [0, 1]")

    normalized = tuple(p / total for p in values)
    return DiagnosticPrediction(
        grade=grade,
        me_present=me_present,
        grade_confidence=float(grade_conf),
        me_confidence=float(me_conf),
        grade_probs=normalized,
    )


class HttpEmbedder:
    """Client for POST /v1/embed."""

    def __init__(self, config: EndpointConfig):
        self.config = config

    def embed(self, texts: list[str]) -> list[np.ndarray]:
        if not texts:
            raise ValueError("texts must be non-empty")
        if any(not t for t in texts):
            raise ValueError("every text must be non-empty")
        payload = _post_json(self.config, "/v1/embed", {"texts": list(texts)})
        try:
            dim = int(payload["dim"])
            embeddings = payload["embeddings"]
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedResponseError(f"embed: bad response shape: {exc}") from exc
        if not isinstance(embeddings, list) or len(embeddings) != len(texts):
            raise MalformedResponseError(
                f"embed: expected {len(texts)} embeddings, got {len(embeddings) if isinstance(embeddings, list) else 'non-list'}"
            )
        vectors = []
        for i, vec in enumerate(embeddings):
            arr = np.asarray(vec, dtype=np.float64)
            if arr.ndim != 1 or arr.shape[0] != dim:
                raise MalformedResponseError(
                    f"embed: embedding {i} has dimension {arr.shape} != declared {dim}"
                )
            if not np.all(np.isfinite(arr)):
                raise MalformedResponseError(f"embed: embedding {i} contains non-finite values")
            vectors.append(arr)
        return vectors


class HttpClassifier:
    """Client for POST /v1/classify."""

    def __init__(self, config: EndpointConfig, image_transport: str = "ref"):
        if image_transport not in ("ref", "b64"):
            raise ValueError(f"unknown image transport {image_transport!r}")
        self.config = config
        self.image_transport = image_transport

    def classify(self, image_ref: str) -> DiagnosticPrediction:
        if not image_ref:
            raise ValueError("image_ref must be non-empty")
        body = {
            "image_ref": image_ref,
            "image_b64": encode_image_b64(image_ref) if self.image_transport == "b64" else None,
        }
        payload = _post_json(self.config, "/v1/classify", body)
        return validate_classification(payload, "classify")


class HttpGenerator:
    """Client for POST /v1/generate."""

    def __init__(self, config: EndpointConfig):
        self.config = config

    def generate(self, bundle: PromptBundle, retrieval_fallback: bool = False) -> GeneratedReport:
        payload = _post_json(
            self.config,
            "/v1/generate",
            {"prompt": bundle.rendered_prompt, "image_ref": bundle.image_ref},
        )
        text = payload.get("text")
        if not isinstance(text, str) or not text.strip():
            raise MalformedResponseError("generate: endpoint returned an empty generation")
        return GeneratedReport(
            text=text,
            prompt_fingerprint=prompt_fingerprint(bundle.rendered_prompt),
            generator_id=self.config.base_url,
            provenance=Provenance(
                k_used=len(bundle.snippet_texts),
                fallback=retrieval_fallback,
                template_version=bundle.template_version,
            ),
        )
