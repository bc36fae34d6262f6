"""Deterministic mock model backends.

Mock mode is a first-class configuration, not a test shim: the embedder,
classifier, and generator below are pure functions of their inputs plus
fixed seeds, so two processes on different machines produce identical
bytes.  That makes full-pipeline runs reproducible offline.
"""

from __future__ import annotations

import hashlib
import re
import struct
from dataclasses import dataclass
from pathlib import PurePosixPath
from types import MappingProxyType
from typing import Mapping

import numpy as np

from .gateway import GeneratedReport, Provenance, prompt_fingerprint
from .prompt import SNIPPET_SEPARATOR, PromptBundle
from .retrieval import DiagnosticPrediction

DEFAULT_DIM = 64

_WORD_RE = re.compile(r"[a-z0-9]+")


class UnknownCaseError(LookupError):
    """The mock classifier has no fixture for the requested image."""

    def __init__(self, image_ref: str):
        super().__init__(f"no mock case for image_ref {image_ref!r}")
        self.image_ref = image_ref


def _word_stream(word: str, salt: str, count: int) -> np.ndarray:
    """``count`` doubles in [-1, 1) from a counter-mode SHA-256 stream.

    The stream is keyed by the first 8 bytes of SHA-256(salt, 0x1f, word);
    block ``i`` is SHA-256(key || u64le(i)), read as four little-endian u64
    values mapped to [0, 1) by division with 2**64.  Every step is defined
    in terms of byte operations, so independent implementations agree
    bit-for-bit.
    """
    key = hashlib.sha256(f"{salt}\x1f{word}".encode("utf-8")).digest()[:8]
    blocks = (count + 3) // 4
    out = np.empty(blocks * 4, dtype=np.float64)
    for i in range(blocks):
        digest = hashlib.sha256(key + struct.pack("<Q", i)).digest()
        for j, (value,) in enumerate(struct.iter_unpack("<Q", digest)):
            out[4 * i + j] = value / 2.0**64
    return 2.0 * out[:count] - 1.0


def mock_embedding(text: str, dim: int = DEFAULT_DIM, salt: str = "") -> np.ndarray:
    """Deterministic bag-of-words embedding, unit L2 norm.

    Tokens are lowercase ``[a-z0-9]+`` runs.  Per-word vectors (see
    :func:`_word_stream`) are scaled by the word's multiplicity and summed
    in sorted-word order, making the result exactly invariant under token
    permutation, then L2-normalized.
    """
    if dim < 1:
        raise ValueError("dim must be >= 1")
    words = _WORD_RE.findall(text.lower())
    if not words:
        raise ValueError(f"text {text!r} has no alphanumeric tokens to embed")
    acc = np.zeros(dim, dtype=np.float64)
    counts: dict[str, int] = {}
    for word in words:
        counts[word] = counts.get(word, 0) + 1
    for word in sorted(counts):
        acc += counts[word] * _word_stream(word, salt, dim)
    norm = float(np.linalg.norm(acc))
    if norm == 0.0:  # astronomically unlikely; would indicate a broken stream
        raise ValueError("mock embedding summed to the zero vector")
    return acc / norm


class MockEmbedder:
    """In-process embedder with the same contract as the HTTP client."""

    def __init__(self, dim: int = DEFAULT_DIM, salt: str = ""):
        if dim < 1:
            raise ValueError("dim must be >= 1")
        self.dim = dim
        self.salt = salt

    def embed(self, texts: list[str]) -> list[np.ndarray]:
        if not texts:
            raise ValueError("texts must be non-empty")
        if any(not t for t in texts):
            raise ValueError("every text must be non-empty")
        return [mock_embedding(t, self.dim, self.salt) for t in texts]


@dataclass(frozen=True)
class MockCase:
    """Fixture diagnosis for one image id."""

    grade: int
    me_present: bool
    grade_confidence: float
    me_confidence: float

    def prediction(self) -> DiagnosticPrediction:
        # Remaining mass spread uniformly keeps the argmax at the predicted
        # grade for any confidence above 0.2.
        rest = (1.0 - self.grade_confidence) / 4.0
        probs = tuple(
            self.grade_confidence if i == self.grade else rest for i in range(5)
        )
        return DiagnosticPrediction(
            grade=self.grade,
            me_present=self.me_present,
            grade_confidence=self.grade_confidence,
            me_confidence=self.me_confidence,
            grade_probs=probs,
        )


def case_key(image_ref: str) -> str:
    """Image id used for fixture lookup: final path segment, no extension."""
    return PurePosixPath(image_ref.replace("\\", "/")).stem


def synthesize_cases(n: int, seed: str = "fixture-v1") -> dict[str, MockCase]:
    """Deterministic fixture table ``case-000`` .. ``case-{n-1:03d}``.

    Field values come from the same counter-mode stream as the mock
    embedder, so the table is stable across platforms and releases.
    """
    cases: dict[str, MockCase] = {}
    for i in range(n):
        name = f"case-{i:03d}"
        draws = _word_stream(name, seed, 4)  # values in [-1, 1)
        u = (draws + 1.0) / 2.0
        grade = int(u[0] * 5) % 5
        me_present = bool(u[1] >= 0.5)
        grade_confidence = float(round(0.55 + 0.40 * u[2], 2))
        me_confidence = float(round(0.55 + 0.40 * u[3], 2))
        cases[name] = MockCase(grade, me_present, grade_confidence, me_confidence)
    return cases


DEFAULT_CASES: Mapping[str, MockCase] = MappingProxyType(
    {
        # Worked example: moderate retinopathy, no edema.
        "00804": MockCase(grade=2, me_present=False, grade_confidence=0.87, me_confidence=0.91),
        **synthesize_cases(20),
    }
)


class MockClassifier:
    """Fixture-table classifier; unknown image ids raise UnknownCaseError."""

    def __init__(self, cases: Mapping[str, MockCase] | None = None):
        self.cases = dict(cases) if cases is not None else dict(DEFAULT_CASES)

    def classify(self, image_ref: str) -> DiagnosticPrediction:
        if not image_ref:
            raise ValueError("image_ref must be non-empty")
        key = case_key(image_ref)
        if key not in self.cases:
            raise UnknownCaseError(image_ref)
        return self.cases[key].prediction()


_PREDICTION_RE = re.compile(
    r"The classifier predicts: DR grade (\d) \(([^)]+)\), confidence [0-9.]+; "
    r"macular edema (present|absent), confidence [0-9.]+\."
)
_CONTEXT_RE = re.compile(
    r"Relevant clinical context: (.*)\. Generate a concise diagnostic report",
    re.DOTALL,
)


def mock_report_text(prompt: str) -> str:
    """Deterministic template report derived from the prompt alone.

    Shared by the in-process mock generator and the mock HTTP server so the
    two transports produce identical bytes.  Echoes the predicted grade and
    edema status when the classifier sentence is present, and the opening
    words of the first retrieved snippet when context is present.
    """
    parts: list[str] = []
    pred = _PREDICTION_RE.search(prompt)
    if pred:
        grade, name, me_word = int(pred.group(1)), pred.group(2), pred.group(3)
        if grade == 0:
            parts.append("Impression: no diabetic retinopathy (grade 0).")
        else:
            parts.append(f"Impression: {name} diabetic retinopathy (grade {grade}).")
        if me_word == "present":
            parts.append("Findings are consistent with diabetic macular edema.")
        else:
            parts.append("There are no signs of diabetic macular edema.")
    else:
        parts.append("Impression: automated review of the fundus image without classifier guidance.")

    context = _CONTEXT_RE.search(prompt)
    if context:
        first_snippet = context.group(1).split(SNIPPET_SEPARATOR)[0]
        echo = " ".join(first_snippet.split()[:8])
        parts.append(f'Context considered: "{echo}".')

    parts.append("Recommend correlation with clinical examination.")
    return " ".join(parts)


class MockGenerator:
    """In-process generator emitting the deterministic template report."""

    generator_id = "mock-generator"

    def generate(self, bundle: PromptBundle, retrieval_fallback: bool = False) -> GeneratedReport:
        return GeneratedReport(
            text=mock_report_text(bundle.rendered_prompt),
            prompt_fingerprint=prompt_fingerprint(bundle.rendered_prompt),
            generator_id=self.generator_id,
            provenance=Provenance(
                k_used=len(bundle.snippet_texts),
                fallback=retrieval_fallback,
                template_version=bundle.template_version,
            ),
        )
