"""Classifier-guided retrieval: query serialization, class matching, top-k.

Retrieval candidates are first restricted to entries whose class tags agree
with the predicted grade and edema label (untagged entries match anything);
cosine similarity then ranks the survivors.  An empty class-matched subset
falls back to the whole index so a report is always produced, with the
fallback recorded for auditability.
"""

from __future__ import annotations

from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal

import numpy as np

from .kb import EmbeddedEntry, KnowledgeEntry, VectorIndex

GRADE_NAMES = ("No DR", "Mild", "Moderate", "Severe", "Proliferative")

PROB_SUM_TOL = 1e-6


def grade_name(grade: int) -> str:
    if grade not in range(5):
        raise ValueError(f"grade {grade} outside 0..4")
    return GRADE_NAMES[grade]


@dataclass(frozen=True)
class DiagnosticPrediction:
    """Structured classifier output: grade, edema label, confidences, probs."""

    grade: int
    me_present: bool
    grade_confidence: float
    me_confidence: float
    grade_probs: tuple[float, ...]

    def __post_init__(self):
        # Normalize to plain Python scalars at the boundary so traces and
        # wire payloads serialize cleanly.
        object.__setattr__(self, "grade", int(self.grade))
        object.__setattr__(self, "me_present", bool(self.me_present))
        object.__setattr__(self, "grade_confidence", float(self.grade_confidence))
        object.__setattr__(self, "me_confidence", float(self.me_confidence))
        object.__setattr__(self, "grade_probs", tuple(float(p) for p in self.grade_probs))
        if self.grade not in range(5):
            raise ValueError(f"grade {self.grade} outside 0..4")
        if len(self.grade_probs) != 5:
            raise ValueError("grade_probs must have 5 entries")
        if any(p < 0.0 for p in self.grade_probs):
            raise ValueError("grade_probs entries must be non-negative")
        total = sum(self.grade_probs)
        if abs(total - 1.0) > PROB_SUM_TOL:
            raise ValueError(f"grade_probs sum {total!r} not 1 within {PROB_SUM_TOL}")
        # Ties break toward the lowest index, matching argmax semantics.
        argmax = max(range(5), key=lambda i: (self.grade_probs[i], -i))
        if argmax != self.grade:
            raise ValueError(
                f"grade {self.grade} disagrees with argmax(grade_probs) = {argmax}"
            )
        for name in ("grade_confidence", "me_confidence"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} {value!r} outside [0, 1]")


@dataclass(frozen=True)
class RetrievalResult:
    """Ranked snippets with the class-filter provenance flag.

    ``filtered`` is True when the class-matched subset was used; False means
    the subset was empty and ranking fell back to the full index.
    """

    snippets: tuple[tuple[KnowledgeEntry, float], ...]
    k_requested: int
    filtered: bool

    @property
    def fallback(self) -> bool:
        return not self.filtered


def format_confidence(value: float) -> str:
    """Two-decimal confidence with round-half-up (0.555 -> '0.56')."""
    return str(Decimal(repr(float(value))).quantize(Decimal("0.01"), rounding=ROUND_HALF_UP))


def serialize_query(p: DiagnosticPrediction) -> str:
    """Render the prediction as the retrieval query text.

    Grade 0 keeps its canonical name as the full prefix ("No DR"), every
    other grade appends " DR".
    """
    prefix = "No DR" if p.grade == 0 else f"{grade_name(p.grade)} DR"
    me_part = "ME detected" if p.me_present else "ME not detected"
    return f"{prefix}, {me_part}, confidence {format_confidence(p.grade_confidence)}"


def cosine_similarity(a, b) -> float:
    """Cosine of the angle between two equal-dimension non-zero vectors."""
    av = np.asarray(a, dtype=np.float64)
    bv = np.asarray(b, dtype=np.float64)
    if av.shape != bv.shape or av.ndim != 1:
        raise ValueError(f"dimension mismatch: {av.shape} vs {bv.shape}")
    na = float(np.linalg.norm(av))
    nb = float(np.linalg.norm(bv))
    if na == 0.0 or nb == 0.0:
        raise ValueError("cosine similarity undefined for a zero vector")
    return float(min(1.0, max(-1.0, float(np.dot(av, bv)) / (na * nb))))


def class_match_filter(
    index: VectorIndex, p: DiagnosticPrediction
) -> tuple[list[EmbeddedEntry], bool]:
    """Entries whose tags match the prediction; untagged fields match any.

    Returns ``(candidates, filtered)`` where ``filtered`` is False when the
    match came up empty and the full index is returned instead.
    """
    matched = [
        emb
        for emb in index.entries
        if (emb.entry.dr_grade is None or emb.entry.dr_grade == p.grade)
        and (emb.entry.me_label is None or emb.entry.me_label == p.me_present)
    ]
    if matched:
        return matched, True
    return list(index.entries), False


def normalize_query(vector) -> np.ndarray:
    """Validate and unit-normalize a query embedding (float64)."""
    q = np.asarray(vector, dtype=np.float64)
    if q.ndim != 1:
        raise ValueError("query embedding must be 1-D")
    if not np.all(np.isfinite(q)):
        raise ValueError("query embedding contains non-finite values")
    norm = float(np.linalg.norm(q))
    if norm == 0.0:
        raise ValueError("query embedding is the zero vector")
    return q / norm


def retrieve_top_k(
    index: VectorIndex, query, p: DiagnosticPrediction, k: int
) -> RetrievalResult:
    """The k highest-cosine class-matched entries, scores descending.

    Ties break toward the ascending entry id so rankings are reproducible
    across platforms.  Scores are float64 dot products against the stored
    unit vectors, clamped to [-1, 1].
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if len(index) == 0:
        raise ValueError("cannot retrieve from an empty index")
    q = normalize_query(query)
    if q.shape[0] != index.dimension:
        raise ValueError(
            f"query dimension {q.shape[0]} != index dimension {index.dimension}"
        )

    candidates, filtered = class_match_filter(index, p)
    scored = [
        (emb.entry, float(min(1.0, max(-1.0, float(np.dot(emb.vector.astype(np.float64), q))))))
        for emb in candidates
    ]
    scored.sort(key=lambda item: (-item[1], item[0].id))
    return RetrievalResult(snippets=tuple(scored[:k]), k_requested=k, filtered=filtered)
