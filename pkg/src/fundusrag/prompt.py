"""Prompt composition for the report generator.

The rendered prompt is a deterministic function of the prediction and the
retrieved snippets; its exact bytes are part of the package contract (tests
pin them), so the sentence templates live in a versioned resource file
rather than inline strings.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from importlib import resources

from .retrieval import DiagnosticPrediction, RetrievalResult, format_confidence, grade_name

TEMPLATE_VERSION = "v1"
SNIPPET_SEPARATOR = " [SEP] "


@dataclass(frozen=True)
class PromptBundle:
    """Everything the generator endpoint needs for one report."""

    image_ref: str
    prediction_text: str
    snippet_texts: tuple[str, ...]
    rendered_prompt: str
    template_version: str


@lru_cache(maxsize=None)
def _template(version: str = TEMPLATE_VERSION) -> dict[str, str]:
    raw = (
        resources.files("fundusrag.templates")
        .joinpath(f"report_prompt_{version}.txt")
        .read_text(encoding="utf-8")
    )
    segments: dict[str, str] = {}
    for line in raw.splitlines():
        if not line.strip():
            continue
        key, _, value = line.partition("=")
        segments[key] = value
    for key in ("persona", "prediction", "context", "instruction"):
        if key not in segments:
            raise ValueError(f"prompt template {version} missing segment {key!r}")
    return segments


def prediction_block(p: DiagnosticPrediction) -> str:
    """The expanded prediction sentence body, carrying both confidences."""
    me_word = "present" if p.me_present else "absent"
    return (
        f"DR grade {p.grade} ({grade_name(p.grade)}), "
        f"confidence {format_confidence(p.grade_confidence)}; "
        f"macular edema {me_word}, confidence {format_confidence(p.me_confidence)}"
    )


def compose_prompt(
    image_ref: str,
    p: DiagnosticPrediction | None,
    result: RetrievalResult | None,
) -> PromptBundle:
    """Assemble the generator prompt.

    A withheld prediction drops the classifier sentence; zero snippets drop
    the context sentence; with both withheld the prompt is persona plus the
    final instruction (the zero-shot configuration).
    """
    segments = _template()
    snippet_texts = tuple(entry.text for entry, _ in result.snippets) if result else ()
    pred_text = prediction_block(p) if p is not None else ""

    parts = [segments["persona"]]
    if p is not None:
        parts.append(segments["prediction"].format(prediction=pred_text))
    if snippet_texts:
        parts.append(segments["context"].format(context=SNIPPET_SEPARATOR.join(snippet_texts)))
    parts.append(segments["instruction"])

    return PromptBundle(
        image_ref=image_ref,
        prediction_text=pred_text,
        snippet_texts=snippet_texts,
        rendered_prompt=" ".join(parts),
        template_version=TEMPLATE_VERSION,
    )
