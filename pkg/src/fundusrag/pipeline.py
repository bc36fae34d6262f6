"""End-to-end orchestration: classify, retrieve, compose, generate, evaluate.

A run is driven by a flat key-value config file.  Mock mode wires in the
deterministic in-process backends so the full pipeline runs offline and
byte-reproducibly; pointing the endpoint URLs at real model services uses
the identical code path ("bring your own endpoints").
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Sequence

from .gateway import (
    EndpointConfig,
    GeneratedReport,
    HttpClassifier,
    HttpEmbedder,
    HttpGenerator,
)
from .kb import VectorIndex, build_index, load_index, parse_kb
from .metrics import (
    TOKENIZER_VERSION,
    ConfusionMatrix,
    bleu4,
    macro_auc_ovr,
    rouge_l,
    rouge_n,
    semantic_similarity,
    tokenize,
    weighted_prf,
)
from .mock import MockClassifier, MockEmbedder, MockGenerator
from .prompt import compose_prompt
from .retrieval import retrieve_top_k, serialize_query

DEFAULT_BIND = "127.0.0.1:8731"

_BOOL_VALUES = {"true": True, "false": False, "1": True, "0": False, "yes": True, "no": False}


class ConfigError(ValueError):
    pass


class StageError(RuntimeError):
    """A pipeline stage failed; carries the stage name and the record id."""

    def __init__(self, stage: str, image_ref: str, cause: Exception):
        super().__init__(f"stage {stage!r} failed for {image_ref!r}: {cause}")
        self.stage = stage
        self.image_ref = image_ref
        self.cause = cause


@dataclass(frozen=True)
class RunConfig:
    """Every knob of a pipeline run; see CONFIG_KEYS for the file keys."""

    mock_mode: bool = True
    mock_dim: int = 64
    seed: int = 0
    k: int = 3
    use_classifier: bool = True
    use_retrieval: bool = True
    index_path: str | None = None
    kb_path: str | None = None
    concurrency: int = 4
    timeout_ms: int = 10_000
    retries: int = 0
    auth_token: str | None = None
    image_transport: str = "ref"
    embedder_url: str | None = None
    classifier_url: str | None = None
    generator_url: str | None = None
    sbert_url: str | None = None
    clinical_url: str | None = None

    def validate(self) -> "RunConfig":
        if self.k < 1:
            raise ConfigError("k must be >= 1")
        if self.concurrency < 1:
            raise ConfigError("concurrency must be >= 1")
        if self.mock_dim < 1:
            raise ConfigError("mock_dim must be >= 1")
        if self.image_transport not in ("ref", "b64"):
            raise ConfigError(f"image_transport must be 'ref' or 'b64', got {self.image_transport!r}")
        if self.use_retrieval and not self.use_classifier:
            raise ConfigError(
                "use_retrieval requires use_classifier: retrieval is classifier-guided "
                "and has no query source without a prediction"
            )
        if self.use_retrieval and not (self.index_path or self.kb_path):
            raise ConfigError("use_retrieval requires index_path or kb_path")
        if not self.mock_mode:
            if self.use_classifier and not self.classifier_url:
                raise ConfigError("classifier_url required when mock_mode is off")
            if not self.generator_url:
                raise ConfigError("generator_url required when mock_mode is off")
            if self.use_retrieval and not self.embedder_url:
                raise ConfigError("embedder_url required for retrieval when mock_mode is off")
        return self


CONFIG_KEYS = {
    "mock_mode": bool,
    "mock_dim": int,
    "seed": int,
    "k": int,
    "use_classifier": bool,
    "use_retrieval": bool,
    "index_path": str,
    "kb_path": str,
    "concurrency": int,
    "timeout_ms": int,
    "retries": int,
    "auth_token": str,
    "image_transport": str,
    "embedder_url": str,
    "classifier_url": str,
    "generator_url": str,
    "sbert_url": str,
    "clinical_url": str,
}


def resolve_path(value: str) -> Path:
    """Resolve a config path; the ``pkg:`` prefix points into packaged data."""
    if value.startswith("pkg:"):
        return Path(str(resources.files("fundusrag.data").joinpath(value[4:])))
    return Path(value)


def parse_config(text: str) -> RunConfig:
    """Parse the flat ``key = value`` config format (# starts a comment)."""
    values: dict[str, object] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = (part.strip() for part in line.partition("="))
        if not sep or not key:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        if key not in CONFIG_KEYS:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        kind = CONFIG_KEYS[key]
        if kind is bool:
            if value.lower() not in _BOOL_VALUES:
                raise ConfigError(f"line {lineno}: {key} must be true/false, got {value!r}")
            values[key] = _BOOL_VALUES[value.lower()]
        elif kind is int:
            try:
                values[key] = int(value)
            except ValueError as exc:
                raise ConfigError(f"line {lineno}: {key} must be an integer, got {value!r}") from exc
        else:
            values[key] = value
    return RunConfig(**values).validate()


def load_config(path: str | Path) -> RunConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"))


@dataclass(frozen=True)
class ManifestRecord:
    image_ref: str
    reference_report: str | None = None
    true_grade: int | None = None
    true_me: bool | None = None


_MANIFEST_KEYS = {"image_ref", "reference_report", "true_grade", "true_me"}


def parse_manifest(source: str | bytes) -> list[ManifestRecord]:
    """Parse the JSON-lines dataset manifest; image_ref must be unique."""
    text = source.decode("utf-8") if isinstance(source, bytes) else source
    records: list[ManifestRecord] = []
    seen: set[str] = set()
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ValueError(f"manifest line {lineno}: invalid JSON ({exc.msg})") from exc
        if not isinstance(obj, dict):
            raise ValueError(f"manifest line {lineno}: record must be an object")
        unknown = set(obj) - _MANIFEST_KEYS
        if unknown:
            raise ValueError(f"manifest line {lineno}: unknown keys {sorted(unknown)}")
        ref = obj.get("image_ref")
        if not isinstance(ref, str) or not ref:
            raise ValueError(f"manifest line {lineno}: missing or empty image_ref")
        if ref in seen:
            raise ValueError(f"manifest line {lineno}: duplicate image_ref {ref!r}")
        seen.add(ref)
        report = obj.get("reference_report")
        if report is not None and (not isinstance(report, str) or not report.strip()):
            raise ValueError(f"manifest line {lineno}: reference_report must be a non-empty string")
        grade = obj.get("true_grade")
        if grade is not None:
            if isinstance(grade, bool) or not isinstance(grade, int) or grade not in range(5):
                raise ValueError(f"manifest line {lineno}: true_grade must be 0..4 or null")
        me = obj.get("true_me")
        if me is not None and not isinstance(me, bool):
            raise ValueError(f"manifest line {lineno}: true_me must be boolean or null")
        records.append(ManifestRecord(ref, report, grade, me))
    return records


def load_manifest(path: str | Path) -> list[ManifestRecord]:
    return parse_manifest(resolve_path(str(path)).read_text(encoding="utf-8"))


@dataclass
class EvalRow:
    image_ref: str
    ok: bool
    stage: str | None = None
    error: str | None = None
    trace: dict | None = None


@dataclass
class EvalReport:
    payload: dict
    rows: list[EvalRow]
    n_failures: int


def make_embedder(config: RunConfig, role: str = "query"):
    """Embedder for the KB/query space or one of the similarity spaces."""
    if role == "query":
        if config.mock_mode and not config.embedder_url:
            return MockEmbedder(dim=config.mock_dim)
        return HttpEmbedder(_endpoint(config, config.embedder_url))
    if role == "sbert":
        if config.sbert_url:
            return HttpEmbedder(_endpoint(config, config.sbert_url))
        return MockEmbedder(dim=config.mock_dim, salt="sbert") if config.mock_mode else None
    if role == "clinical":
        if config.clinical_url:
            return HttpEmbedder(_endpoint(config, config.clinical_url))
        return MockEmbedder(dim=config.mock_dim, salt="clinical") if config.mock_mode else None
    raise ValueError(f"unknown embedder role {role!r}")


def _endpoint(config: RunConfig, url: str | None) -> EndpointConfig:
    if not url:
        raise ConfigError("endpoint URL missing")
    return EndpointConfig(
        base_url=url,
        timeout_ms=config.timeout_ms,
        retries=config.retries,
        auth_token=config.auth_token,
    )


class Pipeline:
    """A configured engine: shared read-only index and model clients."""

    def __init__(self, config: RunConfig):
        self.config = config.validate()
        self.embedder = make_embedder(config, "query") if config.use_retrieval else None
        self.sbert = make_embedder(config, "sbert")
        self.clinical = make_embedder(config, "clinical")

        if not config.use_classifier:
            self.classifier = None
        elif config.mock_mode and not config.classifier_url:
            self.classifier = MockClassifier()
        else:
            self.classifier = HttpClassifier(
                _endpoint(config, config.classifier_url), config.image_transport
            )

        if config.mock_mode and not config.generator_url:
            self.generator = MockGenerator()
        else:
            self.generator = HttpGenerator(_endpoint(config, config.generator_url))

        self.index: VectorIndex | None = None
        if config.use_retrieval:
            if config.index_path:
                self.index = load_index(resolve_path(config.index_path))
            else:
                entries = parse_kb(resolve_path(config.kb_path).read_bytes())
                self.index = build_index(entries, self.embedder)

    def run_report(self, image_ref: str) -> tuple[GeneratedReport, dict]:
        """Full flow for one image; errors carry the failing stage name."""
        cfg = self.config
        prediction = None
        query_text = None
        result = None

        if cfg.use_classifier:
            prediction = self._stage("classify", image_ref, lambda: self.classifier.classify(image_ref))
        if cfg.use_retrieval and prediction is not None:
            query_text = self._stage("serialize_query", image_ref, lambda: serialize_query(prediction))
            query_vec = self._stage(
                "embed_query", image_ref, lambda: self.embedder.embed([query_text])[0]
            )
            result = self._stage(
                "retrieve", image_ref, lambda: retrieve_top_k(self.index, query_vec, prediction, cfg.k)
            )

        bundle = self._stage(
            "compose_prompt", image_ref, lambda: compose_prompt(image_ref, prediction, result)
        )
        fallback = result.fallback if result is not None else False
        report = self._stage(
            "generate", image_ref, lambda: self.generator.generate(bundle, retrieval_fallback=fallback)
        )

        trace = {
            "image_ref": image_ref,
            "prediction": None
            if prediction is None
            else {
                "grade": prediction.grade,
                "me_present": prediction.me_present,
                "grade_confidence": prediction.grade_confidence,
                "me_confidence": prediction.me_confidence,
                "grade_probs": list(prediction.grade_probs),
            },
            "query_text": query_text,
            "snippets": []
            if result is None
            else [{"id": entry.id, "score": score} for entry, score in result.snippets],
            "fallback": fallback,
            "k_requested": cfg.k if result is not None else 0,
            "prompt_fingerprint": report.prompt_fingerprint,
            "template_version": bundle.template_version,
            "generator_id": report.generator_id,
        }
        return report, trace

    @staticmethod
    def _stage(name: str, image_ref: str, fn):
        try:
            return fn()
        except StageError:
            raise
        except Exception as exc:
            raise StageError(name, image_ref, exc) from exc

    def run_eval(self, records: Sequence[ManifestRecord]) -> EvalReport:
        """Evaluate every record with bounded concurrency.

        Per-record failures are collected and reported; the run aborts only
        when every record fails.  Aggregation follows manifest order, so
        mock-mode output files are byte-identical across runs.
        """
        if not records:
            raise ValueError("manifest is empty")

        def _safe(record: ManifestRecord):
            try:
                return self.run_report(record.image_ref)
            except StageError as exc:
                return exc

        with ThreadPoolExecutor(max_workers=self.config.concurrency) as pool:
            outcomes = list(pool.map(_safe, records))

        rows: list[EvalRow] = []
        successes: list[tuple[ManifestRecord, GeneratedReport, dict]] = []
        for record, outcome in zip(records, outcomes):
            if isinstance(outcome, StageError):
                rows.append(
                    EvalRow(record.image_ref, ok=False, stage=outcome.stage, error=str(outcome.cause))
                )
            else:
                report, trace = outcome
                rows.append(EvalRow(record.image_ref, ok=True, trace=trace))
                successes.append((record, report, trace))

        if not successes:
            raise RuntimeError(f"all {len(records)} records failed; first: {rows[0].error}")

        payload = self._aggregate(successes)
        return EvalReport(payload=payload, rows=rows, n_failures=len(records) - len(successes))

    def _aggregate(self, successes) -> dict:
        bleu_vals: list[float] = []
        rouge1_vals: list[float] = []
        rougel_vals: list[float] = []
        sbert_vals: list[float] = []
        clinical_vals: list[float] = []
        dr_true: list[int] = []
        dr_pred: list[int] = []
        dr_probs: list[list[float]] = []
        me_true: list[int] = []
        me_pred: list[int] = []
        me_probs: list[list[float]] = []

        for record, report, trace in successes:
            if record.reference_report:
                cand = tokenize(report.text)
                ref = tokenize(record.reference_report)
                bleu_vals.append(bleu4(cand, [ref]))
                rouge1_vals.append(rouge_n(cand, ref, 1).f1)
                rougel_vals.append(rouge_l(cand, ref).f1)
                if self.sbert is not None:
                    sbert_vals.append(
                        semantic_similarity(report.text, record.reference_report, self.sbert)
                    )
                if self.clinical is not None:
                    clinical_vals.append(
                        semantic_similarity(report.text, record.reference_report, self.clinical)
                    )
            prediction = trace.get("prediction")
            if prediction is not None:
                if record.true_grade is not None:
                    dr_true.append(record.true_grade)
                    dr_pred.append(prediction["grade"])
                    dr_probs.append(prediction["grade_probs"])
                if record.true_me is not None:
                    me_true.append(1 if record.true_me else 0)
                    me_pred.append(1 if prediction["me_present"] else 0)
                    conf = prediction["me_confidence"]
                    positive = conf if prediction["me_present"] else 1.0 - conf
                    me_probs.append([1.0 - positive, positive])

        def _mean(values: list[float]) -> float | None:
            return sum(values) / len(values) if values else None

        def _classification_block(true, pred, probs, n_classes):
            if not true:
                return {"precision": None, "recall": None, "f1": None, "auc": None}
            cm = ConfusionMatrix.from_pairs(true, pred, labels=range(n_classes))
            prf = weighted_prf(cm)
            try:
                auc = macro_auc_ovr(true, probs)
            except ValueError:
                auc = None
            return {"precision": prf.precision, "recall": prf.recall, "f1": prf.f1, "auc": auc}

        return {
            "bleu4": _mean(bleu_vals),
            "rouge1": _mean(rouge1_vals),
            "rougeL": _mean(rougel_vals),
            "sbert_sim": _mean(sbert_vals),
            "clinical_sim": _mean(clinical_vals),
            "dr": _classification_block(dr_true, dr_pred, dr_probs, 5),
            "me": _classification_block(me_true, me_pred, me_probs, 2),
            "n_examples": len(successes),
            "tokenizer_version": TOKENIZER_VERSION,
        }


def write_eval_payload(payload: dict, path: str | Path) -> None:
    """Serialize the evaluation payload deterministically."""
    Path(path).write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8")
