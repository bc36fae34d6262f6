"""From-scratch evaluation metrics for generated reports and classifiers.

Implements BLEU-4 with clipped modified precisions, ROUGE-N and ROUGE-L,
embedding-based semantic similarity, weighted precision/recall/F1 over a
confusion matrix, and macro one-vs-rest AUC via the rank-statistic
estimator.  All of it is pinned to the canonical tokenizer below; metric
numbers are meaningless unless the tokenization is fixed, so its rule is
versioned and reported alongside every evaluation.
"""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from . import _kernels

TOKENIZER_VERSION = "v1"
BLEU_EPSILON = 1e-9

# Lowercase, split on whitespace, each punctuation character (anything that
# is neither a word character nor whitespace) becomes its own token.
_TOKEN_RE = re.compile(r"\w+|[^\w\s]")


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


def ngram_counts(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


@dataclass(frozen=True)
class PrfScore:
    precision: float
    recall: float
    f1: float


@dataclass(frozen=True)
class BleuBreakdown:
    score: float
    precisions: tuple[float, float, float, float]
    brevity_penalty: float
    candidate_len: int
    reference_len: int


def _f1(precision: float, recall: float) -> float:
    return 2.0 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0


def bleu4(
    candidate: Sequence[str],
    references: Sequence[Sequence[str]],
    return_detail: bool = False,
):
    """Sentence BLEU-4 with epsilon-floor smoothing.

    Modified n-gram precisions are clipped against the maximum reference
    count; each precision is floored at 1e-9 before entering the geometric
    mean.  Orders the candidate is too short to instantiate contribute a
    vacuous precision of 1, which preserves bleu4(x, [x]) == 1 for every
    non-empty x.  The brevity penalty uses the reference length closest to
    the candidate's (ties toward the shorter reference).
    """
    if not candidate:
        raise ValueError("candidate must be non-empty")
    if not references or any(not ref for ref in references):
        raise ValueError("references must be non-empty sequences")

    c = len(candidate)
    r = min((len(ref) for ref in references), key=lambda n: (abs(n - c), n))
    brevity_penalty = min(1.0, math.exp(1.0 - r / c))

    precisions = []
    for n in range(1, 5):
        cand_counts = ngram_counts(candidate, n)
        total = sum(cand_counts.values())
        if total == 0:
            precisions.append(1.0)
            continue
        max_ref: Counter = Counter()
        for ref in references:
            for gram, count in ngram_counts(ref, n).items():
                if count > max_ref[gram]:
                    max_ref[gram] = count
        clipped = sum(min(count, max_ref[gram]) for gram, count in cand_counts.items())
        precisions.append(clipped / total)

    log_sum = sum(math.log(max(p, BLEU_EPSILON)) for p in precisions)
    score = brevity_penalty * math.exp(log_sum / 4.0)
    if return_detail:
        return BleuBreakdown(score, tuple(precisions), brevity_penalty, c, r)
    return score


def rouge_n(candidate: Sequence[str], reference: Sequence[str], n: int) -> PrfScore:
    """N-gram overlap with multiset clipping; F1 with beta = 1."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if not candidate or not reference:
        raise ValueError("sequences must be non-empty")
    if n > len(candidate) or n > len(reference):
        raise ValueError(f"n = {n} longer than a sequence")
    cand = ngram_counts(candidate, n)
    ref = ngram_counts(reference, n)
    overlap = sum(min(count, ref[gram]) for gram, count in cand.items())
    precision = overlap / sum(cand.values())
    recall = overlap / sum(ref.values())
    return PrfScore(precision, recall, _f1(precision, recall))


def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    """Longest common subsequence length over token identities."""
    ids: dict[str, int] = {}
    for token in a:
        ids.setdefault(token, len(ids))
    for token in b:
        ids.setdefault(token, len(ids))
    a_ids = np.fromiter((ids[t] for t in a), dtype=np.int32, count=len(a))
    b_ids = np.fromiter((ids[t] for t in b), dtype=np.int32, count=len(b))
    return int(_kernels.lcs_length(a_ids, b_ids))


def rouge_l(candidate: Sequence[str], reference: Sequence[str]) -> PrfScore:
    """LCS-based ROUGE; recall against the reference, F1 with beta = 1."""
    if not candidate or not reference:
        raise ValueError("sequences must be non-empty")
    lcs = lcs_length(candidate, reference)
    precision = lcs / len(candidate)
    recall = lcs / len(reference)
    return PrfScore(precision, recall, _f1(precision, recall))


def semantic_similarity(candidate: str, reference: str, embedder) -> float:
    """Cosine similarity of the two texts under the configured embedder.

    The metric is embedder-parametric: a general-purpose sentence embedder
    and a clinical-domain embedder are just two configurations.
    """
    if not candidate or not reference:
        raise ValueError("texts must be non-empty")
    vec_c, vec_r = embedder.embed([candidate, reference])
    from .retrieval import cosine_similarity

    return cosine_similarity(vec_c, vec_r)


class ConfusionMatrix:
    """Square count matrix, rows = true class, columns = predicted class."""

    def __init__(self, counts, labels: Sequence | None = None):
        arr = np.asarray(counts, dtype=np.int64)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
            raise ValueError(f"counts must be square, got shape {arr.shape}")
        if (arr < 0).any():
            raise ValueError("counts must be non-negative")
        self.counts = arr
        self.labels = tuple(labels) if labels is not None else tuple(range(arr.shape[0]))
        if len(self.labels) != arr.shape[0]:
            raise ValueError("labels length must match matrix size")

    @classmethod
    def from_pairs(cls, true_labels: Iterable, predicted: Iterable, labels: Sequence) -> "ConfusionMatrix":
        index = {label: i for i, label in enumerate(labels)}
        counts = np.zeros((len(labels), len(labels)), dtype=np.int64)
        for t, p in zip(true_labels, predicted, strict=True):
            counts[index[t], index[p]] += 1
        return cls(counts, labels)

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def per_class_prf(cm: ConfusionMatrix) -> list[PrfScore]:
    """One-vs-rest precision/recall/F1 for each class."""
    scores = []
    for c in range(cm.counts.shape[0]):
        tp = int(cm.counts[c, c])
        col = int(cm.counts[:, c].sum())
        row = int(cm.counts[c, :].sum())
        precision = tp / col if col else 0.0
        recall = tp / row if row else 0.0
        scores.append(PrfScore(precision, recall, _f1(precision, recall)))
    return scores


def weighted_prf(cm: ConfusionMatrix) -> PrfScore:
    """Support-weighted average of the per-class scores.

    Weights are true-class supports over the total; zero-support classes are
    excluded.  Note the aggregate F1 is the weighted mean of per-class F1
    values, not the harmonic mean of the aggregate P and R.
    """
    if cm.total == 0:
        raise ValueError("confusion matrix has no samples")
    supports = cm.counts.sum(axis=1)
    scores = per_class_prf(cm)
    total = cm.total
    precision = recall = f1 = 0.0
    for support, score in zip(supports, scores):
        if support == 0:
            continue
        weight = support / total
        precision += weight * score.precision
        recall += weight * score.recall
        f1 += weight * score.f1
    return PrfScore(precision, recall, f1)


def _average_ranks(scores: np.ndarray) -> np.ndarray:
    """1-based ranks with ties assigned the mean of their span."""
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(len(scores), dtype=np.float64)
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and scores[order[j + 1]] == scores[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def macro_auc_ovr(true_labels: Sequence[int], prob_matrix, return_detail: bool = False):
    """Macro-averaged one-vs-rest AUC via the Mann-Whitney rank statistic.

    Per class, AUC = (R+ - n+(n+ + 1)/2) / (n+ * n-) where R+ is the rank
    sum of the positive samples under average-rank tie handling.  Classes
    lacking positives or negatives are skipped; with ``return_detail`` the
    per-class values and the skipped class list are returned as well.
    """
    probs = np.asarray(prob_matrix, dtype=np.float64)
    labels = np.asarray(list(true_labels), dtype=np.int64)
    if probs.ndim != 2 or probs.shape[0] != len(labels):
        raise ValueError("prob_matrix must be N x C matching true_labels")
    row_sums = probs.sum(axis=1)
    if np.any(np.abs(row_sums - 1.0) > 1e-3):
        raise ValueError("every probability row must sum to 1 within 1e-3")
    if len(np.unique(labels)) < 2:
        raise ValueError("need at least 2 distinct labels")

    per_class: dict[int, float] = {}
    skipped: list[int] = []
    for c in range(probs.shape[1]):
        positive = labels == c
        n_pos = int(positive.sum())
        n_neg = len(labels) - n_pos
        if n_pos == 0 or n_neg == 0:
            skipped.append(c)
            continue
        ranks = _average_ranks(probs[:, c])
        rank_sum = float(ranks[positive].sum())
        per_class[c] = (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)

    macro = sum(per_class.values()) / len(per_class)
    if return_detail:
        return macro, per_class, skipped
    return macro
