"""Independent brute-force oracles used to verify the implementations.

Everything here is deliberately naive: per-pixel window scans, full-sort
retrieval, exhaustive pair counting, O(n*m) DP tables, finite differences.
None of it shares code with the package paths it checks.
"""

from __future__ import annotations

import math
from fractions import Fraction

import numpy as np


# ---------------------------------------------------------------------------
# Morphology: definition evaluated per pixel with clamped (replicate) indices


def naive_morph(img: np.ndarray, mask: np.ndarray, op: str) -> np.ndarray:
    h, w = img.shape
    mh, mw = mask.shape
    cy, cx = (mh - 1) // 2, (mw - 1) // 2
    offsets = [(dy, dx) for dy in range(mh) for dx in range(mw) if mask[dy, dx]]
    out = np.empty_like(img)
    pick = min if op == "min" else max
    for y in range(h):
        for x in range(w):
            vals = []
            for dy, dx in offsets:
                yy = min(max(y + dy - cy, 0), h - 1)
                xx = min(max(x + dx - cx, 0), w - 1)
                vals.append(int(img[yy, xx]))
            out[y, x] = pick(vals)
    return out


def naive_erode(img, mask):
    return naive_morph(img, mask, "min")


def naive_dilate(img, mask):
    return naive_morph(img, mask, "max")


def naive_top_hat(img, mask):
    opened = naive_dilate(naive_erode(img, mask), mask)
    return np.clip(img.astype(np.int16) - opened.astype(np.int16), 0, 255).astype(np.uint8)


def naive_black_hat(img, mask):
    closed = naive_erode(naive_dilate(img, mask), mask)
    return np.clip(closed.astype(np.int16) - img.astype(np.int16), 0, 255).astype(np.uint8)


# ---------------------------------------------------------------------------
# Lanczos-3: direct 2-D convolution from the kernel formula


def _lanczos3(x: float) -> float:
    if x == 0.0:
        return 1.0
    if abs(x) >= 3.0:
        return 0.0
    pix = math.pi * x
    return 3.0 * math.sin(pix) * math.sin(pix / 3.0) / (pix * pix)


def direct_lanczos(img: np.ndarray, target_w: int, target_h: int) -> np.ndarray:
    """Per-output-pixel double sum over the 6x6 tap window, clamped edges."""
    src = np.asarray(img, dtype=np.float64)
    h, w = src.shape
    out = np.empty((target_h, target_w), dtype=np.float64)
    for oy in range(target_h):
        sy = (oy + 0.5) * (h / target_h) - 0.5
        j0 = math.floor(sy) - 2
        wy = [_lanczos3((j0 + t) - sy) for t in range(6)]
        for ox in range(target_w):
            sx = (ox + 0.5) * (w / target_w) - 0.5
            i0 = math.floor(sx) - 2
            wx = [_lanczos3((i0 + t) - sx) for t in range(6)]
            acc = 0.0
            for ty in range(6):
                yy = min(max(j0 + ty, 0), h - 1)
                for tx in range(6):
                    xx = min(max(i0 + tx, 0), w - 1)
                    acc += wy[ty] * wx[tx] * src[yy, xx]
            out[oy, ox] = acc / (sum(wy) * sum(wx))
    return out


# ---------------------------------------------------------------------------
# Sequences


def naive_lcs(a, b) -> int:
    n, m = len(a), len(b)
    table = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            if a[i - 1] == b[j - 1]:
                table[i][j] = table[i - 1][j - 1] + 1
            else:
                table[i][j] = max(table[i - 1][j], table[i][j - 1])
    return table[n][m]


def clipped_ngram_precision(candidate, references, n) -> Fraction:
    """Modified n-gram precision as an exact rational."""
    def grams(tokens):
        counts = {}
        for i in range(len(tokens) - n + 1):
            gram = tuple(tokens[i : i + n])
            counts[gram] = counts.get(gram, 0) + 1
        return counts

    cand = grams(candidate)
    total = sum(cand.values())
    if total == 0:
        return Fraction(-1)  # caller treats as "no n-grams of this order"
    clipped = 0
    for gram, count in cand.items():
        best = 0
        for ref in references:
            best = max(best, grams(ref).get(gram, 0))
        clipped += min(count, best)
    return Fraction(clipped, total)


def bleu4_oracle(candidate, references, eps=1e-9) -> float:
    c = len(candidate)
    r = min((len(ref) for ref in references), key=lambda length: (abs(length - c), length))
    bp = min(1.0, math.exp(1.0 - r / c))
    log_sum = 0.0
    for n in range(1, 5):
        p = clipped_ngram_precision(candidate, references, n)
        value = 1.0 if p < 0 else float(p)
        log_sum += math.log(max(value, eps))
    return bp * math.exp(log_sum / 4.0)


# ---------------------------------------------------------------------------
# Ranking / classification


def pair_count_auc(scores, positives) -> float:
    """AUC by counting concordant / tied pairs over all (pos, neg) pairs."""
    pos = [s for s, is_pos in zip(scores, positives) if is_pos]
    neg = [s for s, is_pos in zip(scores, positives) if not is_pos]
    if not pos or not neg:
        raise ValueError("need both positives and negatives")
    total = 0.0
    for sp in pos:
        for sn in neg:
            if sp > sn:
                total += 1.0
            elif sp == sn:
                total += 0.5
    return total / (len(pos) * len(neg))


def macro_auc_oracle(labels, probs) -> float:
    probs = np.asarray(probs, dtype=np.float64)
    labels = list(labels)
    values = []
    for c in range(probs.shape[1]):
        positives = [lab == c for lab in labels]
        if not any(positives) or all(positives):
            continue
        values.append(pair_count_auc(probs[:, c].tolist(), positives))
    return sum(values) / len(values)


# ---------------------------------------------------------------------------
# Retrieval: exhaustive scan, full sort


def exhaustive_retrieve(index, query, prediction, k):
    q = np.asarray(query, dtype=np.float64)
    q = q / np.linalg.norm(q)
    candidates = []
    for emb in index.entries:
        grade_ok = emb.entry.dr_grade is None or emb.entry.dr_grade == prediction.grade
        me_ok = emb.entry.me_label is None or emb.entry.me_label == prediction.me_present
        if grade_ok and me_ok:
            candidates.append(emb)
    fallback = not candidates
    if fallback:
        candidates = list(index.entries)
    scored = []
    for emb in candidates:
        score = float(np.dot(emb.vector.astype(np.float64), q))
        scored.append((emb.entry.id, min(1.0, max(-1.0, score))))
    scored.sort(key=lambda item: (-item[1], item[0]))
    return scored[:k], fallback


# ---------------------------------------------------------------------------
# Gradients


def central_diff_grads(adapter_factory, a, b, x, upstream, h=1e-5):
    """Finite-difference gradients of upstream . forward(x) w.r.t. A and B.

    ``adapter_factory(a, b)`` builds the adapter so each perturbation gets a
    fresh frozen copy.
    """
    def objective(a_mat, b_mat):
        from fundusrag.lora import lora_forward

        return float(np.dot(upstream, lora_forward(adapter_factory(a_mat, b_mat), x)))

    grad_a = np.zeros_like(a)
    for i in range(a.shape[0]):
        for j in range(a.shape[1]):
            plus = a.copy()
            minus = a.copy()
            plus[i, j] += h
            minus[i, j] -= h
            grad_a[i, j] = (objective(plus, b) - objective(minus, b)) / (2 * h)
    grad_b = np.zeros_like(b)
    for i in range(b.shape[0]):
        for j in range(b.shape[1]):
            plus = b.copy()
            minus = b.copy()
            plus[i, j] += h
            minus[i, j] -= h
            grad_b[i, j] = (objective(a, plus) - objective(a, minus)) / (2 * h)
    return grad_a, grad_b
