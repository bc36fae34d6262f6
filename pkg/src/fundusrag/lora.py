"""Desk-scale numerical kernels for the training machinery.

Covers the low-rank adapter update W' = W + (alpha/r) * B @ A, the masked
supervised fine-tuning loss, and inverse-frequency class weighting.  All
arithmetic is float64: the finite-difference gradient checks need the
headroom.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Adapter configuration used by the full-size fine-tune; the kernels here
# exercise the same arithmetic at desk scale.
DEFAULT_RANK = 64
DEFAULT_ALPHA = 128.0


def _readonly(arr: np.ndarray) -> np.ndarray:
    out = np.array(arr, dtype=np.float64, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class LoraAdapter:
    """Frozen base matrix with trainable low-rank factors.

    ``base`` is (m, n) and never mutated; ``a`` is (r, n), ``b`` is (m, r).
    The update is scaled by alpha/r.
    """

    base: np.ndarray
    a: np.ndarray
    b: np.ndarray
    alpha: float

    def __post_init__(self):
        base = _readonly(self.base)
        a = _readonly(self.a)
        b = _readonly(self.b)
        if base.ndim != 2 or a.ndim != 2 or b.ndim != 2:
            raise ValueError("base, a, b must all be matrices")
        m, n = base.shape
        r = a.shape[0]
        if a.shape[1] != n or b.shape != (m, r):
            raise ValueError(
                f"shapes not conformable: base {base.shape}, a {a.shape}, b {b.shape}"
            )
        if r < 1 or r > min(m, n):
            raise ValueError(f"rank {r} outside 1..min(m, n) = {min(m, n)}")
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        object.__setattr__(self, "base", base)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    @property
    def rank(self) -> int:
        return self.a.shape[0]

    @property
    def scaling(self) -> float:
        return self.alpha / self.rank

    @classmethod
    def create(
        cls,
        base: np.ndarray,
        rank: int,
        alpha: float,
        seed: int | np.random.Generator = 0,
    ) -> "LoraAdapter":
        """Fresh adapter: B zero, A small random, so the initial update is 0."""
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        base = np.asarray(base, dtype=np.float64)
        m, n = base.shape
        a = rng.normal(0.0, 0.02, size=(rank, n))
        b = np.zeros((m, rank))
        return cls(base=base, a=a, b=b, alpha=alpha)


def lora_delta(adapter: LoraAdapter) -> np.ndarray:
    """The dense update (alpha/r) * B @ A."""
    return adapter.scaling * (adapter.b @ adapter.a)


def lora_forward(adapter: LoraAdapter, x: np.ndarray) -> np.ndarray:
    """y = W x + (alpha/r) * B (A x), computed factored.

    The dense update is never materialized; the result matches
    ``merge_weights(adapter) @ x`` to float64 roundoff.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (adapter.base.shape[1],):
        raise ValueError(f"x shape {x.shape} does not match base {adapter.base.shape}")
    return adapter.base @ x + adapter.scaling * (adapter.b @ (adapter.a @ x))


def merge_weights(adapter: LoraAdapter) -> np.ndarray:
    """W' = W + delta as a new array; the adapter's base stays frozen."""
    return adapter.base + lora_delta(adapter)


def lora_grad(
    adapter: LoraAdapter, x: np.ndarray, upstream: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Analytic gradients of upstream . forward(x) w.r.t. A and B.

    d/dB = (alpha/r) * upstream (A x)^T, d/dA = (alpha/r) * (B^T upstream) x^T.
    """
    x = np.asarray(x, dtype=np.float64)
    upstream = np.asarray(upstream, dtype=np.float64)
    m, n = adapter.base.shape
    if x.shape != (n,) or upstream.shape != (m,):
        raise ValueError(
            f"x shape {x.shape} / upstream shape {upstream.shape} do not match base {adapter.base.shape}"
        )
    s = adapter.scaling
    grad_b = s * np.outer(upstream, adapter.a @ x)
    grad_a = s * np.outer(adapter.b.T @ upstream, x)
    return grad_a, grad_b


@dataclass(frozen=True)
class SftBatch:
    """Token-level logits, targets, and the assistant-response mask."""

    logits: np.ndarray
    target_ids: np.ndarray
    assistant_mask: np.ndarray

    def __post_init__(self):
        logits = np.asarray(self.logits, dtype=np.float64)
        targets = np.asarray(self.target_ids, dtype=np.int64)
        mask = np.asarray(self.assistant_mask, dtype=bool)
        if logits.ndim != 2:
            raise ValueError("logits must be T x V")
        if targets.shape != (logits.shape[0],) or mask.shape != (logits.shape[0],):
            raise ValueError("target_ids and assistant_mask must have length T")
        object.__setattr__(self, "logits", logits)
        object.__setattr__(self, "target_ids", targets)
        object.__setattr__(self, "assistant_mask", mask)


def sft_loss(batch: SftBatch) -> float:
    """Mean cross-entropy over masked positions only.

    Unmasked positions are dropped before any arithmetic, so the loss is
    bit-for-bit invariant to their logits.
    """
    mask = batch.assistant_mask
    if not mask.any():
        raise ValueError("batch has no masked positions to train on")
    logits = batch.logits[mask]
    targets = batch.target_ids[mask]
    vocab = logits.shape[1]
    if (targets < 0).any() or (targets >= vocab).any():
        raise ValueError(f"target id outside [0, {vocab})")
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    picked = shifted[np.arange(len(targets)), targets]
    return float(np.mean(log_z - picked))


@dataclass(frozen=True)
class ClassWeights:
    weights: tuple[float, ...]
    counts: tuple[int, ...]


def inverse_frequency_weights(counts) -> ClassWeights:
    """Balanced inverse-frequency weights w_c = N / (C * n_c).

    This convention keeps the weighted sample count equal to N:
    sum_c w_c * n_c == N exactly.
    """
    counts = [int(c) for c in counts]
    if not counts:
        raise ValueError("counts must be non-empty")
    if any(c < 1 for c in counts):
        raise ValueError("every class count must be >= 1")
    total = sum(counts)
    n_classes = len(counts)
    weights = tuple(total / (n_classes * c) for c in counts)
    return ClassWeights(weights=weights, counts=tuple(counts))
