import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fundusrag.lora import (
    DEFAULT_ALPHA,
    DEFAULT_RANK,
    LoraAdapter,
    SftBatch,
    inverse_frequency_weights,
    lora_delta,
    lora_forward,
    lora_grad,
    merge_weights,
    sft_loss,
)

from oracles import central_diff_grads


def random_adapter(rng, m=None, n=None, r=None, alpha=None):
    m = m or int(rng.integers(2, 12))
    n = n or int(rng.integers(2, 12))
    r = r or int(rng.integers(1, min(m, n) + 1))
    alpha = alpha if alpha is not None else float(rng.uniform(0.5, 8.0))
    return LoraAdapter(
        base=rng.normal(size=(m, n)),
        a=rng.normal(size=(r, n)),
        b=rng.normal(size=(m, r)),
        alpha=alpha,
    )


class TestAdapterType:
    def test_shape_validation(self):
        with pytest.raises(ValueError, match="conformable"):
            LoraAdapter(base=np.zeros((3, 4)), a=np.zeros((2, 5)), b=np.zeros((3, 2)), alpha=1.0)

    def test_rank_bound(self):
        with pytest.raises(ValueError, match="rank"):
            LoraAdapter(base=np.zeros((2, 2)), a=np.zeros((3, 2)), b=np.zeros((2, 3)), alpha=1.0)

    def test_alpha_positive(self):
        with pytest.raises(ValueError, match="alpha"):
            LoraAdapter(base=np.zeros((2, 2)), a=np.zeros((1, 2)), b=np.zeros((2, 1)), alpha=0.0)

    def test_base_is_frozen(self, rng):
        adapter = random_adapter(rng)
        with pytest.raises(ValueError):
            adapter.base[0, 0] = 99.0

    def test_create_starts_at_zero_update(self):
        adapter = LoraAdapter.create(np.eye(4), rank=2, alpha=4.0, seed=1)
        assert np.array_equal(lora_delta(adapter), np.zeros((4, 4)))
        assert np.any(adapter.a != 0.0)

    def test_default_constants(self):
        assert DEFAULT_RANK == 64
        assert DEFAULT_ALPHA == 128.0


class TestLoraDelta:
    def test_zero_a_gives_zero_update(self, rng):
        adapter = random_adapter(rng)
        zeroed = LoraAdapter(adapter.base, np.zeros_like(adapter.a), adapter.b, adapter.alpha)
        assert np.array_equal(lora_delta(zeroed), np.zeros_like(adapter.base))

    def test_hand_outer_product(self):
        adapter = LoraAdapter(
            base=np.zeros((2, 2)),
            a=np.array([[3.0, 4.0]]),
            b=np.array([[1.0], [2.0]]),
            alpha=1.0,
        )
        assert lora_delta(adapter).tolist() == [[3.0, 4.0], [6.0, 8.0]]

    def test_linearity_in_alpha(self, rng):
        adapter = random_adapter(rng)
        r = adapter.rank
        at_r = LoraAdapter(adapter.base, adapter.a, adapter.b, alpha=float(r))
        at_2r = LoraAdapter(adapter.base, adapter.a, adapter.b, alpha=float(2 * r))
        assert np.allclose(lora_delta(at_2r), 2.0 * lora_delta(at_r), rtol=0, atol=0)


class TestForwardAndMerge:
    def test_zero_a_forward_equals_base_exactly(self, rng):
        adapter = random_adapter(rng)
        zeroed = LoraAdapter(adapter.base, np.zeros_like(adapter.a), adapter.b, adapter.alpha)
        x = rng.normal(size=adapter.base.shape[1])
        assert np.array_equal(lora_forward(zeroed, x), zeroed.base @ x)

    def test_factored_matches_dense_oracle(self, rng):
        adapter = LoraAdapter(
            base=np.eye(3),
            a=rng.normal(size=(2, 3)),
            b=rng.normal(size=(3, 2)),
            alpha=4.0,
        )
        x = rng.normal(size=3)
        dense = (adapter.base + adapter.scaling * adapter.b @ adapter.a) @ x
        got = lora_forward(adapter, x)
        assert np.max(np.abs(got - dense)) <= 1e-10 * max(1.0, np.max(np.abs(dense)))

    def test_zero_input_gives_zero(self, rng):
        adapter = random_adapter(rng)
        assert np.array_equal(lora_forward(adapter, np.zeros(adapter.base.shape[1])), np.zeros(adapter.base.shape[0]))

    def test_factored_merged_agreement_over_random_adapters(self):
        rng = np.random.default_rng(1234)
        for _ in range(200):
            adapter = random_adapter(rng)
            x = rng.normal(size=adapter.base.shape[1])
            factored = lora_forward(adapter, x)
            merged = merge_weights(adapter) @ x
            scale = max(1.0, float(np.max(np.abs(merged))))
            assert np.max(np.abs(factored - merged)) <= 1e-10 * scale

    def test_merge_zero_a_equals_base(self, rng):
        adapter = random_adapter(rng)
        zeroed = LoraAdapter(adapter.base, np.zeros_like(adapter.a), adapter.b, adapter.alpha)
        assert np.array_equal(merge_weights(zeroed), zeroed.base)

    def test_merge_is_pure(self, rng):
        adapter = random_adapter(rng)
        before = adapter.base.copy()
        first = merge_weights(adapter)
        second = merge_weights(adapter)
        assert np.array_equal(first, second)
        assert np.array_equal(adapter.base, before)

    def test_shape_mismatch_rejected(self, rng):
        adapter = random_adapter(rng, m=3, n=4)
        with pytest.raises(ValueError):
            lora_forward(adapter, np.zeros(5))


class TestLoraGrad:
    def test_zero_upstream_gives_zero_grads(self, rng):
        adapter = random_adapter(rng)
        grad_a, grad_b = lora_grad(
            adapter, rng.normal(size=adapter.base.shape[1]), np.zeros(adapter.base.shape[0])
        )
        assert np.array_equal(grad_a, np.zeros_like(adapter.a))
        assert np.array_equal(grad_b, np.zeros_like(adapter.b))

    def test_zero_a_structure(self, rng):
        adapter = random_adapter(rng)
        zeroed = LoraAdapter(adapter.base, np.zeros_like(adapter.a), adapter.b, adapter.alpha)
        x = rng.normal(size=adapter.base.shape[1])
        upstream = rng.normal(size=adapter.base.shape[0])
        grad_a, grad_b = lora_grad(zeroed, x, upstream)
        assert np.array_equal(grad_b, np.zeros_like(adapter.b))
        assert np.any(grad_a != 0.0)

    def test_matches_central_finite_differences(self):
        rng = np.random.default_rng(77)
        worst = 0.0
        for _ in range(30):
            m, n = int(rng.integers(2, 9)), int(rng.integers(2, 9))
            r = int(rng.integers(1, min(m, n) + 1))
            base = rng.normal(size=(m, n))
            a = rng.normal(size=(r, n))
            b = rng.normal(size=(m, r))
            alpha = float(rng.uniform(0.5, 4.0))
            x = rng.normal(size=n)
            upstream = rng.normal(size=m)
            adapter = LoraAdapter(base, a, b, alpha)
            grad_a, grad_b = lora_grad(adapter, x, upstream)
            num_a, num_b = central_diff_grads(
                lambda am, bm: LoraAdapter(base, am, bm, alpha), a, b, x, upstream
            )
            scale = max(1.0, float(np.max(np.abs(num_a))), float(np.max(np.abs(num_b))))
            worst = max(
                worst,
                float(np.max(np.abs(grad_a - num_a))) / scale,
                float(np.max(np.abs(grad_b - num_b))) / scale,
            )
        assert worst < 1e-4


class TestSftLoss:
    def test_uniform_logits_equal_log_vocab(self):
        for vocab in (2, 3, 7, 50):
            batch = SftBatch(
                logits=np.full((5, vocab), 3.25),
                target_ids=np.arange(5) % vocab,
                assistant_mask=np.array([True, False, True, True, False]),
            )
            assert sft_loss(batch) == pytest.approx(math.log(vocab), abs=1e-12)

    def test_confident_correct_approaches_zero(self):
        logits = np.zeros((3, 4))
        logits[np.arange(3), [1, 2, 3]] = 60.0
        batch = SftBatch(logits, np.array([1, 2, 3]), np.array([True, True, True]))
        assert sft_loss(batch) < 1e-12

    def test_hand_computed_fixture(self):
        logits = np.array(
            [
                [1.0, 2.0, 3.0],
                [0.5, 0.5, 0.5],
                [-1.0, 0.0, 1.0],
                [4.0, 1.0, 0.0],
            ]
        )
        targets = np.array([2, 0, 0, 1])
        mask = np.array([True, True, False, True])
        # Independent oracle: direct softmax cross-entropy per masked row.
        expected = 0.0
        for t in (0, 1, 3):
            row = logits[t]
            expected += -math.log(math.exp(row[targets[t]]) / sum(math.exp(v) for v in row))
        expected /= 3
        assert sft_loss(SftBatch(logits, targets, mask)) == pytest.approx(expected, abs=1e-10)

    def test_bitwise_invariance_to_unmasked_logits(self, rng):
        logits = rng.normal(size=(6, 5))
        targets = rng.integers(0, 5, size=6)
        mask = np.array([True, False, True, False, True, False])
        baseline = sft_loss(SftBatch(logits, targets, mask))
        perturbed = logits.copy()
        perturbed[~mask] += rng.normal(size=(3, 5)) * 100
        assert sft_loss(SftBatch(perturbed, targets, mask)) == baseline

    def test_no_masked_positions_rejected(self):
        batch = SftBatch(np.zeros((2, 3)), np.zeros(2, dtype=int), np.array([False, False]))
        with pytest.raises(ValueError, match="mask"):
            sft_loss(batch)

    def test_target_out_of_range_rejected(self):
        batch = SftBatch(np.zeros((2, 3)), np.array([0, 3]), np.array([True, True]))
        with pytest.raises(ValueError, match="target"):
            sft_loss(batch)


def apportion_counts(total: int, fractions: tuple[float, ...]) -> tuple[int, ...]:
    """Largest-remainder apportionment of ``total`` over ``fractions``."""
    raw = [total * f for f in fractions]
    counts = [math.floor(v) for v in raw]
    leftover = total - sum(counts)
    order = sorted(range(len(raw)), key=lambda i: raw[i] - counts[i], reverse=True)
    for i in order[:leftover]:
        counts[i] += 1
    return tuple(counts)


# Published class shares of the 2,254-image grading set, most-to-least:
# grade 0 52.6%, grade 1 13.0%, grade 2 22.7%, grade 3 7.4%, grade 4 4.3%.
DR_TOTAL = 2254
DR_FRACTIONS = (0.526, 0.130, 0.227, 0.074, 0.043)


class TestInverseFrequencyWeights:
    def test_equal_counts_give_unit_weights(self):
        assert inverse_frequency_weights([10, 10, 10]).weights == (1.0, 1.0, 1.0)

    def test_two_class_fixture(self):
        weights = inverse_frequency_weights([1, 9]).weights
        assert weights[0] == pytest.approx(5.0, abs=1e-12)
        assert weights[1] == pytest.approx(0.55555555555, abs=1e-9)

    def test_grading_distribution_fixture(self):
        counts = apportion_counts(DR_TOTAL, DR_FRACTIONS)
        assert sum(counts) == DR_TOTAL
        assert counts == (1185, 293, 512, 167, 97)
        result = inverse_frequency_weights(counts)
        expected_approx = (0.380, 1.539, 0.880, 2.700, 4.648)
        for got, want in zip(result.weights, expected_approx):
            assert got == pytest.approx(want, abs=1e-3)
        # Exact identity: sum_c w_c * n_c == N
        weighted_total = sum(w * n for w, n in zip(result.weights, counts))
        assert weighted_total == pytest.approx(DR_TOTAL, abs=1e-9)

    def test_zero_count_rejected(self):
        with pytest.raises(ValueError):
            inverse_frequency_weights([5, 0, 3])

    @given(st.lists(st.integers(min_value=1, max_value=5000), min_size=1, max_size=10))
    def test_weighting_identity_property(self, counts):
        result = inverse_frequency_weights(counts)
        weighted_total = sum(w * n for w, n in zip(result.weights, counts))
        assert weighted_total == pytest.approx(sum(counts), abs=1e-9)
        assert all(math.isfinite(w) and w > 0 for w in result.weights)
