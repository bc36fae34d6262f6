import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fundusrag.metrics import (
    ConfusionMatrix,
    bleu4,
    lcs_length,
    macro_auc_ovr,
    per_class_prf,
    rouge_l,
    rouge_n,
    semantic_similarity,
    tokenize,
    weighted_prf,
)
from oracles import bleu4_oracle, clipped_ngram_precision, macro_auc_oracle, naive_lcs, pair_count_auc

tokens_strategy = st.lists(st.sampled_from("a b c d e f g".split()), min_size=1, max_size=24)


class TestTokenizer:
    def test_lowercase_and_punctuation_split(self):
        assert tokenize("No DR, good.") == ["no", "dr", ",", "good", "."]

    def test_hyphen_and_numbers(self):
        assert tokenize("dot-and-blot 4-2-1") == ["dot", "-", "and", "-", "blot", "4", "-", "2", "-", "1"]

    def test_whitespace_only(self):
        assert tokenize("  \t\n ") == []


class TestBleu4:
    def test_identity_scores_one(self):
        tokens = "a b c d".split()
        assert bleu4(tokens, [tokens]) == 1.0

    def test_identity_holds_below_order_four(self):
        # Vacuous higher orders count as perfect, preserving the identity.
        for text in ("a", "a b", "a b c"):
            tokens = text.split()
            assert bleu4(tokens, [tokens]) == 1.0

    def test_no_overlap_is_epsilon_floored(self):
        score = bleu4("a b c d".split(), ["w x y z".split()])
        assert 0.0 < score <= 1e-8

    def test_clipped_counts_hand_fixture(self):
        cand = "the cat the cat on the mat".split()
        ref = "the cat is on the mat".split()
        detail = bleu4(cand, [ref], return_detail=True)
        # Clipped unigrams: the 3->2, cat 2->1, on 1, mat 1 => 5 of 7.
        assert detail.precisions[0] == pytest.approx(float(Fraction(5, 7)), abs=1e-12)
        assert detail.precisions[1] == pytest.approx(float(Fraction(3, 6)), abs=1e-12)
        assert detail.precisions[2] == pytest.approx(float(Fraction(1, 5)), abs=1e-12)
        assert detail.precisions[3] == 0.0
        assert detail.brevity_penalty == 1.0
        assert clipped_ngram_precision(cand, [ref], 1) == Fraction(5, 7)
        assert detail.score == pytest.approx(bleu4_oracle(cand, [ref]), abs=1e-12)

    def test_multi_reference_clipping_uses_max(self):
        cand = "the the cat".split()
        refs = ["the cat".split(), "the the dog".split()]
        detail = bleu4(cand, refs, return_detail=True)
        assert detail.precisions[0] == pytest.approx(1.0)  # 'the' clipped at 2 via ref2

    def test_brevity_penalty_for_short_candidate(self):
        detail = bleu4("a".split(), ["a b c d e".split()], return_detail=True)
        assert detail.brevity_penalty == pytest.approx(math.exp(1.0 - 5.0), abs=1e-15)
        assert detail.reference_len == 5

    def test_closest_reference_length_tie_prefers_shorter(self):
        detail = bleu4("a b c".split(), ["x y".split(), "p q r s".split()], return_detail=True)
        assert detail.reference_len == 2

    def test_empty_inputs_rejected(self):
        with pytest.raises(ValueError):
            bleu4([], [["a"]])
        with pytest.raises(ValueError):
            bleu4(["a"], [[]])

    @given(tokens_strategy, tokens_strategy)
    def test_range_and_oracle_agreement(self, cand, ref):
        score = bleu4(cand, [ref])
        assert 0.0 <= score <= 1.0
        assert score == pytest.approx(bleu4_oracle(cand, [ref]), abs=1e-12)


class TestRougeN:
    def test_identity(self):
        score = rouge_n("a b c".split(), "a b c".split(), 1)
        assert (score.precision, score.recall, score.f1) == (1.0, 1.0, 1.0)

    def test_disjoint_vocabulary(self):
        score = rouge_n("a b".split(), "x y".split(), 1)
        assert (score.precision, score.recall, score.f1) == (0.0, 0.0, 0.0)

    def test_hand_fixture_two_of_three(self):
        score = rouge_n("a b c".split(), "a c d".split(), 1)
        assert score.precision == pytest.approx(2 / 3, abs=1e-12)
        assert score.recall == pytest.approx(2 / 3, abs=1e-12)
        assert score.f1 == pytest.approx(2 / 3, abs=1e-12)

    def test_multiset_clipping(self):
        score = rouge_n("a a a".split(), "a a b".split(), 1)
        assert score.precision == pytest.approx(2 / 3, abs=1e-12)
        assert score.recall == pytest.approx(2 / 3, abs=1e-12)

    def test_n_longer_than_sequence_rejected(self):
        with pytest.raises(ValueError):
            rouge_n("a b".split(), "a b c".split(), 3)

    @given(tokens_strategy, tokens_strategy)
    def test_bigram_range(self, cand, ref):
        if len(cand) < 2 or len(ref) < 2:
            return
        score = rouge_n(cand, ref, 2)
        for value in (score.precision, score.recall, score.f1):
            assert 0.0 <= value <= 1.0
        assert score.f1 == pytest.approx(
            0.0
            if score.precision + score.recall == 0
            else 2 * score.precision * score.recall / (score.precision + score.recall),
            abs=1e-12,
        )


class TestRougeL:
    def test_identity(self):
        assert rouge_l("a b c".split(), "a b c".split()).f1 == 1.0

    def test_transposition_fixture(self):
        score = rouge_l("a b c d".split(), "a c b d".split())
        assert naive_lcs("a b c d".split(), "a c b d".split()) == 3
        assert (score.precision, score.recall, score.f1) == (0.75, 0.75, 0.75)

    def test_single_shared_token(self):
        score = rouge_l("a x y z".split(), "a p q r".split())
        assert score.precision == 0.25
        assert score.recall == 0.25

    @given(tokens_strategy, tokens_strategy)
    def test_lcs_matches_naive_dp(self, a, b):
        assert lcs_length(a, b) == naive_lcs(a, b)

    @given(tokens_strategy, tokens_strategy)
    def test_relabeling_invariance(self, a, b):
        mapping = {tok: f"T{i}" for i, tok in enumerate("a b c d e f g".split())}
        renamed_a = [mapping[t] for t in a]
        renamed_b = [mapping[t] for t in b]
        assert rouge_l(a, b) == rouge_l(renamed_a, renamed_b)
        if len(a) >= 1 and len(b) >= 1:
            assert rouge_n(a, b, 1) == rouge_n(renamed_a, renamed_b, 1)


class TestSemanticSimilarity:
    def test_identical_strings(self, mock_embedder):
        value = semantic_similarity("fundus report text", "fundus report text", mock_embedder)
        assert value == pytest.approx(1.0, abs=1e-6)

    def test_bag_of_words_permutation(self, mock_embedder):
        assert semantic_similarity("a b", "b a", mock_embedder) == pytest.approx(1.0, abs=1e-9)

    def test_ordering_preserved(self, mock_embedder):
        close = semantic_similarity("moderate retinopathy", "moderate retinopathy lesions", mock_embedder)
        far = semantic_similarity("moderate retinopathy", "zebra quantum", mock_embedder)
        assert close > far

    def test_empty_text_rejected(self, mock_embedder):
        with pytest.raises(ValueError):
            semantic_similarity("", "x", mock_embedder)


class TestWeightedPrf:
    def test_diagonal_matrix_is_perfect(self):
        score = weighted_prf(ConfusionMatrix(np.diag([5, 3, 2])))
        assert (score.precision, score.recall, score.f1) == (1.0, 1.0, 1.0)

    def test_binary_hand_fixture(self):
        cm = ConfusionMatrix([[50, 10], [5, 35]])
        per_class = per_class_prf(cm)
        assert per_class[0].precision == pytest.approx(50 / 55, abs=1e-12)
        assert per_class[0].recall == pytest.approx(50 / 60, abs=1e-12)
        assert per_class[1].precision == pytest.approx(35 / 45, abs=1e-12)
        assert per_class[1].recall == pytest.approx(35 / 40, abs=1e-12)
        weighted = weighted_prf(cm)
        assert weighted.precision == pytest.approx(0.6 * 50 / 55 + 0.4 * 35 / 45, abs=1e-12)
        assert weighted.recall == pytest.approx(0.6 * 50 / 60 + 0.4 * 35 / 40, abs=1e-12)
        f0 = 2 * (50 / 55) * (50 / 60) / ((50 / 55) + (50 / 60))
        f1 = 2 * (35 / 45) * (35 / 40) / ((35 / 45) + (35 / 40))
        assert weighted.f1 == pytest.approx(0.6 * f0 + 0.4 * f1, abs=1e-12)

    def test_single_column_predictor(self):
        cm = ConfusionMatrix([[10, 0, 0], [7, 0, 0], [3, 0, 0]])
        per_class = per_class_prf(cm)
        assert per_class[0].recall == 1.0
        assert per_class[1].recall == 0.0
        assert per_class[2].recall == 0.0

    def test_zero_support_classes_excluded(self):
        cm = ConfusionMatrix([[4, 0, 0], [0, 6, 0], [0, 0, 0]])
        assert weighted_prf(cm).recall == 1.0

    def test_weighted_recall_equals_accuracy(self, rng):
        for _ in range(25):
            size = int(rng.integers(2, 6))
            counts = rng.integers(0, 30, size=(size, size))
            if counts.sum() == 0:
                continue
            cm = ConfusionMatrix(counts)
            accuracy = np.trace(counts) / counts.sum()
            assert weighted_prf(cm).recall == pytest.approx(accuracy, abs=1e-12)

    def test_empty_matrix_rejected(self):
        with pytest.raises(ValueError):
            weighted_prf(ConfusionMatrix(np.zeros((2, 2), dtype=int)))

    def test_from_pairs(self):
        cm = ConfusionMatrix.from_pairs([0, 1, 1], [0, 1, 0], labels=(0, 1))
        assert cm.counts.tolist() == [[1, 0], [1, 1]]


class TestMacroAuc:
    def test_perfect_separation(self):
        labels = [0, 0, 1, 1]
        probs = [[0.9, 0.1], [0.8, 0.2], [0.2, 0.8], [0.1, 0.9]]
        assert macro_auc_ovr(labels, probs) == 1.0

    def test_constant_scores_give_half(self):
        labels = [0, 1, 0, 1]
        probs = [[0.5, 0.5]] * 4
        assert macro_auc_ovr(labels, probs) == 0.5

    def test_six_sample_fixture_matches_pair_counting(self):
        labels = [0, 0, 0, 1, 1, 1]
        probs = [
            [0.9, 0.1],
            [0.6, 0.4],
            [0.4, 0.6],
            [0.4, 0.6],
            [0.2, 0.8],
            [0.6, 0.4],
        ]
        got = macro_auc_ovr(labels, probs)
        assert got == pytest.approx(macro_auc_oracle(labels, probs), abs=1e-12)
        # Independent check of one class by explicit pair counting.
        col1 = [row[1] for row in probs]
        positives = [lab == 1 for lab in labels]
        assert pair_count_auc(col1, positives) == pytest.approx(got, abs=1e-12)

    def test_matches_pair_counting_on_random_multiclass(self, rng):
        for _ in range(20):
            n = int(rng.integers(4, 60))
            n_classes = int(rng.integers(2, 5))
            labels = rng.integers(0, n_classes, size=n).tolist()
            if len(set(labels)) < 2:
                continue
            raw = rng.random((n, n_classes))
            # Quantize to force ties, then renormalize rows.
            raw = np.round(raw * 4) / 4 + 0.01
            probs = raw / raw.sum(axis=1, keepdims=True)
            assert macro_auc_ovr(labels, probs) == pytest.approx(
                macro_auc_oracle(labels, probs), abs=1e-12
            )

    def test_skipped_classes_reported(self):
        labels = [0, 0, 1, 1]
        probs = np.full((4, 3), 1 / 3)
        macro, per_class, skipped = macro_auc_ovr(labels, probs, return_detail=True)
        assert skipped == [2]
        assert set(per_class) == {0, 1}

    def test_single_label_rejected(self):
        with pytest.raises(ValueError, match="distinct"):
            macro_auc_ovr([1, 1, 1], np.full((3, 2), 0.5))

    def test_bad_row_sum_rejected(self):
        with pytest.raises(ValueError, match="sum"):
            macro_auc_ovr([0, 1], [[0.9, 0.3], [0.5, 0.5]])
