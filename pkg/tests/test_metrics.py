import itertools
import math
from collections import Counter

import numpy as np
import pytest

from quotefinder import synth
from quotefinder.errors import ValidationError
from quotefinder.metrics import (
    QuoteGold,
    QuotePrediction,
    average_precision,
    bow_f1,
    display_context,
    evaluate_run,
    exact_match,
    permutation_test,
    rank_distance_histogram,
    sample_misranked,
    top_k_accuracy,
)


# --- independent brute-force references ------------------------------------


def ref_average_precision(ranking, positives):
    precisions = []
    for p in positives:
        rank = ranking.index(p) + 1
        hits = sum(1 for r in ranking[:rank] if r in set(positives))
        precisions.append(hits / rank)
    return sum(precisions) / len(positives)


def ref_bow_f1(pred, gold):
    pred = [t.lower() for t in pred]
    gold = [t.lower() for t in gold]
    if not pred or not gold:
        return 0.0
    overlap = 0
    remaining = list(gold)
    for token in pred:
        if token in remaining:
            overlap += 1
            remaining.remove(token)
    if overlap == 0:
        return 0.0
    precision = overlap / len(pred)
    recall = overlap / len(gold)
    return 2 * precision * recall / (precision + recall)


class TestAveragePrecision:
    def test_rank_one(self):
        assert average_precision([3, 0, 1], [3]) == 1.0

    def test_rank_two_equals_reciprocal_rank(self):
        assert average_precision([0, 3, 1], [3]) == 0.5

    def test_two_positives(self):
        assert average_precision([4, 0, 2, 1, 3], [4, 2]) == pytest.approx(
            0.8333333333333333, abs=1e-12)

    def test_errors(self):
        with pytest.raises(ValidationError):
            average_precision([0, 1], [])
        with pytest.raises(ValidationError):
            average_precision([0, 1], [7])

    def test_single_positive_is_reciprocal_rank(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            n = int(rng.integers(1, 12))
            ranking = list(rng.permutation(n))
            positive = int(rng.integers(0, n))
            ap = average_precision(ranking, [positive])
            assert ap == 1.0 / (ranking.index(positive) + 1)

    def test_matches_brute_force(self):
        rng = np.random.default_rng(1)
        for _ in range(1000):
            n = int(rng.integers(1, 11))
            ranking = list(rng.permutation(n))
            k = int(rng.integers(1, n + 1))
            positives = list(rng.choice(n, size=k, replace=False))
            assert average_precision(ranking, positives) == pytest.approx(
                ref_average_precision(ranking, positives), abs=1e-9)


class TestTopKAccuracy:
    def test_rank_one_counts_everywhere(self):
        for k in (1, 3, 5):
            assert top_k_accuracy([[2, 0, 1]], [[2]], k) == 1.0

    def test_multi_positive_needs_only_one(self):
        ranking = list(range(10))
        assert top_k_accuracy([ranking], [[3, 8]], 5) == 1.0

    def test_rank_six_misses_top_five(self):
        ranking = list(range(10))
        assert top_k_accuracy([ranking], [[5]], 5) == 0.0

    def test_monotone_in_k(self):
        rng = np.random.default_rng(2)
        rankings, positives = [], []
        for _ in range(50):
            n = int(rng.integers(1, 12))
            rankings.append(list(rng.permutation(n)))
            positives.append([int(rng.integers(0, n))])
        accs = [top_k_accuracy(rankings, positives, k) for k in (1, 3, 5)]
        assert accs[0] <= accs[1] <= accs[2]


class TestSpanMetrics:
    def test_exact_match(self):
        assert exact_match(["A", "b"], ["a", "B"]) == 1
        assert exact_match(["a", "b", "c"], ["a", "b"]) == 0  # over-prediction
        assert exact_match([], ["a"]) == 0

    def test_bow_f1_values(self):
        assert bow_f1(["a", "b"], ["a", "b"]) == 1.0
        assert bow_f1(["a", "b"], ["b", "c"]) == pytest.approx(0.5)
        assert bow_f1(["a"], ["b"]) == 0.0
        assert bow_f1([], ["a"]) == 0.0

    def test_bow_f1_multiset_counts(self):
        # duplicate tokens overlap once per occurrence
        assert bow_f1(["a", "a"], ["a"]) == pytest.approx(2 / 3)

    def test_em_implies_f1(self):
        rng = np.random.default_rng(3)
        for _ in range(200):
            tokens = [f"t{rng.integers(5)}" for _ in range(rng.integers(1, 8))]
            if exact_match(tokens, tokens) == 1:
                assert bow_f1(tokens, tokens) == 1.0

    def test_matches_brute_force(self):
        rng = np.random.default_rng(4)
        for _ in range(1000):
            pred = [f"t{rng.integers(6)}" for _ in range(rng.integers(0, 12))]
            gold = [f"t{rng.integers(6)}" for _ in range(rng.integers(0, 12))]
            assert bow_f1(pred, gold) == pytest.approx(ref_bow_f1(pred, gold), abs=1e-9)


def prediction(quote_id, ranking, tokens_by_paragraph):
    return QuotePrediction(
        quote_id=quote_id,
        ranking=tuple(ranking),
        spans=tuple((0, len(t) - 1) if t else None for t in tokens_by_paragraph),
        span_tokens=tuple(tuple(t) if t else None for t in tokens_by_paragraph),
    )


class TestEvaluateRun:
    def test_perfect_run(self):
        predictions = [prediction("q0", [1, 0, 2], [["x"], ["gold", "span"], ["y"]])]
        gold = [QuoteGold("q0", (1,), ("gold", "span"))]
        ranking_eval, span_eval = evaluate_run(predictions, gold, setting="top")
        assert ranking_eval.map == 1.0
        assert ranking_eval.acc == {1: 1.0, 3: 1.0, 5: 1.0}
        assert span_eval.em == 1.0 and span_eval.f1 == 1.0

    def test_top_setting_wrong_paragraph_scores_zero(self):
        predictions = [prediction("q0", [0, 1], [["junk"], ["gold", "span"]])]
        gold = [QuoteGold("q0", (1,), ("gold", "span"))]
        _, top_eval = evaluate_run(predictions, gold, setting="top")
        assert top_eval.em == 0.0 and top_eval.f1 == 0.0
        _, positive_eval = evaluate_run(predictions, gold, setting="positive")
        assert positive_eval.em == 1.0

    def test_multi_paragraph_concatenation(self):
        predictions = [prediction("q0", [1, 2, 0], [["z"], ["part", "one"], ["part", "two"]])]
        gold = [QuoteGold("q0", (1, 2), ("part", "one", "part", "two"))]
        _, top_eval = evaluate_run(predictions, gold, setting="top")
        assert top_eval.em == 1.0
        _, positive_eval = evaluate_run(predictions, gold, setting="positive")
        assert positive_eval.em == 1.0

    def test_top_setting_concatenates_in_rank_order(self):
        predictions = [prediction("q0", [2, 1, 0], [["z"], ["part", "two"], ["part", "one"]])]
        gold = [QuoteGold("q0", (1, 2), ("part", "one", "part", "two"))]
        _, top_eval = evaluate_run(predictions, gold, setting="top")
        assert top_eval.em == 1.0  # rank order: paragraph 2 then 1

    def test_missing_prediction_names_quote(self):
        with pytest.raises(ValidationError, match="q9"):
            evaluate_run([], [QuoteGold("q9", (0,), ("x",))])

    def test_unknown_setting(self):
        predictions = [prediction("q0", [0], [["x"]])]
        with pytest.raises(ValidationError):
            evaluate_run(predictions, [QuoteGold("q0", (0,), ("x",))], setting="middle")


class TestPermutationTest:
    def test_identical_samples_give_p_one(self):
        a = [0.3, 0.7, 0.2, 0.9]
        assert permutation_test(a, a, iterations=500, seed=0) == 1.0

    def test_constant_shift_is_significant(self):
        rng = np.random.default_rng(5)
        b = rng.normal(size=100)
        a = b + 1.0
        assert permutation_test(a, b, seed=1) <= 0.001

    def test_symmetry(self):
        rng = np.random.default_rng(6)
        a = rng.normal(size=40)
        b = rng.normal(size=40)
        assert permutation_test(a, b, seed=2) == permutation_test(b, a, seed=2)

    def test_deterministic_under_seed(self):
        rng = np.random.default_rng(7)
        a, b = rng.normal(size=30), rng.normal(size=30)
        assert permutation_test(a, b, seed=3) == permutation_test(a, b, seed=3)

    def test_exhaustive_flips_confirm_shift_extremity(self):
        # every sign flip strictly reduces |mean| when all diffs are +1
        diffs = np.ones(10)
        observed = abs(diffs.mean())
        for signs in itertools.product((-1.0, 1.0), repeat=10):
            value = abs((np.array(signs) * diffs).mean())
            if any(s < 0 for s in signs) and any(s > 0 for s in signs):
                assert value < observed
        exact_p = 2 / 2**10  # only the two all-same-sign assignments tie
        sampled = permutation_test(np.ones(10), np.zeros(10), iterations=10000, seed=4)
        assert sampled == pytest.approx(exact_p, abs=5e-3)

    def test_errors(self):
        with pytest.raises(ValidationError):
            permutation_test([1.0], [1.0, 2.0])
        with pytest.raises(ValidationError):
            permutation_test([], [])


class TestRankDistanceHistogram:
    def test_adjacent_distance_one(self):
        predictions = [prediction("q0", [3, 2], [["x"], ["x"], ["x"], ["x"]])]
        gold = [QuoteGold("q0", (2,), ("x",))]
        assert rank_distance_histogram(predictions, gold) == {1: 1.0}

    def test_correct_top_one_excluded(self):
        predictions = [prediction("q0", [2, 3], [["x"]] * 4)]
        gold = [QuoteGold("q0", (2,), ("x",))]
        assert rank_distance_histogram(predictions, gold) == {}

    def test_mass_sums_to_one(self):
        rng = np.random.default_rng(8)
        predictions, gold = [], []
        for k in range(60):
            n = 10
            ranking = list(rng.permutation(n))
            predictions.append(prediction(f"q{k}", ranking, [["x"]] * n))
            gold.append(QuoteGold(f"q{k}", (int(rng.integers(0, n)),), ("x",)))
        histogram = rank_distance_histogram(predictions, gold)
        if histogram:
            assert sum(histogram.values()) == pytest.approx(1.0, abs=1e-12)

    def test_multi_positive_uses_nearest(self):
        predictions = [prediction("q0", [5], [["x"]] * 6)]
        gold = [QuoteGold("q0", (0, 1), ("x", "x"))]
        assert rank_distance_histogram(predictions, gold) == {4: 1.0}


class TestSampleMisranked:
    def setup_corpus(self):
        corpus = synth.generate_corpus(n_sources=4, n_paragraphs=5, n_train_sources=4,
                                       n_dev_sources=0, quotes_per_source=2, seed=0)
        gold = []
        for quote in corpus.quotes:
            doc = corpus.source_for(quote)
            from quotefinder.corpus import gold_span_tokens

            gold.append(QuoteGold(quote.quote_id, quote.positive_paragraphs,
                                  gold_span_tokens(quote, doc)))
        return corpus, gold

    def predictions(self, corpus, gold, wrong_for):
        out = []
        for g in gold:
            positive = g.positives[0]
            if g.quote_id in wrong_for:
                top = (positive + 1) % 5
                ranking = [top, positive] + [i for i in range(5) if i not in (top, positive)]
            else:
                ranking = [positive] + [i for i in range(5) if i != positive]
            out.append(prediction(g.quote_id, ranking, [["x"]] * 5))
        return out

    def test_all_correct_errors(self):
        corpus, gold = self.setup_corpus()
        predictions = self.predictions(corpus, gold, wrong_for=set())
        with pytest.raises(ValidationError, match="0 available"):
            sample_misranked(predictions, gold, corpus, n=1, seed=0)

    def test_deterministic_and_never_positive(self):
        corpus, gold = self.setup_corpus()
        wrong = {g.quote_id for g in gold[:5]}
        predictions = self.predictions(corpus, gold, wrong_for=wrong)
        s1 = sample_misranked(predictions, gold, corpus, n=3, seed=7)
        s2 = sample_misranked(predictions, gold, corpus, n=3, seed=7)
        assert s1 == s2
        by_id = {g.quote_id: g for g in gold}
        for sample in s1:
            assert sample.quote_id in wrong
            assert sample.paragraph_index not in by_id[sample.quote_id].positives
            assert sample.paragraph_text


def test_display_context_rounds_up_to_sentence():
    sentences = [["s0"] * 30, ["s1"] * 50, ["s2"] * 40, ["s3"] * 40]
    text = display_context(sentences, budget=100)
    # needs s3 (40) + s2 (40) + s1 (50) to reach 100; s1 included whole
    assert text.startswith("s1") and text.endswith("s3")
    assert "s0" not in text
