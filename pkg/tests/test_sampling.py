import numpy as np
import pytest

from quotefinder.corpus import QuoteQuery, SourceDocument, SourceParagraph
from quotefinder.errors import ValidationError
from quotefinder.sampling import (
    ListwiseExample,
    SamplingConfig,
    assemble_example,
    derive_seed,
    negative_weights,
    sample_negatives,
)


def doc_with(paragraph_tokens, doc_id="d"):
    return SourceDocument(
        id=doc_id, date="2012-01-01",
        paragraphs=tuple(
            SourceParagraph(i, tuple(t), " ".join(t)) for i, t in enumerate(paragraph_tokens)
        ),
    )


def plain_doc(n=5, width=4):
    return doc_with([[f"w{i}{j}" for j in range(width)] for i in range(n)])


QUERY = QuoteQuery(title=("t",), left_context=("c1", "c2"))


class TestSampleNegatives:
    def test_uniform_exhaustive(self):
        doc = plain_doc(5)
        cfg = SamplingConfig(n=4, scheme="uniform", seed=0)
        assert sorted(sample_negatives(doc, 2, cfg, QUERY)) == [0, 1, 3, 4]

    def test_positional_weights_peak_adjacent(self):
        doc = plain_doc(5)
        weights = negative_weights(doc, 2, "positional", QUERY)
        # weight(i) = 1 / (1 + |i - 2|)
        assert weights == {0: pytest.approx(1 / 3), 1: pytest.approx(1 / 2),
                           3: pytest.approx(1 / 2), 4: pytest.approx(1 / 3)}
        top = {i for i, w in weights.items() if w == max(weights.values())}
        assert top == {1, 3}

    def test_tfidf_weights_peak_on_query_copy(self):
        query = QuoteQuery(title=("alpha", "beta"), left_context=("gamma",))
        doc = doc_with([
            ["zeta", "eta"],
            ["alpha", "beta", "gamma"],  # identical bag to the query
            ["theta", "iota"],
            ["alpha", "other", "words", "here"],
        ])
        weights = negative_weights(doc, 0, "tfidf", query)
        assert max(weights, key=weights.get) == 1
        assert weights[1] == pytest.approx(1.0)
        assert weights[2] == pytest.approx(1e-6)  # floored: no shared terms

    def test_deterministic_given_seed(self):
        doc = plain_doc(9)
        cfg = SamplingConfig(n=3, scheme="uniform", seed=123)
        assert sample_negatives(doc, 4, cfg, QUERY) == sample_negatives(doc, 4, cfg, QUERY)

    def test_fewer_candidates_than_n_uses_all(self):
        doc = plain_doc(3)
        cfg = SamplingConfig(n=10, scheme="uniform", seed=0)
        assert sorted(sample_negatives(doc, 1, cfg, QUERY)) == [0, 2]

    def test_single_paragraph_warns_and_returns_empty(self):
        doc = plain_doc(1)
        cfg = SamplingConfig(n=2, seed=0)
        with pytest.warns(UserWarning, match="single paragraph"):
            assert sample_negatives(doc, 0, cfg, QUERY) == []

    def test_positive_never_sampled(self):
        doc = plain_doc(6)
        for seed in range(300):
            cfg = SamplingConfig(n=3, scheme="positional", seed=seed)
            assert 2 not in sample_negatives(doc, 2, cfg, QUERY)

    def test_uniform_frequencies_binomial(self):
        # 10,000 seeded draws, n=1 over 4 candidates: each within 3 sigma of 1/4
        doc = plain_doc(5)
        counts = {i: 0 for i in range(5) if i != 2}
        draws = 10_000
        for seed in range(draws):
            cfg = SamplingConfig(n=1, scheme="uniform", seed=seed)
            picked = sample_negatives(doc, 2, cfg, QUERY)
            counts[picked[0]] += 1
        sigma = np.sqrt(0.25 * 0.75 / draws)
        for i, count in counts.items():
            assert abs(count / draws - 0.25) < 3 * sigma, (i, count)

    def test_invalid_config(self):
        with pytest.raises(ValidationError):
            SamplingConfig(n=0)
        with pytest.raises(ValidationError):
            SamplingConfig(n=1, scheme="mystery")


class TestAssembleExample:
    def test_counts(self):
        doc = plain_doc(10)
        example = assemble_example(QUERY, doc, 4, (0, 1), SamplingConfig(n=3, seed=5))
        assert len(example.paragraphs) == 4
        assert example.paragraphs[example.positive_position] == 4
        assert len(set(example.paragraphs)) == 4

    def test_same_seed_identical(self):
        doc = plain_doc(10)
        cfg = SamplingConfig(n=3, seed=11)
        assert assemble_example(QUERY, doc, 4, (0, 1), cfg) == \
            assemble_example(QUERY, doc, 4, (0, 1), cfg)

    def test_paper_best_setting_yields_13_entries(self):
        doc = plain_doc(43)
        example = assemble_example(QUERY, doc, 7, (0, 1), SamplingConfig(n=12, seed=0))
        assert len(example.paragraphs) == 13

    def test_positive_position_varies_across_seeds(self):
        doc = plain_doc(10)
        positions = {
            assemble_example(QUERY, doc, 4, (0, 1), SamplingConfig(n=3, seed=s)).positive_position
            for s in range(50)
        }
        assert len(positions) > 1

    def test_listwise_example_invariants(self):
        with pytest.raises(ValidationError):
            ListwiseExample(QUERY, (1, 1, 2), 0, (0, 0))
        with pytest.raises(ValidationError):
            ListwiseExample(QUERY, (1, 2), 5, (0, 0))


def test_derive_seed_is_stable():
    # blake2b-based, stable across processes (unlike the builtin hash)
    assert derive_seed(42, "a1:q0") == derive_seed(42, "a1:q0")
    assert derive_seed(42, "a1:q0") != derive_seed(43, "a1:q0")
    assert derive_seed(42, "a1:q0") != derive_seed(42, "a1:q1")
    assert 0 <= derive_seed(0, "x") < 2**63
