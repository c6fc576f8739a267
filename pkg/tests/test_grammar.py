import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from brsm.dense import make_rng
from brsm.grammar import (
    PAPER_8X9,
    BeliefAutomaton,
    Grammar,
    GrammarError,
    GrammarStream,
    bayes_predictions,
    ceiling_exact,
    ceiling_montecarlo,
    gen_grammar,
    load_grammar,
    ngram_predict,
    sample_stream,
)

TWO_BY_FOUR = Grammar(((0, 1, 2, 3), (0, 3, 2, 1)))


def test_builtin_fixture_rows():
    g = Grammar.builtin("paper-8x9")
    assert g.m == 8 and g.n == 9
    assert g.sub_sequences[0] == (2, 4, 0, 7, 8, 1, 6, 1, 8)
    assert g.sub_sequences == PAPER_8X9
    with pytest.raises(GrammarError):
        Grammar.builtin("nope")


def test_text_round_trip(tmp_path):
    g = Grammar.builtin("paper-8x9")
    assert Grammar.from_text(g.to_text()) == g
    path = tmp_path / "g.txt"
    path.write_text("# comment\n0, 1\n\n2, 3\n")
    assert load_grammar(str(path)).sub_sequences == ((0, 1), (2, 3))
    with pytest.raises(GrammarError):
        Grammar.from_text("0, 1\n2\n")
    with pytest.raises(GrammarError):
        Grammar.from_text("0, x\n")
    with pytest.raises(GrammarError):
        Grammar(((0, 12),))


def test_gen_grammar():
    g = gen_grammar(1, 5, make_rng(0))
    assert g.m == 1 and g.n == 5
    assert gen_grammar(8, 9, make_rng(1)) == gen_grammar(8, 9, make_rng(1))
    g = gen_grammar(8, 9, make_rng(2), distinct_prefix=True)
    assert len({s[:2] for s in g.sub_sequences}) == 8
    with pytest.raises(GrammarError):
        gen_grammar(101, 3, make_rng(0), distinct_prefix=True)


def test_sample_stream_examples():
    g = Grammar(((0, 1, 2, 3),))
    np.testing.assert_array_equal(sample_stream(g, 10, make_rng(0)), [0, 1, 2, 3, 0, 1, 2, 3, 0, 1])

    class Forced:
        def __init__(self, picks):
            self.picks = iter(picks)

        def integers(self, high):
            return next(self.picks)

    g = Grammar(((0, 1), (2, 3)))
    np.testing.assert_array_equal(sample_stream(g, 6, Forced([0, 1, 0])), [0, 1, 2, 3, 0, 1])


def test_sample_stream_frequencies_uniform():
    g = Grammar(((0, 1), (2, 3), (4, 5), (6, 7)))
    stream = sample_stream(g, 20_000, make_rng(3))
    firsts = stream[::2]
    counts = np.bincount(firsts, minlength=8)[[0, 2, 4, 6]]
    expected = len(firsts) / 4
    chi2 = np.sum((counts - expected) ** 2 / expected)
    assert chi2 < 16.27  # 99.9% point of chi-square with 3 dof


def test_grammar_stream_batches():
    stream = GrammarStream(TWO_BY_FOUR, 5, make_rng(0))
    rows = np.stack([next(stream) for _ in range(40)], axis=1)
    assert rows.shape == (5, 40)
    for row in rows:
        for start in range(0, 40, 4):
            assert tuple(row[start : start + 4]) in TWO_BY_FOUR.sub_sequences


def test_ceiling_examples():
    t0 = time.perf_counter()
    assert ceiling_exact(Grammar.builtin("paper-8x9")) == pytest.approx(8 / 9, abs=1e-4)
    assert time.perf_counter() - t0 < 10
    assert ceiling_exact(Grammar(((3, 1, 4, 1, 5),))) == pytest.approx(1.0)
    assert ceiling_exact(TWO_BY_FOUR) == pytest.approx(0.875, abs=1e-9)


def test_montecarlo_examples():
    single = ceiling_montecarlo(Grammar(((3, 1, 4),)), 2000, make_rng(0))
    assert single.accuracy == 1.0
    est = ceiling_montecarlo(TWO_BY_FOUR, 100_000, make_rng(1))
    assert abs(est.accuracy - 0.875) <= 3 * est.stderr + 1e-12
    with pytest.raises(ValueError):
        ceiling_montecarlo(TWO_BY_FOUR, 0, make_rng(0))


def test_exact_and_montecarlo_agree_on_random_grammars():
    rng = make_rng(7)
    for _ in range(20):
        m, n = int(rng.integers(1, 5)), int(rng.integers(2, 6))
        g = gen_grammar(m, n, rng, alphabet_size=4)
        exact = ceiling_exact(g)
        est = ceiling_montecarlo(g, 20_000, rng)
        assert 1 / 4 <= exact <= 1.0
        assert abs(est.accuracy - exact) <= 3 * est.stderr + 2e-3


def test_belief_weights_normalized():
    g = Grammar.builtin("paper-8x9")
    auto = BeliefAutomaton(g)
    node = 0
    for label in sample_stream(g, 300, make_rng(2)):
        node = auto.observe(node, int(label))
        assert auto.nodes[node].sum() == pytest.approx(1.0, abs=1e-12)
        assert auto.label_distribution(node).sum() == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(GrammarError):
        auto.observe(0, 9 if 9 not in auto.labels else 99)


def test_no_predictor_beats_the_oracle():
    g = Grammar.builtin("paper-8x9")
    labels = sample_stream(g, 50_000, make_rng(5))
    exact = ceiling_exact(g)
    for order in (1, 2, 3, 5):
        assert ngram_predict(labels, order) <= exact + 0.01
    preds = bayes_predictions(g, labels)
    assert np.mean(preds[1000:] == labels[1000:]) <= exact + 0.01


def test_ngram_examples():
    single = sample_stream(Grammar(((0, 1, 2, 3, 4),)), 2000, make_rng(0))
    assert ngram_predict(single, 3) > 0.99
    two = sample_stream(Grammar(((0, 1), (0, 2))), 20_000, make_rng(1))
    assert ngram_predict(two, 1) <= 0.75 + 0.01
    g = Grammar.builtin("paper-8x9")
    labels = sample_stream(g, 50_000, make_rng(2))
    assert ngram_predict(labels, 4) == pytest.approx(ceiling_exact(g), abs=0.02)
    with pytest.raises(ValueError):
        ngram_predict(labels, 0)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), m=st.integers(1, 4), n=st.integers(1, 5))
def test_ceiling_bounds(seed, m, n):
    g = gen_grammar(m, n, make_rng(seed))
    assert 1 / g.alphabet_size <= ceiling_exact(g) <= 1.0 + 1e-12
