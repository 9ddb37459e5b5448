import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from specnorm.errors import Empty, OutOfRange, SizeMismatch
from specnorm.metrics import empirical_quantile, f1_score


def test_perfect_detection():
    truth = np.array([True, False, True, False])
    m = f1_score(truth, truth)
    assert m.f1 == 1.0 and not m.degenerate


def test_nothing_predicted():
    m = f1_score([False] * 4, [True, False, True, False])
    assert m.f1 == 0.0 and m.precision == 0.0 and m.degenerate


def test_counts_example():
    predicted = [True, True, True, False, False]
    truth = [True, True, False, True, False]
    m = f1_score(predicted, truth)
    assert (m.tp, m.fp, m.fn, m.tn) == (2, 1, 1, 1)
    assert m.precision == pytest.approx(2 / 3) and m.recall == pytest.approx(2 / 3) and m.f1 == pytest.approx(2 / 3)
    assert json.loads(m.to_json())["tp"] == 2


def test_size_mismatch():
    with pytest.raises(SizeMismatch):
        f1_score([True], [True, False])


def test_quantile_examples():
    assert empirical_quantile([1, 2, 3, 4], 0.5) == 2.5
    assert empirical_quantile([3.0, -1.0, 7.5], 1.0) == 7.5
    assert empirical_quantile([3.0, -1.0, 7.5], 0.0) == -1.0
    with pytest.raises(Empty):
        empirical_quantile([], 0.5)
    with pytest.raises(OutOfRange):
        empirical_quantile([1.0], 1.5)


@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=50), st.floats(0.0, 1.0))
def test_quantile_matches_numpy_linear(values, q):
    assert empirical_quantile(values, q) == pytest.approx(np.quantile(values, q, method="linear"), rel=1e-12, abs=1e-9)


@given(st.lists(st.tuples(st.booleans(), st.booleans()), min_size=1, max_size=60))
def test_f1_properties(pairs):
    predicted, truth = map(np.array, zip(*pairs))
    m = f1_score(predicted, truth)
    assert 0.0 <= m.f1 <= 1.0
    assert m.tp + m.fp + m.fn + m.tn == len(pairs)
    if not m.degenerate:
        assert m.f1 == pytest.approx(2 * m.tp / (2 * m.tp + m.fp + m.fn))
