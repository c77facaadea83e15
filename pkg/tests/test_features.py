import pytest
from hypothesis import given, strategies as st

from straggler_fl.behavior import ClientRecord
from straggler_fl.errors import EmptySeriesError, InvalidHistoryError, NoHistoryError
from straggler_fl.features import ema, features_for, missed_round_ema


def test_ema_examples():
    assert ema([10.0], 0.5) == 10.0
    assert ema([10.0, 20.0], 0.5) == 15.0


@given(st.floats(-1e6, 1e6), st.integers(1, 20), st.floats(0.01, 1.0))
def test_ema_constant_series(c, n, alpha):
    assert ema([c] * n, alpha) == pytest.approx(c, rel=1e-12, abs=1e-9)


def test_ema_empty():
    with pytest.raises(EmptySeriesError):
        ema([], 0.5)


@given(
    st.lists(st.floats(0, 100), min_size=1, max_size=10),
    st.floats(0, 100),
    st.floats(0.05, 0.95),
)
def test_appending_moves_ema_toward_value(values, v, alpha):
    before = ema(values, alpha)
    after = ema(values + [v], alpha)
    assert abs(after - v) <= abs(before - v)
    if before != v:
        assert abs(after - v) < abs(before - v)


def test_missed_round_ema_examples():
    assert missed_round_ema([], 10) == 0.0
    assert missed_round_ema([2], 4, 0.5) == 0.5
    assert missed_round_ema([2], 8, 0.5) == 0.25
    assert missed_round_ema([2, 4], 8, 0.5) == 0.375


def test_missed_round_ema_rejects_unsorted():
    with pytest.raises(InvalidHistoryError):
        missed_round_ema([4, 2], 8)


@given(
    st.lists(st.integers(1, 40), min_size=1, max_size=8, unique=True).map(sorted),
    st.integers(0, 30),
)
def test_penalty_decays_with_progress(missed, extra):
    r = missed[-1] + extra
    assert missed_round_ema(missed, r + 1) <= missed_round_ema(missed, r)


def test_features_examples():
    f = features_for(ClientRecord("c", training_times=(10.0,), invocation_count=1), 5, 0.5, 60)
    assert f.total_ema == 10.0
    f = features_for(ClientRecord("c", training_times=(10.0,), missed_rounds=(2,), invocation_count=2), 4, 0.5, 60)
    assert f.total_ema == 40.0
    f = features_for(ClientRecord("c", training_times=(10.0, 20.0), invocation_count=2), 5, 0.5, 60)
    assert f.total_ema == 15.0


def test_features_require_history():
    with pytest.raises(NoHistoryError):
        features_for(ClientRecord("c"), 3)


def test_never_finished_client_scores_as_slowest():
    f = features_for(ClientRecord("c", missed_rounds=(1,), invocation_count=1), 3, 0.5, 60.0)
    assert f.training_ema == 60.0


@given(
    st.lists(st.floats(0.1, 100), min_size=1, max_size=6),
    st.lists(st.integers(1, 20), max_size=5, unique=True).map(sorted),
    st.floats(1, 100),
)
def test_total_ema_bounds(times, missed, max_t):
    f = features_for(ClientRecord("c", tuple(times), tuple(missed), invocation_count=1), 20, 0.5, max_t)
    assert f.training_ema > 0
    assert 0 <= f.missed_round_ema <= 1
    assert f.total_ema == pytest.approx(f.training_ema + f.missed_round_ema * max_t)
    assert f.total_ema >= f.training_ema
    assert (f.total_ema == f.training_ema) == (not missed)
