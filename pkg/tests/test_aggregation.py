import threading

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from straggler_fl.aggregation import (
    ModelParams,
    PendingUpdate,
    StalenessBuffer,
    aggregate_round,
    fedavg_aggregate,
    staleness_coefficients,
    submit_update,
)
from straggler_fl.errors import DuplicateUpdateError, EmptyAggregationError


def upd(cid, origin, w, n=1):
    return PendingUpdate(cid, ModelParams(np.asarray(w, float), origin), origin, n)


def buffer_of(*updates):
    b = StalenessBuffer()
    for u in updates:
        submit_update(b, u)
    return b


def test_submit_examples():
    b = submit_update(StalenessBuffer(), upd("c1", 3, [1.0]))
    assert len(b) == 1
    with pytest.raises(DuplicateUpdateError):
        submit_update(b, upd("c1", 3, [2.0]))
    assert len(submit_update(b, upd("c1", 4, [2.0]))) == 2


def test_update_validation():
    with pytest.raises(ValueError):
        upd("c", 1, [0.0], n=0)
    with pytest.raises(ValueError):
        upd("c", 0, [0.0])
    with pytest.raises(ValueError):
        ModelParams(np.zeros((2, 2)))


def test_on_time_pair_is_plain_mean():
    u, v = np.array([1.0, 2.0]), np.array([3.0, -2.0])
    model, buf = aggregate_round(buffer_of(upd("a", 4, u, 5), upd("b", 4, v, 5)), 4)
    np.testing.assert_allclose(model.weights, (u + v) / 2)
    assert model.version_round == 5 and len(buf) == 0


def test_stale_update_damped_when_within_cap():
    # t - t_k = 2 survives only with a cap above 2
    w = np.array([4.0, -8.0])
    model, _ = aggregate_round(buffer_of(upd("a", 2, w)), 4, tau=3)
    np.testing.assert_allclose(model.weights, 0.5 * w)


def test_tau_two_discards_two_round_old_update():
    buf = buffer_of(upd("a", 2, [1.0]))
    with pytest.raises(EmptyAggregationError):
        aggregate_round(buf, 4, tau=2)
    assert len(buf) == 0


def test_one_round_late_update_weight():
    model, _ = aggregate_round(buffer_of(upd("a", 3, [1.0]), upd("b", 4, [1.0])), 4)
    # (3/4)(1/2) + (4/4)(1/2)
    assert model.weights[0] == pytest.approx(0.875)


def test_renormalize_flag():
    model, _ = aggregate_round(buffer_of(upd("a", 3, [2.0]), upd("b", 4, [2.0])), 4, renormalize=True)
    assert model.weights[0] == pytest.approx(2.0)


def test_fedavg_examples():
    u, v = np.array([1.0, 0.0]), np.array([0.0, 1.0])
    np.testing.assert_array_equal(fedavg_aggregate([upd("a", 1, u, 7)]).weights, u)
    np.testing.assert_allclose(fedavg_aggregate([upd("a", 1, u, 1), upd("b", 1, v, 3)]).weights, 0.25 * u + 0.75 * v)
    np.testing.assert_allclose(fedavg_aggregate([upd("a", 1, u, 2), upd("b", 1, v, 2)]).weights, (u + v) / 2)
    with pytest.raises(EmptyAggregationError):
        fedavg_aggregate([])


def test_layout_mismatch_rejected():
    with pytest.raises(ValueError):
        fedavg_aggregate([upd("a", 1, [1.0]), upd("b", 1, [1.0, 2.0])])


def test_future_update_rejected():
    with pytest.raises(ValueError):
        staleness_coefficients([upd("a", 5, [1.0])], 4)


def random_updates(rng, t, k, stale_max=0, dim=5):
    return [
        upd(f"c{i}", t - int(rng.integers(0, stale_max + 1)), rng.normal(size=dim), int(rng.integers(1, 50)))
        for i in range(k)
    ]


def test_reduction_to_fedavg_on_100_buffers():
    rng = np.random.default_rng(42)
    for _ in range(100):
        t = int(rng.integers(1, 40))
        ups = random_updates(rng, t, int(rng.integers(1, 12)))
        fl, _ = aggregate_round(buffer_of(*ups), t)
        fa = fedavg_aggregate(ups)
        np.testing.assert_allclose(fl.weights, fa.weights, rtol=1e-9, atol=1e-12)


@settings(max_examples=150, deadline=None)
@given(st.integers(0, 2**31), st.integers(2, 40), st.integers(1, 10), st.integers(1, 4))
def test_coefficient_sum_and_discard(seed, t, k, tau):
    rng = np.random.default_rng(seed)
    ups = random_updates(rng, t, k, stale_max=min(t - 1, 4))
    pairs = staleness_coefficients(ups, t, tau)
    kept = {u.key for u, _ in pairs}
    assert kept == {u.key for u in ups if t - u.origin_round < tau}
    if pairs:
        total = sum(c for _, c in pairs)
        all_on_time = all(u.origin_round == t for u, _ in pairs)
        assert total <= 1 + 1e-12
        assert (abs(total - 1) < 1e-12) == all_on_time
        for u, c in pairs:
            share = u.cardinality / sum(p.cardinality for p, _ in pairs)
            assert c <= share + 1e-15


@given(st.integers(0, 2**31), st.integers(3, 30))
def test_lower_tau_never_keeps_more(seed, t):
    ups = random_updates(np.random.default_rng(seed), t, 8, stale_max=min(t - 1, 5))
    sizes = [len(staleness_coefficients(ups, t, tau)) for tau in range(1, 7)]
    assert sizes == sorted(sizes)


def test_order_insensitive():
    rng = np.random.default_rng(9)
    ups = random_updates(rng, 10, 6, stale_max=1)
    a, _ = aggregate_round(buffer_of(*ups), 10)
    b, _ = aggregate_round(buffer_of(*reversed(ups)), 10)
    np.testing.assert_array_equal(a.weights, b.weights)


def test_concurrent_submissions():
    buf = StalenessBuffer()
    ups = [upd(f"c{i}", 1, [float(i)]) for i in range(200)]

    def push(chunk):
        for u in chunk:
            buf.submit(u)

    threads = [threading.Thread(target=push, args=(ups[i::4],)) for i in range(4)]
    for th in threads:
        th.start()
    for th in threads:
        th.join()
    assert len(buf) == 200 and len(buf.drain()) == 200 and len(buf) == 0
