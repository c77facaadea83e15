import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from sklearn.base import clone
from sklearn.metrics import calinski_harabasz_score

from oracles import blobs, brute_dbscan, core_partition, matches_oracle
from straggler_fl.clustering import (
    DBSCAN,
    OUTLIER,
    ClusterAssignment,
    GridSearchDBSCAN,
    ch_index,
    cluster_dump,
    dbscan,
    epsilon_grid,
    sample_from_clusters,
    select_epsilon,
    sort_clusters,
)
from straggler_fl.errors import EmptyInputError, InconsistentStateError, UndefinedIndexError
from straggler_fl.features import ClientFeatures


def test_dbscan_examples():
    labels = dbscan([(0, 0), (0, 0.1), (5, 5)], 0.5, 2)
    assert labels[0] == labels[1] != OUTLIER
    assert labels[2] == OUTLIER
    assert set(dbscan([(1, 1)] * 5, 0.1, 2)) == {0}
    assert list(dbscan([(0, 0), (10, 10)], 0.5, 2)) == [OUTLIER, OUTLIER]


def test_dbscan_empty():
    with pytest.raises(EmptyInputError):
        dbscan([], 0.5)


def test_dbscan_matches_oracle_on_random_instances():
    rng = np.random.default_rng(7)
    for _ in range(200):
        n = int(rng.integers(1, 13))
        pts = rng.uniform(0, 1, size=(n, 2))
        eps = float(rng.uniform(0.05, 0.5))
        ms = int(rng.integers(1, 4))
        assert matches_oracle(dbscan(pts, eps, ms), pts.tolist(), eps, ms)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_dbscan_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 13))
    pts = rng.uniform(0, 1, size=(n, 2))
    eps = float(rng.uniform(0.1, 0.4))
    perm = rng.permutation(n)
    a = dbscan(pts, eps, 2)
    b = dbscan(pts[perm], eps, 2)
    unpermuted = np.empty_like(b)
    unpermuted[perm] = b
    assert core_partition(a, pts.tolist(), eps, 2) == core_partition(unpermuted, pts.tolist(), eps, 2)
    assert set(np.flatnonzero(a == OUTLIER)) == set(np.flatnonzero(unpermuted == OUTLIER))


def test_oracle_itself_on_known_case():
    comps, border, noise = brute_dbscan([(0, 0), (0, 1), (0, 2), (9, 9)], 1.0, 3)
    assert comps == [frozenset({1})]
    assert border == {0: {0}, 2: {0}}
    assert noise == {3}


def test_ch_index_matches_reference():
    pts = np.array([(0, 0), (0, 0.01), (9, 9), (9, 9.01)])
    labels = [0, 0, 1, 1]
    score = ch_index(pts, labels)
    assert score == pytest.approx(calinski_harabasz_score(pts, labels), rel=1e-12)
    assert score > 1e5
    rng = np.random.default_rng(3)
    for _ in range(20):
        X = rng.normal(size=(15, 2))
        lab = rng.integers(0, 3, size=15)
        if len(set(lab)) > 1:
            assert ch_index(X, lab) == pytest.approx(calinski_harabasz_score(X, lab), rel=1e-9)


def test_ch_index_single_cluster_undefined():
    with pytest.raises(UndefinedIndexError):
        ch_index([(0, 0), (1, 1), (2, 2)], [0, 0, 0])
    with pytest.raises(UndefinedIndexError):
        ch_index([(0, 0), (1, 1)], [0, 1])


def test_ch_random_labels_score_below_truth():
    rng = np.random.default_rng(11)
    X, truth = blobs(rng, 3)
    shuffled = rng.permutation(truth)
    assert ch_index(X, shuffled) < ch_index(X, truth)


def test_select_epsilon_recovers_two_blobs_on_given_grid():
    rng = np.random.default_rng(5)
    X, truth = blobs(rng, 2)
    result = select_epsilon(X * 10, np.linspace(0.1, 5.0, 25))
    assert result.n_groups == 2


def test_select_epsilon_picks_the_maximum():
    rng = np.random.default_rng(2)
    X, _ = blobs(rng, 3)
    cands = epsilon_grid(X)
    result = select_epsilon(X, cands)
    for eps in cands:
        labels = dbscan(X, eps, 2)
        labels[labels == OUTLIER] = labels.max() + 1
        try:
            assert result.ch_score >= ch_index(X, labels)
        except UndefinedIndexError:
            pass


def test_select_epsilon_fallbacks():
    one = select_epsilon([(0.3, 0.4)])
    assert one.n_groups == 1 and one.ch_score == -math.inf
    same = select_epsilon([(0.2, 0.2)] * 4, [0.1, 0.5])
    assert same.n_groups == 1 and same.epsilon == 0.5


def test_epsilon_grid_deciles():
    pts = np.array([[0.0, 0.0], [1.0, 0.0], [3.0, 0.0]])
    # distances 1, 2, 3
    assert epsilon_grid(pts) == pytest.approx(list(np.quantile([1, 2, 3], np.linspace(0.1, 0.9, 9))))
    assert epsilon_grid([(1, 1), (1, 1)]) == []


def feat(cid, total, inv=0):
    return ClientFeatures(cid, total, 0.0, total, inv)


def test_sort_clusters_by_mean_total_ema():
    a = ClusterAssignment({"a1": 0, "a2": 0, "b1": 1}, 0.1, 1.0)
    groups = sort_clusters(a, [feat("a1", 40), feat("a2", 40), feat("b1", 12)])
    assert groups == [["b1"], ["a1", "a2"]]
    single = ClusterAssignment({"x": 0}, 0.1, -math.inf)
    assert sort_clusters(single, [feat("x", 3)]) == [["x"]]


def test_sort_clusters_breaks_ties_by_smallest_id():
    a = ClusterAssignment({"c": 0, "d": 0, "a": 1, "b": 2}, 0.1, 1.0)
    feats = [feat("c", 5), feat("d", 5), feat("a", 9), feat("b", 5)]
    assert sort_clusters(a, feats) == [["b"], ["c", "d"], ["a"]]


def test_sort_clusters_orders_members_by_invocations():
    a = ClusterAssignment({"a": 0, "b": 0, "c": 0}, 0.1, 1.0)
    assert sort_clusters(a, [feat("a", 1, 5), feat("b", 1, 2), feat("c", 1, 2)]) == [["b", "c", "a"]]


def test_sort_clusters_missing_features():
    with pytest.raises(InconsistentStateError):
        sort_clusters(ClusterAssignment({"a": 0}, 0.1, 1.0), [])


def test_sample_from_clusters_examples():
    groups = [["f1", "f2", "f3"], ["s1", "s2", "s3"]]
    assert sample_from_clusters(groups, 3, 1, 10) == ["f1", "f2", "f3"]
    assert sample_from_clusters(groups, 3, 6, 10) == ["s1", "s2", "s3"]
    assert sample_from_clusters(groups, 10, 6, 10) == ["s1", "s2", "s3", "f1", "f2", "f3"]
    assert sample_from_clusters(groups, 4, 10, 10) == ["s1", "s2", "s3", "f1"]


@given(
    st.lists(st.lists(st.integers(0, 999), min_size=1, max_size=5, unique=True), min_size=1, max_size=6),
    st.integers(0, 40),
    st.data(),
)
def test_sample_no_duplicates_and_only_members(raw, count, data):
    seen, groups = set(), []
    for g in raw:
        g = [c for c in g if c not in seen]
        seen.update(g)
        if g:
            groups.append(g)
    max_rounds = data.draw(st.integers(1, 50))
    r = data.draw(st.integers(1, max_rounds))
    picked = sample_from_clusters(groups, count, r, max_rounds)
    assert len(picked) == len(set(picked)) == min(count, len(seen))
    assert set(picked) <= seen


@given(st.integers(1, 8), st.integers(1, 4))
def test_every_group_gets_to_start(n_groups, per_group):
    max_rounds = n_groups * 3
    groups = [[(g, i) for i in range(per_group)] for g in range(n_groups)]
    starts = {sample_from_clusters(groups, per_group, r, max_rounds)[0][0] for r in range(1, max_rounds + 1)}
    assert starts == set(range(n_groups))


def test_cluster_dump_is_json_safe():
    import json

    a = ClusterAssignment({"a": 0}, 0.5, -math.inf)
    assert json.loads(json.dumps(cluster_dump(a, [["a"]]))) == {"epsilon": 0.5, "ch_score": None, "clusters": [["a"]]}


def test_estimators_follow_sklearn_api():
    X = np.array([(0, 0), (0, 0.1), (5, 5), (5, 5.1), (9, 0)])
    est = DBSCAN(eps=0.5, min_samples=2)
    assert est.get_params() == {"eps": 0.5, "min_samples": 2}
    assert list(est.fit_predict(X)) == [0, 0, 1, 1, OUTLIER]
    assert list(est.core_sample_indices_) == [0, 1, 2, 3]
    grid = clone(GridSearchDBSCAN(candidates=[0.05, 0.5, 8.0]))
    grid.fit(X)
    assert grid.eps_ == 0.5 and grid.n_clusters_ == 3
