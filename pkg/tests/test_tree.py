import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from numinv.canonical import decompose, measure_to_H, random_measure
from numinv.tree import (
    MartingaleClass,
    TreeError,
    backward_expectation,
    build_tree,
    conditional_expectation,
    cumulate,
    dual_optional_projection,
    first_argmin_time,
    is_nondecreasing,
    is_stopping_time,
    lattice_tree,
    martingale_class,
    random_time,
    random_tree,
)
from strategies import trees


def binary(p=0.5):
    return build_tree({"nodes": [{"id": "r"}, {"id": "u", "parent": "r", "prob": p}, {"id": "d", "parent": "r", "prob": 1 - p}]})


# --- construction -----------------------------------------------------------


def test_one_period_binary():
    t = binary()
    assert t.n_nodes == 3 and t.horizon == 1
    assert t.labels == ("r", "u", "d")


def test_two_period_lattice():
    t = lattice_tree(2, [0.5, 0.5])
    assert t.n_nodes == 7
    assert math.fsum(t.prob[t.leaves]) == pytest.approx(1.0, abs=1e-15)


def test_lattice_per_step_probabilities():
    t = build_tree({"lattice": {"steps": 2, "probs": [[0.3, 0.7], [0.1, 0.2, 0.7]]}})
    assert t.n_nodes == 1 + 2 + 6
    np.testing.assert_allclose(np.sort(t.prob[t.leaves]), np.sort(np.outer([0.3, 0.7], [0.1, 0.2, 0.7]).ravel()))


def test_transition_sum_rejected():
    with pytest.raises(TreeError, match="sum"):
        build_tree({"nodes": [{"id": "r"}, {"id": "u", "parent": "r", "prob": 0.5}, {"id": "d", "parent": "r", "prob": 0.4}]})


@pytest.mark.parametrize(
    "nodes",
    [
        [{"id": "r"}, {"id": "u", "parent": "x", "prob": 1.0}],  # orphan
        [{"id": "r"}, {"id": "s"}],  # two roots
        [{"id": "r"}, {"id": "r", "parent": "r", "prob": 1.0}],  # duplicate id
        [{"id": "r"}, {"id": "u", "parent": "r", "prob": 0.5}, {"id": "d", "parent": "r", "prob": 0.5}, {"id": "uu", "parent": "u", "prob": 1.0}],
        [{"id": "r"}, {"id": "u", "parent": "r", "prob": 0.0}, {"id": "d", "parent": "r", "prob": 1.0}],
    ],
)
def test_invalid_trees(nodes):
    with pytest.raises(TreeError):
        build_tree({"nodes": nodes})


def test_node_cap():
    with pytest.raises(TreeError, match="cap|more than"):
        lattice_tree(10, [0.5, 0.5], max_nodes=100)


# --- expectations -----------------------------------------------------------


def leaf_sum_oracle(tree, leaf_values, node):
    """E[X | node] by summing over leaves below ``node``."""
    below = [j for j, leaf in enumerate(tree.leaves) if node in tree.path(int(leaf))]
    pl = tree.prob[tree.leaves]
    return math.fsum(pl[j] * leaf_values[j] for j in below) / tree.prob[node]


def test_constant_expectation():
    t = lattice_tree(3, [0.2, 0.3, 0.5])
    np.testing.assert_allclose(backward_expectation(t, np.full(t.leaves.size, 2.5)), 2.5, rtol=1e-15)


def test_binary_expectation():
    assert conditional_expectation(binary(), [2.0, 0.0], 0) == pytest.approx(1.0)


@given(trees())
def test_expectation_matches_leaf_sum(tt):
    tree, rng = tt
    v = rng.normal(size=tree.leaves.size)
    m = backward_expectation(tree, v)
    for node in range(tree.n_nodes):
        assert m[node] == pytest.approx(leaf_sum_oracle(tree, v, node), abs=1e-12)


@given(trees(max_depth=5))
def test_tower_property(tt):
    """Conditioning the martingale of a terminal value at a later time and then earlier changes nothing."""
    tree, rng = tt
    m = backward_expectation(tree, rng.normal(size=tree.leaves.size))
    for t in range(tree.horizon):
        for node in tree.level(t):
            desc = [j for j in range(tree.n_nodes) if tree.time[j] == tree.horizon and node in tree.path(j)]
            for s in range(t + 1, tree.horizon + 1):
                later = {tree.ancestor_at(j, s) for j in desc}
                val = math.fsum(tree.prob[k] * m[k] for k in later) / tree.prob[node]
                assert val == pytest.approx(m[node], abs=1e-12)


# --- martingale classification ----------------------------------------------


def test_martingale_examples():
    t = lattice_tree(3, [0.4, 0.6])
    rng = np.random.default_rng(1)
    m = backward_expectation(t, rng.normal(size=t.leaves.size))
    assert martingale_class(t, m).kind is MartingaleClass.MARTINGALE
    assert martingale_class(t, -t.time.astype(float)).kind is MartingaleClass.SUPERMARTINGALE
    assert martingale_class(t, t.time.astype(float)).kind is MartingaleClass.SUBMARTINGALE
    x = m.copy()
    x[t.level(1)] += [1.0, -1.0]  # +0.4 - 0.6 drift at the root, then opposite drifts below
    assert martingale_class(t, x + np.where(t.time == 2, 5.0, 0.0)).kind is MartingaleClass.NONE


@given(trees())
def test_canonical_L_is_martingale(tt):
    tree, rng = tt
    H = measure_to_H(tree, random_measure(rng, tree, 0.0))
    rep = martingale_class(tree, decompose(tree, H).L)
    assert rep.kind is MartingaleClass.MARTINGALE and rep.max_violation < 1e-10


# --- random times -----------------------------------------------------------


def test_random_time_validation():
    t = lattice_tree(2, [0.5, 0.5])
    with pytest.raises(TreeError):
        random_time(t, [0, 1, 2])
    with pytest.raises(TreeError):
        random_time(t, [0, 1, 2, 3])
    with pytest.raises(TreeError):
        random_time(t, [0, 1, 1.5, 2])


def test_deterministic_time():
    t = lattice_tree(3, [0.3, 0.7])
    H = dual_optional_projection(t, np.full(t.leaves.size, 2))
    dH = t.increments(H)
    np.testing.assert_allclose(dH[t.time == 2], 1.0, rtol=1e-14)
    assert np.all(dH[t.time != 2] == 0)


def test_stopping_time_jumps_are_zero_or_one():
    t = lattice_tree(2, [0.5, 0.5])
    # stop at time 1 after an up move, at time 2 otherwise
    T = np.array([1, 1, 2, 2])
    assert is_stopping_time(t, T)
    dH = t.increments(dual_optional_projection(t, T))
    assert set(np.round(dH, 14)) <= {0.0, 1.0}
    assert dH[1] == 1.0 and dH[2] == 0.0


def test_non_stopping_time_detected():
    t = lattice_tree(2, [0.5, 0.5])
    assert not is_stopping_time(t, [1, 2, 2, 2])  # node 1 cannot tell its leaves apart


def test_argmin_time_identity_exhaustive():
    t = build_tree({"lattice": {"steps": 2, "probs": [0.3, 0.7]}})
    x = np.array([1.0, 0.5, 2.0, 0.7, 0.2, 3.0, 1.5])
    T = first_argmin_time(t, x)
    dH = t.increments(dual_optional_projection(t, T))
    paths = t.leaf_paths()
    pl = t.prob[t.leaves]
    for node in range(t.n_nodes):
        V = np.eye(t.n_nodes)[node]
        lhs = math.fsum(t.prob * V * dH)
        rhs = math.fsum(pl[i] * V[paths[i, T[i]]] for i in range(len(T)))
        assert lhs == pytest.approx(rhs, abs=1e-15)


@given(trees(max_depth=5), st.data())
def test_dual_projection_identity_random(tt, data):
    tree, rng = tt
    T = np.array(data.draw(st.lists(st.integers(0, tree.horizon), min_size=tree.leaves.size, max_size=tree.leaves.size)))
    H = dual_optional_projection(tree, T)
    assert is_nondecreasing(tree, H)
    assert math.fsum(tree.prob[tree.leaves] * H[tree.leaves]) == pytest.approx(1.0, abs=1e-12)
    dH = tree.increments(H)
    paths = tree.leaf_paths()
    hit = paths[np.arange(T.size), T]
    pl = tree.prob[tree.leaves]
    for _ in range(50):
        V = rng.normal(size=tree.n_nodes)
        assert math.fsum(tree.prob * V * dH) == pytest.approx(math.fsum(pl * V[hit]), abs=1e-12)


@given(trees())
def test_cumulate_inverts_increments(tt):
    tree, rng = tt
    x = rng.normal(size=tree.n_nodes)
    np.testing.assert_allclose(cumulate(tree, tree.increments(x)), x, atol=1e-12)
