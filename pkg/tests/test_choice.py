import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import optimize

from numinv import choice
from numinv.choice import (
    FullSimplex,
    InfeasibleError,
    LogRelation,
    Polytope,
    SimplexClass,
    UnboundedError,
    barycenter_oracle,
    enumerate_vertices,
    log_optimal,
    log_relation,
    recover_probability,
    rel_oracle,
    simplex_classify,
)
from numinv.static import DomainError, FiniteSpace, Preference, prefers, rel
from strategies import seeds, spaces


def random_space(rng, n):
    w = rng.dirichlet(np.ones(n)) + 1e-3
    return FiniteSpace(w / w.sum())


# --- vertices ---------------------------------------------------------------


def same_point_sets(a, b, tol=1e-8):
    return len(a) == len(b) and all(np.min(np.max(np.abs(b - p), axis=1)) <= tol for p in a)


def test_box_vertices():
    V = Polytope.box([1.0, 2.0]).vertices
    assert same_point_sets(V, np.array([[0, 0], [1, 0], [0, 2], [1, 2.0]]))


@given(seeds)
def test_vertex_routes_agree(seed):
    """Exhaustive active-set scan and qhull produce the same vertex set."""
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 4))
    A = np.vstack([rng.uniform(0.1, 1.0, (3, n)), -np.eye(n)])
    b = np.concatenate([rng.uniform(0.5, 2.0, 3), np.zeros(n)])
    brute = enumerate_vertices(A, b)
    saved = choice._BRUTE_FORCE_LIMIT
    choice._BRUTE_FORCE_LIMIT = 0
    try:
        hull = enumerate_vertices(A, b)
    finally:
        choice._BRUTE_FORCE_LIMIT = saved
    assert same_point_sets(brute, hull, 1e-7)


def test_polytope_errors():
    with pytest.raises(UnboundedError):
        Polytope.from_halfspaces([[1.0, -1.0]], [1.0])
    with pytest.raises(InfeasibleError):
        Polytope.from_halfspaces([[1.0, 1.0]], [-1.0])
    with pytest.raises(DomainError):
        Polytope.from_vertices([[1.0, -0.5]])


def test_contains():
    tri = Polytope.from_vertices([[2, 0], [0, 2], [1, 1]])
    assert tri.contains([1.0, 1.0]) and tri.contains([1.5, 0.5])
    assert not tri.contains([1.5, 1.5])
    assert Polytope.box([1, 1]).contains([0.5, 1.0])


# --- log-optimal elements ---------------------------------------------------


def test_triangle_against_grid():
    """conv{(2,0),(0,2),(1,1)} with equal weights: grid search over the weight simplex."""
    sp = FiniteSpace(np.array([0.5, 0.5]))
    V = np.array([[2.0, 0.0], [0.0, 2.0], [1.0, 1.0]])
    best, arg = -np.inf, None
    steps = 400
    for i, j in itertools.product(range(steps + 1), repeat=2):
        if i + j > steps:
            continue
        lam = np.array([i, j, steps - i - j]) / steps
        f = lam @ V
        if np.all(f > 0):
            val = 0.5 * np.log(f).sum()
            if val > best:
                best, arg = val, f
    opt = log_optimal(sp, V)
    np.testing.assert_allclose(opt.outcome, [1.0, 1.0], atol=1e-9)
    np.testing.assert_allclose(opt.outcome, arg, atol=1e-6)
    assert opt.certified


def test_box_optimum_is_top_corner():
    sp = FiniteSpace(np.array([0.2, 0.3, 0.5]))
    opt = log_optimal(sp, Polytope.box([1.0, 1.0, 1.0]))
    np.testing.assert_allclose(opt.outcome, 1.0, atol=1e-9)


def test_forced_zero_coordinate_uses_maximal_support():
    sp = FiniteSpace(np.array([0.5, 0.5]))
    opt = log_optimal(sp, np.array([[1.0, 0.0], [2.0, 0.0]]))
    np.testing.assert_allclose(opt.outcome, [2.0, 0.0])
    assert list(opt.support) == [True, False]
    assert opt.certificate <= 1e-9


def test_all_zero_set_rejected():
    with pytest.raises(DomainError):
        log_optimal(FiniteSpace.uniform(2), np.zeros((1, 2)))


@given(seeds)
def test_full_simplex_closed_form(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 11))
    sp = random_space(rng, n)
    B = FullSimplex(rng.uniform(0.1, 10.0, n))
    opt = log_optimal(sp, B)
    np.testing.assert_allclose(opt.outcome, sp.weights / B.mu, rtol=1e-8)
    assert max(rel(sp, v, opt.outcome) for v in B.vertices()) <= 1e-9


@given(seeds)
def test_random_polytope_against_slsqp(seed):
    """Independent route: scipy's SLSQP on the vertex weights."""
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 5))
    k = int(rng.integers(2, 7))
    V = rng.uniform(0.05, 3.0, (k, n))
    sp = random_space(rng, n)
    opt = log_optimal(sp, V)
    res = optimize.minimize(
        lambda lam: -sp.weights @ np.log(np.maximum(lam @ V, 1e-300)),
        np.full(k, 1.0 / k),
        method="SLSQP",
        bounds=[(0, 1)] * k,
        constraints=[{"type": "eq", "fun": lambda lam: lam.sum() - 1.0}],
        options={"ftol": 1e-14, "maxiter": 1000},
    )
    ours = sp.weights @ np.log(opt.outcome)
    assert ours >= -res.fun - 1e-9
    assert opt.certificate <= 1e-9
    # vertex certificate implies the whole hull is below the optimum
    for lam in rng.dirichlet(np.ones(k), 20):
        assert rel(sp, lam @ V, opt.outcome) <= 1e-9


# --- full simplices ---------------------------------------------------------


@pytest.mark.parametrize(
    "mu,f,kind",
    [((1, 1), (0.5, 0.5), SimplexClass.MAXIMAL), ((1, 1), (0, 0), SimplexClass.INTERIOR), ((2, 1), (0.3, 0.4), SimplexClass.MAXIMAL),
     ((1, 1), (0.8, 0.8), SimplexClass.EXTERIOR)],
)
def test_simplex_classify_examples(mu, f, kind):
    pos = simplex_classify(FiniteSpace.uniform(2), FullSimplex(np.array(mu, float)), f)
    assert pos.kind is kind
    if np.any(np.asarray(f) > 0):
        np.testing.assert_allclose(pos.scale * pos.maximal, f)
    else:
        assert pos.scale == 0 and pos.maximal is None


@given(seeds)
def test_preference_set_equals_budget_set(seed):
    """{f : rel(f | w/mu) <= 0} and {f : sum mu f <= 1} agree on random probes."""
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 6))
    sp = random_space(rng, n)
    B = FullSimplex(rng.uniform(0.2, 5.0, n))
    f_hat = sp.weights / B.mu
    for f in rng.uniform(0, 2.0 / B.mu, (200, n)):
        a = B.budget(f)
        if abs(a - 1.0) < 1e-9:
            continue
        assert (rel(sp, f, f_hat) <= 0) == (a <= 1.0)


@given(seeds)
def test_fullness_probe(seed):
    """Adding a point outside a full simplex to it destroys the maximality of its optimum."""
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 5))
    sp = random_space(rng, n)
    B = FullSimplex(rng.uniform(0.2, 5.0, n))
    f_hat = sp.weights / B.mu
    outside = rng.uniform(0, 2.0 / B.mu)
    outside = outside / B.budget(outside) * rng.uniform(1.05, 2.0)
    C = np.vstack([B.vertices(), outside])
    opt = log_optimal(sp, C)
    assert rel(sp, opt.outcome, f_hat) > 0  # the old optimum is no longer preferred in C
    assert simplex_classify(sp, B, opt.outcome).kind is SimplexClass.EXTERIOR


# --- probability recovery ---------------------------------------------------


def test_recover_example():
    sp = FiniteSpace(np.array([0.2, 0.8]))
    rep = recover_probability(rel_oracle(sp), 2, rng=0)
    assert rep.ok
    np.testing.assert_allclose(rep.weights, [0.2, 0.8], atol=1e-8)


def test_recover_uniform():
    rep = recover_probability(rel_oracle(FiniteSpace.uniform(4)), 4, rng=1)
    assert rep.ok
    np.testing.assert_allclose(rep.weights, 0.25, atol=1e-8)


def test_barycenter_oracle_flagged():
    rep = recover_probability(barycenter_oracle, 3, rng=2)
    assert not rep.ok
    assert any("not maximal" in v for v in rep.violations)


def test_inconsistent_oracle_fails_regeneration():
    """Maximal on the reference simplex but answers a different probability elsewhere."""
    sp, other = FiniteSpace(np.array([0.3, 0.7])), FiniteSpace(np.array([0.6, 0.4]))

    def oracle(B):
        chosen = sp if np.allclose(B.mu, B.mu[0]) else other
        return chosen.weights / B.mu

    rep = recover_probability(oracle, 2, rng=3)
    assert not rep.ok
    assert any("regenerate" in v for v in rep.violations)


@given(spaces(min_atoms=2, max_atoms=6), seeds)
def test_recovery_round_trip(sp, seed):
    rep = recover_probability(rel_oracle(sp), sp.n, rng=seed, n_checks=5)
    assert rep.ok
    np.testing.assert_allclose(rep.weights, sp.weights, atol=1e-8)


# --- log comparison ---------------------------------------------------------


def test_log_relation_examples():
    sp = FiniteSpace(np.array([0.5, 0.5]))
    assert log_relation(sp, [0.5, 1.0], [1.0, 1.5]) is LogRelation.F_BELOW_G
    assert log_relation(sp, [1.0, 1.5], [0.5, 1.0]) is LogRelation.G_BELOW_F
    assert log_relation(sp, [1.0, 4.0], [2.0, 2.0]) is LogRelation.EQUIVALENT
    with pytest.raises(DomainError):
        log_relation(sp, [0.0, 1.0], [1.0, 1.0])


@given(spaces(max_atoms=5), st.data())
def test_strict_preference_implies_log_order(sp, data):
    vals = st.lists(st.floats(0.1, 10.0), min_size=sp.n, max_size=sp.n)
    f, g = np.array(data.draw(vals)), np.array(data.draw(vals))
    if prefers(sp, f, g) is Preference.STRICTLY_PREFERRED:
        assert log_relation(sp, f, g) is LogRelation.F_BELOW_G
    if prefers(sp, g, f) is Preference.STRICTLY_PREFERRED:
        assert log_relation(sp, f, g) is LogRelation.G_BELOW_F
