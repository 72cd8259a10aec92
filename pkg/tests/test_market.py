import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import optimize

from numinv import canonical
from numinv.market import (
    InfeasibleStrategyError,
    Market,
    ViabilityError,
    argmax_time_check,
    consumption_optimality,
    constraint_set,
    deflated_drift,
    fraction_stream,
    from_fraction_form,
    numeraire_portfolio,
    optimal_consumption,
    random_market,
    random_strategies,
    random_time_check,
    rel_streams,
    to_fraction_form,
    utility_functional,
    wealth,
    wealth_with_consumption,
)
from numinv.static import DomainError
from numinv.tree import build_tree, first_argmin_time, lattice_tree
from strategies import seeds

UNCONSTRAINED = constraint_set("unconstrained", 1)


def binomial(steps, p=0.5, up=2.0, down=0.5, constraints=None):
    """Non-recombining binomial tree with multiplicative moves."""
    tree = lattice_tree(steps, [p, 1 - p])
    S = np.ones(tree.n_nodes)
    for i in range(1, tree.n_nodes):
        first = tree.children[tree.parent[i]][0] == i
        S[i] = S[tree.parent[i]] * (up if first else down)
    return Market(tree, S, constraints)


def random_measure_market(seed, depth=3, assets=2):
    rng = np.random.default_rng(seed)
    mk = random_market(rng, int(rng.integers(1, depth + 1)), int(rng.integers(1, assets + 1)))
    return mk, rng


# --- wealth -----------------------------------------------------------------


def test_zero_fraction_keeps_capital():
    mk = binomial(2)
    np.testing.assert_allclose(wealth(mk, 3.0, np.zeros((mk.tree.n_nodes, 1))).X, 3.0)


def test_buy_and_hold():
    mk = binomial(2)
    X = wealth(mk, 2.0, np.ones((mk.tree.n_nodes, 1))).X
    np.testing.assert_allclose(X, 2.0 * mk.prices[:, 0])


def test_half_fraction_recursion():
    mk = binomial(2, constraints=UNCONSTRAINED)
    X = wealth(mk, 1.0, np.full((mk.tree.n_nodes, 1), 0.5)).X
    np.testing.assert_allclose(X, [1, 1.5, 0.75, 2.25, 1.125, 1.125, 0.5625])


def test_infeasible_strategies():
    mk = binomial(1)
    with pytest.raises(InfeasibleStrategyError):
        wealth(mk, 1.0, np.full((3, 1), 1.5))  # borrowing outside the long-only simplex
    loose = binomial(1, constraints=UNCONSTRAINED)
    with pytest.raises(InfeasibleStrategyError):
        wealth(loose, 1.0, np.full((3, 1), 3.0))  # wealth negative after the down move
    with pytest.raises(InfeasibleStrategyError):
        wealth(mk, -1.0, np.zeros((3, 1)))


def test_market_validation():
    tree = lattice_tree(1, [0.5, 0.5])
    with pytest.raises(DomainError):
        Market(tree, [1.0, -1.0, 1.0])
    with pytest.raises(DomainError):
        Market(tree, [1.0, 1.0])
    with pytest.raises(DomainError):
        Market(tree, [1.0, 2.0, 0.5], constraint_set("box", 1, lower=0.2, upper=1.0))
    with pytest.raises(DomainError):
        constraint_set("cone", 1)


@given(seeds)
def test_zero_capital_gives_zero_wealth(seed):
    mk, rng = random_measure_market(seed)
    for pi in random_strategies(mk, rng, 5):
        assert np.all(wealth(mk, 0.0, pi).X == 0.0)


# --- numeraire portfolio ----------------------------------------------------


def test_martingale_price_gives_zero_fraction():
    mk = binomial(2, p=1 / 3, constraints=constraint_set("box", 1, lower=0.0, upper=1.0))
    port = numeraire_portfolio(mk, np.ones(mk.tree.n_nodes))
    np.testing.assert_allclose(port.pi[mk.tree.internal], 0.0, atol=1e-9)
    np.testing.assert_allclose(port.X, 1.0, atol=1e-9)
    assert port.certificate <= 1e-9


def test_binary_half_fraction_against_scalar_oracle():
    mk = binomial(2, constraints=UNCONSTRAINED)
    port = numeraire_portfolio(mk, np.ones(mk.tree.n_nodes))
    root = optimize.brentq(lambda p: 0.5 / (1 + p) - 0.25 / (1 - 0.5 * p), 0.0, 1.9)
    assert root == pytest.approx(0.5, abs=1e-12)
    np.testing.assert_allclose(port.pi[mk.tree.internal, 0], root, atol=1e-8)
    assert port.certificate <= 1e-9


def test_reciprocal_price_deflator_gives_unit_numeraire():
    """With 1/S a martingale and L = S0/S the reweighted price is a martingale."""
    mk = binomial(2, p=2 / 3, constraints=UNCONSTRAINED)
    L = 1.0 / mk.prices[:, 0]
    port = numeraire_portfolio(mk, L)
    np.testing.assert_allclose(port.X, 1.0, atol=1e-9)
    assert port.certificate <= 1e-9


def test_arbitrage_is_not_viable():
    tree = lattice_tree(1, [0.5, 0.5])
    mk = Market(tree, [1.0, 2.0, 1.5], UNCONSTRAINED)
    with pytest.raises(ViabilityError):
        numeraire_portfolio(mk, np.ones(3))


def test_bad_deflator_rejected():
    mk = binomial(1)
    with pytest.raises(DomainError):
        numeraire_portfolio(mk, [2.0, 1.0, 1.0])


@given(seeds, st.sampled_from(["simplex", "box"]))
def test_supermartingale_certificate(seed, kind):
    rng = np.random.default_rng(seed)
    mk = random_market(rng, int(rng.integers(1, 4)), int(rng.integers(1, 3)))
    if kind == "box":
        mk = Market(mk.tree, mk.prices, constraint_set("box", mk.d, lower=-0.5, upper=1.0))
    q = canonical.random_measure(rng, mk.tree, 0.3)
    L = canonical.decompose(mk.tree, canonical.measure_to_H(mk.tree, q)).L
    port = numeraire_portfolio(mk, L)
    assert port.certificate <= 1e-9
    # every vertex strategy deflated by X_hat is an L-supermartingale
    for node in mk.tree.internal:
        if L[node] <= 0:
            continue
        kids = list(mk.tree.children[node])
        R = mk.returns(node)
        u_hat = 1.0 + R @ port.pi[node]
        for v in mk.vertex_fractions(node):
            ratio = np.divide(1.0 + R @ v, u_hat, out=np.zeros(len(kids)), where=u_hat > 0)
            lhs = float(np.sum(mk.tree.cond_prob[kids] * L[kids] * ratio))
            assert lhs <= L[node] * (1 + 1e-9) + 1e-12
    for pi in random_strategies(mk, rng, 10):
        assert deflated_drift(mk, L, port.X, wealth(mk, 1.0, pi).X) <= 1e-9


@given(seeds)
def test_single_asset_root_against_bounded_scalar_search(seed):
    """Independent route: maximize the expected log growth at the root with scipy."""
    rng = np.random.default_rng(seed)
    mk = random_market(rng, 1, 1)
    R = mk.returns(0)[:, 0]
    w = mk.tree.cond_prob[list(mk.tree.children[0])]
    hi = 1.0 if R.min() >= -1 else min(1.0, -1.0 / R.min())

    def neg(p):
        return -float(w @ np.log(np.maximum(1.0 + p * R, 1e-300)))

    res = optimize.minimize_scalar(neg, bounds=(0.0, hi), method="bounded", options={"xatol": 1e-12})
    port = numeraire_portfolio(mk, np.ones(mk.tree.n_nodes))
    assert -neg(port.pi[0, 0]) >= -res.fun - 1e-10


# --- consumption streams ----------------------------------------------------


def two_period():
    return lattice_tree(2, [[0.4, 0.6], [0.5, 0.5]])


def test_rel_streams_trivial():
    t = two_period()
    q = canonical.random_measure(np.random.default_rng(0), t, 0.0)
    dK = t.increments(canonical.decompose(t, canonical.measure_to_H(t, q)).K)
    assert rel_streams(t, q, dK, dK) == pytest.approx(0.0, abs=1e-12)
    assert rel_streams(t, q, 2 * dK, dK) == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(DomainError):
        rel_streams(t, q, -dK, dK)


def test_rel_streams_support():
    t = two_period()
    q = np.zeros(t.n_nodes)
    q[t.leaves] = t.prob[t.leaves]
    dK = t.increments(canonical.decompose(t, canonical.measure_to_H(t, q)).K)
    off = np.zeros(t.n_nodes)
    off[0] = 1.0
    with pytest.raises(DomainError):
        rel_streams(t, q, off, dK)


def leaf_time_oracle(tree, q, dC, dG):
    """Double sum over leaves and times on each root-to-leaf path."""
    pair = canonical.decompose(tree, canonical.measure_to_H(tree, q))
    dK = tree.increments(pair.K)
    total = 0.0
    for leaf, path in zip(tree.leaves, tree.leaf_paths()):
        inner = 0.0
        for node in path:
            if dK[node] > 0:
                inner += (dC[node] / dG[node]) * pair.L[node] * dK[node]
        total += tree.prob[leaf] * inner
    return total - 1.0


@given(seeds)
def test_rel_streams_against_leaf_sum(seed):
    rng = np.random.default_rng(seed)
    t = two_period()
    q = canonical.random_measure(rng, t, 0.4)
    dK = t.increments(canonical.decompose(t, canonical.measure_to_H(t, q)).K)
    on = dK > 0
    dC = np.where(on, rng.uniform(0.1, 2.0, t.n_nodes), 0.0)
    dG = np.where(on, rng.uniform(0.1, 2.0, t.n_nodes), 0.0)
    assert rel_streams(t, q, dC, dG) == pytest.approx(leaf_time_oracle(t, q, dC, dG), abs=1e-12)
    # a common positive factor leaves the relative return unchanged
    f = rng.uniform(0.1, 10.0, t.n_nodes)
    assert abs(rel_streams(t, q, f * dC, f * dG) - rel_streams(t, q, dC, dG)) < 1e-12


def test_pure_consumption_is_the_clock():
    t = two_period()
    q = canonical.random_measure(np.random.default_rng(1), t, 0.3)
    plan = optimal_consumption(Market.empty(t), q, 1.0)
    np.testing.assert_allclose(plan.dC, t.increments(plan.pair.K))
    assert np.all(optimal_consumption(Market.empty(t), q, 0.0).dC == 0)
    with pytest.raises(DomainError):
        optimal_consumption(Market.empty(t), q, -1.0)


def test_binary_terminal_consumption():
    mk = binomial(1, constraints=UNCONSTRAINED)
    q = np.array([0.0, 0.5, 0.5])
    plan = optimal_consumption(mk, q, 2.0)
    np.testing.assert_allclose(plan.dC, [0.0, 3.0, 1.5])
    rep = consumption_optimality(mk, q, 2.0, np.random.default_rng(0))
    assert rep.ok and rep.n_streams > 1


@given(seeds)
def test_consumption_optimality_random_markets(seed):
    mk, rng = random_measure_market(seed, depth=3)
    q = canonical.random_measure(rng, mk.tree, 0.5)
    rep = consumption_optimality(mk, q, 1.0, rng, max_streams=500)
    assert rep.worst_rel <= 1e-9


def test_zero_capital_consumption_report():
    mk = binomial(1)
    rep = consumption_optimality(mk, [0.0, 0.5, 0.5], 0.0, np.random.default_rng(0))
    assert rep.n_streams == 1


# --- utility functional -----------------------------------------------------


def test_utility_examples():
    t = two_period()
    rng = np.random.default_rng(2)
    q = canonical.random_measure(rng, t, 0.3)
    pair = canonical.decompose(t, canonical.measure_to_H(t, q))
    dK = t.increments(pair.K)
    assert utility_functional(t, q, pair.K, math.log) == pytest.approx(0.0, abs=1e-12)
    assert utility_functional(t, q, pair.K, lambda v: v) == pytest.approx(1.0, abs=1e-12)
    for _ in range(50):
        a = np.where(dK > 0, rng.random(t.n_nodes), 0.0)
        F = fraction_stream(t, a)
        assert utility_functional(t, q, F, lambda v: v) <= 1.0 + 1e-12
        assert utility_functional(t, q, F, math.sqrt) <= 1.0 + 1e-12
    with pytest.raises(DomainError):
        utility_functional(t, q, pair.K, lambda v: -math.inf)


def test_utility_rejects_off_support_fraction():
    t = two_period()
    q = np.zeros(t.n_nodes)
    q[t.leaves] = t.prob[t.leaves]
    with pytest.raises(DomainError):
        utility_functional(t, q, np.full(t.n_nodes, 0.5), math.sqrt)


# --- fraction form ----------------------------------------------------------


@given(seeds)
def test_fraction_form_round_trip(seed):
    mk, rng = random_measure_market(seed)
    t = mk.tree
    (eta,) = random_strategies(mk, rng, 1)
    x = float(rng.uniform(0.5, 3.0))
    X = wealth(mk, x, eta).X
    F0 = fraction_stream(t, rng.random(t.n_nodes))
    dC = from_fraction_form(t, X, F0)
    Y = wealth_with_consumption(mk, x, eta, dC)
    X2, F = to_fraction_form(mk, x, eta, dC)
    np.testing.assert_allclose(Y, X2 * (1 - F), atol=1e-12)
    np.testing.assert_allclose(from_fraction_form(t, X2, F), dC, atol=1e-12)
    np.testing.assert_allclose(F, F0, atol=1e-12)


def test_overconsumption_rejected():
    mk = binomial(1)
    with pytest.raises(InfeasibleStrategyError):
        wealth_with_consumption(mk, 1.0, np.zeros((3, 1)), [0.5, 0.6, 0.0])


# --- random times -----------------------------------------------------------


def test_horizon_is_a_stopping_time():
    mk = binomial(2)
    rep = random_time_check(mk, np.full(mk.tree.leaves.size, mk.tree.horizon), np.random.default_rng(0))
    assert rep.stopping_time and rep.ok


def test_downturn_time():
    """Sampling wealth when the price bottoms out, with 1/S a martingale."""
    mk = binomial(3, p=2 / 3)
    T = first_argmin_time(mk.tree, mk.prices[:, 0])
    rep = random_time_check(mk, T, np.random.default_rng(1))
    assert not rep.stopping_time
    assert rep.ok


def test_argmax_time_own_pair():
    mk = binomial(3, p=2 / 3, constraints=UNCONSTRAINED)
    rep = argmax_time_check(mk, 1.0 / mk.prices[:, 0], np.random.default_rng(2))
    assert rep.own_pair.ok
    assert math.isfinite(rep.given_L_worst)


@given(seeds)
def test_random_time_bound(seed):
    rng = np.random.default_rng(seed)
    mk = random_market(rng, int(rng.integers(1, 4)), 1)
    T = rng.integers(0, mk.tree.horizon + 1, size=mk.tree.leaves.size)
    assert random_time_check(mk, T, rng, n_random=20).ok
