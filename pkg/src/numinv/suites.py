"""Randomized sweeps shared by the command line runner and the test suite.

Each sweep draws its own random instances from a generator and returns a small
frozen record with the worst case found, so callers can compare against a
tolerance without rerunning anything.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import canonical, choice, market
from .static import DomainError, FiniteSpace, rel
from .tree import dual_optional_projection, is_stopping_time, random_tree


def random_space(rng: np.random.Generator, n: int) -> FiniteSpace:
    w = rng.dirichlet(np.ones(n)) + 1e-3
    return FiniteSpace(w / w.sum())


@dataclass(frozen=True)
class SimplexSweep:
    n_spaces: int
    max_rel_error: float  # max_i |f_i mu_i / w_i - 1| against the closed form
    max_certificate: float  # max_v rel(v | f_hat), recomputed from scratch


def full_simplex_sweep(rng: np.random.Generator, n_spaces: int = 50, min_atoms: int = 2, max_atoms: int = 10) -> SimplexSweep:
    """Numeric preferred element of random full simplices against ``w / mu``."""
    err = cert = -math.inf
    for _ in range(n_spaces):
        n = int(rng.integers(min_atoms, max_atoms + 1))
        sp = random_space(rng, n)
        B = choice.FullSimplex(rng.uniform(0.1, 10.0, n))
        f = choice.log_optimal(sp, B).outcome
        err = max(err, float(np.max(np.abs(f * B.mu / sp.weights - 1.0))))
        cert = max(cert, max(rel(sp, v, f) for v in B.vertices()))
    return SimplexSweep(n_spaces, err, cert)


@dataclass(frozen=True)
class RecoverySweep:
    n_oracles: int
    max_error: float
    violations: int


def recovery_sweep(rng: np.random.Generator, n_oracles: int = 50, min_atoms: int = 2, max_atoms: int = 6, n_checks: int = 5) -> RecoverySweep:
    """Recover the probability behind choice functions built from random spaces."""
    worst, bad = 0.0, 0
    for _ in range(n_oracles):
        sp = random_space(rng, int(rng.integers(min_atoms, max_atoms + 1)))
        rep = choice.recover_probability(choice.rel_oracle(sp), sp.n, rng=rng, n_checks=n_checks)
        if rep.weights is None:
            worst, bad = math.inf, bad + 1
            continue
        worst = max(worst, float(np.max(np.abs(rep.weights - sp.weights))))
        bad += not rep.ok
    return RecoverySweep(n_oracles, worst, bad)


@dataclass(frozen=True)
class PairSweep:
    n_trees: int
    violations: dict  # property name -> worst value over the sweep
    max_round_trip: float

    @property
    def worst(self) -> float:
        return max(self.violations.values())


def canonical_sweep(
    rng: np.random.Generator, n_trees: int = 200, max_depth: int = 5, max_branching: int = 3, zero_fraction: float = 0.5
) -> PairSweep:
    """Structural checks of canonical pairs for random measures on random trees."""
    worst: dict = {}
    trip = 0.0
    for _ in range(n_trees):
        tree = random_tree(rng, int(rng.integers(1, max_depth + 1)), max_branching)
        q = canonical.random_measure(rng, tree, zero_fraction)
        H = canonical.measure_to_H(tree, q)
        rep = canonical.verify_pair(tree, H, canonical.decompose(tree, H))
        for k, v in rep.violations.items():
            worst[k] = max(worst.get(k, 0.0), v)
        trip = max(trip, canonical.measure_round_trip(tree, q))
    return PairSweep(n_trees, worst, trip)


@dataclass(frozen=True)
class PerturbationSweep:
    n_trees: int
    eps: tuple
    max_gaps: tuple  # worst K gap per eps over the sweep
    non_monotone: int  # trees whose K gap increased somewhere along eps
    above_final: int  # trees whose last K gap is not below the final bound
    final_bound: float


def perturbation_sweep(
    rng: np.random.Generator,
    n_trees: int = 200,
    eps=(1e-2, 1e-3, 1e-4),
    max_depth: int = 5,
    max_branching: int = 3,
    zero_fraction: float = 0.0,
    final_bound: float = 1e-3,
) -> PerturbationSweep:
    """K gaps between random pairs and the pairs of their exponential perturbations."""
    eps = tuple(float(e) for e in eps)
    gaps = np.zeros(len(eps))
    non_mono = above = 0
    for _ in range(n_trees):
        tree = random_tree(rng, int(rng.integers(1, max_depth + 1)), max_branching)
        H = canonical.measure_to_H(tree, canonical.random_measure(rng, tree, zero_fraction))
        g = np.array([r.k_gap for r in canonical.perturbation_convergence(tree, H, eps)])
        gaps = np.maximum(gaps, g)
        non_mono += bool(np.any(np.diff(g) > 1e-15))
        above += bool(g[-1] >= final_bound)
    return PerturbationSweep(n_trees, eps, tuple(float(x) for x in gaps), non_mono, above, final_bound)


def random_nonstopping_time(rng: np.random.Generator, tree, attempts: int = 50) -> np.ndarray:
    """Uniform random time per leaf, redrawn until it is not a stopping time.

    Needs at least two leaves. If random draws keep producing stopping times the
    time ``0`` on the first leaf and the horizon elsewhere is returned, which the
    root cannot decide.
    """
    if tree.leaves.size < 2 or tree.horizon < 1:
        raise DomainError("every random time on this tree is a stopping time")
    for _ in range(attempts):
        T = rng.integers(0, tree.horizon + 1, size=tree.leaves.size)
        if not is_stopping_time(tree, T):
            return T
    T = np.full(tree.leaves.size, tree.horizon)
    T[0] = 0
    return T


@dataclass(frozen=True)
class MarketSweep:
    n_markets: int
    consumption_worst: float  # max rel(C | C_hat) over all tested streams
    streams: int
    max_streams_per_market: int
    sampling_worst: float  # max E[X_T / X_hat_T] - 1 over markets, times and strategies
    times: int
    stopping_times: int


def market_sweep(
    rng: np.random.Generator,
    n_markets: int = 20,
    max_depth: int = 4,
    max_assets: int = 3,
    n_times: int = 5,
    max_streams: int = 10**4,
) -> MarketSweep:
    """Consumption optimality and random-time sampling on random long-only markets."""
    c_worst = s_worst = -math.inf
    streams = per_market = times = stopping = 0
    for _ in range(n_markets):
        mk = market.random_market(rng, int(rng.integers(1, max_depth + 1)), int(rng.integers(1, max_assets + 1)))
        while mk.tree.leaves.size < 2:  # a single path admits only stopping times
            mk = market.random_market(rng, int(rng.integers(1, max_depth + 1)), int(rng.integers(1, max_assets + 1)))
        tree = mk.tree
        q = canonical.random_measure(rng, tree, 0.5)
        rep = market.consumption_optimality(mk, q, 1.0, rng, max_streams=max_streams)
        c_worst = max(c_worst, rep.worst_rel)
        streams += rep.n_streams
        per_market = max(per_market, rep.n_streams)
        for _ in range(n_times):
            T = random_nonstopping_time(rng, tree)
            r = market.random_time_check(mk, T, rng)
            s_worst = max(s_worst, r.worst - 1.0)
            times += 1
            stopping += r.stopping_time
    return MarketSweep(n_markets, c_worst, streams, per_market, s_worst, times, stopping)


def dual_projection_identity(tree, T, rng: np.random.Generator, n_random: int = 50) -> float:
    """Largest ``|E[sum V dH] - E[V_T]|`` over node indicators and random adapted ``V``."""
    H = dual_optional_projection(tree, T)
    dH = tree.increments(H)
    paths = tree.leaf_paths()
    hit = paths[np.arange(paths.shape[0]), np.asarray(T)]
    pl = tree.prob[tree.leaves]
    worst = 0.0
    tests = [np.eye(tree.n_nodes)[i] for i in range(tree.n_nodes)] + [rng.normal(size=tree.n_nodes) for _ in range(n_random)]
    for V in tests:
        lhs = math.fsum(tree.prob * V * dH)
        rhs = math.fsum(pl * V[hit])
        worst = max(worst, abs(lhs - rhs))
    return worst
