"""Discrete-time markets on event trees: wealth, numéraire portfolios and consumption.

Prices are node processes ``S`` of shape ``(n_nodes, d)`` in account units.
Fractions of wealth ``pi(node)`` are chosen at a node and held until its
children, so a wealth process evolves as ``X(child) = X(node) (1 + <pi(node), r>)``
with price relatives ``r = S(child) / S(node) - 1``.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable

import numpy as np

from . import canonical
from .choice import UnboundedError, enumerate_vertices, maximize_log_on_hull
from .static import DomainError, safe_div
from .tree import EventTree, first_argmax_time, martingale_class, random_time, random_tree

CERT_TOL = 1e-9
FEAS_TOL = 1e-9


class ViabilityError(DomainError):
    """A per-node log-optimal problem is unbounded (arbitrage inside the constraints)."""


class InfeasibleStrategyError(DomainError):
    """A strategy leaves its constraint set or drives wealth negative."""


# ---------------------------------------------------------------------------
# constraints and markets
# ---------------------------------------------------------------------------


def constraint_set(kind: str, d: int, **kw) -> tuple[np.ndarray, np.ndarray]:
    """Halfspace form ``A pi <= b`` of a named constraint set on fractions.

    ``kind`` is one of ``"simplex"`` (long only, no borrowing), ``"unconstrained"``,
    ``"box"`` (``lower <= pi <= upper``) or ``"halfspaces"`` (``A``, ``b`` given).
    """
    if kind == "simplex":
        return np.vstack([-np.eye(d), np.ones((1, d))]), np.concatenate([np.zeros(d), [1.0]])
    if kind == "unconstrained":
        return np.zeros((0, d)), np.zeros(0)
    if kind == "box":
        lo = np.broadcast_to(np.asarray(kw["lower"], float), (d,))
        hi = np.broadcast_to(np.asarray(kw["upper"], float), (d,))
        return np.vstack([-np.eye(d), np.eye(d)]), np.concatenate([-lo, hi])
    if kind == "halfspaces":
        A = np.asarray(kw["A"], float).reshape(-1, d)
        return A, np.asarray(kw["b"], float).ravel()
    raise DomainError(f"unknown constraint set {kind!r}")


@dataclass(frozen=True, eq=False)
class Market:
    """Asset prices on a tree plus a fraction constraint set containing 0.

    ``constraints`` is either one ``(A, b)`` pair shared by all nodes or a list
    with one pair per node. Defaults to the long-only simplex.
    """

    tree: EventTree
    prices: np.ndarray
    constraints: object = None

    def __post_init__(self):
        S = np.asarray(self.prices, dtype=float)
        if S.ndim == 1:
            S = S[:, None]
        if S.shape[0] != self.tree.n_nodes:
            raise DomainError("need one price vector per node")
        if not np.all(np.isfinite(S)) or np.any(S <= 0):
            raise DomainError("prices must be finite and strictly positive")
        S.setflags(write=False)
        object.__setattr__(self, "prices", S)
        d = S.shape[1]
        cons = self.constraints if self.constraints is not None else constraint_set("simplex", d)
        if isinstance(cons, tuple):
            cons = [cons] * self.tree.n_nodes
        if len(cons) != self.tree.n_nodes:
            raise DomainError("need one constraint set per node")
        fixed = []
        for A, b in cons:
            b = np.asarray(b, float).ravel()
            A = np.asarray(A, float).reshape(b.size, d)
            if np.any(b < 0):
                raise DomainError("constraint sets must contain the zero fraction")
            fixed.append((A, b))
        object.__setattr__(self, "constraints", fixed)

    @classmethod
    def empty(cls, tree: EventTree) -> "Market":
        """Market without risky assets: only the account."""
        return cls(tree, np.ones((tree.n_nodes, 0)))

    @property
    def d(self) -> int:
        return self.prices.shape[1]

    def returns(self, node: int) -> np.ndarray:
        """Price relatives minus one, one row per child of ``node``."""
        kids = list(self.tree.children[node])
        return self.prices[kids] / self.prices[node] - 1.0

    def feasible_halfspaces(self, node: int) -> tuple[np.ndarray, np.ndarray]:
        """Constraints plus nonnegativity of next-step wealth on every child."""
        A, b = self.constraints[node]
        R = self.returns(node)
        return np.vstack([A, -R]), np.concatenate([b, np.ones(R.shape[0])])

    @cached_property
    def _vertex_cache(self) -> dict:
        return {}

    def vertex_fractions(self, node: int) -> np.ndarray:
        """Vertices of the feasible fraction polytope at an internal node."""
        cache = self._vertex_cache
        if node not in cache:
            A, b = self.feasible_halfspaces(node)
            try:
                cache[node] = enumerate_vertices(A, b)
            except UnboundedError as exc:
                raise ViabilityError(f"node {node}: feasible fractions are unbounded ({exc})") from exc
        return cache[node]

    def contains(self, node: int, pi, tol: float = FEAS_TOL) -> bool:
        A, b = self.constraints[node]
        return bool(np.all(A @ np.asarray(pi, float) <= b + tol))


@dataclass(frozen=True, eq=False)
class WealthProcess:
    X: np.ndarray
    pi: np.ndarray


def wealth(market: Market, x: float, pi) -> WealthProcess:
    """Self-financing wealth from initial capital ``x`` and fractions ``pi`` (one row per node)."""
    tree = market.tree
    pi = np.asarray(pi, dtype=float).reshape(tree.n_nodes, market.d)
    if x < 0:
        raise InfeasibleStrategyError("initial capital must be nonnegative")
    for node in tree.internal:
        if not market.contains(node, pi[node]):
            raise InfeasibleStrategyError(f"fraction at node {node} violates the constraints")
    X = np.empty(tree.n_nodes)
    X[0] = x
    kids = np.arange(1, tree.n_nodes)
    par = tree.parent[kids]
    growth = 1.0 + np.einsum("ij,ij->i", pi[par], market.prices[kids] / market.prices[par] - 1.0)
    if np.any(growth < -FEAS_TOL):
        bad = int(kids[np.argmin(growth)])
        raise InfeasibleStrategyError(f"wealth turns negative at node {bad}")
    growth = np.clip(growth, 0.0, None)
    for t in range(1, tree.horizon + 1):
        lvl = tree.level(t)
        X[lvl] = X[tree.parent[lvl]] * growth[lvl - 1]
    return WealthProcess(X, pi)


# ---------------------------------------------------------------------------
# numéraire portfolio
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class NumerairePortfolio:
    """Log-optimal wealth under the reweighting by ``L``.

    ``slack[node]`` is ``max_v E[L (1 + <v, r>) / (1 + <pi, r>) | node] / L(node) - 1``
    over the vertices ``v`` of the feasible fractions; it certifies optimality
    when it is at most ``CERT_TOL``.
    """

    X: np.ndarray
    pi: np.ndarray
    slack: np.ndarray = field(repr=False)

    @property
    def certificate(self) -> float:
        return float(np.max(self.slack, initial=-math.inf))


def _node_problem(market: Market, node: int, L):
    tree = market.tree
    kids = np.array(tree.children[node])
    weights = tree.cond_prob[kids] * L[kids] / L[node]
    V = market.vertex_fractions(node)
    U = 1.0 + V @ market.returns(node).T  # vertex outcomes, one column per child
    return kids, weights, V, np.clip(U, 0.0, None)


def numeraire_portfolio(market: Market, L) -> NumerairePortfolio:
    """Per-node log-optimal fractions under child weights ``P[child | node] L(child) / L(node)``.

    Children with ``L = 0`` drop out of the objective but keep their wealth
    constraint. At nodes where ``L = 0`` the fractions are zero.
    """
    tree = market.tree
    L = np.asarray(tree.process(L), dtype=float)
    if np.any(L < 0) or abs(L[0] - 1.0) > 1e-12:
        raise DomainError("L must be nonnegative with L(root) = 1")
    pi = np.zeros((tree.n_nodes, market.d))
    slack = np.full(tree.n_nodes, -math.inf)
    for node in tree.internal:
        if L[node] <= 0 or market.d == 0:
            continue
        kids, w, V, U = _node_problem(market, node, L)
        pos = w > 0
        lam, _, _, _ = maximize_log_on_hull(w[pos] / w[pos].sum(), U[:, pos])
        pi[node] = lam @ V
        u_hat = 1.0 + market.returns(node) @ pi[node]
        ratios = np.array([safe_div(np.clip(u, 0, None)[pos], np.clip(u_hat, 0, None)[pos]) for u in U])
        slack[node] = float(np.max(ratios @ w[pos])) - 1.0
    X = wealth(market, 1.0, pi).X
    return NumerairePortfolio(X, pi, slack)


def deflated_drift(market: Market, L, X_hat, X) -> float:
    """Largest one-step rise of ``L X / X_hat`` over nodes where ``L > 0``."""
    tree = market.tree
    L = tree.process(L)
    ratio = L * np.asarray(safe_div(X, X_hat))
    mask = L > 0
    return martingale_class(tree, ratio, mask=mask).max_up


# ---------------------------------------------------------------------------
# consumption streams
# ---------------------------------------------------------------------------


def _pair_for(tree: EventTree, q) -> canonical.CanonicalPair:
    return canonical.decompose(tree, canonical.measure_to_H(tree, q))


def _check_support(tree: EventTree, dK, dC, name: str) -> None:
    dC = tree.process(dC)
    if np.any(dC < 0):
        raise DomainError(f"{name}: consumption increments must be nonnegative")
    if np.any(dC[dK <= 0] > 0):
        raise DomainError(f"{name}: consumption outside the support of the clock")


def rel_streams(tree: EventTree, q, C, G, pair: canonical.CanonicalPair | None = None) -> float:
    """Relative return of consumption stream ``C`` with respect to ``G`` under the optional measure ``q``.

    Streams are given by their per-node increments; both must vanish wherever the
    clock ``K`` of ``q`` is flat.
    """
    pair = pair or _pair_for(tree, q)
    dK = tree.increments(pair.K)
    _check_support(tree, dK, C, "C")
    _check_support(tree, dK, G, "G")
    on = dK > 0
    dC, dG = np.asarray(C, float), np.asarray(G, float)
    ratio = safe_div(dC[on] / dK[on], dG[on] / dK[on])
    if np.isinf(ratio).any():
        return math.inf
    return float(math.fsum(tree.prob[on] * ratio * pair.L[on] * dK[on]) - 1.0)


@dataclass(frozen=True, eq=False)
class ConsumptionPlan:
    dC: np.ndarray  # consumption increments
    X_hat: np.ndarray  # numéraire wealth under L
    pair: canonical.CanonicalPair
    portfolio: NumerairePortfolio | None


def optimal_consumption(market: Market, q, x: float) -> ConsumptionPlan:
    """Invest along the numéraire portfolio of ``L`` and consume ``x X_hat dK``."""
    if x < 0:
        raise DomainError("initial capital must be nonnegative")
    pair = _pair_for(market.tree, q)
    port = numeraire_portfolio(market, pair.L)
    dK = market.tree.increments(pair.K)
    return ConsumptionPlan(x * port.X * dK, port.X, pair, port)


def fraction_stream(tree: EventTree, a) -> np.ndarray:
    """Cumulative consumed fraction ``F`` from per-node fractions ``a`` of what remains."""
    a = np.clip(tree.process(a), 0.0, 1.0)
    F = np.empty(tree.n_nodes)
    F[0] = a[0]
    for t in range(1, tree.horizon + 1):
        lvl = tree.level(t)
        fp = F[tree.parent[lvl]]
        F[lvl] = fp + a[lvl] * (1.0 - fp)
    return F


def utility_functional(tree: EventTree, q, F, U: Callable, pair: canonical.CanonicalPair | None = None) -> float:
    """``sum P U(dF / dK) L dK`` for a fraction stream ``F`` supported by the clock."""
    pair = pair or _pair_for(tree, q)
    F = tree.process(F)
    if np.any(F < -FEAS_TOL) or np.any(F > 1 + FEAS_TOL):
        raise DomainError("a fraction stream takes values in [0, 1]")
    dK = tree.increments(pair.K)
    dF = tree.increments(F)
    _check_support(tree, dK, np.clip(dF, 0.0, None), "F")
    if np.any(dF < -FEAS_TOL):
        raise DomainError("a fraction stream is nondecreasing")
    on = dK > 0
    vals = np.array([U(float(v)) for v in dF[on] / dK[on]])
    if not np.all(np.isfinite(vals)):
        raise DomainError("utility is undefined at a needed consumption density")
    return float(math.fsum(tree.prob[on] * vals * pair.L[on] * dK[on]))


# ---------------------------------------------------------------------------
# consumption <-> fraction form
# ---------------------------------------------------------------------------


def wealth_with_consumption(market: Market, x: float, eta, dC) -> np.ndarray:
    """Post-consumption wealth for fractions ``eta`` and consumption increments ``dC``."""
    tree = market.tree
    growth = wealth(market, 1.0, eta).X
    dC = tree.process(dC)
    Y = np.empty(tree.n_nodes)
    Y[0] = x - dC[0]
    for t in range(1, tree.horizon + 1):
        lvl = tree.level(t)
        par = tree.parent[lvl]
        W = Y[par] * safe_div(growth[lvl], growth[par])
        Y[lvl] = W - dC[lvl]
    if np.any(Y < -FEAS_TOL * (1 + abs(x))):
        raise InfeasibleStrategyError("consumption exceeds available wealth")
    return Y


def to_fraction_form(market: Market, x: float, eta, dC) -> tuple[np.ndarray, np.ndarray]:
    """Split wealth with consumption into ``X`` (no consumption) and consumed fraction ``F``.

    Afterwards ``Y = X (1 - F)`` and ``dC = X dF``. Where ``X`` vanishes, ``F`` is
    held at its parent value.
    """
    tree = market.tree
    X = wealth(market, x, eta).X
    Y = wealth_with_consumption(market, x, eta, dC)
    F = np.empty(tree.n_nodes)
    for i in range(tree.n_nodes):
        if X[i] > 0:
            F[i] = 1.0 - Y[i] / X[i]
        else:
            F[i] = F[tree.parent[i]] if i > 0 else 0.0
    return X, F


def from_fraction_form(tree: EventTree, X, F) -> np.ndarray:
    return tree.process(X) * tree.increments(F)


# ---------------------------------------------------------------------------
# test sets of strategies and financeable streams
# ---------------------------------------------------------------------------


def vertex_strategies(market: Market, rng: np.random.Generator, limit: int = 200) -> list[np.ndarray]:
    """Fraction processes that sit on a vertex of the feasible set at every node.

    All node-wise combinations are returned when there are at most ``limit``;
    otherwise the constant-index strategies plus random combinations.
    """
    tree = market.tree
    nodes = list(tree.internal)
    verts = [market.vertex_fractions(n) for n in nodes]
    sizes = [v.shape[0] for v in verts]
    total = math.prod(sizes)
    out = []

    def build(choice):
        pi = np.zeros((tree.n_nodes, market.d))
        for n, v, j in zip(nodes, verts, choice):
            pi[n] = v[j]
        return pi

    if total <= limit:
        for choice in itertools.product(*[range(s) for s in sizes]):
            out.append(build(choice))
        return out
    for j in range(max(sizes)):
        out.append(build([min(j, s - 1) for s in sizes]))
    while len(out) < limit:
        out.append(build([int(rng.integers(s)) for s in sizes]))
    return out


def random_strategies(market: Market, rng: np.random.Generator, n: int) -> list[np.ndarray]:
    """Strategies with uniformly random convex combinations of vertices at each node."""
    tree = market.tree
    out = []
    for _ in range(n):
        pi = np.zeros((tree.n_nodes, market.d))
        for node in tree.internal:
            V = market.vertex_fractions(node)
            pi[node] = rng.dirichlet(np.ones(V.shape[0])) @ V
        out.append(pi)
    return out


def fraction_grid(tree: EventTree, dK, rng: np.random.Generator, limit: int, step: float = 0.25) -> np.ndarray:
    """Fraction streams from per-node fractions of the remainder on a grid, on nodes where ``dK > 0``.

    Returns an array of shape ``(n_streams, n_nodes)``; the full grid when it has
    at most ``limit`` members, otherwise a random subset.
    """
    on = np.flatnonzero(np.asarray(dK) > 0)
    levels = np.arange(0.0, 1.0 + 1e-12, step)
    total = levels.size ** on.size
    rows = []
    if total <= limit:
        for combo in itertools.product(levels, repeat=on.size):
            a = np.zeros(tree.n_nodes)
            a[on] = combo
            rows.append(fraction_stream(tree, a))
    else:
        for _ in range(limit):
            a = np.zeros(tree.n_nodes)
            a[on] = rng.choice(levels, size=on.size)
            rows.append(fraction_stream(tree, a))
    return np.array(rows).reshape(len(rows), tree.n_nodes)


@dataclass(frozen=True)
class OptimalityReport:
    n_streams: int
    worst_rel: float
    tol: float

    @property
    def ok(self) -> bool:
        return self.worst_rel <= self.tol


def consumption_optimality(
    market: Market,
    q,
    x: float,
    rng: np.random.Generator,
    *,
    max_streams: int = 10**4,
    n_random: int = 100,
    tol: float = CERT_TOL,
) -> OptimalityReport:
    """Largest ``rel_streams(C, C_hat)`` over financeable streams ``C = X dF``.

    The test set combines vertex strategies with the fraction grid (at most
    ``max_streams`` pairs) plus ``n_random`` random strategies paired with random
    fraction streams.
    """
    tree = market.tree
    plan = optimal_consumption(market, q, x)
    dK = tree.increments(plan.pair.K)
    on = dK > 0
    grid_budget = max(1, max_streams - n_random)
    strategies = vertex_strategies(market, rng, limit=max(1, min(200, grid_budget)))
    n_f = max(1, grid_budget // len(strategies))
    Fs = fraction_grid(tree, dK, rng, n_f)
    dFs = np.array([tree.increments(F) for F in Fs])
    # rel(C | C_hat) = sum P L X dF / (x X_hat) - 1 on the clock's support
    base = np.zeros(tree.n_nodes)
    base[on] = tree.prob[on] * plan.pair.L[on] / plan.X_hat[on]
    worst = -math.inf
    if x == 0:
        # both streams vanish; rel reduces to E[sum L dK] - 1
        worst = rel_streams(tree, q, np.zeros(tree.n_nodes), plan.dC, plan.pair)
        return OptimalityReport(1, worst, tol)
    n = 0
    for pi in strategies:
        X = wealth(market, x, pi).X
        vals = (dFs * (X * base)).sum(axis=1) / x - 1.0
        worst = max(worst, float(vals.max()))
        n += vals.size
    for pi in random_strategies(market, rng, n_random):
        X = wealth(market, x, pi).X
        a = np.where(on, rng.random(tree.n_nodes), 0.0)
        dF = tree.increments(fraction_stream(tree, a))
        worst = max(worst, rel_streams(tree, q, X * dF, plan.dC, plan.pair))
        n += 1
    return OptimalityReport(n, worst, tol)


# ---------------------------------------------------------------------------
# random times
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RandomTimeReport:
    values: np.ndarray  # E[X_T / X_hat_T] per tested strategy, unit initial capital
    worst: float
    tol: float
    stopping_time: bool

    @property
    def ok(self) -> bool:
        return self.worst <= 1.0 + self.tol


def sampled_ratio(market: Market, T, X, X_hat) -> float:
    """``E[X_T / X_hat_T]`` by summing over leaves."""
    tree = market.tree
    T = random_time(tree, T)
    paths = tree.leaf_paths()
    nodes = paths[np.arange(paths.shape[0]), T]
    r = np.asarray(safe_div(np.asarray(X)[nodes], np.asarray(X_hat)[nodes]))
    return float(math.fsum(tree.prob[tree.leaves] * r))


def random_time_check(
    market: Market,
    T,
    rng: np.random.Generator | None = None,
    *,
    n_random: int = 100,
    vertex_limit: int = 200,
    tol: float = CERT_TOL,
) -> RandomTimeReport:
    """Check ``E[X_T / X_hat_T] <= X_0`` for the numéraire portfolio of the pair built from ``T``."""
    from .tree import dual_optional_projection, is_stopping_time

    rng = np.random.default_rng(rng)
    tree = market.tree
    H = dual_optional_projection(tree, T)
    pair = canonical.decompose(tree, H)
    X_hat = numeraire_portfolio(market, pair.L).X
    strategies = vertex_strategies(market, rng, vertex_limit) + random_strategies(market, rng, n_random)
    vals = np.array([sampled_ratio(market, T, wealth(market, 1.0, pi).X, X_hat) for pi in strategies])
    return RandomTimeReport(vals, float(vals.max()), tol, is_stopping_time(tree, T))


@dataclass(frozen=True)
class ArgmaxReport:
    own_pair: RandomTimeReport  # guaranteed: pair of the argmax time itself
    given_L_worst: float  # informational: numéraire portfolio of the given L
    attains_max: bool  # whether the own pair's L peaks at T on every path


def argmax_time_check(market: Market, L, rng=None, **kw) -> ArgmaxReport:
    """Sample at the first time ``L`` peaks on each path.

    The inequality is guaranteed for the numéraire portfolio built from the pair of
    the time's own optional measure. The value under the numéraire portfolio of
    ``L`` itself is reported for comparison only: in discrete time a path can
    overshoot its running maximum, so that bound need not hold.
    """
    tree = market.tree
    T = first_argmax_time(tree, L)
    own = random_time_check(market, T, rng, **kw)
    from .tree import dual_optional_projection

    pair = canonical.decompose(tree, dual_optional_projection(tree, T))
    paths = tree.leaf_paths()
    Lp = pair.L[paths]
    attains = bool(np.all(Lp[np.arange(paths.shape[0]), T] >= Lp.max(axis=1) - 1e-12))
    X_hat = numeraire_portfolio(market, L).X
    rng = np.random.default_rng(rng)
    given = max(sampled_ratio(market, T, wealth(market, 1.0, pi).X, X_hat) for pi in vertex_strategies(market, rng, 50))
    return ArgmaxReport(own, float(given), attains)


# ---------------------------------------------------------------------------
# random markets
# ---------------------------------------------------------------------------


def random_market(rng: np.random.Generator, depth: int, n_assets: int, max_branching: int = 3) -> Market:
    """Random long-only market; relatives ``1 + r`` are drawn from ``[0.5, 2]``."""
    tree = random_tree(rng, depth, max_branching)
    S = np.ones((tree.n_nodes, n_assets))
    for t in range(1, depth + 1):
        lvl = tree.level(t)
        S[lvl] = S[tree.parent[lvl]] * np.exp(rng.uniform(np.log(0.5), np.log(2.0), (lvl.size, n_assets)))
    return Market(tree, S)
