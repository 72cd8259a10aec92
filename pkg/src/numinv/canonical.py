"""Canonical (L, K) pairs of unit-mass optional measures on event trees.

An optional measure puts mass ``q(node) >= 0`` on the nodes of a tree, with total
mass one. Its Doléans process ``H`` has increments ``q / P[node]``. The pair
``(L, K)`` splits ``H`` into a nonnegative martingale ``L`` with ``L_0 = 1`` and a
nondecreasing clock ``K`` in ``[0, 1]`` with ``dH = L dK``.

With ``Z = E[H_inf | node] - H`` (the expected remaining mass) the discrete
recursion is::

    1 - K(node) = (1 - K(parent)) * Z / (Z + dH)          (ratio 1 when Z = dH = 0)
    L(node)     = L(parent) * (Z + dH) / Z(parent)        (frozen once Z(parent) = 0)

starting from ``K(root) = H(root)`` and ``L(root) = 1``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .static import DomainError, safe_div
from .tree import EventTree, backward_expectation, cumulate, martingale_class

MASS_TOL = 1e-12
CHECK_TOL = 1e-10


def validate_measure(tree: EventTree, q, atol: float = MASS_TOL) -> np.ndarray:
    q = np.array(tree.process(q), dtype=float)
    if not np.all(np.isfinite(q)) or np.any(q < 0):
        raise DomainError("optional measure masses must be finite and nonnegative")
    total = math.fsum(q)
    if abs(total - 1.0) > atol:
        raise DomainError(f"optional measure has total mass {total!r}, not 1")
    q.setflags(write=False)
    return q


def measure_to_H(tree: EventTree, q) -> np.ndarray:
    """Doléans process: increments ``q(node) / P[node]`` summed along paths."""
    q = validate_measure(tree, q)
    return cumulate(tree, q / tree.prob)


def H_to_measure(tree: EventTree, H) -> np.ndarray:
    return tree.prob * tree.increments(H)


def random_measure(rng: np.random.Generator, tree: EventTree, zero_fraction: float = 0.5) -> np.ndarray:
    """Random unit-mass optional measure; about ``zero_fraction`` of nodes get no mass."""
    q = rng.exponential(size=tree.n_nodes) * (rng.random(tree.n_nodes) >= zero_fraction)
    if q.sum() == 0:
        q[rng.integers(tree.n_nodes)] = 1.0
    return q / q.sum()


@dataclass(frozen=True, eq=False)
class CanonicalPair:
    """Output of :func:`decompose` (all fields are node processes)."""

    L: np.ndarray
    K: np.ndarray
    H: np.ndarray
    M: np.ndarray
    Z: np.ndarray
    dH: np.ndarray = field(repr=False)

    def to_records(self, tree: EventTree) -> list[dict]:
        """One JSON-friendly record per node."""
        labels = tree.labels or range(tree.n_nodes)
        return [
            {
                "node": lab if isinstance(lab, str) else int(lab),
                "time": int(tree.time[i]),
                "L": float(self.L[i]),
                "K": float(self.K[i]),
                "H": float(self.H[i]),
                "M": float(self.M[i]),
                "Z": float(self.Z[i]),
            }
            for i, lab in enumerate(labels)
        ]


def remaining_mass(tree: EventTree, dH) -> np.ndarray:
    """``E[sum of increments strictly after the node | node]`` by backward induction."""
    out = np.zeros(tree.n_nodes)
    for t in range(tree.horizon, 0, -1):
        lvl = tree.level(t)
        np.add.at(out, tree.parent[lvl], tree.cond_prob[lvl] * (dH[lvl] + out[lvl]))
    return out


def decompose(tree: EventTree, H, *, atol: float = CHECK_TOL) -> CanonicalPair:
    """Canonical pair of a nondecreasing ``H >= 0`` with ``E[H_inf] = 1``."""
    H = np.array(tree.process(H), dtype=float)
    dH = tree.increments(H)
    if not np.all(np.isfinite(H)) or H[0] < -atol or np.any(dH[1:] < -atol):
        raise DomainError("H must be nonnegative and nondecreasing along every path")
    total = math.fsum(tree.prob[tree.leaves] * H[tree.leaves])
    if abs(total - 1.0) > atol:
        raise DomainError(f"E[H_inf] = {total!r}, expected 1")
    dH = np.clip(dH, 0.0, None)
    Z = remaining_mass(tree, dH)
    M = H + Z
    # carry 1 - K multiplicatively so that K is nondecreasing in floating point too
    R = np.empty(tree.n_nodes)
    L = np.empty(tree.n_nodes)
    R[0] = 1.0 - min(max(H[0], 0.0), 1.0)
    L[0] = 1.0
    for t in range(1, tree.horizon + 1):
        lvl = tree.level(t)
        par = tree.parent[lvl]
        R[lvl] = R[par] * np.minimum(safe_div(Z[lvl], Z[lvl] + dH[lvl]), 1.0)
        alive = Z[par] > 0
        L[lvl] = np.where(alive, L[par] * (Z[lvl] + dH[lvl]) / np.where(alive, Z[par], 1.0), L[par])
    K = 1.0 - R
    for a in (L, K, H, M, Z, dH):
        a.setflags(write=False)
    return CanonicalPair(L, K, H, M, Z, dH)


# ---------------------------------------------------------------------------
# verification
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PairReport:
    """Largest violation of each structural property of a canonical pair."""

    violations: dict
    tol: float

    @property
    def ok(self) -> bool:
        return all(v <= self.tol for v in self.violations.values())

    @property
    def failed(self) -> list[str]:
        return [k for k, v in self.violations.items() if v > self.tol]

    @property
    def worst(self) -> float:
        return max(self.violations.values())


def _max0(x) -> float:
    x = np.asarray(x, dtype=float)
    return float(np.max(x, initial=0.0))


def verify_pair(tree: EventTree, H, pair: CanonicalPair, tol: float = CHECK_TOL) -> PairReport:
    """Check the defining properties of ``pair`` against ``H``.

    Reported quantities: ``L_0 = 1``, ``L >= 0``, the martingale drift of ``L`` at
    nodes with positive remaining mass, monotonicity and range of ``K``,
    ``L (1 - K) = Z``, ``dH = L dK``, pathwise reconstruction of ``H``, ``dL = 0``
    after ``K`` reaches one, ``dK = 0`` where ``L = 0``, and ``K_inf = 1`` on
    leaves with ``L_inf > 0``.
    """
    H = tree.process(H)
    L, K = tree.process(pair.L), tree.process(pair.K)
    dH = tree.increments(H)
    dK = tree.increments(K)
    dL = tree.increments(L)
    dL[0] = 0.0
    Z = backward_expectation(tree, H) - H
    par = tree.parent[1:]
    leaves = tree.leaves
    drift = martingale_class(tree, L, tol=tol, mask=Z > tol).max_violation
    k_done = np.zeros(tree.n_nodes, bool)
    k_done[1:] = 1.0 - K[par] <= tol
    dead = L <= tol
    v = {
        "L0_equals_1": abs(L[0] - 1.0),
        "L_nonnegative": _max0(-L),
        "L_martingale_drift": drift,
        "K_nondecreasing": _max0(-dK[1:]),
        "K_in_unit_interval": max(_max0(-K), _max0(K - 1.0)),
        "L_times_remaining_clock_equals_Z": _max0(np.abs(L * (1.0 - K) - Z)),
        "dH_equals_L_dK": _max0(np.abs(dH - L * dK)),
        "reconstruction_of_H": _max0(np.abs(cumulate(tree, L * dK) - H)[leaves]),
        "L_flat_after_clock_ends": _max0(np.abs(dL[k_done])),
        "K_flat_where_L_vanishes": _max0(np.abs(dK[dead])),
        "alive_leaves_have_full_clock": _max0(np.abs(1.0 - K[leaves])[L[leaves] > tol]),
    }
    return PairReport({k: float(x) for k, x in v.items()}, tol)


def clock_positive_nodes(tree: EventTree, K) -> np.ndarray:
    """Nodes lying on at least one path with ``K_inf > 0``."""
    K = tree.process(K)
    mark = np.zeros(tree.n_nodes, bool)
    mark[tree.leaves] = K[tree.leaves] > 0
    for t in range(tree.horizon, 0, -1):
        lvl = tree.level(t)
        np.logical_or.at(mark, tree.parent[lvl], mark[lvl])
    return mark


def compare_pairs(tree: EventTree, a: CanonicalPair, b: CanonicalPair) -> tuple[float, float]:
    """``(sup |K_a - K_b|, sup |L_a - L_b|)``, the latter on paths where ``K_inf > 0``."""
    k_gap = float(np.max(np.abs(a.K - b.K)))
    mask = clock_positive_nodes(tree, a.K) | clock_positive_nodes(tree, b.K)
    l_gap = _max0(np.abs(a.L - b.L)[mask])
    return k_gap, l_gap


def measure_round_trip(tree: EventTree, q) -> float:
    """Largest error of ``q -> H -> (L, K) -> P L dK`` against ``q``."""
    q = validate_measure(tree, q)
    pair = decompose(tree, measure_to_H(tree, q))
    back = tree.prob * pair.L * tree.increments(pair.K)
    return float(np.max(np.abs(back - q)))


# ---------------------------------------------------------------------------
# smooth perturbation
# ---------------------------------------------------------------------------


def exponential_clock(tree: EventTree) -> np.ndarray:
    """``1 - exp(-t)`` at integer times, with the full unit of mass released by the horizon."""
    D = -np.expm1(-tree.time.astype(float))
    D[tree.time == tree.horizon] = 1.0
    return D


def perturb(tree: EventTree, H, eps: float) -> np.ndarray:
    """Mix ``H`` with the exponential clock: ``(H + eps D) / (1 + eps)``."""
    return (tree.process(H) + eps * exponential_clock(tree)) / (1.0 + eps)


@dataclass(frozen=True)
class PerturbationRow:
    eps: float
    k_gap: float
    l_gap: float
    excluded: int  # nodes where the unperturbed clock dies without a jump


def perturbation_convergence(tree: EventTree, H, eps_list) -> list[PerturbationRow]:
    """Gaps between the pair of ``H`` and the pairs of its perturbations.

    ``K`` is compared on nodes with ``Z(parent) > 0`` and ``Z + dH > 0``. Where the
    unperturbed remaining mass drops to zero without a jump of ``H``, the
    perturbed clock still jumps by an amount of order one on a tree, so those
    nodes are counted in ``excluded`` and left out of the ``K`` gap. ``L`` is
    compared on all nodes with ``Z(parent) > 0``.
    """
    base = decompose(tree, H)
    zprev = np.empty(tree.n_nodes)
    zprev[0] = 1.0
    zprev[1:] = base.Z[tree.parent[1:]]
    alive = zprev > 0
    k_mask = alive & (base.Z + base.dH > 0)
    rows = []
    for eps in eps_list:
        if eps < 0:
            raise DomainError("perturbation sizes must be nonnegative")
        pert = decompose(tree, perturb(tree, H, eps)) if eps > 0 else base
        rows.append(
            PerturbationRow(
                float(eps),
                _max0(np.abs(pert.K - base.K)[k_mask]),
                _max0(np.abs(pert.L - base.L)[alive]),
                int(np.count_nonzero(alive & ~k_mask)),
            )
        )
    return rows
