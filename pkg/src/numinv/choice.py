"""Optimal choice from polytopes, full simplices and probability recovery.

The preferred element of a polytope ``C`` maximizes ``sum_i w_i log f_i``. It is
computed over convex weights on the vertices of ``C`` and certified by the
first-order condition ``rel(v | f) <= tol`` at every vertex ``v``, which by
convexity of the lower contour set extends to all of ``C``.
"""
from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import optimize, spatial

from .static import DomainError, FiniteSpace, as_outcome, rel

CERT_TOL = 1e-9
MAX_ITER = 10**5
_BRUTE_FORCE_LIMIT = 200_000


class InfeasibleError(DomainError):
    """A polytope described by halfspaces has no points."""


class UnboundedError(DomainError):
    """A polytope described by halfspaces is not bounded."""


# ---------------------------------------------------------------------------
# polytopes
# ---------------------------------------------------------------------------


def _dedupe(points: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    out: list[np.ndarray] = []
    for p in points:
        if not any(np.max(np.abs(p - q), initial=0.0) <= tol * (1.0 + np.max(np.abs(q), initial=0.0)) for q in out):
            out.append(p)
    return np.array(out).reshape(len(out), points.shape[1])


def check_bounded(A: np.ndarray, b: np.ndarray) -> None:
    """Raise unless ``{x : A x <= b}`` is nonempty and bounded.

    Solves two linear programs per coordinate (min and max of ``x_i``).
    """
    m, n = A.shape
    if n == 0:
        if np.any(b < -1e-12):
            raise InfeasibleError("empty polytope")
        return
    for i in range(n):
        for sign in (1.0, -1.0):
            c = np.zeros(n)
            c[i] = sign
            res = optimize.linprog(c, A_ub=A, b_ub=b, bounds=[(None, None)] * n, method="highs")
            if res.status == 2:
                raise InfeasibleError("the halfspaces have no common point")
            if res.status == 3:
                raise UnboundedError(f"coordinate {i} is unbounded on the polytope")
            if res.status != 0:
                raise DomainError(f"linear program failed: {res.message}")


def enumerate_vertices(A, b, *, tol: float = 1e-9) -> np.ndarray:
    """Vertices of the bounded polytope ``{x : A x <= b}``.

    Small problems use an exhaustive scan of active constraint sets, which also
    handles polytopes that are not full-dimensional. Larger ones go through qhull
    with a Chebyshev-center interior point.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.asarray(b, dtype=float).ravel()
    m, n = A.shape
    if b.size != m:
        raise DomainError("A and b disagree on the number of halfspaces")
    check_bounded(A, b)
    if n == 0:
        return np.zeros((1, 0))
    if math.comb(m, n) <= _BRUTE_FORCE_LIMIT:
        found = []
        for rows in itertools.combinations(range(m), n):
            As = A[list(rows)]
            if abs(np.linalg.det(As)) < 1e-12 * max(1.0, np.abs(As).max()) ** n:
                continue
            x = np.linalg.solve(As, b[list(rows)])
            if np.all(A @ x <= b + tol * (1.0 + np.abs(b))):
                found.append(x)
        if not found:
            raise InfeasibleError("no vertex found")
        return _dedupe(np.array(found), tol)
    norms = np.linalg.norm(A, axis=1)
    c = np.zeros(n + 1)
    c[-1] = -1.0
    res = optimize.linprog(c, A_ub=np.hstack([A, norms[:, None]]), b_ub=b, bounds=[(None, None)] * n + [(0, None)], method="highs")
    if res.status != 0 or res.x[-1] <= 1e-10:
        raise DomainError("polytope is too large for exhaustive enumeration and not full-dimensional")
    hs = spatial.HalfspaceIntersection(np.hstack([A, -b[:, None]]), res.x[:-1])
    return _dedupe(hs.intersections, tol)


@dataclass(frozen=True, eq=False)
class Polytope:
    """Bounded polytope of outcomes inside the nonnegative orthant.

    Build with :meth:`from_vertices` or :meth:`from_halfspaces`; the vertex list is
    always available as ``vertices`` (possibly with redundant points when given
    directly, which is harmless for optimization).
    """

    vertices: np.ndarray
    A: np.ndarray | None = None
    b: np.ndarray | None = None

    @classmethod
    def from_vertices(cls, points) -> "Polytope":
        V = np.atleast_2d(np.asarray(points, dtype=float))
        if V.shape[0] == 0:
            raise InfeasibleError("a polytope needs at least one point")
        if not np.all(np.isfinite(V)) or np.any(V < 0):
            raise DomainError("polytope points must be finite and nonnegative")
        V.setflags(write=False)
        return cls(V)

    @classmethod
    def from_halfspaces(cls, A, b) -> "Polytope":
        """``{f >= 0 : A f <= b}``; nonnegativity is added automatically."""
        A = np.atleast_2d(np.asarray(A, dtype=float))
        b = np.asarray(b, dtype=float).ravel()
        n = A.shape[1]
        A_full = np.vstack([A, -np.eye(n)])
        b_full = np.concatenate([b, np.zeros(n)])
        V = np.maximum(enumerate_vertices(A_full, b_full), 0.0)
        V.setflags(write=False)
        return cls(V, A, b)

    @classmethod
    def box(cls, upper) -> "Polytope":
        u = np.asarray(upper, dtype=float)
        return cls.from_halfspaces(np.eye(u.size), u)

    @property
    def dim(self) -> int:
        return self.vertices.shape[1]

    def contains(self, f, tol: float = 1e-9) -> bool:
        f = np.asarray(f, dtype=float)
        if np.any(f < -tol):
            return False
        if self.A is not None:
            return bool(np.all(self.A @ f <= self.b + tol))
        # convex-hull membership through a feasibility LP on the vertex weights
        k = self.vertices.shape[0]
        res = optimize.linprog(
            np.zeros(k),
            A_eq=np.vstack([self.vertices.T, np.ones(k)]),
            b_eq=np.concatenate([f, [1.0]]),
            bounds=[(0, None)] * k,
            method="highs",
        )
        return res.status == 0


@dataclass(frozen=True)
class FullSimplex:
    """Budget set ``{f >= 0 : sum_i mu_i f_i <= 1}`` for strictly positive prices ``mu``."""

    mu: np.ndarray

    def __post_init__(self):
        mu = np.array(self.mu, dtype=float)
        if mu.ndim != 1 or mu.size == 0 or not np.all(np.isfinite(mu)) or np.any(mu <= 0):
            raise DomainError("full simplex prices must be finite and strictly positive")
        mu.setflags(write=False)
        object.__setattr__(self, "mu", mu)

    @property
    def n(self) -> int:
        return self.mu.size

    def vertices(self) -> np.ndarray:
        """The origin followed by ``e_i / mu_i``."""
        return np.vstack([np.zeros(self.n), np.diag(1.0 / self.mu)])

    def polytope(self) -> Polytope:
        return Polytope(self.vertices(), self.mu[None, :], np.ones(1))

    def budget(self, f) -> float:
        return float(math.fsum(self.mu * np.asarray(f, dtype=float)))


# ---------------------------------------------------------------------------
# log-optimal element
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LogOptimum:
    """Preferred element of a polytope with its optimality certificate.

    Attributes
    ----------
    outcome : the optimal outcome
    weights : convex weights on ``vertices`` producing ``outcome``
    certificate : ``max_v rel(v | outcome)`` over the vertices
    support : atoms on which some vertex is positive
    """

    outcome: np.ndarray
    weights: np.ndarray
    vertices: np.ndarray
    certificate: float
    iterations: int
    support: np.ndarray = field(repr=False)

    @property
    def certified(self) -> bool:
        return self.certificate <= CERT_TOL


def _objective(w, f):
    return float(np.dot(w, np.log(f)))


def _fw_step(w, f, u):
    """Exact line search along ``f + t u`` for ``t`` in ``[0, 1]``."""

    def slope(t):
        return float(np.dot(w, u / (f + t * u)))

    end = f + u
    if np.all(end > 0) and slope(1.0) >= 0.0:
        return 1.0
    hi = 1.0 if np.all(end > 0) else 1.0 - 1e-12
    return optimize.brentq(slope, 0.0, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps)


def maximize_log_on_hull(w, V, *, tol: float = CERT_TOL, max_iter: int = MAX_ITER):
    """Maximize ``sum_i w_i log (V^T lam)_i`` over the probability simplex of ``lam``.

    ``w`` must be strictly positive and every column of ``V`` must have a positive
    entry. Returns ``(lam, f, certificate, iterations)`` with
    ``certificate = max_j (sum_i w_i V_ji / f_i) - 1``.

    Each iteration tries a Newton step restricted to the face spanned by the
    current support plus the most violating vertex, and falls back to a
    Frank-Wolfe step with exact line search when Newton does not improve.
    """
    w = np.asarray(w, dtype=float)
    V = np.asarray(V, dtype=float)
    k = V.shape[0]
    lam = np.full(k, 1.0 / k)
    f = V.T @ lam
    wsum = w.sum()
    it = polish = 0
    cert = math.inf
    for it in range(1, max_iter + 1):
        grad = V @ (w / f)
        j = int(np.argmax(grad))
        cert = grad[j] / wsum - 1.0
        # a few extra iterations past the tolerance cost little and sharpen the outcome
        if cert <= tol:
            polish += 1
            if cert <= 1e-3 * tol or polish > 3:
                break
        obj = _objective(w, f)
        moved = False
        face = np.flatnonzero(lam > 0)
        if j not in face:
            face = np.append(face, j)
        if face.size > 1:
            Vf = V[face]
            hess = (Vf * (w / f**2)) @ Vf.T
            m = face.size
            kkt = np.zeros((m + 1, m + 1))
            kkt[:m, :m] = hess
            kkt[:m, m] = kkt[m, :m] = 1.0
            rhs = np.concatenate([grad[face], [0.0]])
            d = np.linalg.lstsq(kkt, rhs, rcond=1e-13)[0][:m]
            ascent = float(np.dot(grad[face], d))
            if ascent > 0:
                neg = np.flatnonzero(d < 0)
                blocking, t_max = -1, math.inf
                if neg.size:
                    ratios = lam[face[neg]] / -d[neg]
                    blocking = int(face[neg[np.argmin(ratios)]])
                    t_max = float(ratios.min())
                t = min(1.0, t_max)
                while t > 1e-12:
                    cand = lam.copy()
                    cand[face] += t * d
                    if t == t_max:
                        cand[blocking] = 0.0
                    cand[cand < 1e-15] = 0.0
                    cand /= cand.sum()
                    f_new = V.T @ cand
                    # near the optimum the gain drops below rounding of the objective
                    slack = 64 * np.finfo(float).eps * (1.0 + abs(obj))
                    if np.all(f_new > 0) and _objective(w, f_new) >= obj + 1e-4 * t * ascent - slack:
                        lam, f = cand, f_new
                        moved = True
                        break
                    t *= 0.5
        if not moved:
            u = V[j] - f
            t = _fw_step(w, f, u)
            lam *= 1.0 - t
            lam[j] += t
            lam[lam < 1e-15] = 0.0
            lam /= lam.sum()
            f = V.T @ lam
    return lam, f, float(cert), it


def log_optimal(space: FiniteSpace, C, *, tol: float = CERT_TOL, max_iter: int = MAX_ITER) -> LogOptimum:
    """The ``rel``-preferred element of ``C``: the maximizer of ``E[log f]``.

    Parameters
    ----------
    space : FiniteSpace
    C : Polytope, FullSimplex, or an array of vertex outcomes

    Atoms on which every element of ``C`` vanishes are fixed at zero and the
    problem is solved on the remaining atoms (the maximal-support face). The
    returned certificate is ``max_v rel(v | f)`` evaluated on the full space.
    """
    if isinstance(C, FullSimplex):
        C = C.polytope()
    elif not isinstance(C, Polytope):
        C = Polytope.from_vertices(C)
    V = C.vertices
    if V.shape[1] != space.n:
        raise DomainError(f"polytope lives in dimension {V.shape[1]}, space has {space.n} atoms")
    support = np.any(V > 0, axis=0)
    if not support.any():
        raise DomainError("every element of C is zero; there is nothing to choose")
    keep = np.any(V[:, support] > 0, axis=1)
    Vs = V[keep][:, support]
    lam_s, fs, _, it = maximize_log_on_hull(space.weights[support], Vs, tol=tol, max_iter=max_iter)
    f = np.zeros(space.n)
    f[support] = fs
    lam = np.zeros(V.shape[0])
    lam[keep] = lam_s
    cert = max(rel(space, v, f) for v in V)
    f.setflags(write=False)
    return LogOptimum(f, lam, V, cert, it, support)


# ---------------------------------------------------------------------------
# full simplices
# ---------------------------------------------------------------------------


class SimplexClass(enum.Enum):
    EXTERIOR = "exterior"
    INTERIOR = "interior"
    MAXIMAL = "maximal"


@dataclass(frozen=True)
class SimplexPosition:
    """Where an outcome sits relative to a full simplex.

    ``scale`` is the budget ``sum mu f`` and ``maximal`` the element ``f / scale``
    of the maximal face (``None`` for the zero outcome).
    """

    kind: SimplexClass
    scale: float
    maximal: np.ndarray | None


def simplex_classify(space: FiniteSpace, B: FullSimplex, f, tol: float = 1e-10) -> SimplexPosition:
    f = as_outcome(f, space.n)
    if B.n != space.n:
        raise DomainError("simplex and space disagree on the number of atoms")
    a = B.budget(f)
    if abs(a - 1.0) <= tol:
        kind = SimplexClass.MAXIMAL
    elif a < 1.0:
        kind = SimplexClass.INTERIOR
    else:
        kind = SimplexClass.EXTERIOR
    return SimplexPosition(kind, a, None if a == 0 else f / a)


def simplex_optimum(space: FiniteSpace, B: FullSimplex) -> np.ndarray:
    """Closed-form preferred element ``w_i / mu_i`` of a full simplex."""
    return space.weights / B.mu


# ---------------------------------------------------------------------------
# probability recovery
# ---------------------------------------------------------------------------

ChoiceOracle = Callable[[FullSimplex], np.ndarray]


def rel_oracle(space: FiniteSpace) -> ChoiceOracle:
    """Choice function that picks the preferred element numerically."""

    def choose(B: FullSimplex) -> np.ndarray:
        return log_optimal(space, B).outcome

    return choose


def barycenter_oracle(B: FullSimplex) -> np.ndarray:
    """Choice function answering the average of all simplex vertices (origin included)."""
    return B.vertices().mean(axis=0)


@dataclass(frozen=True)
class RecoveryReport:
    weights: np.ndarray | None
    violations: tuple
    max_regeneration_error: float

    @property
    def ok(self) -> bool:
        return not self.violations


def recover_probability(oracle: ChoiceOracle, n_atoms: int, *, rng=None, n_checks: int = 20, tol: float = 1e-8) -> RecoveryReport:
    """Recover the probability that generates a choice function.

    The oracle is queried on the simplex priced by the uniform measure. A
    consistent answer ``g`` is maximal there, and ``P_i = g_i / n``. The candidate
    is then checked to regenerate the oracle's choice ``P / mu`` on ``n_checks``
    random full simplices.
    """
    rng = np.random.default_rng(rng)
    violations = []
    ref = FullSimplex(np.full(n_atoms, 1.0 / n_atoms))
    g = np.asarray(oracle(ref), dtype=float)
    if g.shape != (n_atoms,) or np.any(g < -tol):
        return RecoveryReport(None, ("answer is not an outcome on the queried space",), math.inf)
    budget = ref.budget(g)
    if budget > 1.0 + tol:
        violations.append(f"answer lies outside the reference simplex (budget {budget:.12g})")
    elif abs(budget - 1.0) > tol:
        violations.append(f"answer is not maximal in the reference simplex (budget {budget:.12g})")
    P = np.clip(g, 0.0, None) / n_atoms
    if np.any(P <= 0):
        violations.append("recovered weights are not strictly positive")
    if violations:
        return RecoveryReport(P, tuple(violations), math.inf)
    P = P / P.sum()
    worst = 0.0
    for i in range(n_checks):
        B = FullSimplex(rng.uniform(0.1, 10.0, n_atoms))
        err = float(np.max(np.abs(np.asarray(oracle(B), float) - P / B.mu) * B.mu))
        worst = max(worst, err)
        if err > tol:
            violations.append(f"check {i}: recovered probability does not regenerate the choice (error {err:.3e})")
    return RecoveryReport(P, tuple(violations), worst)


# ---------------------------------------------------------------------------
# log-utility extension
# ---------------------------------------------------------------------------


class LogRelation(enum.Enum):
    F_BELOW_G = "f_below_g"
    G_BELOW_F = "g_below_f"
    EQUIVALENT = "equivalent"


def log_relation(space: FiniteSpace, f, g, atol: float = 1e-12) -> LogRelation:
    """Complete comparison of strictly positive outcomes by expected log."""
    f, g = as_outcome(f, space.n), as_outcome(g, space.n)
    if np.any(f <= 0) or np.any(g <= 0):
        raise DomainError("the log comparison needs strictly positive outcomes")
    diff = math.fsum(space.weights * (np.log(f) - np.log(g)))
    if abs(diff) <= atol:
        return LogRelation.EQUIVALENT
    return LogRelation.F_BELOW_G if diff < 0 else LogRelation.G_BELOW_F
