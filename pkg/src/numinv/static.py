"""Finite probability spaces and the expected-relative-rate-of-return rule.

Outcomes are nonnegative vectors indexed by the atoms of a :class:`FiniteSpace`.
Division follows the bookkeeping convention used throughout the package:
``x / 0 = inf`` for ``x > 0`` and ``0 / 0 = 1``.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

ATOL_EQ = 1e-12


class DomainError(ValueError):
    """An input lies outside the domain of an operation."""


@dataclass(frozen=True)
class FiniteSpace:
    """Atoms with strictly positive probabilities summing to one."""

    weights: np.ndarray
    atom_labels: tuple = field(default=())

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 1 or w.size == 0:
            raise DomainError("a finite space needs at least one atom")
        if not np.all(np.isfinite(w)) or np.any(w <= 0):
            raise DomainError("atom weights must be finite and strictly positive")
        if abs(w.sum() - 1.0) > 1e-12:
            raise DomainError(f"atom weights sum to {w.sum()!r}, not 1")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        labels = tuple(self.atom_labels) or tuple(range(w.size))
        if len(labels) != w.size:
            raise DomainError("one label per atom is required")
        object.__setattr__(self, "atom_labels", labels)

    @property
    def n(self) -> int:
        return self.weights.size

    @classmethod
    def uniform(cls, n: int) -> "FiniteSpace":
        return cls(np.full(n, 1.0 / n))

    def outcome(self, values) -> np.ndarray:
        """Validate ``values`` as an outcome on this space and return a read-only array."""
        return as_outcome(values, self.n)


def as_outcome(values, n: int | None = None) -> np.ndarray:
    f = np.array(values, dtype=float)
    if f.ndim != 1:
        raise DomainError("an outcome is a 1-d vector of atom values")
    if n is not None and f.size != n:
        raise DomainError(f"outcome has {f.size} values, space has {n} atoms")
    if not np.all(np.isfinite(f)) or np.any(f < 0):
        raise DomainError("outcome values must be finite and nonnegative")
    f.setflags(write=False)
    return f


def safe_div(x, y):
    """Divide nonnegative numbers with ``x/0 = inf`` (x > 0) and ``0/0 = 1``.

    Works elementwise on arrays; scalars in, float out.
    """
    xa = np.asarray(x, dtype=float)
    ya = np.asarray(y, dtype=float)
    if np.any(xa < 0) or np.any(ya < 0):
        raise DomainError("safe_div is defined for nonnegative arguments only")
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        out = np.where(ya > 0, xa / np.where(ya > 0, ya, 1.0), np.where(xa > 0, np.inf, 1.0))
    if out.ndim == 0:
        return float(out)
    return out


def _pair(space: FiniteSpace, f, g):
    return as_outcome(f, space.n), as_outcome(g, space.n)


def rel(space: FiniteSpace, f, g) -> float:
    """Expected relative rate of return of ``f`` with respect to ``g``.

    Returns a float in ``[-1, inf]``; ``inf`` whenever ``f > 0 = g`` on some atom.
    """
    f, g = _pair(space, f, g)
    ratio = safe_div(f, g)
    if np.isinf(ratio).any():
        return math.inf
    return float(math.fsum(space.weights * ratio) - 1.0)


class Preference(enum.Enum):
    STRICTLY_PREFERRED = "strictly_preferred"
    PREFERRED = "preferred"
    NOT_PREFERRED = "not_preferred"

    def __bool__(self) -> bool:
        return self is not Preference.NOT_PREFERRED


def prefers(space: FiniteSpace, f, g) -> Preference:
    """Classify ``f`` relative to ``g``: ``g`` is weakly preferred iff ``rel(f|g) <= 0``.

    The strict case is ``rel(f|g) < 0``; equal outcomes come out as ``PREFERRED``
    in both directions.
    """
    f, g = _pair(space, f, g)
    if outcomes_equal(f, g):
        return Preference.PREFERRED
    r = rel(space, f, g)
    if r < 0:
        return Preference.STRICTLY_PREFERRED
    if r == 0:
        return Preference.PREFERRED
    return Preference.NOT_PREFERRED


def outcomes_equal(f, g, atol: float = ATOL_EQ) -> bool:
    return bool(np.all(np.abs(np.asarray(f, float) - np.asarray(g, float)) <= atol))


# ---------------------------------------------------------------------------
# counterexamples
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Counterexample:
    name: str
    space: FiniteSpace
    outcomes: dict
    expected: dict  # "rel(a|b)" -> closed-form value
    computed: dict

    @property
    def max_error(self) -> float:
        errs = []
        for k, v in self.expected.items():
            c = self.computed[k]
            errs.append(0.0 if (math.isinf(v) and c == v) else abs(c - v))
        return max(errs)


def _two_atom(p: float) -> FiniteSpace:
    # atom 0 is the event A with P[A] = p
    return FiniteSpace(np.array([p, 1.0 - p]), ("A", "not_A"))


def counterexample_suite(p: float) -> dict[str, Counterexample]:
    """Closed-form failures of completeness, transitivity and additivity on a two-atom space.

    ``p`` is the probability of the event ``A``. The addition example is only
    included for ``p <= 1/2`` (the sign flip needs ``p**2 + p - 1 < 0``).
    """
    if not 0.0 < p < 1.0:
        raise DomainError("p must lie strictly between 0 and 1")
    sp = _two_atom(p)
    one = np.ones(2)
    suite = {}

    ind_a, ind_not_a = np.array([1.0, 0.0]), np.array([0.0, 1.0])
    f = np.array([1.0 / p, 1.0 - p])
    suite["incomparable"] = _build(
        "incomparable",
        sp,
        {"f": f, "g": one, "indicator_A": ind_a, "indicator_not_A": ind_not_a},
        {
            "rel(f|g)": (1.0 - p) ** 2,
            "rel(g|f)": p**2,
            "rel(indicator_not_A|indicator_A)": math.inf,
            "rel(indicator_A|indicator_not_A)": math.inf,
        },
    )

    h = np.array([2.0 * p / (1.0 + p), 2.0])
    suite["non_transitive"] = _build(
        "non_transitive",
        sp,
        {"f": np.array([1.0 / p, 0.0]), "g": one, "h": h},
        {"rel(f|g)": 0.0, "rel(g|h)": 0.0, "rel(f|h)": (1.0 - p) / (2.0 * p)},
    )

    if p <= 0.5:
        g = np.array([p, 1.0 + p])
        flip = p * (1 - p) * (p**2 + p - 1) / ((1 + p**2) * (1 + (1 + p) ** 2))
        suite["addition_flip"] = _build(
            "addition_flip",
            sp,
            {"f": g**2, "g": g, "1+f": 1.0 + g**2, "1+g": 1.0 + g},
            {"rel(f|g)": 0.0, "rel(1+g|1+f)": flip},
        )
    return suite


def _build(name, space, outcomes, expected):
    computed = {}
    for key in expected:
        a, b = key[4:-1].split("|")
        computed[key] = rel(space, outcomes[a], outcomes[b])
    return Counterexample(name, space, outcomes, expected, computed)


# ---------------------------------------------------------------------------
# chain property and insurance
# ---------------------------------------------------------------------------


class ChainPreconditionError(DomainError):
    def __init__(self, link: int, value: float):
        super().__init__(f"link {link} -> {link + 1} is not a preference (rel = {value:.3e})")
        self.link = link
        self.value = value


def chain_check(space: FiniteSpace, outcomes: Sequence, atol: float = 1e-10) -> bool:
    """Check a closed preference chain ``f0 <= f1 <= ... <= fn = f0`` collapses to one point.

    Raises :class:`ChainPreconditionError` naming the first link whose ``rel``
    exceeds ``atol``, and :class:`DomainError` when the chain is not closed.
    """
    fs = [as_outcome(f, space.n) for f in outcomes]
    if len(fs) < 2:
        raise DomainError("a chain needs at least two outcomes")
    if not outcomes_equal(fs[0], fs[-1]):
        raise DomainError("chain is not closed: first and last outcomes differ")
    for i in range(len(fs) - 1):
        r = rel(space, fs[i], fs[i + 1])
        if r > atol:
            raise ChainPreconditionError(i, r)
    return all(outcomes_equal(f, fs[0], atol=max(ATOL_EQ, 1e3 * atol)) for f in fs)


def insurance_level(space: FiniteSpace, f, g, max_n: int = 10**7) -> int:
    """Smallest ``N`` with ``rel(g + N g 1{f<=g} | f + N g 1{f<=g}) < 0``.

    Requires ``{g < f}`` to carry positive probability. The search doubles and then
    bisects, which is valid since the relative return is nonincreasing in ``N``.
    """
    f, g = _pair(space, f, g)
    if not np.any(g < f):
        raise DomainError("the event {g < f} is null; no insurance level exists")
    ins = np.where(f <= g, g, 0.0)

    def value(n):
        return rel(space, g + n * ins, f + n * ins)

    if value(0) < 0:
        return 0
    hi = 1
    while value(hi) >= 0:
        hi *= 2
        if hi > max_n:
            raise DomainError(f"no insurance level found below {max_n}")
    lo = hi // 2
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if value(mid) < 0:
            hi = mid
        else:
            lo = mid
    return hi
