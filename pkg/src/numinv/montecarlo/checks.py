"""Statistical checks on path ensembles.

All three checks need a local martingale that starts at one and vanishes at
infinity, which holds for both built-in generators. Grid sampling misses part of
the true running maximum, so the maximum is biased low; the bias is reported
through the truncation residual and the allowance terms rather than hidden.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from ..static import DomainError
from .ensemble import GENERATORS, MCEstimate, PathEnsemble

KS_COEF = 1.63  # 1% critical value of the Kolmogorov-Smirnov statistic times sqrt(n)
DISCRETIZATION_ALLOWANCE = 0.01


def _require_vanishing(ens: PathEnsemble) -> None:
    if ens.generator not in GENERATORS:
        raise DomainError(f"ensemble {ens.generator!r} is not known to vanish at infinity")


@dataclass(frozen=True)
class DoobRow:
    gamma: float
    empirical: float
    target: float
    stderr: float

    @property
    def deviation(self) -> float:
        return self.empirical - self.target

    def as_dict(self) -> dict:
        return {"gamma": self.gamma, "empirical": self.empirical, "target": self.target, "se": self.stderr}


def doob_identity_check(ens: PathEnsemble, gammas) -> list[DoobRow]:
    """Exceedance frequency ``P[max L > gamma]`` against ``min(1, 1 / gamma)``.

    The standard error is the binomial one, ``sqrt(p (1 - p) / n)``.
    """
    _require_vanishing(ens)
    rows = []
    for g in gammas:
        if g < 1:
            raise DomainError("levels below the starting value are trivial; need gamma >= 1")
        hit = ens.log_max > math.log(g) if g > 1 else np.ones(ens.n_paths, bool)
        p = float(np.count_nonzero(hit)) / ens.n_paths
        rows.append(DoobRow(float(g), p, min(1.0, 1.0 / g), math.sqrt(p * (1 - p) / ens.n_paths)))
    return rows


@dataclass(frozen=True)
class ExpLawReport:
    mean: MCEstimate
    ks: float
    ks_threshold: float
    clock_below_one: bool
    residual: MCEstimate
    clock_excess: float  # largest normalized excess of sum L dK over log max L, see clock_excess()

    @property
    def mean_within_3se(self) -> bool:
        return abs(self.mean.estimate - 1.0) <= 3 * self.mean.stderr

    @property
    def ks_ok(self) -> bool:
        return self.ks < self.ks_threshold

    def as_dict(self) -> dict:
        return {
            "mean_log_max": self.mean.estimate,
            "mean_se": self.mean.stderr,
            "ks": self.ks,
            "ks_threshold": self.ks_threshold,
            "clock_below_one": self.clock_below_one,
            "truncation_residual": self.residual.estimate,
            "clock_excess": self.clock_excess,
        }


def exp_law_check(ens: PathEnsemble, allowance: float = DISCRETIZATION_ALLOWANCE) -> ExpLawReport:
    """Compare ``H_inf = log max L`` with the standard exponential law."""
    _require_vanishing(ens)
    H = ens.log_max
    ks = float(stats.kstest(H, "expon").statistic)
    K = ens.clock_end
    return ExpLawReport(
        MCEstimate.from_samples(H),
        ks,
        KS_COEF / math.sqrt(ens.n_paths) + allowance,
        bool(np.all(K < 1.0)),
        MCEstimate.from_samples(ens.truncation_residual),
        float(np.max(clock_excess(ens))),
    )


def clock_excess(ens: PathEnsemble) -> np.ndarray:
    """Per-path ``(sum L dK - H) / (H g(jump))`` with ``g(x) = (e^x - 1 - x) / x``.

    Each rise ``x`` of ``H = log max L`` contributes ``e^x - 1`` to ``sum L dK``, so
    the excess over ``H`` lies between 0 and ``H g(max jump)``. Values in
    ``[0, 1]`` (up to rounding) confirm the discretization bound path by path.
    """
    H = ens.log_max
    x = ens.max_jump
    with np.errstate(divide="ignore", invalid="ignore"):
        g = np.where(x > 0, (np.expm1(x) - x) / np.where(x > 0, x, 1.0), 0.0)
        bound = H * g
        excess = ens.clock_sum - H
        return np.where(bound > 0, excess / np.where(bound > 0, bound, 1.0), np.where(np.abs(excess) <= 1e-12, 0.0, np.inf))


@dataclass(frozen=True)
class MarketRow:
    fraction: float
    value: MCEstimate

    @property
    def bound(self) -> float:
        return 1.0 + 3 * self.value.stderr

    @property
    def ok(self) -> bool:
        return self.value.estimate <= self.bound

    def as_dict(self) -> dict:
        return {"fraction": self.fraction, "mean_wealth": self.value.estimate, "se": self.value.stderr, "bound": self.bound}


def min_time_market_check(ens: PathEnsemble) -> list[MarketRow]:
    """Expected wealth sampled when the price ``S = 1/L`` is at its minimum.

    One row per constant fraction recorded in the ensemble; each should satisfy
    ``E[X_T] <= 1 + 3 SE``. The all-in fraction gives ``E[min S]``.
    """
    _require_vanishing(ens)
    if ens.fractions.size == 0:
        raise DomainError("the ensemble recorded no constant-fraction strategies")
    return [MarketRow(float(f), MCEstimate.from_samples(ens.x_at_max[:, j])) for j, f in enumerate(ens.fractions)]


def martingale_mean(ens: PathEnsemble) -> MCEstimate:
    """``E[L]`` at the end of the simulated horizon."""
    return MCEstimate.from_samples(np.exp(ens.log_end))
