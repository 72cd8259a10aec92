"""Monte Carlo ensembles of nonnegative local martingales and checks on their maxima.

``BACKEND`` names the loop implementation picked at import: ``"compiled"`` when
the Cython extension is built, ``"python"`` otherwise. Set ``NUMINV_BACKEND`` to
force one.
"""
from .checks import (
    DISCRETIZATION_ALLOWANCE,
    KS_COEF,
    DoobRow,
    ExpLawReport,
    MarketRow,
    clock_excess,
    doob_identity_check,
    exp_law_check,
    martingale_mean,
    min_time_market_check,
)
from .ensemble import BACKEND, BACKENDS, GENERATORS, MCEstimate, PathEnsemble, path_streams, simulate

__all__ = [
    "BACKEND",
    "BACKENDS",
    "DISCRETIZATION_ALLOWANCE",
    "KS_COEF",
    "GENERATORS",
    "DoobRow",
    "ExpLawReport",
    "MCEstimate",
    "MarketRow",
    "PathEnsemble",
    "clock_excess",
    "doob_identity_check",
    "exp_law_check",
    "martingale_mean",
    "min_time_market_check",
    "path_streams",
    "simulate",
]
