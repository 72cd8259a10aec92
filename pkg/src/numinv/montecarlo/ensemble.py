"""Path ensembles of nonnegative local martingales started at one.

Two generators are available:

``gbm_martingale``
    ``L_t = exp(sigma W_t - sigma^2 t / 2)`` on a uniform grid with exact
    lognormal increments. The running maximum between grid points is drawn from
    the exact Brownian-bridge law unless ``bridge=False``.
``inverse_bessel3``
    ``L_t = 1 / |B_t + e_1|`` for a three-dimensional Brownian motion ``B``, with
    exact Gaussian increments on a grid whose step scales with the squared
    radius (``stepping="scaled"``) or is uniform.

Each path owns two counter-based Philox streams keyed by the master seed, so
results do not depend on chunking or on which backend runs the loops.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np

from ..static import DomainError
from . import _fallback

try:  # compiled loops are optional
    from . import _kernels
except ImportError:  # pragma: no cover - depends on the build
    _kernels = None

GENERATORS = ("gbm_martingale", "inverse_bessel3")
BACKENDS = ("compiled", "python")


def default_backend() -> str:
    forced = os.environ.get("NUMINV_BACKEND", "").strip().lower()
    if forced in BACKENDS:
        if forced == "compiled" and _kernels is None:
            raise ImportError("NUMINV_BACKEND=compiled but the extension is not built")
        return forced
    return "compiled" if _kernels is not None else "python"


BACKEND = default_backend()


def _module(backend: str | None):
    backend = backend or BACKEND
    if backend == "compiled":
        if _kernels is None:
            raise ImportError("the compiled extension is not available")
        return _kernels
    if backend == "python":
        return _fallback
    raise DomainError(f"unknown backend {backend!r}")


def path_streams(seed: int, start: int, count: int) -> tuple[list, list]:
    """Philox bit generators for paths ``start .. start + count - 1``.

    The key comes from the master seed; the path index sits in the top word of the
    256-bit counter, so streams of different paths never overlap.
    """
    state = np.random.SeedSequence(seed).generate_state(4, np.uint64)
    k_normal, k_bridge = state[:2], state[2:]
    normal, bridge = [], []
    for p in range(start, start + count):
        counter = [0, 0, 0, p]
        normal.append(np.random.Philox(counter=counter, key=k_normal))
        bridge.append(np.random.Philox(counter=counter, key=k_bridge))
    return normal, bridge


@dataclass(frozen=True)
class MCEstimate:
    """Sample mean with its standard error ``std / sqrt(n)``."""

    estimate: float
    stderr: float
    n: int

    @classmethod
    def from_samples(cls, x) -> "MCEstimate":
        x = np.asarray(x, dtype=float)
        n = x.size
        mean = math.fsum(x) / n
        var = math.fsum((x - mean) ** 2) / (n - 1) if n > 1 else 0.0
        return cls(mean, math.sqrt(var / n), n)


@dataclass(frozen=True, eq=False)
class PathEnsemble:
    """Per-path summaries of a simulated ensemble.

    Attributes
    ----------
    log_max : log of the running maximum of ``L`` (``H_inf`` of the clock)
    log_end : log of ``L`` at the end of the path
    t_max, t_end : time of the running maximum and of the last grid point
    clock_sum : ``sum L dK`` with ``K = 1 - 1 / max L``
    max_jump : largest single-step rise of ``log max L``
    x_at_max : wealth at the time of the maximum of ``L`` (the minimum of ``S = 1/L``)
        for each constant fraction in ``fractions``
    steps : grid steps taken per path
    paths, path_times : full paths when requested (``NaN`` padded)
    """

    generator: str
    seed: int
    n_paths: int
    n_steps: int
    dt: float
    horizon: float
    params: dict
    fractions: np.ndarray
    log_max: np.ndarray
    log_end: np.ndarray
    t_max: np.ndarray
    t_end: np.ndarray
    clock_sum: np.ndarray
    max_jump: np.ndarray
    x_at_max: np.ndarray
    steps: np.ndarray
    backend: str
    paths: np.ndarray | None = field(default=None, repr=False)
    path_times: np.ndarray | None = field(default=None, repr=False)

    @property
    def running_max(self) -> np.ndarray:
        return np.exp(self.log_max)

    @property
    def clock_end(self) -> np.ndarray:
        """``K_inf = 1 - 1 / max L`` per path."""
        return -np.expm1(-self.log_max)

    @property
    def truncation_residual(self) -> np.ndarray:
        """``L_end / max L``: chance that the maximum is exceeded after the horizon."""
        return np.exp(self.log_end - self.log_max)

    def summary_arrays(self) -> dict:
        return {k: getattr(self, k) for k in ("log_max", "log_end", "t_max", "t_end", "clock_sum", "max_jump", "x_at_max", "steps")}


def simulate(
    generator: str,
    n_paths: int,
    n_steps: int,
    dt: float,
    seed: int,
    *,
    sigma: float = 1.0,
    stepping: str | None = None,
    horizon: float | None = None,
    far_step: float = 0.04,
    bridge: bool = True,
    fractions=(),
    store_paths: bool = False,
    backend: str | None = None,
    chunk: int = 4096,
) -> PathEnsemble:
    """Simulate ``n_paths`` independent paths.

    Parameters
    ----------
    generator : ``"gbm_martingale"`` or ``"inverse_bessel3"``
    n_steps : grid steps; an upper bound on them for scaled stepping
    dt : time step for uniform stepping. For scaled stepping it is the squared
        relative step near the running minimum of the radius.
    horizon : end time for scaled stepping (defaults to ``n_steps * dt`` otherwise)
    far_step : squared relative step far from the running minimum (scaled only)
    bridge : draw the within-step maximum of the geometric martingale exactly
    fractions : constant fractions of wealth in ``S = 1/L`` whose wealth is
        recorded at the time ``L`` peaks
    """
    if generator not in GENERATORS:
        raise DomainError(f"unknown generator {generator!r}; choose from {GENERATORS}")
    if n_paths < 1 or n_steps < 1:
        raise DomainError("n_paths and n_steps must be positive")
    if not (dt > 0 and math.isfinite(dt)):
        raise DomainError("dt must be positive")
    if not sigma > 0:
        raise DomainError("sigma must be positive")
    stepping = stepping or ("scaled" if generator == "inverse_bessel3" else "uniform")
    if stepping not in ("uniform", "scaled") or (stepping == "scaled" and generator != "inverse_bessel3"):
        raise DomainError(f"stepping {stepping!r} is not available for {generator}")
    fr = np.ascontiguousarray(fractions, dtype=float).ravel()
    if np.any(fr < 0) or np.any(fr > 1):
        raise DomainError("constant fractions must lie in [0, 1]")
    mod = _module(backend)
    used = backend or BACKEND
    if stepping == "uniform":
        horizon = n_steps * dt
        near = far = dt
    else:
        if horizon is None or not horizon > 0:
            raise DomainError("scaled stepping needs a positive horizon")
        if not far_step >= dt:
            raise DomainError("far_step must be at least dt")
        near, far = dt, far_step
    out = {
        "log_max": np.zeros(n_paths),
        "log_end": np.zeros(n_paths),
        "t_max": np.zeros(n_paths),
        "t_end": np.zeros(n_paths),
        "clock_sum": np.zeros(n_paths),
        "max_jump": np.zeros(n_paths),
        "x_at_max": np.ones((n_paths, fr.size)),
        "steps": np.zeros(n_paths, dtype=np.int64),
    }
    store = store_t = None
    if store_paths:
        if n_paths * (n_steps + 1) > 5 * 10**7:
            raise DomainError("too many values to store full paths; lower n_paths or n_steps")
        store = np.full((n_paths, n_steps + 1), np.nan)
        store_t = np.full((n_paths, n_steps + 1), np.nan)
    for lo in range(0, n_paths, chunk):
        cnt = min(chunk, n_paths - lo)
        normal, bridge_gens = path_streams(seed, lo, cnt)
        part = {k: np.ascontiguousarray(v[lo : lo + cnt]) for k, v in out.items()}
        ps = None if store is None else np.ascontiguousarray(store[lo : lo + cnt])
        pt = None if store_t is None else np.ascontiguousarray(store_t[lo : lo + cnt])
        if generator == "gbm_martingale":
            mod.gbm_paths(normal, bridge_gens, n_steps, dt, sigma, bridge, fr, part, ps)
        else:
            mod.bessel_paths(normal, n_steps, stepping == "scaled", near, far, horizon, fr, part, ps, pt)
        for k, v in part.items():
            out[k][lo : lo + cnt] = v
        if ps is not None:
            store[lo : lo + cnt] = ps
            if generator == "inverse_bessel3":
                store_t[lo : lo + cnt] = pt
            else:
                store_t[lo : lo + cnt] = dt * np.arange(n_steps + 1)
    for v in out.values():
        v.setflags(write=False)
    params = {"sigma": sigma, "stepping": stepping, "bridge": bool(bridge and generator == "gbm_martingale")}
    if stepping == "scaled":
        params["far_step"] = far_step
    return PathEnsemble(
        generator,
        int(seed),
        int(n_paths),
        int(n_steps),
        float(dt),
        float(horizon),
        params,
        fr,
        backend=used,
        paths=store,
        path_times=store_t,
        **out,
    )
