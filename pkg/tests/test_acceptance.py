"""Acceptance criteria 1 to 10.

Every criterion prints one ``criterion N: PASS|FAIL`` line and then asserts. Seeds
are fixed up front: ``20260100 + N`` for the sweep of criterion ``N`` (criteria 6
and 7 share the market sweep), 20260101 for the geometric ensemble and 20260102
for the reciprocal Bessel ensemble. Full size runs take a few minutes on one core.
"""
import math
import time
from fractions import Fraction

import numpy as np
import pytest

from numinv import montecarlo as mc
from numinv import static, suites

SEED = 20260100
N_PATHS = 10**5

# tolerances pinned from the criteria
TOL_CLOSED_FORM = 1e-12
TOL_SIMPLEX = 1e-8
TOL_CERT = 1e-9
TOL_RECOVERY = 1e-8
TOL_PAIR = 1e-10
TOL_ROUND_TRIP = 1e-12
PERTURB_EPS = (1e-2, 1e-3, 1e-4)
PERTURB_FINAL = 1e-3
TOL_MARKET = 1e-9
TOL_DOOB = 0.02
MEAN_RANGE = (0.97, 1.03)
TOL_DOWNTURN = 0.02


def line(capsys, n, ok, detail, started):
    with capsys.disabled():
        print(f"\ncriterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}  ({time.perf_counter() - started:.1f} s)")
    return ok


BUILD_SECONDS = {}  # simulation time per ensemble, charged to the criteria that use it


@pytest.fixture(scope="session")
def gbm_ensemble():
    t0 = time.perf_counter()
    ens = mc.simulate("gbm_martingale", N_PATHS, 20000, 1e-3, SEED + 1, sigma=1.0)
    BUILD_SECONDS["gbm"] = time.perf_counter() - t0
    return ens


@pytest.fixture(scope="session")
def bessel_ensemble():
    t0 = time.perf_counter()
    ens = mc.simulate(
        "inverse_bessel3", N_PATHS, 10**6, 1e-4, SEED + 2, horizon=1e6, far_step=0.04, fractions=[0.0, 0.25, 0.5, 0.75, 1.0]
    )
    BUILD_SECONDS["bessel"] = time.perf_counter() - t0
    return ens


@pytest.fixture(scope="session")
def market_sweep():
    t0 = time.perf_counter()
    r = suites.market_sweep(np.random.default_rng(SEED + 6), n_markets=20, max_depth=4, max_assets=3, n_times=5, max_streams=10**4)
    return r, time.perf_counter() - t0


def exact_rel(p, f, g):
    """``E[f / g] - 1`` on two atoms in rational arithmetic (``inf`` for mass where ``g = 0``)."""
    total = Fraction(0)
    for w, a, b in zip((p, 1 - p), f, g):
        if b == 0:
            if a > 0:
                return math.inf
            continue
        total += w * Fraction(a) / Fraction(b)
    return total - 1


def test_criterion_01_counterexamples(capsys):
    t0 = time.perf_counter()
    worst, flips = 0.0, True
    for p in (0.1, 0.3, 0.5):
        fp = Fraction(p)
        targets = {
            ("non_transitive", "rel(f|h)"): (1 - fp) / (2 * fp),
            ("incomparable", "rel(f|g)"): (1 - fp) ** 2,
            ("incomparable", "rel(g|f)"): fp**2,
            ("non_transitive", "rel(f|g)"): Fraction(0),
            ("non_transitive", "rel(g|h)"): Fraction(0),
            ("addition_flip", "rel(f|g)"): Fraction(0),
        }
        suite = static.counterexample_suite(p)
        for (ex, key), target in targets.items():
            got = suite[ex].computed[key]
            worst = max(worst, abs(got - float(target)))
        # the addition flip recomputed in rational arithmetic from the same outcomes
        out = suite["addition_flip"].outcomes
        exact = exact_rel(fp, [Fraction(float(x)) for x in out["1+g"]], [Fraction(float(x)) for x in out["1+f"]])
        got = suite["addition_flip"].computed["rel(1+g|1+f)"]
        worst = max(worst, abs(got - float(exact)))
        flips &= got < 0 and exact < 0
    ok = worst <= TOL_CLOSED_FORM and flips and time.perf_counter() - t0 < 1.0
    assert line(capsys, 1, ok, f"max error {worst:.2e} (tol {TOL_CLOSED_FORM:g}), sign flip {flips}", t0)


def test_criterion_02_full_simplex(capsys):
    t0 = time.perf_counter()
    r = suites.full_simplex_sweep(np.random.default_rng(SEED + 2), n_spaces=50, min_atoms=2, max_atoms=10)
    ok = r.max_rel_error <= TOL_SIMPLEX and r.max_certificate <= TOL_CERT and time.perf_counter() - t0 < 10
    detail = f"{r.n_spaces} spaces, max |f mu / w - 1| {r.max_rel_error:.2e}, max rel(v|f) {r.max_certificate:.2e}"
    assert line(capsys, 2, ok, detail, t0)


def test_criterion_03_recovery(capsys):
    t0 = time.perf_counter()
    r = suites.recovery_sweep(np.random.default_rng(SEED + 3), n_oracles=50)
    ok = r.max_error <= TOL_RECOVERY and r.violations == 0
    assert line(capsys, 3, ok, f"{r.n_oracles} oracles, max error {r.max_error:.2e}, inconsistent {r.violations}", t0)


def test_criterion_04_canonical_pairs(capsys):
    t0 = time.perf_counter()
    r = suites.canonical_sweep(np.random.default_rng(SEED + 4), n_trees=200, max_depth=5, max_branching=3)
    worst_name = max(r.violations, key=r.violations.get)
    ok = r.worst <= TOL_PAIR and r.max_round_trip <= TOL_ROUND_TRIP and time.perf_counter() - t0 < 30
    detail = f"{r.n_trees} trees, worst violation {r.worst:.2e} ({worst_name}), round trip {r.max_round_trip:.2e}"
    assert line(capsys, 4, ok, detail, t0)


def test_criterion_05_perturbation(capsys):
    t0 = time.perf_counter()
    r = suites.perturbation_sweep(np.random.default_rng(SEED + 5), n_trees=200, eps=PERTURB_EPS, final_bound=PERTURB_FINAL)
    ok = r.non_monotone == 0 and r.above_final == 0
    gaps = ", ".join(f"{g:.2e}" for g in r.max_gaps)
    detail = f"{r.n_trees} trees, worst K gaps [{gaps}], non-monotone {r.non_monotone}, final >= {PERTURB_FINAL:g}: {r.above_final}"
    assert line(capsys, 5, ok, detail, t0)


def test_criterion_06_consumption(capsys, market_sweep):
    r, secs = market_sweep
    t0 = time.perf_counter() - secs
    ok = r.consumption_worst <= TOL_MARKET and r.max_streams_per_market <= 10**4 and secs < 120
    detail = f"{r.n_markets} markets, {r.streams} streams (max {r.max_streams_per_market} per market), max rel {r.consumption_worst:.2e}"
    assert line(capsys, 6, ok, detail, t0)


def test_criterion_07_random_times(capsys, market_sweep):
    r, secs = market_sweep
    t0 = time.perf_counter() - secs
    ok = r.sampling_worst <= TOL_MARKET and r.stopping_times == 0
    detail = f"{r.times} non-stopping times, max E[X_T / X_hat_T] - 1 = {r.sampling_worst:.2e}"
    assert line(capsys, 7, ok, detail, t0)


def test_criterion_08_doob(capsys, gbm_ensemble):
    t0 = time.perf_counter() - BUILD_SECONDS["gbm"]
    rows = mc.doob_identity_check(gbm_ensemble, [2, 4, 8])
    dev = max(abs(r.deviation) for r in rows)
    ok = dev <= TOL_DOOB and time.perf_counter() - t0 < 180
    detail = ", ".join(f"P[max > {r.gamma:g}] = {r.empirical:.4f}" for r in rows) + f"; max deviation {dev:.4f}"
    assert line(capsys, 8, ok, detail, t0)


@pytest.mark.parametrize("which", ["gbm", "bessel"])
def test_criterion_09_exp_law(capsys, which, request):
    ens = request.getfixturevalue(f"{which}_ensemble")
    t0 = time.perf_counter() - BUILD_SECONDS[which]
    rep = mc.exp_law_check(ens)
    m = rep.mean.estimate
    threshold = 1.63 / math.sqrt(ens.n_paths) + 0.01
    ok = MEAN_RANGE[0] <= m <= MEAN_RANGE[1] and rep.ks < threshold and rep.clock_below_one
    detail = f"{which}: mean log max {m:.4f} (se {rep.mean.stderr:.4f}), KS {rep.ks:.4f} < {threshold:.4f}"
    assert line(capsys, 9, ok, detail, t0)


def test_criterion_10_downturn(capsys, bessel_ensemble):
    t0 = time.perf_counter() - BUILD_SECONDS["bessel"]
    rows = {r.fraction: r for r in mc.min_time_market_check(bessel_ensemble)}
    cash = rows[0.0].value
    all_in = rows[1.0].value.estimate
    mixed = [r for f, r in rows.items() if 0.0 < f < 1.0]
    ok = cash.estimate == 1.0 and cash.stderr == 0.0 and abs(all_in - 0.5) <= TOL_DOWNTURN and all(r.ok for r in mixed)
    detail = f"E[S_T] = {all_in:.4f}, cash {cash.estimate!r}, " + ", ".join(
        f"pi={r.fraction:g}: {r.value.estimate:.4f} <= {r.bound:.4f}" for r in mixed
    )
    assert line(capsys, 10, ok, detail, t0)
