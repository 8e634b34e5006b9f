"""End-to-end acceptance checks.

Each test evaluates every sub-check of one criterion, records a single
PASS/FAIL line (echoed in the terminal summary) and then asserts.
Set LOWSPLIT_PAPER_SCALE=1 to also run the optional 1024 x 1024 check.
"""

import filecmp
import os
import time

import numpy as np
import pytest
import scipy.linalg as la

from conftest import record_criterion
from lowsplit import bench, cli
from lowsplit.lowrank import TruncationRule
from lowsplit.matfun import ExpmConfig, StiffOperator
from lowsplit.odesolve import IvpConfig, reference_solve
from lowsplit.problems import (EntrywiseField, allen_cahn_cubic, cubic, flory_huggins, manufactured,
                               read_snapshot, riccati_penzl, zero_operator)
from lowsplit.rangefinder import AdaptiveConfig, adaptive_rangefinder
from lowsplit.splitting import SemilinearProblem, SplittingConfig, initial_factor, integrate, lie_step, strang_step
from lowsplit.steppers import StepperConfig, step

pytestmark = pytest.mark.slow

SEED = 42
DRE_MS = [32, 64, 128, 256, 512]
AC_MS = [16, 32, 64, 128, 256]


class Checks:
    def __init__(self, number):
        self.number = number
        self.items = []
        self.start = time.perf_counter()

    def add(self, name, ok, detail):
        self.items.append((name, bool(ok), detail))

    def finish(self):
        elapsed = time.perf_counter() - self.start
        passed = all(ok for _, ok, _ in self.items)
        text = "; ".join(f"{name}: {'ok' if ok else 'FAIL'} ({detail})" for name, ok, detail in self.items)
        line = f"{text} [{elapsed:.0f}s]"
        record_criterion(self.number, passed, line)
        print(f"criterion {self.number}: {'PASS' if passed else 'FAIL'}  {line}")
        assert passed, line


def within(value, target, frac):
    return abs(value - target) <= frac * abs(target)


# ---------------------------------------------------------------- Riccati

@pytest.fixture(scope="module")
def dre():
    prob = riccati_penzl(20)
    ref = reference_solve(prob, prob.t0, prob.T)[0]
    return prob, ref


@pytest.fixture(scope="module")
def dre_fixed(dre):
    prob, ref = dre
    cache = {}

    def get(scheme, kind):
        if (scheme, kind) not in cache:
            cfg = StepperConfig(kind=kind, rank=10)
            cache[scheme, kind] = bench.temporal_sweep(prob, scheme, cfg, [10], DRE_MS, seed=SEED,
                                                       reference=ref)[0]
        return cache[scheme, kind]

    return get


def _dre_order(number, dre_fixed, scheme, target, band, slope_range):
    checks = Checks(number)
    for kind in ("drsvd", "dgn"):
        rep = dre_fixed(scheme, kind)
        e512 = rep.errors[-1]
        checks.add(f"{kind} relerr(512)", within(e512, target, band),
                   f"{e512:.4e} vs {target:.4e} +-{band:.0%}")
        slope = rep.fitted_rate()
        checks.add(f"{kind} slope", slope_range[0] <= slope <= slope_range[1],
                   f"{slope:.4f} in [{slope_range[0]}, {slope_range[1]}]")
    checks.finish()


def test_criterion_01_riccati_lie_order(dre_fixed):
    _dre_order(1, dre_fixed, "lie", 1.3154e-2, 0.20, (0.9, 1.1))


def test_criterion_02_riccati_strang_order(dre_fixed):
    _dre_order(2, dre_fixed, "strang", 4.4038e-4, 0.25, (1.85, 2.05))


def test_criterion_03_riccati_adaptive_agreement(dre, dre_fixed):
    prob, ref = dre
    checks = Checks(3)
    for scheme in ("lie", "strang"):
        reps = {}
        for kind in ("adrsvd", "adgn"):
            # X0 = I is reduced to the rank-10 start shared with the fixed-rank runs
            reps[kind] = bench.temporal_sweep(prob, scheme, StepperConfig(kind=kind), [], DRE_MS,
                                              seed=SEED, reference=ref,
                                              initial_truncation=TruncationRule.fixed(10))[0]
        a, g = reps["adrsvd"].errors, reps["adgn"].errors
        sig3 = all(f"{x:.2e}" == f"{y:.2e}" for x, y in zip(a, g))
        checks.add(f"{scheme} ADRSVD=ADGN (3 s.f.)", sig3,
                   ", ".join(f"{x:.3e}/{y:.3e}" for x, y in zip(a, g)))
        fixed = dre_fixed(scheme, "drsvd").errors
        worst = max(abs(x - f) / f for x, f in zip(a + g, fixed + fixed))
        checks.add(f"{scheme} vs fixed r=10", worst <= 0.02, f"max deviation {worst:.2e}")
    checks.finish()


# ---------------------------------------------------------------- Allen-Cahn

@pytest.fixture(scope="module")
def ac():
    prob = allen_cahn_cubic(256)
    return prob, reference_solve(prob, prob.t0, prob.T)[0]


def test_criterion_04_allen_cahn_temporal(ac):
    prob, ref = ac
    checks = Checks(4)

    def sweep(scheme, r):
        return bench.temporal_sweep(prob, scheme, StepperConfig(rank=r), [r], AC_MS, seed=SEED,
                                    reference=ref)[0]

    lie = sweep("lie", 16)
    s = lie.fitted_rate()
    checks.add("Lie r=16 slope", 0.85 <= s <= 1.15, f"{s:.4f}")
    strang = sweep("strang", 18)
    s = strang.fitted_rate()
    checks.add("Strang r=18 slope", 1.8 <= s <= 2.1, f"{s:.4f}")
    starved = sweep("strang", 12)
    last = starved.rates[-2:]
    checks.add("Strang r=12 rates collapse", all(r < 0.5 for r in last),
               "finest rates " + ", ".join(f"{r:.3f}" for r in last)
               + ", errors " + ", ".join(f"{e:.3e}" for e in starved.errors))
    checks.finish()


@pytest.mark.skipif(os.environ.get("LOWSPLIT_PAPER_SCALE") != "1",
                    reason="paper-scale run is opt-in (LOWSPLIT_PAPER_SCALE=1)")
def test_criterion_04_paper_scale():
    prob = allen_cahn_cubic(1024)
    ref = reference_solve(prob, prob.t0, prob.T)[0]
    res = integrate(prob, SplittingConfig("strang", 256, StepperConfig(rank=18, seed=SEED)))
    err = bench.relative_error(res.final, ref)
    assert within(err, 2.6387e-8, 0.30), err


def test_criterion_05_allen_cahn_spatial():
    checks = Checks(5)
    reps = {}
    for scheme in ("lie", "strang"):
        reps[scheme] = bench.spatial_sweep(allen_cahn_cubic, scheme, StepperConfig(rank=14), [14],
                                           [16, 32, 64, 128], 256, seed=SEED)[0]
        rates = reps[scheme].rates[1:]
        checks.add(f"{scheme} rates", all(1.85 <= r <= 2.15 for r in rates),
                   ", ".join(f"{r:.4f}" for r in rates))
    gap = max(abs(a - b) for a, b in zip(reps["lie"].rates[1:], reps["strang"].rates[1:]))
    checks.add("Lie vs Strang", gap <= 0.05, f"max rate gap {gap:.2e}")
    checks.finish()


# ---------------------------------------------------------------- method properties

def test_criterion_06_exactness():
    checks = Checks(6)
    for kind in ("drsvd", "dgn"):
        worst = 0.0
        for seed in range(20):
            prob = manufactured(20, 20, 3, seed=seed)
            exact = prob.meta["exact"](prob.T)
            cfg = StepperConfig(kind=kind, rank=3, oversample=2, extra_oversample=2, power_iters=1,
                                seed=seed)
            out, _ = step(prob.X0, prob.F, prob.t0, prob.T - prob.t0, cfg)
            worst = max(worst, np.linalg.norm(out.dense() - exact) / np.linalg.norm(exact))
        checks.add(kind, worst <= 1e-6, f"max relerr {worst:.2e} over 20 seeds")
    checks.finish()


def test_criterion_07_estimator_soundness():
    checks = Checks(7)
    prob = manufactured(20, 20, 3, rank_end=8)
    exact = prob.meta["exact"](prob.T)
    tol = 1e-8
    ivp = IvpConfig(rtol=1e-11, atol=1e-13)
    exceed, worst = 0, 0.0
    for seed in range(100):
        cfg = AdaptiveConfig(tol=tol, beta=1e-4, ivp=ivp, seed=seed)
        Q = adaptive_rangefinder(prob.X0, prob.F, prob.t0, prob.T - prob.t0, cfg)
        resid = la.norm(exact - Q @ (Q.T @ exact), 2)
        worst = max(worst, resid)
        exceed += resid > tol
    checks.add("residual <= tol", exceed <= 1, f"{exceed}/100 runs exceed, worst {worst:.2e}")
    checks.finish()


TIGHT_IVP = IvpConfig(rtol=1e-12, atol=1e-14, max_steps=2_000_000)
TIGHT_EXPM = ExpmConfig(tol=1e-12)


def toy_problems():
    return [allen_cahn_cubic(16).with_horizon(0.1), riccati_penzl(4),
            flory_huggins(32, "star").with_horizon(0.05), manufactured(20, 20, 3, rank_end=5)]


def _split_final(prob, scheme, M):
    r = min(prob.shape)
    cfg = SplittingConfig(scheme, M, StepperConfig(rank=r, ivp=TIGHT_IVP, seed=SEED), TIGHT_EXPM)
    return integrate(prob, cfg).final.dense()


def test_criterion_08_oracle_equivalence():
    checks = Checks(8)
    for prob in toy_problems():
        ref = reference_solve(prob, prob.t0, prob.T, TIGHT_IVP)[0]
        nref = np.linalg.norm(ref)
        for scheme, p in (("lie", 1), ("strang", 2)):
            X8 = _split_final(prob, scheme, 8)
            X16 = _split_final(prob, scheme, 16)
            # Richardson estimate of the splitting error at M = 8, plus the inner-solver floor
            bound = np.linalg.norm(X8 - X16) * 2 ** p / (2 ** p - 1) + 1e-9 * nref
            err = np.linalg.norm(X8 - ref)
            checks.add(f"{prob.name} {scheme}", err <= 10 * bound,
                       f"err {err / nref:.2e}, bound {bound / nref:.2e}")
    # local order on the scalar probe x' = -x + (x - x^3)
    scalar = SemilinearProblem(StiffOperator(np.array([[-1.0]])), zero_operator(1),
                               EntrywiseField(cubic), np.array([[0.5]]), 0.0, 1.0)
    cfg = SplittingConfig(stepper=StepperConfig(rank=1, ivp=TIGHT_IVP), expm=TIGHT_EXPM)
    X = initial_factor(scalar.X0, TruncationRule.fixed(1))
    taus = 2.0 ** -np.arange(4, 9)
    for advance, order in ((lie_step, 2.0), (strang_step, 3.0)):
        errs = [abs(advance(scalar, X, 0.0, tau, cfg)[0].dense()[0, 0]
                    - reference_solve(scalar.with_horizon(tau), 0.0, tau, TIGHT_IVP)[0][0, 0])
                for tau in taus]
        slope = np.polyfit(np.log(taus), np.log(errs), 1)[0]
        checks.add(f"{advance.__name__} local slope", abs(slope - order) <= 0.1, f"{slope:.3f}")
    checks.finish()


# ---------------------------------------------------------------- long runs

# tolerances for the long runs; see the README section on Flory-Huggins
FH_STEPPER = StepperConfig(kind="adrsvd", rf_tol=1e-3, ivp=IvpConfig(rtol=1e-5, atol=1e-8), seed=SEED)


def test_criterion_09_flory_huggins(tmp_path):
    checks = Checks(9)
    for ic, T, snaps in (("star", 100.0, [0, 10, 50, 100]), ("butterfly", 10.0, [0, 1, 5, 10])):
        prob = flory_huggins(128, ic)
        lo_b, hi_b = prob.meta["bounds"]
        start = time.perf_counter()
        res = bench.simulate(prob, "strang", FH_STEPPER, 0.01, T, snaps, tmp_path / ic)
        wall = time.perf_counter() - start
        finite = all(np.all(np.isfinite(read_snapshot(p)[0])) for p in res.snapshots)
        checks.add(f"{ic} finite", finite and len(res.snapshots) == 4,
                   f"{len(res.snapshots)} snapshots, {wall:.0f}s")
        lo, hi = res.extremes
        start_lo = initial_factor(prob.X0, FH_STEPPER.rule).dense().min()
        checks.add(f"{ic} bounds", lo_b <= lo and hi <= hi_b,
                   f"u in [{lo:.4g}, {hi:.4g}], truncated u0 min {start_lo:.4g}")
        E = np.array(res.energies)
        rise = np.max((E[1:] - E[:-1]) / np.abs(E[:-1]))
        checks.add(f"{ic} energy", rise <= 1e-6, f"max relative rise {rise:.2e}")
        ranks = res.trace.ranks
        checks.add(f"{ic} rank", max(ranks) <= 64, f"ranks {min(ranks)}-{max(ranks)}")
    elapsed = time.perf_counter() - checks.start
    checks.add("runtime", elapsed < 20 * 60, f"{elapsed / 60:.1f} min")
    checks.finish()


def test_criterion_10_cli_determinism(tmp_path):
    checks = Checks(10)
    runs = {
        "convergence": lambda d: ["convergence", "--grid", "16", "--t-final", "0.1", "--ranks", "6,8",
                                  "--steps", "4,8", "--out", str(d / "conv.csv")],
        "simulate": lambda d: ["simulate", "--grid", "32", "--dt", "0.01", "--t-final", "0.05",
                               "--snapshots", "0,0.05", "--rf-tol", "1e-4", "--out-dir", str(d / "snaps")],
        "best-rank": lambda d: ["best-rank", "--grid", "4", "--ranks", "3", "--steps", "8",
                                "--t-final", "0.01", "--out", str(d / "best.csv")],
        "adaptive convergence": lambda d: ["convergence", "--problem", "dre-penzl", "--grid", "4",
                                           "--stepper", "adgn", "--steps", "4,8", "--t-final", "0.01",
                                           "--out", str(d / "aconv.csv")],
    }
    for name, argv in runs.items():
        dirs = []
        for rep in ("a", "b"):
            d = tmp_path / name.replace(" ", "_") / rep
            d.mkdir(parents=True)
            assert cli.main(argv(d)) == 0
            dirs.append(d)
        files = sorted(p.relative_to(dirs[0]) for p in dirs[0].rglob("*") if p.is_file())
        same = bool(files) and all(filecmp.cmp(dirs[0] / f, dirs[1] / f, shallow=False) for f in files)
        checks.add(name, same, f"{len(files)} files byte-identical" if same else "outputs differ")
    checks.finish()
