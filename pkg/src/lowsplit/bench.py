"""Convergence sweeps, best-rank comparisons and long simulations."""

from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import InvalidConfigError, SimulationDivergedError, UndefinedRelativeError
from .lowrank import LowRankFactor, TruncationRule, svd_factors, tail_norm
from .matfun import ExpmConfig
from .odesolve import REFERENCE_IVP, IvpConfig, reference_solve
from .problems import write_snapshot
from .splitting import SemilinearProblem, SplittingConfig, initial_factor, integrate, step_grid
from .steppers import StepperConfig

CONVERGENCE_HEADER = ("method", "scheme", "rank", "M", "relerr", "rate")
RANK_HEADER = ("step", "t", "rank")
BEST_RANK_HEADER = ("t", "relerr_method", "relerr_bestrank")


def relative_error(X: LowRankFactor, X_ref: Union[np.ndarray, LowRankFactor]) -> float:
    """||X - X_ref||_F / ||X_ref||_F; stays factored when X_ref is a factor."""
    if isinstance(X_ref, LowRankFactor):
        if X.shape != X_ref.shape:
            raise InvalidConfigError(f"shape mismatch {X.shape} vs {X_ref.shape}")
        ref = X_ref.norm()
        L = np.hstack([X.left(), -X_ref.left()])
        R = np.hstack([X.V, X_ref.V])
        _, s, _ = svd_factors((L, R))
        diff = float(np.linalg.norm(s))
    else:
        X_ref = np.asarray(X_ref, dtype=float)
        if X.shape != X_ref.shape:
            raise InvalidConfigError(f"shape mismatch {X.shape} vs {X_ref.shape}")
        ref = float(np.linalg.norm(X_ref))
        diff = float(np.linalg.norm(X.dense() - X_ref))
    if ref == 0.0:
        raise UndefinedRelativeError("reference has zero norm")
    return diff / ref


def observed_rates(errors: Sequence[float]) -> List[Optional[float]]:
    """log2 of successive error ratios; None for the first row."""
    out: List[Optional[float]] = [None]
    for a, b in zip(errors[:-1], errors[1:]):
        out.append(math.log2(a / b) if a > 0 and b > 0 else None)
    return out


def fitted_rate(Ms: Sequence[int], errors: Sequence[float], finest: int = 4) -> float:
    """Least-squares order over the ``finest`` largest M (minus the log-log slope)."""
    Ms, errors = list(Ms)[-finest:], list(errors)[-finest:]
    slope = np.polyfit(np.log2(Ms), np.log2(errors), 1)[0]
    return float(-slope)


@dataclass
class ConvergenceReport:
    problem: str
    scheme: str
    method: str
    rank: Union[int, str]
    Ms: List[int] = field(default_factory=list)
    errors: List[float] = field(default_factory=list)
    seed: int = 0
    walltimes: List[float] = field(default_factory=list)

    @property
    def rates(self) -> List[Optional[float]]:
        return observed_rates(self.errors)

    @property
    def rows(self) -> List[Tuple[int, float, Optional[float]]]:
        return list(zip(self.Ms, self.errors, self.rates))

    def fitted_rate(self, finest: int = 4) -> float:
        return fitted_rate(self.Ms, self.errors, finest)

    def csv_rows(self) -> List[Tuple[str, ...]]:
        return [(self.method, self.scheme, str(self.rank), str(M), f"{e:.10e}",
                 "" if r is None else f"{r:.4f}") for M, e, r in self.rows]


@dataclass
class RankTrace:
    rows: List[Tuple[int, float, int]] = field(default_factory=list)

    def append(self, step: int, t: float, rank: int):
        if rank < 1:
            raise ValueError("rank must be positive")
        self.rows.append((step, t, rank))

    @property
    def ranks(self) -> List[int]:
        return [r for _, _, r in self.rows]

    def csv_rows(self):
        return [(str(k), f"{t:.10g}", str(r)) for k, t, r in self.rows]


def write_csv(path, header: Sequence[str], rows: Sequence[Sequence[str]]) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    return path


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _label(cfg: StepperConfig) -> Union[int, str]:
    return f"tol{cfg.rule.rtol:g}" if cfg.adaptive else cfg.rank


def temporal_sweep(problem: SemilinearProblem, scheme: str, stepper: StepperConfig,
                   ranks: Sequence[int], Ms: Sequence[int], seed: int = 0,
                   reference: Optional[np.ndarray] = None, expm: ExpmConfig = ExpmConfig(),
                   ref_ivp: IvpConfig = REFERENCE_IVP,
                   initial_truncation: Optional[TruncationRule] = None) -> List[ConvergenceReport]:
    """Final-time errors for every (rank, M) pair against a dense reference.

    For adaptive steppers ``ranks`` is ignored and a single report is made.
    """
    if reference is None:
        reference = reference_solve(problem, problem.t0, problem.T, ref_ivp)[0]
    Ms = sorted(int(M) for M in Ms)
    reports = []
    for r in ([None] if stepper.adaptive else ranks):
        cfg = replace(stepper, seed=seed) if r is None else replace(stepper, rank=int(r), seed=seed)
        rep = ConvergenceReport(problem.name, scheme, cfg.kind, _label(cfg), seed=seed)
        for M in Ms:
            start = time.perf_counter()
            res = integrate(problem, SplittingConfig(scheme, M, cfg, expm,
                                                     initial_truncation=initial_truncation))
            rep.Ms.append(M)
            rep.errors.append(relative_error(res.final, reference))
            rep.walltimes.append(time.perf_counter() - start)
        reports.append(rep)
    return reports


def spatial_sweep(family: Callable[[int], SemilinearProblem], scheme: str, stepper: StepperConfig,
                  ranks: Sequence[int], Ns: Sequence[int], M: int, seed: int = 0,
                  expm: ExpmConfig = ExpmConfig()) -> List[ConvergenceReport]:
    """Errors against the same scheme on the doubled grid, at coincident nodes.

    ``family(N)`` must build the problem on an N x N periodic grid whose
    nodes are the even-indexed nodes of the 2N grid.  The rank is capped by
    the grid size on coarse grids.
    """
    Ns = sorted(int(N) for N in Ns)
    finals: Dict[Tuple[int, int], np.ndarray] = {}

    def run(N, r):
        if (N, r) not in finals:
            cfg = replace(stepper, rank=min(r, N), seed=seed)
            res = integrate(family(N), SplittingConfig(scheme, M, cfg, expm))
            finals[(N, r)] = res.final.dense()
        return finals[(N, r)]

    reports = []
    for r in ranks:
        rep = ConvergenceReport(family(Ns[0]).name.rsplit("-", 1)[0], scheme, stepper.kind,
                                int(r), seed=seed)
        for N in Ns:
            start = time.perf_counter()
            fine = run(2 * N, r)[::2, ::2]
            coarse = run(N, r)
            rep.Ms.append(N)
            rep.errors.append(float(np.linalg.norm(coarse - fine) / np.linalg.norm(fine)))
            rep.walltimes.append(time.perf_counter() - start)
        reports.append(rep)
    return reports


def best_rank_error(X_ref: np.ndarray, r: int) -> float:
    s = np.linalg.svd(np.asarray(X_ref, dtype=float), compute_uv=False)
    total = float(np.linalg.norm(s))
    if total == 0.0:
        raise UndefinedRelativeError("reference has zero norm")
    return tail_norm(s, r) / total


def best_rank_curve(problem: SemilinearProblem, scheme: str, stepper: StepperConfig, steps: int,
                    checkpoints: Optional[Sequence[float]] = None, expm: ExpmConfig = ExpmConfig(),
                    ref_ivp: IvpConfig = REFERENCE_IVP) -> List[Tuple[float, float, float]]:
    """(t, method error, best rank-r error) along the trajectory.

    Checkpoints default to 32 evenly spaced points of the step grid
    (every step if there are fewer).
    """
    if checkpoints is None:
        stride = max(1, steps // 32)
        tau = (problem.T - problem.t0) / steps
        checkpoints = [problem.t0 + k * tau for k in range(stride, steps + 1, stride)]
    checkpoints = sorted(float(c) for c in checkpoints)
    step_grid(problem.t0, problem.T, steps, checkpoints)
    refs = reference_solve(problem, problem.t0, problem.T, ref_ivp, checkpoints)
    res = integrate(problem, SplittingConfig(scheme, steps, stepper, expm, tuple(checkpoints)))
    r = stepper.rank
    return [(t, relative_error(res.checkpoints[t], ref), best_rank_error(ref, r))
            for t, ref in zip(checkpoints, refs)]


@dataclass
class SimulationResult:
    trace: RankTrace
    snapshots: List[Path]
    energies: List[float]
    final: LowRankFactor
    # smallest and largest entry seen over all recorded states
    extremes: Tuple[float, float] = (math.inf, -math.inf)


def simulate(problem: SemilinearProblem, scheme: str, stepper: StepperConfig, dt: float,
             T: float, snapshot_times: Sequence[float], out_dir, expm: ExpmConfig = ExpmConfig(),
             track_energy: bool = True) -> SimulationResult:
    """Run to time T with step dt, writing grid snapshots and the rank trace.

    If the problem carries an ``energy`` functional its value is recorded
    after every step (with ``track_energy``).
    """
    M = int(round((T - problem.t0) / dt))
    if M < 1 or not math.isclose(problem.t0 + M * dt, T, rel_tol=1e-9, abs_tol=1e-12):
        raise InvalidConfigError(f"T={T} is not a whole number of steps of dt={dt}")
    prob = problem.with_horizon(T)
    marks = step_grid(prob.t0, T, M, snapshot_times)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    grid = prob.meta.get("grid")
    domain = grid.domain if grid is not None else ()
    energy = prob.meta.get("energy") if track_energy else None

    trace = RankTrace()
    snaps: List[Path] = []
    energies: List[float] = []
    last_good = {"X": None, "t": prob.t0}
    lo, hi = [math.inf], [-math.inf]

    def emit(k, t, X):
        D = X.dense()
        if not np.all(np.isfinite(D)):
            raise SimulationDivergedError(f"non-finite state at t={t:g}",
                                          last_good=last_good["X"], t=last_good["t"])
        last_good["X"], last_good["t"] = X, t
        lo[0], hi[0] = min(lo[0], float(D.min())), max(hi[0], float(D.max()))
        if energy is not None:
            energies.append(energy(D))
        if k in marks:
            snaps.append(write_snapshot(out_dir / f"snapshot_{k:06d}.bin", D, marks[k], domain))

    def on_step(k, t, X, rec):
        trace.append(k, t, rec.rank)
        emit(k, t, X)

    cfg = SplittingConfig(scheme, M, stepper, expm)
    X0 = initial_factor(prob.X0, stepper.rule)
    trace.append(0, prob.t0, X0.rank)
    emit(0, prob.t0, X0)
    res = integrate(prob.with_initial(X0), cfg, on_step)
    write_csv(out_dir / "rank_trace.csv", RANK_HEADER, trace.csv_rows())
    return SimulationResult(trace, snaps, energies, res.final, (lo[0], hi[0]))
