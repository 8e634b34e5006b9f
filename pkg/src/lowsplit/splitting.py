"""Lie and Strang compositions of the exact stiff flow with a low-rank stepper."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import InvalidConfigError, InvalidInputError
from .lowrank import LowRankFactor, TruncationRule, canonical_identity_factor, truncate
from .matfun import ExpmConfig, StiffOperator, stiff_flow
from .odesolve import NonstiffField
from .steppers import StepperConfig, StepRecord, step as nonstiff_step

SCHEMES = ("lie", "strang")


@dataclass(frozen=True)
class SemilinearProblem:
    """X' = A1 X + X A2 + F(t, X) on [t0, T] with X(t0) = X0.

    ``X0`` may be dense or already factored.  ``meta`` carries problem
    specific extras (grid, exact solution, energy functional).
    """

    A1: StiffOperator
    A2: StiffOperator
    F: NonstiffField
    X0: Union[np.ndarray, LowRankFactor]
    t0: float = 0.0
    T: float = 1.0
    name: str = ""
    meta: Dict[str, Any] = field(default_factory=dict, compare=False)

    def __post_init__(self):
        m, n = self.A1.dim, self.A2.dim
        if tuple(self.X0.shape) != (m, n):
            raise InvalidInputError(f"X0 shape {self.X0.shape} does not match operators ({m}, {n})")
        if not self.T > self.t0:
            raise InvalidInputError("need T > t0")

    @property
    def shape(self) -> Tuple[int, int]:
        return self.A1.dim, self.A2.dim

    def with_initial(self, X0) -> "SemilinearProblem":
        return SemilinearProblem(self.A1, self.A2, self.F, X0, self.t0, self.T, self.name, self.meta)

    def with_horizon(self, T: float) -> "SemilinearProblem":
        return SemilinearProblem(self.A1, self.A2, self.F, self.X0, self.t0, T, self.name, self.meta)


@dataclass(frozen=True)
class SplittingConfig:
    scheme: str = "strang"
    steps: int = 64
    stepper: StepperConfig = StepperConfig()
    expm: ExpmConfig = ExpmConfig()
    checkpoints: Tuple[float, ...] = ()
    # rule applied to X0 before the first step; defaults to the stepper's rule
    initial_truncation: Optional[TruncationRule] = None

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise InvalidConfigError(f"unknown splitting scheme {self.scheme!r}")
        if self.steps < 1:
            raise InvalidConfigError("need at least one step")


def lie_step(prob: SemilinearProblem, X: LowRankFactor, t: float, tau: float,
             cfg: SplittingConfig, step: int = 0) -> Tuple[LowRankFactor, StepRecord]:
    """Nonstiff step over [t, t+tau], then the full stiff flow."""
    N, rec = nonstiff_step(X, prob.F, t, tau, cfg.stepper, step)
    out = stiff_flow(prob.A1, prob.A2, tau, N, cfg.expm)
    assert out.rank == N.rank
    return out, rec


def strang_step(prob: SemilinearProblem, X: LowRankFactor, t: float, tau: float,
                cfg: SplittingConfig, step: int = 0) -> Tuple[LowRankFactor, StepRecord]:
    """Half stiff flow, nonstiff step over [t, t+tau], half stiff flow."""
    half = stiff_flow(prob.A1, prob.A2, tau / 2, X, cfg.expm)
    N, rec = nonstiff_step(half, prob.F, t, tau, cfg.stepper, step)
    out = stiff_flow(prob.A1, prob.A2, tau / 2, N, cfg.expm)
    assert out.rank == N.rank
    return out, rec


STEPS = {"lie": lie_step, "strang": strang_step}


def initial_factor(X0, rule: TruncationRule) -> LowRankFactor:
    """Reduce the initial data to a factor according to ``rule``.

    An exact identity has no preferred rank-r subspace, so it is pinned to
    the leading canonical directions.
    """
    if isinstance(X0, LowRankFactor):
        return truncate(X0, rule)
    X0 = np.asarray(X0, dtype=float)
    m, n = X0.shape
    if m == n and np.array_equal(X0, np.eye(n)):
        return canonical_identity_factor(n, rule.cap or n)
    return truncate(X0, rule)


@dataclass
class IntegrationResult:
    final: LowRankFactor
    records: List[StepRecord]
    checkpoints: Dict[float, LowRankFactor]
    initial: LowRankFactor


def step_grid(t0: float, T: float, steps: int, times: Sequence[float]) -> Dict[int, float]:
    """Map each requested time to its step index; times off the grid are rejected."""
    tau = (T - t0) / steps
    out = {}
    for tc in times:
        k = int(round((tc - t0) / tau))
        if k < 0 or k > steps or not math.isclose(t0 + k * tau, tc, rel_tol=1e-9, abs_tol=1e-12):
            raise InvalidConfigError(f"time {tc} is not on the step grid of {steps} steps")
        out[k] = float(tc)
    return out


def integrate(prob: SemilinearProblem, cfg: SplittingConfig,
              on_step: Optional[Callable[[int, float, LowRankFactor, StepRecord], None]] = None
              ) -> IntegrationResult:
    """Advance ``cfg.steps`` uniform steps from t0 to T.

    ``on_step(k, t, X, record)`` is called after every step.  Checkpoint
    factors are independent copies of the state at the requested times.
    """
    t0, T, M = prob.t0, prob.T, cfg.steps
    marks = step_grid(t0, T, M, cfg.checkpoints)
    tau = (T - t0) / M
    X = initial_factor(prob.X0, cfg.initial_truncation or cfg.stepper.rule)
    initial = X
    saved = {}
    if 0 in marks:
        saved[marks[0]] = X.copy()
    advance = STEPS[cfg.scheme]
    records = []
    for k in range(M):
        t = t0 + k * tau
        X, rec = advance(prob, X, t, tau, cfg, k)
        records.append(rec)
        if on_step is not None:
            on_step(k + 1, t0 + (k + 1) * tau, X, rec)
        if k + 1 in marks:
            saved[marks[k + 1]] = X.copy()
    return IntegrationResult(X, records, saved, initial)
