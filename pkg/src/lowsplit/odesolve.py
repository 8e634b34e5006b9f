"""Nonstiff field contract, the inner matrix-ODE solver and the dense reference.

Both the reduced ODEs inside a low-rank step and the full-order reference
run on scipy's Dormand-Prince 5(4) pair (``scipy.integrate.RK45``).  The
driver loop lives here so a step budget can be enforced and failures
surface as :class:`StiffnessDetectedError`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import RK45

from .errors import InvalidConfigError, InvalidInputError, ProblemTooLargeError, StiffnessDetectedError
from .lowrank import LowRankFactor

if TYPE_CHECKING:  # pragma: no cover
    from .splitting import SemilinearProblem

Factored = Tuple[np.ndarray, np.ndarray]


class NonstiffField:
    """Evaluation contract for the nonstiff term F(t, X).

    The state always arrives as a pair ``(L, R)`` meaning ``X = L @ R.T``;
    neither factor needs orthonormal columns.  Subclasses provide
    ``times`` and ``transpose_times``; ``project`` defaults to
    ``Q1.T @ times(Q2)`` and may be overridden with something cheaper.
    """

    name: str = "field"

    def times(self, t: float, X: Factored, W: np.ndarray) -> np.ndarray:
        """F(t, X) @ W."""
        raise NotImplementedError

    def transpose_times(self, t: float, X: Factored, W: np.ndarray) -> np.ndarray:
        """F(t, X).T @ W."""
        raise NotImplementedError

    def project(self, t: float, X: Factored, Q1: np.ndarray, Q2: np.ndarray) -> np.ndarray:
        return Q1.T @ self.times(t, X, Q2)

    def dense(self, t: float, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class DenseField(NonstiffField):
    """Field given by a dense callable ``func(t, X) -> F``.

    Intended for small problems and manufactured test cases; every
    evaluation forms the full m x n state.
    """

    def __init__(self, func: Callable[[float, np.ndarray], np.ndarray], name: str = "dense"):
        self.func = func
        self.name = name

    def dense(self, t, X):
        return np.asarray(self.func(t, X), dtype=float)

    def times(self, t, X, W):
        L, R = X
        return self.dense(t, L @ R.T) @ W

    def transpose_times(self, t, X, W):
        L, R = X
        return self.dense(t, L @ R.T).T @ W

    def project(self, t, X, Q1, Q2):
        L, R = X
        return Q1.T @ self.dense(t, L @ R.T) @ Q2


class ZeroField(NonstiffField):
    name = "zero"

    def times(self, t, X, W):
        return np.zeros((X[0].shape[0], W.shape[1]))

    def transpose_times(self, t, X, W):
        return np.zeros((X[1].shape[0], W.shape[1]))

    def project(self, t, X, Q1, Q2):
        return np.zeros((Q1.shape[1], Q2.shape[1]))

    def dense(self, t, X):
        return np.zeros_like(X)


@dataclass(frozen=True)
class IvpConfig:
    """Settings for the embedded 5(4) pair.

    ``first_step`` and ``max_step`` are passed through to the stepper;
    setting both (with loose tolerances) forces a fixed step size.
    """

    rtol: float = 1e-8
    atol: float = 1e-12
    max_steps: int = 100_000
    first_step: Optional[float] = None
    max_step: float = np.inf
    method: str = "dopri5"

    def __post_init__(self):
        if not (self.rtol > 0 and self.atol > 0):
            raise InvalidConfigError("rtol and atol must be positive")
        if self.max_steps < 1:
            raise InvalidConfigError("max_steps must be positive")
        if self.method != "dopri5":
            raise InvalidConfigError(f"unsupported inner method {self.method!r}")


REFERENCE_IVP = IvpConfig(rtol=1e-10, atol=1e-13, max_steps=2_000_000)
# dense references are refused above this many matrix entries
DENSE_GUARD = 4_000_000


@dataclass
class IvpStats:
    """Running totals over one or more solves."""

    solves: int = 0
    steps: int = 0
    nfev: int = 0

    def merge(self, other: "IvpStats"):
        self.solves += other.solves
        self.steps += other.steps
        self.nfev += other.nfev


def solve_matrix_ivp(rhs: Callable[[float, np.ndarray], np.ndarray], Y0: np.ndarray,
                     t0: float, t1: float, cfg: IvpConfig = IvpConfig(),
                     stats: Optional[IvpStats] = None) -> np.ndarray:
    """Integrate ``Y' = rhs(t, Y)`` from t0 to t1 and return Y(t1)."""
    Y0 = np.asarray(Y0, dtype=float)
    if not t1 > t0:
        raise InvalidInputError(f"need t1 > t0, got [{t0}, {t1}]")
    if not np.all(np.isfinite(Y0)):
        raise InvalidInputError("initial value has non-finite entries")
    shape = Y0.shape

    def fun(t, y):
        return np.asarray(rhs(t, y.reshape(shape)), dtype=float).ravel()

    solver = RK45(fun, t0, Y0.ravel(), t1, rtol=cfg.rtol, atol=cfg.atol,
                  first_step=cfg.first_step, max_step=cfg.max_step)
    nsteps = 0
    while solver.status == "running":
        if nsteps >= cfg.max_steps:
            raise StiffnessDetectedError(
                f"inner solver exceeded {cfg.max_steps} steps at t={solver.t:.6g}",
                t=solver.t, h=solver.h_abs)
        msg = solver.step()
        nsteps += 1
        if solver.status == "failed":
            raise StiffnessDetectedError(f"inner solver failed at t={solver.t:.6g}: {msg}",
                                         t=solver.t, h=solver.h_abs)
    if stats is not None:
        stats.solves += 1
        stats.steps += nsteps
        stats.nfev += solver.nfev
    return solver.y.reshape(shape)


def full_rhs(prob: "SemilinearProblem") -> Callable[[float, np.ndarray], np.ndarray]:
    """Dense right-hand side A1 X + X A2 + F(t, X)."""
    A1, A2, F = prob.A1, prob.A2, prob.F

    def rhs(t, X):
        return A1.apply(X) + A2.apply_transpose(X.T).T + F.dense(t, X)

    return rhs


def reference_solve(prob: "SemilinearProblem", t0: float, t1: float,
                    cfg: IvpConfig = REFERENCE_IVP, checkpoints: Sequence[float] = (),
                    guard: int = DENSE_GUARD) -> List[np.ndarray]:
    """Dense trajectory of the full semilinear problem at ``checkpoints``.

    With no checkpoints only X(t1) is returned.  The solver is restarted at
    each checkpoint so values are hit exactly rather than interpolated.
    """
    m, n = prob.shape
    if m * n > guard:
        raise ProblemTooLargeError(f"{m}x{n} state exceeds the dense guard of {guard} entries")
    times = sorted(float(c) for c in checkpoints) or [float(t1)]
    if times[0] < t0 or times[-1] > t1:
        raise InvalidConfigError("checkpoints must lie in [t0, t1]")
    X0 = prob.X0.dense() if isinstance(prob.X0, LowRankFactor) else np.asarray(prob.X0, dtype=float)
    rhs = full_rhs(prob)
    out = []
    t, X = float(t0), X0
    for tc in times:
        if tc > t:
            X = solve_matrix_ivp(rhs, X, t, tc, cfg)
            t = tc
        out.append(X.copy())
    return out
