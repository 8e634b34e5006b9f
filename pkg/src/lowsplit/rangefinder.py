"""Dynamical range and co-range finders.

Rather than sketching a known matrix, these integrate the sketched ODE
``B' = F(t, B (O^T O)^{-1} O^T) O`` so that ``B(t0+h)`` approximates
``N(t0+h) @ O`` for the unknown end-of-step solution ``N``.  The co-range
version does the same for ``N^T``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from .errors import InvalidConfigError, SingularSketchError, ToleranceNotReachedError
from .lowrank import LowRankFactor, gaussian_sketch, orth, sketch_pinv_t
from .odesolve import IvpConfig, IvpStats, NonstiffField, solve_matrix_ivp

RANGE, CORANGE = "range", "corange"


@dataclass(frozen=True)
class RangefinderConfig:
    rank: int
    oversample: int = 5
    power_iters: int = 1
    ivp: IvpConfig = IvpConfig()
    seed: int = 0
    stream: Tuple[int, ...] = ()

    def __post_init__(self):
        if self.rank < 1:
            raise InvalidConfigError("rangefinder rank must be at least 1")
        if self.oversample < 0 or self.power_iters < 0:
            raise InvalidConfigError("oversampling and power iterations must be nonnegative")

    @property
    def width(self) -> int:
        return self.rank + self.oversample


@dataclass(frozen=True)
class AdaptiveConfig:
    """Tolerance-driven rangefinder settings.

    ``tol`` bounds the spectral residual with probability at least
    ``1 - beta``; the block size is K = -floor(log10(beta)) and the
    per-column acceptance threshold is sqrt(pi/2) * tol / 10.
    """

    tol: float = 1e-8
    beta: float = 1e-4
    ivp: IvpConfig = IvpConfig()
    seed: int = 0
    stream: Tuple[int, ...] = ()
    max_basis: Optional[int] = None
    power_iters: int = 0

    def __post_init__(self):
        if not self.tol > 0:
            raise InvalidConfigError("rangefinder tolerance must be positive")
        if not 0 < self.beta < 1:
            raise InvalidConfigError("beta must lie in (0, 1)")
        if self.block < 1:
            raise InvalidConfigError("beta too close to 1: block size would be zero")
        if self.max_basis is not None and self.max_basis < 1:
            raise InvalidConfigError("max_basis must be positive")
        if self.power_iters < 0:
            raise InvalidConfigError("power iterations must be nonnegative")

    @property
    def block(self) -> int:
        # alpha = 10 in the probabilistic bound, hence base-10 logs
        return -math.floor(math.log10(self.beta))

    @property
    def threshold(self) -> float:
        return math.sqrt(math.pi / 2) * self.tol / 10


@dataclass
class AdaptiveInfo:
    estimates: List[float] = field(default_factory=list)
    rounds: int = 0
    stats: IvpStats = field(default_factory=IvpStats)

    @property
    def estimate(self) -> float:
        return self.estimates[-1] if self.estimates else math.inf


def sketched_solve(N0: LowRankFactor, F: NonstiffField, t0: float, h: float,
                   Omega: np.ndarray, side: str, ivp: IvpConfig,
                   stats: Optional[IvpStats] = None) -> np.ndarray:
    """``N(t0+h) @ Omega`` (range) or ``N(t0+h).T @ Omega`` (co-range).

    Raises :class:`SingularSketchError` if ``Omega`` has a numerically
    singular Gram matrix.
    """
    # Omega is constant over the step, so its pseudo-inverse factor is too
    P = sketch_pinv_t(Omega)
    if side == RANGE:
        Y0 = N0.U @ (N0.S @ (N0.V.T @ Omega))

        def rhs(t, B):
            return F.times(t, (B, P), Omega)
    else:
        Y0 = N0.V @ (N0.S.T @ (N0.U.T @ Omega))

        def rhs(t, C):
            return F.transpose_times(t, (P, C), Omega)

    return solve_matrix_ivp(rhs, Y0, t0, t0 + h, ivp, stats)


def _gaussian_solve(N0, F, t0, h, dim, width, side, ivp, seed, stream, stats):
    # one automatic redraw on a singular sketch, then give up
    for attempt in range(2):
        Omega = gaussian_sketch(dim, width, seed, stream + (attempt,))
        try:
            return sketched_solve(N0, F, t0, h, Omega, side, ivp, stats)
        except SingularSketchError:
            if attempt == 1:
                raise


def _other(side: str) -> str:
    return CORANGE if side == RANGE else RANGE


def _refine(N0, F, t0, h, Q, side, q, ivp, stats):
    # subspace iteration: bounce between the two sides q times
    for _ in range(q):
        # an empty basis (N(t0+h) numerically zero) has nothing left to refine
        if Q.shape[1] == 0:
            break
        P = orth(sketched_solve(N0, F, t0, h, Q, _other(side), ivp, stats))
        if P.shape[1] == 0:
            return P.reshape(Q.shape[0], 0)
        Q = orth(sketched_solve(N0, F, t0, h, P, side, ivp, stats))
    return Q


def _fixed_finder(N0, F, t0, h, cfg: RangefinderConfig, side, stats):
    m, n = N0.shape
    dim = n if side == RANGE else m
    width = min(cfg.width, m, n)
    if cfg.rank > min(m, n):
        raise InvalidConfigError(f"rank {cfg.rank} exceeds min dimension of {m}x{n}")
    if not h > 0:
        raise InvalidConfigError("step size must be positive")
    Y = _gaussian_solve(N0, F, t0, h, dim, width, side, cfg.ivp, cfg.seed,
                        tuple(cfg.stream), stats)
    Q = orth(Y)
    return _refine(N0, F, t0, h, Q, side, cfg.power_iters, cfg.ivp, stats)


def dynamical_rangefinder(N0: LowRankFactor, F: NonstiffField, t0: float, h: float,
                          cfg: RangefinderConfig, stats: Optional[IvpStats] = None) -> np.ndarray:
    """Orthonormal basis (m x <= r+p) for the column space of N(t0+h)."""
    return _fixed_finder(N0, F, t0, h, cfg, RANGE, stats)


def dynamical_corangefinder(N0: LowRankFactor, F: NonstiffField, t0: float, h: float,
                            cfg: RangefinderConfig, stats: Optional[IvpStats] = None) -> np.ndarray:
    """Orthonormal basis (n x <= r+p) for the row space of N(t0+h)."""
    return _fixed_finder(N0, F, t0, h, cfg, CORANGE, stats)


def _adaptive_finder(N0, F, t0, h, cfg: AdaptiveConfig, side):
    m, n = N0.shape
    dim, out_dim = (n, m) if side == RANGE else (m, n)
    if not h > 0:
        raise InvalidConfigError("step size must be positive")
    K = min(cfg.block, dim)
    cap = min(cfg.max_basis or out_dim, out_dim)
    stream = tuple(cfg.stream)
    info = AdaptiveInfo()

    Y = _gaussian_solve(N0, F, t0, h, dim, K, side, cfg.ivp, cfg.seed, stream + (0,), info.stats)
    Q = orth(Y)
    E = math.inf
    j = 1
    while E > cfg.threshold:
        # a basis of the whole space leaves no residual to estimate
        if Q.shape[1] >= out_dim:
            break
        if Q.shape[1] >= cap:
            raise ToleranceNotReachedError(
                f"adaptive {side} finder reached {Q.shape[1]} columns with estimate {E:.3e}",
                estimate=E)
        Y = _gaussian_solve(N0, F, t0, h, dim, K, side, cfg.ivp, cfg.seed, stream + (j,), info.stats)
        resid = Y - Q @ (Q.T @ Y)
        E = float(np.linalg.norm(resid, axis=0).max())
        info.estimates.append(E)
        j += 1
        Q = orth(np.hstack([Q, resid]))
    info.rounds = j
    if cfg.power_iters:
        Q = _refine(N0, F, t0, h, Q, side, cfg.power_iters, cfg.ivp, info.stats)
    return Q, info


def adaptive_rangefinder(N0: LowRankFactor, F: NonstiffField, t0: float, h: float,
                         cfg: AdaptiveConfig, return_info: bool = False):
    """Grow a range basis in blocks of K columns until the residual test passes.

    Each round sketches with fresh Gaussian columns, measures the part of
    the new sketch outside the current basis and appends it.  With
    ``return_info`` the per-round estimates are returned too.
    """
    Q, info = _adaptive_finder(N0, F, t0, h, cfg, RANGE)
    return (Q, info) if return_info else Q


def adaptive_corangefinder(N0: LowRankFactor, F: NonstiffField, t0: float, h: float,
                           cfg: AdaptiveConfig, return_info: bool = False):
    Q, info = _adaptive_finder(N0, F, t0, h, cfg, CORANGE)
    return (Q, info) if return_info else Q
