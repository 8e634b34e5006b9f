"""One-step low-rank integrators for the nonstiff subproblem N' = F(t, N).

``drsvd_step`` projects onto an augmented range basis and solves for the
co-range coefficients; ``dgn_step`` sketches both sides and recombines three
reduced solutions through a truncated pseudo-inverse.  The adaptive
variants swap in tolerance-driven finders and tolerance truncation.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Tuple

import numpy as np
import scipy.linalg as la

from .errors import IllConditionedCoreError, InvalidConfigError
from .lowrank import LowRankFactor, TruncationRule, orth
from .odesolve import IvpConfig, IvpStats, NonstiffField, solve_matrix_ivp
from .rangefinder import (AdaptiveConfig, RangefinderConfig, adaptive_corangefinder,
                          adaptive_rangefinder, dynamical_corangefinder, dynamical_rangefinder)

KINDS = ("drsvd", "dgn", "adrsvd", "adgn")
# smallest admissible ratio sigma_min / sigma_max of the truncated core
CORE_RTOL = 1e-14
# stream roles, so range and co-range sketches of one step never coincide
_RANGE_ROLE, _CORANGE_ROLE = 0, 1


@dataclass(frozen=True)
class StepperConfig:
    """Parameters of one nonstiff low-rank stepper.

    ``truncation`` defaults to fixed rank ``rank`` for the fixed kinds and to
    tolerance mode (rtol 1e-8, atol 1e-12) for the adaptive ones.  Sketch
    widths are clipped to the matrix dimensions when ``rank`` plus
    oversampling would exceed them.
    """

    kind: str = "drsvd"
    rank: int = 10
    oversample: int = 5
    extra_oversample: int = 5
    power_iters: int = 1
    truncation: Optional[TruncationRule] = None
    rf_tol: float = 1e-8
    beta: float = 1e-4
    max_basis: Optional[int] = None
    adaptive_power_iters: int = 0
    ivp: IvpConfig = IvpConfig()
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidConfigError(f"unknown stepper kind {self.kind!r}")
        if self.rank < 1:
            raise InvalidConfigError("rank must be at least 1")
        if self.oversample < 0 or self.extra_oversample < 0:
            raise InvalidConfigError("oversampling must be nonnegative")
        if self.kind == "dgn" and self.power_iters < 1:
            raise InvalidConfigError("DGN needs at least one power iteration")
        if self.power_iters < 0:
            raise InvalidConfigError("power iterations must be nonnegative")
        if self.adaptive:
            if self.truncation is not None and self.truncation.mode != "tolerance":
                raise InvalidConfigError("adaptive steppers need tolerance-mode truncation")
            AdaptiveConfig(tol=self.rf_tol, beta=self.beta, max_basis=self.max_basis,
                           power_iters=self.adaptive_power_iters)

    @property
    def adaptive(self) -> bool:
        return self.kind.startswith("a")

    @property
    def rule(self) -> TruncationRule:
        if self.truncation is not None:
            return self.truncation
        if self.adaptive:
            return TruncationRule.tolerance(1e-8, 1e-12)
        return TruncationRule.fixed(self.rank)

    def finder(self, step: int, role: int, extra: int = 0):
        stream = (int(step), role)
        if self.adaptive:
            return AdaptiveConfig(tol=self.rf_tol, beta=self.beta, ivp=self.ivp, seed=self.seed,
                                  stream=stream, max_basis=self.max_basis,
                                  power_iters=self.adaptive_power_iters)
        return RangefinderConfig(rank=self.rank, oversample=self.oversample + extra,
                                 power_iters=self.power_iters, ivp=self.ivp,
                                 seed=self.seed, stream=stream)


@dataclass
class StepRecord:
    step: int
    t: float
    rank: int
    basis_sizes: Tuple[int, ...] = ()
    estimates: Tuple[float, ...] = ()
    stats: IvpStats = field(default_factory=IvpStats)


def _check_step(N0: LowRankFactor, h: float, cfg: StepperConfig):
    if not h > 0:
        raise InvalidConfigError("step size must be positive")
    if not cfg.adaptive and cfg.rank > min(N0.shape):
        raise InvalidConfigError(f"rank {cfg.rank} exceeds min dimension of {N0.shape}")


def _range_bases(N0, F, t0, h, cfg, step, stats, need_corange, estimates):
    """Sketch-based bases for range (and optionally co-range) of N(t0+h)."""
    if cfg.adaptive:
        Q1, info = adaptive_rangefinder(N0, F, t0, h, cfg.finder(step, _RANGE_ROLE), True)
        stats.merge(info.stats)
        estimates.append(info.estimate)
        Q2 = None
        if need_corange:
            Q2, info = adaptive_corangefinder(N0, F, t0, h, cfg.finder(step, _CORANGE_ROLE), True)
            stats.merge(info.stats)
            estimates.append(info.estimate)
        return Q1, Q2
    Q1 = dynamical_rangefinder(N0, F, t0, h, cfg.finder(step, _RANGE_ROLE), stats)
    Q2 = None
    if need_corange:
        Q2 = dynamical_corangefinder(N0, F, t0, h,
                                     cfg.finder(step, _CORANGE_ROLE, cfg.extra_oversample), stats)
    return Q1, Q2


def _randomized_svd_step(N0, F, t0, h, cfg, step):
    _check_step(N0, h, cfg)
    stats, estimates = IvpStats(), []
    Qh, _ = _range_bases(N0, F, t0, h, cfg, step, stats, False, estimates)
    Q = orth(np.hstack([N0.U, Qh]))

    # coefficients C with N ~ Q C^T, i.e. C(t0) = N0^T Q formed factor-wise
    C0 = N0.V @ (N0.S.T @ (N0.U.T @ Q))

    def rhs(t, C):
        return F.transpose_times(t, (Q, C), Q)

    C1 = solve_matrix_ivp(rhs, C0, t0, t0 + h, cfg.ivp, stats)
    u, s, vt = la.svd(C1.T, full_matrices=False, lapack_driver="gesvd")
    k = cfg.rule.select_rank(s)
    out = LowRankFactor(Q @ u[:, :k], np.diag(s[:k]), vt[:k].T)
    rec = StepRecord(step, t0 + h, k, (Qh.shape[1], Q.shape[1]), tuple(estimates), stats)
    return out, rec


def _nystrom_step(N0, F, t0, h, cfg, step):
    _check_step(N0, h, cfg)
    stats, estimates = IvpStats(), []
    Qt1, Qt2 = _range_bases(N0, F, t0, h, cfg, step, stats, True, estimates)
    Q1 = orth(np.hstack([N0.U, Qt1]))
    Q2 = orth(np.hstack([N0.V, Qt2]))
    ivp = cfg.ivp
    U0, S0, V0 = N0.U, N0.S, N0.V
    UQ1 = U0.T @ Q1
    VQ2 = V0.T @ Q2

    # B ~ N Q2, C ~ N^T Q1, D ~ Q1^T N Q2; independent of one another
    B0 = U0 @ (S0 @ VQ2)
    C0 = V0 @ (S0.T @ UQ1)
    D0 = UQ1.T @ S0 @ VQ2

    def rhs_b(t, B):
        return F.times(t, (B, Q2), Q2)

    def rhs_c(t, C):
        return F.transpose_times(t, (Q1, C), Q1)

    def rhs_d(t, D):
        return F.project(t, (Q1 @ D, Q2), Q1, Q2)

    B1 = solve_matrix_ivp(rhs_b, B0, t0, t0 + h, ivp, stats)
    C1 = solve_matrix_ivp(rhs_c, C0, t0, t0 + h, ivp, stats)
    D1 = solve_matrix_ivp(rhs_d, D0, t0, t0 + h, ivp, stats)

    u, s, vt = la.svd(D1, full_matrices=False, lapack_driver="gesvd")
    k = cfg.rule.select_rank(s)
    if s.size == 0 or s[0] == 0.0 or s[k - 1] <= CORE_RTOL * s[0]:
        raise IllConditionedCoreError(
            "reduced core is numerically singular; increase extra oversampling or lower the rank")
    # N1 = B D_r^+ C^T = (B V_r) S_r^{-1} (C U_r)^T
    U, R1 = la.qr(B1 @ vt[:k].T, mode="economic")
    V, R2 = la.qr(C1 @ u[:, :k], mode="economic")
    S = (R1 / s[:k]) @ R2.T
    out = LowRankFactor(U, S, V)
    rec = StepRecord(step, t0 + h, k, (Q1.shape[1], Q2.shape[1]), tuple(estimates), stats)
    return out, rec


def drsvd_step(N0: LowRankFactor, F: NonstiffField, t0: float, h: float,
               cfg: StepperConfig, step: int = 0):
    """Dynamical randomized SVD step; returns ``(N1, StepRecord)``."""
    if cfg.kind != "drsvd":
        cfg = replace(cfg, kind="drsvd")
    return _randomized_svd_step(N0, F, t0, h, cfg, step)


def dgn_step(N0: LowRankFactor, F: NonstiffField, t0: float, h: float,
             cfg: StepperConfig, step: int = 0):
    """Dynamical generalized Nystrom step; returns ``(N1, StepRecord)``."""
    if cfg.kind != "dgn":
        cfg = replace(cfg, kind="dgn")
    return _nystrom_step(N0, F, t0, h, cfg, step)


def adrsvd_step(N0: LowRankFactor, F: NonstiffField, t0: float, h: float,
                cfg: StepperConfig, step: int = 0):
    if cfg.kind != "adrsvd":
        cfg = replace(cfg, kind="adrsvd")
    return _randomized_svd_step(N0, F, t0, h, cfg, step)


def adgn_step(N0: LowRankFactor, F: NonstiffField, t0: float, h: float,
              cfg: StepperConfig, step: int = 0):
    if cfg.kind != "adgn":
        cfg = replace(cfg, kind="adgn")
    return _nystrom_step(N0, F, t0, h, cfg, step)


STEPPERS = {"drsvd": drsvd_step, "dgn": dgn_step, "adrsvd": adrsvd_step, "adgn": adgn_step}


def step(N0: LowRankFactor, F: NonstiffField, t0: float, h: float,
         cfg: StepperConfig, step_index: int = 0):
    """Dispatch on ``cfg.kind``."""
    return STEPPERS[cfg.kind](N0, F, t0, h, cfg, step_index)
