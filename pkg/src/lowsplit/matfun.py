"""Action of the matrix exponential on tall-thin blocks.

``expm_action`` runs one Krylov process per column of the block, all in
lockstep so every operator application is a single sparse-times-block
product.  Time stepping and error control follow Sidje's Expokit ``expv``:
the interval is cut into substeps, each accepted only when the a posteriori
error estimate drawn from the extended Hessenberg matrix is below the
tolerance share of that substep.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp

from .errors import AccuracyNotReachedError, InvalidInputError
from .lowrank import LowRankFactor


class StiffOperator:
    """Linear operator ``W -> A @ W`` on d x s blocks.

    Usually built from a sparse or dense matrix; the matrix itself is kept
    only for application, norm estimates and test oracles.
    """

    def __init__(self, matrix, symmetric: Optional[bool] = None, name: str = ""):
        if sp.issparse(matrix):
            matrix = sp.csr_matrix(matrix, dtype=float)
        else:
            matrix = np.asarray(matrix, dtype=float)
        if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
            raise InvalidInputError("stiff operator must be square")
        self.matrix = matrix
        self.name = name
        if symmetric is None:
            diff = matrix - matrix.T
            dnorm = sp.linalg.norm(diff) if sp.issparse(diff) else np.linalg.norm(diff)
            symmetric = dnorm == 0.0
        self.symmetric = bool(symmetric)
        if sp.issparse(matrix):
            self._norm1 = float(abs(matrix).sum(axis=0).max()) if matrix.nnz else 0.0
        else:
            self._norm1 = float(np.abs(matrix).sum(axis=0).max())
        self._transpose = None

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def norm1(self) -> float:
        return self._norm1

    def apply(self, W: np.ndarray) -> np.ndarray:
        return np.asarray(self.matrix @ W)

    def apply_transpose(self, W: np.ndarray) -> np.ndarray:
        return np.asarray(self.matrix.T @ W)

    @property
    def T(self) -> "StiffOperator":
        if self.symmetric:
            return self
        if self._transpose is None:
            t = StiffOperator(self.matrix.T, symmetric=False, name=f"{self.name}^T")
            t._transpose = self
            self._transpose = t
        return self._transpose

    def todense(self) -> np.ndarray:
        return self.matrix.toarray() if sp.issparse(self.matrix) else np.array(self.matrix)

    def __repr__(self):
        kind = "symmetric" if self.symmetric else "general"
        return f"StiffOperator({self.name or '?'}, dim={self.dim}, {kind})"


@dataclass(frozen=True)
class ExpmConfig:
    tol: float = 1e-10
    krylov_dim: int = 30
    max_substeps: int = 10_000
    max_rejects: int = 10

    def __post_init__(self):
        if not self.tol > 0:
            raise InvalidInputError("expm tolerance must be positive")
        if self.krylov_dim < 2:
            raise InvalidInputError("krylov_dim must be at least 2")


# breakdown threshold (relative to ||A||_1), step safety and acceptance factors
_BTOL = 1e-13
_GAMMA = 0.9
_DELTA = 1.2


def _round_step(t: float) -> float:
    # expv rounds step sizes to 2 significant digits to avoid pathological values
    if t <= 0 or not math.isfinite(t):
        return t
    s = 10.0 ** (math.floor(math.log10(t)) - 1)
    return math.ceil(t / s) * s


def _krylov_basis(apply: Callable, W: np.ndarray, m: int, symmetric: bool,
                  breakdown: float):
    """Lockstep Arnoldi (or Lanczos) on every column of W.

    Returns the basis V (m+1, d, s), Hessenberg blocks H (s, m+1, m) and
    the per-column norms.  Columns that break down early get zero basis
    vectors past the invariant subspace, which leaves exp(H) e_1 exact.
    """
    d, s = W.shape
    beta = np.linalg.norm(W, axis=0)
    V = np.zeros((m + 1, d, s))
    H = np.zeros((s, m + 1, m))
    live = beta > 0
    V[0][:, live] = W[:, live] / beta[live]
    for j in range(m):
        p = apply(V[j])
        if symmetric:
            lo = max(0, j - 1)
            coef = np.einsum("ids,ds->is", V[lo:j + 1], p)
            p = p - np.einsum("ids,is->ds", V[lo:j + 1], coef)
            H[:, lo:j + 1, j] = coef.T
        else:
            # classical Gram-Schmidt, applied twice
            coef = np.einsum("ids,ds->is", V[:j + 1], p)
            p = p - np.einsum("ids,is->ds", V[:j + 1], coef)
            corr = np.einsum("ids,ds->is", V[:j + 1], p)
            p = p - np.einsum("ids,is->ds", V[:j + 1], corr)
            H[:, :j + 1, j] = (coef + corr).T
        nrm = np.linalg.norm(p, axis=0)
        ok = nrm > breakdown
        H[:, j + 1, j] = np.where(ok, nrm, 0.0)
        V[j + 1][:, ok] = p[:, ok] / nrm[ok]
    return V, H, beta


def expm_action(A: StiffOperator, tau: float, W: np.ndarray,
                cfg: ExpmConfig = ExpmConfig(), return_error: bool = False):
    """``exp(tau * A) @ W`` to relative accuracy ``cfg.tol`` per column.

    With ``return_error`` the accumulated a posteriori error estimate
    (relative, worst column) is returned alongside the result.
    """
    W = np.asarray(W, dtype=float)
    squeeze = W.ndim == 1
    if squeeze:
        W = W[:, None]
    if not np.all(np.isfinite(W)) or not math.isfinite(tau):
        raise InvalidInputError("expm_action needs finite tau and W")
    if tau == 0.0 or W.size == 0 or A.norm1 == 0.0:
        out = W.copy()
        return (out[:, 0] if squeeze else out, 0.0) if return_error else (
            out[:, 0] if squeeze else out)

    d, s = W.shape
    m = min(cfg.krylov_dim, d)
    sign = 1.0 if tau > 0 else -1.0
    t_out = abs(tau)
    anorm = A.norm1
    tol = cfg.tol
    w = W.copy()
    w0norm = np.linalg.norm(W, axis=0)
    scale = np.where(w0norm > 0, w0norm, 1.0)

    fact = ((m + 1) / math.e) ** (m + 1) * math.sqrt(2 * math.pi * (m + 1))
    t_new = (1.0 / anorm) * ((fact * tol) / (4.0 * anorm)) ** (1.0 / m)
    t_new = _round_step(t_new)
    t_now = 0.0
    err_total = np.zeros(s)
    nsteps = 0

    while t_now < t_out:
        nsteps += 1
        if nsteps > cfg.max_substeps:
            raise AccuracyNotReachedError(
                f"expm_action exceeded {cfg.max_substeps} substeps",
                estimate=w, error_bound=float(err_total.max()))
        t_step = min(t_out - t_now, t_new)
        V, H, beta = _krylov_basis(A.apply, w, m, A.symmetric, _BTOL * anorm)
        # columns whose Krylov space became invariant: exact, no estimate needed
        happy = H[:, m, m - 1] == 0.0
        avnorm = np.linalg.norm(A.apply(V[m]), axis=0)
        # extended (m+2) x (m+2) matrix yields the two error-estimate terms
        Hx = np.zeros((s, m + 2, m + 2))
        Hx[:, :m + 1, :m] = H
        Hx[:, m + 1, m] = np.where(happy, 0.0, 1.0)

        for attempt in range(cfg.max_rejects + 1):
            F = la.expm(sign * t_step * Hx)
            phi1 = np.abs(beta * F[:, m, 0])
            phi2 = np.abs(beta * F[:, m + 1, 0] * avnorm)
            err = np.where(phi1 > 10 * phi2, phi2,
                           np.where(phi1 > phi2, phi1 * phi2 / np.maximum(phi1 - phi2, 1e-300),
                                    phi1))
            err = np.where(happy, 0.0, err) / scale
            worst = float(err.max())
            if worst <= _DELTA * (t_step / t_out) * tol:
                break
            if attempt == cfg.max_rejects:
                raise AccuracyNotReachedError(
                    "expm_action substep rejected too often",
                    estimate=w, error_bound=float(err_total.max() + worst))
            t_step = _round_step(_GAMMA * t_step * ((t_step / t_out) * tol / worst) ** (1.0 / m))

        coeff = beta[:, None] * F[:, :m + 1, 0]          # (s, m+1)
        w = np.einsum("jds,sj->ds", V, coeff)
        t_now += t_step
        err_total += err
        if worst > 0:
            t_new = _round_step(_GAMMA * t_step * ((t_step / t_out) * tol / worst) ** (1.0 / m))
        else:
            t_new = t_out

    out = w[:, 0] if squeeze else w
    if return_error:
        return out, float(err_total.max())
    return out


def stiff_flow(A1: StiffOperator, A2: StiffOperator, tau: float, X: LowRankFactor,
               cfg: ExpmConfig = ExpmConfig()) -> LowRankFactor:
    """Exact linear flow ``exp(tau A1) X exp(tau A2)`` applied factor-wise.

    The rank of ``X`` is preserved: both propagated bases are
    re-orthonormalized by QR and the triangular factors absorbed into the
    core.
    """
    if tau == 0.0:
        return X
    m, n = X.shape
    if A1.dim != m or A2.dim != n:
        raise InvalidInputError(f"operator sizes {A1.dim}, {A2.dim} do not match factor {X.shape}")
    EU = expm_action(A1, tau, np.asarray(X.U), cfg)
    # X exp(tau A2) = U S (exp(tau A2^T) V)^T
    EV = expm_action(A2.T, tau, np.asarray(X.V), cfg)
    Ut, R = la.qr(EU, mode="economic", check_finite=False)
    Vt, P = la.qr(EV, mode="economic", check_finite=False)
    return LowRankFactor(Ut, R @ X.S @ P.T, Vt)
