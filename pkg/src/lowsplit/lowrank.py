"""Factored low-rank matrices and the dense linear algebra they rest on.

All routines here are pure functions on numpy arrays.  A factored matrix is
stored as ``U @ S @ V.T`` with orthonormal ``U`` and ``V`` and a dense core
``S``; the core is only guaranteed diagonal right after :func:`truncate`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple, Union

import numpy as np
import scipy.linalg as la

from .errors import InvalidInputError, SingularSketchError

# Columns whose pivot falls below this fraction of ||W||_F are dropped by orth.
ORTH_RTOL = 1e-12
# Singular values below this fraction of sigma_max count as numerically zero.
RANK_RTOL = 1e-14
GRAM_COND_MAX = 1e12


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=float)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class LowRankFactor:
    """Rank-k matrix ``U @ S @ V.T`` of shape (m, n).

    The arrays are frozen after construction so factors can be shared
    between steps and checkpoints without defensive copies.
    """

    U: np.ndarray
    S: np.ndarray
    V: np.ndarray

    def __post_init__(self):
        U, S, V = (np.asarray(a, dtype=float) for a in (self.U, self.S, self.V))
        if S.ndim == 1:
            S = np.diag(S)
        if U.ndim != 2 or V.ndim != 2 or S.shape != (U.shape[1], V.shape[1]):
            raise InvalidInputError(
                f"inconsistent factor shapes U{U.shape} S{S.shape} V{V.shape}")
        if U.shape[1] != V.shape[1] or U.shape[1] < 1:
            raise InvalidInputError("factor rank must be a positive common width")
        object.__setattr__(self, "U", _readonly(U))
        object.__setattr__(self, "S", _readonly(S))
        object.__setattr__(self, "V", _readonly(V))

    @property
    def shape(self) -> Tuple[int, int]:
        return self.U.shape[0], self.V.shape[0]

    @property
    def rank(self) -> int:
        return self.U.shape[1]

    @property
    def T(self) -> "LowRankFactor":
        return LowRankFactor(self.V, self.S.T, self.U)

    def dense(self) -> np.ndarray:
        return (self.U @ self.S) @ self.V.T

    def left(self) -> np.ndarray:
        """``U @ S``, so that the matrix equals ``left() @ V.T``."""
        return self.U @ self.S

    def norm(self) -> float:
        return float(np.linalg.norm(self.S))

    def singular_values(self) -> np.ndarray:
        return la.svdvals(self.S)

    def copy(self) -> "LowRankFactor":
        return LowRankFactor(self.U.copy(), self.S.copy(), self.V.copy())

    def orthonormality_residual(self) -> float:
        k = self.rank
        eye = np.eye(k)
        return max(np.linalg.norm(self.U.T @ self.U - eye),
                   np.linalg.norm(self.V.T @ self.V - eye))

    @classmethod
    def zeros(cls, m: int, n: int) -> "LowRankFactor":
        U = np.zeros((m, 1))
        U[0, 0] = 1.0
        V = np.zeros((n, 1))
        V[0, 0] = 1.0
        return cls(U, np.zeros((1, 1)), V)


@dataclass(frozen=True)
class TruncationRule:
    """Either a fixed target rank or a singular-tail tolerance.

    In tolerance mode the kept rank k is the smallest one whose discarded
    tail satisfies ``||sigma[k:]|| <= max(atol, rtol * ||sigma||)``;
    ``max_rank`` optionally caps it.
    """

    mode: str = "fixed-rank"
    rank: Optional[int] = None
    rtol: float = 0.0
    atol: float = 0.0
    max_rank: Optional[int] = None

    def __post_init__(self):
        if self.mode == "fixed-rank":
            if self.rank is None or self.rank < 1:
                raise InvalidInputError("fixed-rank truncation needs rank >= 1")
        elif self.mode == "tolerance":
            if self.rtol < 0 or self.atol < 0 or (self.rtol == 0 and self.atol == 0):
                raise InvalidInputError("tolerance truncation needs rtol, atol >= 0, not both 0")
            if self.max_rank is not None and self.max_rank < 1:
                raise InvalidInputError("max_rank must be positive")
        else:
            raise InvalidInputError(f"unknown truncation mode {self.mode!r}")

    @classmethod
    def fixed(cls, rank: int) -> "TruncationRule":
        return cls("fixed-rank", rank=rank)

    @classmethod
    def tolerance(cls, rtol: float = 1e-8, atol: float = 1e-12,
                  max_rank: Optional[int] = None) -> "TruncationRule":
        return cls("tolerance", rtol=rtol, atol=atol, max_rank=max_rank)

    @property
    def cap(self) -> Optional[int]:
        return self.rank if self.mode == "fixed-rank" else self.max_rank

    def select_rank(self, sigma: np.ndarray) -> int:
        """Number of leading singular values kept (at least 1)."""
        sigma = np.asarray(sigma, dtype=float)
        if sigma.size == 0:
            return 1
        numerical = int(np.count_nonzero(sigma > RANK_RTOL * sigma[0]))
        if self.mode == "fixed-rank":
            return max(1, min(self.rank, numerical))
        # tails[k] = ||sigma[k:]||_2, computed from the small end for accuracy
        tails = np.sqrt(np.cumsum((sigma ** 2)[::-1])[::-1])
        tails = np.append(tails, 0.0)
        bound = max(self.atol, self.rtol * tails[0])
        k = int(np.argmax(tails <= bound))
        k = max(1, min(k, numerical) if numerical else 1)
        if self.max_rank is not None:
            k = min(k, self.max_rank)
        return k


def _check_finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise InvalidInputError("input contains non-finite entries")


def orth(W: np.ndarray, rtol: float = ORTH_RTOL) -> np.ndarray:
    """Orthonormal basis of range(W), numerically dependent columns dropped.

    Thin Householder QR is tried first; if any pivot is below
    ``rtol * ||W||_F`` the factorization is redone with column pivoting and
    truncated at the numerical rank.
    """
    W = np.asarray(W, dtype=float)
    if W.ndim == 1:
        W = W[:, None]
    _check_finite(W)
    m, s = W.shape
    if m < 1 or s < 1:
        raise InvalidInputError("orth needs a non-empty matrix")
    scale = np.linalg.norm(W)
    if scale == 0.0:
        return np.zeros((m, 0))
    thresh = rtol * scale
    if s <= m:
        Q, R = la.qr(W, mode="economic", check_finite=False)
        if np.all(np.abs(np.diag(R)) > thresh):
            return Q
    Q, R, _ = la.qr(W, mode="economic", pivoting=True, check_finite=False)
    rank = int(np.count_nonzero(np.abs(np.diag(R)) > thresh))
    return Q[:, :rank]


FactoredInput = Union[np.ndarray, LowRankFactor, Tuple[np.ndarray, np.ndarray]]


def svd_factors(A: FactoredInput) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Thin SVD ``(U, sigma, V)`` of a dense, product-form or factored matrix.

    A tuple ``(L, R)`` means ``L @ R.T``; it is never densified.
    """
    if isinstance(A, LowRankFactor):
        u, s, vt = la.svd(A.S, full_matrices=False, lapack_driver="gesvd")
        return A.U @ u, s, A.V @ vt.T
    if isinstance(A, tuple):
        L, R = (np.asarray(a, dtype=float) for a in A)
        _check_finite(L, R)
        QL, RL = la.qr(L, mode="economic", check_finite=False)
        QR_, RR = la.qr(R, mode="economic", check_finite=False)
        u, s, vt = la.svd(RL @ RR.T, full_matrices=False, lapack_driver="gesvd")
        return QL @ u, s, QR_ @ vt.T
    A = np.asarray(A, dtype=float)
    _check_finite(A)
    u, s, vt = la.svd(A, full_matrices=False, lapack_driver="gesvd")
    return u, s, vt.T


def truncate(A: FactoredInput, rule: TruncationRule) -> LowRankFactor:
    """Compress ``A`` according to ``rule``; the result has a diagonal core.

    Fixed-rank mode returns the best rank-r approximation in the Frobenius
    norm, dropping singular values that are numerically zero.
    """
    U, s, V = svd_factors(A)
    k = rule.select_rank(s)
    return LowRankFactor(U[:, :k], np.diag(s[:k]), V[:, :k])


def tail_norm(sigma: np.ndarray, k: int) -> float:
    return float(np.sqrt(np.sum(np.asarray(sigma)[k:] ** 2)))


def canonical_identity_factor(n: int, r: int) -> LowRankFactor:
    """Rank-r slice of the n x n identity along the first r unit vectors.

    The identity's best rank-r approximation is not unique; this pins it.
    """
    E = np.eye(n, min(r, n))
    return LowRankFactor(E, np.eye(E.shape[1]), E.copy())


Stream = Union[int, Sequence[int]]


def _spawn_key(stream: Stream) -> Tuple[int, ...]:
    if isinstance(stream, (int, np.integer)):
        return (int(stream),)
    return tuple(int(v) for v in stream)


def rng_for(seed: int, stream: Stream = 0) -> np.random.Generator:
    """Philox4x64-10 generator keyed by ``seed`` and a stream id.

    The stream id (an int or a tuple of ints) becomes the SeedSequence spawn
    key, so distinct ids give statistically independent streams.
    """
    ss = np.random.SeedSequence(int(seed) & (2 ** 64 - 1), spawn_key=_spawn_key(stream))
    return np.random.Generator(np.random.Philox(ss))


def gaussian_sketch(n: int, s: int, seed: int, stream: Stream = 0) -> np.ndarray:
    """n x s matrix of i.i.d. N(0, 1) entries (numpy's ziggurat sampler)."""
    if n < 1 or s < 1:
        raise InvalidInputError(f"sketch dimensions must be positive, got {n}x{s}")
    return rng_for(seed, stream).standard_normal((n, s))


def _gram_cholesky(Omega: np.ndarray):
    G = Omega.T @ Omega
    _check_finite(G)
    try:
        c = la.cho_factor(G, lower=False, check_finite=False)
    except la.LinAlgError as exc:
        raise SingularSketchError("sketch Gram matrix is not positive definite") from exc
    d = np.abs(np.diag(c[0]))
    # cond(G) = cond(chol)^2, estimated from the triangular factor's diagonal
    if d.min() == 0.0 or (d.max() / d.min()) ** 2 > GRAM_COND_MAX:
        raise SingularSketchError("sketch Gram matrix is numerically singular")
    return c


def gram_inverse(Omega: np.ndarray) -> np.ndarray:
    """Symmetric positive-definite ``(Omega.T @ Omega)^{-1}``."""
    Omega = np.asarray(Omega, dtype=float)
    c = _gram_cholesky(Omega)
    s = Omega.shape[1]
    inv = la.cho_solve(c, np.eye(s), check_finite=False)
    return 0.5 * (inv + inv.T)


def sketch_pinv_t(Omega: np.ndarray) -> np.ndarray:
    """``Omega @ (Omega.T @ Omega)^{-1}`` via a Cholesky solve.

    With ``P = sketch_pinv_t(Omega)``, ``B @ P.T`` reconstructs a matrix from
    its right sketch ``B = X @ Omega`` on the span of ``Omega``.
    """
    Omega = np.asarray(Omega, dtype=float)
    c = _gram_cholesky(Omega)
    return la.cho_solve(c, Omega.T, check_finite=False).T
