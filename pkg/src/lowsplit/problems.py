"""Benchmark problems: cubic Allen-Cahn, the Penzl Riccati equation and
Allen-Cahn with a logarithmic Flory-Huggins potential.

Grid functions are stored as matrices ``X[i, j] = u(x_i, y_j)``, so the
x-direction operator acts from the left and the y-direction operator from
the right.  For the Riccati problem the state is the d x d Riccati matrix
itself, with nodes numbered lexicographically (x fastest).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Tuple

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp

from .errors import InvalidInputError
from .lowrank import LowRankFactor, rng_for
from .matfun import StiffOperator
from .odesolve import DenseField, NonstiffField
from .splitting import SemilinearProblem

# states with at most this many entries are densified in one go
DENSE_LIMIT = 512 * 512
STREAM_BLOCK = 128


@dataclass(frozen=True)
class Grid2D:
    N: int
    bounds: Tuple[Tuple[float, float], Tuple[float, float]] = ((0.0, 1.0), (0.0, 1.0))
    boundary: str = "periodic"

    def __post_init__(self):
        if self.N < 2:
            raise InvalidInputError("grid needs N >= 2")
        if self.boundary not in ("periodic", "dirichlet-interior"):
            raise InvalidInputError(f"unknown boundary kind {self.boundary!r}")

    def spacing(self, axis: int = 0) -> float:
        a, b = self.bounds[axis]
        return (b - a) / (self.N if self.boundary == "periodic" else self.N + 1)

    def coords(self, axis: int = 0) -> np.ndarray:
        a, _ = self.bounds[axis]
        h = self.spacing(axis)
        i = np.arange(self.N) if self.boundary == "periodic" else np.arange(1, self.N + 1)
        return a + i * h

    def mesh(self) -> Tuple[np.ndarray, np.ndarray]:
        """Coordinate matrices with X[i, j] = x_i and Y[i, j] = y_j."""
        return np.meshgrid(self.coords(0), self.coords(1), indexing="ij")

    @property
    def domain(self) -> Tuple[float, float, float, float]:
        return (*self.bounds[0], *self.bounds[1])


def second_difference(N: int, h: float, periodic: bool = True) -> sp.csr_matrix:
    """Centered (1, -2, 1) / h^2 stencil, periodic or homogeneous Dirichlet."""
    D = sp.diags([np.ones(N - 1), -2.0 * np.ones(N), np.ones(N - 1)], [-1, 0, 1], format="lil")
    if periodic:
        D[0, N - 1] = 1.0
        D[N - 1, 0] = 1.0
    return (D / h ** 2).tocsr()


def first_difference(N: int, h: float) -> sp.csr_matrix:
    """Centered (w_{i+1} - w_{i-1}) / (2h), homogeneous Dirichlet."""
    return sp.diags([-np.ones(N - 1), np.ones(N - 1)], [-1, 1], format="csr") / (2 * h)


def field_eval_streaming(X, op: Callable[[np.ndarray], np.ndarray], W: np.ndarray,
                         block: int = STREAM_BLOCK) -> np.ndarray:
    """``op(L @ R.T) @ W`` for entrywise ``op``, forming ``block`` rows at a time."""
    L, R = X
    if block < 1:
        raise InvalidInputError("block must be positive")
    m = L.shape[0]
    out = np.empty((m, W.shape[1]))
    Rt = R.T
    for i in range(0, m, block):
        out[i:i + block] = op(L[i:i + block] @ Rt) @ W
    return out


class EntrywiseField(NonstiffField):
    """F(t, X) = g(X) with g applied entry by entry."""

    def __init__(self, g: Callable[[np.ndarray], np.ndarray], name: str = "entrywise",
                 dense_limit: int = DENSE_LIMIT, block: int = STREAM_BLOCK):
        self.g = g
        self.name = name
        self.dense_limit = dense_limit
        self.block = block

    def _apply(self, L, R, W):
        if L.shape[0] * R.shape[0] <= self.dense_limit:
            return self.g(L @ R.T) @ W
        return field_eval_streaming((L, R), self.g, W, self.block)

    def times(self, t, X, W):
        return self._apply(X[0], X[1], W)

    def transpose_times(self, t, X, W):
        # g(L R^T)^T = g(R L^T)
        return self._apply(X[1], X[0], W)

    def dense(self, t, X):
        return self.g(X)


class RiccatiField(NonstiffField):
    """F(X) = q c c^T - X b b^T X for column vectors b, c, evaluated factor-wise."""

    name = "riccati"

    def __init__(self, b: np.ndarray, c: np.ndarray, q: float = 100.0):
        self.b = np.asarray(b, dtype=float).ravel()
        self.c = np.asarray(c, dtype=float).ravel()
        self.q = float(q)

    def _apply(self, L, R, W):
        # X b b^T X W with X = L R^T
        rb = R.T @ self.b
        bl = self.b @ L
        quad = L @ (rb[:, None] * (bl @ (R.T @ W))[None, :])
        return self.q * np.outer(self.c, self.c @ W) - quad

    def times(self, t, X, W):
        return self._apply(X[0], X[1], W)

    def transpose_times(self, t, X, W):
        return self._apply(X[1], X[0], W)

    def dense(self, t, X):
        Xb = X @ self.b
        bX = self.b @ X
        return self.q * np.outer(self.c, self.c) - np.outer(Xb, bX)


def cubic(X: np.ndarray) -> np.ndarray:
    return X - X * X * X


def allen_cahn_initial(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Initial profile of the cubic benchmark.

    The cosecant terms blow up where sin(x/2) or sin(y/2) vanishes; the
    denominator is summed in log space so those nodes give exactly 0.
    """
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        a = np.abs(1.0 / np.sin(-x / 2))
        b = np.abs(1.0 / np.sin(-y / 2))
        log_den = np.logaddexp(0.0, np.logaddexp(a, b))
        num = (np.exp(-np.tan(x) ** 2) + np.exp(-np.tan(y) ** 2)) * np.sin(x) * np.sin(y)
        f = num * np.exp(-log_den)
    return np.where(np.isfinite(log_den), f, 0.0)


def allen_cahn_cubic(N: int = 256, eps: float = 0.1, T: float = 1.0) -> SemilinearProblem:
    """X' = A X + X A + X - X^3 on a periodic N x N grid of [0, 2pi]^2."""
    if N < 16:
        raise InvalidInputError("Allen-Cahn grid needs N >= 16")
    grid = Grid2D(N, ((0.0, 2 * math.pi), (0.0, 2 * math.pi)), "periodic")
    D2 = second_difference(N, grid.spacing())
    A = StiffOperator(eps * D2, symmetric=True, name="eps*D2")
    xx, yy = grid.mesh()
    X0 = allen_cahn_initial(xx, yy)
    return SemilinearProblem(A, A, EntrywiseField(cubic, "cubic"), X0, 0.0, T,
                             name=f"ac-cubic-{N}", meta={"grid": grid, "eps": eps})


@dataclass(frozen=True)
class RiccatiData:
    A: sp.csr_matrix
    B: np.ndarray
    C: np.ndarray
    Q: float = 100.0
    R: float = 1.0


def penzl_data(ntilde: int = 20) -> RiccatiData:
    """Centered-difference diffusion-convection operator on the unit square."""
    if ntilde < 4:
        raise InvalidInputError("Penzl grid needs at least 4 points per dimension")
    grid = Grid2D(ntilde, boundary="dirichlet-interior")
    delta = grid.spacing()
    x, y = grid.coords(0), grid.coords(1)
    I = sp.identity(ntilde, format="csr")
    lap = second_difference(ntilde, delta, periodic=False)
    Dc = first_difference(ntilde, delta)
    Tx = lap - 10.0 * sp.diags(x) @ Dc
    Ty = lap - 100.0 * sp.diags(y) @ Dc
    # x runs fastest in the node numbering
    A = (sp.kron(I, Tx) + sp.kron(Ty, I)).tocsr()
    ones = np.ones(ntilde)
    bx = ((x > 0.1) & (x <= 0.3)).astype(float)
    cx = ((x > 0.7) & (x <= 0.9)).astype(float)
    return RiccatiData(A, np.kron(ones, bx), np.kron(ones, cx))


def riccati_penzl(ntilde: int = 20, T: float = 0.1) -> SemilinearProblem:
    """X' = A^T X + X A + Q C^T C - X B B^T X with X(0) = I, d = ntilde^2."""
    data = penzl_data(ntilde)
    A = StiffOperator(data.A, symmetric=False, name="penzl")
    d = data.A.shape[0]
    F = RiccatiField(data.B, data.C, data.Q / data.R)
    return SemilinearProblem(A.T, A, F, np.eye(d), 0.0, T, name=f"dre-penzl-{d}",
                             meta={"data": data, "ntilde": ntilde})


FH_THETA, FH_THETA_C, FH_EPS, FH_CLAMP = 0.8, 1.0, 0.1, 1e-9
# f is continued linearly (C1) outside [FH_KNEE, 1 - FH_KNEE]; sketched states
# visit that region and the bare log makes the inner RK solves stall
FH_KNEE = 1e-3


def flory_huggins_f(u: np.ndarray, theta: float = FH_THETA, theta_c: float = FH_THETA_C,
                    knee: float = FH_KNEE) -> np.ndarray:
    """Derivative of the logarithmic potential, exact on [knee, 1 - knee].

    Outside that interval the tangent line at the nearer end is used, so f
    is defined for every real u and its slope is bounded by f'(knee).
    """
    u = np.asarray(u, dtype=float)
    if not 0.0 < knee < 0.5:
        raise InvalidInputError("knee must lie in (0, 1/2)")
    uc = np.clip(u, knee, 1.0 - knee)
    slope = theta / (knee * (1.0 - knee)) - 4.0 * theta_c
    # in-place evaluation; this is the hot loop of every Flory-Huggins sketch solve
    out = np.array(1.0 - uc, dtype=float)
    np.divide(uc, out, out=out)
    np.log(out, out=out)
    out *= theta
    out += 2.0 * theta_c * (1.0 - 2.0 * uc)
    out += slope * (u - uc)
    return out


def star_initial(x: np.ndarray, y: np.ndarray, eps: float = FH_EPS) -> np.ndarray:
    """Star-shaped tanh interface about (0.5, 0.5), mapped into (0, 1)."""
    dx, dy = x - 0.5, y - 0.5
    ang = np.arctan2(dy, dx)
    rad = np.sqrt(dx ** 2 + dy ** 2)
    u = np.tanh((0.25 + 0.1 * np.cos(6 * ang) - rad) / (eps * math.sqrt(2)))
    return (1.0 + u) / 2.0


BUTTERFLY = dict(k=1.8, a=0.40178, b=0.30178, c=6.0, d=3.0)


def butterfly_initial(x: np.ndarray, y: np.ndarray, eps: float = FH_EPS) -> np.ndarray:
    """Interface along the polar curve rho(phi) = k (a + b cos(c phi) sin(d phi))."""
    p = BUTTERFLY
    phi = np.mod(np.arctan2(y, x), 2 * math.pi)
    rho = p["k"] * (p["a"] + p["b"] * np.cos(p["c"] * phi) * np.sin(p["d"] * phi))
    rad = np.sqrt(x ** 2 + y ** 2)
    return (1.0 + np.tanh((rho - rad) / (eps * math.sqrt(2)))) / 2.0


def flory_huggins_energy(U: np.ndarray, h: float, eps: float = FH_EPS,
                         theta: float = FH_THETA, theta_c: float = FH_THETA_C,
                         clamp: float = FH_CLAMP) -> float:
    """Discrete free energy with periodic forward differences."""
    gx = (np.roll(U, -1, axis=0) - U) / h
    gy = (np.roll(U, -1, axis=1) - U) / h
    u = np.clip(U, clamp, 1.0 - clamp)
    pot = theta * (u * np.log(u) + (1 - u) * np.log(1 - u)) + 2 * theta_c * u * (1 - u)
    return float(np.sum(0.5 * eps ** 2 * (gx ** 2 + gy ** 2) + pot) * h * h)


def flory_huggins(N: int = 128, ic: str = "star", T: Optional[float] = None) -> SemilinearProblem:
    """u_t = eps^2 Lap u - f(u) with periodic boundaries."""
    if N < 32:
        raise InvalidInputError("Flory-Huggins grid needs N >= 32")
    if ic == "star":
        bounds, T = ((0.0, 1.0), (0.0, 1.0)), 100.0 if T is None else T
        init = star_initial
    elif ic == "butterfly":
        bounds, T = ((-2.0, 2.0), (-2.0, 2.0)), 10.0 if T is None else T
        init = butterfly_initial
    else:
        raise InvalidInputError(f"unknown initial condition {ic!r}")
    grid = Grid2D(N, bounds, "periodic")
    h = grid.spacing()
    A = StiffOperator(FH_EPS ** 2 * second_difference(N, h), symmetric=True, name="eps^2*D2")
    xx, yy = grid.mesh()
    X0 = np.clip(init(xx, yy), FH_CLAMP, 1.0 - FH_CLAMP)
    F = EntrywiseField(lambda X: -flory_huggins_f(X), "flory-huggins")
    return SemilinearProblem(A, A, F, X0, 0.0, T, name=f"flory-huggins-{ic}-{N}",
                             meta={"grid": grid, "energy": lambda U: flory_huggins_energy(U, h),
                                   "bounds": (FH_CLAMP, 1.0 - FH_CLAMP)})


def zero_operator(n: int) -> StiffOperator:
    return StiffOperator(sp.csr_matrix((n, n)), symmetric=True, name="0")


def manufactured(m: int = 20, n: int = 20, rank: int = 3, rank_end: Optional[int] = None,
                 seed: int = 0, coupling: float = -1.0, horizon: float = 0.1) -> SemilinearProblem:
    """Nonstiff problem whose exact solution G(t) is known in closed form.

    G(t) = R1(t) U0 diag(s(t)) V0^T R2(t)^T with rotations R1, R2 and
    ``rank_end - rank`` extra singular values growing linearly from zero,
    so rank(G(t0)) = rank and rank(G(t)) = rank_end for t > t0.  The field
    F(t, X) = G'(t) + coupling * (X - G(t)) leaves G an exact solution and
    keeps every sketched trajectory inside the sketched subspaces.
    """
    rank_end = rank if rank_end is None else rank_end
    if not 1 <= rank <= rank_end <= min(m, n):
        raise InvalidInputError("need 1 <= rank <= rank_end <= min(m, n)")
    rng = rng_for(seed, 991)
    U0 = la.qr(rng.standard_normal((m, rank_end)), mode="economic")[0]
    V0 = la.qr(rng.standard_normal((n, rank_end)), mode="economic")[0]
    K1 = rng.standard_normal((m, m))
    K1 = (K1 - K1.T) / math.sqrt(m)
    K2 = rng.standard_normal((n, n))
    K2 = (K2 - K2.T) / math.sqrt(n)
    base = 2.0 ** -np.arange(rank_end)
    grow = np.r_[np.zeros(rank), np.ones(rank_end - rank)] / horizon

    def sigma(t):
        return base * np.r_[np.ones(rank), np.zeros(rank_end - rank)] + base * grow * t

    def exact(t):
        R1, R2 = la.expm(t * K1), la.expm(t * K2)
        return (R1 @ U0) * sigma(t) @ (R2 @ V0).T

    def derivative(t):
        R1, R2 = la.expm(t * K1), la.expm(t * K2)
        G = exact(t)
        return K1 @ G + G @ K2.T + (R1 @ U0) * (base * grow) @ (R2 @ V0).T

    def func(t, X):
        return derivative(t) + coupling * (X - exact(t))

    X0 = LowRankFactor(U0[:, :rank], np.diag(sigma(0.0)[:rank]), V0[:, :rank])
    return SemilinearProblem(zero_operator(m), zero_operator(n), DenseField(func, "manufactured"),
                             X0, 0.0, horizon, name=f"manufactured-{m}x{n}-r{rank}-{rank_end}",
                             meta={"exact": exact})


def write_snapshot(path, U: np.ndarray, t: float, domain: Tuple[float, ...]) -> Path:
    """Three text header lines (N, domain, time) then little-endian float64 rows."""
    path = Path(path)
    U = np.ascontiguousarray(U, dtype="<f8")
    header = (f"N {U.shape[0]}\n"
              f"domain {' '.join(repr(float(v)) for v in domain)}\n"
              f"time {float(t)!r}\n")
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(U.tobytes(order="C"))
    return path


def read_snapshot(path):
    """Inverse of :func:`write_snapshot`; returns ``(U, t, domain)``."""
    with open(path, "rb") as fh:
        lines = [fh.readline().decode("ascii").split() for _ in range(3)]
        N = int(lines[0][1])
        domain = tuple(float(v) for v in lines[1][1:])
        t = float(lines[2][1])
        U = np.frombuffer(fh.read(), dtype="<f8").reshape(N, -1)
    return U, t, domain


def write_snapshot_csv(path, U: np.ndarray) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        for row in np.asarray(U):
            w.writerow([repr(float(v)) for v in row])
    return path
