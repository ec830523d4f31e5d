"""Dense kernels: QR, subspace distance, truncation, incoherence projection,
power method, least squares and the seeded Gaussian generator.

Matrices are plain float64 numpy arrays. An "orthonormal basis" is an n x r
array whose columns are orthonormal (see :func:`is_orthonormal`).
"""
import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, NonPositiveThreshold, RankDeficient

RNG_ALGORITHM = "philox-ziggurat/1"
RANK_TOL = 1e-12


def seeded_gaussian(seed: int, m: int, n: int) -> np.ndarray:
    """m x n matrix of i.i.d. N(0, 1) entries, a pure function of (seed, m, n)."""
    gen = np.random.Generator(np.random.Philox(int(seed)))
    return gen.standard_normal((m, n))


def derive_seed(seed: int, *path: int) -> int:
    """Child 64-bit seed for ``path`` (e.g. a column index) under ``seed``."""
    ss = np.random.SeedSequence([int(seed), *map(int, path)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def rng_for(seed: int, *path: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(derive_seed(seed, *path)))


def is_orthonormal(U, tol: float = 1e-10) -> bool:
    U = np.asarray(U)
    if U.ndim != 2 or U.shape[1] > U.shape[0]:
        return False
    return bool(np.max(np.abs(U.T @ U - np.eye(U.shape[1])), initial=0.0) <= tol)


def _check_rank(sv, what="matrix"):
    if sv.size == 0:
        return
    if not sv[0] > 0 or sv[-1] <= RANK_TOL * sv[0]:
        raise RankDeficient(f"{what} is rank deficient (singular values {sv[0]:.3e} .. {sv[-1]:.3e})")


def orthonormalize_qr(M):
    """Thin QR with positive diagonal R, so the factorization is unique."""
    M = np.asarray(M, dtype=np.float64)
    n, r = M.shape
    if n < r:
        raise RankDeficient(f"cannot orthonormalize {r} columns in dimension {n}")
    Q, R = np.linalg.qr(M)
    _check_rank(np.linalg.svd(R, compute_uv=False), "QR input")
    s = np.where(np.diag(R) < 0, -1.0, 1.0)
    return Q * s, R * s[:, None]


def subspace_distance(U1, U2, norm: str = "spectral") -> float:
    """||(I - U1 U1^T) U2|| in the spectral or Frobenius norm."""
    U1 = np.asarray(U1, dtype=np.float64)
    U2 = np.asarray(U2, dtype=np.float64)
    if U1.shape != U2.shape:
        raise DimensionMismatch(f"basis shapes differ: {U1.shape} vs {U2.shape}")
    D = U2 - U1 @ (U1.T @ U2)
    if norm in ("spectral", "2", 2):
        return float(np.linalg.norm(D, 2))
    if norm in ("frobenius", "fro", "F"):
        return float(np.linalg.norm(D, "fro"))
    raise ValueError(f"unknown norm {norm!r}")


def truncate_vector(y, alpha: float) -> np.ndarray:
    """Zero every entry with |y_j| > sqrt(alpha)."""
    if not alpha > 0:
        raise NonPositiveThreshold(f"alpha must be positive, got {alpha}")
    y = np.asarray(y, dtype=np.float64)
    return np.where(np.abs(y) <= math.sqrt(alpha), y, 0.0)


def project_row_incoherent(M, mu: float) -> np.ndarray:
    """Shrink each row whose norm exceeds mu*sqrt(r/n) back onto that radius."""
    M = np.asarray(M, dtype=np.float64)
    n, r = M.shape
    thresh = mu * math.sqrt(r / n)
    norms = np.linalg.norm(M, axis=1)
    over = norms > thresh
    out = M.copy()
    out[over] *= (thresh / norms[over])[:, None]
    return out


def default_power_iters(*dims: int) -> int:
    return math.ceil(10 * math.log2(max(2, *dims)))


def power_start(n: int, r: int, seed: int) -> np.ndarray:
    """Random orthonormal starting block for the power method."""
    Q, _ = orthonormalize_qr(seeded_gaussian(derive_seed(seed, 0x50574D), n, r))
    return Q


@dataclass
class PowerResult:
    basis: np.ndarray
    ritz: np.ndarray
    iterations: int


def power_method(apply, n: int, r: int, iters: int | None = None, seed: int = 0,
                 tol: float = 1e-12) -> PowerResult:
    """Block power method U <- QR(apply(U)) with early exit on subspace change.

    ``ritz`` holds the Rayleigh-quotient eigenvalue estimates (descending) of
    the operator restricted to the last input block.
    """
    if iters is None:
        iters = default_power_iters(n)
    if iters < 1:
        raise ValueError("iters must be >= 1")
    U = power_start(n, r, seed)
    ritz = np.zeros(r)
    done = 0
    for done in range(1, iters + 1):
        W = apply(U)
        ritz = ritz_values(U, W)
        U_next, _ = orthonormalize_qr(W)
        change = subspace_distance(U, U_next)
        U = U_next
        if change < tol:
            break
    return PowerResult(U, ritz, done)


def ritz_values(U, W) -> np.ndarray:
    H = U.T @ W
    return np.sort(np.linalg.eigvalsh((H + H.T) / 2))[::-1]


def power_method_top_r(apply, n: int, r: int, iters: int | None = None, seed: int = 0) -> np.ndarray:
    return power_method(apply, n, r, iters, seed).basis


def top_r_left_singular_vectors(M, r: int, iters: int | None = None, seed: int = 0) -> np.ndarray:
    M = np.asarray(M, dtype=np.float64)
    n, q = M.shape
    if r > min(n, q):
        raise DimensionMismatch(f"r={r} exceeds min(n, q)={min(n, q)}")
    if iters is None:
        iters = default_power_iters(n, q)
    return power_method(lambda U: M @ (M.T @ U), n, r, iters, seed).basis


def solve_stacked_ls(As, ys):
    """Stacked least squares that reports rank-deficient systems instead of raising.

    Returns ``(solutions, bad)``; rows of ``solutions`` flagged in the boolean
    ``bad`` are zero.
    """
    As = np.asarray(As, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    K, m, r = As.shape
    if K == 0:
        return np.zeros((0, r)), np.zeros(0, dtype=bool)
    if m < r:
        return np.zeros((K, r)), np.ones(K, dtype=bool)
    Q, R = np.linalg.qr(As)
    # Householder R reveals rank loss on its diagonal for the well-scaled systems met here
    d = np.abs(np.diagonal(R, axis1=1, axis2=2))
    top = np.max(np.abs(R), axis=(1, 2))
    bad = ~(top > 0) | (np.min(d, axis=1) <= RANK_TOL * top)
    if bad.any():
        R = R.copy()
        R[bad] = np.eye(r)
    z = Q.transpose(0, 2, 1) @ ys[:, :, None]
    sol = np.linalg.solve(R, z)[:, :, 0]
    sol[bad] = 0.0
    return sol, bad


def batched_least_squares(As, ys):
    """Solve argmin_b ||y_k - A_k b|| for a stack of (m x r) systems.

    Returns the (K, r) solutions; raises RankDeficient naming the bad indices.
    """
    As = np.asarray(As)
    if As.shape[1] < As.shape[2]:
        raise RankDeficient(f"underdetermined least squares: {As.shape[1]} equations, {As.shape[2]} unknowns")
    sol, bad = solve_stacked_ls(As, ys)
    if bad.any():
        raise RankDeficient(f"rank-deficient least-squares systems at indices {np.flatnonzero(bad).tolist()}")
    return sol


def least_squares(A, y) -> np.ndarray:
    """argmin_b ||y - A b||_2 via Householder QR."""
    A = np.asarray(A, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if A.ndim != 2 or y.shape != (A.shape[0],):
        raise DimensionMismatch(f"A {A.shape} incompatible with y {y.shape}")
    return batched_least_squares(A[None], y[None])[0]
