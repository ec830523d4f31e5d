"""AltGDmin for LRCS, LRPR and LRMC, plus the individual steps as functions."""
import numpy as np

from ..errors import BadRank, ColumnUnderdetermined, DimensionMismatch
from ..problems import LrcsData, LrmcData, LrprData
from .config import SolverConfig
from .driver import Driver, centralized, estimate_sigma_max  # noqa: F401
from .kernels import CompletionKernel, PhaseKernel, SketchKernel


def _check(data, cls, r):
    if not isinstance(data, cls):
        raise TypeError(f"expected {cls.__name__}, got {type(data).__name__}")
    if not 1 <= r <= min(data.n, data.q):
        raise BadRank(f"r={r} must lie in [1, min(n, q)={min(data.n, data.q)}]")


def _check_U(U, n, r=None):
    U = np.asarray(U, dtype=np.float64)
    if U.ndim != 2 or U.shape[0] != n or (r is not None and U.shape[1] != r):
        raise DimensionMismatch(f"U has shape {U.shape}, expected ({n}, r)")
    return U


def _init(data, r, config):
    drv = Driver(data, [_kernel_for(data, r)], r, config)
    return drv.initialize()


def _kernel_for(data, r):
    if isinstance(data, LrmcData):
        return CompletionKernel(data, r)
    if isinstance(data, LrprData):
        return PhaseKernel(data, r)
    return SketchKernel(data, r)


# ---------------------------------------------------------------- LRCS

def lrcs_init(data: LrcsData, r: int, kappa_mu_const: float, power_iters=None, seed: int = 0):
    """Truncated spectral initialization. Returns ``(U0, alpha)``."""
    _check(data, LrcsData, r)
    if not kappa_mu_const > 0:
        raise ValueError("kappa_mu_const must be positive")
    init = _init(data, r, SolverConfig(c_tilde=kappa_mu_const, power_iters=power_iters, seed=seed))
    return init.U0, init.alpha


def lrcs_update_B(U, data: LrcsData) -> np.ndarray:
    """Per-column least squares b_k = (A_k U)^+ y_k, returned as r x q."""
    U = _check_U(U, data.n)
    return SketchKernel(data, U.shape[1]).update_B(U).T.copy()


def lrcs_grad_U(U, B, data: LrcsData) -> np.ndarray:
    """sum_k A_k^T (A_k U b_k - y_k) b_k^T, the gradient of f/2."""
    U = _check_U(U, data.n)
    k = SketchKernel(data, U.shape[1])
    k.B = np.asarray(B, dtype=np.float64).T
    return np.sum(k.grad_contribs(U), axis=0)


def lrcs_objective(U, B, data: LrcsData) -> float:
    R = np.einsum("kmn,nr,rk->mk", data.operators(), U, B) - data.Y
    return float(np.sum(R * R))


def altgdmin_lrcs(data: LrcsData, r: int, config: SolverConfig | None = None, oracle=None, threads: int = 1):
    _check(data, LrcsData, r)
    return centralized(data, r, config, oracle, threads)


# ---------------------------------------------------------------- LRPR

def lrpr_init(data: LrprData, r: int, C_tilde: float, power_iters=None, seed: int = 0):
    _check(data, LrprData, r)
    if not C_tilde > 0:
        raise ValueError("C_tilde must be positive")
    return _init(data, r, SolverConfig(c_tilde=C_tilde, power_iters=power_iters, seed=seed)).U0


def lrpr_update_Bc(U, data: LrprData, inner_iters: int = 2, warm=None):
    """Alternating sign / least-squares estimate of (B, C) for a fixed U.

    ``warm`` is an optional r x q starting B; by default each column starts
    from its r-dimensional spectral estimate. Returns ``(B, C)`` with C m x q.
    """
    U = _check_U(U, data.n)
    k = PhaseKernel(data, U.shape[1])
    k.update_B(U, None, inner_iters=inner_iters, warm=warm)
    return k.B.T.copy(), k.C.T.copy()


def lrpr_grad_U(U, B, C, data: LrprData) -> np.ndarray:
    U = _check_U(U, data.n)
    k = PhaseKernel(data, U.shape[1])
    k.B = np.asarray(B, dtype=np.float64).T
    k.C = np.asarray(C, dtype=np.float64).T
    return np.sum(k.grad_contribs(U), axis=0)


def lrpr_objective(U, B, C, data: LrprData) -> float:
    R = np.einsum("kmn,nr,rk->mk", data.operators(), U, B) - np.asarray(C) * data.Y
    return float(np.sum(R * R))


def altgdmin_lrpr(data: LrprData, r: int, config: SolverConfig | None = None, oracle=None, threads: int = 1):
    _check(data, LrprData, r)
    return centralized(data, r, config, oracle, threads)


# ---------------------------------------------------------------- LRMC

def lrmc_init(data: LrmcData, r: int, mu: float, power_iters=None, seed: int = 0):
    _check(data, LrmcData, r)
    if not mu > 0:
        raise ValueError("mu must be positive")
    return _init(data, r, SolverConfig(mu=mu, power_iters=power_iters, seed=seed)).U0


def lrmc_update_B(U, data: LrmcData, strict: bool = False):
    """Per-column LS over observed rows. Returns ``(B, flagged)``.

    Columns whose restricted basis is rank deficient get b_k = 0 and are
    listed in ``flagged``; with ``strict`` they raise ColumnUnderdetermined.
    """
    U = _check_U(U, data.n)
    k = CompletionKernel(data, U.shape[1])
    k.update_B(U)
    flagged = np.flatnonzero(k.flagged)
    if strict and flagged.size:
        raise ColumnUnderdetermined(flagged.tolist())
    return k.B.T.copy(), flagged


def lrmc_grad_U(U, B, data: LrmcData) -> np.ndarray:
    """((U B - Y) restricted to the observed set) B^T."""
    U = _check_U(U, data.n)
    k = CompletionKernel(data, U.shape[1])
    k.B = np.asarray(B, dtype=np.float64).T
    rows, contrib = k.grad_entries(U)
    G = np.zeros_like(U)
    np.add.at(G, rows, contrib)
    return G


def lrmc_objective(U, B, data: LrmcData) -> float:
    pred = np.sum(U[data.rows] * np.asarray(B).T[data.cols], axis=1)
    return float(np.sum((pred - data.values) ** 2))


def altgdmin_lrmc(data: LrmcData, r: int, config: SolverConfig | None = None, oracle=None, threads: int = 1):
    _check(data, LrmcData, r)
    return centralized(data, r, config, oracle, threads)
