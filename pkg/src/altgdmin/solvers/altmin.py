"""AltMin baselines: exact minimization over both blocks.

Used as the cost reference for AltGDmin. Initialization is shared with the
AltGDmin solvers so paired runs start from the same basis.
"""
import numpy as np

from .. import flops
from ..errors import RankDeficient, RowUnderdetermined
from ..linalg import orthonormalize_qr, subspace_distance
from ..problems import LrcsData, LrmcData
from .altgdmin import _check
from .config import FactorEstimate, SolverConfig
from .driver import Driver
from .kernels import CompletionKernel, SketchKernel


class _AltMin(Driver):
    def u_step(self, U):
        raise NotImplementedError

    def run(self):
        init = self.initialize()
        self.trace.init = {"alpha": init.alpha, "power_iters": init.power_iters, "scalar_stat": init.stat}
        rec0 = self._observe(0, init.U0, None)
        self.trace.init["se2"] = rec0.se2
        self.trace.append(rec0)
        U = init.U0
        self.rounds = 0
        for t in range(1, self.config.T_max + 1):
            for k in self.kernels:
                k.update_B(U)
            V = self.u_step(U)
            U_new, _ = orthonormalize_qr(V)
            change = subspace_distance(U, U_new)
            self.center_flops += flops.qr(self.n, self.r) + flops.subspace_change(self.n, self.r)
            self.trace.append(self._observe(t, U_new, U))
            U = U_new
            self.rounds = t
            if change <= self.config.tol:
                break
        return self.finish(U)


class _AltMinSketch(_AltMin):
    """U-step: one nr-dimensional least squares through its normal equations.

    The vectorized design has rows b_k^T kron a_ki^T. Its Gram matrix is
    assembled blockwise, H_ij = Ahat^T diag(b_i * b_j repeated) Ahat with Ahat
    the (qm x n) stack of all sketch rows, and re-formed every iteration.
    """

    def u_step(self, U):
        k = self.kernels[0]
        n, r, q, m = self.n, self.r, k.q, k.m
        Ahat = k.A.reshape(q * m, n)
        yhat = k.Yt.reshape(q * m)
        B = k.B  # (q, r)
        H = np.empty((r, n, r, n))
        rhs = np.empty((r, n))
        for i in range(r):
            wi = np.repeat(B[:, i], m)
            rhs[i] = Ahat.T @ (wi * yhat)
            for j in range(i, r):
                blk = Ahat.T @ ((wi * np.repeat(B[:, j], m))[:, None] * Ahat)
                H[i, :, j, :] = blk
                H[j, :, i, :] = blk.T
        N = n * r
        self.center_flops += (r * (r + 1) // 2) * (flops.gemm(n, q * m, n) + q * m * n)
        self.center_flops += r * (flops.gemm(n, q * m, 1) + 2 * q * m)
        self.center_flops += N**3 // 3 + 2 * N * N
        try:
            L = np.linalg.cholesky(H.reshape(N, N))
        except np.linalg.LinAlgError as exc:
            raise RankDeficient("AltMin normal equations are singular") from exc
        vec = np.linalg.solve(L.T, np.linalg.solve(L, rhs.reshape(N)))
        return vec.reshape(r, n).T


class _AltMinCompletion(_AltMin):
    """U-step: independent least squares per row over its observed columns."""

    def u_step(self, U):
        k = self.kernels[0]
        if not hasattr(self, "_tk"):
            self._tk = CompletionKernel(k.data.transpose(), self.r)
        tk = self._tk
        tk.flops = 0
        tk.update_B(np.ascontiguousarray(k.B))
        self.center_flops += tk.flops
        self.row_flags = np.flatnonzero(tk.flagged)
        if self.row_flags.size == self.n:
            raise RowUnderdetermined(self.row_flags.tolist())
        return tk.B


def altmin_lrcs(data: LrcsData, r: int, config: SolverConfig | None = None, oracle=None):
    _check(data, LrcsData, r)
    config = config or SolverConfig()
    drv = _AltMinSketch(data, [SketchKernel(data, r)], r, config, oracle)
    U = drv.run()
    return FactorEstimate(U, drv.assemble_B()), drv.trace


def altmin_lrmc(data: LrmcData, r: int, config: SolverConfig | None = None, oracle=None):
    _check(data, LrmcData, r)
    config = config or SolverConfig()
    drv = _AltMinCompletion(data, [CompletionKernel(data, r)], r, config, oracle)
    U = drv.run()
    return FactorEstimate(U, drv.assemble_B()), drv.trace
