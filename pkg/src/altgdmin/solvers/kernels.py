"""Column-shard kernels.

A kernel owns a subset of the columns (all of them for a centralized run, one
node's shard for a federated run, or a thread chunk) and performs every
column-local step: the decoupled B minimization, per-column gradient and
power-method contributions, and the diagnostics an observer needs. Sums over
columns leave a kernel only as exact fixed-point partials, so any grouping of
columns yields bit-identical iterates.
"""
import math

import numpy as np

from .. import exact, flops
from ..linalg import solve_stacked_ls, batched_least_squares, truncate_vector
from ..problems import LrmcData, LrprData

_HASH_A = np.uint64(0x9E3779B97F4A7C15)
_HASH_B = np.uint64(0xC2B2AE3D27D4EB4F)


def row_blocks(m: int, groups: int):
    bounds = np.linspace(0, m, groups + 1).round().astype(int)
    return [slice(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:])]


def entry_groups(rows, gcols, groups: int) -> np.ndarray:
    """Deterministic group label of each observed entry, keyed by its global index."""
    with np.errstate(over="ignore"):
        h = rows.astype(np.uint64) * _HASH_A + gcols.astype(np.uint64) * _HASH_B
        h ^= h >> np.uint64(31)
        h *= _HASH_A
        h ^= h >> np.uint64(29)
    return (h % np.uint64(groups)).astype(np.int64)


def col_sq(D):
    # per-column sum of squares as a last-axis reduction on contiguous rows
    Dt = np.ascontiguousarray(D.T)
    return np.sum(Dt * Dt, axis=1)


def _outer_sum(U, B):
    # U @ B.T accumulated in a fixed order, so each column is independent of the shard width
    X = U[:, :1] * B[:, 0]
    for i in range(1, U.shape[1]):
        X = X + U[:, i:i + 1] * B[:, i]
    return X


class SketchKernel:
    """LRCS shard: y_k = A_k x_k."""

    kind = "lrcs"

    def __init__(self, data, r: int, groups: int | None = None):
        self.data = data
        self.r = r
        self.n, self.m, self.q = data.n, data.m, data.q
        self.col_ids = np.asarray(data.col_ids)
        self.A = data.operators()
        self.Yt = np.ascontiguousarray(data.Y.T)
        self.blocks = row_blocks(self.m, groups) if groups else None
        self.B = np.zeros((self.q, r))
        self.flagged = np.zeros(self.q, dtype=bool)
        self.flops = 0
        self._AU = None

    # -- selection helpers
    def rows(self, sel):
        return slice(None) if sel is None else self.blocks[sel]

    def rows_in(self, sel) -> int:
        s = self.rows(sel)
        return len(range(*s.indices(self.m)))

    # -- scalar statistic
    def stat(self, sel=None):
        Ys = self.Yt[:, self.rows(sel)]
        self.flops += 2 * Ys.size
        return exact.exact_sum(np.sum(Ys * Ys, axis=1))

    # -- spectral initialization
    def prepare_init(self, alpha: float, sel=None):
        s = self.rows(sel)
        if alpha > 0:
            Yt = truncate_vector(self.Yt[:, s], alpha)
        else:
            Yt = np.zeros_like(self.Yt[:, s])
        self._set_init_columns(self.A[:, s], Yt)

    def _set_init_columns(self, As, Yt):
        self.X0 = (As.transpose(0, 2, 1) @ Yt[:, :, None])[:, :, 0]
        self.flops += self.q * (Yt.shape[1] + flops.gemm(self.n, Yt.shape[1], 1))

    def power_contribs(self, U):
        w = self.X0[:, None, :] @ U
        return self.X0[:, :, None] * w

    def power_partial(self, U, step):
        self.flops += self.q * (flops.gemm(1, self.n, self.r) + self.n * self.r)
        return exact.quantize_sum(self.power_contribs(U), step)

    # -- minimization over B
    def _au(self, U, sel):
        s = self.rows(sel)
        self._AU = (self.A[:, s] @ U, U, sel)
        self.flops += self.q * flops.gemm(self.rows_in(sel), self.n, self.r)
        return self._AU[0]

    def cached_au(self, U, sel):
        if self._AU is not None and self._AU[1] is U and self._AU[2] == sel:
            return self._AU[0]
        return self._au(U, sel)

    def update_B(self, U, sel=None, **_):
        AU = self._au(U, sel)
        self.B = batched_least_squares(AU, self.Yt[:, self.rows(sel)])
        self.flops += self.q * flops.ls(self.rows_in(sel), self.r)
        return self.B

    # -- gradient over U
    def residual(self, U, sel=None):
        AU = self.cached_au(U, sel)
        return (AU @ self.B[:, :, None])[:, :, 0] - self.Yt[:, self.rows(sel)]

    def grad_contribs(self, U, sel=None):
        res = self.residual(U, sel)
        v = (self.A[:, self.rows(sel)].transpose(0, 2, 1) @ res[:, :, None])[:, :, 0]
        mt = self.rows_in(sel)
        self.flops += self.q * (flops.gemm(mt, self.r, 1) + mt + flops.gemm(self.n, mt, 1) + self.n * self.r)
        return v[:, :, None] * self.B[:, None, :]

    def grad_partial(self, U, step, sel=None):
        return exact.quantize_sum(self.grad_contribs(U, sel), step)

    # -- observer diagnostics (full measurements)
    def objective_terms(self, U):
        res = self.residual(U, None)
        return np.sum(res * res, axis=1)

    def estimates(self, U):
        return _outer_sum(U, self.B)

    def column_errors(self, U, Xstar):
        return np.sqrt(self.column_sq_errors(U, Xstar) / col_sq(Xstar))

    def column_sq_errors(self, U, Xstar):
        return col_sq(self.estimates(U) - Xstar)

    # -- bounds used to fix the fixed-point grids
    def power_bound(self, S0, m0):
        return 4.0 * (math.sqrt(m0) + math.sqrt(self.n)) ** 2 * S0

    def grad_bound(self, S, mt):
        sigma_lo = max(math.sqrt(mt) - math.sqrt(self.r), 0.5) / 8.0
        return 2.0 * (math.sqrt(self.m) + math.sqrt(self.n)) * S / sigma_lo


class PhaseKernel(SketchKernel):
    """LRPR shard: z_k = |A_k x_k|, unknown signs c_k estimated per column."""

    kind = "lrpr"

    def __init__(self, data, r, groups=None):
        super().__init__(data, r, groups)
        self.C = np.ones_like(self.Yt)
        self._warm = False

    def prepare_init(self, alpha: float, sel=None):
        # weighted form sum_k A_k^T diag(z_trunc^2) A_k, applied without forming it
        s = self.rows(sel)
        z = self.Yt[:, s]
        zt = truncate_vector(z, alpha) if alpha > 0 else np.zeros_like(z)
        self._As0 = self.A[:, s]
        self._w0 = zt * zt
        self.flops += 2 * z.size

    def power_contribs(self, U):
        AU = self._As0 @ U
        return self._As0.transpose(0, 2, 1) @ (self._w0[:, :, None] * AU)

    def power_partial(self, U, step):
        m0 = self._w0.shape[1]
        self.flops += self.q * (2 * flops.gemm(m0, self.n, self.r) + m0 * self.r)
        return exact.quantize_sum(self.power_contribs(U), step)

    def spectral_b(self, AU, z):
        """Per-column r-dimensional spectral estimate used before any warm start."""
        mt = z.shape[1]
        H = AU.transpose(0, 2, 1) @ ((z * z)[:, :, None] * AU) / mt
        _, vecs = np.linalg.eigh(H)
        scale = np.sqrt(np.sum(z * z, axis=1) / mt)
        self.flops += self.q * (mt * self.r * self.r * 2 + 10 * self.r**3)
        return vecs[:, :, -1] * scale[:, None]

    def update_B(self, U, sel=None, inner_iters: int = 2, warm=None):
        AU = self._au(U, sel)
        z = self.Yt[:, self.rows(sel)]
        if warm is not None:
            b = np.asarray(warm, dtype=np.float64).T.copy()
        elif self._warm:
            b = self.B
        else:
            b = self.spectral_b(AU, z)
        mt = z.shape[1]
        for _ in range(inner_iters):
            c = np.where((AU @ b[:, :, None])[:, :, 0] < 0, -1.0, 1.0)
            b = batched_least_squares(AU, c * z)
            self.flops += self.q * (flops.gemm(mt, self.r, 1) + mt + flops.ls(mt, self.r))
        self.B, self.C, self._warm = b, c, True
        self._C_sel = sel
        return self.B

    def residual(self, U, sel=None):
        AU = self.cached_au(U, sel)
        return (AU @ self.B[:, :, None])[:, :, 0] - self.C * self.Yt[:, self.rows(sel)]

    def objective_terms(self, U):
        AU = self.cached_au(U, None)
        res = np.abs((AU @ self.B[:, :, None])[:, :, 0]) - self.Yt
        return np.sum(res * res, axis=1)

    def column_sq_errors(self, U, Xstar):
        X = self.estimates(U)
        return np.minimum(col_sq(X - Xstar), col_sq(X + Xstar))


class CompletionKernel:
    """LRMC shard: observed entries of the columns it owns."""

    kind = "lrmc"

    def __init__(self, data: LrmcData, r: int, groups: int | None = None):
        self.data = data
        self.r = r
        self.n, self.q, self.p = data.n, data.q, data.p
        self.col_ids = np.asarray(data.col_ids)
        self.rows, self.cols, self.vals = data.rows, data.cols, data.values
        self.groups = groups
        self.labels = entry_groups(self.rows, self.col_ids[self.cols], groups) if groups else None
        self.B = np.zeros((self.q, r))
        self.flagged = np.zeros(self.q, dtype=bool)
        self.flops = 0

    def select(self, sel):
        if sel is None:
            return slice(None)
        return np.flatnonzero(self.labels == sel)

    def p_eff(self, sel):
        return self.p if sel is None else self.p / self.groups

    def stat(self, sel=None):
        e = self.select(sel)
        v = self.vals[e]
        self.flops += 2 * v.size
        return exact.exact_sum(np.bincount(self.cols[e], weights=v * v, minlength=self.q))

    def prepare_init(self, alpha=None, sel=None):
        e = self.select(sel)
        self.x0 = (self.rows[e], self.cols[e], self.vals[e] / self.p_eff(sel))
        self.flops += self.x0[2].size

    def _bincols(self, cols, weights):
        return np.bincount(cols, weights=weights, minlength=self.q)

    def power_partial(self, U, step):
        rows, cols, v = self.x0
        w = np.stack([self._bincols(cols, v * U[rows, i]) for i in range(self.r)], axis=1)
        self.flops += 3 * v.size * self.r
        return exact.scatter_quantized(rows, v[:, None] * w[cols], step, (self.n, self.r))

    def update_B(self, U, sel=None, **_):
        e = self.select(sel)
        rows, cols, v = self.rows[e], self.cols[e], self.vals[e]
        mask = np.zeros((self.q, self.n))
        mask[cols, rows] = 1.0
        yfill = np.zeros((self.q, self.n))
        yfill[cols, rows] = v
        sol, bad = solve_stacked_ls(mask[:, :, None] * U[None], yfill)
        self.B, self.flagged = sol, bad
        counts = np.bincount(cols, minlength=self.q)
        r = self.r
        self.flops += int(np.sum(2 * counts * r * r + 2 * counts * r)) + self.q * max(0, r * r - (2 * r**3) // 3)
        return self.B

    def _residual(self, U, rows, cols, v):
        pred = np.sum(U[rows] * self.B[cols], axis=1)
        return pred - v

    def grad_entries(self, U, sel=None):
        e = self.select(sel)
        rows, cols, v = self.rows[e], self.cols[e], self.vals[e]
        res = self._residual(U, rows, cols, v)
        self.flops += v.size * (3 * self.r + 1)
        return rows, res[:, None] * self.B[cols]

    def grad_partial(self, U, step, sel=None):
        rows, contrib = self.grad_entries(U, sel)
        return exact.scatter_quantized(rows, contrib, step, (self.n, self.r))

    def objective_terms(self, U):
        res = self._residual(U, self.rows, self.cols, self.vals)
        return self._bincols(self.cols, res * res)

    def estimates(self, U):
        return _outer_sum(U, self.B)

    def column_errors(self, U, Xstar):
        return np.sqrt(self.column_sq_errors(U, Xstar) / col_sq(Xstar))

    def column_sq_errors(self, U, Xstar):
        return col_sq(self.estimates(U) - Xstar)

    def power_bound(self, S0, p0):
        return 4.0 * S0 / (p0 * p0)

    def grad_bound(self, S, pt):
        sigma_lo = max(math.sqrt(pt), 1e-3) / 8.0
        return S / sigma_lo


def make_kernel(data, r: int, groups: int | None = None):
    if isinstance(data, LrmcData):
        return CompletionKernel(data, r, groups)
    if isinstance(data, LrprData):
        return PhaseKernel(data, r, groups)
    return SketchKernel(data, r, groups)
