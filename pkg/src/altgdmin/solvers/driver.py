"""Shared AltGDmin loop over column-shard kernels.

The same code path serves centralized runs (one shard, or one shard per
worker thread) and the federated simulator (one shard per node). Cross-column
sums go through exact fixed-point partials, so the iterates do not depend on
how columns are grouped. A ``channel`` object sees every message that a
federated deployment would send; centralized runs use :class:`NullChannel`.
"""
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .. import exact, flops
from ..errors import (AllZeroData, NonFiniteIterate, RankDeficient, ReductionOverflow)
from ..linalg import (default_power_iters, orthonormalize_qr, power_start, project_row_incoherent,
                      ritz_values, subspace_distance)
from .config import (NO_ORACLE_C_TILDE, NO_ORACLE_MU, FactorEstimate, RunTrace, SolverConfig,
                     TraceRecord)
from .kernels import col_sq, make_kernel


class NullChannel:
    """Centralized execution: nothing is transmitted."""

    def up(self, rnd, node, kind, payload):
        pass

    def down(self, rnd, node, kind, payload):
        pass


@dataclass
class InitResult:
    kind: str
    U0: np.ndarray
    alpha: float
    ritz: np.ndarray
    power_iters: int
    stat: float
    samples: float  # m0 for sketches, p0 for completion
    mu: float | None = None


def c_tilde_for(data, config: SolverConfig) -> float:
    if config.c_tilde is not None:
        return float(config.c_tilde)
    meta = getattr(data, "meta", {}) or {}
    if meta.get("kappa") is not None and meta.get("mu") is not None:
        return 9.0 * meta["kappa"] ** 2 * meta["mu"] ** 2
    return NO_ORACLE_C_TILDE


def mu_for(data, config: SolverConfig) -> float:
    if config.mu is not None:
        return float(config.mu)
    meta = getattr(data, "meta", {}) or {}
    return float(meta.get("mu") or NO_ORACLE_MU)


def estimate_sigma_max(init: InitResult, policy: str = "from_init", oracle=None) -> float:
    """Largest singular value of X* estimated from the spectral-initialization artifacts.

    Sketches: the power method returns lambda_1 of X0 X0^T (LRCS) or of
    sum_k A_k^T diag(z_k^2) A_k (LRPR), built from m0 rows per column. For
    LRCS E[X0] is close to m0 X*, so sigma ~ sqrt(lambda_1)/m0. For LRPR the
    expectation is m0 sum_k (||x_k||^2 I + 2 x_k x_k^T), so sigma^2 is read
    off after removing the isotropic part, estimated by sum ||z_k||^2 / m0.
    Completion: lambda_1 of (Y/p)(Y/p)^T, so sigma ~ sqrt(lambda_1).
    """
    if policy == "oracle":
        if oracle is None:
            raise ValueError("oracle sigma_max policy needs a ground truth")
        return float(oracle.sigma_max)
    lam = max(float(init.ritz[0]), 0.0)
    if init.kind == "lrcs":
        return math.sqrt(lam) / init.samples
    if init.kind == "lrpr":
        m0 = init.samples
        s2 = (lam / m0 - init.stat / m0) / 2.0
        return math.sqrt(max(s2, 1e-30 * max(lam, 1e-300) / m0))
    return math.sqrt(lam)


def _sample_counts(kernel, sel):
    if kernel.kind == "lrmc":
        return kernel.p_eff(sel)
    return kernel.rows_in(sel)


class Executor:
    def __init__(self, threads: int = 1):
        self.threads = max(1, int(threads))
        self._pool = ThreadPoolExecutor(self.threads) if self.threads > 1 else None

    def map(self, fn, items):
        if self._pool is None:
            return [fn(x) for x in items]
        return list(self._pool.map(fn, items))

    def close(self):
        if self._pool is not None:
            self._pool.shutdown()


def shard_columns(q: int, parts: int):
    parts = max(1, min(parts, q))
    return [np.arange(a, b) for a, b in _bounds(q, parts)]


def _bounds(q, parts):
    base, extra = divmod(q, parts)
    start = 0
    for i in range(parts):
        size = base + (1 if i < extra else 0)
        yield start, start + size
        start += size


class Driver:
    """One AltGDmin run over a list of kernels (column shards, in node order)."""

    def __init__(self, data, kernels, r, config: SolverConfig, oracle=None,
                 channel=None, executor: Executor | None = None):
        config.validate()
        self.data, self.kernels, self.r = data, kernels, r
        self.kind = kernels[0].kind
        self.n = kernels[0].n
        self.q = sum(k.q for k in kernels)
        self.config = config
        self.oracle = oracle
        self.channel = channel or NullChannel()
        self.exec = executor or Executor(1)
        self.groups = config.split_groups if config.sample_split else None
        self.center_flops = 0
        self.trace = RunTrace()
        self._t0 = time.perf_counter()
        if oracle is not None:
            self._Xstar = [oracle.X[:, k.col_ids] for k in kernels]
            self._xnorm = float(np.linalg.norm(oracle.X))
            self._xcol2 = np.concatenate([col_sq(X) for X in self._Xstar])

    # -- helpers
    def _map(self, fn):
        return self.exec.map(fn, self.kernels)

    def _nodes(self):
        return range(len(self.kernels))

    def flops(self) -> int:
        return self.center_flops + sum(k.flops for k in self.kernels)

    def _reduce(self, rnd, kind, parts):
        for i, part in enumerate(parts):
            self.channel.up(rnd, i, kind, part)
        return exact.combine(parts)

    def _broadcast(self, rnd, kind, U):
        for i in self._nodes():
            self.channel.down(rnd, i, kind, U)

    def _sel(self, t):
        if self.groups is None:
            return None
        return 1 + (t - 1) % (self.groups - 1)

    # -- initialization
    def initialize(self) -> InitResult:
        sel0 = 0 if self.groups else None
        stats = self._map(lambda k: exact.to_double_double(k.stat(sel0)))
        for i, s in enumerate(stats):
            self.channel.up(0, i, "scalar-stat", np.array(s))
        S0 = exact.round_exact(stats)
        self._broadcast(0, "scalar-stat", np.array([S0]))
        if not S0 > 0:
            raise AllZeroData("all measurements are zero")
        k0 = self.kernels[0]
        samples = _sample_counts(k0, sel0)
        if self.kind == "lrmc":
            alpha = 0.0
        else:
            alpha = c_tilde_for(self.data, self.config) * S0 / (samples * self.q)
        self._map(lambda k: k.prepare_init(alpha, sel0))
        step = exact.grid_step(k0.power_bound(S0, samples))

        iters = self.config.power_iters
        if iters is None:
            iters = default_power_iters(self.n, self.q)
        n, r = self.n, self.r
        U = power_start(n, r, self.config.seed)
        ritz = np.zeros(r)
        done = 0
        for done in range(1, iters + 1):
            if done > 1:
                self._broadcast(done, "power-iterate", U)
            Ucur = U
            W = exact.dequantize(self._reduce(done, "power-iterate",
                                              self._map(lambda k: k.power_partial(Ucur, step))), step)
            ritz = ritz_values(U, W)
            U_next, _ = orthonormalize_qr(W)
            change = subspace_distance(U, U_next)
            self.center_flops += flops.gemm(r, n, r) + flops.qr(n, r) + flops.subspace_change(n, r)
            U = U_next
            if change < 1e-12:
                break
        self.power_rounds = done
        mu = None
        if self.kind == "lrmc":
            mu = mu_for(self.data, self.config)
            U, _ = orthonormalize_qr(project_row_incoherent(U, mu))
            self.center_flops += 3 * n * r + flops.qr(n, r)
        self.S0 = S0
        self.init = InitResult(self.kind, U, alpha, ritz, done, S0, samples, mu)
        return self.init

    # -- observer (oracle diagnostics; not part of the algorithm's cost)
    def _observe(self, it, U_se, U_est):
        rec = TraceRecord(it, flops=self.flops(), seconds=time.perf_counter() - self._t0)
        if self.oracle is not None:
            rec.se2 = subspace_distance(self.oracle.Ustar, U_se)
            rec.sef = subspace_distance(self.oracle.Ustar, U_se, "frobenius")
        if U_est is not None:
            saved = [k.flops for k in self.kernels]
            rec.objective = math.fsum(np.concatenate([k.objective_terms(U_est) for k in self.kernels]))
            if self.oracle is not None:
                sq = np.concatenate([k.column_sq_errors(U_est, X) for k, X in zip(self.kernels, self._Xstar)])
                rec.max_col_err = float(np.max(np.sqrt(sq / self._xcol2)))
                rec.rel_fro = math.sqrt(math.fsum(sq)) / self._xnorm
            rec.flagged = int(sum(int(np.sum(k.flagged)) for k in self.kernels))
            for k, f in zip(self.kernels, saved):
                k.flops = f
        return rec

    # -- main loop
    def start(self):
        """Initialize, fix the step size and record the iter-0 row."""
        init = self.initialize()
        self.sigma = estimate_sigma_max(init, self.config.sigma_max_policy, self.oracle)
        self.trace.init = {"alpha": init.alpha, "power_iters": init.power_iters,
                           "sigma_max_est": self.sigma, "scalar_stat": init.stat}
        rec0 = self._observe(0, init.U0, None)
        self.trace.init["se2"] = rec0.se2
        self.trace.append(rec0)
        # gradient partials use a grid fixed by data-only bounds
        self._grad_scale = self.S0 * (2.0 * self.groups if self.groups else 1.0)
        self.rounds = 0
        return init.U0

    def step(self, U, t: int):
        """Round t: broadcast U, local B update, partial gradients, center GD step and QR."""
        n, r, k0 = self.n, self.r, self.kernels[0]
        rnd = self.init.power_iters + t
        sel = self._sel(t)
        samples = _sample_counts(k0, sel)
        step = exact.grid_step(k0.grad_bound(self._grad_scale, samples))
        inner = self.config.inner_iters
        self._broadcast(rnd, "basis-broadcast", U)
        self._map(lambda k: k.update_B(U, sel, inner_iters=inner))
        parts = self._map(lambda k: k.grad_partial(U, step, sel))
        G = exact.dequantize(self._reduce(rnd, "partial-gradient", parts), step)
        eta = self.config.step_constant(self.kind) / (samples * self.sigma**2)
        V = U - eta * G
        if not np.all(np.isfinite(V)):
            raise NonFiniteIterate(f"non-finite iterate at iteration {t} (step size {eta:.3e})")
        try:
            U_new, _ = orthonormalize_qr(V)
        except RankDeficient as exc:
            raise NonFiniteIterate(f"iterate lost rank at iteration {t}: {exc}") from exc
        self.center_flops += 2 * n * r + flops.qr(n, r)
        return U_new

    def run(self):
        U = self.start()
        n, r = self.n, self.r
        for t in range(1, self.config.T_max + 1):
            U_new = self.step(U, t)
            change = subspace_distance(U, U_new)
            self.center_flops += flops.subspace_change(n, r)
            self.trace.append(self._observe(t, U_new, U))
            U = U_new
            self.rounds = t
            if change <= self.config.tol:
                break
        return self.finish(U)

    def finish(self, U):
        # final B from the last basis; in a federation this happens at the nodes
        inner = self.config.inner_iters
        self._map(lambda k: k.update_B(U, None, inner_iters=inner))
        final = self._observe(self.rounds, U, U)
        self.trace.init.update({"final_objective": final.objective, "final_max_col_err": final.max_col_err,
                                "final_rel_fro": final.rel_fro, "final_flagged": final.flagged,
                                "iterations": self.rounds})
        self.U = U
        return U

    def assemble_B(self):
        B = np.zeros((self.r, self.q))
        for k in self.kernels:
            B[:, k.col_ids] = k.B.T
        return B


def centralized(data, r, config=None, oracle=None, threads: int = 1):
    """Run AltGDmin on ``data`` with column chunks spread over ``threads`` workers."""
    config = config or SolverConfig()
    groups = config.split_groups if config.sample_split else None
    q = data.q
    if r > min(data.n, q):
        from ..errors import BadRank
        raise BadRank(f"r={r} exceeds min(n, q)={min(data.n, q)}")
    if threads > 1:
        kernels = [make_kernel(data.subset(c), r, groups) for c in shard_columns(q, threads)]
    else:
        kernels = [make_kernel(data, r, groups)]
    ex = Executor(threads)
    try:
        drv = Driver(data, kernels, r, config, oracle, NullChannel(), ex)
        U = drv.run()
    finally:
        ex.close()
    return FactorEstimate(U, drv.assemble_B()), drv.trace


__all__ = ["Driver", "NullChannel", "Executor", "InitResult", "centralized", "estimate_sigma_max",
           "c_tilde_for", "mu_for", "shard_columns", "ReductionOverflow"]
