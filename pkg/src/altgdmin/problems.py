"""Planted low-rank ground truth and the LRCS / LRPR / LRMC measurement models."""
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import matio
from .errors import BadColumn, BadRank, IncoherenceRejected, MatrixFormatError
from .linalg import RNG_ALGORITHM, derive_seed, orthonormalize_qr, rng_for, seeded_gaussian

MAX_INCOHERENCE_ATTEMPTS = 20


@dataclass
class GroundTruth:
    n: int
    q: int
    r: int
    Ustar: np.ndarray
    SigmaStar: np.ndarray
    Vstar: np.ndarray
    kappa: float
    mu: float
    Bstar: np.ndarray
    seed: int = 0

    @property
    def X(self) -> np.ndarray:
        return self.Ustar @ self.Bstar

    @property
    def sigma_max(self) -> float:
        return float(self.SigmaStar[0])

    def metadata(self) -> dict:
        return {"n": self.n, "q": self.q, "r": self.r, "kappa": self.kappa,
                "mu": self.mu, "sigma": self.SigmaStar.tolist(), "seed": self.seed}


def measure_incoherence(Ustar, Bstar, sigma_max: float, Vstar=None) -> float:
    """Smallest mu meeting the right-incoherence bound and the row-norm bounds.

    max_k ||b_k||^2 <= mu^2 r sigma_max^2 / q, max_j ||u^j|| <= mu sqrt(r/n) and,
    when V is given, max_k ||v_k|| <= mu sqrt(r/q).
    """
    n, r = Ustar.shape
    q = Bstar.shape[1]
    cands = [
        math.sqrt(q * float(np.max(np.sum(Bstar**2, axis=0))) / (r * sigma_max**2)),
        float(np.max(np.linalg.norm(Ustar, axis=1))) * math.sqrt(n / r),
    ]
    if Vstar is not None:
        cands.append(float(np.max(np.linalg.norm(Vstar, axis=1))) * math.sqrt(q / r))
    # nudged up so the defining inequalities survive re-evaluation in floating point
    return max(cands) * (1 + 1e-12)


def generate_ground_truth(n: int, q: int, r: int, kappa_target: float = 1.0, seed: int = 0,
                          sigma_max: float = 1.0, mu_max: float | None = None) -> GroundTruth:
    """Draw X* = U* diag(sigma) V*^T with log-linearly spaced singular values."""
    if not (1 <= r <= min(n, q)):
        raise BadRank(f"rank {r} must lie in [1, min(n, q)={min(n, q)}]")
    if kappa_target < 1:
        raise ValueError(f"kappa must be >= 1, got {kappa_target}")
    if r == 1:
        sigma = np.array([sigma_max], dtype=np.float64)
    else:
        sigma = sigma_max * kappa_target ** (-np.arange(r) / (r - 1))
        sigma[-1] = sigma_max / kappa_target
    for attempt in range(MAX_INCOHERENCE_ATTEMPTS):
        s = int(seed) + attempt
        U, _ = orthonormalize_qr(seeded_gaussian(derive_seed(s, 0), n, r))
        V, _ = orthonormalize_qr(seeded_gaussian(derive_seed(s, 1), q, r))
        B = sigma[:, None] * V.T
        mu = measure_incoherence(U, B, sigma_max, V)
        if mu_max is None or mu <= mu_max:
            return GroundTruth(n, q, r, U, sigma, V, float(sigma[0] / sigma[-1]), mu, B, s)
    raise IncoherenceRejected(
        f"no draw with mu <= {mu_max} in {MAX_INCOHERENCE_ATTEMPTS} attempts from seed {seed}")


# ---------------------------------------------------------------- sketches

@dataclass
class SketchData:
    """Column-wise Gaussian sketches; shared by LRCS (signed) and LRPR (magnitudes)."""
    n: int
    m: int
    operator_seeds: np.ndarray
    Y: np.ndarray
    seed: int = 0
    noise_std: float = 0.0
    col_ids: np.ndarray | None = None
    meta: dict = field(default_factory=dict)
    operator_factory: object = None
    _ops: np.ndarray | None = field(default=None, repr=False)

    kind = "sketch"

    def __post_init__(self):
        self.operator_seeds = np.asarray(self.operator_seeds, dtype=np.uint64)
        if self.col_ids is None:
            self.col_ids = np.arange(self.Y.shape[1])

    @property
    def q(self) -> int:
        return self.Y.shape[1]

    def operator(self, k: int) -> np.ndarray:
        if not 0 <= k < self.q:
            raise BadColumn(f"column {k} outside [0, {self.q})")
        if self._ops is not None:
            return self._ops[k]
        factory = self.operator_factory or seeded_gaussian
        return factory(int(self.operator_seeds[k]), self.m, self.n)

    def operators(self) -> np.ndarray:
        """(q, m, n) stack of A_k, regenerated from seeds once and cached."""
        if self._ops is None:
            factory = self.operator_factory or seeded_gaussian
            ops = np.empty((self.q, self.m, self.n))
            for k, s in enumerate(self.operator_seeds):
                ops[k] = factory(int(s), self.m, self.n)
            self._ops = ops
        return self._ops

    def subset(self, cols):
        cols = np.asarray(cols, dtype=np.int64)
        return type(self)(self.n, self.m, self.operator_seeds[cols], self.Y[:, cols].copy(),
                          self.seed, self.noise_std, self.col_ids[cols], dict(self.meta),
                          self.operator_factory, None if self._ops is None else self._ops[cols])

    def sq_norms(self) -> np.ndarray:
        return np.sum(self.Y**2, axis=0)


class LrcsData(SketchData):
    kind = "lrcs"


class LrprData(SketchData):
    kind = "lrpr"

    @property
    def Z(self) -> np.ndarray:
        return self.Y


def _sketch(gt: GroundTruth, m: int, seed: int, operator_factory=None):
    if m < 1:
        raise ValueError("m must be >= 1")
    seeds = np.array([derive_seed(seed, k) for k in range(gt.q)], dtype=np.uint64)
    factory = operator_factory or seeded_gaussian
    ops = np.empty((gt.q, m, gt.n))
    for k, s in enumerate(seeds):
        ops[k] = factory(int(s), m, gt.n)
    Y = (ops @ gt.X.T[:, :, None])[:, :, 0].T.copy()
    return seeds, ops, Y


def _gt_meta(gt):
    return {"r": gt.r, "kappa": gt.kappa, "mu": gt.mu}


def lrcs_measure(gt: GroundTruth, m: int, seed: int = 0, noise_std: float = 0.0,
                 operator_factory=None) -> LrcsData:
    """y_k = A_k x*_k (+ optional white Gaussian noise), A_k regenerable from seeds."""
    seeds, ops, Y = _sketch(gt, m, seed, operator_factory)
    if noise_std > 0:
        Y = Y + noise_std * rng_for(seed, 0x4E4F4953).standard_normal(Y.shape)
    return LrcsData(gt.n, m, seeds, Y, seed, noise_std, None, _gt_meta(gt), operator_factory, ops)


def lrpr_measure(gt: GroundTruth, m: int, seed: int = 0, operator_factory=None) -> LrprData:
    """z_k = |A_k x*_k| with the same seed derivation as :func:`lrcs_measure`."""
    seeds, ops, Y = _sketch(gt, m, seed, operator_factory)
    return LrprData(gt.n, m, seeds, np.abs(Y), seed, 0.0, None, _gt_meta(gt), operator_factory, ops)


# ---------------------------------------------------------------- completion

@dataclass
class LrmcData:
    """Bernoulli(p) observed entries; stored column-major (sorted by column, then row)."""
    n: int
    p: float
    rows: np.ndarray
    cols: np.ndarray
    values: np.ndarray
    q_total: int
    seed: int = 0
    noise_std: float = 0.0
    col_ids: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    kind = "lrmc"

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=np.int64)
        self.cols = np.asarray(self.cols, dtype=np.int64)
        self.values = np.asarray(self.values, dtype=np.float64)
        order = np.lexsort((self.rows, self.cols))
        if np.any(order != np.arange(order.size)):
            self.rows, self.cols, self.values = self.rows[order], self.cols[order], self.values[order]
        if self.col_ids is None:
            self.col_ids = np.arange(self.q_total)
        self.indptr = np.searchsorted(self.cols, np.arange(self.q + 1))

    @property
    def q(self) -> int:
        return len(self.col_ids)

    @property
    def omega_size(self) -> int:
        return int(self.values.size)

    @property
    def Y(self) -> np.ndarray:
        Y = np.zeros((self.n, self.q))
        Y[self.rows, self.cols] = self.values
        return Y

    def column(self, k: int):
        if not 0 <= k < self.q:
            raise BadColumn(f"column {k} outside [0, {self.q})")
        s = slice(self.indptr[k], self.indptr[k + 1])
        return self.rows[s], self.values[s]

    def sq_norms(self) -> np.ndarray:
        return np.bincount(self.cols, weights=self.values**2, minlength=self.q)

    def subset(self, cols):
        cols = np.asarray(cols, dtype=np.int64)
        local = np.full(self.q, -1, dtype=np.int64)
        local[cols] = np.arange(cols.size)
        keep = local[self.cols] >= 0
        return LrmcData(self.n, self.p, self.rows[keep], local[self.cols[keep]], self.values[keep],
                        cols.size, self.seed, self.noise_std, self.col_ids[cols], dict(self.meta))

    def transpose(self) -> "LrmcData":
        return LrmcData(self.q, self.p, self.cols, self.rows, self.values, self.n,
                        self.seed, self.noise_std, None, dict(self.meta))


def lrmc_sample(gt: GroundTruth, p: float, seed: int = 0, noise_std: float = 0.0) -> LrmcData:
    """Observe each entry of X* independently with probability p."""
    if not 0 < p <= 1:
        raise ValueError(f"p must lie in (0, 1], got {p}")
    mask = rng_for(seed, 0x4C524D43).random((gt.n, gt.q)) < p
    cols, rows = np.nonzero(mask.T)
    values = gt.X[rows, cols]
    if noise_std > 0:
        values = values + noise_std * rng_for(seed, 0x4E4F4953).standard_normal(values.shape)
    return LrmcData(gt.n, p, rows, cols, values, gt.q, seed, noise_std, None, _gt_meta(gt))


# ---------------------------------------------------------------- operators

def apply_forward(data, k: int, x) -> np.ndarray:
    """A_k x for sketches; the entries of x on the observed rows of column k for LRMC."""
    x = np.asarray(x, dtype=np.float64)
    if isinstance(data, LrmcData):
        rows, _ = data.column(k)
        return x[rows]
    return data.operator(k) @ x


def apply_adjoint(data, k: int, w) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    if isinstance(data, LrmcData):
        rows, _ = data.column(k)
        out = np.zeros(data.n)
        out[rows] = w
        return out
    return data.operator(k).T @ w


# ---------------------------------------------------------------- dataset files

def save_dataset(data, directory, gt: GroundTruth | None = None) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    meta = {"kind": data.kind, "n": data.n, "q": data.q, "seed": data.seed,
            "noise_std": data.noise_std, "rng": RNG_ALGORITHM, **data.meta}
    if isinstance(data, LrmcData):
        meta["p"] = data.p
        matio.write_index_pairs(d / "omega.bin", data.rows, data.cols)
        order = np.lexsort((data.cols, data.rows))
        matio.write_matrix(d / "values.altm", data.values[order][:, None])
    else:
        meta["m"] = data.m
        meta["operator_seeds"] = [int(s) for s in data.operator_seeds]
        matio.write_matrix(d / "Y.altm", data.Y)
    if gt is not None:
        meta["ground_truth"] = gt.metadata()
        matio.write_matrix(d / "Ustar.altm", gt.Ustar)
        matio.write_matrix(d / "Vstar.altm", gt.Vstar)
    (d / "dataset.json").write_text(json.dumps(meta, indent=2) + "\n")


def load_dataset(directory):
    d = Path(directory)
    meta = json.loads((d / "dataset.json").read_text())
    kind = meta["kind"]
    extra = {k: meta[k] for k in ("r", "kappa", "mu") if k in meta}
    if kind == "lrmc":
        rows, cols = matio.read_index_pairs(d / "omega.bin")
        values = matio.read_matrix(d / "values.altm")[:, 0]
        if values.size != rows.size:
            raise MatrixFormatError("omega and values lengths differ")
        return LrmcData(meta["n"], meta["p"], rows, cols, values, meta["q"], meta["seed"],
                        meta["noise_std"], None, extra)
    cls = {"lrcs": LrcsData, "lrpr": LrprData}[kind]
    Y = matio.read_matrix(d / "Y.altm")
    return cls(meta["n"], meta["m"], np.array(meta["operator_seeds"], dtype=np.uint64), Y,
               meta["seed"], meta["noise_std"], None, extra)
