import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .. import matio
from ..errors import ConfigError

TRACE_HEADER = ["iter", "se2", "sef", "max_col_err", "objective", "flops", "seconds"]
C_ETA_MAX = 0.8
# step-size constants used when the config leaves c_eta unset
DEFAULT_C_ETA = {"lrcs": 0.4, "lrpr": 0.4, "lrmc": 0.5}
NO_ORACLE_C_TILDE = 36.0
NO_ORACLE_MU = 3.0


@dataclass
class SolverConfig:
    T_max: int = 500
    c_eta: float | None = None
    tol: float = 1e-12
    sample_split: bool = False
    split_groups: int = 4
    sigma_max_policy: str = "from_init"
    seed: int = 0
    c_tilde: float | None = None
    mu: float | None = None
    power_iters: int | None = None
    inner_iters: int = 2

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.c_eta is not None and not (0 < self.c_eta <= C_ETA_MAX):
            raise ConfigError(
                f"c_eta={self.c_eta} violates the step-size bound 0 < c_eta <= {C_ETA_MAX}")
        if self.T_max < 1:
            raise ConfigError(f"T_max must be >= 1, got {self.T_max}")
        if self.tol < 0:
            raise ConfigError(f"tol must be >= 0, got {self.tol}")
        if self.sigma_max_policy not in ("from_init", "oracle"):
            raise ConfigError(f"unknown sigma_max_policy {self.sigma_max_policy!r}")
        if self.sample_split and self.split_groups < 2:
            raise ConfigError("sample splitting needs at least 2 groups")
        if self.inner_iters < 1:
            raise ConfigError("inner_iters must be >= 1")
        if self.power_iters is not None and self.power_iters < 1:
            raise ConfigError("power_iters must be >= 1")

    def step_constant(self, kind: str) -> float:
        return DEFAULT_C_ETA[kind] if self.c_eta is None else self.c_eta

    @classmethod
    def from_dict(cls, d: dict) -> "SolverConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown solver options: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TraceRecord:
    iter: int
    se2: float = math.nan
    sef: float = math.nan
    max_col_err: float = math.nan
    objective: float = math.nan
    flops: int = 0
    seconds: float = 0.0
    rel_fro: float = math.nan
    flagged: int = 0


@dataclass
class RunTrace:
    records: list = field(default_factory=list)
    init: dict = field(default_factory=dict)

    def append(self, rec: TraceRecord):
        if self.records and rec.flops < self.records[-1].flops:
            raise ValueError("flop counts must be cumulative")
        self.records.append(rec)

    @property
    def iterations(self) -> int:
        return sum(1 for r in self.records if r.iter > 0)

    @property
    def final(self) -> TraceRecord:
        return self.records[-1]

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records], dtype=float)

    def to_csv(self, path=None, wall_time: bool = False) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TRACE_HEADER)
        for r in self.records:
            w.writerow([r.iter, repr(r.se2), repr(r.sef), repr(r.max_col_err), repr(r.objective),
                        r.flops, repr(r.seconds if wall_time else 0.0)])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text, encoding="utf-8", newline="")
        return text


def read_trace_csv(path) -> list:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if rows and list(rows[0].keys()) != TRACE_HEADER:
        raise ValueError(f"{path}: unexpected trace header {list(rows[0].keys())}")
    return [{k: (int(v) if k in ("iter", "flops") else float(v)) for k, v in row.items()} for row in rows]


@dataclass
class FactorEstimate:
    U: np.ndarray
    B: np.ndarray | None

    @property
    def X(self) -> np.ndarray:
        return self.U @ self.B

    def save(self, directory, meta: dict | None = None):
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        matio.write_matrix(d / "U.altm", self.U)
        if self.B is not None:
            matio.write_matrix(d / "B.altm", self.B)
        info = {"n": self.U.shape[0], "r": self.U.shape[1],
                "q": None if self.B is None else self.B.shape[1], **(meta or {})}
        (d / "estimate.json").write_text(json.dumps(info, indent=2, sort_keys=True) + "\n")
