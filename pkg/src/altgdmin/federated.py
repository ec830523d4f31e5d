"""In-process simulation of vertically federated AltGDmin.

Nodes own disjoint column shards. Per round, the center broadcasts the
current basis, every node solves for its own B columns and uploads one n x r
partial gradient, and the center sums the partials, takes the gradient step
and orthonormalizes. Partials travel as exact fixed-point integers, so the
center's sum, and hence every iterate, matches the centralized solver bit
for bit.
"""
import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import BadGamma
from .solvers.config import FactorEstimate, SolverConfig
from .solvers.driver import Driver, Executor
from .solvers.kernels import make_kernel

BYTES_PER_ELEMENT = 8
PAYLOAD_KINDS = ("partial-gradient", "basis-broadcast", "power-iterate", "scalar-stat")
MESSAGE_HEADER = ["round", "direction", "node", "kind", "elements", "bytes"]


@dataclass
class FederationTopology:
    gamma: int
    partition: list
    policy: str = "contiguous"

    def __post_init__(self):
        seen = np.concatenate([np.asarray(s, dtype=np.int64) for s in self.partition]) if self.partition else []
        if len(self.partition) != self.gamma:
            raise BadGamma(f"{len(self.partition)} shards for gamma={self.gamma}")
        if len(seen) != len(set(seen.tolist())):
            raise BadGamma("column shards overlap")

    @property
    def q(self) -> int:
        return sum(len(s) for s in self.partition)

    def node_of(self, k: int) -> int:
        for i, s in enumerate(self.partition):
            if k in s:
                return i
        raise KeyError(k)


def partition_columns(q: int, gamma: int, policy: str = "contiguous") -> FederationTopology:
    """Split columns 0..q-1 over ``gamma`` nodes; the first q mod gamma nodes get one extra."""
    if not isinstance(gamma, (int, np.integer)) or not 1 <= gamma <= q:
        raise BadGamma(f"gamma must be an integer in [1, {q}], got {gamma!r}")
    base, extra = divmod(q, gamma)
    sizes = [base + (1 if i < extra else 0) for i in range(gamma)]
    if policy == "contiguous":
        bounds = np.concatenate([[0], np.cumsum(sizes)])
        parts = [list(range(int(a), int(b))) for a, b in zip(bounds[:-1], bounds[1:])]
    elif policy == "strided":
        parts = [list(range(i, q, gamma)) for i in range(gamma)]
    else:
        raise ValueError(f"unknown partition policy {policy!r}")
    return FederationTopology(int(gamma), parts, policy)


@dataclass(frozen=True)
class Message:
    round: int
    direction: str
    node: int
    kind: str
    elements: int

    @property
    def bytes(self) -> int:
        return BYTES_PER_ELEMENT * self.elements


@dataclass
class MessageLog:
    records: list = field(default_factory=list)

    def append(self, msg: Message):
        if msg.kind not in PAYLOAD_KINDS:
            raise ValueError(f"payload kind {msg.kind!r} is not whitelisted")
        if msg.direction not in ("up", "down"):
            raise ValueError(f"bad direction {msg.direction!r}")
        self.records.append(msg)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def select(self, direction=None, node=None, kind=None):
        return [m for m in self.records
                if (direction is None or m.direction == direction)
                and (node is None or m.node == node)
                and (kind is None or m.kind == kind)]

    def elements(self, **kw) -> int:
        return sum(m.elements for m in self.select(**kw))

    def total_bytes(self, **kw) -> int:
        return sum(m.bytes for m in self.select(**kw))

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(MESSAGE_HEADER)
        for m in self.records:
            w.writerow([m.round, m.direction, m.node, m.kind, m.elements, m.bytes])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text, encoding="utf-8", newline="")
        return text


class LoggingChannel:
    """Records every transmission and checks payloads against the whitelist.

    Matrix payloads must be n x r (basis, power iterate or partial sum);
    scalar-stat payloads carry at most two numbers. Anything shaped like raw
    measurements or a block of B is refused.
    """

    def __init__(self, n: int, r: int, log: MessageLog | None = None):
        self.n, self.r = n, r
        self.log = log if log is not None else MessageLog()

    def _check(self, kind, payload):
        a = np.asarray(payload)
        if kind == "scalar-stat":
            if a.ndim != 1 or a.size > 2:
                raise ValueError(f"scalar-stat payload has shape {a.shape}")
        elif a.shape != (self.n, self.r):
            raise ValueError(f"{kind} payload has shape {a.shape}, expected {(self.n, self.r)}")
        return int(a.size)

    def up(self, rnd, node, kind, payload):
        self.log.append(Message(rnd, "up", node, kind, self._check(kind, payload)))

    def down(self, rnd, node, kind, payload):
        self.log.append(Message(rnd, "down", node, kind, self._check(kind, payload)))


@dataclass
class NodeState:
    """A node's private view: its column ids and the kernel holding its data and B shard."""
    node: int
    columns: np.ndarray
    kernel: object

    @property
    def B(self) -> np.ndarray:
        return self.kernel.B.T


def make_nodes(data, r: int, topology: FederationTopology, config: SolverConfig):
    groups = config.split_groups if config.sample_split else None
    nodes = []
    for i, cols in enumerate(topology.partition):
        cols = np.asarray(cols, dtype=np.int64)
        nodes.append(NodeState(i, cols, make_kernel(data.subset(cols), r, groups)))
    return nodes


def _driver(data, r, config, topology, oracle, threads, log):
    nodes = make_nodes(data, r, topology, config)
    channel = LoggingChannel(data.n, r, log)
    drv = Driver(data, [nd.kernel for nd in nodes], r, config, oracle, channel, Executor(threads))
    return drv, nodes, channel


def federated_power_init(data, r: int, topology: FederationTopology, config: SolverConfig | None = None,
                         threads: int = 1):
    """Federated spectral initialization. Returns ``(U0, MessageLog)``."""
    config = config or SolverConfig()
    drv, _, channel = _driver(data, r, config, topology, None, threads, None)
    try:
        init = drv.initialize()
    finally:
        drv.exec.close()
    return init.U0, channel.log


@dataclass
class FederatedState:
    driver: Driver
    U: np.ndarray
    t: int = 0

    @property
    def log(self) -> MessageLog:
        return self.driver.channel.log


def federated_start(data, r: int, topology: FederationTopology, config: SolverConfig | None = None,
                    oracle=None, threads: int = 1) -> FederatedState:
    """Run the federated initialization and return the state before round 1."""
    drv, _, _ = _driver(data, r, config or SolverConfig(), topology, oracle, threads, None)
    return FederatedState(drv, drv.start())


def federated_altgdmin_round(state: FederatedState):
    """One round on an initialized state. Returns ``(new state, log records of the round)``."""
    first = len(state.log)
    t = state.t + 1
    U = state.driver.step(state.U, t)
    state.driver.rounds = t
    return FederatedState(state.driver, U, t), state.log.records[first:]


def run_federated(data, r: int, config: SolverConfig | None = None, topology: FederationTopology | None = None,
                  oracle=None, threads: int = 1, test_mode: bool = False):
    """Full federated run. Returns ``(FactorEstimate, RunTrace, MessageLog)``.

    The trace comes from an observer with oracle access, as in the centralized
    solver. B is only gathered from the nodes when ``test_mode`` is set.
    """
    config = config or SolverConfig()
    topology = topology or partition_columns(data.q, 1)
    if topology.q != data.q:
        raise BadGamma(f"topology covers {topology.q} columns, data has {data.q}")
    drv, _, channel = _driver(data, r, config, topology, oracle, threads, None)
    try:
        U = drv.run()
    finally:
        drv.exec.close()
    B = drv.assemble_B() if test_mode else None
    return FactorEstimate(U, B), drv.trace, channel.log


def privacy_scan(log: MessageLog, n: int, r: int) -> bool:
    """True when every logged payload is a whitelisted kind of the allowed size."""
    for m in log:
        if m.kind not in PAYLOAD_KINDS:
            return False
        if m.kind == "scalar-stat":
            if m.elements > 2:
                return False
        elif m.elements != n * r:
            return False
    return True
