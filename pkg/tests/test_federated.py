import numpy as np
import pytest

from altgdmin import (BadGamma, SolverConfig, altgdmin_lrcs, altgdmin_lrmc, generate_ground_truth, lrcs_measure,
                      lrmc_sample, lrpr_measure)
from altgdmin.federated import (LoggingChannel, MessageLog, federated_altgdmin_round, federated_power_init,
                                federated_start, partition_columns, privacy_scan, run_federated)
from altgdmin.solvers.driver import Driver
from altgdmin.solvers.kernels import make_kernel


def fixture(kind, seed=0):
    if kind == "lrcs":
        gt = generate_ground_truth(30, 40, 2, 1.2, seed=seed)
        return gt, lrcs_measure(gt, 25, seed=seed + 1)
    if kind == "lrpr":
        gt = generate_ground_truth(20, 30, 2, 1.0, seed=seed)
        return gt, lrpr_measure(gt, 60, seed=seed + 1)
    gt = generate_ground_truth(40, 36, 2, 1.2, seed=seed)
    return gt, lrmc_sample(gt, 0.5, seed=seed + 1)


def centralized_iterates(data, r, config, T):
    drv = Driver(data, [make_kernel(data, r)], r, config)
    Us = [drv.start()]
    for t in range(1, T + 1):
        Us.append(drv.step(Us[-1], t))
    return Us


def test_partition_examples():
    assert partition_columns(6, 3).partition == [[0, 1], [2, 3], [4, 5]]
    assert [len(s) for s in partition_columns(7, 3).partition] == [3, 2, 2]
    assert partition_columns(7, 3, "strided").partition == [[0, 3, 6], [1, 4], [2, 5]]
    assert partition_columns(5, 1).partition == [[0, 1, 2, 3, 4]]
    for bad in (0, 8, 2.5):
        with pytest.raises(BadGamma):
            partition_columns(7, bad)


@pytest.mark.parametrize("kind", ["lrcs", "lrpr", "lrmc"])
@pytest.mark.parametrize("gamma", [1, 2, 5])
def test_round_by_round_bit_identity(kind, gamma):
    gt, data = fixture(kind)
    cfg = SolverConfig(T_max=15)
    ref = centralized_iterates(data, 2, cfg, 15)
    state = federated_start(data, 2, partition_columns(data.q, gamma), cfg)
    assert np.array_equal(state.U, ref[0])
    for t in range(1, 16):
        state, recs = federated_altgdmin_round(state)
        assert np.array_equal(state.U, ref[t])
        ups = [m for m in recs if m.direction == "up"]
        downs = [m for m in recs if m.direction == "down"]
        assert len(ups) == gamma and len(downs) == gamma
        assert all(m.elements == data.n * 2 for m in recs)
        assert {m.kind for m in ups} == {"partial-gradient"}


@pytest.mark.parametrize("kind", ["lrcs", "lrmc"])
def test_full_run_matches_centralized_trace(kind):
    gt, data = fixture(kind, seed=3)
    cfg = SolverConfig(T_max=60)
    solver = {"lrcs": altgdmin_lrcs, "lrmc": altgdmin_lrmc}[kind]
    est_c, tr_c = solver(data, 2, cfg, oracle=gt)
    for topo in (partition_columns(data.q, 4, "strided"), partition_columns(data.q, data.q)):
        est_f, tr_f, log = run_federated(data, 2, cfg, topo, oracle=gt, test_mode=True)
        assert np.array_equal(est_f.U, est_c.U)
        assert np.array_equal(est_f.B, est_c.B)
        assert tr_f.to_csv() == tr_c.to_csv()


def test_estimate_B_only_in_test_mode():
    gt, data = fixture("lrcs")
    est, _, _ = run_federated(data, 2, SolverConfig(T_max=3), partition_columns(data.q, 2))
    assert est.B is None


def test_power_init_log_and_equality():
    gt, data = fixture("lrcs")
    U1, log1 = federated_power_init(data, 2, partition_columns(data.q, 1))
    U4, log4 = federated_power_init(data, 2, partition_columns(data.q, 4))
    assert np.array_equal(U1, U4)
    P = len(log1.select(kind="power-iterate", direction="up"))
    assert P >= 1
    assert len(log1.select(kind="power-iterate", direction="down")) == P - 1
    for node in range(4):
        ups = log4.select(kind="power-iterate", direction="up", node=node)
        assert len(ups) == P and all(m.elements == data.n * 2 for m in ups)


def test_communication_totals():
    gt, data = fixture("lrcs")
    n, r = data.n, 2
    _, trace, log = run_federated(data, r, SolverConfig(T_max=25), partition_columns(data.q, 2), oracle=gt)
    T = trace.iterations
    P = trace.init["power_iters"]
    for node in (0, 1):
        assert log.elements(direction="up", node=node) == n * r * (P + T) + 2
        assert log.total_bytes(direction="up", node=node) == 8 * n * r * (P + T) + 16
    assert len(log) == (P + T) * 2 * 2 + 2
    assert log.to_csv().splitlines()[0] == "round,direction,node,kind,elements,bytes"
    assert privacy_scan(log, n, r)


def test_doubling_gamma_doubles_center_ingress():
    gt, data = fixture("lrmc")
    cfg = SolverConfig(T_max=10, tol=0.0)
    _, _, log2 = run_federated(data, 2, cfg, partition_columns(data.q, 2))
    _, _, log4 = run_federated(data, 2, cfg, partition_columns(data.q, 4))
    rnd = max(m.round for m in log2)
    per_node = [m.elements for m in log4 if m.round == rnd and m.direction == "up"]
    assert per_node == [data.n * 2] * 4
    grad2 = log2.elements(direction="up", kind="partial-gradient")
    grad4 = log4.elements(direction="up", kind="partial-gradient")
    assert grad4 == 2 * grad2


def test_channel_refuses_data_shaped_payloads():
    ch = LoggingChannel(10, 2)
    with pytest.raises(ValueError):
        ch.up(1, 0, "partial-gradient", np.zeros((2, 7)))  # a B shard
    with pytest.raises(ValueError):
        ch.up(0, 0, "scalar-stat", np.zeros(5))
    with pytest.raises(ValueError):
        ch.up(1, 0, "raw-measurements", np.zeros((10, 2)))
    ch.up(1, 0, "partial-gradient", np.zeros((10, 2)))
    assert privacy_scan(ch.log, 10, 2)
    log = MessageLog()
    assert privacy_scan(log, 10, 2)


def test_node_threads_do_not_change_results():
    gt, data = fixture("lrpr")
    cfg = SolverConfig(T_max=20)
    topo = partition_columns(data.q, 5)
    a = run_federated(data, 2, cfg, topo, oracle=gt, threads=1)
    b = run_federated(data, 2, cfg, topo, oracle=gt, threads=4)
    assert np.array_equal(a[0].U, b[0].U)
    assert a[2].to_csv() == b[2].to_csv()


def test_topology_must_cover_data():
    gt, data = fixture("lrcs")
    with pytest.raises(BadGamma):
        run_federated(data, 2, SolverConfig(T_max=2), partition_columns(data.q - 1, 2))
