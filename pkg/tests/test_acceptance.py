"""Acceptance criteria 1-9; each test prints one PASS/FAIL line.

Trend thresholds (criteria 5 and 6) were checked against the committed
calibration run in results/calibration.csv (seeds 0, 1, 2).
"""

import math
import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from hfcl import accounting as acc
from hfcl import channel, nn
from hfcl.accounting import LinkSpec
from hfcl.channel import ChannelConfig
from hfcl.data import IdxConsistencyError, IdxFormatError, Shard, load_idx, one_hot, partition_iid
from hfcl.experiment import ExperimentConfig, run_experiment
from hfcl.federation import ClientRoster, ConfigurationError, run_hfcl, run_hfcl_sdt

from oracles import central_differences, fd_relative_error
from test_data import MNIST_CLASS_COUNTS, find_mnist, fixture_bytes

SEEDS = (0, 1, 2)
DESK = ExperimentConfig(bits=5, snr_db=20.0, rounds=50, clients=10)


@pytest.fixture
def report(capsys):
    start = time.time()

    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\n[criterion {n}] {'PASS' if ok else 'FAIL'} ({time.time() - start:.1f}s): {detail}")
        assert ok, detail

    return emit


def mean_acc(**kw):
    return float(np.mean([run_experiment(DESK.replace(seed=s, **kw)).final_accuracy for s in SEEDS]))


def body(res):
    return res.text().split("\n#")[0]


def test_criterion_1_degenerate_equivalence(report):
    K = DESK.clients
    checks = []
    for s in SEEDS:
        a = run_experiment(DESK.replace(mode="hfcl", passive=0, seed=s))
        b = run_experiment(DESK.replace(mode="fl", passive=0, seed=s))
        checks.append(body(a) == body(b) and np.array_equal(a.theta, b.theta))
        c = run_experiment(DESK.replace(mode="hfcl", passive=K, noise=False, seed=s))
        d = run_experiment(DESK.replace(mode="cl", noise=False, seed=s))
        checks.append(body(c) == body(d) and np.array_equal(c.theta, d.theta))
    report(1, all(checks), f"hfcl L=0 == fl and hfcl L=K == cl bit for bit over seeds {SEEDS}: {checks}")


def test_criterion_2_overhead_arithmetic(report):
    P, K, T = 4352, 10, 98
    d_bar = 60000 * 28 * 28
    assert d_bar == 47_040_000
    cl = acc.to_blocks(acc.overhead_cl(d_bar))
    fl = acc.to_blocks(acc.overhead_fl(T, P, K))
    hfcl = [acc.overhead_hfcl(T, P, K, L, d_bar // K) for L in (0, 1, 3, 5, 7, 10)]
    ok = (
        cl == 47_040
        and abs(cl / 47e3 - 1) < 0.01
        and round(fl) == 8_530
        and abs(fl / 8.5e3 - 1) < 0.01
        and hfcl == sorted(hfcl)
        and hfcl[0] == acc.overhead_fl(T, P, K)
        and hfcl[-1] == acc.overhead_cl(d_bar)
    )
    blocks = [round(acc.to_blocks(v), 2) for v in hfcl]
    report(2, ok, f"T_CL={cl} blocks, T_FL={fl} blocks, T_HFCL(L=0,1,3,5,7,10)={blocks}")


def test_criterion_3_gradient_fd(report):
    spec = nn.desk_mlp_spec()
    worst = 0.0
    for seed in SEEDS:
        rng = np.random.default_rng(seed)
        params = nn.init_params(spec, rng)
        x = rng.uniform(0, 1, (8, 14, 14))
        y = one_hot(rng.integers(0, 10, 8))
        analytic = nn.backward(params, x, y).g
        numeric = central_differences(lambda th: nn.batch_loss(nn.ModelParams(th, spec), x, y), params.theta)
        worst = max(worst, float(fd_relative_error(analytic, numeric).max()))
    report(3, worst < 1e-4, f"desk MLP P={spec.P}, all coordinates, seeds {SEEDS}: max relative error {worst:.2e}")


def test_criterion_4_sdt_schedule(report, monkeypatch):
    spec = nn.mlp_spec([6, 1, 10])  # P = 27, so a 60-sample shard takes N = 3 rounds
    P = spec.P
    rng = np.random.default_rng(0)
    pool = Shard(-1, rng.uniform(size=(240, 2, 3)), one_hot(rng.integers(0, 10, 240)))
    shards = partition_iid(pool, 4, 0)
    D = len(shards[0])
    cfg = nn.TrainingConfig(eta=0.1, rounds=5, seed=1)
    chan = ChannelConfig(bits=5, snr_db=20.0)

    seen = []
    real = nn.minibatch_gradient
    monkeypatch.setattr(nn, "minibatch_gradient", lambda p, x, *a, **k: seen.append(len(x)) or real(p, x, *a, **k))
    run_hfcl_sdt(ClientRoster(shards, 4), spec, cfg, chan)
    monkeypatch.undo()
    windows = [seen[i * 4 : (i + 1) * 4] for i in range(cfg.rounds)]
    expected = [[min(t * P, D)] * 4 for t in range(1, cfg.rounds + 1)]

    totals = [
        (run_hfcl_sdt(ClientRoster(shards, L), spec, cfg, chan).total_symbols,
         run_hfcl(ClientRoster(shards, L), spec, cfg, chan).total_symbols)
        for L in range(5)
    ]
    ok = windows == expected and all(a == b for a, b in totals)
    report(4, ok, f"P={P}, D_k={D}: windows per round {[w[0] for w in windows]}; T_SDT == T_HFCL for L=0..4: {totals}")


def test_criterion_5_trends(report):
    fl = mean_acc(mode="fl", passive=0)
    hfcl = mean_acc(mode="hfcl", passive=5)
    sdt = mean_acc(mode="hfcl-sdt", passive=5)
    b1 = mean_acc(mode="fl", passive=0, bits=1)
    b8 = mean_acc(mode="fl", passive=0, bits=8)
    snr0 = mean_acc(mode="fl", passive=0, snr_db=0.0)
    parts = {
        "a": (hfcl > fl and sdt > fl, f"hfcl {hfcl:.2f}, sdt {sdt:.2f} vs fl {fl:.2f}"),
        "b": (sdt >= hfcl, f"sdt {sdt:.2f} >= hfcl {hfcl:.2f}"),
        "c": (b8 - b1 >= 5.0, f"B=8 {b8:.2f} minus B=1 {b1:.2f} = {b8 - b1:+.2f} (need >= +5)"),
        "d": (fl > snr0, f"20 dB {fl:.2f} vs 0 dB {snr0:.2f}"),
    }
    detail = "; ".join(f"({k}) {'PASS' if ok else 'FAIL'} {d}" for k, (ok, d) in parts.items())
    report(5, all(ok for ok, _ in parts.values()), detail)


def test_criterion_6_active_only(report):
    hfcl = mean_acc(mode="hfcl", passive=7)
    active = mean_acc(mode="fl-active-only", passive=7)
    try:
        ExperimentConfig(mode="fl-active-only", clients=10, passive=10)
        rejected = False
    except ConfigurationError:
        rejected = True
    ok = hfcl - active >= 5.0 and rejected
    report(6, ok, f"L=7: hfcl {hfcl:.2f} vs fl-active-only {active:.2f} (gap {hfcl - active:.2f}); L=K rejected: {rejected}")


def test_criterion_7_allocator(report):
    rng = np.random.default_rng(7)
    worst_spread, beaten = 0.0, 0
    for _ in range(100):
        n = int(rng.integers(2, 12))
        links = [LinkSpec(k, int(rng.integers(1, 10**6)), float(rng.uniform(0.1, 100.0))) for k in range(n)]
        total = float(rng.uniform(1e3, 1e7))
        best = acc.allocate_bandwidth(links, total)
        delays = [acc.delay(l) for l in best]
        worst_spread = max(worst_spread, max(delays) / min(delays) - 1)
        # 1000 random feasible splits of the same budget
        shares = rng.dirichlet(np.ones(n), size=1000) * total
        need = np.array([l.symbols / math.log1p(l.snr) for l in links])
        random_max = (need / shares).max(axis=1)
        beaten += int(np.all(acc.max_delay(best) <= random_max))
    ok = worst_spread < 1e-9 and beaten == 100
    report(7, ok, f"max relative delay spread {worst_spread:.1e}; optimum beat all 1000 random splits on {beaten}/100 instances")


def test_criterion_8_channel(report):
    g = np.random.default_rng(8).normal(size=100_000)
    ratios = []
    for snr in (0.0, 10.0, 20.0, 30.0):
        w = channel.transmit_gradient(g, ChannelConfig(bits=8, snr_db=snr), np.random.default_rng(int(snr))).g
        w = w - channel.quantize(g, 8).g
        ratios.append(float(w.var() / channel.noise_sigma(g, snr)))
    violations = []

    @given(arrays(np.float64, st.integers(1, 200), elements=st.floats(-1e6, 1e6)), st.integers(1, 32))
    @settings(max_examples=1000, deadline=None, database=None)
    def bound(v, bits):
        s = float(np.max(np.abs(v)))
        err = float(np.max(np.abs(channel.quantize(v, bits).g - v)))
        if err > s / (2**bits - 1) + 4 * np.finfo(float).eps * s:
            violations.append((err, s, bits))

    bound()
    ok = all(abs(r - 1) < 0.05 for r in ratios) and not violations
    report(8, ok, f"variance ratio at 0/10/20/30 dB {[round(r, 4) for r in ratios]}; quantizer bound violations in 1000 cases: {len(violations)}")


def test_criterion_9_idx(report, tmp_path):
    errors = []
    images, labels = fixture_bytes()
    for name, img, lab, exc in [
        ("bad magic", b"\x00\x00\x08\x01" + images[4:], labels, IdxFormatError),
        ("count mismatch", images, b"\x00\x00\x08\x01\x00\x00\x00\x03" + bytes([0, 1, 2]), IdxConsistencyError),
        ("truncated", images[:-1], labels, OSError),
        ("label 12", images, labels[:-1] + bytes([12]), IdxFormatError),
    ]:
        (tmp_path / "i").write_bytes(img)
        (tmp_path / "l").write_bytes(lab)
        try:
            load_idx(tmp_path / "i", tmp_path / "l")
            errors.append(f"{name}: no error")
        except exc:
            pass
    found = {p: find_mnist(p) for p in ("train", "t10k")}
    if None in found.values():
        report(9, False, "real MNIST IDX files not found (run scripts/fetch_mnist.py); corrupted fixtures: "
               + ("ok" if not errors else str(errors)))
    sizes, counts_ok = {}, True
    for prefix, paths in found.items():
        s = load_idx(*paths)
        sizes[prefix] = len(s)
        counts_ok &= np.bincount(s.labels.argmax(axis=1), minlength=10).tolist() == MNIST_CLASS_COUNTS[prefix]
    ok = sizes == {"train": 60000, "t10k": 10000} and counts_ok and not errors
    report(9, ok, f"samples {sizes}, class counts match: {counts_ok}; corrupted fixtures raise: {not errors}")
