"""End-to-end acceptance: ten criteria, each reported as one PASS/FAIL line.

Every test measures first, records its one-line summary with the measured
numbers, then asserts the stated tolerances, so a red run still shows what
was observed.
"""

import json
import time
from importlib import resources

import numpy as np
import pytest

from ntpsim.cli import main as cli_main
from ntpsim.failure import (
    DEFAULT_RATE_PER_GPU_DAY,
    Cluster,
    FailureModelConfig,
    generate_trace,
)
from ntpsim.perfmodel import TABLE_ROWS, IterTimeModel, min_boost_power, perf_factor
from ntpsim.policy import (
    DP_DROP,
    NTP,
    NTP_PW,
    POLICIES,
    ParallelConfig,
    deep_table,
    spares_needed,
)
from ntpsim.shardmap import (
    POST_SYNC,
    PRE_SYNC,
    apply_plan,
    build_reshard_plan,
    build_shard_map,
)
from ntpsim.simulator import (
    SimConfig,
    blast_radius_sweep,
    failed_fraction_sweep,
    monte_carlo_availability,
    trace_stats,
)
from ntpsim.tpnumerics import (
    MlpLayer,
    MlpReplica,
    assignment_from_comp,
    assignment_from_sync,
    mlp_backward,
    mlp_backward_tp,
    mlp_forward_dense,
    nonuniform_grad_sync,
)

FLAGSHIP = ParallelConfig(tp=32, pp=8, dp=128, domain_size=32, local_batch=8, seq_len=16384)
FLEET = Cluster(total_gpus=32768, domain_size=32)
FAILURE = FailureModelConfig(rate_per_gpu_day=DEFAULT_RATE_PER_GPU_DAY)


def _rel(got, want):
    denom = np.linalg.norm(want)
    return float(np.linalg.norm(got - want) / (denom if denom else 1.0))


@pytest.mark.acceptance
def test_criterion_01_gradient_sync_equivalence(criterion):
    rng = np.random.default_rng(0)
    start = time.time()
    worst = 0.0
    for _ in range(100):
        n1 = int(rng.integers(2, 17))
        n2 = int(rng.integers(1, n1 + 1))
        k = int(rng.integers(n1, 513))
        hidden = int(rng.integers(2, 7))
        layer = MlpLayer.random(hidden, k, seed=int(rng.integers(2**31)))
        smap = build_shard_map(k, n1, n2)
        healthy = MlpReplica(layer, assignment_from_comp(smap))
        reduced = MlpReplica(layer, assignment_from_sync(smap))
        x1, x2 = rng.standard_normal((2, 4, hidden))
        g1, g2 = rng.standard_normal((2, 4, hidden))
        mlp_backward_tp(x1, healthy, g1)
        mlp_backward_tp(x2, reduced, g2)
        nonuniform_grad_sync(healthy, reduced, smap)
        da1, db1 = mlp_backward(x1, layer, g1)
        da2, db2 = mlp_backward(x2, layer, g2)
        for rep in (healthy, reduced):
            da, db = rep.dense_grads()
            worst = max(worst, _rel(da, da1 + da2), _rel(db, db1 + db2))
    elapsed = time.time() - start
    criterion(
        f"100 nonuniform syncs equal dense sums, worst rel err {worst:.2e} "
        f"(limit 1e-12), {elapsed:.1f} s (limit 30 s)"
    )
    assert worst <= 1e-12
    assert elapsed < 30.0


@pytest.mark.acceptance
def test_criterion_02_shard_map_invariants(criterion):
    rng = np.random.default_rng(0)
    bad = 0
    for _ in range(1000):
        n1 = int(rng.integers(1, 17))
        n2 = int(rng.integers(1, n1 + 1))
        k = int(rng.integers(n1, 513))
        smap = build_shard_map(k, n1, n2)
        comp = np.concatenate([smap.comp_columns(r) for r in range(n1)])
        sync = np.concatenate([smap.sync_columns(r) for r in range(n2)])
        ok = np.array_equal(np.sort(comp), np.arange(k))
        ok &= np.array_equal(np.sort(sync), np.arange(k))
        ok &= smap.comp_counts().max() - smap.comp_counts().min() <= 1
        ok &= smap.sync_counts().max() - smap.sync_counts().min() <= 1
        ok &= all(
            len(c) == 0 or np.array_equal(c, np.arange(c[0], c[0] + len(c)))
            for c in (smap.sync_columns(r) for r in range(n2))
        )
        pre = build_reshard_plan(smap, PRE_SYNC)
        post = build_reshard_plan(smap, POST_SYNC)
        ok &= np.array_equal(apply_plan(smap.comp_rank, pre), smap.sync_rank)
        ok &= np.array_equal(apply_plan(smap.sync_rank, post), smap.comp_rank)
        bad += not ok
    anchor = build_reshard_plan(build_shard_map(12000, 32, 30), POST_SYNC)
    stats = (anchor.total_cols_moved, anchor.max_cols_sent, anchor.max_cols_received)
    criterion(
        f"1000 random triples, {bad} violations; anchor plan {stats} "
        "(want (750, 25, 375))"
    )
    assert bad == 0
    assert stats == (750, 25, 375)


@pytest.mark.acceptance
def test_criterion_03_availability_vs_tp_width(criterion):
    pts = monte_carlo_availability(32768, (8, 16, 32, 64), (0.001,), samples=200, seed=0)
    lost = {p.tp: p.median_lost for p in pts}
    avail64 = 1.0 - lost[64]
    monotone = lost[8] <= lost[16] <= lost[32] <= lost[64]
    criterion(
        f"tp=64 median availability {avail64:.4f} (want 0.9375 +/- 0.005), "
        f"median loss monotone in tp: {monotone}"
    )
    assert abs(avail64 - 0.9375) <= 0.005
    assert monotone


@pytest.mark.acceptance
def test_criterion_04_failure_trace_calibration(criterion):
    rows = trace_stats(
        FLEET,
        FAILURE,
        arms=((1.0, 5.0), (3.0, 3.0)),
        duration_days=15.0,
        seeds=range(20),
        threshold_fraction=0.001,
    )
    occ = rows[0].mean_occupancy
    ratio = rows[1].mean_peak_failed / rows[0].mean_peak_failed
    criterion(
        f"busy occupancy {occ:.4f} (want 0.81 +/- 0.05); "
        f"3x-rate peak ratio {ratio:.2f} (want 2.0 +/- 25%)"
    )
    assert abs(occ - 0.81) <= 0.05
    assert 1.5 <= ratio <= 2.5


@pytest.mark.acceptance
def test_criterion_05_loss_vs_failed_fraction(criterion):
    fractions = tuple(np.linspace(0.0, 0.004, 9))
    start = time.time()
    pts = failed_fraction_sweep(FLAGSHIP, fractions, samples=200, seed=0)
    elapsed = time.time() - start
    by = {(p.policy, p.failed_fraction): p.mean_loss for p in pts}
    top = fractions[-1]
    drop, ntp, pw = by[(DP_DROP, top)], by[(NTP, top)], by[(NTP_PW, top)]
    dominance = all(
        by[(NTP_PW, f)] <= by[(NTP, f)] + 1e-12
        and by[(NTP, f)] <= by[(DP_DROP, f)] + 1e-12
        for f in fractions
    )
    criterion(
        f"at 0.4% failed: dp-drop {drop:.4f} (want 0.10..0.14), ntp {ntp:.4f} "
        f"(<= 0.04), ntp-pw {pw:.4f} (<= 0.01); pointwise dominance {dominance}; "
        f"{elapsed:.0f} s (limit 300 s)"
    )
    assert 0.10 <= drop <= 0.14
    assert ntp <= 0.04
    assert pw <= 0.01
    assert dominance
    assert elapsed < 300.0


@pytest.mark.acceptance
def test_criterion_06_spare_capacity_demand(criterion):
    needs = {policy: [] for policy in POLICIES}
    for seed in range(20):
        trace = generate_trace(FLEET, FAILURE, 45.0, seed)
        for policy in POLICIES:
            needs[policy].append(spares_needed(trace, FLAGSHIP, policy))
    ntp_worst = max(needs[NTP])
    pw_worst = max(needs[NTP_PW])
    drop_mean = float(np.mean(needs[DP_DROP]))
    criterion(
        f"45-day peak spare domains over 20 seeds: ntp max {ntp_worst} (<= 16), "
        f"ntp-pw max {pw_worst} (== 0), dp-drop mean {drop_mean:.1f} (want 72..108)"
    )
    assert ntp_worst <= 16
    assert pw_worst == 0
    assert 72.0 <= drop_mean <= 108.0


@pytest.mark.acceptance
def test_criterion_07_reduced_tp_performance_table(criterion):
    model = IterTimeModel()
    worst = max(
        abs(model.rel_iter_time(tp, lb, power) - want)
        for tp, lb, power, want in TABLE_ROWS
    )
    boosts = (min_boost_power(32, 30), min_boost_power(32, 28), min_boost_power(32, 24))
    pf_ok = perf_factor(1.1) == 1.1 * 0.972 and perf_factor(1.2) == 1.2 * 0.935
    criterion(
        f"{len(TABLE_ROWS)} operating points, worst residual {worst:.4f} (<= 0.01); "
        f"min boost {boosts} (want (1.15, 1.3, None)); exact power anchors {pf_ok}"
    )
    assert worst <= 0.01
    assert boosts == (1.15, 1.3, None)
    assert pf_ok


@pytest.mark.acceptance
def test_criterion_08_blast_radius_response(criterion):
    cfg = SimConfig(
        cluster=FLEET,
        parallel=FLAGSHIP,
        failure=FAILURE,
        policy=NTP,
        duration_days=15.0,
        seed=0,
        table=deep_table(),
    )
    radii = (1, 2, 4, 8, 16, 32)
    pts = blast_radius_sweep(cfg, radii)
    by = {(p.policy, p.blast_radius): p.mean_loss for p in pts}
    drop_flat = len({round(by[(DP_DROP, r)], 15) for r in radii}) == 1
    ntp_series = [by[(NTP, r)] for r in radii]
    pw_series = [by[(NTP_PW, r)] for r in radii]
    nondecreasing = all(
        a <= b + 1e-12 for s in (ntp_series, pw_series) for a, b in zip(s, s[1:])
    )
    strict = all(
        by[(pol, r)] < by[(DP_DROP, r)] for pol in (NTP, NTP_PW) for r in radii if r <= 16
    )
    criterion(
        f"dp-drop flat across radii: {drop_flat}; ntp/ntp-pw non-decreasing: "
        f"{nondecreasing}; both strictly below dp-drop through radius 16: {strict} "
        f"(ntp at 16: {by[(NTP, 16)]:.4f} vs dp-drop {by[(DP_DROP, 16)]:.4f})"
    )
    assert drop_flat
    assert nondecreasing
    assert strict


@pytest.mark.acceptance
def test_criterion_09_gradient_finite_difference(criterion):
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(50):
        hidden = int(rng.integers(2, 6))
        ffn = int(rng.integers(3, 11))
        layer = MlpLayer.random(hidden, ffn, seed=int(rng.integers(2**31)))
        x = rng.standard_normal((3, hidden))
        g = rng.standard_normal((3, hidden))
        da, db = mlp_backward(x, layer, g)
        h = 1e-6
        fd_a = np.zeros_like(layer.A)
        for r in range(hidden):
            for c in range(ffn):
                bump = np.zeros_like(layer.A)
                bump[r, c] = h
                up = np.sum(mlp_forward_dense(x, MlpLayer(layer.A + bump, layer.B)) * g)
                dn = np.sum(mlp_forward_dense(x, MlpLayer(layer.A - bump, layer.B)) * g)
                fd_a[r, c] = (up - dn) / (2 * h)
        fd_b = np.zeros_like(layer.B)
        for r in range(ffn):
            for c in range(hidden):
                bump = np.zeros_like(layer.B)
                bump[r, c] = h
                up = np.sum(mlp_forward_dense(x, MlpLayer(layer.A, layer.B + bump)) * g)
                dn = np.sum(mlp_forward_dense(x, MlpLayer(layer.A, layer.B - bump)) * g)
                fd_b[r, c] = (up - dn) / (2 * h)
        worst = max(worst, _rel(fd_a, da), _rel(fd_b, db))
    criterion(f"50 instances, worst finite-difference rel err {worst:.2e} (limit 1e-6)")
    assert worst <= 1e-6


@pytest.mark.acceptance
def test_criterion_10_output_determinism(criterion, tmp_path):
    scenario = str(resources.files("ntpsim").joinpath("configs/timeline_example.json"))
    outputs = []
    for sub in ("first", "second"):
        outdir = tmp_path / sub
        assert cli_main(["simulate", "--scenario", scenario, "--out", str(outdir)]) == 0
        outputs.append(
            (
                (outdir / "timeline.csv").read_bytes(),
                (outdir / "summary.json").read_bytes(),
            )
        )
    identical = outputs[0] == outputs[1]
    rows = outputs[0][0].count(b"\n") - 1
    criterion(
        f"repeated scenario run: timeline csv ({rows} rows) and summary "
        f"byte-identical: {identical}"
    )
    assert identical
    summary = json.loads(outputs[0][1])
    assert summary["seed"] == 0
