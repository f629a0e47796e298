"""Command-line front end: inspection, verification, simulation, calibration.

Subcommands:
  shardmap   print a shard map and its reshard-plan statistics
  verify     run the numerical oracle suites (exit 1 on any violation)
  simulate   execute a JSON scenario file, writing CSV series and a summary
  calibrate  fit model coefficients and write them with provenance tags

Exit codes: 0 success, 1 verification or calibration failure, 2 usage or
scenario-schema error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import replace
from importlib import resources

import numpy as np

from . import __version__
from .failure import (
    DEFAULT_RATE_PER_GPU_DAY,
    Cluster,
    FailureModelConfig,
    calibrate_rate,
    generate_trace,
    occupancy_above,
)
from .perfmodel import TABLE_ROWS, IterTimeModel, calibrate_iter_time_model
from .policy import POLICIES, ParallelConfig, ReducedTpTable, deep_table, default_table
from .shardmap import (
    POST_SYNC,
    PRE_SYNC,
    apply_plan,
    build_reshard_plan,
    build_shard_map,
    naive_contiguous_sync_volumes,
)
from .simulator import (
    MINIBATCH_MODES,
    SimConfig,
    blast_radius_sweep,
    failed_fraction_sweep,
    monte_carlo_availability,
    points_to_csv,
    run,
    spares_sweep,
    trace_stats,
)
from .tpnumerics import (
    MlpLayer,
    MlpReplica,
    AttentionLayer,
    AttentionReplica,
    assignment_from_comp,
    assignment_from_sync,
    attention_forward_dense,
    attention_forward_tp,
    contiguous_assignment,
    mlp_backward,
    mlp_backward_tp,
    mlp_forward_dense,
    nonuniform_grad_sync,
    uniform_grad_sync,
)

OUT_ENV = "NTPSIM_OUT"


class ScenarioError(ValueError):
    """Scenario file violates the schema."""


# ---------------------------------------------------------------------------
# verification suites


def _rel_err(got: np.ndarray, want: np.ndarray) -> float:
    denom = np.linalg.norm(want)
    if denom == 0.0:
        return float(np.linalg.norm(got))
    return float(np.linalg.norm(got - want) / denom)


def _suite_shard_invariants(seed: int) -> dict:
    rng = np.random.default_rng(seed)
    for i in range(1000):
        n1 = int(rng.integers(1, 17))
        n2 = int(rng.integers(1, n1 + 1))
        k = int(rng.integers(n1, 513))
        case = {"instance": i, "k": k, "n1": n1, "n2": n2}
        smap = build_shard_map(k, n1, n2)
        comp = np.concatenate([smap.comp_columns(r) for r in range(n1)])
        sync = np.concatenate([smap.sync_columns(r) for r in range(n2)])
        if not np.array_equal(np.sort(comp), np.arange(k)) or not np.array_equal(
            np.sort(sync), np.arange(k)
        ):
            return _fail("shard-invariants", "columns not partitioned exactly once", case)
        lo, hi = k // n1, -(-k // n1)
        if not all(lo <= c <= hi for c in smap.comp_counts()):
            return _fail("shard-invariants", "comp shard sizes not balanced within 1", case)
        lo2, hi2 = k // n2, -(-k // n2)
        if not all(lo2 <= c <= hi2 for c in smap.sync_counts()):
            return _fail("shard-invariants", "sync shard sizes not balanced within 1", case)
        for r in range(n2):
            cols = smap.sync_columns(r)
            if len(cols) and not np.array_equal(cols, np.arange(cols[0], cols[0] + len(cols))):
                return _fail("shard-invariants", f"sync shard {r} not contiguous", case)
        post = build_reshard_plan(smap, POST_SYNC)
        links: dict[tuple[int, int], int] = {}
        for t in post.transfers:
            links[(t.src, t.dst)] = len(t.cols)
        offload = range(n2, n1)
        for src in range(n2):
            vols = [links.get((src, dst), 0) for dst in offload]
            if vols and max(vols) - min(vols) > 1:
                return _fail(
                    "shard-invariants", f"offload links from sync rank {src} unbalanced", case
                )
        pre = build_reshard_plan(smap, PRE_SYNC)
        if not np.array_equal(apply_plan(smap.comp_rank, pre), smap.sync_rank):
            return _fail("shard-invariants", "pre-sync plan does not reach sync layout", case)
        if not np.array_equal(apply_plan(smap.sync_rank, post), smap.comp_rank):
            return _fail("shard-invariants", "post-sync plan does not restore comp layout", case)
        again = build_shard_map(k, n1, n2)
        if not (
            np.array_equal(again.comp_rank, smap.comp_rank)
            and np.array_equal(again.sync_rank, smap.sync_rank)
        ):
            return _fail("shard-invariants", "rebuild is not deterministic", case)

    # the published contrast case
    case = {"k": 12000, "n1": 32, "n2": 30}
    smap = build_shard_map(12000, 32, 30)
    if not all(c == 375 for c in smap.comp_counts()):
        return _fail("shard-invariants", "comp shards of the contrast case are not 375", case)
    if not all(c == 400 for c in smap.sync_counts()):
        return _fail("shard-invariants", "sync shards of the contrast case are not 400", case)
    naive = naive_contiguous_sync_volumes(12000, 32, 30)
    naive_sizes = {size for rank in naive for _, size in rank}
    if min(naive_sizes) != 25 or max(naive_sizes) != 375 or all(len(r) == 1 for r in naive):
        return _fail(
            "shard-invariants",
            f"naive contiguous splits span {min(naive_sizes)}..{max(naive_sizes)}, "
            "expected straddled sub-shards from 25 to 375",
            case,
        )
    post = build_reshard_plan(smap, POST_SYNC)
    stats = (post.total_cols_moved, post.max_cols_sent, post.max_cols_received)
    if stats != (750, 25, 375):
        return _fail(
            "shard-invariants",
            f"contrast-case plan stats {stats}, expected (750, 25, 375)",
            case,
        )
    return _ok("shard-invariants", "1000 random triples + contrast case")


def _suite_tp_numerics(seed: int) -> dict:
    rng = np.random.default_rng(seed)
    start = time.time()
    worst = 0.0
    for i in range(100):
        n1 = int(rng.integers(2, 17))
        n2 = int(rng.integers(1, n1 + 1))
        k = int(rng.integers(n1, 513))
        hidden = int(rng.integers(2, 7))
        case = {"instance": i, "k": k, "n1": n1, "n2": n2, "hidden": hidden}
        layer = MlpLayer.random(hidden, k, seed=int(rng.integers(2**31)))
        smap = build_shard_map(k, n1, n2)
        healthy = MlpReplica(layer, assignment_from_comp(smap))
        reduced = MlpReplica(layer, assignment_from_sync(smap))
        batch = int(rng.integers(2, 5))
        x1 = rng.standard_normal((batch, hidden))
        x2 = rng.standard_normal((batch, hidden))
        g1 = rng.standard_normal((batch, hidden))
        g2 = rng.standard_normal((batch, hidden))
        mlp_backward_tp(x1, healthy, g1)
        mlp_backward_tp(x2, reduced, g2)
        nonuniform_grad_sync(healthy, reduced, smap)
        da = mlp_backward(x1, layer, g1)[0] + mlp_backward(x2, layer, g2)[0]
        db = mlp_backward(x1, layer, g1)[1] + mlp_backward(x2, layer, g2)[1]
        for rep in (healthy, reduced):
            ra, rb = rep.dense_grads()
            err = max(_rel_err(ra, da), _rel_err(rb, db))
            worst = max(worst, err)
            if err > 1e-12:
                case["rel_err"] = err
                return _fail("tp-numerics", "sync result differs from dense sum", case)

    for i in range(10):  # result must not depend on the shared column layout
        k = int(rng.integers(6, 65))
        hidden = int(rng.integers(2, 6))
        layer = MlpLayer.random(hidden, k, seed=int(rng.integers(2**31)))
        n = int(rng.integers(2, 7))
        perm = rng.permutation(k)
        bounds = np.sort(rng.choice(np.arange(1, k), size=n - 1, replace=False))
        assignment = np.split(perm, bounds)
        reps = []
        grads = []
        for _ in range(3):
            rep = MlpReplica(layer, assignment)
            x = rng.standard_normal((3, hidden))
            g = rng.standard_normal((3, hidden))
            mlp_backward_tp(x, rep, g)
            reps.append(rep)
            grads.append(mlp_backward(x, layer, g))
        uniform_grad_sync(reps)
        da = sum(g[0] for g in grads)
        db = sum(g[1] for g in grads)
        for rep in reps:
            ra, rb = rep.dense_grads()
            err = max(_rel_err(ra, da), _rel_err(rb, db))
            worst = max(worst, err)
            if err > 1e-12:
                return _fail(
                    "tp-numerics",
                    "uniform sync not invariant to shard permutation",
                    {"instance": i, "k": k, "n": n, "rel_err": err},
                )

    for i in range(10):  # attention sharding equivalence
        heads = int(rng.integers(2, 9))
        head_dim = int(rng.integers(2, 5))
        hidden = int(rng.integers(3, 7))
        n = int(rng.integers(1, heads + 1))
        layer = AttentionLayer.random(heads, hidden, head_dim, seed=int(rng.integers(2**31)))
        rep = AttentionReplica(layer, contiguous_assignment(heads, n))
        x = rng.standard_normal((4, hidden))
        err = _rel_err(attention_forward_tp(x, rep), attention_forward_dense(x, layer))
        worst = max(worst, err)
        if err > 1e-12:
            return _fail(
                "tp-numerics",
                "sharded attention differs from dense",
                {"instance": i, "heads": heads, "n": n, "rel_err": err},
            )

    elapsed = time.time() - start
    if elapsed > 30.0:
        return _fail("tp-numerics", f"suite exceeded 30 s budget ({elapsed:.1f} s)", {})
    return _ok("tp-numerics", f"120 instances, worst rel err {worst:.2e}, {elapsed:.1f} s")


def _suite_grad_finite_diff(seed: int) -> dict:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for i in range(50):
        hidden = int(rng.integers(2, 6))
        ffn = int(rng.integers(3, 11))
        layer = MlpLayer.random(hidden, ffn, seed=int(rng.integers(2**31)))
        x = rng.standard_normal((3, hidden))
        g = rng.standard_normal((3, hidden))
        da, db = mlp_backward(x, layer, g)
        h = 1e-6

        def loss(a_mat, b_mat):
            return float(np.sum(mlp_forward_dense(x, MlpLayer(A=a_mat, B=b_mat)) * g))

        fd_a = np.zeros_like(layer.A)
        for r in range(hidden):
            for c in range(ffn):
                bump = np.zeros_like(layer.A)
                bump[r, c] = h
                fd_a[r, c] = (loss(layer.A + bump, layer.B) - loss(layer.A - bump, layer.B)) / (2 * h)
        fd_b = np.zeros_like(layer.B)
        for r in range(ffn):
            for c in range(hidden):
                bump = np.zeros_like(layer.B)
                bump[r, c] = h
                fd_b[r, c] = (loss(layer.A, layer.B + bump) - loss(layer.A, layer.B - bump)) / (2 * h)
        err = max(_rel_err(fd_a, da), _rel_err(fd_b, db))
        worst = max(worst, err)
        if err > 1e-6:
            return _fail(
                "grad-finite-diff",
                "analytic gradient differs from central differences",
                {"instance": i, "hidden": hidden, "ffn": ffn, "rel_err": err},
            )
    return _ok("grad-finite-diff", f"50 instances, worst rel err {worst:.2e}")


def _suite_golden(seed: int) -> dict:
    del seed  # the fixture is fixed
    fx = json.loads(
        resources.files("ntpsim").joinpath("configs/golden_mlp.json").read_text()
    )
    layer = MlpLayer(A=np.array(fx["A"]), B=np.array(fx["B"]))
    regen = MlpLayer.random(fx["hidden"], fx["ffn"], seed=fx["seed"])
    if not (np.array_equal(regen.A, layer.A) and np.array_equal(regen.B, layer.B)):
        return _fail("golden", "seeded layer generation drifted from the fixture", {})
    x = np.array(fx["X"])
    g = np.array(fx["G"])
    y = mlp_forward_dense(x, layer)
    da, db = mlp_backward(x, layer, g)
    for name, got, want in (("Y", y, fx["Y"]), ("dA", da, fx["dA"]), ("dB", db, fx["dB"])):
        err = _rel_err(got, np.array(want))
        if err > 1e-12:
            return _fail(
                "golden",
                f"recomputed {name} differs from the committed fixture",
                {"field": name, "rel_err": err},
            )
    return _ok("golden", "forward and gradients match the committed fixture")


def _ok(name: str, detail: str) -> dict:
    return {"name": name, "passed": True, "detail": detail, "case": None}


def _fail(name: str, detail: str, case: dict) -> dict:
    return {"name": name, "passed": False, "detail": detail, "case": case}


SUITES = {
    "shard-invariants": _suite_shard_invariants,
    "tp-numerics": _suite_tp_numerics,
    "grad-finite-diff": _suite_grad_finite_diff,
    "golden": _suite_golden,
}


def cmd_verify(args) -> int:
    names = list(SUITES) if args.suite == "all" else [args.suite]
    results = [SUITES[n](args.seed) for n in names]
    if args.json:
        print(json.dumps({"passed": all(r["passed"] for r in results), "suites": results}, indent=2))
    else:
        for r in results:
            tag = "PASS" if r["passed"] else "FAIL"
            print(f"{tag} {r['name']}: {r['detail']}")
            if r["case"]:
                print(f"     case: {json.dumps(r['case'])}")
    return 0 if all(r["passed"] for r in results) else 1


# ---------------------------------------------------------------------------
# shardmap command


def _plan_stats(plan) -> dict:
    return {
        "direction": plan.direction,
        "total_cols_moved": plan.total_cols_moved,
        "max_cols_sent": plan.max_cols_sent,
        "max_cols_received": plan.max_cols_received,
        "links": len(plan.transfers),
    }


def cmd_shardmap(args) -> int:
    smap = build_shard_map(args.k, args.n1, args.n2)
    pre = build_reshard_plan(smap, PRE_SYNC)
    post = build_reshard_plan(smap, POST_SYNC)
    if args.json:
        print(
            json.dumps(
                {
                    "map": smap.to_json_dict(),
                    "pre_sync": _plan_stats(pre),
                    "post_sync": _plan_stats(post),
                },
                indent=2,
            )
        )
        return 0
    comp = smap.comp_counts()
    sync = smap.sync_counts()
    print(f"shard map: k={args.k} n1={args.n1} n2={args.n2}")
    print(f"  comp shards per rank: {comp.min()}..{comp.max()}")
    print(f"  sync shards per rank: {sync.min()}..{sync.max()} on {args.n2} ranks")
    for name, plan in (("pre-sync", pre), ("post-sync", post)):
        print(
            f"  {name}: {plan.total_cols_moved} columns over {len(plan.transfers)} links, "
            f"max {plan.max_cols_sent} sent / {plan.max_cols_received} received per rank"
        )
    return 0


# ---------------------------------------------------------------------------
# scenario schema


_SECTION_FIELDS = {
    "cluster": {"total_gpus": "int", "domain_size": "int"},
    "parallel": {
        "tp": "int",
        "pp": "int",
        "dp": "int",
        "domain_size": "int",
        "local_batch": "int",
        "seq_len": "int",
        "tokens_per_minibatch": "int",
    },
    "failure": {
        "rate_per_gpu_day": "float",
        "hw_fraction": "float",
        "hw_recovery_days": "float",
        "sw_recovery_hours": "float",
        "blast_radius": "int",
        "rate_multiplier": "float",
    },
}

_MODE_KEYS = {
    "timeline": (
        {"cluster", "parallel", "policy"},
        {
            "failure",
            "minibatch_mode",
            "spare_domains",
            "restart_delay_days",
            "seed",
            "duration_days",
            "tp_ladder",
        },
    ),
    "failed_fraction_sweep": (
        {"parallel", "failed_fractions"},
        {"policies", "samples", "seed", "tp_ladder"},
    ),
    "availability_mc": (
        {"cluster", "tp_values", "failed_fractions"},
        {"samples", "seed"},
    ),
    "blast_radius_sweep": (
        {"cluster", "parallel", "radii"},
        {"failure", "policies", "seed", "duration_days", "tp_ladder"},
    ),
    "spares_sweep": (
        {"cluster", "parallel", "spare_counts"},
        {"failure", "policies", "seeds", "duration_days", "tp_ladder", "restart_delay_days"},
    ),
    "trace_stats": (
        {"cluster", "arms"},
        {"failure", "seeds", "duration_days", "threshold_fraction", "target_occupancy"},
    ),
}

_SCALAR_TYPES = {
    "policy": "policy",
    "minibatch_mode": "minibatch_mode",
    "spare_domains": "int",
    "restart_delay_days": "float",
    "seed": "int",
    "samples": "int",
    "duration_days": "float",
    "tp_ladder": "tp_ladder",
    "threshold_fraction": "float",
    "target_occupancy": "float",
    "failed_fractions": "float_list",
    "tp_values": "int_list",
    "radii": "int_list",
    "spare_counts": "int_list",
    "seeds": "int_list",
    "policies": "policy_list",
    "arms": "arms",
}


def _want_int(v, path: str) -> int:
    if isinstance(v, bool) or not isinstance(v, int):
        raise ScenarioError(f"{path}: expected integer, got {type(v).__name__}")
    return v


def _want_float(v, path: str) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ScenarioError(f"{path}: expected number, got {type(v).__name__}")
    return float(v)


def _want_list(v, path: str) -> list:
    if not isinstance(v, list) or not v:
        raise ScenarioError(f"{path}: expected a non-empty list")
    return v


def _check_value(kind: str, v, path: str):
    if kind == "int":
        return _want_int(v, path)
    if kind == "float":
        return _want_float(v, path)
    if kind == "policy":
        if v not in POLICIES:
            raise ScenarioError(f"{path}: unknown policy {v!r}; expected one of {POLICIES}")
        return v
    if kind == "minibatch_mode":
        if v not in MINIBATCH_MODES:
            raise ScenarioError(f"{path}: expected one of {MINIBATCH_MODES}")
        return v
    if kind == "tp_ladder":
        if v not in ("anchor", "deep"):
            raise ScenarioError(f"{path}: expected 'anchor' or 'deep'")
        return v
    if kind == "int_list":
        return [_want_int(x, f"{path}[{i}]") for i, x in enumerate(_want_list(v, path))]
    if kind == "float_list":
        return [_want_float(x, f"{path}[{i}]") for i, x in enumerate(_want_list(v, path))]
    if kind == "policy_list":
        return [_check_value("policy", x, f"{path}[{i}]") for i, x in enumerate(_want_list(v, path))]
    if kind == "arms":
        arms = []
        for i, arm in enumerate(_want_list(v, path)):
            if not isinstance(arm, dict):
                raise ScenarioError(f"{path}[{i}]: expected an object")
            unknown = set(arm) - {"rate_multiplier", "hw_recovery_days"}
            if unknown:
                raise ScenarioError(f"{path}[{i}]: unknown keys {sorted(unknown)}")
            arms.append(
                (
                    _want_float(arm.get("rate_multiplier", 1.0), f"{path}[{i}].rate_multiplier"),
                    _want_float(arm.get("hw_recovery_days", 5.0), f"{path}[{i}].hw_recovery_days"),
                )
            )
        return arms
    raise AssertionError(f"unhandled kind {kind}")


def _check_section(doc: dict, name: str):
    section = doc.get(name)
    if section is None:
        return
    if not isinstance(section, dict):
        raise ScenarioError(f"{name}: expected an object")
    fields = _SECTION_FIELDS[name]
    unknown = set(section) - set(fields)
    if unknown:
        raise ScenarioError(f"{name}: unknown keys {sorted(unknown)}")
    for key, v in section.items():
        _check_value(fields[key], v, f"{name}.{key}")


def validate_scenario(doc) -> str:
    """Check the scenario document against its mode's schema; returns the mode."""
    if not isinstance(doc, dict):
        raise ScenarioError("scenario root must be an object")
    mode = doc.get("mode")
    if mode not in _MODE_KEYS:
        raise ScenarioError(f"mode: expected one of {sorted(_MODE_KEYS)}, got {mode!r}")
    required, optional = _MODE_KEYS[mode]
    unknown = set(doc) - required - optional - {"mode"}
    if unknown:
        raise ScenarioError(f"unknown keys for mode {mode!r}: {sorted(unknown)}")
    missing = required - set(doc)
    if missing:
        raise ScenarioError(f"mode {mode!r} requires keys {sorted(missing)}")
    for name in _SECTION_FIELDS:
        _check_section(doc, name)
    for key, v in doc.items():
        if key in _SCALAR_TYPES:
            _check_value(_SCALAR_TYPES[key], v, key)
    return mode


def _build_cluster(doc) -> Cluster:
    return Cluster(**doc["cluster"])


def _build_parallel(doc) -> ParallelConfig:
    return ParallelConfig(**doc["parallel"])


def _build_failure(doc) -> FailureModelConfig:
    section = dict(doc.get("failure", {}))
    section.setdefault("rate_per_gpu_day", DEFAULT_RATE_PER_GPU_DAY)
    return FailureModelConfig(**section)


def _build_table(doc) -> ReducedTpTable:
    return deep_table() if doc.get("tp_ladder") == "deep" else default_table()


def _policies(doc) -> tuple[str, ...]:
    return tuple(doc.get("policies", POLICIES))


# ---------------------------------------------------------------------------
# scenario runners


def _write(outdir: str, name: str, text: str) -> str:
    path = os.path.join(outdir, name)
    with open(path, "w") as f:
        f.write(text)
    return path


def _run_timeline(doc, outdir) -> dict:
    cfg = SimConfig(
        cluster=_build_cluster(doc),
        parallel=_build_parallel(doc),
        failure=_build_failure(doc),
        policy=doc["policy"],
        minibatch_mode=doc.get("minibatch_mode", "variable"),
        spare_domains=doc.get("spare_domains", 0),
        restart_delay_days=doc.get("restart_delay_days", 0.0),
        seed=doc.get("seed", 0),
        duration_days=doc.get("duration_days", 15.0),
        table=_build_table(doc),
    )
    report = run(cfg)
    _write(outdir, "timeline.csv", report.to_csv())
    return report.summary_dict()


def _run_failed_fraction(doc, outdir) -> dict:
    fractions = tuple(doc["failed_fractions"])
    pts = failed_fraction_sweep(
        _build_parallel(doc),
        fractions,
        policies=_policies(doc),
        samples=doc.get("samples", 200),
        seed=doc.get("seed", 0),
        table=_build_table(doc),
    )
    _write(
        outdir,
        "loss_vs_failed_fraction.csv",
        points_to_csv(pts, ("policy", "failed_fraction", "mean_loss")),
    )
    top = max(fractions)
    return {
        "mode": "failed_fraction_sweep",
        "max_failed_fraction": top,
        "mean_loss_at_max": {
            p.policy: p.mean_loss for p in pts if p.failed_fraction == top
        },
    }


def _run_availability(doc, outdir) -> dict:
    fractions = tuple(doc["failed_fractions"])
    pts = monte_carlo_availability(
        _build_cluster(doc).total_gpus,
        tuple(doc["tp_values"]),
        fractions,
        samples=doc.get("samples", 200),
        seed=doc.get("seed", 0),
    )
    _write(
        outdir,
        "availability_vs_tp.csv",
        points_to_csv(pts, ("tp", "failed_fraction", "median_lost", "max_lost")),
    )
    top = max(fractions)
    return {
        "mode": "availability_mc",
        "max_failed_fraction": top,
        "median_availability_at_max": {
            str(p.tp): 1.0 - p.median_lost for p in pts if p.failed_fraction == top
        },
    }


def _run_blast(doc, outdir) -> dict:
    cfg = SimConfig(
        cluster=_build_cluster(doc),
        parallel=_build_parallel(doc),
        failure=_build_failure(doc),
        policy=POLICIES[0],
        seed=doc.get("seed", 0),
        duration_days=doc.get("duration_days", 15.0),
        table=_build_table(doc),
    )
    pts = blast_radius_sweep(cfg, tuple(doc["radii"]), policies=_policies(doc))
    _write(
        outdir,
        "loss_vs_blast_radius.csv",
        points_to_csv(pts, ("policy", "blast_radius", "mean_loss")),
    )
    out: dict = {"mode": "blast_radius_sweep", "mean_loss": {}}
    for p in pts:
        out["mean_loss"].setdefault(p.policy, {})[str(p.blast_radius)] = p.mean_loss
    return out


def _run_spares(doc, outdir) -> dict:
    cfg = SimConfig(
        cluster=_build_cluster(doc),
        parallel=_build_parallel(doc),
        failure=_build_failure(doc),
        policy=POLICIES[0],
        minibatch_mode="fixed",
        restart_delay_days=doc.get("restart_delay_days", 0.0),
        duration_days=doc.get("duration_days", 15.0),
        table=_build_table(doc),
    )
    counts = tuple(doc["spare_counts"])
    seeds = tuple(doc.get("seeds", [0]))
    pts = spares_sweep(cfg, counts, policies=_policies(doc), seeds=seeds)
    first = counts[0]
    demand_rows = [p for p in pts if p.spare_domains == first]
    _write(
        outdir,
        "spare_demand.csv",
        points_to_csv(demand_rows, ("policy", "seed", "peak_spare_demand_domains")),
    )
    _write(
        outdir,
        "throughput_per_gpu_vs_spares.csv",
        points_to_csv(
            pts,
            ("policy", "spare_domains", "seed", "throughput_per_gpu", "pause_time_frac"),
        ),
    )
    summary: dict = {"mode": "spares_sweep", "seeds": list(seeds), "demand_domains": {}}
    for pol in _policies(doc):
        demands = [p.peak_spare_demand_domains for p in demand_rows if p.policy == pol]
        summary["demand_domains"][pol] = {
            "mean": float(np.mean(demands)),
            "min": min(demands),
            "max": max(demands),
        }
    return summary


def _run_trace_stats(doc, outdir) -> dict:
    arms = _check_value("arms", doc["arms"], "arms")
    rows = trace_stats(
        _build_cluster(doc),
        _build_failure(doc),
        tuple(arms),
        duration_days=doc.get("duration_days", 15.0),
        seeds=tuple(doc.get("seeds", list(range(20)))),
        threshold_fraction=doc.get("threshold_fraction", 0.001),
    )
    _write(
        outdir,
        "trace_stats.csv",
        points_to_csv(
            rows,
            (
                "rate_multiplier",
                "hw_recovery_days",
                "mean_occupancy",
                "mean_peak_failed",
                "mean_events_per_day",
            ),
        ),
    )
    out = {
        "mode": "trace_stats",
        "mean_occupancy": {str(r.rate_multiplier): r.mean_occupancy for r in rows},
    }
    if len(rows) > 1 and rows[0].mean_peak_failed > 0:
        out["peak_ratio_vs_first_arm"] = {
            str(r.rate_multiplier): r.mean_peak_failed / rows[0].mean_peak_failed
            for r in rows[1:]
        }
    return out


_RUNNERS = {
    "timeline": _run_timeline,
    "failed_fraction_sweep": _run_failed_fraction,
    "availability_mc": _run_availability,
    "blast_radius_sweep": _run_blast,
    "spares_sweep": _run_spares,
    "trace_stats": _run_trace_stats,
}


def _outdir(args) -> str:
    out = args.out or os.environ.get(OUT_ENV) or "ntpsim-out"
    os.makedirs(out, exist_ok=True)
    return out


def cmd_simulate(args) -> int:
    with open(args.scenario) as f:
        doc = json.load(f)
    mode = validate_scenario(doc)
    outdir = _outdir(args)
    summary = _RUNNERS[mode](doc, outdir)
    _write(outdir, "summary.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
    if args.json:
        print(json.dumps(summary, indent=2, sort_keys=True))
    else:
        print(f"wrote {outdir}/ ({mode})")
        for key, value in summary.items():
            if key != "mode":
                print(f"  {key}: {json.dumps(value, sort_keys=True)}")
    return 0


# ---------------------------------------------------------------------------
# calibrate


def _tagged(value: float, provenance: str) -> dict:
    return {"value": value, "provenance": provenance}


def cmd_calibrate(args) -> int:
    outdir = _outdir(args)
    if args.target == "iter-time":
        model, max_resid = calibrate_iter_time_model(TABLE_ROWS)
        rows_check = {
            f"tp{t}_lb{lb}_p{p}": {
                "anchor": anchor,
                "model": model.rel_iter_time(t, lb, p),
            }
            for t, lb, p, anchor in TABLE_ROWS
        }
        payload = {
            "iter_time_model": {
                "base_tp": model.base_tp,
                "base_lb": model.base_lb,
                "compute_share": _tagged(model.compute_share, "fitted"),
                "batch_exponent": _tagged(model.batch_exponent, "fitted"),
                "max_residual": max_resid,
                "rows_check": rows_check,
            }
        }
        ok = max_resid <= 0.01
        detail = f"max residual {max_resid:.4f} over {len(TABLE_ROWS)} operating points"
    else:  # trace-stats
        doc = {}
        if args.scenario:
            with open(args.scenario) as f:
                doc = json.load(f)
            if validate_scenario(doc) != "trace_stats":
                raise ScenarioError("calibrate --target trace-stats needs a trace_stats scenario")
        cluster = _build_cluster(doc) if "cluster" in doc else Cluster(32768, 32)
        base = _build_failure(doc)
        target = doc.get("target_occupancy", 0.81)
        threshold = doc.get("threshold_fraction", 0.001)
        duration = doc.get("duration_days", 15.0)
        seeds = doc.get("seeds", list(range(20)))
        if seeds != list(range(seeds[0], seeds[0] + len(seeds))):
            raise ScenarioError("seeds must be contiguous for rate calibration")
        rate = calibrate_rate(
            cluster,
            base,
            target_occupancy=target,
            threshold_fraction=threshold,
            duration_days=duration,
            n_seeds=len(seeds),
            seed0=seeds[0],
            tol=0.005,
        )
        achieved = 0.0
        if rate > 0:
            model = replace(base, rate_per_gpu_day=rate)
            achieved = float(
                np.mean(
                    [
                        occupancy_above(generate_trace(cluster, model, duration, s), threshold)
                        for s in seeds
                    ]
                )
            )
        payload = {
            "failure": {
                "rate_per_gpu_day": _tagged(rate, "fitted"),
                "target_occupancy": target,
                "achieved_occupancy": achieved,
                "threshold_fraction": threshold,
                "duration_days": duration,
                "seeds": seeds,
            }
        }
        ok = abs(achieved - target) <= 0.01 or target == 0.0
        detail = f"rate {rate:.6g}/GPU-day, occupancy {achieved:.4f} vs target {target}"
    name = f"calibrated_{args.target.replace('-', '_')}.json"
    path = _write(outdir, name, json.dumps(payload, indent=2, sort_keys=True) + "\n")
    if args.json:
        print(json.dumps({"ok": ok, "path": path, **payload}, indent=2, sort_keys=True))
    else:
        print(f"{'PASS' if ok else 'FAIL'} calibrate {args.target}: {detail}")
        print(f"wrote {path}")
    return 0 if ok else 1


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ntpsim",
        description="Nonuniform tensor parallelism: shard maps, sync verification, "
        "failure simulation",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("shardmap", help="print a shard map and reshard-plan statistics")
    p.add_argument("--k", type=int, required=True, help="number of columns to shard")
    p.add_argument("--n1", type=int, required=True, help="healthy group size")
    p.add_argument("--n2", type=int, required=True, help="reduced group size")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_shardmap)

    p = sub.add_parser("verify", help="run the numerical oracle suites")
    p.add_argument("--suite", choices=["all", *SUITES], default="all")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("simulate", help="execute a scenario file")
    p.add_argument("--scenario", required=True, help="path to a scenario JSON file")
    p.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ntpsim-out)")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("calibrate", help="fit coefficients and write them with provenance")
    p.add_argument("--target", choices=["iter-time", "trace-stats"], required=True)
    p.add_argument("--scenario", help="trace_stats scenario overriding the defaults")
    p.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ntpsim-out)")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_calibrate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ScenarioError, ValueError, OSError, json.JSONDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
