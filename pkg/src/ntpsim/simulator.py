"""Event-driven throughput simulation and the Monte Carlo sweeps.

The engine walks the piecewise-constant failure state of a trace, applies a
recovery policy at every change point, prices each replica with the table of
reduced operating points, and integrates delivered throughput exactly over
each interval (bulk-synchronous: the job iterates at the slowest active
replica's pace).

Sweeps build on the same evaluation: a static Monte-Carlo availability
study over tensor-parallel degrees, a mean-loss sweep over failed
fractions, a blast-radius sweep replaying one event skeleton at several
radii, and a spare-domain sweep in fixed-minibatch mode.
"""

from __future__ import annotations

import csv
import io
import math
import statistics
from dataclasses import dataclass, field, replace

import numpy as np

from .failure import (
    Cluster,
    ClusterState,
    FailureModelConfig,
    FailureTrace,
    generate_trace,
    iter_intervals,
    occupancy_above,
    peak_concurrent_failed,
    reexpand_trace,
)
from .policy import (
    DP_DROP,
    POLICIES,
    ParallelConfig,
    PolicyDecision,
    ReducedTpTable,
    apply_policy,
    default_table,
    spare_domains_demand,
)

VARIABLE = "variable"
FIXED = "fixed"
MINIBATCH_MODES = (VARIABLE, FIXED)


@dataclass(frozen=True)
class SimConfig:
    cluster: Cluster
    parallel: ParallelConfig
    failure: FailureModelConfig
    policy: str
    minibatch_mode: str = VARIABLE
    spare_domains: int = 0
    restart_delay_days: float = 0.0
    samples: int = 200
    seed: int = 0
    duration_days: float = 15.0
    table: ReducedTpTable | None = None

    def __post_init__(self):
        if self.policy not in POLICIES:
            raise ValueError(f"unknown policy {self.policy!r}")
        if self.minibatch_mode not in MINIBATCH_MODES:
            raise ValueError(f"unknown minibatch mode {self.minibatch_mode!r}")
        if self.spare_domains < 0 or self.restart_delay_days < 0:
            raise ValueError("spare_domains and restart_delay_days must be non-negative")
        if self.cluster.domain_size != self.parallel.domain_size:
            raise ValueError("cluster and parallel config disagree on domain size")
        if self.cluster.n_domains != self.parallel.training_domains:
            raise ValueError(
                f"cluster has {self.cluster.n_domains} domains, "
                f"parallel config needs {self.parallel.training_domains}"
            )

    def resolved_table(self) -> ReducedTpTable:
        return self.table or default_table()


@dataclass(frozen=True)
class SimPoint:
    """One piecewise-constant segment of the run, valid from t_days onward."""

    t_days: float
    throughput_frac: float
    minibatch_tokens: int
    replicas_active: int
    replicas_reduced: int
    replicas_dropped: int
    spares_used: int
    reclaimable_gpus: int
    fleet_power: float


CSV_COLUMNS = (
    "t_days",
    "throughput_frac",
    "minibatch_tokens",
    "replicas_active",
    "replicas_reduced",
    "replicas_dropped",
    "spares_used",
    "reclaimable_gpus",
    "fleet_power",
)


@dataclass(frozen=True)
class ThroughputReport:
    config: SimConfig = field(repr=False)
    points: tuple[SimPoint, ...]
    mean_throughput_frac: float
    pause_time_frac: float
    peak_spare_demand_domains: int
    mean_fleet_power: float

    @property
    def mean_throughput_loss(self) -> float:
        return 1.0 - self.mean_throughput_frac

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for p in self.points:
            writer.writerow(
                [
                    repr(p.t_days),
                    repr(p.throughput_frac),
                    p.minibatch_tokens,
                    p.replicas_active,
                    p.replicas_reduced,
                    p.replicas_dropped,
                    p.spares_used,
                    p.reclaimable_gpus,
                    repr(p.fleet_power),
                ]
            )
        return buf.getvalue()

    def summary_dict(self) -> dict:
        return {
            "policy": self.config.policy,
            "minibatch_mode": self.config.minibatch_mode,
            "duration_days": self.config.duration_days,
            "seed": self.config.seed,
            "spare_domains": self.config.spare_domains,
            "mean_throughput_frac": self.mean_throughput_frac,
            "mean_throughput_loss": self.mean_throughput_loss,
            "pause_time_frac": self.pause_time_frac,
            "peak_spare_demand_domains": self.peak_spare_demand_domains,
            "mean_fleet_power": self.mean_fleet_power,
            "segments": len(self.points),
        }


def _segment(cfg: SimConfig, decision: PolicyDecision, t: float) -> tuple[SimPoint, int]:
    """Price one interval: returns the report point and the spare demand."""
    par = cfg.parallel
    dpr = par.domains_per_replica
    fleet_domains = par.training_domains + cfg.spare_domains
    demand = spare_domains_demand(decision)
    running = [r for r in decision.replicas if r.running]
    reduced = sum(1 for r in running if r.tp < par.tp)
    power_sum = decision.mean_power_factor * par.training_domains + 1.0 * cfg.spare_domains
    fleet_power = power_sum / fleet_domains

    # boosted replicas close the gap to healthy pace but never outrun the
    # job's target rate, so delivered throughput caps at 1
    if cfg.minibatch_mode == VARIABLE:
        spares_used = 0
        rel = decision.max_rel_iter_time
        frac = min(1.0, decision.throughput_frac / rel) if rel > 0 else 0.0
        tokens = decision.total_local_batch * par.seq_len
        active = len(running)
    else:
        available = cfg.spare_domains // dpr
        needed = math.ceil(demand / dpr)
        if needed <= available:
            spares_used = needed * dpr
            rel = decision.max_rel_iter_time
            if needed:  # fresh spare replicas run at healthy pace
                rel = max(rel, 1.0)
            frac = min(1.0, 1.0 / rel) if rel > 0 else 0.0
            tokens = par.tokens_per_minibatch
            active = len(running) + needed
        else:
            spares_used = available * dpr
            frac = 0.0
            tokens = 0
            active = 0
    point = SimPoint(
        t_days=t,
        throughput_frac=frac,
        minibatch_tokens=tokens,
        replicas_active=active,
        replicas_reduced=reduced,
        replicas_dropped=par.dp - sum(1 for r in decision.replicas if r.running),
        spares_used=spares_used,
        reclaimable_gpus=decision.reclaimable_gpus,
        fleet_power=fleet_power,
    )
    return point, demand


def _walk(
    trace: FailureTrace, parallel: ParallelConfig, policy: str, table: ReducedTpTable
) -> list[tuple[float, float, PolicyDecision]]:
    """Policy decisions over the trace's piecewise-constant failure state."""
    out = []
    for t0, t1, cover in iter_intervals(trace):
        state = ClusterState(trace.cluster, up=cover == 0)
        out.append((t0, t1, apply_policy(state, parallel, policy, table)))
    return out


def _price_walk(cfg: SimConfig, walk, duration: float) -> ThroughputReport:
    points = []
    peak_demand = 0
    thr_integral = 0.0
    pause_time = 0.0
    power_integral = 0.0
    first = True
    for t0, t1, decision in walk:
        point, demand = _segment(cfg, decision, t0)
        points.append(point)
        peak_demand = max(peak_demand, demand)
        length = t1 - t0
        restart = 0.0 if first else min(cfg.restart_delay_days, length)
        first = False
        thr_integral += point.throughput_frac * (length - restart)
        if point.throughput_frac == 0.0:
            pause_time += length
        else:
            pause_time += restart
        power_integral += point.fleet_power * length
    return ThroughputReport(
        config=cfg,
        points=tuple(points),
        mean_throughput_frac=thr_integral / duration,
        pause_time_frac=pause_time / duration,
        peak_spare_demand_domains=peak_demand,
        mean_fleet_power=power_integral / duration,
    )


def run(cfg: SimConfig, trace: FailureTrace | None = None) -> ThroughputReport:
    """Simulate one trace (generated from the config seed unless given).

    With a nonzero restart delay, each state change charges up to that much
    zero-throughput time at the start of its interval (in the aggregates;
    reported segments show the post-restart steady value).
    """
    if trace is None:
        trace = generate_trace(cfg.cluster, cfg.failure, cfg.duration_days, cfg.seed)
    walk = _walk(trace, cfg.parallel, cfg.policy, cfg.resolved_table())
    return _price_walk(cfg, walk, trace.duration_days)


def _spawned_seeds(seed: int, n: int) -> list[np.random.Generator]:
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


@dataclass(frozen=True)
class AvailabilityPoint:
    tp: int
    failed_fraction: float
    median_lost: float
    max_lost: float


def monte_carlo_availability(
    total_gpus: int,
    tp_values: tuple[int, ...],
    failed_fractions: tuple[float, ...],
    samples: int = 200,
    seed: int = 0,
) -> tuple[AvailabilityPoint, ...]:
    """Static lost-fraction study: replica = one TP-sized domain, one stage.

    Each sample places round(fraction * total) failures uniformly without
    replacement; a replica is lost when its domain contains any failure
    (replica-idling semantics). Reports median and max lost fraction.
    """
    rngs = _spawned_seeds(seed, len(tp_values) * len(failed_fractions))
    out = []
    i = 0
    for tp in tp_values:
        if total_gpus % tp != 0:
            raise ValueError(f"total_gpus {total_gpus} not divisible by tp {tp}")
        n_replicas = total_gpus // tp
        for frac in failed_fractions:
            n_failed = round(frac * total_gpus)
            rng = rngs[i]
            i += 1
            lost = []
            for _ in range(samples):
                failed = rng.choice(total_gpus, size=n_failed, replace=False)
                hit = np.unique(failed // tp).size
                lost.append(hit / n_replicas)
            out.append(
                AvailabilityPoint(
                    tp=tp,
                    failed_fraction=frac,
                    median_lost=float(statistics.median(lost)),
                    max_lost=float(max(lost)),
                )
            )
    return tuple(out)


@dataclass(frozen=True)
class LossPoint:
    policy: str
    failed_fraction: float
    mean_loss: float


def failed_fraction_sweep(
    parallel: ParallelConfig,
    failed_fractions: tuple[float, ...],
    policies: tuple[str, ...] = POLICIES,
    samples: int = 200,
    seed: int = 0,
    table: ReducedTpTable | None = None,
) -> tuple[LossPoint, ...]:
    """Mean throughput loss vs failed fraction, static states, paired samples.

    The same sampled failure sets are evaluated under every policy, so
    per-state dominance carries over to the means exactly.
    """
    table = table or default_table()
    total = parallel.training_domains * parallel.domain_size
    cluster = Cluster(total_gpus=total, domain_size=parallel.domain_size)
    rngs = _spawned_seeds(seed, len(failed_fractions))
    losses = {(p, f): [] for p in policies for f in failed_fractions}
    for frac, rng in zip(failed_fractions, rngs):
        n_failed = round(frac * total)
        for _ in range(samples):
            up = np.ones(total, dtype=bool)
            if n_failed:
                up[rng.choice(total, size=n_failed, replace=False)] = False
            state = ClusterState(cluster, up)
            for pol in policies:
                decision = apply_policy(state, parallel, pol, table)
                rel = decision.max_rel_iter_time
                thr = decision.throughput_frac / rel if rel > 0 else 0.0
                losses[(pol, frac)].append(1.0 - thr)
    return tuple(
        LossPoint(policy=p, failed_fraction=f, mean_loss=float(np.mean(losses[(p, f)])))
        for p in policies
        for f in failed_fractions
    )


@dataclass(frozen=True)
class RadiusPoint:
    policy: str
    blast_radius: int
    mean_loss: float


def blast_radius_sweep(
    cfg: SimConfig,
    radii: tuple[int, ...],
    policies: tuple[str, ...] = POLICIES,
) -> tuple[RadiusPoint, ...]:
    """Replay one radius-1 event skeleton at each blast radius.

    Holding arrival times, seed GPUs, kinds, and recovery times fixed
    isolates the radius effect: larger radii deepen damage inside the same
    domains, leaving replica-idling policies untouched.
    """
    base = generate_trace(
        cfg.cluster,
        replace(cfg.failure, blast_radius=1),
        cfg.duration_days,
        cfg.seed,
    )
    out = []
    for radius in radii:
        trace = reexpand_trace(base, radius)
        for pol in policies:
            report = run(replace(cfg, policy=pol), trace=trace)
            out.append(
                RadiusPoint(policy=pol, blast_radius=radius, mean_loss=report.mean_throughput_loss)
            )
    return tuple(out)


@dataclass(frozen=True)
class SparesPoint:
    policy: str
    spare_domains: int
    seed: int
    throughput_per_gpu: float
    pause_time_frac: float
    peak_spare_demand_domains: int


def spares_sweep(
    cfg: SimConfig,
    spare_counts: tuple[int, ...],
    policies: tuple[str, ...] = POLICIES,
    seeds: tuple[int, ...] | None = None,
) -> tuple[SparesPoint, ...]:
    """Fixed-minibatch runs over a grid of spare-domain counts.

    throughput_per_gpu counts idle spares in the denominator: delivered
    throughput times training_gpus / (training_gpus + spare_gpus).
    """
    seeds = seeds if seeds is not None else (cfg.seed,)
    total = cfg.cluster.total_gpus
    table = cfg.resolved_table()
    out = []
    for seed in seeds:
        trace = generate_trace(cfg.cluster, cfg.failure, cfg.duration_days, seed)
        for pol in policies:
            # the walk is spare-count independent; price it once per count
            walk = _walk(trace, cfg.parallel, pol, table)
            for count in spare_counts:
                priced = replace(
                    cfg, policy=pol, minibatch_mode=FIXED, spare_domains=count, seed=seed
                )
                r = _price_walk(priced, walk, trace.duration_days)
                per_gpu = r.mean_throughput_frac * total / (total + count * cfg.cluster.domain_size)
                out.append(
                    SparesPoint(
                        policy=pol,
                        spare_domains=count,
                        seed=seed,
                        throughput_per_gpu=per_gpu,
                        pause_time_frac=r.pause_time_frac,
                        peak_spare_demand_domains=r.peak_spare_demand_domains,
                    )
                )
    return tuple(out)


@dataclass(frozen=True)
class TraceStatsArm:
    rate_multiplier: float
    hw_recovery_days: float
    mean_occupancy: float
    mean_peak_failed: float
    mean_events_per_day: float


def trace_stats(
    cluster: Cluster,
    failure: FailureModelConfig,
    arms: tuple[tuple[float, float], ...],
    duration_days: float = 15.0,
    seeds: tuple[int, ...] = tuple(range(20)),
    threshold_fraction: float = 0.001,
) -> tuple[TraceStatsArm, ...]:
    """Occupancy and peak statistics per (rate multiplier, hw recovery) arm."""
    out = []
    for mult, recovery in arms:
        model = replace(failure, rate_multiplier=mult, hw_recovery_days=recovery)
        occs, peaks, counts = [], [], []
        for seed in seeds:
            tr = generate_trace(cluster, model, duration_days, seed)
            occs.append(occupancy_above(tr, threshold_fraction))
            peaks.append(peak_concurrent_failed(tr))
            counts.append(len(tr.events) / duration_days)
        out.append(
            TraceStatsArm(
                rate_multiplier=mult,
                hw_recovery_days=recovery,
                mean_occupancy=float(np.mean(occs)),
                mean_peak_failed=float(np.mean(peaks)),
                mean_events_per_day=float(np.mean(counts)),
            )
        )
    return tuple(out)


def points_to_csv(rows, columns: tuple[str, ...]) -> str:
    """Stable CSV for a sequence of dataclass rows (column order fixed)."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow(
            [
                repr(v) if isinstance(v, float) else v
                for v in (getattr(row, c) for c in columns)
            ]
        )
    return buf.getvalue()
