"""Recovery policies: mapping cluster state to a runnable training layout.

Three policies are modeled. DP-DROP idles every data-parallel replica that
contains a failed GPU. NTP keeps such replicas running at a reduced tensor
parallel degree with a smaller local batch. NTP-PW additionally boosts the
power of reduced replicas so they keep the full local batch at healthy
iteration time.

All policies share the same placement step: scale-up domains are sorted by
health so that damaged domains concentrate in the fewest possible replicas.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .failure import ClusterState, FailureTrace, iter_intervals
from .perfmodel import POWER_GRID, IterTimeModel, PowerCurve, min_boost_power

DP_DROP = "dp-drop"
NTP = "ntp"
NTP_PW = "ntp-pw"
POLICIES = (DP_DROP, NTP, NTP_PW)

PLAIN = "plain"
POWER = "power"

# effective_tp result for a replica that cannot run at any allowed degree
DROPPED = None


@dataclass(frozen=True)
class ParallelConfig:
    """Healthy-state parallelism layout of one training job."""

    tp: int
    pp: int
    dp: int
    domain_size: int
    local_batch: int
    seq_len: int
    tokens_per_minibatch: int | None = None

    def __post_init__(self):
        if min(self.tp, self.pp, self.dp, self.domain_size, self.local_batch, self.seq_len) <= 0:
            raise ValueError("all parallelism fields must be positive")
        if self.tp > self.domain_size:
            raise ValueError(f"tp {self.tp} exceeds domain_size {self.domain_size}")
        if (self.tp * self.pp) % self.domain_size != 0:
            raise ValueError(
                f"replica of tp*pp={self.tp * self.pp} GPUs does not tile "
                f"domains of {self.domain_size}"
            )
        if self.tokens_per_minibatch is None:
            object.__setattr__(
                self, "tokens_per_minibatch", self.dp * self.local_batch * self.seq_len
            )

    @property
    def domains_per_replica(self) -> int:
        return (self.tp * self.pp) // self.domain_size

    @property
    def gpus_per_replica(self) -> int:
        return self.tp * self.pp

    @property
    def training_domains(self) -> int:
        return self.dp * self.domains_per_replica


@dataclass(frozen=True)
class TableRow:
    local_batch: int
    power_factor: float
    rel_iter_time: float


@dataclass(frozen=True)
class ReducedTpTable:
    """Operating points for reduced tensor parallel degrees.

    rows maps (reduced_tp, mode) to a TableRow; mode "plain" runs at normal
    power with the largest local batch that stays within eps of healthy
    iteration time, mode "power" keeps the full local batch under a boost.
    Degrees without a feasible boost simply have no "power" row.
    """

    rows: dict[tuple[int, str], TableRow]

    def degrees(self) -> tuple[int, ...]:
        return tuple(sorted({t for t, _ in self.rows}, reverse=True))

    def allowed(self, full_tp: int) -> frozenset[int]:
        return frozenset({full_tp, *(t for t, mode in self.rows if mode == PLAIN)})

    def plain_row(self, reduced_tp: int) -> TableRow:
        return self.rows[(reduced_tp, PLAIN)]

    def power_row(self, reduced_tp: int) -> TableRow | None:
        return self.rows.get((reduced_tp, POWER))

    @classmethod
    def from_model(
        cls,
        model: IterTimeModel,
        degrees: tuple[int, ...],
        eps: float = 0.005,
        grid: tuple[float, ...] = POWER_GRID,
    ) -> "ReducedTpTable":
        """Generate rows from an iteration-time model.

        Plain local batch is the largest value whose iteration time stays
        within (1 + eps) of healthy; degrees where even local batch 1 misses
        that bound are omitted entirely (too slow to be worth keeping).
        """
        rows: dict[tuple[int, str], TableRow] = {}
        for t in degrees:
            if not (0 < t < model.base_tp):
                raise ValueError(f"degree {t} outside (0, {model.base_tp})")
            for lb in range(model.base_lb, 0, -1):
                rel = model.rel_iter_time(t, lb, 1.0)
                if rel <= 1.0 + eps:
                    rows[(t, PLAIN)] = TableRow(lb, 1.0, rel)
                    break
            else:
                continue
            boost = min_boost_power(model.base_tp, t, curve=model.curve, grid=grid)
            if boost is not None and boost > 1.0:
                rows[(t, POWER)] = TableRow(
                    model.base_lb, boost, model.rel_iter_time(t, model.base_lb, boost)
                )
        return cls(rows=rows)


def default_table() -> ReducedTpTable:
    """The anchor operating points for TP32 with local batch 8."""
    return ReducedTpTable(
        rows={
            (30, PLAIN): TableRow(7, 1.0, 1.002),
            (30, POWER): TableRow(8, 1.15, 0.978),
            (28, PLAIN): TableRow(6, 1.0, 1.003),
            (28, POWER): TableRow(8, 1.3, 0.999),
        }
    )


def deep_table(model: IterTimeModel | None = None) -> ReducedTpTable:
    """Rows for every feasible even degree below full, for blast-radius studies."""
    model = model or IterTimeModel()
    return ReducedTpTable.from_model(model, tuple(range(model.base_tp - 2, 1, -2)))


def effective_tp(healthy_counts, allowed: frozenset[int]) -> int | None:
    """Largest allowed degree every domain of the replica can support."""
    if not allowed:
        raise ValueError("allowed degree set is empty")
    floor = min(healthy_counts)
    qualifying = [a for a in allowed if a <= floor]
    return max(qualifying) if qualifying else DROPPED


@dataclass(frozen=True)
class Placement:
    """Domains assigned to replica slots, damaged ones packed lowest first.

    domain_order lists domain ids sorted by healthy-GPU count ascending;
    replica r owns the slice [r*dpr, (r+1)*dpr). reclaimable_gpus counts
    healthy GPUs stranded by degree reduction in running replicas (idle
    replicas are a per-policy matter, accounted in PolicyDecision).
    """

    domain_order: tuple[int, ...]
    replica_tp: tuple[int | None, ...]
    replica_damaged: tuple[bool, ...]
    replica_healthy: tuple[int, ...]
    reclaimable_gpus: int
    spare_domains_used: int = 0

    @property
    def n_affected(self) -> int:
        return sum(self.replica_damaged)

    @property
    def dropped(self) -> frozenset[int]:
        return frozenset(r for r, t in enumerate(self.replica_tp) if t is DROPPED)


def pack_failed_domains(
    state: ClusterState, cfg: ParallelConfig, table: ReducedTpTable | None = None
) -> Placement:
    """Sort domains by health ascending and deal them to replica slots in order.

    Damaged domains land in the lowest replica ranks, so the number of
    replicas containing any damage is the minimum ceil(damaged / dpr).
    """
    table = table or default_table()
    if state.cluster.domain_size != cfg.domain_size:
        raise ValueError("state domain size does not match config")
    if state.cluster.n_domains != cfg.training_domains:
        raise ValueError(
            f"state has {state.cluster.n_domains} domains, config needs {cfg.training_domains}"
        )
    healthy = state.domain_healthy()
    order = tuple(int(d) for d in np.lexsort((np.arange(len(healthy)), healthy)))
    allowed = table.allowed(cfg.tp)
    dpr = cfg.domains_per_replica
    replica_tp = []
    replica_damaged = []
    replica_healthy = []
    reclaimable = 0
    for r in range(cfg.dp):
        counts = [int(healthy[d]) for d in order[r * dpr : (r + 1) * dpr]]
        eff = effective_tp(counts, allowed)
        replica_tp.append(eff)
        replica_damaged.append(any(c < cfg.domain_size for c in counts))
        replica_healthy.append(sum(counts))
        if eff is not DROPPED:
            reclaimable += sum(counts) - eff * cfg.pp
    return Placement(
        domain_order=order,
        replica_tp=tuple(replica_tp),
        replica_damaged=tuple(replica_damaged),
        replica_healthy=tuple(replica_healthy),
        reclaimable_gpus=reclaimable,
    )


@dataclass(frozen=True)
class ReplicaDecision:
    """One replica's operating point under a policy."""

    tp: int | None
    local_batch: int
    power_factor: float
    rel_iter_time: float
    damaged: bool
    healthy_gpus: int

    @property
    def running(self) -> bool:
        return self.local_batch > 0


@dataclass(frozen=True)
class PolicyDecision:
    """Full policy outcome on one cluster state."""

    policy: str
    placement: Placement
    replicas: tuple[ReplicaDecision, ...]
    cfg: ParallelConfig = field(repr=False)

    @property
    def total_local_batch(self) -> int:
        return sum(r.local_batch for r in self.replicas)

    @property
    def throughput_frac(self) -> float:
        """Contributed samples per iteration over the healthy-cluster value."""
        return self.total_local_batch / (self.cfg.dp * self.cfg.local_batch)

    @property
    def max_rel_iter_time(self) -> float:
        running = [r.rel_iter_time for r in self.replicas if r.running]
        return max(running) if running else 0.0

    @property
    def reclaimable_gpus(self) -> int:
        """Healthy GPUs not contributing: stranded by reduction or idled."""
        total = 0
        for r in self.replicas:
            if r.running:
                total += r.healthy_gpus - r.tp * self.cfg.pp
            else:
                total += r.healthy_gpus
        return total

    @property
    def boosted_replicas(self) -> int:
        return sum(1 for r in self.replicas if r.power_factor > 1.0)

    @property
    def boosted_domains(self) -> int:
        return self.boosted_replicas * self.cfg.domains_per_replica

    @property
    def mean_power_factor(self) -> float:
        """Average power factor over the training domains (idle draw = 1.0)."""
        dpr = self.cfg.domains_per_replica
        total = sum(r.power_factor * dpr for r in self.replicas)
        return total / (self.cfg.dp * dpr)


def apply_policy(
    state: ClusterState,
    cfg: ParallelConfig,
    policy: str,
    table: ReducedTpTable | None = None,
) -> PolicyDecision:
    if policy not in POLICIES:
        raise ValueError(f"unknown policy {policy!r}; expected one of {POLICIES}")
    table = table or default_table()
    placement = pack_failed_domains(state, cfg, table)
    replicas = []
    for eff, damaged, healthy in zip(
        placement.replica_tp, placement.replica_damaged, placement.replica_healthy
    ):
        idle = ReplicaDecision(eff, 0, 1.0, 0.0, damaged, healthy)
        if policy == DP_DROP:
            if damaged:
                replicas.append(idle)
            else:
                replicas.append(
                    ReplicaDecision(cfg.tp, cfg.local_batch, 1.0, 1.0, damaged, healthy)
                )
            continue
        if eff is DROPPED:
            replicas.append(idle)
        elif eff == cfg.tp:
            replicas.append(ReplicaDecision(eff, cfg.local_batch, 1.0, 1.0, damaged, healthy))
        else:
            row = table.plain_row(eff)
            if policy == NTP_PW:
                row = table.power_row(eff) or row
            replicas.append(
                ReplicaDecision(
                    eff, row.local_batch, row.power_factor, row.rel_iter_time, damaged, healthy
                )
            )
    return PolicyDecision(policy=policy, placement=placement, replicas=tuple(replicas), cfg=cfg)


def availability(
    state: ClusterState,
    cfg: ParallelConfig,
    policy: str,
    table: ReducedTpTable | None = None,
) -> float:
    """Fraction of healthy-cluster throughput the policy keeps on this state."""
    return apply_policy(state, cfg, policy, table).throughput_frac


def spare_domains_demand(decision: PolicyDecision) -> int:
    """Spare domains needed right now to restore the full minibatch.

    Spares activate as whole fresh replicas of dpr domains, each contributing
    the full local batch.
    """
    cfg = decision.cfg
    deficit = cfg.dp * cfg.local_batch - decision.total_local_batch
    if deficit <= 0:
        return 0
    return math.ceil(deficit / cfg.local_batch) * cfg.domains_per_replica


def spares_needed(
    trace: FailureTrace,
    cfg: ParallelConfig,
    policy: str,
    table: ReducedTpTable | None = None,
) -> int:
    """Minimum spare domain count sustaining the full minibatch over the trace."""
    table = table or default_table()
    peak = 0
    for _, _, cover in iter_intervals(trace):
        state = ClusterState(trace.cluster, up=cover == 0)
        decision = apply_policy(state, cfg, policy, table)
        peak = max(peak, spare_domains_demand(decision))
    return peak
