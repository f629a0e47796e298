"""Analytic performance model for reduced-TP operation.

Covers the power-factor to performance-factor curve, the minimum boost
needed to hide a TP reduction, relative iteration time of a reduced
replica, the pipeline-flush bubble ratio, and the reshard
communication-to-computation slowdown of the final backward pass.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .shardmap import PRE_SYNC, build_reshard_plan, build_shard_map

# perf-per-watt measured at these power factors; linear between anchors and
# linearly extrapolated up to the boost cap
POWER_ANCHORS: tuple[tuple[float, float], ...] = ((1.0, 1.000), (1.1, 0.972), (1.2, 0.935))
MAX_BOOST = 1.3

# reported boost operating points
POWER_GRID: tuple[float, ...] = (1.0, 1.15, 1.3)

# healthy and reduced operating points: (tp, local_batch, power_factor) -> rel iter time
TABLE_ROWS: tuple[tuple[int, int, float, float], ...] = (
    (32, 8, 1.0, 1.000),
    (30, 7, 1.0, 1.002),
    (30, 8, 1.15, 0.978),
    (28, 6, 1.0, 1.003),
    (28, 8, 1.3, 0.999),
)

# least-squares fit of IterTimeModel against TABLE_ROWS (see calibrate_iter_time_model)
DEFAULT_COMPUTE_SHARE = 0.8941350512253249
DEFAULT_BATCH_EXPONENT = 0.485827998855974

# final-backward slowdown = 1 + intercept + slope * ratio, ratio in bytes/FLOP;
# slope chosen so the prototype measurement range tops out at 4% slowdown
DEFAULT_SLOWDOWN_SLOPE = 100.0
DEFAULT_SLOWDOWN_INTERCEPT = 0.0
DEFAULT_SLOWDOWN_CAP = 1.06
PROTOTYPE_MAX_RATIO = 4.0e-4


@dataclass(frozen=True)
class PowerCurve:
    """Piecewise-linear perf-per-watt over power factor, extrapolated to the cap."""

    anchors: tuple[tuple[float, float], ...] = POWER_ANCHORS
    max_boost: float = MAX_BOOST

    def perf_per_watt(self, power_factor: float) -> float:
        p = float(power_factor)
        if not (self.anchors[0][0] <= p <= self.max_boost + 1e-12):
            raise ValueError(
                f"power factor {p} outside [{self.anchors[0][0]}, {self.max_boost}]"
            )
        xs = np.array([a[0] for a in self.anchors])
        ys = np.array([a[1] for a in self.anchors])
        if p <= xs[-1]:
            return float(np.interp(p, xs, ys))
        slope = (ys[-1] - ys[-2]) / (xs[-1] - xs[-2])
        return float(ys[-1] + slope * (p - xs[-1]))

    def perf_factor(self, power_factor: float) -> float:
        """Compute-throughput multiplier: power x perf-per-watt at that power."""
        return float(power_factor) * self.perf_per_watt(power_factor)


def perf_factor(power_factor: float, curve: PowerCurve | None = None) -> float:
    return (curve or PowerCurve()).perf_factor(power_factor)


def min_boost_power(
    n1: int,
    n2: int,
    head_imbalance: float = 1.0,
    curve: PowerCurve | None = None,
    grid: tuple[float, ...] = POWER_GRID,
) -> float | None:
    """Smallest grid power level whose perf factor covers the extra per-GPU work.

    A replica squeezed from n1 to n2 GPUs does n1/n2 more work per GPU
    (times any attention-head imbalance). Returns the smallest grid level at
    or above the continuous solution of perf_factor(p) = required, or None
    when even the boost cap cannot cover it.
    """
    if n2 > n1 or n2 <= 0:
        raise ValueError(f"need 0 < n2 <= n1, got ({n1}, {n2})")
    curve = curve or PowerCurve()
    required = (n1 / n2) * head_imbalance
    if required <= 1.0 + 1e-12:
        return min(grid)
    if curve.perf_factor(curve.max_boost) < required:
        return None
    lo, hi = 1.0, curve.max_boost
    for _ in range(80):  # bisection on the monotone perf-factor curve
        mid = 0.5 * (lo + hi)
        if curve.perf_factor(mid) < required:
            lo = mid
        else:
            hi = mid
    continuous = hi
    candidates = [g for g in grid if g >= continuous - 1e-9]
    if not candidates:
        return None
    return min(candidates)


@dataclass(frozen=True)
class IterTimeModel:
    """Relative iteration time of one replica as a function of its operating point.

    T(t, lb, p) = (base_tp/t) * (1 - C * (1 - (lb/base_lb)^(1-gamma) * imb / pf(p)))

    C is the compute share of the healthy iteration (the part that a power
    boost accelerates and that shrinks sublinearly with local batch, exponent
    gamma capturing lost GEMM efficiency at small batch); the 1-C remainder is
    communication, which scales only with the per-GPU work ratio base_tp/t.
    """

    base_tp: int = 32
    base_lb: int = 8
    compute_share: float = DEFAULT_COMPUTE_SHARE
    batch_exponent: float = DEFAULT_BATCH_EXPONENT
    head_imbalance: float = 1.0
    curve: PowerCurve = field(default_factory=PowerCurve)

    def rel_iter_time(self, reduced_tp: int, local_batch: int, power_factor: float) -> float:
        if reduced_tp <= 0 or reduced_tp > self.base_tp:
            raise ValueError(f"reduced_tp {reduced_tp} outside (0, {self.base_tp}]")
        if local_batch <= 0 or local_batch > self.base_lb:
            raise ValueError(f"local_batch {local_batch} outside (0, {self.base_lb}]")
        pf = self.curve.perf_factor(power_factor)
        batch = (local_batch / self.base_lb) ** (1.0 - self.batch_exponent)
        compute = batch * self.head_imbalance / pf
        return (self.base_tp / reduced_tp) * (
            1.0 - self.compute_share * (1.0 - compute)
        )


def replica_iter_time(
    reduced_tp: int,
    local_batch: int,
    power_factor: float,
    model: IterTimeModel | None = None,
) -> float:
    return (model or IterTimeModel()).rel_iter_time(reduced_tp, local_batch, power_factor)


def calibrate_iter_time_model(
    rows: tuple[tuple[int, int, float, float], ...] = TABLE_ROWS,
    base_tp: int = 32,
    base_lb: int = 8,
    curve: PowerCurve | None = None,
) -> tuple[IterTimeModel, float]:
    """Least-squares fit of (compute_share, batch_exponent) against operating points.

    Returns the fitted model and the max absolute row residual.
    """
    from scipy.optimize import least_squares

    curve = curve or PowerCurve()

    def resid(params):
        m = IterTimeModel(
            base_tp=base_tp,
            base_lb=base_lb,
            compute_share=params[0],
            batch_exponent=params[1],
            curve=curve,
        )
        return [m.rel_iter_time(t, lb, p) - target for t, lb, p, target in rows]

    sol = least_squares(resid, x0=[0.9, 0.5])
    model = IterTimeModel(
        base_tp=base_tp,
        base_lb=base_lb,
        compute_share=float(sol.x[0]),
        batch_exponent=float(sol.x[1]),
        curve=curve,
    )
    max_resid = float(np.max(np.abs(resid(sol.x))))
    return model, max_resid


def bubble_ratio(pp: int, microbatches: int) -> float:
    """Idle fraction of a pp-stage pipeline flushed every microbatches steps."""
    if pp < 1 or microbatches < 1:
        raise ValueError(f"pp and microbatches must be >= 1, got ({pp}, {microbatches})")
    return (pp - 1) / (microbatches + pp - 1)


def pp_transfer_scaling(n1: int, n2: int) -> float:
    """Cross-stage activation transfer time multiplier at reduced TP.

    The point-to-point exchange loses aggregate bandwidth in proportion to
    the missing GPUs; any intra-domain broadcast to realign layouts is
    treated as fully overlapped.
    """
    if n2 > n1 or n2 <= 0:
        raise ValueError(f"need 0 < n2 <= n1, got ({n1}, {n2})")
    return n1 / n2


def backward_slowdown(
    ratio: float,
    slope: float = DEFAULT_SLOWDOWN_SLOPE,
    intercept: float = DEFAULT_SLOWDOWN_INTERCEPT,
    cap: float = DEFAULT_SLOWDOWN_CAP,
) -> float:
    """Multiplicative slowdown of the final backward pass from reshard traffic.

    Linear in the communication-to-computation ratio (bytes resharded per GPU
    over backward FLOPs per GPU), clamped at a configured maximum.
    """
    if ratio < 0:
        raise ValueError(f"ratio must be non-negative, got {ratio}")
    return min(1.0 + intercept + slope * ratio, cap)


@dataclass(frozen=True)
class ModelShape:
    """Transformer dimensions needed for volume accounting."""

    hidden: int
    layers: int
    heads: int
    ffn: int | None = None

    @property
    def ffn_dim(self) -> int:
        return self.ffn if self.ffn is not None else 4 * self.hidden

    @property
    def head_dim(self) -> int:
        return self.hidden // self.heads

    def params_per_layer(self) -> int:
        return 2 * self.hidden * self.ffn_dim + 4 * self.hidden * self.hidden


def comm_comp_ratio(
    shape: ModelShape,
    n1: int,
    n2: int,
    pp: int,
    local_batch: int,
    seq_len: int,
    bytes_per_element: int = 2,
) -> float:
    """Reshard bytes per GPU over backward FLOPs per GPU for one pipeline stage.

    The numerator takes the busiest rank of the gradient reshard (one
    direction) summed over the stage's layers: MLP columns move an A column
    plus the matching B row, attention heads move their four projection
    blocks. The denominator is the stage's backward compute at 2 FLOPs per
    parameter per token per pass direction pair (4 x params x tokens).
    """
    if n1 == n2:
        return 0.0
    layers_per_stage = shape.layers / pp

    def max_cols_per_gpu(k: int) -> int:
        plan = build_reshard_plan(build_shard_map(k, n1, n2), PRE_SYNC)
        return max(plan.max_cols_sent, plan.max_cols_received)

    mlp_bytes = max_cols_per_gpu(shape.ffn_dim) * 2 * shape.hidden * bytes_per_element
    attn_bytes = (
        max_cols_per_gpu(shape.heads) * 4 * shape.hidden * shape.head_dim * bytes_per_element
    )
    numerator = (mlp_bytes + attn_bytes) * layers_per_stage

    tokens = local_batch * seq_len
    params_per_gpu = shape.params_per_layer() * layers_per_stage / n1
    denominator = 4.0 * params_per_gpu * tokens
    return numerator / denominator
