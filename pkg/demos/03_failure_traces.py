"""Synthetic failure traces for a 32k-GPU fleet and their summary statistics.

Failures arrive as a Poisson process over the whole fleet, most of them
hardware with a multi-day repair, a minority software with an hours-long
restart. The default per-GPU rate is calibrated so that somewhere above
0.1% of the fleet is down about 81% of the time, which matches published
interruption counts for production runs at this scale.
"""

import numpy as np

from ntpsim.failure import (
    DEFAULT_RATE_PER_GPU_DAY,
    Cluster,
    FailureModelConfig,
    generate_trace,
    occupancy_above,
    peak_concurrent_failed,
    state_at,
)

cluster = Cluster(total_gpus=32768, domain_size=32)
model = FailureModelConfig(rate_per_gpu_day=DEFAULT_RATE_PER_GPU_DAY)
print(f"rate {DEFAULT_RATE_PER_GPU_DAY:.2e}/GPU-day "
      f"-> one interruption per {1 / DEFAULT_RATE_PER_GPU_DAY:.0f} GPU-days")

trace = generate_trace(cluster, model, duration_days=15.0, seed=0)
hw = sum(e.kind == "hardware" for e in trace.events)
print(f"\n15-day trace, seed 0: {len(trace.events)} events "
      f"({hw} hardware, {len(trace.events) - hw} software)")

for day in (1.0, 5.0, 10.0, 14.0):
    down = int((~state_at(trace, day).up).sum())
    print(f"  day {day:>4}: {down} GPUs down "
          f"({down / cluster.total_gpus:.3%} of fleet)")

print(f"  peak concurrently failed: {peak_concurrent_failed(trace)}")
print(f"  time with >0.1% down: {occupancy_above(trace, 0.001):.1%}")

# averaging over seeds smooths the single-trace noise
occs, peaks = [], []
for seed in range(20):
    tr = generate_trace(cluster, model, 15.0, seed)
    occs.append(occupancy_above(tr, 0.001))
    peaks.append(peak_concurrent_failed(tr))
print(f"\n20 seeds: occupancy above 0.1% = {np.mean(occs):.4f}, "
      f"mean peak failed = {np.mean(peaks):.1f}")

# a harsher regime: triple the arrival rate, but faster hardware repair.
# concurrent damage roughly doubles rather than tripling, because repair
# time and arrival rate trade off in the steady state
harsh = FailureModelConfig(
    rate_per_gpu_day=DEFAULT_RATE_PER_GPU_DAY,
    rate_multiplier=3.0,
    hw_recovery_days=3.0,
)
peaks3 = [peak_concurrent_failed(generate_trace(cluster, harsh, 15.0, s)) for s in range(20)]
print(f"3x rate, 3-day repair: mean peak failed = {np.mean(peaks3):.1f} "
      f"({np.mean(peaks3) / np.mean(peaks):.2f}x the base arm)")

# traces serialize to CSV and come back bit-exact, so a sweep can be
# archived alongside its outputs
from ntpsim.failure import FailureTrace

text = trace.to_csv()
again = FailureTrace.from_csv(text, cluster, 15.0)
assert again.events == trace.events
print(f"\nCSV round trip: {len(text.splitlines())} lines, exact")
