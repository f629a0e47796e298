"""Spare capacity and power budgets when the minibatch cannot change.

Some training runs pin the global batch size. Then a damaged replica's
shortfall must come from somewhere: idle spare domains swapped in as whole
replicas, or extra power poured into the damaged replica. This script
measures how many spares each policy actually needs, and what the power
boost costs the fleet.
"""

import numpy as np

from ntpsim.failure import (
    DEFAULT_RATE_PER_GPU_DAY,
    Cluster,
    FailureModelConfig,
    generate_trace,
)
from ntpsim.perfmodel import min_boost_power, perf_factor
from ntpsim.policy import DP_DROP, NTP, NTP_PW, POLICIES, ParallelConfig, spares_needed
from ntpsim.simulator import FIXED, SimConfig, run

par = ParallelConfig(tp=32, pp=8, dp=128, domain_size=32,
                     local_batch=8, seq_len=16384)
cluster = Cluster(total_gpus=32768, domain_size=32)
model = FailureModelConfig(rate_per_gpu_day=DEFAULT_RATE_PER_GPU_DAY)

# how much boost does a shrunken replica need to hold full pace?
print("minimum power factor to hold the full batch at full pace:")
for n2 in (30, 28, 24):
    p = min_boost_power(32, n2)
    if p is None:
        print(f"  32 -> {n2} ranks: not reachable within the 1.3x cap")
    else:
        print(f"  32 -> {n2} ranks: {p:.2f}x power "
              f"(delivers {perf_factor(p):.4f}x compute)")

# peak spare demand over 45-day traces, a few seeds here for speed
# (the shipped spares_fixed_minibatch scenario runs all 20)
seeds = range(6)
print("\npeak spare domains needed over 45 days, per seed:")
print("  seed   dp-drop   ntp   ntp-pw")
needs = {p: [] for p in POLICIES}
for seed in seeds:
    trace = generate_trace(cluster, model, 45.0, seed)
    row = [spares_needed(trace, par, p) for p in POLICIES]
    for p, n in zip(POLICIES, row):
        needs[p].append(n)
    print(f"  {seed:4d} {row[0]:9d} {row[1]:5d} {row[2]:8d}")

# spares arrive as whole replicas, each worth local_batch samples.
# dp-drop loses the full batch of every dropped replica, so demand is one
# spare replica per dropped replica. ntp replicas keep running one sample
# short, so eight reduced replicas together cost a single spare replica.
print(f"\nntp peaks at {max(needs[NTP])} domains "
      f"(= {max(needs[NTP]) // par.domains_per_replica} replicas) because "
      "8 reduced replicas share one spare's batch;")
print("ntp-pw boosts its way to a full batch and needs none")

# with the spares it asked for, a fixed-minibatch run never pauses
trace = generate_trace(cluster, model, 45.0, seed=0)
for policy, spare in ((DP_DROP, needs[DP_DROP][0]), (NTP, needs[NTP][0]), (NTP_PW, 0)):
    cfg = SimConfig(cluster=cluster, parallel=par, failure=model, policy=policy,
                    minibatch_mode=FIXED, spare_domains=spare, duration_days=45.0)
    rep = run(cfg, trace=trace)
    print(f"  {policy:8s} + {spare:3d} spares: throughput "
          f"{rep.mean_throughput_frac:.4f}, paused {rep.pause_time_frac:.2%}, "
          f"mean fleet power {rep.mean_fleet_power:.4f}x")

# the power story: boosting a damaged replica raises fleet power by well
# under a percent, because at most a replica or two is boosted at a time
cfg = SimConfig(cluster=cluster, parallel=par, failure=model, policy=NTP_PW,
                minibatch_mode=FIXED, spare_domains=0, duration_days=45.0)
rep = run(cfg, trace=trace)
excess = rep.mean_fleet_power - 1.0
print(f"\nntp-pw mean fleet power excess over 45 days: {excess:.5f}x "
      f"({excess * cluster.total_gpus:.0f} GPU-equivalents)")
