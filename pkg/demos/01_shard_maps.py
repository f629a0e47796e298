"""Shard maps for mismatched group sizes, and what they cost to traverse.

A layer with k columns is normally split evenly over n1 ranks. When a domain
loses GPUs, its replica runs the same layer over n2 < n1 ranks, and the two
layouts have to exchange gradients anyway. This script builds the map that
makes the exchange cheap and compares it with the naive contiguous split.
"""

import numpy as np

from ntpsim.shardmap import (
    POST_SYNC,
    PRE_SYNC,
    build_reshard_plan,
    build_shard_map,
    naive_contiguous_sync_volumes,
)

# a small map first, so the structure is visible by eye
k, n1, n2 = 24, 6, 4
smap = build_shard_map(k, n1, n2)
print(f"k={k} columns, {n1} healthy ranks vs {n2} reduced ranks")
for r in range(n1):
    tag = "sync" if r < n2 else "offload"
    print(f"  comp rank {r} ({tag}): cols {[int(c) for c in smap.comp_columns(r)]}")
for r in range(n2):
    print(f"  sync rank {r}: cols {[int(c) for c in smap.sync_columns(r)]}")

# every reduced-side shard is a contiguous run, and the healthy ranks that
# survive the shrink keep a prefix of it, so only the offloaded remainder
# ever crosses a link
pre = build_reshard_plan(smap, PRE_SYNC)
post = build_reshard_plan(smap, POST_SYNC)
print(f"\npre-sync:  {pre.total_cols_moved} cols move, "
      f"max {pre.max_cols_sent} sent / {pre.max_cols_received} received")
print(f"post-sync: {post.total_cols_moved} cols move, "
      f"max {post.max_cols_sent} sent / {post.max_cols_received} received")

# the flagship-size case: 12000 ffn columns, one domain down 2 GPUs
smap = build_shard_map(12000, 32, 30)
post = build_reshard_plan(smap, POST_SYNC)
print(f"\nk=12000, 32 -> 30 ranks:")
print(f"  comp shards: {smap.comp_counts().min()} cols each, "
      f"sync shards: {smap.sync_counts().min()} cols each")
print(f"  {post.total_cols_moved} of 12000 columns relocate "
      f"({post.total_cols_moved / 12000:.1%})")
print(f"  each surviving rank ships {post.max_cols_sent}, "
      f"each offload rank absorbs {post.max_cols_received}")

# contrast: keep both layouts naively contiguous and the reduced shards
# straddle healthy-shard boundaries, splitting into ragged sub-shards
naive = naive_contiguous_sync_volumes(12000, 32, 30)
sizes = sorted({s for rank in naive for _, s in rank})
split = sum(len(rank) > 1 for rank in naive)
print(f"\nnaive contiguous layout: {split} of 30 reduced shards straddle a")
print(f"boundary, sub-shard sizes range {sizes[0]}..{sizes[-1]}")

# round trip: applying the two plans in sequence restores the comp layout
from ntpsim.shardmap import apply_plan

ownership = smap.comp_rank.copy()
ownership = apply_plan(ownership, build_reshard_plan(smap, PRE_SYNC))
assert np.array_equal(ownership, smap.sync_rank)
ownership = apply_plan(ownership, post)
assert np.array_equal(ownership, smap.comp_rank)
print("\nreshard round trip restores the original ownership, exactly")
