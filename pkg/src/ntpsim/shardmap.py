"""Column-to-rank assignment for nonuniform tensor-parallel pairs.

A healthy TP group of n1 GPUs is paired with a reduced group of n2 <= n1
GPUs. The k partition columns (MLP columns/rows or attention heads) each
get a comp rank (who computes with the column) and a sync rank (who holds
its gradient during the pairwise allreduce with the reduced group). The
assignment keeps per-rank loads balanced within one column on both sides
and keeps each sync shard contiguous so it can pair 1-to-1 with the
reduced group's shard of the same index.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

PRE_SYNC = "pre_sync"
POST_SYNC = "post_sync"


def _balanced_sizes(k: int, n: int) -> np.ndarray:
    """Shard sizes for k columns over n ranks, remainder to the lowest ranks."""
    sizes = np.full(n, k // n, dtype=np.int64)
    sizes[: k % n] += 1
    return sizes


@dataclass(frozen=True)
class ShardMap:
    """Assignment of k partition columns to comp ranks and sync ranks.

    comp_rank[j] in [0, n1) owns column j for computation; sync_rank[j] in
    [0, n2) owns it during gradient synchronization. Ranks n2..n1-1 are
    offload ranks: they compute with columns but hand them off for sync.
    """

    k: int
    n1: int
    n2: int
    comp_rank: np.ndarray
    sync_rank: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "comp_rank", np.asarray(self.comp_rank, dtype=np.int64))
        object.__setattr__(self, "sync_rank", np.asarray(self.sync_rank, dtype=np.int64))

    def comp_columns(self, rank: int) -> np.ndarray:
        return np.flatnonzero(self.comp_rank == rank)

    def sync_columns(self, rank: int) -> np.ndarray:
        return np.flatnonzero(self.sync_rank == rank)

    def comp_counts(self) -> np.ndarray:
        return np.bincount(self.comp_rank, minlength=self.n1)

    def sync_counts(self) -> np.ndarray:
        return np.bincount(self.sync_rank, minlength=self.n2)

    def to_json_dict(self) -> dict:
        return {
            "k": self.k,
            "n1": self.n1,
            "n2": self.n2,
            "comp_rank": self.comp_rank.tolist(),
            "sync_rank": self.sync_rank.tolist(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict())

    @classmethod
    def from_json_dict(cls, d: dict) -> "ShardMap":
        return cls(
            k=int(d["k"]),
            n1=int(d["n1"]),
            n2=int(d["n2"]),
            comp_rank=np.asarray(d["comp_rank"], dtype=np.int64),
            sync_rank=np.asarray(d["sync_rank"], dtype=np.int64),
        )


@dataclass(frozen=True)
class Transfer:
    src: int
    dst: int
    cols: tuple[int, ...]


@dataclass(frozen=True)
class ReshardPlan:
    """Per-link column moves converting between comp and sync layouts."""

    direction: str
    transfers: tuple[Transfer, ...]

    @property
    def total_cols_moved(self) -> int:
        return sum(len(t.cols) for t in self.transfers)

    @property
    def max_cols_sent(self) -> int:
        sent: dict[int, int] = {}
        for t in self.transfers:
            sent[t.src] = sent.get(t.src, 0) + len(t.cols)
        return max(sent.values(), default=0)

    @property
    def max_cols_received(self) -> int:
        recv: dict[int, int] = {}
        for t in self.transfers:
            recv[t.dst] = recv.get(t.dst, 0) + len(t.cols)
        return max(recv.values(), default=0)

    def link_volumes(self) -> dict[tuple[int, int], int]:
        """Columns moved per ordered (src, dst) link."""
        return {(t.src, t.dst): len(t.cols) for t in self.transfers}

    def to_json_dict(self) -> dict:
        return {
            "direction": self.direction,
            "transfers": [
                {"src": t.src, "dst": t.dst, "cols": list(t.cols)} for t in self.transfers
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict())


def _validate_triple(k: int, n1: int, n2: int) -> None:
    if k <= 0 or n1 <= 0 or n2 <= 0:
        raise ValueError(f"k, n1, n2 must be positive, got ({k}, {n1}, {n2})")
    if n2 > n1:
        raise ValueError(f"reduced degree n2={n2} exceeds healthy degree n1={n1}")
    if n1 > k:
        raise ValueError(f"TP degree n1={n1} exceeds partition size k={k}")


def build_shard_map(k: int, n1: int, n2: int) -> ShardMap:
    """Assign k columns to comp ranks of an n1-GPU group and sync ranks of n2.

    Sync shards are contiguous on the n2 lowest ranks, larger shards first.
    Each sync rank keeps a prefix of its shard for computation, sized to its
    balanced comp load; the remaining columns are offloaded for computation
    to ranks n2..n1-1, dealt round-robin in global column order so every
    offload rank receives within one column of the others.

    Args:
        k: partition-dimension size (columns of A / rows of B / heads).
        n1: healthy TP degree.
        n2: reduced TP degree, n2 <= n1 <= k.

    Returns:
        ShardMap with comp_rank and sync_rank arrays of length k.
    """
    _validate_triple(k, n1, n2)

    sync_sizes = _balanced_sizes(k, n2)
    sync_starts = np.concatenate([[0], np.cumsum(sync_sizes)[:-1]])
    sync_rank = np.repeat(np.arange(n2, dtype=np.int64), sync_sizes)

    comp_rank = np.empty(k, dtype=np.int64)
    comp_caps = _balanced_sizes(k, n1)

    offloaded: list[int] = []
    for i in range(n2):
        start, size = int(sync_starts[i]), int(sync_sizes[i])
        keep = min(int(comp_caps[i]), size)
        comp_rank[start : start + keep] = i
        offloaded.extend(range(start + keep, start + size))

    n_offload = n1 - n2
    if offloaded and n_offload == 0:
        # unreachable for valid triples: with n1 == n2 every rank keeps its
        # whole shard (comp caps and sync sizes coincide)
        raise AssertionError("offloaded columns with no offload ranks")
    for idx, j in enumerate(offloaded):
        comp_rank[j] = n2 + idx % n_offload

    return ShardMap(k=k, n1=n1, n2=n2, comp_rank=comp_rank, sync_rank=sync_rank)


def build_reshard_plan(smap: ShardMap, direction: str) -> ReshardPlan:
    """Column transfers realizing the comp->sync (pre) or sync->comp (post) move.

    Transfers are grouped per ordered (src, dst) pair with ascending column
    lists, so adjacent columns can later be fused into contiguous messages.
    Columns whose comp and sync owner coincide never move.
    """
    if direction not in (PRE_SYNC, POST_SYNC):
        raise ValueError(f"direction must be {PRE_SYNC!r} or {POST_SYNC!r}, got {direction!r}")
    moving = np.flatnonzero(smap.comp_rank != smap.sync_rank)
    links: dict[tuple[int, int], list[int]] = {}
    for j in moving:
        if direction == PRE_SYNC:
            key = (int(smap.comp_rank[j]), int(smap.sync_rank[j]))
        else:
            key = (int(smap.sync_rank[j]), int(smap.comp_rank[j]))
        links.setdefault(key, []).append(int(j))
    transfers = tuple(
        Transfer(src=src, dst=dst, cols=tuple(sorted(cols)))
        for (src, dst), cols in sorted(links.items())
    )
    return ReshardPlan(direction=direction, transfers=transfers)


def apply_plan(ownership: np.ndarray, plan: ReshardPlan) -> np.ndarray:
    """Replay a plan against a column->rank ownership vector."""
    out = np.asarray(ownership).copy()
    for t in plan.transfers:
        cols = np.asarray(t.cols, dtype=np.int64)
        if not np.all(out[cols] == t.src):
            raise ValueError(f"transfer {t.src}->{t.dst} names columns not owned by {t.src}")
        out[cols] = t.dst
    return out


def naive_contiguous_sync_volumes(k: int, n1: int, n2: int) -> list[list[tuple[int, int]]]:
    """Sub-shard overlap sizes under contiguous sharding on both sides.

    This is the baseline the nonuniform map avoids: with plain contiguous
    shards of k/n1 and k/n2 columns, a reduced shard straddles healthy-shard
    boundaries and must synchronize unevenly split sub-shards over the same
    link. Returns, for each of the n2 reduced shards, the (healthy shard,
    overlap size) pairs it would synchronize with.
    """
    _validate_triple(k, n1, n2)
    healthy_sizes = _balanced_sizes(k, n1)
    reduced_sizes = _balanced_sizes(k, n2)
    healthy_bounds = np.concatenate([[0], np.cumsum(healthy_sizes)])
    reduced_bounds = np.concatenate([[0], np.cumsum(reduced_sizes)])

    out: list[list[tuple[int, int]]] = []
    for i in range(n2):
        lo, hi = int(reduced_bounds[i]), int(reduced_bounds[i + 1])
        pairs: list[tuple[int, int]] = []
        for h in range(n1):
            a, b = int(healthy_bounds[h]), int(healthy_bounds[h + 1])
            overlap = min(hi, b) - max(lo, a)
            if overlap > 0:
                pairs.append((h, overlap))
        out.append(pairs)
    return out


def attention_head_partition(heads: int, n: int) -> tuple[np.ndarray, float]:
    """Balanced contiguous head counts per rank and the load-imbalance factor.

    The imbalance factor is ceil(heads/n) / (heads/n): the slowdown of the
    most-loaded rank relative to a perfectly even split.
    """
    if heads <= 0 or n <= 0:
        raise ValueError(f"heads and n must be positive, got ({heads}, {n})")
    if n > heads:
        raise ValueError(f"TP degree n={n} exceeds head count {heads}")
    counts = _balanced_sizes(heads, n)
    imbalance = float(counts.max()) / (heads / n)
    return counts, imbalance
