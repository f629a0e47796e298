"""Shard-map construction and reshard-plan properties."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ntpsim.shardmap import (
    POST_SYNC,
    PRE_SYNC,
    ShardMap,
    apply_plan,
    build_reshard_plan,
    build_shard_map,
    naive_contiguous_sync_volumes,
)


@st.composite
def triples(draw):
    n1 = draw(st.integers(1, 16))
    n2 = draw(st.integers(1, n1))
    k = draw(st.integers(n1, 512))
    return k, n1, n2


@given(triples())
@settings(max_examples=200, deadline=None)
def test_partition_complete_and_balanced(t):
    k, n1, n2 = t
    smap = build_shard_map(k, n1, n2)
    comp = np.concatenate([smap.comp_columns(r) for r in range(n1)])
    assert np.array_equal(np.sort(comp), np.arange(k))
    sync = np.concatenate([smap.sync_columns(r) for r in range(n2)])
    assert np.array_equal(np.sort(sync), np.arange(k))
    assert smap.comp_counts().max() - smap.comp_counts().min() <= 1
    assert smap.sync_counts().max() - smap.sync_counts().min() <= 1


@given(triples())
@settings(max_examples=200, deadline=None)
def test_sync_shards_contiguous(t):
    k, n1, n2 = t
    smap = build_shard_map(k, n1, n2)
    start = 0
    for r in range(n2):
        cols = smap.sync_columns(r)
        assert np.array_equal(cols, np.arange(start, start + len(cols)))
        start += len(cols)
    assert start == k


@given(triples())
@settings(max_examples=200, deadline=None)
def test_sync_rank_keeps_a_prefix_of_its_comp_shard(t):
    # each retained rank syncs its own columns first and receives the rest
    k, n1, n2 = t
    smap = build_shard_map(k, n1, n2)
    for r in range(n2):
        own = set(smap.comp_columns(r))
        got = smap.sync_columns(r)
        keep = [c for c in got if c in own]
        assert keep == list(got[: len(keep)])


@given(triples())
@settings(max_examples=200, deadline=None)
def test_plans_invert_each_other(t):
    k, n1, n2 = t
    smap = build_shard_map(k, n1, n2)
    pre = build_reshard_plan(smap, PRE_SYNC)
    post = build_reshard_plan(smap, POST_SYNC)
    assert np.array_equal(apply_plan(smap.comp_rank, pre), smap.sync_rank)
    assert np.array_equal(apply_plan(smap.sync_rank, post), smap.comp_rank)
    assert pre.total_cols_moved == post.total_cols_moved


@given(triples())
@settings(max_examples=200, deadline=None)
def test_offload_links_balanced(t):
    k, n1, n2 = t
    smap = build_shard_map(k, n1, n2)
    post = build_reshard_plan(smap, POST_SYNC)
    links = {(tr.src, tr.dst): len(tr.cols) for tr in post.transfers}
    for src in range(n2):
        vols = [links.get((src, dst), 0) for dst in range(n2, n1)]
        if vols:
            assert max(vols) - min(vols) <= 1


@given(triples())
@settings(max_examples=100, deadline=None)
def test_build_is_deterministic(t):
    k, n1, n2 = t
    a = build_shard_map(k, n1, n2)
    b = build_shard_map(k, n1, n2)
    assert np.array_equal(a.comp_rank, b.comp_rank)
    assert np.array_equal(a.sync_rank, b.sync_rank)


def test_equal_groups_need_no_resharding():
    smap = build_shard_map(96, 8, 8)
    assert build_reshard_plan(smap, PRE_SYNC).transfers == ()
    assert build_reshard_plan(smap, POST_SYNC).transfers == ()
    assert np.array_equal(smap.comp_rank, smap.sync_rank)


def test_contrast_case_counts_and_volumes():
    smap = build_shard_map(12000, 32, 30)
    assert set(smap.comp_counts()) == {375}
    assert set(smap.sync_counts()) == {400}
    post = build_reshard_plan(smap, POST_SYNC)
    assert post.total_cols_moved == 750
    assert post.max_cols_sent == 25
    assert post.max_cols_received == 375
    pre = build_reshard_plan(smap, PRE_SYNC)
    assert pre.total_cols_moved == 750
    assert pre.max_cols_sent == 375
    assert pre.max_cols_received == 25


def test_contrast_case_beats_naive_splits():
    naive = naive_contiguous_sync_volumes(12000, 32, 30)
    sizes = [size for rank in naive for _, size in rank]
    assert min(sizes) == 25 and max(sizes) == 375
    assert any(len(rank) > 1 for rank in naive)
    # the constructed map moves each offloaded column exactly once instead
    smap = build_shard_map(12000, 32, 30)
    post = build_reshard_plan(smap, POST_SYNC)
    moved = [c for tr in post.transfers for c in tr.cols]
    assert len(moved) == len(set(moved)) == 750
    sent = {src: 0 for src in range(30)}
    for tr in post.transfers:
        sent[tr.src] += len(tr.cols)
    assert set(sent.values()) == {25}


def test_invalid_triples_rejected():
    with pytest.raises(ValueError):
        build_shard_map(8, 4, 6)
    with pytest.raises(ValueError):
        build_shard_map(3, 4, 2)
    with pytest.raises(ValueError):
        build_shard_map(8, 0, 0)


def test_json_round_trip():
    smap = build_shard_map(100, 7, 5)
    again = ShardMap.from_json_dict(smap.to_json_dict())
    assert np.array_equal(again.comp_rank, smap.comp_rank)
    assert np.array_equal(again.sync_rank, smap.sync_rank)
    plan = build_reshard_plan(smap, PRE_SYNC)
    d = plan.to_json_dict()
    assert d["direction"] == PRE_SYNC
    assert len(d["transfers"]) == len(plan.transfers)


def test_offload_columns_dealt_round_robin():
    # 3 offload ranks receive the globally enumerated moved columns in turn
    smap = build_shard_map(60, 6, 3)
    post = build_reshard_plan(smap, POST_SYNC)
    received = {dst: [] for dst in range(3, 6)}
    for tr in post.transfers:
        received[tr.dst].extend(tr.cols)
    moved = sorted(c for cols in received.values() for c in cols)
    for i, dst in enumerate(range(3, 6)):
        assert sorted(received[dst]) == moved[i::3]
