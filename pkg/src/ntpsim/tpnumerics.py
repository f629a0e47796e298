"""Desk-scale dense execution of tensor-parallel layers and gradient sync.

Everything here is float64 numpy and single-process: shards are plain
array fragments, collectives are explicit loops. The point is to verify
the sharding algebra exactly. For an MLP block Z = GeLU(X A) B, column i
of A pairs with row i of B, so any partition of the k = ffn columns
across ranks leaves Z = sum_i Z_i unchanged. The nonuniform gradient
sync moves healthy-side gradient fragments into the reduced group's
contiguous layout, does a pairwise shard-by-shard reduction, and moves
the result back.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .shardmap import PRE_SYNC, ShardMap, build_reshard_plan

GELU_C = 0.044715
SQRT_2_OVER_PI = float(np.sqrt(2.0 / np.pi))


def gelu(x: np.ndarray) -> np.ndarray:
    """tanh-approximation GeLU: 0.5 x (1 + tanh(sqrt(2/pi)(x + 0.044715 x^3)))."""
    x = np.asarray(x, dtype=np.float64)
    return 0.5 * x * (1.0 + np.tanh(SQRT_2_OVER_PI * (x + GELU_C * x**3)))


def gelu_grad(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    u = SQRT_2_OVER_PI * (x + GELU_C * x**3)
    t = np.tanh(u)
    du = SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_C * x**2)
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t**2) * du


@dataclass(frozen=True)
class MlpLayer:
    """One MLP block: A is [hidden x ffn], B is [ffn x hidden]."""

    A: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        A = np.asarray(self.A, dtype=np.float64)
        B = np.asarray(self.B, dtype=np.float64)
        if A.ndim != 2 or B.ndim != 2 or A.shape[1] != B.shape[0] or A.shape[0] != B.shape[1]:
            raise ValueError(f"inconsistent MLP shapes {A.shape} / {B.shape}")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)

    @property
    def hidden(self) -> int:
        return self.A.shape[0]

    @property
    def ffn(self) -> int:
        return self.A.shape[1]

    @classmethod
    def random(cls, hidden: int, ffn: int | None = None, seed: int = 0) -> "MlpLayer":
        if ffn is None:
            ffn = 4 * hidden
        rng = np.random.default_rng(seed)
        return cls(A=rng.standard_normal((hidden, ffn)), B=rng.standard_normal((ffn, hidden)))


@dataclass(frozen=True)
class AttentionLayer:
    """Multi-head attention parameters, one [hidden x head_dim] block per head.

    wq/wk/wv are [H, hidden, head_dim]; wo is [H, head_dim, hidden]. All four
    matrices of a head stay co-located on whichever shard owns the head.
    """

    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray

    def __post_init__(self):
        for name in ("wq", "wk", "wv", "wo"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        if not (self.wq.shape == self.wk.shape == self.wv.shape):
            raise ValueError("wq/wk/wv shapes differ")
        H, hidden, head_dim = self.wq.shape
        if self.wo.shape != (H, head_dim, hidden):
            raise ValueError(f"wo shape {self.wo.shape} != {(H, head_dim, hidden)}")

    @property
    def heads(self) -> int:
        return self.wq.shape[0]

    @property
    def hidden(self) -> int:
        return self.wq.shape[1]

    @property
    def head_dim(self) -> int:
        return self.wq.shape[2]

    @classmethod
    def random(cls, heads: int, hidden: int, head_dim: int, seed: int = 0) -> "AttentionLayer":
        rng = np.random.default_rng(seed)
        return cls(
            wq=rng.standard_normal((heads, hidden, head_dim)),
            wk=rng.standard_normal((heads, hidden, head_dim)),
            wv=rng.standard_normal((heads, hidden, head_dim)),
            wo=rng.standard_normal((heads, head_dim, hidden)),
        )


def contiguous_assignment(k: int, n: int) -> list[np.ndarray]:
    """Contiguous balanced split of range(k) over n ranks, remainder first."""
    sizes = np.full(n, k // n, dtype=np.int64)
    sizes[: k % n] += 1
    bounds = np.concatenate([[0], np.cumsum(sizes)])
    return [np.arange(bounds[i], bounds[i + 1], dtype=np.int64) for i in range(n)]


def assignment_from_comp(smap: ShardMap) -> list[np.ndarray]:
    return [smap.comp_columns(r) for r in range(smap.n1)]


def assignment_from_sync(smap: ShardMap) -> list[np.ndarray]:
    return [smap.sync_columns(r) for r in range(smap.n2)]


class MlpReplica:
    """One TP replica of an MLP layer: per-rank column fragments plus gradients."""

    def __init__(self, layer: MlpLayer, assignment: list[np.ndarray]):
        cols = np.concatenate([np.asarray(a, dtype=np.int64) for a in assignment])
        if len(cols) != layer.ffn or len(np.unique(cols)) != layer.ffn:
            raise ValueError("assignment does not partition the ffn columns exactly once")
        self.layer = layer
        self.n = len(assignment)
        self.cols = [np.asarray(a, dtype=np.int64) for a in assignment]
        self.a_frags = [layer.A[:, a] for a in self.cols]
        self.b_frags = [layer.B[a, :] for a in self.cols]
        self.grad_a: list[np.ndarray] | None = None
        self.grad_b: list[np.ndarray] | None = None

    def dense_grads(self) -> tuple[np.ndarray, np.ndarray]:
        """Reassemble the per-rank gradient fragments into dense dA, dB."""
        if self.grad_a is None or self.grad_b is None:
            raise ValueError("replica holds no gradients")
        dA = np.zeros_like(self.layer.A)
        dB = np.zeros_like(self.layer.B)
        for a, ga, gb in zip(self.cols, self.grad_a, self.grad_b):
            dA[:, a] = ga
            dB[a, :] = gb
        return dA, dB


class AttentionReplica:
    """One TP replica of an attention layer: per-rank head ownership."""

    def __init__(self, layer: AttentionLayer, head_assignment: list[np.ndarray]):
        heads = np.concatenate([np.asarray(a, dtype=np.int64) for a in head_assignment])
        if len(heads) != layer.heads or len(np.unique(heads)) != layer.heads:
            raise ValueError("assignment does not partition the heads exactly once")
        self.layer = layer
        self.n = len(head_assignment)
        self.heads = [np.asarray(a, dtype=np.int64) for a in head_assignment]


def mlp_forward_dense(X: np.ndarray, layer: MlpLayer) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.shape[1] != layer.hidden:
        raise ValueError(f"X has {X.shape[1]} features, layer expects {layer.hidden}")
    return gelu(X @ layer.A) @ layer.B


def mlp_forward_tp(X: np.ndarray, replica: MlpReplica) -> np.ndarray:
    """Sum of per-rank partial outputs, evaluated in ascending rank order."""
    X = np.asarray(X, dtype=np.float64)
    if X.shape[1] != replica.layer.hidden:
        raise ValueError(f"X has {X.shape[1]} features, layer expects {replica.layer.hidden}")
    Z = np.zeros((X.shape[0], replica.layer.hidden))
    for A_i, B_i in zip(replica.a_frags, replica.b_frags):
        Z += gelu(X @ A_i) @ B_i
    return Z


def _softmax_rows(S: np.ndarray) -> np.ndarray:
    S = S - S.max(axis=-1, keepdims=True)
    E = np.exp(S)
    return E / E.sum(axis=-1, keepdims=True)


def _head_output(X: np.ndarray, layer: AttentionLayer, h: int) -> np.ndarray:
    Q = X @ layer.wq[h]
    K = X @ layer.wk[h]
    V = X @ layer.wv[h]
    S = (Q @ K.T) / np.sqrt(layer.head_dim)
    return (_softmax_rows(S) @ V) @ layer.wo[h]


def attention_forward_dense(X: np.ndarray, layer: AttentionLayer) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    Z = np.zeros((X.shape[0], layer.hidden))
    for h in range(layer.heads):
        Z += _head_output(X, layer, h)
    return Z


def attention_forward_tp(X: np.ndarray, replica: AttentionReplica) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    layer = replica.layer
    Z = np.zeros((X.shape[0], layer.hidden))
    for owned in replica.heads:
        for h in owned:
            Z += _head_output(X, layer, int(h))
    return Z


def mlp_backward(X: np.ndarray, layer: MlpLayer, upstream_grad: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Analytic parameter gradients of Z = GeLU(X A) B.

    With G the upstream gradient dL/dZ:
        dB = Y^T G            where Y = GeLU(X A)
        dA = X^T (G B^T * GeLU'(X A))
    """
    X = np.asarray(X, dtype=np.float64)
    G = np.asarray(upstream_grad, dtype=np.float64)
    if G.shape != (X.shape[0], layer.hidden):
        raise ValueError(f"upstream grad shape {G.shape} != {(X.shape[0], layer.hidden)}")
    H = X @ layer.A
    Y = gelu(H)
    dB = Y.T @ G
    dA = X.T @ ((G @ layer.B.T) * gelu_grad(H))
    return dA, dB


def mlp_backward_tp(X: np.ndarray, replica: MlpReplica, upstream_grad: np.ndarray) -> None:
    """Per-rank gradient fragments, stored on the replica.

    Column i of dA and row i of dB depend only on column i of A and row i
    of B (plus X and G), so each rank computes its fragments locally.
    """
    X = np.asarray(X, dtype=np.float64)
    G = np.asarray(upstream_grad, dtype=np.float64)
    grad_a, grad_b = [], []
    for A_i, B_i in zip(replica.a_frags, replica.b_frags):
        H_i = X @ A_i
        grad_b.append(gelu(H_i).T @ G)
        grad_a.append(X.T @ ((G @ B_i.T) * gelu_grad(H_i)))
    replica.grad_a = grad_a
    replica.grad_b = grad_b


def _reduce(op: str, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if op == "sum":
        return a + b
    if op == "mean":
        return (a + b) / 2.0
    raise ValueError(f"unknown reduction op {op!r}")


def uniform_grad_sync(replicas: list[MlpReplica], op: str = "sum") -> None:
    """Shard-by-shard reduction across identically sharded replicas, in place."""
    first = replicas[0]
    for r in replicas[1:]:
        if r.n != first.n or any(
            not np.array_equal(a, b) for a, b in zip(r.cols, first.cols)
        ):
            raise ValueError("replicas are not identically sharded")
    for rep in replicas:
        if rep.grad_a is None:
            raise ValueError("replica holds no gradients")
    for rank in range(first.n):
        acc_a = first.grad_a[rank].copy()
        acc_b = first.grad_b[rank].copy()
        for r in replicas[1:]:
            acc_a = _reduce(op, acc_a, r.grad_a[rank])
            acc_b = _reduce(op, acc_b, r.grad_b[rank])
        if op == "mean":
            # _reduce halves pairwise; redo as a true mean over all replicas
            acc_a = sum(r.grad_a[rank] for r in replicas) / len(replicas)
            acc_b = sum(r.grad_b[rank] for r in replicas) / len(replicas)
        for r in replicas:
            r.grad_a[rank] = acc_a.copy()
            r.grad_b[rank] = acc_b.copy()


def nonuniform_grad_sync(
    healthy: MlpReplica, reduced: MlpReplica, smap: ShardMap, op: str = "sum"
) -> None:
    """Gradient sync between an n1-way and an n2-way replica, in place.

    Three steps: (1) pre-sync reshard gathers the healthy side's gradient
    columns into the reduced group's contiguous n2-shard layout; (2) sync
    rank i pairwise-reduces with reduced-group shard i only; (3) post-sync
    reshard scatters the healthy side's result back to its comp layout.
    """
    if healthy.n != smap.n1 or reduced.n != smap.n2:
        raise ValueError(
            f"replica degrees ({healthy.n}, {reduced.n}) do not match map ({smap.n1}, {smap.n2})"
        )
    if healthy.layer.ffn != smap.k:
        raise ValueError(f"map is over k={smap.k} columns, layer has ffn={healthy.layer.ffn}")
    for r in range(smap.n1):
        if not np.array_equal(np.sort(healthy.cols[r]), smap.comp_columns(r)):
            raise ValueError("healthy replica is not sharded by the map's comp layout")
    for r in range(smap.n2):
        if not np.array_equal(np.sort(reduced.cols[r]), smap.sync_columns(r)):
            raise ValueError("reduced replica is not sharded by the map's sync layout")
    if healthy.grad_a is None or reduced.grad_a is None:
        raise ValueError("both replicas must hold gradients")

    hidden = healthy.layer.hidden
    plan = build_reshard_plan(smap, PRE_SYNC)

    # pre-sync reshard: assemble sync-layout gradient fragments on the healthy side
    sync_ga = []
    sync_gb = []
    col_pos = [  # column -> position inside its owner's fragment
        {int(c): i for i, c in enumerate(healthy.cols[r])} for r in range(smap.n1)
    ]
    for i in range(smap.n2):
        cols_i = smap.sync_columns(i)
        ga = np.empty((hidden, len(cols_i)))
        gb = np.empty((len(cols_i), hidden))
        for slot, c in enumerate(cols_i):
            src = int(smap.comp_rank[c])
            pos = col_pos[src][int(c)]
            ga[:, slot] = healthy.grad_a[src][:, pos]
            gb[slot, :] = healthy.grad_b[src][pos, :]
        sync_ga.append(ga)
        sync_gb.append(gb)
    assert plan.total_cols_moved == sum(
        1 for j in range(smap.k) if smap.comp_rank[j] != smap.sync_rank[j]
    )

    # pairwise reduce: sync rank i with reduced shard i, nothing else
    for i in range(smap.n2):
        red_pos = {int(c): t for t, c in enumerate(reduced.cols[i])}
        order = [red_pos[int(c)] for c in smap.sync_columns(i)]
        ga = _reduce(op, sync_ga[i], reduced.grad_a[i][:, order])
        gb = _reduce(op, sync_gb[i], reduced.grad_b[i][order, :])
        sync_ga[i] = ga
        sync_gb[i] = gb
        reduced.grad_a[i][:, order] = ga
        reduced.grad_b[i][order, :] = gb

    # post-sync reshard: scatter the reduced-layout result back to comp owners
    for i in range(smap.n2):
        cols_i = smap.sync_columns(i)
        for slot, c in enumerate(cols_i):
            dst = int(smap.comp_rank[c])
            pos = col_pos[dst][int(c)]
            healthy.grad_a[dst][:, pos] = sync_ga[i][:, slot]
            healthy.grad_b[dst][pos, :] = sync_gb[i][slot, :]
