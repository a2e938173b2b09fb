"""Exact inference on one side of a partition given the other side.

Conditioned on the complement, each side is a forest.  Messages are passed
leaf-to-root (the filtering pass), then either pushed back down to obtain
every node's conditional marginal or used to draw one exact joint sample from
the roots outward.

All messages live in the log domain and are max-normalised; the subtracted
constants are collected into the log-normaliser.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from functools import lru_cache
from typing import Mapping, Sequence

import numpy as np
from scipy.special import logsumexp

from .model import GridMrf, Partition, PartitionError, classify_side

NEG = -1e300  # stands in for log(0)


@dataclass(frozen=True, eq=False)
class SidePlan:
    """Static traversal of one side: preorder over a BFS forest.

    ``order[t]`` is a node id, ``parent_pos[t]`` the position of its parent in
    ``order`` (``-1`` for roots) and ``parent_slot[t]`` the neighbour slot of
    the parent in ``mrf.nbr[order[t]]``.
    """

    order: np.ndarray
    parent_pos: np.ndarray
    parent_slot: np.ndarray
    in_side: np.ndarray
    roots: tuple[int, ...]


def build_side_plan(mrf: GridMrf, nodes: Sequence[int]) -> SidePlan:
    nodes = sorted(int(i) for i in nodes)
    classify_side(mrf, nodes)  # raises on cycles
    inside = np.zeros(mrf.n_nodes, dtype=np.uint8)
    inside[nodes] = 1
    order: list[int] = []
    parent_pos: list[int] = []
    parent_slot: list[int] = []
    pos: dict[int, int] = {}
    roots = []
    for root in nodes:
        if root in pos:
            continue
        roots.append(root)
        pos[root] = len(order)
        order.append(root)
        parent_pos.append(-1)
        parent_slot.append(-1)
        queue = deque([root])
        while queue:
            u = queue.popleft()
            for v in mrf.neighbors(u):
                if not inside[v] or v in pos:
                    continue
                pos[v] = len(order)
                order.append(v)
                parent_pos.append(pos[u])
                parent_slot.append(int(np.flatnonzero(mrf.nbr[v] == u)[0]))
                queue.append(v)
    arr = lambda a, dt=np.int64: np.ascontiguousarray(np.array(a, dtype=dt))  # noqa: E731
    plan = SidePlan(arr(order), arr(parent_pos), arr(parent_slot), inside, tuple(roots))
    for a in (plan.order, plan.parent_pos, plan.parent_slot, plan.in_side):
        a.setflags(write=False)
    return plan


@lru_cache(maxsize=256)
def _cached_plans(mrf: GridMrf, partition: Partition) -> tuple[SidePlan, SidePlan]:
    return build_side_plan(mrf, partition.side1), build_side_plan(mrf, partition.side2)


def partition_plans(mrf: GridMrf, partition: Partition) -> tuple[SidePlan, SidePlan]:
    if len(partition.side1) + len(partition.side2) != mrf.n_nodes:
        raise PartitionError("partition does not cover this model's nodes")
    return _cached_plans(mrf, partition)


@dataclass(frozen=True, eq=False)
class ConditionedTree:
    """One side with the complement absorbed as evidence.

    Arrays are aligned with ``order`` (preorder); ``nodes`` is the sorted node
    list used for results.  ``edge_logpot[t][a, k] = log psi(x_t = a,
    x_parent = k)`` (unused for roots).
    """

    nodes: tuple[int, ...]
    order: np.ndarray
    parent_pos: np.ndarray
    effective_unary: np.ndarray
    edge_logpot: np.ndarray
    roots: tuple[int, ...]

    @property
    def adjacency(self) -> list[tuple[int, int]]:
        return [
            (int(self.order[p]), int(self.order[t]))
            for t, p in enumerate(self.parent_pos)
            if p >= 0
        ]

    @property
    def traversal(self) -> np.ndarray:
        """Children before parents."""
        return self.order[::-1]

    def by_node(self, per_order: np.ndarray) -> np.ndarray:
        """Reorder an ``order``-aligned array into sorted-node order."""
        return per_order[np.argsort(self.order, kind="stable")]


@dataclass(frozen=True, eq=False)
class MessageSet:
    """Upward pass results.

    ``up[t]`` is the node's own evidence plus all child messages;
    ``messages[t]`` is the max-normalised message from ``t`` to its parent.
    """

    up: np.ndarray
    messages: np.ndarray
    component_log_norm: tuple[float, ...]

    def message(self, tree: ConditionedTree, child: int) -> np.ndarray:
        t = int(np.flatnonzero(tree.order == child)[0])
        if tree.parent_pos[t] < 0:
            raise KeyError(f"node {child} is a root")
        return self.messages[t]


def _edge_logpots(mrf: GridMrf, plan: SidePlan) -> np.ndarray:
    k = mrf.n_states
    out = np.zeros((len(plan.order), k, k))
    for t, c in enumerate(plan.order):
        s = plan.parent_slot[t]
        if s < 0:
            continue
        table = mrf.pairwise[mrf.nbr_table[c, s]]
        out[t] = table if mrf.nbr_dir[c, s] == 0 else table.T
    return out


def absorb_evidence(mrf: GridMrf, plan: SidePlan, x: np.ndarray) -> np.ndarray:
    """Unary plus ``log psi(., x_j)`` from every cross-side neighbour ``j``."""
    eff = np.array(mrf.unary[plan.order], dtype=float)
    for t, c in enumerate(plan.order):
        for s in range(4):
            j = mrf.nbr[c, s]
            if j < 0 or plan.in_side[j]:
                continue
            table = mrf.pairwise[mrf.nbr_table[c, s]]
            eff[t] += table[:, x[j]] if mrf.nbr_dir[c, s] == 0 else table[x[j], :]
    return eff


def condition_side(mrf: GridMrf, partition: Partition, side: int, complement_assignment) -> ConditionedTree:
    """Fix the other side's labels and fold them into this side's unaries.

    ``complement_assignment`` is either a mapping ``{node: label}`` over the
    complement or a label sequence aligned with the complement's sorted nodes.
    """
    nodes = partition.side(side)
    other = partition.side(3 - side)
    plan = partition_plans(mrf, partition)[side - 1]
    x = np.zeros(mrf.n_nodes, dtype=np.int64)
    if isinstance(complement_assignment, Mapping):
        if set(int(k) for k in complement_assignment) != set(other):
            raise ValueError("assignment does not cover exactly the complementary side")
        for j, v in complement_assignment.items():
            x[int(j)] = int(v)
    else:
        vals = np.asarray(complement_assignment, dtype=np.int64).reshape(-1)
        if vals.size != len(other):
            raise ValueError(f"expected {len(other)} complement labels, got {vals.size}")
        x[list(other)] = vals
    if other and (x[list(other)].min() < 0 or x[list(other)].max() >= mrf.n_states):
        raise ValueError("complement label out of range")
    return conditioned_tree_from_plan(mrf, plan, x, nodes)


def conditioned_tree_from_plan(mrf: GridMrf, plan: SidePlan, x: np.ndarray, nodes=None) -> ConditionedTree:
    eff = np.maximum(absorb_evidence(mrf, plan, x), NEG)
    if nodes is None:
        nodes = tuple(sorted(int(i) for i in plan.order))
    return ConditionedTree(
        nodes=tuple(nodes),
        order=plan.order,
        parent_pos=plan.parent_pos,
        effective_unary=eff,
        edge_logpot=_edge_logpots(mrf, plan),
        roots=plan.roots,
    )


def upward_messages(tree: ConditionedTree) -> MessageSet:
    m, k = tree.effective_unary.shape
    up = tree.effective_unary.copy()
    msgs = np.zeros((m, k))
    norm = np.zeros(m)  # per-root accumulators, indexed by root position
    root_of = np.empty(m, dtype=np.int64)
    for t in range(m):
        p = tree.parent_pos[t]
        root_of[t] = t if p < 0 else root_of[p]
    for t in range(m - 1, -1, -1):
        p = tree.parent_pos[t]
        if p < 0:
            continue
        msg = logsumexp(up[t][:, None] + tree.edge_logpot[t], axis=0)
        top = msg.max()
        msgs[t] = msg - top
        norm[root_of[t]] += top
        up[p] += msgs[t]
    comp = tuple(float(norm[t] + logsumexp(up[t])) for t in range(m) if tree.parent_pos[t] < 0)
    return MessageSet(up=up, messages=msgs, component_log_norm=comp)


def _softmax(v: np.ndarray) -> np.ndarray:
    w = np.exp(v - v.max(axis=-1, keepdims=True))
    return w / w.sum(axis=-1, keepdims=True)


def marginals_in_order(tree: ConditionedTree, msgs: MessageSet) -> np.ndarray:
    full = msgs.up.copy()
    for t in range(len(full)):
        p = tree.parent_pos[t]
        if p < 0:
            continue
        # parent's belief with this child's own contribution removed
        outside = full[p] - msgs.messages[t]
        full[t] = msgs.up[t] + logsumexp(tree.edge_logpot[t] + outside[None, :], axis=1)
    return _softmax(full)


def node_conditional_marginals(tree: ConditionedTree, msgs: MessageSet) -> np.ndarray:
    """``p(x_i | x_complement, y)`` for every node, rows in sorted-node order."""
    return tree.by_node(marginals_in_order(tree, msgs))


def sample_from_log(v: np.ndarray, u: float) -> int:
    """Inverse-CDF draw from ``softmax(v)``; zero-mass labels are never chosen."""
    w = np.exp(v - v.max())
    cdf = np.cumsum(w)
    a = int(np.searchsorted(cdf, u * cdf[-1], side="right"))
    if a >= len(w):
        a = int(np.flatnonzero(w > 0)[-1])
    return a


def ffbs_in_order(tree: ConditionedTree, msgs: MessageSet, u: np.ndarray) -> np.ndarray:
    labels = np.empty(len(tree.order), dtype=np.int64)
    for t in range(len(tree.order)):
        p = tree.parent_pos[t]
        v = msgs.up[t] if p < 0 else msgs.up[t] + tree.edge_logpot[t][:, labels[p]]
        labels[t] = sample_from_log(v, u[t])
    return labels


def ffbs_sample(tree: ConditionedTree, msgs: MessageSet, rng: np.random.Generator) -> np.ndarray:
    """One exact joint draw of the side, labels in sorted-node order.

    Consumes exactly ``len(tree.nodes)`` uniforms from ``rng``, one per node in
    preorder.
    """
    u = rng.random(len(tree.order))
    return tree.by_node(ffbs_in_order(tree, msgs, u))


def conditioned_log_partition(tree: ConditionedTree, msgs: MessageSet) -> float:
    return float(sum(msgs.component_log_norm))


def conditional_log_energy(tree: ConditionedTree, labels_by_node) -> float:
    """Unnormalised conditional log-probability of one side assignment."""
    lab = np.asarray(labels_by_node, dtype=np.int64)
    by_pos = lab[np.searchsorted(np.asarray(tree.nodes), tree.order)]
    total = tree.effective_unary[np.arange(len(by_pos)), by_pos].sum()
    for t, p in enumerate(tree.parent_pos):
        if p >= 0:
            total += tree.edge_logpot[t][by_pos[t], by_pos[p]]
    return float(total)
