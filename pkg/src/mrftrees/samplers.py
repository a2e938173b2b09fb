"""Markov chain drivers: plain Gibbs, two-block data augmentation, mixtures."""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np

from . import kernels
from .model import GridMrf, Partition, PartitionError, checkerboard_partition, comb_tree_partition
from .treeinfer import SidePlan, partition_plans

SCHEMES = ("pg", "cb", "ts", "mixture", "custom")


@dataclass
class ChainState:
    assignment: np.ndarray
    iteration: int
    rng: np.random.Generator

    def copy(self) -> "ChainState":
        return ChainState(self.assignment.copy(), self.iteration, self.rng)


@dataclass
class DaStepRecord:
    """Outcome of one augmentation step.

    ``marginals[i]`` is node ``i``'s exact conditional given the other side at
    the moment its side was sampled.
    """

    new_state: ChainState
    marginals: np.ndarray
    partition: Partition
    partition_index: int = 0

    @property
    def side1_marginals(self) -> np.ndarray:
        return self.marginals[list(self.partition.side1)]

    @property
    def side2_marginals(self) -> np.ndarray:
        return self.marginals[list(self.partition.side2)]


@lru_cache(maxsize=64)
def _scaled_tables(mrf: GridMrf) -> tuple[np.ndarray, ...]:
    """Max-scaled exponentiated potentials plus Potts-structure rows per table."""
    pmax = mrf.pairwise.max(axis=(1, 2))
    epair = np.exp(mrf.pairwise - pmax[:, None, None])
    eunary = np.exp(mrf.unary - mrf.unary.max(axis=1, keepdims=True))
    k = mrf.n_states
    pst = np.zeros((len(epair), 3))
    off_mask = ~np.eye(k, dtype=bool)
    for t, e in enumerate(epair):
        diag, off = np.diag(e), e[off_mask]
        if np.all(diag == diag[0]) and np.all(off == off[0]):
            pst[t] = (1.0, off[0], diag[0] - off[0])
    return tuple(np.ascontiguousarray(a) for a in (eunary, epair, pmax, pst))


def initial_state(mrf: GridMrf, seed) -> ChainState:
    """Start from the observed labels."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return ChainState(np.array(mrf.observations, dtype=np.int64).reshape(-1), 0, rng)


def _raster(mrf: GridMrf) -> np.ndarray:
    return np.arange(mrf.n_nodes, dtype=np.int64)


def _sweep(be, mrf: GridMrf, x, u, order, cond, store):
    eunary, epair, _, _ = _scaled_tables(mrf)
    be.gibbs_sweep(x, mrf.unary, eunary, mrf.pairwise, epair, mrf.nbr, mrf.nbr_table, mrf.nbr_dir, order, u, cond, store)


def _block(be, mrf: GridMrf, plan: SidePlan, x, u, marg, want_marg=True) -> float:
    eunary, epair, pmax, pst = _scaled_tables(mrf)
    return be.block_update(
        x, mrf.unary, eunary, mrf.pairwise, epair, pmax, pst, mrf.nbr, mrf.nbr_table, mrf.nbr_dir,
        plan.order, plan.parent_pos, plan.parent_slot, plan.in_side, u, marg, want_marg,
    )


def gibbs_sweep(mrf: GridMrf, state: ChainState, conditionals_out: np.ndarray | None = None,
                backend=None) -> ChainState:
    """One raster-order sweep of single-site conditional draws.

    If ``conditionals_out`` (shape ``(N, K)``) is given, it receives each
    site's full conditional at the moment it was resampled.
    """
    be = kernels.get_backend(backend)
    x = state.assignment.astype(np.int64, copy=True)
    store = conditionals_out is not None
    cond = conditionals_out if store else np.empty((0, mrf.n_states))
    _sweep(be, mrf, x, state.rng.random(mrf.n_nodes), _raster(mrf), cond, store)
    return ChainState(x, state.iteration + 1, state.rng)


def da_step(mrf: GridMrf, partition: Partition, state: ChainState, backend=None) -> DaStepRecord:
    """Draw side 1 given side 2, then side 2 given the new side 1."""
    if len(state.assignment) != mrf.n_nodes:
        raise PartitionError("state does not match the model")
    be = kernels.get_backend(backend)
    plan1, plan2 = partition_plans(mrf, partition)
    x = state.assignment.astype(np.int64, copy=True)
    marg = np.empty((mrf.n_nodes, mrf.n_states))
    u = state.rng.random(mrf.n_nodes)
    n1 = len(plan1.order)
    _block(be, mrf, plan1, x, u[:n1], marg)
    _block(be, mrf, plan2, x, u[n1:], marg)
    return DaStepRecord(ChainState(x, state.iteration + 1, state.rng), marg, partition)


def _selector(weights: Sequence[float], n: int) -> Callable[[np.random.Generator], int]:
    w = np.asarray(weights, dtype=float)
    if n == 0:
        raise ValueError("mixture needs at least one partition")
    if w.shape != (n,) or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
        raise ValueError("weights must be a probability vector matching the partitions")
    live = np.flatnonzero(w > 0)
    if len(live) == 1:
        only = int(live[0])
        return lambda rng: only  # degenerate mixture consumes no randomness
    cdf = np.cumsum(w)
    return lambda rng: min(int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right")), n - 1)


def mixture_step(mrf: GridMrf, partitions: Sequence[Partition], weights: Sequence[float],
                 state: ChainState, backend=None) -> DaStepRecord:
    pick = _selector(weights, len(partitions))(state.rng)
    rec = da_step(mrf, partitions[pick], state, backend=backend)
    rec.partition_index = pick
    return rec


# ---------------------------------------------------------------------------
# chain driver


@dataclass
class ChainSummary:
    scheme: str
    n_iters: int
    burn_in: int
    seed: object
    kernel_seconds: np.ndarray = field(repr=False)
    final_state: ChainState = field(repr=False)
    partition_counts: np.ndarray | None = None

    @property
    def total_kernel_seconds(self) -> float:
        return float(self.kernel_seconds.sum())


def scheme_partitions(mrf: GridMrf, scheme: str, partitions=None, weights=None):
    """Resolve a scheme name to ``(partitions, weights)``; ``pg`` gives ``None``."""
    if scheme == "pg":
        return None, None
    if scheme == "cb":
        return [checkerboard_partition(mrf)], [1.0]
    if scheme == "ts":
        return [comb_tree_partition(mrf, "top")], [1.0]
    if scheme == "mixture":
        if partitions is None:
            partitions = [comb_tree_partition(mrf, "top"), comb_tree_partition(mrf, "bottom")]
        if weights is None:
            weights = [1.0 / len(partitions)] * len(partitions)
        return list(partitions), list(weights)
    if scheme == "custom":
        if not partitions:
            raise ValueError("custom scheme needs partitions")
        return list(partitions), list(weights) if weights is not None else [1.0 / len(partitions)] * len(partitions)
    raise ValueError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")


def run_chain(
    mrf: GridMrf,
    scheme: str,
    n_iters: int,
    burn_in: int | None = None,
    seed=0,
    sinks: Sequence = (),
    partitions: Sequence[Partition] | None = None,
    weights: Sequence[float] | None = None,
    pg_rb: bool = False,
    checkpoint_every: int | None = None,
    on_checkpoint: Callable | None = None,
    backend=None,
) -> ChainSummary:
    """Run ``n_iters`` kernel applications and feed post-burn-in output to sinks.

    Each sink must provide ``add_state(x)`` and ``add_marginals(marg)`` (see
    :class:`~mrftrees.estimators.RbAccumulator`).  ``on_checkpoint(t, elapsed)``
    is called after every ``checkpoint_every`` post-burn-in samples and after
    the last one; ``elapsed`` is cumulative kernel time in seconds.
    """
    if burn_in is None:
        burn_in = n_iters // 10
    if n_iters < burn_in or burn_in < 0:
        raise ValueError("need n_iters >= burn_in >= 0")
    parts, w = scheme_partitions(mrf, scheme, partitions, weights)
    be = kernels.get_backend(backend)
    state = initial_state(mrf, seed)
    rng = state.rng
    x = state.assignment
    n, k = mrf.n_nodes, mrf.n_states
    marg = np.empty((n, k))
    times = np.zeros(n_iters)
    elapsed = 0.0
    counts = None

    if parts is None:
        order = _raster(mrf)
        store = bool(pg_rb)
        cond = marg if store else np.empty((0, k))
        def step():
            _sweep(be, mrf, x, rng.random(n), order, cond, store)
            return store
    else:
        plans = [partition_plans(mrf, p) for p in parts]
        pick = _selector(w, len(parts))
        counts = np.zeros(len(parts), dtype=np.int64)
        want = bool(sinks)
        def step():
            j = pick(rng)
            counts[j] += 1
            p1, p2 = plans[j]
            u = rng.random(n)
            n1 = len(p1.order)
            _block(be, mrf, p1, x, u[:n1], marg, want)
            _block(be, mrf, p2, x, u[n1:], marg, want)
            return want

    for it in range(n_iters):
        t0 = time.perf_counter()
        has_marg = step()
        times[it] = time.perf_counter() - t0
        elapsed += times[it]
        if it < burn_in:
            continue
        for sink in sinks:
            if has_marg:
                sink.add_marginals(marg)
            sink.add_state(x)
        t = it + 1 - burn_in
        if on_checkpoint is not None and checkpoint_every and (t % checkpoint_every == 0 or it == n_iters - 1):
            on_checkpoint(t, elapsed)

    state.iteration = n_iters
    return ChainSummary(scheme, n_iters, burn_in, seed, times, state, counts)
