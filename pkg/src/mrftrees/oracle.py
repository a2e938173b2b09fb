"""Exact computations on small models.

Joint states are indexed row-major mixed-radix over nodes in raster order:
node 0 is the most significant digit, so ``pi.reshape((K,) * N)`` has axis
``i`` equal to node ``i``.  Block assignments are indexed the same way over
the block's sorted nodes.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .model import (
    POTTS,
    RANDOM_TABLE,
    GridMrf,
    Partition,
    PotentialSpec,
    build_grid_mrf,
    checkerboard_partition,
    comb_tree_partition,
)

DEFAULT_CAP = 20_000_000
KERNEL_CAP = 4096


class OracleError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class EnumeratedJoint:
    n_nodes: int
    n_states: int
    pi: np.ndarray
    log_Z: float

    @property
    def size(self) -> int:
        return self.pi.size

    @property
    def tensor(self) -> np.ndarray:
        return self.pi.reshape((self.n_states,) * self.n_nodes)


@dataclass(frozen=True, eq=False)
class KernelMatrix:
    K: np.ndarray
    scheme: str
    partition: Partition | None = None


def _log_tensor(mrf: GridMrf) -> np.ndarray:
    n, k = mrf.n_nodes, mrf.n_states
    logp = np.zeros((k,) * n)
    for i in range(n):
        shape = [1] * n
        shape[i] = k
        logp = logp + mrf.unary[i].reshape(shape)
    for e, (i, j) in enumerate(mrf.edges):
        shape = [1] * n
        shape[i] = shape[j] = k
        logp = logp + mrf.pairwise[mrf.edge_table[e]].reshape(shape)
    return logp


def enumerate_joint(mrf: GridMrf, cap: int = DEFAULT_CAP) -> EnumeratedJoint:
    size = mrf.n_states ** mrf.n_nodes
    if size > cap:
        raise OracleError(f"state space of {size} exceeds the enumeration cap {cap}")
    logp = _log_tensor(mrf).reshape(-1)
    log_z = float(logsumexp(logp))
    return EnumeratedJoint(mrf.n_nodes, mrf.n_states, np.exp(logp - log_z), log_z)


def exact_marginals(mrf: GridMrf, joint: EnumeratedJoint | None = None) -> np.ndarray:
    joint = joint or enumerate_joint(mrf)
    t = joint.tensor
    n = joint.n_nodes
    return np.stack([t.sum(axis=tuple(a for a in range(n) if a != i)) for i in range(n)])


def block_joint(joint: EnumeratedJoint, side1, side2) -> np.ndarray:
    """``P[a, b]`` over assignments of two disjoint node blocks."""
    side1, side2 = sorted(side1), sorted(side2)
    rest = [i for i in range(joint.n_nodes) if i not in set(side1) | set(side2)]
    t = joint.tensor.sum(axis=tuple(rest)) if rest else joint.tensor
    keep = sorted(side1 + side2)
    axes = [keep.index(i) for i in side1 + side2]
    k = joint.n_states
    return np.transpose(t, axes).reshape(k ** len(side1), k ** len(side2))


# ---------------------------------------------------------------------------
# transition kernels


def _check_kernel_size(joint: EnumeratedJoint) -> None:
    if joint.size > KERNEL_CAP:
        raise OracleError(f"kernel over {joint.size} states exceeds the cap {KERNEL_CAP}")


def block_resample_matrix(joint: EnumeratedJoint, block) -> np.ndarray:
    """Stochastic matrix of 'redraw ``block`` from its conditional given the rest'."""
    _check_kernel_size(joint)
    n, k = joint.n_nodes, joint.n_states
    block = sorted(int(i) for i in block)
    rest = [i for i in range(n) if i not in set(block)]
    perm = block + rest
    sb, sr = k ** len(block), k ** len(rest)
    table = np.transpose(joint.tensor, perm).reshape(sb, sr)
    cond = table / table.sum(axis=0, keepdims=True)  # cond[a', r]
    a, a2, r = np.meshgrid(np.arange(sb), np.arange(sb), np.arange(sr), indexing="ij")
    a_perm = np.zeros((joint.size, joint.size))
    a_perm[a * sr + r, a2 * sr + r] = cond[a2, r]
    to_raster = np.arange(joint.size).reshape((k,) * n).transpose(perm).reshape(-1)
    out = np.empty_like(a_perm)
    out[np.ix_(to_raster, to_raster)] = a_perm
    return out


def build_da_kernel(mrf: GridMrf, partition: Partition, joint: EnumeratedJoint | None = None) -> KernelMatrix:
    """Side 1 given side 2, then side 2 given the new side 1."""
    joint = joint or enumerate_joint(mrf)
    if len(partition.side1) + len(partition.side2) != joint.n_nodes:
        raise OracleError("partition does not match the model")
    k1 = block_resample_matrix(joint, partition.side1)
    k2 = block_resample_matrix(joint, partition.side2)
    return KernelMatrix(k1 @ k2, partition.label, partition)


def build_gibbs_kernel(mrf: GridMrf, scan_order=None, joint: EnumeratedJoint | None = None) -> KernelMatrix:
    joint = joint or enumerate_joint(mrf)
    order = range(joint.n_nodes) if scan_order is None else scan_order
    kern = np.eye(joint.size)
    for i in order:
        kern = kern @ block_resample_matrix(joint, [i])
    return KernelMatrix(kern, "pg")


def mixture_kernel(kernels, weights) -> KernelMatrix:
    w = np.asarray(weights, dtype=float)
    if w.shape != (len(kernels),) or np.any(w < 0) or abs(w.sum() - 1) > 1e-12:
        raise OracleError("weights must be a probability vector")
    return KernelMatrix(sum(wi * km.K for wi, km in zip(w, kernels)), "mixture")


def stationarity_error(kernel: KernelMatrix | np.ndarray, pi: np.ndarray) -> float:
    kern = kernel.K if isinstance(kernel, KernelMatrix) else kernel
    return float(np.abs(pi @ kern - pi).sum())


# ---------------------------------------------------------------------------
# term-by-term assemblies for the 2x2 lattice
#
# Nodes 0..3 are (0,0), (0,1), (1,0), (1,1).  Each factor is a single-node
# conditional of pi; the checkerboard kernel uses them directly and the
# two-tree kernel integrates out one extra old/new variable in its first and
# third factors.


def _conditional(t: np.ndarray, target: int, given: list[int]):
    """Return ``f(a, g) = pi(x_target = a | x_given = g)``, ``g`` a node->label dict."""
    n = t.ndim
    drop = tuple(i for i in range(n) if i != target and i not in given)
    m = t.sum(axis=drop, keepdims=True)
    cond = m / m.sum(axis=target, keepdims=True)

    def f(a, g):
        idx = [0] * n
        idx[target] = a
        for node, val in g.items():
            idx[node] = val
        return cond[tuple(idx)]

    return f


def _assemble_2x2(joint: EnumeratedJoint, factors) -> np.ndarray:
    k = joint.n_states
    states = [np.unravel_index(s, (k,) * 4) for s in range(joint.size)]
    kern = np.zeros((joint.size, joint.size))
    for s0, old in enumerate(states):
        for s1, new in enumerate(states):
            kern[s0, s1] = np.prod([f(old, new) for f in factors])
    return kern


def cb_kernel_from_factors(mrf: GridMrf, joint: EnumeratedJoint | None = None) -> np.ndarray:
    if (mrf.rows, mrf.cols) != (2, 2):
        raise OracleError("factor assembly is defined for the 2x2 lattice only")
    joint = joint or enumerate_joint(mrf)
    t = joint.tensor
    c1 = _conditional(t, 0, [1, 2, 3])
    c2 = _conditional(t, 1, [0, 3])
    c3 = _conditional(t, 2, [0, 1, 3])
    c4 = _conditional(t, 3, [1, 2])
    j1 = lambda o, n: c1(n[0], {1: o[1], 2: o[2], 3: o[3]})  # noqa: E731
    j2 = lambda o, n: c2(n[1], {0: n[0], 3: n[3]})  # noqa: E731
    j3 = lambda o, n: c3(n[2], {0: n[0], 1: n[1], 3: n[3]})  # noqa: E731
    j4 = lambda o, n: c4(n[3], {1: o[1], 2: o[2]})  # noqa: E731
    return _assemble_2x2(joint, [j1, j2, j3, j4])


def ts_kernel_from_factors(mrf: GridMrf, joint: EnumeratedJoint | None = None) -> np.ndarray:
    if (mrf.rows, mrf.cols) != (2, 2):
        raise OracleError("factor assembly is defined for the 2x2 lattice only")
    joint = joint or enumerate_joint(mrf)
    t = joint.tensor
    k = joint.n_states
    c1 = _conditional(t, 0, [1, 2, 3])
    c2_given34 = _conditional(t, 1, [2, 3])
    c2 = _conditional(t, 1, [0, 3])
    c3 = _conditional(t, 2, [0, 1, 3])
    c4_given12 = _conditional(t, 3, [0, 1])
    c4 = _conditional(t, 3, [1, 2])

    def k1(o, n):
        return sum(c1(n[0], {1: z, 2: o[2], 3: o[3]}) * c2_given34(z, {2: o[2], 3: o[3]}) for z in range(k))

    def k2(o, n):
        return c2(n[1], {0: n[0], 3: o[3]})

    def k3(o, n):
        return sum(c3(n[2], {0: n[0], 1: n[1], 3: z}) * c4_given12(z, {0: n[0], 1: n[1]}) for z in range(k))

    def k4(o, n):
        return c4(n[3], {1: n[1], 2: n[2]})

    return _assemble_2x2(joint, [k1, k2, k3, k4])


# ---------------------------------------------------------------------------
# spectral quantities


def _normalised(kern: np.ndarray, pi: np.ndarray) -> np.ndarray:
    sq = np.sqrt(pi)
    return sq[:, None] * kern / sq[None, :] - np.outer(sq, sq)


def forward_operator_norm(kernel: KernelMatrix | np.ndarray, pi: np.ndarray, power: int = 1,
                          tol: float = 1e-10) -> float:
    """Norm of ``h -> K^n h`` on zero-mean functions in ``L^2(pi)``."""
    kern = kernel.K if isinstance(kernel, KernelMatrix) else kernel
    err = stationarity_error(kern, pi)
    if err > tol:
        raise OracleError(f"pi is not stationary for this kernel (|piK - pi|_1 = {err:.3g})")
    m = _normalised(kern, pi)
    m = np.linalg.matrix_power(m, power) if power != 1 else m
    return float(min(np.linalg.svd(m, compute_uv=False)[0], 1.0))


def block_maximal_correlation(joint: EnumeratedJoint, partition: Partition) -> float:
    if not partition.side1 or not partition.side2:
        raise OracleError("maximal correlation needs two non-empty blocks")
    p = block_joint(joint, partition.side1, partition.side2)
    q = p / np.sqrt(np.outer(p.sum(axis=1), p.sum(axis=0)))
    sv = np.linalg.svd(q, compute_uv=False)
    return float(sv[1]) if len(sv) > 1 else 0.0


def block_mutual_information(joint: EnumeratedJoint, partition: Partition) -> float:
    """``I(X_side1; X_side2)`` in nats."""
    p = block_joint(joint, partition.side1, partition.side2)
    indep = np.outer(p.sum(axis=1), p.sum(axis=0))
    mask = p > 0
    return float(max(np.sum(p[mask] * np.log(p[mask] / indep[mask])), 0.0))


def step_conditional_entropy(kernel: KernelMatrix | np.ndarray, pi: np.ndarray) -> float:
    """``H(X^(1) | X^(0))`` for a stationary chain, in nats."""
    kern = kernel.K if isinstance(kernel, KernelMatrix) else kernel
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(kern > 0, kern * np.log(kern), 0.0)
    return float(-(pi @ terms.sum(axis=1)))


def var_conditional_expectation(joint: EnumeratedJoint, node: int, given, h=None) -> float:
    """``var_pi(E[h(X_node) | X_given])``; ``h`` maps labels to values."""
    given = sorted(int(g) for g in given)
    if node in given:
        raise OracleError("node must not be in its conditioning set")
    h = np.arange(joint.n_states, dtype=float) if h is None else np.asarray(h, dtype=float)
    if not given:
        return 0.0
    p = block_joint(joint, [node], given)  # (K, S)
    ps = p.sum(axis=0)
    cond = (h @ p) / ps
    mean = float(ps @ cond)
    return float(max(ps @ (cond - mean) ** 2, 0.0))


def marginal_block_chain(joint: EnumeratedJoint, partition: Partition, side: int = 1) -> np.ndarray:
    """Transition matrix of the chain seen on one block only."""
    p = block_joint(joint, partition.side1, partition.side2)
    if side == 2:
        p = p.T
    fwd = p / p.sum(axis=1, keepdims=True)  # other block given this block
    back = (p / p.sum(axis=0, keepdims=True)).T  # this block given other
    return fwd @ back


def autocovariance(kernel: KernelMatrix | np.ndarray, pi: np.ndarray, h: np.ndarray, n_max: int) -> np.ndarray:
    """``cov(h(x_n), h(x_0))`` under stationarity for ``n = 0..n_max``."""
    kern = kernel.K if isinstance(kernel, KernelMatrix) else kernel
    h = np.asarray(h, dtype=float)
    mean = float(pi @ h)
    out = np.empty(n_max + 1)
    g = h.copy()
    for n in range(n_max + 1):
        out[n] = float(pi @ (h * g)) - mean ** 2
        g = kern @ g
    return out


@dataclass
class GeometricRate:
    gaps: np.ndarray
    slope: float
    rate: float
    fit_range: tuple[int, int]


def geometric_rate_check(kernel: KernelMatrix | np.ndarray, pi: np.ndarray, event, p0, n_max: int = 60,
                         floor: float = 1e-11) -> GeometricRate:
    """Gaps ``|P0 K^n (A) - pi(A)|`` for ``n = 1..n_max`` and their log-linear decay.

    The slope is fitted by least squares on ``log gap_n`` over the run of
    steps, starting at ``n = 1``, that stays above ``floor`` (below it the gap
    is round-off).  A chain whose first gap is already below ``floor`` gets
    slope ``-inf`` and rate 0.
    """
    kern = kernel.K if isinstance(kernel, KernelMatrix) else kernel
    a = np.asarray(event, dtype=float)
    target = float(pi @ a)
    dist = np.asarray(p0, dtype=float)
    gaps = np.empty(n_max)
    for n in range(n_max):
        dist = dist @ kern
        gaps[n] = abs(float(dist @ a) - target)
    above = gaps > floor
    stop = int(np.argmin(above)) if not above.all() else n_max
    if stop < 2:
        return GeometricRate(gaps, -np.inf, 0.0, (1, stop))
    steps = np.arange(1, stop + 1)
    slope = float(np.polyfit(steps, np.log(gaps[:stop]), 1)[0])
    return GeometricRate(gaps, slope, float(np.exp(slope)), (1, stop))


# ---------------------------------------------------------------------------
# property sweep


FAMILIES = (POTTS, RANDOM_TABLE)


def random_model(seed: int, rows: int, cols: int, n_states: int = 2, family: str = POTTS) -> tuple[GridMrf, dict]:
    """Seeded model for the sweep; returns the model and its parameters."""
    fam = FAMILIES.index(family)
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), rows, cols, n_states, fam]))
    obs = rng.integers(0, n_states, size=(rows, cols))
    if family == POTTS:
        beta = float(rng.uniform(0.1, 1.5))
        alpha = float(rng.uniform(0.0, 1.0))
        spec = PotentialSpec(POTTS, beta=beta, alpha=alpha)
        params = {"beta": beta, "alpha": alpha}
    else:
        table_seed = int(rng.integers(2**31))
        spec = PotentialSpec(RANDOM_TABLE, seed=table_seed)
        params = {"table_seed": table_seed}
    return build_grid_mrf(rows, cols, n_states, spec, obs), params


def point_mass(joint: EnumeratedJoint, state_index: int = 0) -> np.ndarray:
    p0 = np.zeros(joint.size)
    p0[state_index] = 1.0
    return p0


def node_event(joint: EnumeratedJoint, node: int = 0, label: int = 0) -> np.ndarray:
    """Indicator over joint states of ``x_node == label``."""
    return (np.indices((joint.n_states,) * joint.n_nodes)[node] == label).reshape(-1).astype(float)


def diagnose_model(mrf: GridMrf, n_max: int = 60) -> dict:
    """All checkerboard-vs-tree comparisons for one enumerable model."""
    joint = enumerate_joint(mrf)
    cb = checkerboard_partition(mrf)
    ts = comb_tree_partition(mrf)
    out: dict = {}
    kernels = {"cb": build_da_kernel(mrf, cb, joint), "ts": build_da_kernel(mrf, ts, joint)}
    parts = {"cb": cb, "ts": ts}
    p0 = point_mass(joint, 0)
    event = node_event(joint, 0, 0)
    for name in ("cb", "ts"):
        kern = kernels[name]
        out[f"gamma_{name}"] = block_maximal_correlation(joint, parts[name])
        out[f"mi_{name}"] = block_mutual_information(joint, parts[name])
        out[f"h_{name}"] = step_conditional_entropy(kern, joint.pi)
        out[f"stationarity_{name}"] = stationarity_error(kern, joint.pi)
        out[f"norm_{name}"] = forward_operator_norm(kern, joint.pi)
        fit = geometric_rate_check(kern, joint.pi, event, p0, n_max)
        out[f"slope_{name}"] = fit.slope
        out[f"rate_{name}"] = fit.rate

    side_of = {}
    for name, part in parts.items():
        for s in (1, 2):
            for i in part.side(s):
                side_of[(name, i)] = part.side(3 - s)
    worst = -np.inf
    tests = [np.arange(mrf.n_states, dtype=float)] + list(np.eye(mrf.n_states))
    for i in range(mrf.n_nodes):
        for h in tests:
            v_ts = var_conditional_expectation(joint, i, side_of[("ts", i)], h)
            v_cb = var_conditional_expectation(joint, i, side_of[("cb", i)], h)
            worst = max(worst, v_ts - v_cb)
    out["prop1_max_excess"] = float(worst)

    out["thm1_pass"] = out["gamma_ts"] <= out["gamma_cb"] + 1e-9
    out["thm2_pass"] = out["mi_cb"] >= out["mi_ts"] - 1e-12 and out["h_ts"] >= out["h_cb"] - 1e-12
    out["prop1_pass"] = out["prop1_max_excess"] <= 1e-12
    out["rate_bound_pass"] = all(
        out[f"slope_{n}"] <= np.log(max(out[f"norm_{n}"], 1e-300)) + 0.02 for n in ("cb", "ts")
    )
    out["rate_contract_pass"] = all(out[f"rate_{n}"] <= out[f"norm_{n}"] + 0.02 for n in ("cb", "ts"))
    out["rate_order_pass"] = out["rate_ts"] <= out["rate_cb"]
    return out


def property_sweep(seeds, rows: int = 2, cols: int = 2, n_states: int = 2, family: str = POTTS,
                  n_max: int = 60) -> list[dict]:
    rows_out = []
    for seed in seeds:
        mrf, params = random_model(seed, rows, cols, n_states, family)
        row = {"seed": int(seed), "family": family, "rows": rows, "cols": cols, "n_states": n_states}
        row.update(params)
        row.update(diagnose_model(mrf, n_max))
        rows_out.append(row)
    return rows_out
