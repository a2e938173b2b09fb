"""Grid Markov random fields and two-block node partitions.

Nodes are indexed in raster order, ``i = r * cols + c``.  Every lattice edge
is stored once as ``(i, j)`` with ``i < j`` and its log-potential table is
read as ``log psi[x_i, x_j]``.
"""
from __future__ import annotations

import warnings
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

POTTS = "potts"
RANDOM_TABLE = "random_table"

CHECKERBOARD = "checkerboard"
COMB_TREE = "comb_tree"
CUSTOM = "custom"

DISCONNECTED = "disconnected"
FOREST = "forest"
CONNECTED_TREE = "connected_tree"


class ModelError(ValueError):
    """Raised for malformed model definitions."""


class PartitionError(ValueError):
    """Raised when a node split cannot be sampled exactly by tree inference."""

    def __init__(self, message: str, cycle: Sequence[int] | None = None):
        super().__init__(message)
        self.cycle = list(cycle) if cycle is not None else None


@dataclass(frozen=True)
class PotentialSpec:
    """How to turn observations into unary and pairwise log-potentials.

    ``potts``: ``log phi(k, y) = alpha * [k == y]`` and
    ``log psi(a, b) = beta * [a == b]``.

    ``random_table``: ``unary_table[k, y]`` and ``pair_table[a, b]`` either
    given explicitly or drawn as standard normals from ``seed`` (scaled by
    ``scale``).  With ``per_edge`` every lattice edge gets its own table.
    """

    kind: str = POTTS
    beta: float = 1.0
    alpha: float = 1.0
    seed: int | None = None
    scale: float = 1.0
    per_edge: bool = False
    unary_table: np.ndarray | None = None
    pair_table: np.ndarray | None = None

    def to_dict(self) -> dict:
        out = {"kind": self.kind}
        if self.kind == POTTS:
            out.update(beta=float(self.beta), alpha=float(self.alpha))
        else:
            out.update(seed=self.seed, scale=float(self.scale), per_edge=bool(self.per_edge))
            if self.unary_table is not None:
                out["unary_table"] = np.asarray(self.unary_table).tolist()
            if self.pair_table is not None:
                out["pair_table"] = np.asarray(self.pair_table).tolist()
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "PotentialSpec":
        d = dict(d)
        kind = d.pop("kind", POTTS)
        for key in ("unary_table", "pair_table"):
            if d.get(key) is not None:
                d[key] = np.asarray(d[key], dtype=float)
        allowed = {"beta", "alpha", "seed", "scale", "per_edge", "unary_table", "pair_table"}
        unknown = set(d) - allowed
        if unknown:
            raise ModelError(f"unknown potential_spec fields: {sorted(unknown)}")
        return cls(kind=kind, **d)


def lattice_edges(rows: int, cols: int) -> np.ndarray:
    """4-neighbour edges of a ``rows x cols`` lattice as an ``(E, 2)`` array."""
    edges = []
    for r in range(rows):
        for c in range(cols):
            i = r * cols + c
            if c + 1 < cols:
                edges.append((i, i + 1))
            if r + 1 < rows:
                edges.append((i, i + cols))
    return np.array(edges, dtype=np.int64).reshape(-1, 2)


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class GridMrf:
    """A discrete MRF on a 4-neighbour lattice with observations folded in.

    ``unary`` has shape ``(N, K)``; ``pairwise`` has shape ``(T, K, K)`` with
    ``edge_table[e]`` selecting the table of edge ``e`` (``T == 1`` for an
    isotropic model).
    """

    rows: int
    cols: int
    n_states: int
    observations: np.ndarray
    unary: np.ndarray
    pairwise: np.ndarray
    edges: np.ndarray
    edge_table: np.ndarray
    # per-node neighbour view, width 4, padded with -1
    nbr: np.ndarray = field(repr=False)
    nbr_table: np.ndarray = field(repr=False)
    nbr_dir: np.ndarray = field(repr=False)

    @property
    def n_nodes(self) -> int:
        return self.rows * self.cols

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def isotropic(self) -> bool:
        return self.pairwise.shape[0] == 1

    def node(self, r: int, c: int) -> int:
        return r * self.cols + c

    def coords(self, i: int) -> tuple[int, int]:
        return divmod(int(i), self.cols)

    def neighbors(self, i: int) -> list[int]:
        return [int(j) for j in self.nbr[i] if j >= 0]

    def edge_log_potential(self, i: int, j: int) -> np.ndarray:
        """``M[a, b] = log psi(x_i = a, x_j = b)`` for adjacent ``i, j``."""
        for s in range(4):
            if self.nbr[i, s] == j:
                table = self.pairwise[self.nbr_table[i, s]]
                return table if self.nbr_dir[i, s] == 0 else table.T
        raise ModelError(f"nodes {i} and {j} are not adjacent")


def from_log_potentials(rows: int, cols: int, observations, unary, pairwise, edge_table=None) -> GridMrf:
    """Assemble a :class:`GridMrf` from already materialised log tables."""
    if rows < 1 or cols < 1:
        raise ModelError("rows and cols must be positive")
    n = rows * cols
    unary = np.asarray(unary, dtype=float)
    if unary.ndim != 2 or unary.shape[0] != n:
        raise ModelError(f"unary must have shape ({n}, K), got {unary.shape}")
    k = unary.shape[1]
    if k < 2:
        raise ModelError("n_states must be at least 2")
    obs = np.asarray(observations, dtype=np.int64).reshape(-1)
    if obs.size != n:
        raise ModelError(f"observations must have {n} entries, got {obs.size}")
    if obs.size and (obs.min() < 0 or obs.max() >= k):
        raise ModelError("observation label out of range")
    pairwise = np.asarray(pairwise, dtype=float)
    if pairwise.ndim == 2:
        pairwise = pairwise[None]
    if pairwise.ndim != 3 or pairwise.shape[1:] != (k, k):
        raise ModelError(f"pairwise must have shape (T, {k}, {k}), got {pairwise.shape}")
    if not (np.all(np.isfinite(unary)) and np.all(np.isfinite(pairwise))):
        raise ModelError("log-potentials must be finite")

    edges = lattice_edges(rows, cols)
    if edge_table is None:
        if pairwise.shape[0] == 1:
            edge_table = np.zeros(len(edges), dtype=np.int64)
        elif pairwise.shape[0] == len(edges):
            edge_table = np.arange(len(edges), dtype=np.int64)
        else:
            raise ModelError("need one shared pairwise table or one per edge")
    edge_table = np.asarray(edge_table, dtype=np.int64)
    if edge_table.shape != (len(edges),) or (len(edges) and (edge_table.min() < 0 or edge_table.max() >= pairwise.shape[0])):
        raise ModelError("edge_table does not match the lattice")

    nbr = np.full((n, 4), -1, dtype=np.int64)
    nbr_table = np.zeros((n, 4), dtype=np.int64)
    nbr_dir = np.zeros((n, 4), dtype=np.int64)
    fill = np.zeros(n, dtype=np.int64)
    for e, (i, j) in enumerate(edges):
        for a, b, d in ((i, j, 0), (j, i, 1)):
            s = fill[a]
            nbr[a, s] = b
            nbr_table[a, s] = edge_table[e]
            nbr_dir[a, s] = d
            fill[a] += 1

    return GridMrf(
        rows=rows,
        cols=cols,
        n_states=k,
        observations=_freeze(obs.reshape(rows, cols)),
        unary=_freeze(unary),
        pairwise=_freeze(pairwise),
        edges=_freeze(edges),
        edge_table=_freeze(edge_table),
        nbr=_freeze(nbr),
        nbr_table=_freeze(nbr_table),
        nbr_dir=_freeze(nbr_dir),
    )


def build_grid_mrf(rows: int, cols: int, n_states: int, spec: PotentialSpec, observations) -> GridMrf:
    """Build a grid MRF, materialising ``log phi(k, y_i)`` for every node."""
    if rows < 1 or cols < 1:
        raise ModelError("rows and cols must be positive")
    if n_states < 2:
        raise ModelError("n_states must be at least 2")
    obs = np.asarray(observations, dtype=np.int64)
    if obs.size != rows * cols:
        raise ModelError(f"observations shape {obs.shape} does not match {rows}x{cols}")
    obs = obs.reshape(-1)
    if obs.min() < 0 or obs.max() >= n_states:
        raise ModelError("observation label out of range")
    k = n_states
    n_edges = rows * (cols - 1) + cols * (rows - 1)

    if spec.kind == POTTS:
        if not (np.isfinite(spec.alpha) and np.isfinite(spec.beta)):
            raise ModelError("Potts strengths must be finite")
        unary_table = spec.alpha * np.eye(k)
        pairwise = (spec.beta * np.eye(k))[None]
    elif spec.kind == RANDOM_TABLE:
        rng = np.random.default_rng(spec.seed)
        n_tables = n_edges if spec.per_edge else 1
        if spec.unary_table is not None:
            unary_table = np.asarray(spec.unary_table, dtype=float)
        else:
            unary_table = spec.scale * rng.standard_normal((k, k))
        if spec.pair_table is not None:
            pairwise = np.asarray(spec.pair_table, dtype=float)
            if pairwise.ndim == 2:
                pairwise = pairwise[None]
        else:
            pairwise = spec.scale * rng.standard_normal((n_tables, k, k))
        if unary_table.shape != (k, k):
            raise ModelError(f"unary_table must be {k}x{k}")
    else:
        raise ModelError(f"unknown potential kind {spec.kind!r}")

    # unary_table is indexed [state, observation]
    unary = unary_table[:, obs].T
    return from_log_potentials(rows, cols, obs, unary, pairwise)


def unnormalized_log_joint(mrf: GridMrf, x) -> float:
    """``sum_i log phi(x_i, y_i) + sum_(i,j) log psi(x_i, x_j)``."""
    x = np.asarray(x, dtype=np.int64).reshape(-1)
    if x.size != mrf.n_nodes:
        raise ModelError(f"assignment must have {mrf.n_nodes} labels")
    if x.min() < 0 or x.max() >= mrf.n_states:
        raise ModelError("label out of range")
    total = mrf.unary[np.arange(mrf.n_nodes), x].sum()
    if mrf.n_edges:
        i, j = mrf.edges[:, 0], mrf.edges[:, 1]
        total += mrf.pairwise[mrf.edge_table, x[i], x[j]].sum()
    return float(total)


# ---------------------------------------------------------------------------
# partitions


@dataclass(frozen=True)
class Partition:
    side1: tuple[int, ...]
    side2: tuple[int, ...]
    side_structure: tuple[str, str]
    label: str
    fallback: bool = False

    def side(self, k: int) -> tuple[int, ...]:
        if k not in (1, 2):
            raise ValueError("side must be 1 or 2")
        return self.side1 if k == 1 else self.side2

    def swapped(self) -> "Partition":
        """Same split with the stage order reversed."""
        return Partition(self.side2, self.side1, self.side_structure[::-1], self.label, self.fallback)


def induced_edges(mrf: GridMrf, nodes: Iterable[int]) -> list[tuple[int, int]]:
    inside = set(int(i) for i in nodes)
    return [(int(i), int(j)) for i, j in mrf.edges if i in inside and j in inside]


def _components_or_cycle(mrf: GridMrf, nodes: Sequence[int]):
    """Return ``(components, cycle)``; ``cycle`` is a node list or ``None``."""
    inside = set(nodes)
    seen: dict[int, int] = {}
    parent: dict[int, int] = {}
    components = []
    for root in sorted(inside):
        if root in seen:
            continue
        comp = [root]
        seen[root] = root
        parent[root] = -1
        queue = deque([root])
        while queue:
            u = queue.popleft()
            for v in mrf.neighbors(u):
                if v not in inside or v == parent[u]:
                    continue
                if v in seen:
                    return None, _cycle_witness(parent, u, v)
                seen[v] = root
                parent[v] = u
                comp.append(v)
                queue.append(v)
        components.append(comp)
    return components, None


def _cycle_witness(parent: dict[int, int], u: int, v: int) -> list[int]:
    def path(a):
        out = [a]
        while parent[a] != -1:
            a = parent[a]
            out.append(a)
        return out

    pu, pv = path(u), path(v)
    common = set(pu) & set(pv)
    pu = pu[: next(k for k, a in enumerate(pu) if a in common) + 1]
    pv = pv[: next(k for k, a in enumerate(pv) if a in common)]
    return pu[::-1] + pv  # closes back to u via the edge (v, u)


def classify_side(mrf: GridMrf, nodes: Sequence[int]) -> str:
    components, cycle = _components_or_cycle(mrf, nodes)
    if cycle is not None:
        raise PartitionError(f"side contains the cycle {cycle}", cycle=cycle)
    if not induced_edges(mrf, nodes):
        return DISCONNECTED
    return CONNECTED_TREE if len(components) == 1 else FOREST


def _make(mrf: GridMrf, side1: Iterable[int], label: str, fallback: bool = False) -> Partition:
    s1 = tuple(sorted(set(int(i) for i in side1)))
    if s1 and (s1[0] < 0 or s1[-1] >= mrf.n_nodes):
        raise PartitionError("node index out of range")
    inside = set(s1)
    s2 = tuple(i for i in range(mrf.n_nodes) if i not in inside)
    structure = (classify_side(mrf, s1), classify_side(mrf, s2))
    return Partition(s1, s2, structure, label, fallback)


def checkerboard_partition(mrf: GridMrf) -> Partition:
    """Parity split: ``(r + c)`` even on side 1, odd on side 2."""
    side1 = [mrf.node(r, c) for r in range(mrf.rows) for c in range(mrf.cols) if (r + c) % 2 == 0]
    return _make(mrf, side1, CHECKERBOARD)


def comb_tree_partition(mrf: GridMrf, orientation: str = "top") -> Partition:
    """Two interlocking combs.

    For ``orientation="top"`` side 1 is the top row plus the even columns of
    the interior rows, side 2 the bottom row plus the odd interior columns.
    ``"bottom"`` swaps the stage order; ``"left"``/``"right"`` build the same
    comb on the transposed lattice (spine on the first/last column).
    """
    if orientation in ("top", "bottom"):
        rows, cols, at = mrf.rows, mrf.cols, mrf.node
    elif orientation in ("left", "right"):
        rows, cols = mrf.cols, mrf.rows
        at = lambda r, c: mrf.node(c, r)  # noqa: E731
    else:
        raise ValueError(f"unknown comb orientation {orientation!r}")
    if rows < 2:
        warnings.warn("comb partition needs at least two rows along the spine axis; using checkerboard")
        return _make(mrf, checkerboard_partition(mrf).side1, CHECKERBOARD, fallback=True)
    side1 = [at(0, c) for c in range(cols)]
    side1 += [at(r, c) for r in range(1, rows - 1) for c in range(0, cols, 2)]
    part = _make(mrf, side1, COMB_TREE)
    return part.swapped() if orientation in ("bottom", "right") else part


def validate_partition(mrf: GridMrf, side1: Iterable[int]) -> Partition:
    """Accept any split whose two induced subgraphs are forests."""
    return _make(mrf, side1, CUSTOM)
