import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mrftrees.model import (
    CHECKERBOARD, COMB_TREE, CONNECTED_TREE, CUSTOM, DISCONNECTED, FOREST, ModelError, PartitionError,
    PotentialSpec, build_grid_mrf, checkerboard_partition, classify_side, comb_tree_partition,
    from_log_potentials, induced_edges, lattice_edges, unnormalized_log_joint, validate_partition,
)

from conftest import naive_log_joint, random_mrf


def zeros(rows, cols):
    return np.zeros((rows, cols), dtype=int)


def test_single_node_zero_strength():
    m = build_grid_mrf(1, 1, 3, PotentialSpec("potts", beta=1.0, alpha=0.0), zeros(1, 1))
    assert m.n_nodes == 1 and m.n_edges == 0
    assert np.all(m.unary == 0)


@pytest.mark.parametrize("rows,cols,expected", [(2, 2, 4), (5, 5, 40), (1, 7, 6), (3, 4, 17)])
def test_edge_count(rows, cols, expected):
    assert len(lattice_edges(rows, cols)) == expected == rows * (cols - 1) + cols * (rows - 1)


def test_edges_are_four_neighbour_lattice():
    m = build_grid_mrf(3, 4, 2, PotentialSpec(), zeros(3, 4))
    got = {tuple(e) for e in m.edges}
    want = set()
    for r in range(3):
        for c in range(4):
            for dr, dc in ((0, 1), (1, 0)):
                if r + dr < 3 and c + dc < 4:
                    want.add((r * 4 + c, (r + dr) * 4 + c + dc))
    assert got == want


def test_potts_potentials():
    obs = np.array([[1, 0]])
    m = build_grid_mrf(1, 2, 3, PotentialSpec("potts", beta=0.7, alpha=1.3), obs)
    np.testing.assert_array_equal(m.unary, [[0, 1.3, 0], [1.3, 0, 0]])
    np.testing.assert_array_equal(m.pairwise[0], 0.7 * np.eye(3))
    assert m.isotropic


def test_potts_tables_symmetric():
    m = build_grid_mrf(2, 2, 4, PotentialSpec("potts", beta=-0.3, alpha=0.2), zeros(2, 2))
    for t in m.pairwise:
        np.testing.assert_array_equal(t, t.T)


def test_arrays_are_read_only():
    m = random_mrf(2, 2, 2, 0)
    with pytest.raises(ValueError):
        m.unary[0, 0] = 1.0


def test_validation_errors():
    with pytest.raises(ModelError):
        build_grid_mrf(2, 2, 2, PotentialSpec(), zeros(2, 3))
    with pytest.raises(ModelError):
        build_grid_mrf(2, 2, 2, PotentialSpec(), np.full((2, 2), 2))
    with pytest.raises(ModelError):
        build_grid_mrf(2, 2, 1, PotentialSpec(), zeros(2, 2))
    with pytest.raises(ModelError):
        build_grid_mrf(1, 2, 2, PotentialSpec("potts", beta=np.inf), zeros(1, 2))
    with pytest.raises(ModelError):
        from_log_potentials(1, 2, zeros(1, 2), np.array([[0.0, np.nan], [0.0, 0.0]]), np.zeros((2, 2)))


def test_log_joint_trivial_cases():
    m = build_grid_mrf(2, 3, 3, PotentialSpec("potts", beta=0.0, alpha=0.0), zeros(2, 3))
    assert unnormalized_log_joint(m, [1, 2, 0, 0, 1, 2]) == 0.0
    m = build_grid_mrf(1, 2, 2, PotentialSpec("potts", beta=1.0, alpha=0.0), zeros(1, 2))
    assert unnormalized_log_joint(m, [0, 0]) == 1.0
    assert unnormalized_log_joint(m, [0, 1]) == 0.0


def test_log_joint_matches_naive_sum(rng):
    m = random_mrf(2, 2, 3, 4)
    for _ in range(20):
        x = rng.integers(0, 3, 4)
        assert unnormalized_log_joint(m, x) == pytest.approx(naive_log_joint(m, x), abs=1e-12)


def test_log_joint_per_edge_tables(rng):
    m = random_mrf(3, 3, 2, 9, per_edge=True)
    assert not m.isotropic and len(m.pairwise) == m.n_edges
    x = rng.integers(0, 2, 9)
    assert unnormalized_log_joint(m, x) == pytest.approx(naive_log_joint(m, x), abs=1e-12)


def test_log_joint_unary_shift():
    m = random_mrf(2, 3, 3, 2)
    shifted = from_log_potentials(2, 3, m.observations, m.unary + 2.5, m.pairwise, m.edge_table)
    x = [0, 1, 2, 2, 1, 0]
    assert unnormalized_log_joint(shifted, x) - unnormalized_log_joint(m, x) == pytest.approx(6 * 2.5, abs=1e-12)


def test_log_joint_rejects_bad_labels():
    m = random_mrf(1, 2, 2, 0)
    with pytest.raises(ModelError):
        unnormalized_log_joint(m, [0, 2])
    with pytest.raises(ModelError):
        unnormalized_log_joint(m, [0])


def test_log_joint_permutation_invariant(rng):
    m = random_mrf(3, 3, 3, 5)
    x = rng.integers(0, 3, 9)
    terms = [m.unary[i][x[i]] for i in range(9)]
    terms += [m.pairwise[m.edge_table[e]][x[i], x[j]] for e, (i, j) in enumerate(m.edges)]
    perm = rng.permutation(len(terms))
    assert sum(terms[p] for p in perm) == pytest.approx(unnormalized_log_joint(m, x), abs=1e-12)


def test_potential_spec_round_trip():
    spec = PotentialSpec("random_table", seed=3, scale=0.5, per_edge=True)
    assert PotentialSpec.from_dict(spec.to_dict()) == spec
    spec = PotentialSpec("potts", beta=0.25, alpha=2.0)
    assert PotentialSpec.from_dict(spec.to_dict()) == spec


# ---------------------------------------------------------------------------
# partitions


def m_of(rows, cols):
    return build_grid_mrf(rows, cols, 2, PotentialSpec(), zeros(rows, cols))


def test_checkerboard_2x2():
    p = checkerboard_partition(m_of(2, 2))
    assert p.side1 == (0, 3) and p.side2 == (1, 2)
    assert p.label == CHECKERBOARD and p.side_structure == (DISCONNECTED, DISCONNECTED)


def test_checkerboard_1x1_degenerate():
    p = checkerboard_partition(m_of(1, 1))
    assert p.side1 == (0,) and p.side2 == ()


def test_checkerboard_3x3():
    m = m_of(3, 3)
    p = checkerboard_partition(m)
    assert len(p.side1) == 5 and len(p.side2) == 4
    assert induced_edges(m, p.side1) == [] and induced_edges(m, p.side2) == []


def test_comb_5x5():
    m = m_of(5, 5)
    p = comb_tree_partition(m)
    assert len(p.side1) == 14 and len(p.side2) == 11
    assert p.label == COMB_TREE and p.side_structure == (CONNECTED_TREE, CONNECTED_TREE)
    assert set(range(5)) <= set(p.side1) and set(range(20, 25)) <= set(p.side2)


def test_comb_2x2_is_two_rows():
    p = comb_tree_partition(m_of(2, 2))
    assert p.side1 == (0, 1) and p.side2 == (2, 3)


def test_comb_single_row_falls_back():
    with pytest.warns(UserWarning):
        p = comb_tree_partition(m_of(1, 5))
    assert p.fallback and p.side_structure == (DISCONNECTED, DISCONNECTED)


@pytest.mark.parametrize("orientation", ["top", "bottom", "left", "right"])
def test_comb_orientations_are_trees(orientation):
    m = m_of(4, 6)
    p = comb_tree_partition(m, orientation)
    assert set(p.side1) | set(p.side2) == set(range(24)) and not set(p.side1) & set(p.side2)
    assert p.side_structure == (CONNECTED_TREE, CONNECTED_TREE)


def test_comb_bottom_is_top_swapped():
    m = m_of(5, 4)
    assert comb_tree_partition(m, "bottom") == comb_tree_partition(m, "top").swapped()


def _acyclic_connected(m, nodes):
    nodes = set(nodes)
    edges = induced_edges(m, nodes)
    if not nodes:
        return True, True
    adj = {v: [] for v in nodes}
    for i, j in edges:
        adj[i].append(j)
        adj[j].append(i)
    seen, stack = set(), [min(nodes)]
    while stack:
        v = stack.pop()
        if v not in seen:
            seen.add(v)
            stack.extend(adj[v])
    connected = seen == nodes
    # a connected graph is a tree iff |E| = |V| - 1
    return len(edges) == len(nodes) - (1 if connected else _n_components(adj)), connected


def _n_components(adj):
    seen, n = set(), 0
    for s in adj:
        if s in seen:
            continue
        n += 1
        stack = [s]
        while stack:
            v = stack.pop()
            if v not in seen:
                seen.add(v)
                stack.extend(adj[v])
    return n


def test_partitions_exhaustive_up_to_12():
    for rows in range(1, 13):
        for cols in range(1, 13):
            m = m_of(rows, cols)
            cb = checkerboard_partition(m)
            assert induced_edges(m, cb.side1) == [] and induced_edges(m, cb.side2) == []
            if rows < 2:
                continue
            p = comb_tree_partition(m)
            assert sorted(p.side1 + p.side2) == list(range(rows * cols))
            for side in (p.side1, p.side2):
                acyclic, connected = _acyclic_connected(m, side)
                assert acyclic
                if cols >= 2 and rows >= 3:
                    assert connected


def test_validate_rejects_full_2x2_with_cycle():
    m = m_of(2, 2)
    with pytest.raises(PartitionError) as err:
        validate_partition(m, [0, 1, 2, 3])
    cyc = err.value.cycle
    assert sorted(cyc) == [0, 1, 2, 3]
    ring = list(cyc) + [cyc[0]]
    for a, b in zip(ring, ring[1:]):
        assert b in m.neighbors(a)


def test_validate_middle_row_3x3():
    p = validate_partition(m_of(3, 3), [3, 4, 5])
    assert p.label == CUSTOM
    assert p.side_structure == (CONNECTED_TREE, FOREST)


def test_validate_checkerboard_evens():
    m = m_of(3, 3)
    p = validate_partition(m, [i for i in range(9) if (i // 3 + i % 3) % 2 == 0])
    assert p.side_structure == (DISCONNECTED, DISCONNECTED)


def test_validate_rejects_out_of_range():
    with pytest.raises(PartitionError):
        validate_partition(m_of(2, 2), [0, 7])


def test_classify_side_on_cycle_gives_witness():
    m = m_of(3, 3)
    with pytest.raises(PartitionError) as err:
        classify_side(m, [0, 1, 3, 4, 8])
    assert sorted(err.value.cycle) == [0, 1, 3, 4]


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.data())
def test_random_subsets_accepted_iff_acyclic(rows, cols, data):
    m = m_of(rows, cols)
    mask = data.draw(st.lists(st.booleans(), min_size=rows * cols, max_size=rows * cols))
    side1 = [i for i, b in enumerate(mask) if b]
    side2 = [i for i, b in enumerate(mask) if not b]
    ok = all(_acyclic_connected(m, s)[0] for s in (side1, side2))
    if ok:
        p = validate_partition(m, side1)
        assert p.side1 == tuple(side1) and p.side2 == tuple(side2)
    else:
        with pytest.raises(PartitionError) as err:
            validate_partition(m, side1)
        cyc = err.value.cycle
        assert len(cyc) >= 4 and (set(cyc) <= set(side1) or set(cyc) <= set(side2))
