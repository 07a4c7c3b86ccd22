import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cenlab.graphs import (
    CycleError,
    Dag,
    MarkovNet,
    NoMatching,
    Permutation,
    dump_edge_list,
    find_isomorphism,
    has_blocking_zero_submatrix,
    intimate_neighbors,
    inverse_zero_pattern_closure,
    isomorphic_under,
    load_edge_list,
    moralize,
    nonzero_diagonal_permutation,
    preset,
    unshielded_colliders,
)


def E(*pairs):
    """1-based undirected edges -> canonical 0-based set."""
    return {(min(a, b) - 1, max(a, b) - 1) for a, b in pairs}


def all_networks(n):
    pairs = list(itertools.combinations(range(n), 2))
    for mask in range(1 << len(pairs)):
        yield MarkovNet(n, frozenset(p for k, p in enumerate(pairs) if mask >> k & 1))


def random_dag(rng, n, p=0.5):
    order = rng.permutation(n)
    edges = [(order[a], order[b]) for a in range(n) for b in range(a + 1, n) if rng.random() < p]
    return Dag.from_edges(n, edges)


# -- moralize ---------------------------------------------------------------

def test_moralize_y_structure_marries_parents():
    assert moralize(preset("y4")).edges == E((1, 3), (2, 3), (3, 4), (1, 2))


def test_moralize_chain_is_skeleton():
    assert moralize(preset("chain4")).edges == E((1, 2), (2, 3), (3, 4))


def test_moralize_fig2_adds_married_edge():
    m = moralize(preset("fig2"))
    assert m.edges == E((1, 2), (2, 3), (3, 4), (1, 5), (5, 6), (6, 4), (3, 6))


def test_moralize_contains_skeleton():
    rng = np.random.default_rng(0)
    for _ in range(200):
        g = random_dag(rng, int(rng.integers(1, 7)))
        assert g.skeleton().is_subgraph_of(moralize(g))


def test_cyclic_graph_rejected():
    with pytest.raises(CycleError):
        Dag.from_edges(3, [(0, 1), (1, 2), (2, 0)])
    with pytest.raises(ValueError):
        Dag.from_edges(2, [(0, 0)])


# -- intimate neighbors -------------------------------------------------------

def test_intimate_neighbors_fig1():
    m = moralize(preset("fig1"))
    psi = {i + 1: {j + 1 for j in intimate_neighbors(m, i)} for i in range(5)}
    assert psi == {1: {2}, 2: set(), 3: {2, 4}, 4: set(), 5: {4}}


def test_intimate_neighbors_fig2():
    m = moralize(preset("fig2"))
    assert intimate_neighbors(m, 3) == {2, 5}
    for i in (0, 1, 2, 4, 5):
        assert intimate_neighbors(m, i) == set()


def test_intimate_neighbors_empty():
    m = MarkovNet(4)
    assert all(intimate_neighbors(m, i) == set() for i in range(4))


@pytest.mark.parametrize("n", [1, 2, 3, 4, 5])
def test_neighbor_set_lemma_exhaustive(n):
    for m in all_networks(n):
        nb = [m.neighbors(i) | {i} for i in range(n)]
        for i, j in itertools.permutations(range(n), 2):
            assert (j in intimate_neighbors(m, i)) == (nb[i] <= nb[j] | {j})


def test_neighbor_set_lemma_random_n6():
    rng = np.random.default_rng(1)
    pairs = list(itertools.combinations(range(6), 2))
    for _ in range(500):
        m = MarkovNet(6, frozenset(p for p in pairs if rng.random() < 0.5))
        for i, j in itertools.permutations(range(6), 2):
            lhs = j in intimate_neighbors(m, i)
            rhs = (m.neighbors(i) | {i}) <= (m.neighbors(j) | {j})
            assert lhs == rhs


@pytest.mark.parametrize("n", [2, 3, 4, 5])
def test_intimate_closure_lemma(n):
    for m in all_networks(n):
        for i, j in itertools.combinations(range(n), 2):
            if m.neighbors(i) | {i} == m.neighbors(j) | {j}:
                assert intimate_neighbors(m, i) | {i} == intimate_neighbors(m, j) | {j}


# -- colliders / isomorphism ------------------------------------------------

def test_unshielded_colliders():
    assert unshielded_colliders(preset("y4")) == [(0, 2, 1)]
    assert unshielded_colliders(preset("chain4")) == []
    assert unshielded_colliders(Dag.from_edges(3, [(0, 1), (0, 2), (1, 2)])) == []


def test_isomorphic_under():
    chain = MarkovNet.from_edges(3, [(0, 1), (1, 2)])
    assert isomorphic_under(chain, chain, Permutation.identity(3))
    other = MarkovNet.from_edges(3, [(1, 0), (0, 2)])  # 2-1-3 relabelled
    assert isomorphic_under(chain, other, Permutation((1, 0, 2)))
    for perm in itertools.permutations(range(3)):
        assert not isomorphic_under(chain, MarkovNet(3), Permutation(perm))
    with pytest.raises(ValueError):
        isomorphic_under(chain, MarkovNet(4), Permutation.identity(3))


def test_find_isomorphism():
    m = moralize(preset("fig1"))
    rng = np.random.default_rng(3)
    perm = Permutation(tuple(rng.permutation(5)))
    relabelled = MarkovNet.from_edges(5, [(perm(i), perm(j)) for i, j in m.edges])
    found = find_isomorphism(m, relabelled)
    assert found is not None and isomorphic_under(m, relabelled, found)
    assert find_isomorphism(m, MarkovNet(5)) is None


def test_permutation_validation():
    with pytest.raises(ValueError):
        Permutation((0, 0, 1))
    p = Permutation((2, 0, 1))
    assert [p.inverse()(p(i)) for i in range(3)] == [0, 1, 2]


# -- matching lemmas ----------------------------------------------------------

def brute_blocking(pattern):
    n = len(pattern)
    for r in range(1, n + 1):
        for rows in itertools.combinations(range(n), r):
            free = [c for c in range(n) if not pattern[list(rows), c].any()]
            if r + len(free) > n:
                return True
    return False


def test_nonzero_diagonal_examples():
    assert nonzero_diagonal_permutation(np.eye(4)).map == (0, 1, 2, 3)
    assert nonzero_diagonal_permutation(np.fliplr(np.eye(4))).map == (3, 2, 1, 0)
    a = np.ones((3, 3))
    a[1] = 0
    with pytest.raises(NoMatching):
        nonzero_diagonal_permutation(a)


def test_nonzero_diagonal_random_invertible():
    rng = np.random.default_rng(5)
    for _ in range(1000):
        n = int(rng.integers(1, 7))
        a = rng.normal(size=(n, n)) * (rng.random((n, n)) < 0.5)
        a[np.arange(n), rng.permutation(n)] = rng.uniform(0.5, 2, n)
        if abs(np.linalg.det(a)) < 1e-8:
            continue
        p = nonzero_diagonal_permutation(a)
        assert all(abs(a[i, p(i)]) > 1e-6 for i in range(n))


def test_blocking_examples():
    assert not has_blocking_zero_submatrix(np.ones((4, 4), bool))
    assert not has_blocking_zero_submatrix(np.eye(4, dtype=bool))
    p = np.ones((4, 4), bool)
    p[np.ix_([0, 1], [1, 2, 3])] = False
    assert has_blocking_zero_submatrix(p)


@settings(max_examples=300, deadline=None)
@given(st.integers(1, 5).flatmap(lambda n: st.lists(st.booleans(), min_size=n * n, max_size=n * n)))
def test_blocking_matches_brute_force(bits):
    n = int(round(len(bits) ** 0.5))
    p = np.array(bits, bool).reshape(n, n)
    assert has_blocking_zero_submatrix(p) == brute_blocking(p)


def test_planted_blocking_submatrix_is_singular():
    rng = np.random.default_rng(7)
    for _ in range(300):
        n = int(rng.integers(2, 7))
        i = int(rng.integers(1, n))
        a = rng.normal(size=(n, n))
        rows = rng.choice(n, i + 1, replace=False)
        cols = rng.choice(n, n - i, replace=False)
        a[np.ix_(rows, cols)] = 0.0
        assert has_blocking_zero_submatrix(np.abs(a) > 1e-6)
        assert abs(np.linalg.det(a)) < 1e-9
        with pytest.raises(NoMatching):
            nonzero_diagonal_permutation(a)


# -- inverse zero pattern ---------------------------------------------------

def test_inverse_pattern_examples():
    m = moralize(preset("fig1"))
    p = inverse_zero_pattern_closure(m)
    assert p[1].tolist() == [False, True, False, False, False]
    assert (inverse_zero_pattern_closure(MarkovNet(4)) == np.eye(4, dtype=bool)).all()
    assert inverse_zero_pattern_closure(MarkovNet.complete(5)).all()


def test_inverse_pattern_preserved_by_inversion():
    rng = np.random.default_rng(11)
    pairs_cache = {}
    checked = 0
    while checked < 1000:
        n = int(rng.integers(1, 7))
        pairs = pairs_cache.setdefault(n, list(itertools.combinations(range(n), 2)))
        m = MarkovNet(n, frozenset(p for p in pairs if rng.random() < 0.6))
        pat = inverse_zero_pattern_closure(m)
        a = rng.normal(size=(n, n)) * pat + np.eye(n) * 0.1
        if np.linalg.cond(a) > 1e8:
            continue
        inv = np.linalg.inv(a)
        support = np.abs(inv) > 1e-9 * np.abs(inv).max()
        assert not (support & ~pat).any()
        checked += 1


# -- edge list ----------------------------------------------------------------

def test_edge_list_roundtrip():
    g = preset("fig2")
    assert load_edge_list(dump_edge_list(g)) == g
    m = moralize(g)
    assert load_edge_list(dump_edge_list(m)) == m
    assert dump_edge_list(preset("y4")).splitlines()[0] == "4"
    with pytest.raises(CycleError):
        load_edge_list("2\n0 1\n1 0\n")
