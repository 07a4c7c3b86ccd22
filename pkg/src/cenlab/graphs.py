"""Exact graph algorithms over latent index sets.

Vertices are 0-based integers. Directed graphs store parent sets, undirected
graphs store canonical ``(i, j)`` pairs with ``i < j``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np


class CycleError(ValueError):
    pass


class NoMatching(ValueError):
    """Raised when a matrix pattern admits no nonzero-diagonal permutation."""


@dataclass(frozen=True)
class Dag:
    n: int
    parents: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        object.__setattr__(self, "parents", tuple(tuple(sorted(set(p))) for p in self.parents))
        if len(self.parents) != self.n:
            raise ValueError(f"expected {self.n} parent sets, got {len(self.parents)}")
        for i, pa in enumerate(self.parents):
            for j in pa:
                if not 0 <= j < self.n:
                    raise ValueError(f"parent {j} of {i} out of range")
                if j == i:
                    raise ValueError(f"self-loop on {i}")
        self.topological_order()

    @classmethod
    def from_edges(cls, n: int, edges: Iterable[tuple[int, int]]) -> "Dag":
        """Build from ``(parent, child)`` pairs."""
        pa: list[set[int]] = [set() for _ in range(n)]
        for j, i in edges:
            if not (0 <= i < n and 0 <= j < n):
                raise ValueError(f"edge ({j}, {i}) out of range for n={n}")
            pa[i].add(j)
        return cls(n, tuple(tuple(sorted(p)) for p in pa))

    @classmethod
    def empty(cls, n: int) -> "Dag":
        return cls(n, tuple(() for _ in range(n)))

    @property
    def edges(self) -> list[tuple[int, int]]:
        return sorted((j, i) for i in range(self.n) for j in self.parents[i])

    def children(self, j: int) -> list[int]:
        return [i for i in range(self.n) if j in self.parents[i]]

    def adjacent(self, i: int, j: int) -> bool:
        return j in self.parents[i] or i in self.parents[j]

    def topological_order(self) -> list[int]:
        indeg = [len(p) for p in self.parents]
        kids = [[] for _ in range(self.n)]
        for i, pa in enumerate(self.parents):
            for j in pa:
                kids[j].append(i)
        ready = sorted(i for i in range(self.n) if indeg[i] == 0)
        order = []
        while ready:
            v = ready.pop(0)
            order.append(v)
            for c in kids[v]:
                indeg[c] -= 1
                if indeg[c] == 0:
                    ready.append(c)
            ready.sort()
        if len(order) != self.n:
            raise CycleError(f"graph has a directed cycle among {sorted(set(range(self.n)) - set(order))}")
        return order

    def adjacency_matrix(self) -> np.ndarray:
        """``A[i, j] = 1`` iff ``j -> i`` (row = child)."""
        a = np.zeros((self.n, self.n))
        for j, i in self.edges:
            a[i, j] = 1.0
        return a

    def skeleton(self) -> "MarkovNet":
        return MarkovNet.from_edges(self.n, self.edges)


@dataclass(frozen=True)
class MarkovNet:
    n: int
    edges: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        for i, j in self.edges:
            if not (0 <= i < j < self.n):
                raise ValueError(f"edge ({i}, {j}) is not a canonical pair for n={self.n}")
        object.__setattr__(self, "_size", len(self.edges))

    @classmethod
    def from_edges(cls, n: int, edges: Iterable[tuple[int, int]]) -> "MarkovNet":
        canon = set()
        for i, j in edges:
            if i == j:
                raise ValueError(f"self-loop on {i}")
            canon.add((min(i, j), max(i, j)))
        return cls(n, frozenset(canon))

    @classmethod
    def complete(cls, n: int) -> "MarkovNet":
        return cls(n, frozenset(itertools.combinations(range(n), 2)))

    @property
    def num_edges(self) -> int:
        return self._size

    def has_edge(self, i: int, j: int) -> bool:
        return (min(i, j), max(i, j)) in self.edges

    def neighbors(self, i: int) -> set[int]:
        out = set()
        for a, b in self.edges:
            if a == i:
                out.add(b)
            elif b == i:
                out.add(a)
        return out

    def sorted_edges(self) -> list[tuple[int, int]]:
        return sorted(self.edges)

    def is_subgraph_of(self, other: "MarkovNet") -> bool:
        return self.n == other.n and self.edges <= other.edges

    def adjacency_matrix(self) -> np.ndarray:
        a = np.zeros((self.n, self.n), dtype=bool)
        for i, j in self.edges:
            a[i, j] = a[j, i] = True
        return a


@dataclass(frozen=True)
class Permutation:
    """Bijection on ``{0..n-1}``; ``map[i]`` is the image of ``i``."""

    map: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "map", tuple(int(v) for v in self.map))
        if sorted(self.map) != list(range(len(self.map))):
            raise ValueError(f"not a permutation: {self.map}")

    @classmethod
    def identity(cls, n: int) -> "Permutation":
        return cls(tuple(range(n)))

    def __len__(self):
        return len(self.map)

    def __call__(self, i: int) -> int:
        return self.map[i]

    def inverse(self) -> "Permutation":
        inv = [0] * len(self.map)
        for i, v in enumerate(self.map):
            inv[v] = i
        return Permutation(tuple(inv))


def moralize(g: Dag) -> MarkovNet:
    """Skeleton of ``g`` plus an edge between every pair of co-parents."""
    edges = set(g.edges)
    for pa in g.parents:
        edges.update(itertools.combinations(pa, 2))
    return MarkovNet.from_edges(g.n, edges)


def intimate_neighbors(m: MarkovNet, i: int) -> set[int]:
    """Neighbors of ``i`` that are adjacent to every other neighbor of ``i``."""
    if not 0 <= i < m.n:
        raise ValueError(f"vertex {i} out of range")
    nbrs = m.neighbors(i)
    return {j for j in nbrs if all(m.has_edge(j, k) for k in nbrs if k != j)}


def unshielded_colliders(g: Dag) -> list[tuple[int, int, int]]:
    """Triples ``(i, k, j)`` with ``i -> k <- j`` and ``i, j`` non-adjacent, ``i < j``."""
    out = []
    for k in range(g.n):
        for i, j in itertools.combinations(g.parents[k], 2):
            if not g.adjacent(i, j):
                out.append((i, k, j))
    return sorted(out)


def isomorphic_under(m1: MarkovNet, m2: MarkovNet, p: Permutation) -> bool:
    if not (m1.n == m2.n == len(p)):
        raise ValueError(f"size mismatch: {m1.n}, {m2.n}, permutation of {len(p)}")
    if m1.num_edges != m2.num_edges:
        return False
    return all(m2.has_edge(p(i), p(j)) for i, j in m1.edges)


def find_isomorphism(m1: MarkovNet, m2: MarkovNet, max_n: int = 8) -> Permutation | None:
    """Exhaustive search; returns the lexicographically first witness or None."""
    if m1.n != m2.n:
        raise ValueError(f"size mismatch: {m1.n} vs {m2.n}")
    if m1.n > max_n:
        raise ValueError(f"exhaustive search limited to n <= {max_n}; supply a permutation")
    if m1.num_edges != m2.num_edges:
        return None
    for perm in itertools.permutations(range(m1.n)):
        p = Permutation(perm)
        if isomorphic_under(m1, m2, p):
            return p
    return None


def _max_matching(pattern: np.ndarray) -> list[int]:
    """Kuhn's augmenting-path matching. Returns ``col_of_row`` with -1 if unmatched."""
    n_rows, n_cols = pattern.shape
    row_of_col = [-1] * n_cols
    adj = [np.flatnonzero(pattern[r]).tolist() for r in range(n_rows)]

    def augment(r, seen):
        for c in adj[r]:
            if seen[c]:
                continue
            seen[c] = True
            if row_of_col[c] == -1 or augment(row_of_col[c], seen):
                row_of_col[c] = r
                return True
        return False

    for r in range(n_rows):
        augment(r, [False] * n_cols)
    col_of_row = [-1] * n_rows
    for c, r in enumerate(row_of_col):
        if r >= 0:
            col_of_row[r] = c
    return col_of_row


def nonzero_diagonal_permutation(a: np.ndarray, tol: float = 1e-6) -> Permutation:
    """Column permutation ``s`` with ``|a[i, s(i)]| > tol`` for every row ``i``."""
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    col_of_row = _max_matching(np.abs(a) > tol)
    if -1 in col_of_row:
        raise NoMatching(f"pattern is structurally singular (matched {sum(c >= 0 for c in col_of_row)} of {len(a)} rows)")
    return Permutation(tuple(col_of_row))


def has_blocking_zero_submatrix(pattern: np.ndarray) -> bool:
    """True iff some all-false block has ``|rows| + |cols| > n``.

    By König's theorem this is equivalent to the maximum matching on the
    true entries being smaller than ``n``.
    """
    pattern = np.asarray(pattern, dtype=bool)
    if pattern.ndim != 2 or pattern.shape[0] != pattern.shape[1]:
        raise ValueError(f"expected a square pattern, got shape {pattern.shape}")
    return -1 in _max_matching(pattern)


def inverse_zero_pattern_closure(m: MarkovNet) -> np.ndarray:
    """Pattern with ``(i, j)`` allowed iff ``i == j`` or ``j`` is an intimate neighbor of ``i``.

    Matrices supported on this pattern keep their zeros under powers and
    inversion.
    """
    p = np.eye(m.n, dtype=bool)
    for i in range(m.n):
        for j in intimate_neighbors(m, i):
            p[i, j] = True
    return p


# -- plain-text edge lists ---------------------------------------------------

def dump_edge_list(g: Dag | MarkovNet) -> str:
    lines = [str(g.n)]
    if isinstance(g, Dag):
        lines += [f"{j} {i}" for j, i in g.edges]
    else:
        lines += [f"{i} - {j}" for i, j in g.sorted_edges()]
    return "\n".join(lines) + "\n"


def load_edge_list(text: str) -> Dag | MarkovNet:
    """Parse an edge list. Undirected if any line uses ``i - j``; an edge-free
    file parses as a Dag."""
    lines = [ln.strip() for ln in text.splitlines() if ln.strip() and not ln.strip().startswith("#")]
    if not lines:
        raise ValueError("empty edge list")
    n = int(lines[0])
    directed, undirected = [], []
    for ln in lines[1:]:
        parts = ln.split()
        if len(parts) == 3 and parts[1] == "-":
            undirected.append((int(parts[0]), int(parts[2])))
        elif len(parts) == 2:
            directed.append((int(parts[0]), int(parts[1])))
        else:
            raise ValueError(f"cannot parse edge line {ln!r}")
    if directed and undirected:
        raise ValueError("edge list mixes directed and undirected edges")
    if undirected:
        return MarkovNet.from_edges(n, undirected)
    return Dag.from_edges(n, directed)


# -- presets -----------------------------------------------------------------

PRESETS: dict[str, tuple[int, Sequence[tuple[int, int]]]] = {
    # Z1 -> Z3 <- Z2, Z3 -> Z4
    "y4": (4, [(0, 2), (1, 2), (2, 3)]),
    "chain4": (4, [(0, 1), (1, 2), (2, 3)]),
    # Z1 -> Z2 -> Z4 <- Z3, Z4 -> Z5
    "fig1": (5, [(0, 1), (1, 3), (2, 3), (3, 4)]),
    # Z1 -> Z2 -> Z3 -> Z4, Z1 -> Z5 -> Z6 -> Z4
    "fig2": (6, [(0, 1), (1, 2), (2, 3), (0, 4), (4, 5), (5, 3)]),
    "empty4": (4, []),
}


def preset(name: str) -> Dag:
    try:
        n, edges = PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    return Dag.from_edges(n, edges)
