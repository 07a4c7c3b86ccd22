"""Simulator-side theory checks. None of these needs a trained model."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .density import (
    LatentDensity,
    check_saf_sucf,
    markov_net_from_density,
    path_cancellation_instance,
    precision_ci_oracle,
    sample_generic_points,
    sufficient_change_rank,
)
from .graphs import (
    Dag,
    MarkovNet,
    NoMatching,
    has_blocking_zero_submatrix,
    intimate_neighbors,
    inverse_zero_pattern_closure,
    moralize,
    nonzero_diagonal_permutation,
)
from .semgen import LinearSemSpec, sample_domain_params


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: dict = field(default_factory=dict)

    def line(self) -> str:
        extras = ", ".join(f"{k}={v}" for k, v in self.detail.items() if not isinstance(v, (list, dict)))
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {extras}"


def random_dag(n: int, rng: np.random.Generator, p: float = 0.5) -> Dag:
    order = rng.permutation(n)
    edges = [(int(order[a]), int(order[b])) for a, b in itertools.combinations(range(n), 2) if rng.random() < p]
    return Dag.from_edges(n, edges)


def moralization_suite(count: int = 1000, seed: int = 0, domains: int = 5, max_n: int = 5) -> CheckResult:
    """Density-derived Markov net against ``moralize`` on random Gaussian SEMs.

    Each instance pools ``domains`` independently drawn parameter sets so an
    accidental near-cancellation in one domain cannot hide an edge.
    """
    rng = np.random.default_rng(seed)
    mismatches = []
    for k in range(count):
        n = int(rng.integers(2, max_n + 1))
        dag = random_dag(n, rng)
        spec = LinearSemSpec(dag, "gaussian")
        dens = [LatentDensity(spec, p) for p in sample_domain_params(spec, domains, seed * 100_003 + k)]
        pts = sample_generic_points(dens[0], 1, rng)
        if markov_net_from_density(dens, pts) != moralize(dag):
            mismatches.append(k)
    return CheckResult("moralization", not mismatches, {"instances": count, "matched": count - len(mismatches), "mismatches": mismatches})


def path_cancellation_check() -> CheckResult:
    ld = path_cancellation_instance()
    dag = ld.spec.dag
    net = markov_net_from_density([ld], [np.zeros(dag.n)])
    moral = moralize(dag)
    strict = net.is_subgraph_of(moral) and net != moral
    saf_ok, sucf_ok, violations = check_saf_sucf(dag, precision_ci_oracle(ld))
    ok = strict and not saf_ok and any(v[0] == "SAF" for v in violations)
    return CheckResult(
        "path_cancellation",
        ok,
        {"density_edges": net.sorted_edges(), "moral_edges": moral.sorted_edges(), "strict_subgraph": strict,
         "saf_ok": saf_ok, "sucf_ok": sucf_ok, "violations": violations},
    )


def rank_suite(dag: Dag, num_domains: int = 13, seeds: int = 20, points: int = 20, noise: str = "gaussian") -> CheckResult:
    """Stacked change-vector rank at random points, one parameter draw per seed."""
    spec = LinearSemSpec(dag, noise)
    full = total = 0
    min_rank = None
    required = None
    for s in range(seeds):
        dens = [LatentDensity(spec, p) for p in sample_domain_params(spec, num_domains, s)]
        pts = sample_generic_points(dens[0], points, np.random.default_rng(np.random.SeedSequence(s, spawn_key=(9,))))
        for z in pts:
            rank, required = sufficient_change_rank(dens, z)
            total += 1
            full += rank == required
            min_rank = rank if min_rank is None else min(min_rank, rank)
    return CheckResult("sufficient_change_rank", full == total, {"full_rank": full, "evaluations": total, "min_rank": min_rank, "required": required})


def _all_networks(n: int):
    pairs = list(itertools.combinations(range(n), 2))
    for bits in range(2 ** len(pairs)):
        yield MarkovNet(n, frozenset(p for k, p in enumerate(pairs) if bits >> k & 1))


def neighbor_lemma_suite(max_n: int = 5) -> CheckResult:
    """``j`` is an intimate neighbor of ``i`` iff ``{i} | N(i)`` is inside ``{j} | N(j)``;
    equal closed neighborhoods give equal intimate closures."""
    graphs = bad_lemma = bad_closure = 0
    for n in range(1, max_n + 1):
        for m in _all_networks(n):
            graphs += 1
            closed = [m.neighbors(i) | {i} for i in range(n)]
            psi = [intimate_neighbors(m, i) | {i} for i in range(n)]
            for i, j in itertools.permutations(range(n), 2):
                bad_lemma += (j in psi[i]) != (closed[i] <= closed[j])
                if i < j and closed[i] == closed[j]:
                    bad_closure += psi[i] != psi[j]
    return CheckResult("neighbor_set_lemmas", bad_lemma == 0 and bad_closure == 0,
                       {"graphs": graphs, "lemma_violations": bad_lemma, "closure_violations": bad_closure})


def inverse_pattern_suite(count: int = 1000, seed: int = 0, max_n: int = 6, tol: float = 1e-9) -> CheckResult:
    rng = np.random.default_rng(seed)
    checked = contained = 0
    while checked < count:
        n = int(rng.integers(1, max_n + 1))
        m = MarkovNet(n, frozenset(p for p in itertools.combinations(range(n), 2) if rng.random() < 0.6))
        pat = inverse_zero_pattern_closure(m)
        a = rng.normal(size=(n, n)) * pat + 0.1 * np.eye(n)
        if np.linalg.cond(a) > 1e8:
            continue
        inv = np.linalg.inv(a)
        checked += 1
        contained += not ((np.abs(inv) > tol * np.abs(inv).max()) & ~pat).any()
    return CheckResult("inverse_zero_pattern", contained == count, {"matrices": count, "contained": contained})


def matching_suite(count: int = 1000, planted: int = 300, seed: int = 0, max_n: int = 6) -> CheckResult:
    rng = np.random.default_rng(seed)
    matched = tried = 0
    while tried < count:
        n = int(rng.integers(1, max_n + 1))
        a = rng.normal(size=(n, n)) * (rng.random((n, n)) < 0.5)
        a[np.arange(n), rng.permutation(n)] = rng.uniform(0.5, 2, n)
        if abs(np.linalg.det(a)) < 1e-8:
            continue
        tried += 1
        p = nonzero_diagonal_permutation(a)
        matched += all(abs(a[i, p(i)]) > 1e-6 for i in range(n))
    detected = 0
    for _ in range(planted):
        n = int(rng.integers(2, max_n + 1))
        i = int(rng.integers(1, n))
        a = rng.normal(size=(n, n))
        a[np.ix_(rng.choice(n, i + 1, replace=False), rng.choice(n, n - i, replace=False))] = 0.0
        try:
            nonzero_diagonal_permutation(a)
            rejected = False
        except NoMatching:
            rejected = True
        detected += rejected and has_blocking_zero_submatrix(np.abs(a) > 1e-6)
    return CheckResult("nonzero_diagonal_matching", matched == count and detected == planted,
                       {"invertible": count, "matched": matched, "planted": planted, "detected": detected})


def run_all(dag: Dag, num_domains: int = 13, seed: int = 0, noise: str = "gaussian", quick: bool = False) -> list[CheckResult]:
    """Every oracle check; ``quick`` shrinks the random suites for smoke runs."""
    k = 10 if quick else 1
    results = [
        moralization_suite(1000 // k, seed),
        path_cancellation_check(),
        rank_suite(dag, num_domains, seeds=20 // k if not quick else 2, points=20 // k if not quick else 2, noise=noise),
        neighbor_lemma_suite(4 if quick else 5),
        inverse_pattern_suite(1000 // k, seed),
        matching_suite(1000 // k, 300 // k, seed),
    ]
    if noise == "gaussian":
        spec = LinearSemSpec(dag, noise)
        dens = [LatentDensity(spec, p) for p in sample_domain_params(spec, num_domains, seed)]
        net = markov_net_from_density(dens, [np.zeros(dag.n)])
        results.insert(0, CheckResult("markov_net_equals_moral_graph", net == moralize(dag),
                                      {"density_edges": net.sorted_edges(), "moral_edges": moralize(dag).sorted_edges()}))
    return results
