"""Oracles on the known latent density of the linear scale/shift SEM.

Everything here works from the simulator's ground-truth parameters: log
density, score, Hessian, the Markov network read off cross derivatives,
the sufficient-change rank test, and the SAF/SUCF faithfulness checks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .graphs import Dag, MarkovNet, moralize, unshielded_colliders
from .semgen import DomainParams, LinearSemSpec

LOG_2PI = math.log(2 * math.pi)
KINK_MARGIN = 1e-3


@dataclass
class LatentDensity:
    spec: LinearSemSpec
    params: DomainParams

    def __post_init__(self):
        if (np.asarray(self.params.S) <= 0).any():
            raise ValueError("noise scales S must be positive")

    @property
    def n(self) -> int:
        return self.spec.n

    @property
    def I_minus_W(self) -> np.ndarray:
        return np.eye(self.n) - self.params.weights(self.spec.dag)

    def residuals(self, z: np.ndarray) -> np.ndarray:
        """Standardized noise ``eps = ((I - W) z - B) / S`` for each row of ``z``."""
        z = np.atleast_2d(z)
        return (z @ self.I_minus_W.T - self.params.B) / self.params.S

    def precision(self) -> np.ndarray:
        """Gaussian precision ``(I-W)^T diag(S^-2) (I-W)``."""
        M = self.I_minus_W
        return M.T @ (M / self.params.S[:, None] ** 2)


def log_density(ld: LatentDensity, z: np.ndarray) -> np.ndarray | float:
    """Sum of ``log p_eps(eps_i) - log S_i``; the linear part has unit Jacobian."""
    scalar = np.ndim(z) == 1
    e = ld.residuals(z)
    if ld.spec.noise_family == "gaussian":
        lp = -0.5 * e ** 2 - 0.5 * LOG_2PI
    else:
        lp = -np.abs(e) - math.log(2.0)
    out = (lp - np.log(ld.params.S)).sum(axis=1)
    return float(out[0]) if scalar else out


def score(ld: LatentDensity, z: np.ndarray) -> np.ndarray:
    """Analytic gradient of the log density at a single point."""
    e = ld.residuals(z)[0]
    if ld.spec.noise_family == "gaussian":
        d = -e
    else:
        d = -np.sign(e)
    return ld.I_minus_W.T @ (d / ld.params.S)


def _fd_hessian(f: Callable[[np.ndarray], float], z: np.ndarray) -> np.ndarray:
    n = len(z)
    h = 1e-4 * np.maximum(1.0, np.abs(z))
    H = np.empty((n, n))
    for i in range(n):
        for j in range(i, n):
            ei = np.zeros(n)
            ej = np.zeros(n)
            ei[i] = h[i]
            ej[j] = h[j]
            if i == j:
                v = (f(z + ei) - 2 * f(z) + f(z - ei)) / h[i] ** 2
            else:
                v = (f(z + ei + ej) - f(z + ei - ej) - f(z - ei + ej) + f(z - ei - ej)) / (4 * h[i] * h[j])
            H[i, j] = H[j, i] = v
    return H


def cross_hessian(ld: LatentDensity, z: np.ndarray, method: str = "analytic") -> np.ndarray:
    """Second derivatives of ``log p`` at ``z``.

    ``analytic`` is exact for Gaussian noise (``-precision``, constant in z).
    ``central_fd`` works for any family away from the Laplace kinks.
    """
    z = np.asarray(z, dtype=float)
    if method == "analytic":
        if ld.spec.noise_family != "gaussian":
            raise ValueError("analytic Hessian is only available for Gaussian noise; use central_fd")
        return -ld.precision()
    if method == "central_fd":
        return _fd_hessian(lambda v: log_density(ld, v), z)
    raise ValueError(f"unknown method {method!r}")


def hessian(ld: LatentDensity, z: np.ndarray) -> np.ndarray:
    """Exact Hessian for both families. The Laplace log density is piecewise
    linear in z, so its Hessian vanishes off the kink set."""
    if ld.spec.noise_family == "gaussian":
        return -ld.precision()
    if np.abs(ld.residuals(z)).min() < KINK_MARGIN:
        raise ValueError("point lies within the Laplace kink margin")
    return np.zeros((ld.n, ld.n))


def markov_net_from_density(
    densities: Sequence[LatentDensity], points: Sequence[np.ndarray], tau: float = 0.05, method: str = "analytic"
) -> MarkovNet:
    """Edge ``{i, j}`` iff the mean ``|d2 log p / dz_i dz_j|`` over domains and points exceeds ``tau``."""
    if not densities or not len(points):
        raise ValueError("need at least one domain and one point")
    n = densities[0].n
    total = np.zeros((n, n))
    count = 0
    for ld in densities:
        for z in points:
            total += np.abs(cross_hessian(ld, z, method))
            count += 1
    mean = total / count
    return MarkovNet.from_edges(n, [(i, j) for i in range(n) for j in range(i + 1, n) if mean[i, j] > tau])


@dataclass(frozen=True)
class ChangeVector:
    first: np.ndarray
    second: np.ndarray
    cross: np.ndarray
    edges: tuple[tuple[int, int], ...]

    @property
    def w(self) -> np.ndarray:
        return np.concatenate([self.first, self.second, self.cross])

    def __len__(self):
        return len(self.first) + len(self.second) + len(self.cross)


def change_vector(ld: LatentDensity, z: np.ndarray, network: MarkovNet | None = None) -> ChangeVector:
    """Score, diagonal second derivatives and cross derivatives on the
    network's edges (lexicographic ``i < j``) at ``z``."""
    z = np.asarray(z, dtype=float)
    network = network or moralize(ld.spec.dag)
    H = hessian(ld, z)
    edges = tuple(network.sorted_edges())
    cross = np.array([H[i, j] for i, j in edges])
    return ChangeVector(score(ld, z), np.diag(H).copy(), cross, edges)


def numerical_rank(m: np.ndarray, rtol: float = 1e-8) -> int:
    s = np.linalg.svd(np.atleast_2d(m), compute_uv=False)
    if s.size == 0 or s[0] == 0:
        return 0
    return int((s > rtol * s[0]).sum())


def sufficient_change_rank(
    densities: Sequence[LatentDensity], z: np.ndarray, network: MarkovNet | None = None, rtol: float = 1e-8
) -> tuple[int, int]:
    """Rank of the stacked ``w(z, u) - w(z, 0)`` for ``u >= 1`` and the required ``2n + |M|``."""
    if len(densities) < 2:
        raise ValueError("need a baseline domain and at least one other")
    network = network or moralize(densities[0].spec.dag)
    base = change_vector(densities[0], z, network).w
    diffs = np.stack([change_vector(ld, z, network).w - base for ld in densities[1:]])
    return numerical_rank(diffs, rtol), 2 * densities[0].n + network.num_edges


def sample_generic_points(ld: LatentDensity, count: int, rng: np.random.Generator, max_tries: int = 10_000) -> np.ndarray:
    """Draw latent points from the domain's own law, rejecting Laplace points
    within the kink margin of any coordinate."""
    from .semgen import sample_noise, solve_latents

    out = []
    tries = 0
    while len(out) < count:
        tries += 1
        if tries > max_tries:
            raise RuntimeError("could not draw points away from the kink set")
        eps = sample_noise(ld.spec.noise_family, rng, (1, ld.n))
        if ld.spec.noise_family == "laplace" and np.abs(eps).min() < KINK_MARGIN:
            continue
        out.append(solve_latents(ld.spec.dag, ld.params, eps)[0])
    return np.array(out)


def precision_ci_oracle(densities: LatentDensity | Sequence[LatentDensity], tol: float = 1e-10) -> Callable[[int, int], bool]:
    """``(i, j) -> True`` iff ``Z_i`` and ``Z_j`` are independent given the rest
    in every supplied Gaussian domain."""
    if isinstance(densities, LatentDensity):
        densities = [densities]
    thetas = [ld.precision() for ld in densities]
    return lambda i, j: all(abs(t[i, j]) < tol for t in thetas)


def check_saf_sucf(g: Dag, ci_oracle: Callable[[int, int], bool]) -> tuple[bool, bool, list[tuple[str, int, int]]]:
    violations = []
    for j, i in g.edges:
        a, b = min(i, j), max(i, j)
        if ci_oracle(a, b):
            violations.append(("SAF", a, b))
    saf_ok = not violations
    for i, _, j in unshielded_colliders(g):
        if ci_oracle(i, j) and ("SUCF", i, j) not in violations:
            violations.append(("SUCF", i, j))
    sucf_ok = not any(v[0] == "SUCF" for v in violations)
    return saf_ok, sucf_ok, violations


def path_cancellation_instance() -> LatentDensity:
    """Triangle ``Z1 -> Z2 -> Z3``, ``Z1 -> Z3`` whose precision entry for the
    adjacent pair (Z1, Z2) vanishes.

    That entry is ``-C21/S2^2 + C31*C32/S3^2``; with ``C21 = C32 = S2 = S3 = 1``
    it cancels exactly when ``C31 = 1``.
    """
    dag = Dag.from_edges(3, [(0, 1), (1, 2), (0, 2)])
    C = np.zeros((3, 3))
    C[1, 0] = 1.0
    C[2, 1] = 1.0
    S = np.ones(3)
    C[2, 0] = C[1, 0] * S[2] ** 2 / (C[2, 1] * S[1] ** 2)
    return LatentDensity(LinearSemSpec(dag, "gaussian"), DomainParams(C, S, np.zeros(3), 0))
