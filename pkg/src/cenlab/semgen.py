"""Multi-domain data from a linear scale/shift latent SEM pushed through an
invertible orthogonal/LeakyReLU mixing network."""

from __future__ import annotations

import hashlib
import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .graphs import Dag, dump_edge_list

NOISE_FAMILIES = ("gaussian", "laplace")
SCALE_RANGE = (0.5, 2.0)
SHIFT_RANGE = (-2.0, 2.0)

# stream tags for SeedSequence spawn keys
_PARAMS, _LATENTS, _MIXING = 0, 1, 2


def _rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=key))


@dataclass(frozen=True)
class LinearSemSpec:
    dag: Dag
    noise_family: str = "gaussian"

    def __post_init__(self):
        if self.noise_family not in NOISE_FAMILIES:
            raise ValueError(f"noise_family must be one of {NOISE_FAMILIES}, got {self.noise_family!r}")

    @property
    def n(self) -> int:
        return self.dag.n


@dataclass
class DomainParams:
    """Per-domain edge scalings ``C`` (row = child), noise scales ``S`` and shifts ``B``."""

    C: np.ndarray
    S: np.ndarray
    B: np.ndarray
    u: int = 0

    def weights(self, dag: Dag) -> np.ndarray:
        """``A * C``: the scalings restricted to the DAG's edges."""
        return self.C * dag.adjacency_matrix()

    def to_dict(self) -> dict:
        return {"u": self.u, "C": self.C.tolist(), "S": self.S.tolist(), "B": self.B.tolist()}


def sample_domain_params(spec: LinearSemSpec, num_domains: int, rng_seed: int) -> list[DomainParams]:
    if num_domains < 1:
        raise ValueError("num_domains must be >= 1")
    mask = spec.dag.adjacency_matrix()
    out = []
    for u in range(num_domains):
        rng = _rng(rng_seed, _PARAMS, u)
        C = rng.uniform(*SCALE_RANGE, size=(spec.n, spec.n)) * mask
        S = rng.uniform(*SCALE_RANGE, size=spec.n)
        B = rng.uniform(*SHIFT_RANGE, size=spec.n)
        out.append(DomainParams(C, S, B, u))
    return out


def sample_noise(family: str, rng: np.random.Generator, size) -> np.ndarray:
    """Zero-location, unit-scale base noise (Laplace scale b = 1)."""
    if family == "gaussian":
        return rng.standard_normal(size)
    if family == "laplace":
        return rng.laplace(0.0, 1.0, size)
    raise ValueError(f"unknown noise family {family!r}")


def solve_latents(dag: Dag, params: DomainParams, eps: np.ndarray) -> np.ndarray:
    """Forward substitution of ``Z = (A*C) Z + S eps + B`` in topological order."""
    eps = np.atleast_2d(eps)
    z = np.zeros_like(eps)
    for i in dag.topological_order():
        z[:, i] = params.S[i] * eps[:, i] + params.B[i]
        for j in dag.parents[i]:
            z[:, i] += params.C[i, j] * z[:, j]
    return z


def simulate_latents(spec: LinearSemSpec, params: DomainParams, m: int, rng_seed: int) -> np.ndarray:
    if m < 1:
        raise ValueError("sample count must be >= 1")
    rng = _rng(rng_seed, _LATENTS, params.u)
    eps = sample_noise(spec.noise_family, rng, (m, spec.n))
    return solve_latents(spec.dag, params, eps)


# -- mixing -------------------------------------------------------------------

def leaky_relu(x, alpha):
    return np.where(x >= 0, x, alpha * x)


def leaky_relu_inv(y, alpha):
    return np.where(y >= 0, y, y / alpha)


@dataclass
class MixingFunction:
    """Composition of ``h -> leaky_relu(W h)`` layers with orthogonal ``W``.

    When ``out_dim > in_dim`` the first weight is ``out_dim x in_dim`` with
    orthonormal columns; every later weight is square orthogonal.
    """

    weights: list[np.ndarray]
    alpha: float

    def __post_init__(self):
        if not 0 < self.alpha <= 1:
            raise ValueError(f"LeakyReLU slope must be in (0, 1], got {self.alpha}")
        for w in self.weights:
            if np.abs(w.T @ w - np.eye(w.shape[1])).max() >= 1e-8:
                raise ValueError("mixing weights must have orthonormal columns")

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[0]

    def log_abs_det_jacobian(self, z: np.ndarray) -> np.ndarray:
        """Analytic ``log|det J|`` for square mixings: each negative
        pre-activation contributes ``log alpha``."""
        if self.in_dim != self.out_dim:
            raise ValueError("determinant only defined for square mixing")
        h = np.atleast_2d(z)
        total = np.zeros(len(h))
        for w in self.weights:
            pre = h @ w.T
            total += (pre < 0).sum(axis=1) * np.log(self.alpha)
            h = leaky_relu(pre, self.alpha)
        return total


def make_mixing(n: int, d: int, num_layers: int, alpha: float = 0.2, rng_seed: int = 0) -> MixingFunction:
    if n < 1 or d < n:
        raise ValueError(f"need d >= n >= 1, got n={n}, d={d}")
    if num_layers < 1:
        raise ValueError("num_layers must be >= 1")
    rng = _rng(rng_seed, _MIXING)
    weights = []
    for k in range(num_layers):
        q, r = np.linalg.qr(rng.standard_normal((d, d)))
        q = q * np.sign(np.diag(r))
        weights.append(q[:, :n] if k == 0 else q)
    return MixingFunction(weights, alpha)


def mix(f: MixingFunction, z: np.ndarray) -> np.ndarray:
    h = np.asarray(z, dtype=float)
    for w in f.weights:
        h = leaky_relu(h @ w.T, f.alpha)
    return h


def unmix(f: MixingFunction, x: np.ndarray, return_residual: bool = False):
    """Invert ``mix``. For ``d > n`` the embedding layer is inverted by its
    transpose and the projection residual is reported; a residual above
    1e-6 means ``x`` is not in the image of ``f``."""
    h = np.asarray(x, dtype=float)
    residual = np.zeros(h.shape[:-1])
    for k, w in enumerate(reversed(f.weights)):
        pre = leaky_relu_inv(h, f.alpha)
        h = pre @ w
        if k == len(f.weights) - 1 and w.shape[0] != w.shape[1]:
            residual = np.linalg.norm(h @ w.T - pre, axis=-1)
    if return_residual:
        return h, residual
    return h


# -- datasets -----------------------------------------------------------------

@dataclass(frozen=True)
class MixingConfig:
    d: int | None = None  # defaults to n
    num_layers: int = 2
    alpha: float = 0.2


@dataclass
class Dataset:
    u: np.ndarray  # (N,) int domain index
    x: np.ndarray  # (N, d)
    z: np.ndarray  # (N, n)
    spec: LinearSemSpec
    params: list[DomainParams]
    mixing: MixingFunction
    seed: int
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if not (len(self.u) == len(self.x) == len(self.z)):
            raise ValueError("u, x, z must have the same number of records")
        if self.z.shape[1] != self.spec.n or self.x.shape[1] != self.mixing.out_dim:
            raise ValueError("record dimensions disagree with spec/mixing")
        known = {p.u for p in self.params}
        if not set(np.unique(self.u).tolist()) <= known:
            raise ValueError("records reference unknown domains")

    @property
    def num_domains(self) -> int:
        return len(self.params)

    @property
    def n(self) -> int:
        return self.z.shape[1]

    @property
    def d(self) -> int:
        return self.x.shape[1]

    def __len__(self):
        return len(self.u)

    def subset(self, idx: np.ndarray) -> "Dataset":
        return Dataset(self.u[idx], self.x[idx], self.z[idx], self.spec, self.params, self.mixing, self.seed, self.metadata)

    def split(self, holdout_fraction: float = 0.1) -> tuple["Dataset", "Dataset"]:
        """Deterministic per-domain split: the last ``holdout_fraction`` of each
        domain's records is held out."""
        train_idx, test_idx = [], []
        for p in self.params:
            idx = np.flatnonzero(self.u == p.u)
            k = int(round(len(idx) * holdout_fraction))
            train_idx.append(idx[: len(idx) - k])
            test_idx.append(idx[len(idx) - k:])
        return self.subset(np.concatenate(train_idx)), self.subset(np.concatenate(test_idx))

    def to_csv(self) -> str:
        buf = io.StringIO()
        header = ["domain"] + [f"x_{k + 1}" for k in range(self.d)] + [f"z_{k + 1}" for k in range(self.n)]
        buf.write(",".join(header) + "\n")
        for u, x, z in zip(self.u, self.x, self.z):
            buf.write(",".join([str(int(u))] + ["%.17g" % v for v in x] + ["%.17g" % v for v in z]) + "\n")
        return buf.getvalue()

    def sidecar(self) -> dict:
        return {
            "seed": self.seed,
            "noise_family": self.spec.noise_family,
            "n": self.n,
            "d": self.d,
            "graph": dump_edge_list(self.spec.dag),
            "domains": [p.to_dict() for p in self.params],
            "mixing": {"alpha": self.mixing.alpha, "weights": [w.tolist() for w in self.mixing.weights]},
            **self.metadata,
        }

    def save(self, out_dir: str | Path, stem: str = "dataset") -> tuple[Path, Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        csv_path = out_dir / f"{stem}.csv"
        meta_path = out_dir / f"{stem}.meta.json"
        csv_path.write_text(self.to_csv())
        meta_path.write_text(json.dumps(self.sidecar(), indent=2, sort_keys=True) + "\n")
        return csv_path, meta_path


def load_dataset(csv_path: str | Path, meta_path: str | Path | None = None) -> Dataset:
    from .graphs import load_edge_list

    csv_path = Path(csv_path)
    meta_path = Path(meta_path) if meta_path else csv_path.with_suffix(".meta.json")
    meta = json.loads(meta_path.read_text())
    n, d = meta["n"], meta["d"]
    table = np.loadtxt(csv_path, delimiter=",", skiprows=1, ndmin=2)
    dag = load_edge_list(meta["graph"])
    spec = LinearSemSpec(dag, meta["noise_family"])
    params = [DomainParams(np.array(p["C"]), np.array(p["S"]), np.array(p["B"]), p["u"]) for p in meta["domains"]]
    mixing = MixingFunction([np.array(w) for w in meta["mixing"]["weights"]], meta["mixing"]["alpha"])
    extra = {k: v for k, v in meta.items() if k not in {"seed", "noise_family", "n", "d", "graph", "domains", "mixing"}}
    return Dataset(table[:, 0].astype(int), table[:, 1:1 + d], table[:, 1 + d:1 + d + n], spec, params, mixing, meta["seed"], extra)


def generate_dataset(
    spec: LinearSemSpec,
    num_domains: int = 13,
    samples_per_domain: int = 5000,
    mixing: MixingConfig = MixingConfig(),
    seed: int = 0,
) -> Dataset:
    d = mixing.d or spec.n
    params = sample_domain_params(spec, num_domains, seed)
    f = make_mixing(spec.n, d, mixing.num_layers, mixing.alpha, seed)
    zs = [simulate_latents(spec, p, samples_per_domain, seed) for p in params]
    z = np.concatenate(zs)
    u = np.repeat(np.arange(num_domains), samples_per_domain)
    x = mix(f, z)
    meta = {"samples_per_domain": samples_per_domain, "num_layers": mixing.num_layers}
    return Dataset(u, x, z, spec, params, f, seed, meta)


def file_digest(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
