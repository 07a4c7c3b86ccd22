"""Change-encoding VAE: Gaussian encoder q(z | x, u), Gaussian decoder
p(x | z), a learnable adjacency over an ordered latent vector, and either a
conditional affine flow prior or a per-domain scale/shift linear prior.
"""

from __future__ import annotations

import hashlib
import io
import json
import math
import zipfile
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

LOG_2PI = math.log(2 * math.pi)
CHECKPOINT_VERSION = 1
PRIORS = ("flow", "parametric")
C_NORM_EPS = 1e-8


@dataclass
class ModelConfig:
    n: int
    d: int
    num_domains: int
    prior: str = "parametric"
    base_noise: str = "gaussian"
    hidden: int = 64
    enc_layers: int = 2
    cond_hidden: int = 64
    flow_layers: int = 1
    dec_var: float = 0.01
    alpha: float = 0.2
    # ordering[k] is the latent slot placed k-th; slot j may parent slot i iff it comes earlier
    ordering: tuple[int, ...] | None = None
    independent: bool = False

    def __post_init__(self):
        if self.prior not in PRIORS:
            raise ValueError(f"prior must be one of {PRIORS}, got {self.prior!r}")
        if self.base_noise not in ("gaussian", "laplace"):
            raise ValueError(f"unknown base noise {self.base_noise!r}")
        if self.ordering is not None:
            self.ordering = tuple(int(v) for v in self.ordering)
            if sorted(self.ordering) != list(range(self.n)):
                raise ValueError(f"ordering must be a permutation of range({self.n})")

    def digest(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:12]


def ordering_mask(n: int, ordering=None) -> np.ndarray:
    """``mask[i, j] = 1`` iff slot ``j`` precedes slot ``i``; strictly lower
    triangular for the identity ordering."""
    pos = np.empty(n, dtype=int)
    pos[list(ordering if ordering is not None else range(n))] = np.arange(n)
    return (pos[None, :] < pos[:, None]).astype(float)


def one_hot(u: np.ndarray, m: int) -> np.ndarray:
    u = np.asarray(u, dtype=int)
    if u.size and (u.min() < 0 or u.max() >= m):
        raise ValueError(f"domain index out of range [0, {m})")
    out = np.zeros((len(u), m))
    out[np.arange(len(u)), u] = 1.0
    return out


def base_log_prob(eps: Tensor, kind: str) -> Tensor:
    if kind == "gaussian":
        return ad.mul(ad.square(eps), -0.5) - 0.5 * LOG_2PI
    return ad.mul(ad.abs_(eps), -1.0) - math.log(2.0)


def _glorot(rng, fan_in, fan_out):
    return rng.normal(0.0, math.sqrt(2.0 / (fan_in + fan_out)), size=(fan_in, fan_out))


def _mlp_params(rng, prefix, sizes, zero_last=False):
    out = {}
    for k, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        last = k == len(sizes) - 2
        out[f"{prefix}.W{k}"] = np.zeros((a, b)) if (last and zero_last) else _glorot(rng, a, b)
        out[f"{prefix}.b{k}"] = np.zeros(b)
    return out


def _mlp(p, prefix, h, num_layers, alpha):
    for k in range(num_layers):
        h = ad.add(ad.matmul(h, p[f"{prefix}.W{k}"]), p[f"{prefix}.b{k}"])
        if k < num_layers - 1:
            h = ad.leaky_relu(h, alpha)
    return h


@dataclass
class LossParts:
    elbo: float
    kl: float
    recon: float
    sparsity: float
    full: float


class Model:
    """Parameters live in ``self.params`` as plain arrays; every forward pass
    wraps them in fresh leaf tensors (define-by-run)."""

    def __init__(self, config: ModelConfig, seed: int = 0, params: dict | None = None):
        self.config = config
        self.mask = ordering_mask(config.n, config.ordering)
        if params is not None:
            self.params = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
        else:
            self.params = self._init_params(np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(7,))))
        n = config.n
        # gather/scatter matrices for the per-sample product (A * C_u) z
        self._tile = np.zeros((n, n * n))
        self._rowsum = np.zeros((n * n, n))
        for i in range(n):
            for j in range(n):
                self._tile[j, i * n + j] = 1.0
                self._rowsum[i * n + j, i] = 1.0
        self._leaves: dict[str, Tensor] = {}

    def _init_params(self, rng) -> dict:
        c = self.config
        n, d, m, H = c.n, c.d, c.num_domains, c.hidden
        p = {}
        p.update(_mlp_params(rng, "enc", [d + m] + [H] * c.enc_layers + [2 * n]))
        p.update(_mlp_params(rng, "dec", [n] + [H] * c.enc_layers + [d]))
        p["enc.b%d" % c.enc_layers][n:] = math.log(math.expm1(0.1))
        p["A"] = np.zeros((n, n)) if c.independent else self.mask.copy()
        if c.prior == "parametric":
            p["prior.C"] = rng.normal(0.0, 0.1, size=(m, n * n))
            p["prior.S"] = np.full((m, n), math.log(math.expm1(1.0)))
            p["prior.B"] = np.zeros((m, n))
        else:
            for i in range(n):
                for k in range(c.flow_layers):
                    p.update(_mlp_params(rng, f"cond{i}.{k}", [n + m, c.cond_hidden, 2], zero_last=True))
        return p

    # -- parameter plumbing ------------------------------------------------
    def trainable(self) -> list[str]:
        names = sorted(self.params)
        if self.config.independent:
            names.remove("A")
        return names

    def leaves(self) -> dict[str, Tensor]:
        train = set(self.trainable())
        self._leaves = {k: Tensor(v, requires_grad=k in train, name=k) for k, v in self.params.items()}
        return self._leaves

    def grads(self) -> dict[str, np.ndarray]:
        return {k: t.grad for k, t in self._leaves.items() if t.requires_grad}

    def adjacency(self, p=None) -> Tensor:
        p = p if p is not None else self.leaves()
        return ad.mul(p["A"], self.mask)

    def adjacency_numpy(self) -> np.ndarray:
        return self.params["A"] * self.mask

    # -- encoder / decoder ---------------------------------------------------
    def encode(self, x, u, p=None) -> tuple[Tensor, Tensor]:
        p = p if p is not None else self.leaves()
        c = self.config
        h = ad.concat([ad.tensor(np.asarray(x, float)), Tensor(one_hot(u, c.num_domains))], axis=1)
        out = _mlp(p, "enc", h, c.enc_layers + 1, c.alpha)
        mu = out[:, : c.n]
        sigma = ad.softplus(out[:, c.n:]) + 1e-6
        return mu, sigma

    def encode_mean(self, x, u) -> np.ndarray:
        """Posterior mean as a plain array (no graph kept)."""
        mu, _ = self.encode(x, u, {k: Tensor(v) for k, v in self.params.items()})
        return mu.data

    @staticmethod
    def reparam_sample(mu: Tensor, sigma: Tensor, eta: np.ndarray) -> Tensor:
        return ad.add(mu, ad.mul(sigma, Tensor(eta)))

    def decode(self, z, p=None) -> Tensor:
        p = p if p is not None else self.leaves()
        return _mlp(p, "dec", ad.tensor(z), self.config.enc_layers + 1, self.config.alpha)

    # -- priors ------------------------------------------------------------
    def prior_log_density(self, z, u, p=None) -> Tensor:
        """Per-sample ``log p(z; theta_u)`` as a ``(batch, 1)`` tensor."""
        p = p if p is not None else self.leaves()
        z = ad.tensor(z)
        if self.config.prior == "flow":
            return self._flow_log_density(p, z, u)
        return self._parametric_log_density(p, z, u)

    def _flow_log_density(self, p, z, u):
        c = self.config
        A = self.adjacency(p)
        onehot = Tensor(one_hot(u, c.num_domains))
        terms = []
        for i in range(c.n):
            inp = ad.concat([ad.mul(z, A[i]), onehot], axis=1)
            eps = z[:, i:i + 1]
            logdet = None
            for k in range(c.flow_layers):
                out = _mlp(p, f"cond{i}.{k}", inp, 2, c.alpha)
                shift, log_scale = out[:, 0:1], out[:, 1:2]
                eps = ad.mul(ad.sub(eps, shift), ad.exp(ad.mul(log_scale, -1.0)))
                logdet = ad.mul(log_scale, -1.0) if logdet is None else ad.sub(logdet, log_scale)
            terms.append(ad.add(base_log_prob(eps, c.base_noise), logdet))
        return ad.sum_(ad.concat(terms, axis=1), axis=1)

    def flow_residuals(self, z, u) -> np.ndarray:
        """Noise ``eps`` the flow prior assigns to each row of ``z``."""
        c = self.config
        p = {k: Tensor(v) for k, v in self.params.items()}
        A = self.adjacency(p)
        z = Tensor(np.asarray(z, float))
        onehot = Tensor(one_hot(u, c.num_domains))
        cols = []
        for i in range(c.n):
            inp = ad.concat([ad.mul(z, A[i]), onehot], axis=1)
            eps = z[:, i:i + 1]
            for k in range(c.flow_layers):
                out = _mlp(p, f"cond{i}.{k}", inp, 2, c.alpha)
                eps = ad.mul(ad.sub(eps, out[:, 0:1]), ad.exp(ad.mul(out[:, 1:2], -1.0)))
            cols.append(eps.data)
        return np.concatenate(cols, axis=1)

    @staticmethod
    def _c_normalized(C: Tensor) -> Tensor:
        # unit RMS over domains per edge, so edge magnitude lives in A alone
        ms = ad.mean(ad.square(C), axis=0)
        return ad.div(C, ad.exp(ad.mul(ad.log(ms + C_NORM_EPS), 0.5)))

    def _parametric_log_density(self, p, z, u):
        c = self.config
        onehot = Tensor(one_hot(u, c.num_domains))
        Cu = ad.matmul(onehot, self._c_normalized(p["prior.C"]))  # (B, n*n)
        Afl = ad.reshape(self.adjacency(p), (1, c.n * c.n))
        zt = ad.matmul(z, self._tile)  # zt[b, i*n + j] = z[b, j]
        Wz = ad.matmul(ad.mul(ad.mul(Cu, Afl), zt), self._rowsum)
        S = ad.softplus(ad.matmul(onehot, p["prior.S"])) + 1e-6
        B = ad.matmul(onehot, p["prior.B"])
        eps = ad.div(ad.sub(ad.sub(z, B), Wz), S)
        return ad.sum_(ad.sub(base_log_prob(eps, c.base_noise), ad.log(S)), axis=1)

    def parametric_residuals(self, z, u) -> np.ndarray:
        c = self.config
        oh = one_hot(u, c.num_domains)
        Cu = (oh @ self._c_normalized(Tensor(self.params["prior.C"])).data).reshape(-1, c.n, c.n)
        W = Cu * self.adjacency_numpy()[None]
        S = np.logaddexp(0.0, oh @ self.params["prior.S"]) + 1e-6
        B = oh @ self.params["prior.B"]
        return (z - B - np.einsum("bij,bj->bi", W, z)) / S

    # -- objective -----------------------------------------------------------
    def elbo(self, x, u, eta: np.ndarray, p=None) -> tuple[Tensor, dict]:
        """Single-sample Monte Carlo ``-ELBO`` averaged over the batch.

        ``eta`` is the standard-normal draw used for the reparameterization.
        """
        p = p if p is not None else self.leaves()
        c = self.config
        x = np.asarray(x, float)
        mu, sigma = self.encode(x, u, p)
        z = self.reparam_sample(mu, sigma, eta)
        log_q = ad.sum_(ad.sub(ad.mul(ad.log(sigma), -1.0), 0.5 * eta ** 2 + 0.5 * LOG_2PI), axis=1)
        log_prior = self.prior_log_density(z, u, p)
        kl = ad.mean(ad.sub(log_q, log_prior))
        resid = ad.sub(self.decode(z, p), Tensor(x))
        sq = ad.sum_(ad.square(resid), axis=1)
        recon = ad.mean(ad.add(ad.mul(sq, 0.5 / c.dec_var), 0.5 * c.d * math.log(2 * math.pi * c.dec_var)))
        loss = ad.add(kl, recon)
        return loss, {"kl": kl.item(), "recon": recon.item(), "elbo": loss.item()}

    def sparsity_loss(self, p=None) -> Tensor:
        p = p if p is not None else self.leaves()
        return ad.sum_(ad.abs_(self.adjacency(p)))

    def full_loss(self, x, u, eta, lam: float, p=None) -> tuple[Tensor, LossParts]:
        p = p if p is not None else self.leaves()
        loss, parts = self.elbo(x, u, eta, p)
        sp = self.sparsity_loss(p)
        full = ad.add(loss, ad.mul(sp, lam)) if lam else loss
        return full, LossParts(parts["elbo"], parts["kl"], parts["recon"], sp.item(), full.item())

    def heldout_elbo(self, x, u, num_samples: int = 8, seed: int = 0) -> tuple[float, float]:
        """Mean ELBO (not negated) over rows and MC draws, with its standard error over rows."""
        rng = np.random.default_rng(seed)
        p = {k: Tensor(v) for k, v in self.params.items()}
        per_row = np.zeros(len(x))
        for _ in range(num_samples):
            per_row += self._per_row_elbo(x, u, rng.standard_normal((len(x), self.config.n)), p)
        per_row /= num_samples
        return float(per_row.mean()), float(per_row.std(ddof=1) / math.sqrt(len(per_row)))

    def _per_row_elbo(self, x, u, eta, p) -> np.ndarray:
        c = self.config
        mu, sigma = self.encode(x, u, p)
        z = self.reparam_sample(mu, sigma, eta)
        log_q = (-np.log(sigma.data) - 0.5 * eta ** 2 - 0.5 * LOG_2PI).sum(axis=1)
        log_prior = self.prior_log_density(z, u, p).data[:, 0]
        sq = ((self.decode(z, p).data - x) ** 2).sum(axis=1)
        log_lik = -sq / (2 * c.dec_var) - 0.5 * c.d * math.log(2 * math.pi * c.dec_var)
        return log_lik + log_prior - log_q

    # -- persistence -----------------------------------------------------------
    def save(self, path: str | Path, extra: dict | None = None) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        header = {"version": CHECKPOINT_VERSION, "config": asdict(self.config), "config_hash": self.config.digest(), **(extra or {})}
        arrays = {f"param:{k}": v for k, v in self.params.items()}
        arrays["__header__"] = np.frombuffer(json.dumps(header, sort_keys=True).encode(), dtype=np.uint8)
        tmp = path.with_name(path.name + ".tmp")
        # npz layout with fixed member timestamps so reruns are byte-identical
        with zipfile.ZipFile(tmp, "w", zipfile.ZIP_STORED) as zf:
            for name in sorted(arrays):
                buf = io.BytesIO()
                np.lib.format.write_array(buf, np.ascontiguousarray(arrays[name]), allow_pickle=False)
                zf.writestr(zipfile.ZipInfo(name + ".npy", date_time=(1980, 1, 1, 0, 0, 0)), buf.getvalue())
        tmp.replace(path)
        return path

    @classmethod
    def load(cls, path: str | Path) -> tuple["Model", dict]:
        with np.load(path) as z:
            header = json.loads(bytes(z["__header__"]).decode())
            if header.get("version") != CHECKPOINT_VERSION:
                raise ValueError(f"unsupported checkpoint version {header.get('version')}")
            params = {k[len("param:"):]: z[k] for k in z.files if k.startswith("param:")}
        cfg = dict(header["config"])
        if cfg.get("ordering") is not None:
            cfg["ordering"] = tuple(cfg["ordering"])
        config = ModelConfig(**cfg)
        if config.digest() != header["config_hash"]:
            raise ValueError("checkpoint config hash mismatch")
        return cls(config, params=params), header
