"""Adam, minibatching and the training loop."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .model import Model, ModelConfig
from .semgen import Dataset

log = logging.getLogger(__name__)


class NumericalError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    lr: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    batch_size: int = 256
    epochs: int = 60
    lam: float = 1e-2
    seed: int = 0
    prior: str = "parametric"
    dec_var: float = 0.01
    checkpoint_every: int = 0

    def __post_init__(self):
        self.betas = tuple(self.betas)
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if not all(0 <= b < 1 for b in self.betas):
            raise ValueError("betas must lie in [0, 1)")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def adam_step(params: dict, grads: dict, state: AdamState, cfg: TrainConfig):
    """One bias-corrected Adam update, applied in place to ``params``."""
    for name, g in grads.items():
        if g.shape != params[name].shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {name} {params[name].shape}")
        if not np.isfinite(g).all():
            raise NumericalError(f"non-finite gradient for {name!r} at step {state.step + 1}")
    state.step += 1
    b1, b2 = cfg.betas
    c1 = 1 - b1 ** state.step
    c2 = 1 - b2 ** state.step
    for name, g in grads.items():
        m = state.m.setdefault(name, np.zeros_like(g))
        v = state.v.setdefault(name, np.zeros_like(g))
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        params[name] = params[name] - cfg.lr * (m / c1) / (np.sqrt(v / c2) + cfg.eps)
    return params, state


TRACE_FIELDS = ("step", "elbo", "kl", "recon", "sparsity", "full")


@dataclass
class FitResult:
    model: Model
    trace: list[dict]
    steps_per_epoch: int
    state: AdamState

    def epoch_means(self, key: str = "full") -> np.ndarray:
        if not self.trace:
            return np.array([])
        vals = np.array([r[key] for r in self.trace])
        k = self.steps_per_epoch
        return np.array([vals[i:i + k].mean() for i in range(0, len(vals), k)])


def write_trace(trace: list[dict], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRACE_FIELDS)
        for r in trace:
            w.writerow([r["step"]] + ["%.17g" % r[k] for k in TRACE_FIELDS[1:]])
    return path


def model_config_for(dataset: Dataset, cfg: TrainConfig, **overrides) -> ModelConfig:
    kw = dict(
        n=dataset.n,
        d=dataset.d,
        num_domains=dataset.num_domains,
        prior=cfg.prior,
        base_noise=dataset.spec.noise_family,
        dec_var=cfg.dec_var,
        ordering=tuple(dataset.spec.dag.topological_order()),
    )
    kw.update(overrides)
    return ModelConfig(**kw)


def fit(
    dataset: Dataset,
    model: Model,
    cfg: TrainConfig,
    checkpoint_path: str | Path | None = None,
    on_epoch: Callable[[int, float], None] | None = None,
) -> FitResult:
    if int(dataset.u.max()) >= model.config.num_domains or dataset.d != model.config.d:
        raise ValueError(
            f"dataset (d={dataset.d}, domains={int(dataset.u.max()) + 1}) does not fit model "
            f"(d={model.config.d}, domains={model.config.num_domains})"
        )
    shuffle_rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(3,)))
    noise_rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(4,)))
    N = len(dataset)
    steps_per_epoch = math.ceil(N / cfg.batch_size)
    state = AdamState()
    trace = []
    for epoch in range(cfg.epochs):
        order = shuffle_rng.permutation(N)
        for s in range(steps_per_epoch):
            idx = order[s * cfg.batch_size:(s + 1) * cfg.batch_size]
            eta = noise_rng.standard_normal((len(idx), model.config.n))
            loss, parts = model.full_loss(dataset.x[idx], dataset.u[idx], eta, cfg.lam)
            if not math.isfinite(parts.full):
                raise NumericalError(f"loss became {parts.full} at epoch {epoch}, step {state.step + 1}")
            loss.backward()
            adam_step(model.params, model.grads(), state, cfg)
            trace.append({"step": state.step, **asdict(parts)})
        mean_loss = float(np.mean([r["full"] for r in trace[-steps_per_epoch:]]))
        log.info("epoch %d  loss %.4f", epoch, mean_loss)
        if on_epoch:
            on_epoch(epoch, mean_loss)
        if checkpoint_path and cfg.checkpoint_every and (epoch + 1) % cfg.checkpoint_every == 0:
            model.save(checkpoint_path, {"epoch": epoch + 1})
    if checkpoint_path:
        model.save(checkpoint_path, {"epoch": cfg.epochs, "train": asdict(cfg)})
    return FitResult(model, trace, steps_per_epoch, state)
