"""Identifiability diagnostics for a trained model against simulator ground truth."""

from __future__ import annotations

import itertools
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.stats import rankdata

from .graphs import (
    Dag,
    MarkovNet,
    Permutation,
    intimate_neighbors,
    inverse_zero_pattern_closure,
    isomorphic_under,
    moralize,
)

EXHAUSTIVE_MAX_N = 8


def _abs_corr(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, list[int]]:
    """``|corr(a[:, k], b[:, i])|`` as an (a_cols x b_cols) matrix; zero-variance
    columns of ``a`` get 0 and are reported."""
    a = a - a.mean(0)
    b = b - b.mean(0)
    sa = np.sqrt((a ** 2).sum(0))
    sb = np.sqrt((b ** 2).sum(0))
    degenerate = [int(k) for k in np.flatnonzero(sa <= 1e-12 * max(1.0, sa.max()))]
    with np.errstate(invalid="ignore", divide="ignore"):
        c = np.abs(a.T @ b) / np.outer(sa, sb)
    c = np.nan_to_num(c, nan=0.0, posinf=0.0)
    c[degenerate, :] = 0.0
    return np.clip(c, 0.0, 1.0), degenerate


def best_permutation(score: np.ndarray) -> Permutation:
    """``pi`` maximizing ``sum_i score[pi(i), i]``; ties go to the
    lexicographically smallest ``pi``."""
    n = score.shape[0]
    if n > EXHAUSTIVE_MAX_N:
        rows, cols = linear_sum_assignment(-score)
        pi = np.empty(n, dtype=int)
        pi[cols] = rows
        return Permutation(tuple(pi))
    perms = np.array(list(itertools.permutations(range(n))))
    totals = score[perms, np.arange(n)].sum(axis=1)
    best = totals.max()
    # argmax on the lexicographic enumeration returns the first maximizer
    k = int(np.flatnonzero(totals >= best - 1e-12)[0])
    return Permutation(tuple(perms[k]))


@dataclass
class MatchReport:
    permutation: Permutation
    pearson: np.ndarray  # [k, i] = |pearson(zhat_k, z_i)|
    spearman: np.ndarray
    degenerate: list[int] = field(default_factory=list)

    @property
    def matched_spearman(self) -> np.ndarray:
        return np.array([self.spearman[self.permutation(i), i] for i in range(len(self.permutation))])

    @property
    def matched_pearson(self) -> np.ndarray:
        return np.array([self.pearson[self.permutation(i), i] for i in range(len(self.permutation))])

    @property
    def mcc(self) -> float:
        return float(self.matched_spearman.mean())

    def summary(self) -> dict:
        return {
            "permutation": list(self.permutation.map),
            "matched_spearman": self.matched_spearman.tolist(),
            "matched_pearson": self.matched_pearson.tolist(),
            "mcc_spearman": self.mcc,
            "mcc_pearson": float(self.matched_pearson.mean()),
            "degenerate_columns": self.degenerate,
        }

    def tables(self) -> dict[str, str]:
        return {"pearson.csv": _matrix_csv(self.pearson, "zhat", "z"), "spearman.csv": _matrix_csv(self.spearman, "zhat", "z")}


def match_latents(zhat: np.ndarray, z: np.ndarray) -> MatchReport:
    """Match estimated to true latents; the permutation maximizes summed
    matched |Spearman| so monotone per-column distortions do not matter."""
    zhat = np.asarray(zhat, float)
    z = np.asarray(z, float)
    if zhat.shape != z.shape:
        raise ValueError(f"shape mismatch {zhat.shape} vs {z.shape}")
    pearson, degenerate = _abs_corr(zhat, z)
    spearman, _ = _abs_corr(rankdata(zhat, axis=0), rankdata(z, axis=0))
    spearman[degenerate, :] = 0.0
    return MatchReport(best_permutation(spearman), pearson, spearman, degenerate)


@dataclass
class JacobianSupportReport:
    magnitude: np.ndarray  # row i: mean |d zhat_{pi(i)} / d z_j|
    normalized: np.ndarray
    support: np.ndarray
    allowed: np.ndarray
    tau: float

    @property
    def row_pass(self) -> list[bool]:
        return [bool(not (self.support[i] & ~self.allowed[i]).any()) for i in range(len(self.support))]

    @property
    def all_pass(self) -> bool:
        return all(self.row_pass)

    def summary(self) -> dict:
        return {
            "tau": self.tau,
            "row_pass": self.row_pass,
            "support": self.support.astype(int).tolist(),
            "allowed": self.allowed.astype(int).tolist(),
            "normalized": self.normalized.tolist(),
        }

    def tables(self) -> dict[str, str]:
        return {
            "jacobian_magnitude.csv": _matrix_csv(self.magnitude, "zhat_pi", "z"),
            "jacobian_allowed.csv": _matrix_csv(self.allowed.astype(int), "zhat_pi", "z"),
        }


def fd_jacobians(fn: Callable[[np.ndarray], np.ndarray], points: np.ndarray, h: float = 1e-3) -> np.ndarray:
    """Central-difference Jacobians ``J[p, k, j] = d fn_k / d z_j`` at every point."""
    points = np.asarray(points, float)
    P, n = points.shape
    cols = []
    for j in range(n):
        e = np.zeros(n)
        e[j] = h
        cols.append((fn(points + e) - fn(points - e)) / (2 * h))
    return np.stack(cols, axis=2)


def jacobian_support(
    fn: Callable[[np.ndarray], np.ndarray],
    points: np.ndarray,
    perm: Permutation,
    network: MarkovNet,
    h: float = 1e-3,
    tau: float = 0.1,
) -> JacobianSupportReport:
    """Row ``i`` passes iff ``zhat_{pi(i)}`` only moves with ``z_i`` and its
    intimate neighbors (after row-max normalization and thresholding)."""
    J = fd_jacobians(fn, points, h)
    mag = np.abs(J).mean(axis=0)[list(perm.map), :]
    rowmax = mag.max(axis=1, keepdims=True)
    norm = np.divide(mag, rowmax, out=np.zeros_like(mag), where=rowmax > 0)
    return JacobianSupportReport(mag, norm, norm > tau, inverse_zero_pattern_closure(network), tau)


@dataclass
class StructureReport:
    estimated: Dag  # in true-variable labels
    true: Dag
    shd: int
    moral_shd: int
    moral_isomorphic: bool
    threshold: float

    def summary(self) -> dict:
        return {
            "threshold": self.threshold,
            "estimated_edges": [list(e) for e in self.estimated.edges],
            "true_edges": [list(e) for e in self.true.edges],
            "shd": self.shd,
            "moral_shd": self.moral_shd,
            "moral_isomorphic": self.moral_isomorphic,
        }

    def tables(self) -> dict[str, str]:
        return {}


def shd(a: Dag, b: Dag) -> int:
    """Structural Hamming distance: each missing, extra or reversed edge counts once."""
    ea, eb = set(a.edges), set(b.edges)
    skel_a = {frozenset(e) for e in ea}
    skel_b = {frozenset(e) for e in eb}
    reversed_ = sum(1 for e in ea if e not in eb and (e[1], e[0]) in eb)
    return len(skel_a ^ skel_b) + reversed_


def structure_metrics(A_hat: np.ndarray, threshold: float, true_dag: Dag, perm: Permutation | None = None) -> StructureReport:
    """Threshold ``|A_hat|`` (``A_hat[i, j]`` = slot j feeds slot i) and compare
    with ``true_dag`` after relabelling slots through ``perm`` (slot ``perm(i)``
    holds true variable ``i``)."""
    A_hat = np.asarray(A_hat, float)
    n = true_dag.n
    perm = perm or Permutation.identity(n)
    inv = perm.inverse()
    edges = [(inv(b), inv(a)) for a in range(n) for b in range(n) if a != b and abs(A_hat[a, b]) > threshold]
    est = Dag.from_edges(n, edges)
    m_est, m_true = moralize(est), moralize(true_dag)
    return StructureReport(
        est,
        true_dag,
        shd(est, true_dag),
        len(m_est.edges ^ m_true.edges),
        isomorphic_under(m_est, m_true, Permutation.identity(n)),
        threshold,
    )


@dataclass
class ScatterData:
    """Paired samples of estimated and true latents for per-panel scatter plots."""

    zhat: np.ndarray
    z: np.ndarray

    def summary(self) -> dict:
        return {"scatter_points": int(len(self.z))}

    def tables(self) -> dict[str, str]:
        out = {}
        for i in range(self.zhat.shape[1]):
            for j in range(self.z.shape[1]):
                rows = "\n".join("%.17g,%.17g" % (a, b) for a, b in zip(self.z[:, j], self.zhat[:, i]))
                out[f"scatter/zhat{i + 1}_z{j + 1}.csv"] = f"z_{j + 1},zhat_{i + 1}\n" + rows + "\n"
        return out


def psi_empty(network: MarkovNet) -> list[int]:
    return [i for i in range(network.n) if not intimate_neighbors(network, i)]


def _matrix_csv(m: np.ndarray, row: str, col: str) -> str:
    header = ",".join([f"{row}\\{col}"] + [f"{col}_{j + 1}" for j in range(m.shape[1])])
    lines = [header]
    for i, r in enumerate(m):
        lines.append(",".join([f"{row}_{i + 1}"] + ["%.17g" % v for v in r]))
    return "\n".join(lines) + "\n"


def _atomic_write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def emit_report(reports: Sequence, out_dir: str | Path, tag: str = "run", extra: dict | None = None) -> list[Path]:
    """Write every report's tables plus one ``summary`` JSON; file names carry ``tag``."""
    out_dir = Path(out_dir)
    written = []
    summary = {"tag": tag, **(extra or {})}
    for r in reports:
        summary[type(r).__name__] = r.summary()
        for name, text in r.tables().items():
            p = out_dir / f"{tag}_{name}" if "/" not in name else out_dir / f"{tag}_{name.split('/')[0]}" / name.split("/", 1)[1]
            _atomic_write(p, text)
            written.append(p)
    p = out_dir / f"{tag}_summary.json"
    _atomic_write(p, json.dumps(summary, indent=2, sort_keys=True, default=_json_default) + "\n")
    written.append(p)
    return written


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialize {type(o)}")


# -- Â ≡ 0 baseline ------------------------------------------------------------

@dataclass
class BaselineComparison:
    dependent_elbo: float
    independent_elbo: float
    dependent_se: float
    independent_se: float

    @property
    def gap(self) -> float:
        return self.dependent_elbo - self.independent_elbo

    def summary(self) -> dict:
        return {"gap": self.gap, "dependent_elbo": self.dependent_elbo, "independent_elbo": self.independent_elbo}

    def tables(self) -> dict[str, str]:
        return {}


def baseline_comparison(dataset, cfg, holdout_fraction: float = 0.1, eval_samples: int = 8) -> BaselineComparison:
    """Train the dependent model and the independent-prior baseline on the same
    split with the same seed; compare held-out ELBO."""
    from .model import Model
    from .train import fit, model_config_for

    train, test = dataset.split(holdout_fraction)
    results = []
    for independent in (False, True):
        model = Model(model_config_for(dataset, cfg, independent=independent), seed=cfg.seed)
        fit(train, model, cfg)
        results.append(model.heldout_elbo(test.x, test.u, eval_samples, seed=cfg.seed))
    (dep, dep_se), (ind, ind_se) = results
    return BaselineComparison(dep, ind, dep_se, ind_se)


def independence_baseline_gap(dataset, cfg) -> float:
    """Held-out ELBO of the dependent model minus that of the ``A = 0`` baseline."""
    return baseline_comparison(dataset, cfg).gap


# -- one-call pipeline ---------------------------------------------------------

@dataclass
class Evaluation:
    match: MatchReport
    jacobian: JacobianSupportReport
    structure: StructureReport
    scatter: ScatterData
    psi_empty: list[int]
    min_corr: float = 0.9

    @property
    def shd_ok(self) -> bool:
        return self.structure.shd == 0

    @property
    def corr_ok(self) -> bool:
        ms = self.match.matched_spearman
        return all(ms[i] >= self.min_corr for i in self.psi_empty)

    @property
    def recovered(self) -> bool:
        return self.shd_ok and self.corr_ok and self.jacobian.all_pass

    @property
    def reports(self) -> list:
        return [self.match, self.jacobian, self.structure, self.scatter]

    def verdict(self) -> dict:
        return {
            "shd_zero": self.shd_ok,
            "psi_empty_variables": self.psi_empty,
            "psi_empty_spearman_ok": self.corr_ok,
            "jacobian_all_pass": self.jacobian.all_pass,
            "recovered": self.recovered,
        }


def evaluate_model(
    model,
    dataset,
    threshold: float = 0.1,
    tau_j: float = 0.1,
    num_points: int = 200,
    scatter_points: int = 1000,
    seed: int = 0,
    h: float = 1e-3,
) -> Evaluation:
    """Match, Jacobian-support and structure diagnostics for ``model`` on ``dataset``."""
    from .semgen import mix

    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(11,)))
    zhat = model.encode_mean(dataset.x, dataset.u)
    match = match_latents(zhat, dataset.z)
    network = moralize(dataset.spec.dag)
    idx = np.sort(rng.choice(len(dataset), size=min(num_points, len(dataset)), replace=False))
    u = dataset.u[idx]
    jac = jacobian_support(lambda z: model.encode_mean(mix(dataset.mixing, z), u), dataset.z[idx], match.permutation, network, h, tau_j)
    structure = structure_metrics(model.adjacency_numpy(), threshold, dataset.spec.dag, match.permutation)
    sidx = np.sort(rng.choice(len(dataset), size=min(scatter_points, len(dataset)), replace=False))
    return Evaluation(match, jac, structure, ScatterData(zhat[sidx], dataset.z[sidx]), psi_empty(network))
