"""``cenlab`` command line: simulate, train, eval, verify.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 a ``verify`` check failed.
"""

from __future__ import annotations

import argparse
import configparser
import dataclasses
import hashlib
import json
import logging
import sys
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .graphs import CycleError, Dag, load_edge_list, preset

log = logging.getLogger("cenlab")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_VERIFY = 0, 2, 3, 4

# config file section for every field; flags use the field name with dashes
SECTIONS = {
    "sem": ("preset", "edges", "noise", "domains", "samples", "mixing_layers", "d"),
    "train": ("prior", "epochs", "lr", "beta1", "beta2", "eps", "batch_size", "lam", "dec_var", "checkpoint_every", "ordering"),
    "eval": ("threshold", "tau_j", "jac_points", "baseline"),
    "run": ("seed", "out"),
}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    preset: str = "y4"
    edges: str = ""
    noise: str = "gaussian"
    domains: int = 13
    samples: int = 5000
    mixing_layers: int = 2
    d: int = 0  # 0 means d = n
    prior: str = "parametric"
    epochs: int = 60
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 256
    lam: float = 1e-2
    dec_var: float = 0.01
    checkpoint_every: int = 0
    ordering: str = "topological"
    threshold: float = 0.1
    tau_j: float = 0.1
    jac_points: int = 200
    baseline: bool = False
    seed: int = 0
    out: str = "runs"

    def __post_init__(self):
        if self.noise not in ("gaussian", "laplace"):
            raise ConfigError(f"noise must be gaussian or laplace, got {self.noise!r}")
        if self.prior not in ("flow", "parametric"):
            raise ConfigError(f"prior must be flow or parametric, got {self.prior!r}")
        if self.domains < 1 or self.samples < 1:
            raise ConfigError("domains and samples must be positive")

    # -- derived objects ---------------------------------------------------
    def dag(self) -> Dag:
        if self.edges:
            g = load_edge_list(Path(self.edges).read_text())
            if not isinstance(g, Dag):
                raise ConfigError("edge list must be directed")
            return g
        return preset(self.preset)

    def train_config(self):
        from .train import TrainConfig

        return TrainConfig(
            lr=self.lr, betas=(self.beta1, self.beta2), eps=self.eps, batch_size=self.batch_size, epochs=self.epochs,
            lam=self.lam, seed=self.seed, prior=self.prior, dec_var=self.dec_var, checkpoint_every=self.checkpoint_every,
        )

    def model_ordering(self, dag: Dag) -> tuple[int, ...]:
        if self.ordering == "topological":
            return tuple(dag.topological_order())
        if self.ordering == "identity":
            return tuple(range(dag.n))
        if self.ordering == "random":
            return tuple(int(v) for v in np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=(8,))).permutation(dag.n))
        try:
            order = tuple(int(v) for v in self.ordering.split(","))
        except ValueError as exc:
            raise ConfigError(f"bad ordering {self.ordering!r}") from exc
        if sorted(order) != list(range(dag.n)):
            raise ConfigError(f"ordering must be a permutation of 0..{dag.n - 1}")
        return order

    def digest(self) -> str:
        # output location does not change results
        blob = json.dumps({k: v for k, v in dataclasses.asdict(self).items() if k != "out"}, sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:10]

    def tag(self) -> str:
        return f"seed{self.seed}_{self.digest()}"

    def to_ini(self) -> str:
        lines = []
        values = dataclasses.asdict(self)
        for section, keys in SECTIONS.items():
            lines.append(f"[{section}]")
            lines += [f"{k} = {values[k]}" for k in keys]
            lines.append("")
        return "\n".join(lines)


def _coerce(name: str, raw: str):
    kind = {f.name: f.type for f in fields(RunConfig)}[name]
    try:
        if kind in ("bool", bool):
            return configparser.ConfigParser.BOOLEAN_STATES[raw.strip().lower()]
        if kind in ("int", int):
            return int(raw)
        if kind in ("float", float):
            return float(raw)
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"bad value for {name}: {raw!r}") from exc
    return raw.strip()


def read_config_file(path: str | Path) -> dict:
    parser = configparser.ConfigParser()
    try:
        if not parser.read(path):
            raise ConfigError(f"cannot read config file {path}")
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    out = {}
    for section in parser.sections():
        if section not in SECTIONS:
            raise ConfigError(f"unknown section [{section}]")
        for key, raw in parser[section].items():
            if key not in SECTIONS[section]:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            out[key] = _coerce(key, raw)
    return out


def build_config(args: argparse.Namespace) -> RunConfig:
    values = read_config_file(args.config) if args.config else {}
    for f in fields(RunConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            values[f.name] = v
    return RunConfig(**values)


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cenlab", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI file with [sem], [train], [eval], [run] sections")
    common.add_argument("--seed", type=int)
    common.add_argument("--out")
    sem = argparse.ArgumentParser(add_help=False)
    sem.add_argument("--preset", choices=["y4", "chain4", "fig1", "fig2", "empty4"])
    sem.add_argument("--edges", help="custom edge list file (first line n, then 'parent child' pairs)")
    sem.add_argument("--noise", choices=["gaussian", "laplace"])
    sem.add_argument("--domains", type=int)
    sem.add_argument("--samples", type=int, help="samples per domain")
    sem.add_argument("--mixing-layers", dest="mixing_layers", type=int)
    sem.add_argument("--d", type=int, help="observed dimension (default n)")
    train = argparse.ArgumentParser(add_help=False)
    train.add_argument("--prior", choices=["flow", "parametric"])
    train.add_argument("--epochs", type=int)
    train.add_argument("--lr", type=float)
    train.add_argument("--batch-size", dest="batch_size", type=int)
    train.add_argument("--lam", type=float, help="sparsity weight")
    train.add_argument("--dec-var", dest="dec_var", type=float)
    train.add_argument("--checkpoint-every", dest="checkpoint_every", type=int)
    train.add_argument("--ordering", help="topological | identity | random | comma list")
    data = argparse.ArgumentParser(add_help=False)
    data.add_argument("--data", help="dataset CSV written by 'simulate' (default: simulate from config)")
    ev = argparse.ArgumentParser(add_help=False)
    ev.add_argument("--threshold", type=float)
    ev.add_argument("--tau-j", dest="tau_j", type=float)
    ev.add_argument("--jac-points", dest="jac_points", type=int)
    ev.add_argument("--baseline", action="store_const", const=True, help="also train the A = 0 baseline")

    sub.add_parser("simulate", parents=[common, sem], help="generate a multi-domain dataset")
    t = sub.add_parser("train", parents=[common, sem, train, data], help="fit a model")
    t.add_argument("--resume", help="start from this checkpoint")
    e = sub.add_parser("eval", parents=[common, sem, train, data, ev], help="identifiability reports for a checkpoint")
    e.add_argument("--model", required=True, help="checkpoint written by 'train'")
    v = sub.add_parser("verify", parents=[common, sem], help="simulator-side theory checks")
    v.add_argument("--quick", action="store_true", help="smaller random suites")
    return p


def _write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    tmp.replace(path)


def _dataset(cfg: RunConfig, data: str | None):
    from .semgen import LinearSemSpec, MixingConfig, generate_dataset, load_dataset

    if data:
        if not Path(data).exists():
            raise ConfigError(f"dataset {data} not found")
        return load_dataset(data)
    dag = cfg.dag()
    return generate_dataset(
        LinearSemSpec(dag, cfg.noise), cfg.domains, cfg.samples, MixingConfig(d=cfg.d or None, num_layers=cfg.mixing_layers), seed=cfg.seed
    )


def cmd_simulate(cfg: RunConfig, args) -> int:
    ds = _dataset(cfg, None)
    out = Path(cfg.out)
    csv_path, meta_path = ds.save(out, "dataset")
    _write(out / "effective_config.ini", cfg.to_ini())
    print(f"wrote {csv_path} ({len(ds)} rows, n={ds.n}, d={ds.d}) and {meta_path}")
    return EXIT_OK


def _model_for(cfg: RunConfig, ds, independent: bool = False):
    from .model import Model
    from .train import model_config_for

    mc = model_config_for(ds, cfg.train_config(), ordering=cfg.model_ordering(ds.spec.dag), independent=independent)
    return Model(mc, seed=cfg.seed)


def cmd_train(cfg: RunConfig, args) -> int:
    from .model import Model
    from .train import fit, write_trace

    ds = _dataset(cfg, args.data)
    out = Path(cfg.out)
    if args.resume:
        model, _ = Model.load(args.resume)
    else:
        model = _model_for(cfg, ds)
    tag = cfg.tag()
    ckpt = out / f"model_{tag}.npz"
    res = fit(ds, model, cfg.train_config(), checkpoint_path=ckpt)
    write_trace(res.trace, out / f"trace_{tag}.csv")
    _write(out / "effective_config.ini", cfg.to_ini())
    means = res.epoch_means()
    if len(means):
        print(f"trained {cfg.epochs} epochs: loss {means[0]:.4f} -> {means[-1]:.4f}")
    print(f"checkpoint {ckpt}")
    return EXIT_OK


def cmd_eval(cfg: RunConfig, args) -> int:
    from .evaluate import baseline_comparison, emit_report, evaluate_model
    from .model import Model

    if not Path(args.model).exists():
        raise ConfigError(f"checkpoint {args.model} not found")
    ds = _dataset(cfg, args.data)
    model, header = Model.load(args.model)
    ev = evaluate_model(model, ds, cfg.threshold, cfg.tau_j, cfg.jac_points, seed=cfg.seed)
    reports = ev.reports
    if cfg.baseline:
        reports.append(baseline_comparison(ds, cfg.train_config()))
    tag = f"seed{cfg.seed}_{header['config_hash']}"
    written = emit_report(reports, cfg.out, tag, extra={"verdict": ev.verdict()})
    _write(Path(cfg.out) / "effective_config.ini", cfg.to_ini())
    m = ev.match
    print(f"permutation {m.permutation.map}  matched |spearman| {np.round(m.matched_spearman, 3).tolist()}")
    print(f"SHD {ev.structure.shd}  moral SHD {ev.structure.moral_shd}  jacobian rows {ev.jacobian.row_pass}")
    for k, v in ev.verdict().items():
        print(f"  {k}: {v}")
    print(f"wrote {len(written)} files to {cfg.out}")
    return EXIT_OK


def cmd_verify(cfg: RunConfig, args) -> int:
    from .checks import run_all

    results = run_all(cfg.dag(), cfg.domains, cfg.seed, cfg.noise, quick=args.quick)
    for r in results:
        print(r.line())
    summary = {r.name: {"passed": r.passed, **r.detail} for r in results}
    _write(Path(cfg.out) / f"verify_{cfg.tag()}.json", json.dumps(summary, indent=2, sort_keys=True, default=str) + "\n")
    _write(Path(cfg.out) / "effective_config.ini", cfg.to_ini())
    return EXIT_OK if all(r.passed for r in results) else EXIT_VERIFY


COMMANDS = {"simulate": cmd_simulate, "train": cmd_train, "eval": cmd_eval, "verify": cmd_verify}


def main(argv=None) -> int:
    from .train import NumericalError

    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = build_config(args)
        return COMMANDS[args.command](cfg, args)
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, CycleError, FileNotFoundError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
