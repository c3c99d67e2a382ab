"""Command-line entry point: ``risksac <verb> [options]``.

Verbs: gen-data, train, evaluate, upper-bounds, sweep, verify, report.

Configuration is a JSON file (``--config``) whose top-level keys are those of
``RunConfig``; unknown keys anywhere are rejected. Flags override file values.
Every CSV written carries ``# run_config:`` and ``# code_version:`` comment
lines, and every JSON output has ``run_config`` and ``code_version`` keys.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from risksac import bench, oracle
from risksac.approximator import ArchitectureSpec, load_checkpoint
from risksac.env import (
    DISTRIBUTION_NAMES,
    SPLITS,
    TRAINING_DISTRIBUTION,
    GridConfig,
    load_dataset,
    save_dataset,
)
from risksac.evaluation import ActorPolicy, evaluate_policy
from risksac.greedy import GreedyPolicy
from risksac.provenance import canonical_json, code_version, derive_seed
from risksac.sac import TrainerConfig, TrainingDiverged, train_seeds, write_metrics

log = logging.getLogger("risksac")

GREEDY = "greedy"


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class SweepOptions:
    axis: str = "beta"
    values: tuple = ()
    data_seeds: tuple[int, ...] = (0, 1, 2)


@dataclass(frozen=True)
class Paths:
    data_dir: str = "data"
    out_dir: str = "runs"
    upper_bounds: str | None = None


@dataclass(frozen=True)
class RunConfig:
    """Everything a command needs.

    ``desk=True`` starts the trainer from the reduced CPU preset before applying
    the ``trainer`` overrides. ``master_seed`` feeds ``derive_seed`` for data
    generation and training seeds.
    """

    master_seed: int = 0
    desk: bool = False
    grid: GridConfig = field(default_factory=GridConfig)
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    sweep: SweepOptions = field(default_factory=SweepOptions)
    paths: Paths = field(default_factory=Paths)
    distributions: tuple[str, ...] = DISTRIBUTION_NAMES
    training_distribution: str = TRAINING_DISTRIBUTION
    deterministic_eval: bool = True

    def __post_init__(self):
        unknown = [d for d in (*self.distributions, self.training_distribution)
                   if d not in DISTRIBUTION_NAMES]
        if unknown:
            raise ValueError(f"unknown distribution(s) {unknown}; registered: "
                             f"{', '.join(DISTRIBUTION_NAMES)}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["trainer"] = self.trainer.to_dict()
        return json.loads(canonical_json(d))


def _strict(cls, data: dict, where: str) -> dict:
    if not isinstance(data, dict):
        raise ValueError(f"{where} must be a JSON object")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ValueError(f"unknown key(s) in {where}: {unknown}")
    return data


def build_config(data: dict | None = None) -> RunConfig:
    """Validate a config mapping (as loaded from JSON) into a ``RunConfig``."""
    data = dict(_strict(RunConfig, data or {}, "config"))
    grid = GridConfig(**_strict(GridConfig, data.pop("grid", {}), "grid"))
    trainer_d = dict(_strict(TrainerConfig, data.pop("trainer", {}), "trainer"))
    if "architecture" in trainer_d:
        trainer_d["architecture"] = ArchitectureSpec(
            **_strict(ArchitectureSpec, trainer_d["architecture"], "trainer.architecture"))
    desk = bool(data.get("desk", False))
    trainer = TrainerConfig.desk(**trainer_d) if desk else TrainerConfig(**trainer_d)
    sweep = SweepOptions(**_strict(SweepOptions, data.pop("sweep", {}), "sweep"))
    paths = Paths(**_strict(Paths, data.pop("paths", {}), "paths"))
    if "distributions" in data:
        data["distributions"] = tuple(data["distributions"])
    return RunConfig(grid=grid, trainer=trainer, sweep=sweep, paths=paths, **data)


def load_config(path: str | Path | None) -> dict:
    if path is None:
        return {}
    return json.loads(Path(path).read_text())


def _set(d: dict, dotted: str, value) -> None:
    *head, last = dotted.split(".")
    for k in head:
        d = d.setdefault(k, {})
    d[last] = value


def resolve_config(args: argparse.Namespace) -> RunConfig:
    data = load_config(getattr(args, "config", None))
    overrides = {
        "master_seed": "master_seed", "desk": "desk", "data_dir": "paths.data_dir",
        "out_dir": "paths.out_dir", "upper_bounds": "paths.upper_bounds",
        "beta": "trainer.beta", "variant": "trainer.variant", "alpha_final": "trainer.alpha_final",
        "steps": "trainer.total_steps", "seeds": "trainer.seeds", "axis": "sweep.axis",
        "values": "sweep.values", "data_seeds": "sweep.data_seeds",
        "distributions": "distributions", "distribution": "training_distribution",
    }
    for attr, key in overrides.items():
        value = getattr(args, attr, None)
        if value is not None and value is not False:
            _set(data, key, value)
    return build_config(data)


def training_seeds(config: RunConfig) -> tuple[int, ...]:
    """Each configured trainer seed mapped through the master seed."""
    return tuple(derive_seed(config.master_seed, f"train/{s}") for s in config.trainer.seeds)


def provenance(config: RunConfig) -> list[str]:
    return [f"run_config: {canonical_json(config.to_dict())}", f"code_version: {code_version()}"]


def _write_json(path: Path, payload: dict, config: RunConfig) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {**payload, "run_config": config.to_dict(), "code_version": code_version()}
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return path


# ---------------------------------------------------------------------------
# data


def _split_path(data_dir: Path, name: str, split: str) -> Path:
    return data_dir / name / f"{split}.json"


def load_datasets(config: RunConfig, names=None) -> dict:
    data_dir = Path(config.paths.data_dir)
    out = {}
    for name in names or config.distributions:
        paths = {s: _split_path(data_dir, name, s) for s in SPLITS}
        missing = [str(p) for p in paths.values() if not p.exists()]
        if missing:
            raise FileNotFoundError(f"missing dataset files {missing}; run `risksac gen-data` first")
        out[name] = {s: load_dataset(p) for s, p in paths.items()}
    return out


def cmd_gen_data(config: RunConfig, args) -> int:
    data_dir = Path(config.paths.data_dir)
    datasets = bench.benchmark_datasets(config.master_seed, config.grid, config.distributions)
    files = {}
    for name, splits in datasets.items():
        for split, ds in splits.items():
            p = save_dataset(ds, _split_path(data_dir, name, split))
            files[str(p.relative_to(data_dir))] = {
                "sha256": hashlib.sha256(p.read_bytes()).hexdigest(),
                "seed": ds.seed, "n_episodes": len(ds), "n_items": ds.n_items,
            }
    _write_json(data_dir / "manifest.json", {"files": files}, config)
    print(f"wrote {len(files)} dataset files to {data_dir}")
    return 0


# ---------------------------------------------------------------------------
# training and evaluation


def _run_tag(config: RunConfig) -> str:
    t = config.trainer
    tag = f"{config.training_distribution}_beta{t.beta:g}_alpha{t.alpha_final:g}"
    return tag + ("_qbar" if t.variant == "qbar" else "")


def cmd_train(config: RunConfig, args) -> int:
    splits = load_datasets(config, [config.training_distribution])[config.training_distribution]
    trainer = replace(config.trainer, seeds=training_seeds(config))
    out = Path(config.paths.out_dir) / _run_tag(config)
    try:
        best, runs = train_seeds(splits, trainer, config.grid, out)
    except TrainingDiverged as exc:
        print(f"training aborted: {exc}", file=sys.stderr)
        return 1
    rows = [m for r in runs for m in r.metrics]
    write_metrics(out / "metrics.csv", rows, provenance(config))
    _write_json(out / "best.json", {
        "seed": best.seed, "step": best.best_step, "validation_return": best.best_validation,
        "checkpoint": str(best.checkpoint) if best.checkpoint else None,
        "per_seed": {str(r.seed): r.best_validation for r in runs},
    }, config)
    print(f"best seed {best.seed}: validation {best.best_validation:.2f} at step {best.best_step}")
    print(f"outputs in {out}")
    return 0


def _policy(checkpoint: str, config: RunConfig):
    if checkpoint == GREEDY:
        return GreedyPolicy(config.grid), GREEDY
    path = Path(checkpoint)
    if path.is_dir():
        marker = json.loads((path / "best.json").read_text())
        path = Path(marker["checkpoint"])
    bundle, _ = load_checkpoint(path)
    return ActorPolicy(bundle.actor, config.grid, deterministic=config.deterministic_eval), str(path)


def cmd_evaluate(config: RunConfig, args) -> int:
    datasets = load_datasets(config)
    policy, policy_id = _policy(args.checkpoint, config)
    upper = None
    if config.paths.upper_bounds and Path(config.paths.upper_bounds).exists():
        upper = bench.UpperBoundTable.load(config.paths.upper_bounds)
    else:
        log.warning("no upper-bound table found: reporting gains versus greedy only")
    greedy = upper.greedy if upper else bench.greedy_returns(datasets, config.grid, args.split)
    rows = []
    for name, splits in datasets.items():
        ret = evaluate_policy(policy, splits[args.split], config.grid, policy_id).mean_return
        rel = float("nan")
        if upper is not None and name in upper.upper:
            rel = bench.relative_gain(ret, greedy[name], upper.upper[name])
        rows.append({"sweep_axis": "evaluate", "value": policy_id, "distribution": name,
                     "mean_return": ret, "gain_vs_greedy_pct": bench.gain_vs_greedy_pct(ret, greedy[name]),
                     "relative_gain": rel, "seed_set": "", "data_seed_set": ""})
    header = provenance(config)
    if upper is not None:
        header.append(f"upper_bound_version: {upper.version}")
    out = Path(args.output or Path(config.paths.out_dir) / "evaluation.csv")
    bench.write_results(out, rows, header)
    for r in rows:
        print(f"{r['distribution']:>12}  {r['mean_return']:9.2f}  {r['gain_vs_greedy_pct']:+7.2f}%")
    print(f"wrote {out}")
    return 0


def cmd_upper_bounds(config: RunConfig, args) -> int:
    datasets = load_datasets(config)
    trainer = replace(config.trainer, seeds=training_seeds(config))
    out = Path(config.paths.upper_bounds or Path(config.paths.out_dir) / "upper_bounds.json")
    try:
        table = bench.compute_upper_bounds(datasets, trainer, config.grid, config.master_seed,
                                           out.parent / "upper_bound_runs")
    except TrainingDiverged as exc:
        print(f"training aborted: {exc}", file=sys.stderr)
        return 1
    table.save(out, {"run_config": config.to_dict()})
    print(f"upper-bound table {table.version} written to {out}")
    return 0


def cmd_sweep(config: RunConfig, args) -> int:
    values = config.sweep.values or tuple(bench.DEFAULT_GRIDS[config.sweep.axis])
    trainer = replace(config.trainer, seeds=training_seeds(config))
    spec = bench.SweepSpec(config.sweep.axis, values, trainer, config.sweep.data_seeds,
                           config.training_distribution)
    datasets = load_datasets(config)
    upper = None
    if config.paths.upper_bounds and Path(config.paths.upper_bounds).exists():
        upper = bench.UpperBoundTable.load(config.paths.upper_bounds)
    out = Path(config.paths.out_dir) / f"sweep_{spec.axis}"
    result = bench.run_sweep(spec, datasets, config.grid, upper, out / "runs", args.workers)
    header = provenance(config)
    if upper is not None:
        header.append(f"upper_bound_version: {upper.version}")
    for f in result.failures:
        header.append(f"failed: {f['value']}: {f['error']}")
    bench.write_results(out / "results.csv", result.rows, header)
    bench.write_fig3(out / "fig3.csv", result, header)
    print(f"{len(result.points)} of {len(values)} sweep points finished; results in {out}")
    return 1 if result.failures else 0


def cmd_verify(config: RunConfig, args) -> int:
    report = oracle.verification_report(args.mdps, config.master_seed, args.pi_beta, args.alpha)
    text = json.dumps({**report, "run_config": config.to_dict(), "code_version": code_version()},
                      indent=2, sort_keys=True)
    if args.output:
        Path(args.output).parent.mkdir(parents=True, exist_ok=True)
        Path(args.output).write_text(text + "\n")
    print(text)
    return 0 if report["passed"] else 1


def _read_results(path: Path) -> list[dict]:
    with path.open() as f:
        rows = list(csv.DictReader(line for line in f if not line.startswith("#")))
    for r in rows:
        for k in ("mean_return", "gain_vs_greedy_pct", "relative_gain"):
            r[k] = float(r[k])
    return rows


def cmd_report(config: RunConfig, args) -> int:
    results = []
    for p in args.results:
        rows = _read_results(Path(p))
        if not rows or rows[0]["sweep_axis"] not in bench.AXES:
            log.warning("%s holds no sweep results; skipped", p)
            continue
        spec = bench.SweepSpec(rows[0]["sweep_axis"], training_distribution=config.training_distribution)
        results.append(bench.SweepResult(spec, [], rows, [], None))
    out = Path(args.output or Path(config.paths.out_dir) / "fig4.csv")
    header = provenance(config)
    bench.write_fig4(out, results, header_lines=header)
    for res in results:
        for e in bench.fig3_rows(res):
            print(f"{e['sweep_axis']}={e['value']}: train {e['train_relative_gain']:.3f}, "
                  f"shift {e['shift_relative_gain']:.3f}")
    print(f"wrote {out}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--master-seed", dest="master_seed", type=int)
    p.add_argument("--desk", action="store_true", help="start from the reduced CPU trainer preset")
    p.add_argument("--data-dir", dest="data_dir")
    p.add_argument("--out-dir", dest="out_dir")
    p.add_argument("--upper-bounds", dest="upper_bounds", help="upper-bound table JSON")
    p.add_argument("--distributions", nargs="+")
    p.add_argument("-v", "--verbose", action="store_true")


def _training(p: argparse.ArgumentParser) -> None:
    p.add_argument("--beta", type=float)
    p.add_argument("--variant", choices=("entropic", "qbar"))
    p.add_argument("--alpha-final", dest="alpha_final", type=float)
    p.add_argument("--steps", type=int)
    p.add_argument("--seeds", type=int, nargs="+")
    p.add_argument("--distribution", help="training distribution")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="risksac", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="sample datasets for every item distribution")
    _common(p)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train SAC on the training distribution")
    _common(p)
    _training(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="evaluate a checkpoint (or 'greedy') on all distributions")
    _common(p)
    p.add_argument("checkpoint", help="checkpoint file, training output dir, or 'greedy'")
    p.add_argument("--split", choices=SPLITS, default="test")
    p.add_argument("--output")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("upper-bounds", help="train per distribution to build the upper-bound table")
    _common(p)
    _training(p)
    p.set_defaults(func=cmd_upper_bounds)

    p = sub.add_parser("sweep", help="run a benchmark sweep")
    _common(p)
    _training(p)
    p.add_argument("--axis", choices=bench.AXES)
    p.add_argument("--values", type=json.loads,
                   help="JSON list of values, e.g. '[-0.5, -1]' or '[[-1, 0.05]]'")
    p.add_argument("--data-seeds", dest="data_seeds", type=int, nargs="+")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("verify", help="run the tabular oracle checks")
    _common(p)
    p.add_argument("--mdps", type=int, default=100, help="policy-improvement MDP count")
    p.add_argument("--beta", dest="pi_beta", type=float, default=-0.01,
                   help="beta for the policy-improvement sweep")
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--output")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("report", help="tradeoff table from sweep results")
    _common(p)
    p.add_argument("results", nargs="+", help="results.csv files from sweeps")
    p.add_argument("--output")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = resolve_config(args)
        return args.func(config, args)
    except (ValueError, KeyError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
