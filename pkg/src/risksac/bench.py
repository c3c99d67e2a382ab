"""Robustness benchmarks: data manipulation, sweeps over the entropy
coefficient, risk parameter and L2 strength, and the metrics that compare a
policy against the greedy heuristic and against per-distribution upper bounds.

Relative gain on a distribution is the fraction of the achievable improvement
over greedy that a policy realizes there, where "achievable" is what SAC
reaches when trained on that distribution itself (the upper-bound table).
"""
from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from multiprocessing import get_context
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from risksac.env import (
    DEFAULT_SPLIT_SIZES,
    DISTRIBUTION_NAMES,
    TRAINING_DISTRIBUTION,
    EpisodeDataset,
    GridConfig,
    generate_splits,
    make_distribution,
)
from risksac.evaluation import ActorPolicy, EvalResult, evaluate_policy, rollout_returns
from risksac.greedy import GreedyPolicy
from risksac.provenance import code_version, content_hash, derive_seed
from risksac.sac import TrainerConfig, TrainingDiverged, train_seeds

__all__ = [
    "AXES", "DEFAULT_GRIDS", "EvalResult", "SweepSpec", "SweepResult", "UpperBoundTable",
    "benchmark_datasets", "manipulate_dataset", "evaluate_policy", "rollout_returns",
    "greedy_returns", "relative_gain", "gain_vs_greedy_pct", "tradeoff_score",
    "tradeoff_curve", "crossover_weight", "compute_upper_bounds", "train_and_evaluate",
    "run_sweep", "write_results", "write_fig3", "write_fig4",
]

log = logging.getLogger(__name__)

AXES = ("beta", "alpha_final", "manipulation_p", "l2_coefficient", "beta_alpha")
RESULT_COLUMNS = ("sweep_axis", "value", "distribution", "mean_return", "gain_vs_greedy_pct",
                  "relative_gain", "seed_set", "data_seed_set")
SHIFT_AVERAGE = "shift-average"

DEFAULT_GRIDS = {
    "manipulation_p": [round(0.1 * i, 1) for i in range(11)],
    "alpha_final": [0.0, 0.01, 0.05, 0.1, 0.15, 0.2],
    "beta": [-0.1, -0.5, -1.0, -2.0, -5.0, -10.0],
    "l2_coefficient": [1e-4, 1e-3, 1e-2],
}
DEFAULT_GRIDS["beta_alpha"] = [
    [b, a] for b in DEFAULT_GRIDS["beta"] for a in DEFAULT_GRIDS["alpha_final"]
]


# ---------------------------------------------------------------------------
# datasets


def benchmark_datasets(master_seed: int = 0, grid: GridConfig | None = None,
                       names: Iterable[str] = DISTRIBUTION_NAMES,
                       sizes: dict[str, int] | None = None) -> dict[str, dict[str, EpisodeDataset]]:
    """Train/validation/test splits for every named distribution.

    Each distribution draws from its own stream ``derive_seed(master_seed,
    "data/<name>")``.
    """
    grid = grid or GridConfig()
    out = {}
    for name in names:
        dist = make_distribution(name, grid.items_per_step_rate, grid.target_cell)
        out[name] = generate_splits(dist, derive_seed(master_seed, f"data/{name}"),
                                    grid.horizon, sizes or DEFAULT_SPLIT_SIZES)
    return out


def manipulate_dataset(dataset: EpisodeDataset, p: float, seed: int,
                       config: GridConfig | None = None) -> EpisodeDataset:
    """Replace each item location, independently with probability ``p``, by a
    cell drawn uniformly from the non-target cells. Appearance times are kept.
    """
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p must lie in [0, 1], got {p}")
    if p == 0.0:
        return dataset
    config = config or GridConfig()
    cells = np.array([(r, c) for r in range(config.height) for c in range(config.width)
                      if (r, c) != config.target_cell], dtype=np.int64)
    rng = np.random.default_rng(seed)
    episodes = []
    for ep in dataset.episodes:
        ep = ep.copy()
        hit = rng.random(len(ep)) < p
        ep[hit, 1:] = cells[rng.integers(len(cells), size=int(hit.sum()))]
        episodes.append(ep[np.lexsort((ep[:, 2], ep[:, 1], ep[:, 0]))])
    return replace(dataset, episodes=tuple(episodes))


# ---------------------------------------------------------------------------
# metrics


def relative_gain(r_alg: float, r_greedy: float, r_upper: float) -> float:
    """``(r_alg - r_greedy) / (r_upper - r_greedy)``."""
    den = r_upper - r_greedy
    if den == 0 or not math.isfinite(den):
        raise ValueError(f"degenerate relative-gain denominator: upper {r_upper}, greedy {r_greedy}")
    return (r_alg - r_greedy) / den


def gain_vs_greedy_pct(r_alg: float, r_greedy: float) -> float:
    if r_greedy == 0:
        raise ValueError("greedy return is zero; percentage gain undefined")
    return 100.0 * (r_alg - r_greedy) / abs(r_greedy)


def tradeoff_score(w: float, perf_train: float, perf_shift: float) -> float:
    if not 0.0 <= w <= 1.0:
        raise ValueError(f"weight must lie in [0, 1], got {w}")
    return w * perf_train + (1.0 - w) * perf_shift


def tradeoff_curve(points: Sequence[tuple[float, float]], weights: Sequence[float]) -> np.ndarray:
    """Best ``tradeoff_score`` over a method's sweep points, per weight.

    ``points`` are ``(perf_train, perf_shift)`` pairs, one per swept value.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    if not len(pts):
        return np.full(len(weights), np.nan)
    return np.array([max(tradeoff_score(w, t, s) for t, s in pts) for w in weights])


def crossover_weight(curve_a: Sequence[float], curve_b: Sequence[float],
                     weights: Sequence[float]) -> float | None:
    """Smallest weight from which method A scores at least as high as method B
    for every larger weight on the grid; ``None`` if B wins at ``weights[-1]``."""
    a, b, w = map(np.asarray, (curve_a, curve_b, weights))
    ahead = a >= b
    if not ahead[-1]:
        return None
    k = len(ahead) - 1
    while k > 0 and ahead[k - 1]:
        k -= 1
    return float(w[k])


# ---------------------------------------------------------------------------
# greedy baseline and upper bounds


def greedy_returns(datasets: dict[str, dict[str, EpisodeDataset]], grid: GridConfig,
                   split: str = "test") -> dict[str, float]:
    policy = GreedyPolicy(grid)
    return {name: evaluate_policy(policy, s[split], grid, "greedy").mean_return
            for name, s in datasets.items()}


@dataclass
class UpperBoundTable:
    """Per-distribution test returns of SAC trained on that distribution, with
    the greedy test returns they are compared against."""

    upper: dict[str, float]
    greedy: dict[str, float]
    trainer: dict = field(default_factory=dict)
    data_seed: int = 0

    @property
    def version(self) -> str:
        return content_hash({"upper": self.upper, "greedy": self.greedy,
                             "trainer": self.trainer, "data_seed": self.data_seed})

    def to_dict(self) -> dict:
        return {"version": self.version, "upper": self.upper, "greedy": self.greedy,
                "trainer": self.trainer, "data_seed": self.data_seed}

    def save(self, path: str | Path, extra: dict | None = None) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        payload = self.to_dict() | {"code_version": code_version()} | (extra or {})
        path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
        return path

    @classmethod
    def load(cls, path: str | Path) -> "UpperBoundTable":
        d = json.loads(Path(path).read_text())
        table = cls(d["upper"], d["greedy"], d.get("trainer", {}), d.get("data_seed", 0))
        if "version" in d and d["version"] != table.version:
            raise ValueError(f"upper-bound table {path} does not match its recorded version")
        return table


def train_and_evaluate(train_splits: dict[str, EpisodeDataset], config: TrainerConfig,
                       grid: GridConfig, test_sets: dict[str, EpisodeDataset],
                       out_dir: str | Path | None = None) -> tuple[dict[str, float], float]:
    """Train all seeds, keep the best validation run, and return its mean test
    return per distribution along with the selected validation return."""
    best, _ = train_seeds(train_splits, config, grid, out_dir)
    policy = ActorPolicy(best.best_bundle.actor, grid)
    returns = {name: evaluate_policy(policy, ds, grid).mean_return for name, ds in test_sets.items()}
    return returns, best.best_validation


def compute_upper_bounds(datasets: dict[str, dict[str, EpisodeDataset]], config: TrainerConfig,
                         grid: GridConfig | None = None, data_seed: int = 0,
                         out_dir: str | Path | None = None) -> UpperBoundTable:
    grid = grid or GridConfig()
    upper = {}
    for name, splits in datasets.items():
        sub = None if out_dir is None else Path(out_dir) / name
        returns, _ = train_and_evaluate(splits, config, grid, {name: splits["test"]}, sub)
        upper[name] = returns[name]
        log.info("upper bound %s: %.2f", name, upper[name])
    return UpperBoundTable(upper, greedy_returns(datasets, grid), config.to_dict(), data_seed)


# ---------------------------------------------------------------------------
# sweeps


@dataclass(frozen=True)
class SweepSpec:
    axis: str
    values: tuple = ()
    base: TrainerConfig = field(default_factory=TrainerConfig)
    data_seeds: tuple[int, ...] = (0, 1, 2)
    training_distribution: str = TRAINING_DISTRIBUTION

    def __post_init__(self):
        if self.axis not in AXES:
            raise ValueError(f"unknown sweep axis {self.axis!r}; expected one of {AXES}")
        values = tuple(tuple(v) if isinstance(v, (list, tuple)) else v for v in self.values)
        for v in values:
            flat = v if isinstance(v, tuple) else (v,)
            if self.axis == "beta_alpha" and len(flat) != 2:
                raise ValueError("beta_alpha values must be (beta, alpha_final) pairs")
            if not all(math.isfinite(float(x)) for x in flat):
                raise ValueError(f"non-finite sweep value {v!r}")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "data_seeds", tuple(int(s) for s in self.data_seeds))
        if self.axis == "manipulation_p" and not self.data_seeds:
            raise ValueError("data manipulation needs at least one data seed")

    def trainer_for(self, value) -> TrainerConfig:
        base = self.base
        if self.axis == "beta":
            return replace(base, beta=float(value))
        if self.axis == "alpha_final":
            return replace(base, alpha_final=float(value))
        if self.axis == "l2_coefficient":
            arch = replace(base.architecture, l2_coefficient=float(value))
            return replace(base, architecture=arch)
        if self.axis == "beta_alpha":
            return replace(base, beta=float(value[0]), alpha_final=float(value[1]))
        return base

    def data_seeds_for(self, value) -> tuple[int, ...]:
        return self.data_seeds if self.axis == "manipulation_p" else ()


@dataclass
class PointResult:
    value: object
    test_returns: dict[str, float]
    validation: float
    seeds: tuple[int, ...]
    data_seeds: tuple[int, ...]


@dataclass
class SweepResult:
    spec: SweepSpec
    points: list[PointResult]
    rows: list[dict]
    failures: list[dict]
    upper_bound_version: str | None


def _run_point(spec: SweepSpec, value, splits: dict[str, EpisodeDataset],
               test_sets: dict[str, EpisodeDataset], grid: GridConfig,
               out_dir: str | None) -> PointResult:
    config = spec.trainer_for(value)
    data_seeds = spec.data_seeds_for(value)
    tag = f"{spec.axis}={_fmt(value)}"
    if not data_seeds:
        sub = None if out_dir is None else Path(out_dir) / tag
        returns, val = train_and_evaluate(splits, config, grid, test_sets, sub)
    else:
        # train once per manipulated copy, then average the three policies' results;
        # p = 0 leaves the data untouched, so identical copies share one run
        per_seed, vals, done = [], [], {}
        for ds in data_seeds:
            manip = {k: manipulate_dataset(v, float(value), derive_seed(ds, f"manipulate/{k}"), grid)
                     if k in ("train", "validation") else v for k, v in splits.items()}
            key = tuple(id(v) for v in manip.values())
            if key not in done:
                sub = None if out_dir is None else Path(out_dir) / tag / f"data{ds}"
                done[key] = train_and_evaluate(manip, config, grid, test_sets, sub)
            r, v = done[key]
            per_seed.append(r)
            vals.append(v)
        returns = {k: _mean([r[k] for r in per_seed]) for k in test_sets}
        val = _mean(vals)
    return PointResult(value, returns, val, config.seeds, data_seeds)


def _mean(xs: Sequence[float]) -> float:
    # equal entries return unchanged so the p = 0 pipeline matches the baseline bit for bit
    return float(xs[0]) if all(x == xs[0] for x in xs) else float(np.mean(xs))


def _fmt(value) -> str:
    return ",".join(str(v) for v in value) if isinstance(value, tuple) else str(value)


def _rows_for(spec: SweepSpec, point: PointResult, upper: UpperBoundTable | None,
              greedy: dict[str, float]) -> list[dict]:
    rows = []
    seed_set = " ".join(map(str, point.seeds))
    data_seed_set = " ".join(map(str, point.data_seeds))
    shift = []
    for name, ret in point.test_returns.items():
        rel = math.nan
        if upper is not None and name in upper.upper:
            try:
                rel = relative_gain(ret, greedy[name], upper.upper[name])
            except ValueError as exc:
                log.warning("%s: %s", name, exc)
        rows.append({"sweep_axis": spec.axis, "value": _fmt(point.value), "distribution": name,
                     "mean_return": ret, "gain_vs_greedy_pct": gain_vs_greedy_pct(ret, greedy[name]),
                     "relative_gain": rel, "seed_set": seed_set, "data_seed_set": data_seed_set})
        if name != spec.training_distribution:
            shift.append(rows[-1])
    if shift:
        rows.append({
            "sweep_axis": spec.axis, "value": _fmt(point.value), "distribution": SHIFT_AVERAGE,
            "mean_return": float(np.mean([r["mean_return"] for r in shift])),
            "gain_vs_greedy_pct": float(np.mean([r["gain_vs_greedy_pct"] for r in shift])),
            "relative_gain": float(np.mean([r["relative_gain"] for r in shift])),
            "seed_set": seed_set, "data_seed_set": data_seed_set,
        })
    return rows


def run_sweep(spec: SweepSpec, datasets: dict[str, dict[str, EpisodeDataset]],
              grid: GridConfig | None = None, upper: UpperBoundTable | None = None,
              out_dir: str | Path | None = None, workers: int = 1) -> SweepResult:
    """Train and evaluate every value on ``spec``'s axis.

    Policies are trained on the training distribution (3 seeds, best
    validation kept) and tested on every distribution in ``datasets``. A run
    that diverges or raises is recorded in ``failures`` and the sweep moves on.
    Without an upper-bound table relative gains are NaN.
    """
    grid = grid or GridConfig()
    if upper is None:
        log.warning("no upper-bound table: relative gains reported as NaN, gains vs greedy only")
    greedy = upper.greedy if upper is not None else greedy_returns(datasets, grid)
    splits = datasets[spec.training_distribution]
    test_sets = {name: s["test"] for name, s in datasets.items()}
    out = None if out_dir is None else str(out_dir)

    outcomes = []
    if workers > 1 and len(spec.values) > 1:
        with ProcessPoolExecutor(workers, mp_context=get_context("spawn")) as pool:
            futures = [pool.submit(_run_point, spec, v, splits, test_sets, grid, out)
                       for v in spec.values]
            for v, fut in zip(spec.values, futures):
                try:
                    outcomes.append((v, fut.result(), None))
                except (TrainingDiverged, FloatingPointError, ValueError, RuntimeError) as exc:
                    outcomes.append((v, None, exc))
    else:
        for v in spec.values:
            try:
                outcomes.append((v, _run_point(spec, v, splits, test_sets, grid, out), None))
            except (TrainingDiverged, FloatingPointError, ValueError, RuntimeError) as exc:
                outcomes.append((v, None, exc))

    points, rows, failures = [], [], []
    for v, point, exc in outcomes:
        if exc is not None:
            log.error("sweep %s=%s failed: %s", spec.axis, _fmt(v), exc)
            failures.append({"value": _fmt(v), "error": f"{type(exc).__name__}: {exc}"})
            continue
        points.append(point)
        rows.extend(_rows_for(spec, point, upper, greedy))
    return SweepResult(spec, points, rows, failures, upper.version if upper else None)


# ---------------------------------------------------------------------------
# output


def _write_csv(path: str | Path, columns: Sequence[str], rows: Iterable[dict],
               header_lines: Sequence[str] = ()) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as f:
        for line in header_lines:
            f.write(f"# {line}\n")
        w = csv.DictWriter(f, fieldnames=list(columns))
        w.writeheader()
        for row in rows:
            w.writerow({k: row[k] for k in columns})
    return path


def write_results(path: str | Path, rows: Iterable[dict], header_lines: Sequence[str] = ()) -> Path:
    return _write_csv(path, RESULT_COLUMNS, rows, header_lines)


def fig3_rows(result: SweepResult) -> list[dict]:
    """Training-distribution and shift-averaged relative gain per axis value."""
    by_value: dict[str, dict] = {}
    for row in result.rows:
        entry = by_value.setdefault(row["value"], {"sweep_axis": row["sweep_axis"], "value": row["value"]})
        if row["distribution"] == result.spec.training_distribution:
            entry["train_relative_gain"] = row["relative_gain"]
        elif row["distribution"] == SHIFT_AVERAGE:
            entry["shift_relative_gain"] = row["relative_gain"]
    return [e for e in by_value.values() if "train_relative_gain" in e and "shift_relative_gain" in e]


def write_fig3(path: str | Path, result: SweepResult, header_lines: Sequence[str] = ()) -> Path:
    cols = ("sweep_axis", "value", "train_relative_gain", "shift_relative_gain")
    return _write_csv(path, cols, fig3_rows(result), header_lines)


def write_fig4(path: str | Path, results: Sequence[SweepResult], weights: Sequence[float] | None = None,
               header_lines: Sequence[str] = ()) -> Path:
    """Best tradeoff score per method (sweep axis) on a grid of weights."""
    weights = np.linspace(0.0, 1.0, 101) if weights is None else np.asarray(weights)
    rows = []
    for res in results:
        pts = [(e["train_relative_gain"], e["shift_relative_gain"]) for e in fig3_rows(res)]
        for w, s in zip(weights, tradeoff_curve(pts, weights)):
            rows.append({"method": res.spec.axis, "weight": round(float(w), 6), "tradeoff_score": s})
    return _write_csv(path, ("method", "weight", "tradeoff_score"), rows, header_lines)
