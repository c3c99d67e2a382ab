"""A miniature robustness benchmark, end to end.

Uses a short horizon, three distributions and small training budgets so the
whole pipeline (upper bounds, two sweeps, tradeoff curves) runs in a few
minutes. The numbers are noisy at this scale; the point is the shape of the
outputs. CSVs land in ``demo_output/``.

    python demos/05_robustness_sweep.py
"""
from pathlib import Path

import numpy as np

from risksac import bench
from risksac.approximator import ArchitectureSpec
from risksac.env import GridConfig
from risksac.sac import TrainerConfig

out = Path("demo_output")
grid = GridConfig(horizon=40)
names = ("gradient-1", "corner-1", "uniform")
data = bench.benchmark_datasets(0, grid, names, {"train": 100, "validation": 20, "test": 20})

base = TrainerConfig(total_steps=15_000, update_every=4, validate_every=1_500, warmup_random_steps=2_000,
                     batch_size=128, alpha_switch_step=8_000, learning_rate=1e-3,
                     architecture=ArchitectureSpec.desk(dense_units=(32, 32)), seeds=(0,))

upper = bench.compute_upper_bounds(data, base, grid)
upper.save(out / "upper_bounds.json")
print("upper bounds:", {k: round(v, 1) for k, v in upper.upper.items()})
print("greedy:      ", {k: round(v, 1) for k, v in upper.greedy.items()})
if any(upper.upper[k] <= upper.greedy[k] for k in names):
    # relative gain is normalized by (upper - greedy); a weak upper bound flips its meaning
    print("note: at this budget SAC trails greedy, so relative gains below are not interpretable")

results = []
for axis, values in (("beta", (-0.5, -2.0)), ("alpha_final", (0.0, 0.1))):
    spec = bench.SweepSpec(axis, values, base)
    res = bench.run_sweep(spec, data, grid, upper)
    bench.write_results(out / f"{axis}_results.csv", res.rows)
    bench.write_fig3(out / f"{axis}_fig3.csv", res)
    results.append(res)
    for row in bench.fig3_rows(res):
        print(f"{axis}={row['value']}: train {row['train_relative_gain']:+.2f}, "
              f"shift {row['shift_relative_gain']:+.2f}")

weights = np.linspace(0, 1, 11)
curves = {r.spec.axis: bench.tradeoff_curve(
    [(e["train_relative_gain"], e["shift_relative_gain"]) for e in bench.fig3_rows(r)], weights)
    for r in results}
bench.write_fig4(out / "fig4.csv", results, weights)
x = bench.crossover_weight(curves["beta"], curves["alpha_final"], weights)
print("weight from which the risk-averse agent stays ahead:", x)
