import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from risksac.approximator import ArchitectureSpec
from risksac.bench import (
    DEFAULT_GRIDS,
    RESULT_COLUMNS,
    SHIFT_AVERAGE,
    SweepSpec,
    UpperBoundTable,
    benchmark_datasets,
    crossover_weight,
    fig3_rows,
    gain_vs_greedy_pct,
    greedy_returns,
    manipulate_dataset,
    relative_gain,
    run_sweep,
    tradeoff_curve,
    tradeoff_score,
    write_fig3,
    write_fig4,
    write_results,
)
from risksac.env import STAY, GridConfig, generate_dataset, make_distribution, zero_distribution
from risksac.evaluation import evaluate_policy
from risksac.greedy import GreedyPolicy
from risksac.sac import TrainerConfig

GRID = GridConfig(horizon=20)
NAMES = ("gradient-1", "corner-1", "uniform")
SIZES = {"train": 6, "validation": 4, "test": 4}


def _tiny_trainer(**kw):
    base = dict(total_steps=120, update_every=10, validate_every=60, warmup_random_steps=60,
                batch_size=16, buffer_capacity=500, alpha_switch_step=100,
                architecture=ArchitectureSpec.desk(dense_units=(8,)), seeds=(0,))
    base.update(kw)
    return TrainerConfig(**base)


@pytest.fixture(scope="module")
def datasets():
    return benchmark_datasets(0, GRID, NAMES, SIZES)


# --- data manipulation --------------------------------------------------------

def test_manipulate_p0_is_identity():
    ds = generate_dataset(make_distribution("gradient-1"), 5, horizon=30, seed=0)
    assert manipulate_dataset(ds, 0.0, seed=1).equals(ds)


def test_manipulate_p1_is_uniform_over_non_target_cells():
    ds = generate_dataset(make_distribution("gradient-1"), 400, seed=0)
    out = manipulate_dataset(ds, 1.0, seed=1)
    counts = np.zeros((5, 5))
    for ep in out.episodes:
        np.add.at(counts, (ep[:, 1], ep[:, 2]), 1)
    n = counts.sum()
    assert n == ds.n_items and counts[2, 2] == 0
    p = 1 / 24
    se = math.sqrt(p * (1 - p) / n)
    freq = np.delete(counts.ravel(), 12) / n
    assert np.all(np.abs(freq - p) <= 3 * se)


def test_manipulate_p04_replaces_binomial_fraction():
    d = make_distribution("corner-1")
    ds = generate_dataset(d, 300, seed=2)
    out = manipulate_dataset(ds, 0.4, seed=3)
    # items keep their appearance times; compare the sorted records per time step
    changed = total = 0
    for a, b in zip(ds.episodes, out.episodes):
        assert np.array_equal(np.sort(a[:, 0]), np.sort(b[:, 0]))
        total += len(a)
        for t in np.unique(a[:, 0]):
            before = sorted(map(tuple, a[a[:, 0] == t, 1:]))
            after = sorted(map(tuple, b[b[:, 0] == t, 1:]))
            common = len(before) - len(set(before) - set(after))
            changed += len(before) - common
    # resampling can land on the original cell (prob 1/24), and corner-1 is
    # concentrated, so this lower-bounds the true replacement count
    frac = changed / total
    sigma = math.sqrt(0.4 * 0.6 / total)
    assert frac <= 0.4 + 3 * sigma
    assert frac >= 0.4 * (1 - 1 / 24) * 0.8


def test_manipulate_fraction_exact_count():
    # with a single-cell source every replaced record moves to another cell
    w = np.zeros((5, 5))
    w[0, 0] = 1.0
    ds = generate_dataset(make_distribution(w), 50, horizon=40, seed=0)
    out = manipulate_dataset(ds, 0.4, seed=7)
    moved = sum(int(((ep[:, 1] != 0) | (ep[:, 2] != 0)).sum()) for ep in out.episodes)
    n = ds.n_items
    stay_prob = 1 / 24
    mean = n * 0.4 * (1 - stay_prob)
    sigma = math.sqrt(n * 0.4 * (1 - stay_prob) * (1 - 0.4 * (1 - stay_prob)))
    assert abs(moved - mean) <= 3 * sigma


def test_manipulate_deterministic_and_validated():
    ds = generate_dataset(make_distribution("uniform"), 5, horizon=30, seed=0)
    assert manipulate_dataset(ds, 0.5, 9).equals(manipulate_dataset(ds, 0.5, 9))
    assert not manipulate_dataset(ds, 0.5, 9).equals(manipulate_dataset(ds, 0.5, 10))
    for p in (-0.1, 1.1):
        with pytest.raises(ValueError):
            manipulate_dataset(ds, p, 0)


# --- metrics ------------------------------------------------------------------

def test_relative_gain_examples():
    assert relative_gain(900.0, 700.0, 900.0) == 1.0
    assert relative_gain(700.0, 700.0, 900.0) == 0.0
    assert relative_gain(740.0, 700.0, 900.0) == pytest.approx(0.2)
    with pytest.raises(ValueError):
        relative_gain(1.0, 5.0, 5.0)
    with pytest.raises(ValueError):
        relative_gain(1.0, 5.0, math.inf)


@settings(max_examples=100, deadline=None)
@given(a=st.floats(-1e3, 1e3), g=st.floats(-1e3, 1e3), u=st.floats(-1e3, 1e3),
       scale=st.floats(0.01, 100), shift=st.floats(-1e3, 1e3))
def test_relative_gain_affine_invariance(a, g, u, scale, shift):
    if abs(u - g) < 1e-3:
        return
    base = relative_gain(a, g, u)
    moved = relative_gain(scale * a + shift, scale * g + shift, scale * u + shift)
    assert moved == pytest.approx(base, rel=1e-6, abs=1e-6)


def test_gain_vs_greedy_pct():
    assert gain_vs_greedy_pct(110.0, 100.0) == pytest.approx(10.0)
    assert gain_vs_greedy_pct(-90.0, -100.0) == pytest.approx(10.0)
    with pytest.raises(ValueError):
        gain_vs_greedy_pct(1.0, 0.0)


def test_tradeoff_score_and_curve():
    assert tradeoff_score(1.0, 0.8, 0.2) == 0.8
    assert tradeoff_score(0.0, 0.8, 0.2) == 0.2
    assert tradeoff_score(0.25, 0.8, 0.2) == pytest.approx(0.35)
    with pytest.raises(ValueError):
        tradeoff_score(1.5, 0, 0)
    curve = tradeoff_curve([(0.9, 0.1), (0.5, 0.5)], [0.0, 0.5, 1.0])
    np.testing.assert_allclose(curve, [0.5, 0.5, 0.9])
    assert np.isnan(tradeoff_curve([], [0.0, 1.0])).all()


def test_crossover_weight():
    w = np.linspace(0, 1, 11)
    a = tradeoff_curve([(0.9, 0.1)], w)  # strong on the training distribution
    b = tradeoff_curve([(0.5, 0.4)], w)
    x = crossover_weight(a, b, w)
    # 0.1 + 0.8 w >= 0.4 + 0.1 w  <=>  w >= 3/7
    assert x == pytest.approx(0.5)
    assert crossover_weight(b, a, w) is None
    assert crossover_weight(a, a, w) == 0.0


def test_default_grids():
    assert DEFAULT_GRIDS["manipulation_p"] == pytest.approx([i / 10 for i in range(11)])
    assert len(DEFAULT_GRIDS["beta_alpha"]) == 36


# --- evaluation -------------------------------------------------------------------

def test_always_stay_returns_zero(datasets):
    res = evaluate_policy(lambda s: STAY, datasets["gradient-1"]["test"], GRID)
    assert res.mean_return == 0.0 and res.n_episodes == 4


def test_greedy_on_empty_dataset_is_zero():
    ds = generate_dataset(zero_distribution(GRID), 3, horizon=20)
    assert evaluate_policy(GreedyPolicy(GRID), ds, GRID).mean_return == 0.0


def test_evaluation_is_side_effect_free(datasets):
    ds = datasets["corner-1"]["test"]
    a = evaluate_policy(GreedyPolicy(GRID), ds, GRID, "greedy")
    b = evaluate_policy(GreedyPolicy(GRID), ds, GRID, "greedy")
    assert a == b


def test_greedy_positive_on_gradient_1():
    ds = benchmark_datasets(0, names=("gradient-1",), sizes={"train": 1, "validation": 1, "test": 100})
    assert greedy_returns(ds, GridConfig())["gradient-1"] > 0


def test_benchmark_datasets_streams_are_per_distribution():
    a = benchmark_datasets(0, GRID, ("uniform",), SIZES)
    b = benchmark_datasets(0, GRID, ("corner-2", "uniform"), SIZES)
    assert a["uniform"]["test"].equals(b["uniform"]["test"])
    c = benchmark_datasets(1, GRID, ("uniform",), SIZES)
    assert not a["uniform"]["test"].equals(c["uniform"]["test"])


# --- upper bounds and sweeps --------------------------------------------------------

def test_upper_bound_table_versioned(tmp_path):
    t = UpperBoundTable({"uniform": 10.0}, {"uniform": 5.0}, {"total_steps": 1}, 0)
    path = t.save(tmp_path / "ub.json")
    loaded = UpperBoundTable.load(path)
    assert loaded.version == t.version and loaded.upper == t.upper
    assert UpperBoundTable({"uniform": 11.0}, {"uniform": 5.0}).version != t.version
    text = path.read_text().replace("10.0", "12.0")
    path.write_text(text)
    with pytest.raises(ValueError, match="version"):
        UpperBoundTable.load(path)


def test_sweep_spec_validation():
    with pytest.raises(ValueError):
        SweepSpec("gamma", (0.9,))
    with pytest.raises(ValueError):
        SweepSpec("beta", (float("nan"),))
    with pytest.raises(ValueError):
        SweepSpec("beta_alpha", ((1.0,),))
    spec = SweepSpec("beta_alpha", ([-1.0, 0.1],), _tiny_trainer())
    cfg = spec.trainer_for(spec.values[0])
    assert (cfg.beta, cfg.alpha_final) == (-1.0, 0.1)
    l2 = SweepSpec("l2_coefficient", (1e-3,), _tiny_trainer())
    assert l2.trainer_for(1e-3).architecture.l2_coefficient == 1e-3


def test_empty_sweep_gives_empty_table(datasets):
    res = run_sweep(SweepSpec("beta", (), _tiny_trainer()), datasets, GRID)
    assert res.rows == [] and res.points == [] and res.failures == []


def _upper(datasets):
    greedy = greedy_returns(datasets, GRID)
    return UpperBoundTable({k: v + 10.0 for k, v in greedy.items()}, greedy, {}, 0)


def test_sweep_rows_and_shift_average(datasets, tmp_path):
    upper = _upper(datasets)
    res = run_sweep(SweepSpec("beta", (0.0, -1.0), _tiny_trainer()), datasets, GRID, upper)
    assert res.upper_bound_version == upper.version and not res.failures
    assert len(res.rows) == 2 * (len(NAMES) + 1)
    for value in ("0.0", "-1.0"):
        rows = {r["distribution"]: r for r in res.rows if r["value"] == value}
        shift = [rows[n]["relative_gain"] for n in NAMES if n != "gradient-1"]
        assert rows[SHIFT_AVERAGE]["relative_gain"] == pytest.approx(np.mean(shift))
    path = write_results(tmp_path / "r.csv", res.rows, ["run_config: {}"])
    header = path.read_text().splitlines()[1]
    assert header == ",".join(RESULT_COLUMNS)
    assert len(fig3_rows(res)) == 2
    write_fig3(tmp_path / "f3.csv", res)
    f4 = write_fig4(tmp_path / "f4.csv", [res], weights=[0.0, 1.0]).read_text().splitlines()
    assert f4[0] == "method,weight,tradeoff_score" and len(f4) == 3


def test_sweep_without_upper_bounds_reports_nan(datasets, caplog):
    res = run_sweep(SweepSpec("alpha_final", (0.0,), _tiny_trainer()), datasets, GRID)
    assert all(math.isnan(r["relative_gain"]) for r in res.rows)
    assert all(math.isfinite(r["gain_vs_greedy_pct"]) for r in res.rows)
    assert "upper-bound" in caplog.text


def test_manipulation_p0_matches_baseline_exactly(datasets):
    upper = _upper(datasets)
    base = run_sweep(SweepSpec("beta", (0.0,), _tiny_trainer()), datasets, GRID, upper)
    manip = run_sweep(SweepSpec("manipulation_p", (0.0,), _tiny_trainer(), data_seeds=(0, 1, 2)),
                      datasets, GRID, upper)
    strip = ("sweep_axis", "data_seed_set")
    assert [{k: v for k, v in r.items() if k not in strip} for r in base.rows] == \
        [{k: v for k, v in r.items() if k not in strip} for r in manip.rows]


def test_sweep_records_failures_and_continues(datasets):
    # the Q-bar head cannot represent beta = 0; config construction fails per point
    spec = SweepSpec("beta", (0.0, -1.0), _tiny_trainer(variant="qbar", beta=-1.0))
    res = run_sweep(spec, datasets, GRID)
    assert len(res.failures) == 1 and res.failures[0]["value"] == "0.0"
    assert {r["value"] for r in res.rows} == {"-1.0"}
