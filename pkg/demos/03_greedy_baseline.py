"""The greedy baseline on the delivery grid.

Watch a few steps of one episode, then measure the greedy return on every
registered item distribution.

    python demos/03_greedy_baseline.py
"""
from risksac.env import DISTRIBUTION_NAMES, GridConfig, generate_dataset, initial_state, make_distribution, render, step
from risksac.evaluation import evaluate_policy
from risksac.greedy import GreedyPolicy, greedy_decision

cfg = GridConfig()
ds = generate_dataset(make_distribution("gradient-1"), 1, seed=0)
schedule = ds.schedule(0)

s = initial_state(cfg)
for t in range(6):
    d = greedy_decision(s, cfg)
    print(f"t={t} intent={d.intent} action={d.chosen_action} item={d.item}")
    print(render(s, cfg), "\n")
    s, r, _ = step(s, d.chosen_action, schedule[t], cfg)

policy = GreedyPolicy(cfg)
print("mean greedy return over 100 episodes:")
for name in DISTRIBUTION_NAMES:
    test = generate_dataset(make_distribution(name), 100, seed=1)
    print(f"  {name:<11} {evaluate_policy(policy, test, cfg).mean_return:8.2f}")
