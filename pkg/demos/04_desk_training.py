"""Train SAC with the reduced desk preset and compare it with greedy.

The default budget is short so the script finishes in about a minute; pass
``--steps 200000`` for the full desk run (a few minutes per seed on one core).
A negative ``--beta`` trains the risk-averse variant.

    python demos/04_desk_training.py --steps 20000 --beta -1
"""
import argparse

from risksac.env import GridConfig, generate_splits, make_distribution
from risksac.evaluation import ActorPolicy, evaluate_policy
from risksac.greedy import GreedyPolicy
from risksac.sac import Trainer, TrainerConfig

parser = argparse.ArgumentParser()
parser.add_argument("--steps", type=int, default=20_000)
parser.add_argument("--beta", type=float, default=0.0)
parser.add_argument("--seed", type=int, default=0)
args = parser.parse_args()

cfg = GridConfig()
splits = generate_splits(make_distribution("gradient-1"), seed=123)
greedy = evaluate_policy(GreedyPolicy(cfg), splits["validation"], cfg).mean_return
print(f"greedy validation return: {greedy:.1f}")

config = TrainerConfig.desk(total_steps=args.steps, beta=args.beta,
                            validate_every=max(args.steps // 10, 1))
trainer = Trainer(config, cfg, args.seed)
result = trainer.run(splits["train"], splits["validation"],
                     on_validate=lambda m: print(f"step {m['step']:>7}  validation {m['validation_return']:7.1f}"))

policy = ActorPolicy(result.best_bundle.actor, cfg)
test = evaluate_policy(policy, splits["test"], cfg).mean_return
g_test = evaluate_policy(GreedyPolicy(cfg), splits["test"], cfg).mean_return
print(f"best validation {result.best_validation:.1f} at step {result.best_step}")
print(f"test return: SAC {test:.1f}, greedy {g_test:.1f} ({100 * (test - g_test) / abs(g_test):+.1f}%)")
