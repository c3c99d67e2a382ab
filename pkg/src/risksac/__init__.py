"""Risk-sensitive discrete soft actor-critic and a pickup-and-delivery grid benchmark.

Modules:
    env          grid environment, item distributions, episode datasets
    greedy       myopic profit-chasing baseline policy
    approximator actor/critic networks, gradients, checkpoints
    risk         entropic-risk critic targets (Q-form and Q-bar form)
    sac          discrete SAC losses and the training loop
    oracle       exact tabular checks of the risk-sensitive recursion
    bench        robustness benchmarks, sweeps and metrics
    cli          the ``risksac`` command
"""
from risksac.env import DISTRIBUTION_NAMES, GridConfig, GridEnv, generate_splits, make_distribution
from risksac.greedy import GreedyPolicy
from risksac.risk import RiskParams, logsumexp_shifted
from risksac.sac import Trainer, TrainerConfig, train

__version__ = "0.1.0"

__all__ = [
    "DISTRIBUTION_NAMES",
    "GreedyPolicy",
    "GridConfig",
    "GridEnv",
    "RiskParams",
    "Trainer",
    "TrainerConfig",
    "__version__",
    "generate_splits",
    "logsumexp_shifted",
    "make_distribution",
    "train",
]
