"""Policy rollouts over pre-sampled episode schedules."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import torch

from risksac.env import EnvState, EpisodeDataset, GridConfig, encode_state, initial_state, step


@dataclass(frozen=True)
class EvalResult:
    distribution_name: str
    mean_return: float
    policy_id: str = ""
    seed: int | None = None
    returns: tuple[float, ...] = field(default=(), repr=False)

    @property
    def n_episodes(self) -> int:
        return len(self.returns)


class ActorPolicy:
    """Acts with a trained actor network on batches of states.

    By default picks the most probable action; with ``deterministic=False``
    actions are sampled from ``rng``.
    """

    def __init__(self, actor: torch.nn.Module, config: GridConfig, deterministic: bool = True,
                 rng: np.random.Generator | None = None, name: str = "actor"):
        self.actor, self.config = actor, config
        self.deterministic = deterministic
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.name = name

    @torch.no_grad()
    def act_batch(self, states: Sequence[EnvState]) -> list[int]:
        obs = np.stack([encode_state(s, self.config) for s in states])
        p = next(self.actor.parameters())
        logits = self.actor(torch.as_tensor(obs, dtype=p.dtype))
        if self.deterministic:
            return logits.argmax(-1).tolist()
        probs = torch.softmax(logits.double(), -1).numpy()
        u = self.rng.random(len(states))
        cdf = np.cumsum(probs, -1)
        return np.minimum((u[:, None] * cdf[:, -1:] > cdf).sum(-1), probs.shape[1] - 1).tolist()

    def __call__(self, state: EnvState) -> int:
        return self.act_batch([state])[0]


Policy = Callable[[EnvState], int]


def rollout_returns(policy, dataset: EpisodeDataset, config: GridConfig) -> np.ndarray:
    """Undiscounted return of ``policy`` on every episode of ``dataset``.

    Episodes are advanced in lockstep so batch policies (anything with an
    ``act_batch`` method) run one forward pass per time step.
    """
    if dataset.horizon < config.horizon:
        raise ValueError("dataset horizon shorter than the environment horizon")
    schedules = [dataset.schedule(i) for i in range(len(dataset))]
    states = [initial_state(config) for _ in schedules]
    totals = np.zeros(len(schedules))
    batch = getattr(policy, "act_batch", None)
    for t in range(config.horizon):
        actions = batch(states) if batch else [policy(s) for s in states]
        for i, (s, a) in enumerate(zip(states, actions)):
            states[i], r, _ = step(s, int(a), schedules[i][t], config)
            totals[i] += r
    return totals


def evaluate_policy(policy, dataset: EpisodeDataset, config: GridConfig,
                    policy_id: str = "", seed: int | None = None) -> EvalResult:
    returns = rollout_returns(policy, dataset, config)
    return EvalResult(dataset.distribution_name, float(returns.mean()), policy_id, seed,
                      tuple(float(x) for x in returns))
