"""Discrete soft actor-critic with twin critics, and the shared training loop.

The same loop trains the risk-neutral agent and both risk-sensitive variants;
only the critic target (and, for Q-bar critics, the critic read-out) differs.
"""
from __future__ import annotations

import contextlib
import csv
import logging
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Callable

import numpy as np
import torch
from torch.nn import functional as F

from risksac import risk
from risksac.approximator import (
    ArchitectureSpec,
    NetworkBundle,
    actor_log_probs,
    gradients,
    make_bundle,
    save_checkpoint,
)
from risksac.env import EpisodeDataset, GridConfig, GridEnv, N_ACTIONS
from risksac.evaluation import ActorPolicy, evaluate_policy

log = logging.getLogger(__name__)

METRIC_COLUMNS = ("step", "seed", "validation_return", "actor_loss", "critic_loss",
                  "alpha", "beta", "wall_time_s")
VARIANTS = ("entropic", "qbar")


class TrainingDiverged(FloatingPointError):
    pass


@contextlib.contextmanager
def flush_denormal():
    """Flush subnormal floats to zero for the duration of the block.

    Denormal weights make small CPU matmuls an order of magnitude slower. The
    flag is processor-global, so the previous state is restored on exit.
    """
    was_on = float(torch.tensor([1e-300], dtype=torch.float64) * 1e-10) == 0.0
    torch.set_flush_denormal(True)
    try:
        yield
    finally:
        torch.set_flush_denormal(was_on)


@dataclass(frozen=True)
class Transition:
    s: np.ndarray
    a: int
    r: float
    d: bool
    s_next: np.ndarray


class ReplayBuffer:
    """FIFO ring buffer with running reward moments for reward scaling."""

    def __init__(self, capacity: int, obs_shape: tuple[int, ...] = (5, 5, 3)):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.s = np.zeros((capacity,) + tuple(obs_shape), dtype=np.float32)
        self.s_next = np.zeros_like(self.s)
        self.a = np.zeros(capacity, dtype=np.int64)
        self.r = np.zeros(capacity, dtype=np.float64)
        self.d = np.zeros(capacity, dtype=bool)
        self.size = 0
        self._next = 0
        # rewards are small integers in this environment, so these sums are exact
        self._r_sum = 0.0
        self._r_sq = 0.0

    def __len__(self) -> int:
        return self.size

    def add(self, s, a: int, r: float, d: bool, s_next) -> None:
        i = self._next
        if self.size == self.capacity:
            old = self.r[i]
            self._r_sum -= old
            self._r_sq -= old * old
        else:
            self.size += 1
        self.s[i], self.a[i], self.r[i], self.d[i], self.s_next[i] = s, a, r, d, s_next
        self._r_sum += r
        self._r_sq += r * r
        self._next = (i + 1) % self.capacity

    def reward_std(self) -> float:
        if self.size == 0:
            return 0.0
        mean = self._r_sum / self.size
        return float(np.sqrt(max(self._r_sq / self.size - mean * mean, 0.0)))

    def sample(self, batch_size: int, rng: np.random.Generator) -> dict[str, np.ndarray]:
        idx = rng.integers(0, self.size, size=batch_size)
        return {"s": self.s[idx], "a": self.a[idx], "r": self.r[idx], "d": self.d[idx],
                "s_next": self.s_next[idx], "idx": idx}

    def transition(self, i: int) -> Transition:
        return Transition(self.s[i], int(self.a[i]), float(self.r[i]), bool(self.d[i]), self.s_next[i])


@dataclass(frozen=True)
class TrainerConfig:
    total_steps: int = 2_000_000
    update_every: int = 20
    gradient_steps: int = 1
    validate_every: int = 5_000
    warmup_random_steps: int = 20_000
    gamma: float = 0.99
    batch_size: int = 512
    buffer_capacity: int = 200_000
    huber_delta: float = 2.0
    grad_clip: float = 10.0
    learning_rate: float = 3e-4
    tau: float = 5e-3
    alpha_initial: float = 0.2
    alpha_switch_step: int = 800_000
    alpha_final: float = 0.0
    beta: float = 0.0
    variant: str = "entropic"
    normalize_rewards: bool = True
    seeds: tuple[int, ...] = (0, 1, 2)
    architecture: ArchitectureSpec = field(default_factory=ArchitectureSpec)

    def __post_init__(self):
        if isinstance(self.architecture, dict):
            object.__setattr__(self, "architecture", ArchitectureSpec.from_dict(self.architecture))
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if self.total_steps < 0:
            raise ValueError("total_steps must be >= 0")
        for name in ("update_every", "gradient_steps", "validate_every", "batch_size",
                     "buffer_capacity"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        for name in ("huber_delta", "grad_clip", "learning_rate", "tau"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must lie in (0, 1]")
        if self.alpha_initial < 0 or self.alpha_final < 0:
            raise ValueError("entropy coefficients must be >= 0")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        if self.variant == "qbar" and self.beta == 0:
            raise ValueError("the Q-bar variant needs beta != 0")
        if not self.seeds:
            raise ValueError("at least one seed is required")

    @classmethod
    def desk(cls, **overrides) -> "TrainerConfig":
        """Reduced setting for CPU runs of a few minutes: small MLP, 200k steps,
        remaining schedule constants scaled by the step budget."""
        base = dict(
            total_steps=200_000,
            update_every=4,
            validate_every=5_000,
            warmup_random_steps=5_000,
            batch_size=256,
            alpha_switch_step=80_000,
            learning_rate=1e-3,
            architecture=ArchitectureSpec.desk(),
        )
        base.update(overrides)
        return cls(**base)

    def alpha_at(self, step: int) -> float:
        return self.alpha_initial if step <= self.alpha_switch_step else self.alpha_final

    @property
    def critic_head(self) -> str:
        return "softplus" if self.variant == "qbar" else "linear"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["seeds"] = list(self.seeds)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainerConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown trainer keys: {sorted(unknown)}")
        return cls(**d)


# ---------------------------------------------------------------------------
# losses and targets


def _tensors(batch: dict, dtype: torch.dtype) -> dict[str, torch.Tensor]:
    out = {}
    for k, v in batch.items():
        if k == "idx":
            continue
        if k in ("a",):
            out[k] = torch.as_tensor(v, dtype=torch.long)
        elif k == "d":
            out[k] = torch.as_tensor(v, dtype=torch.bool)
        else:
            out[k] = torch.as_tensor(v, dtype=dtype)
    return out


def critic_values(obs, critics, beta: float = 0.0, head: str = "linear") -> torch.Tensor:
    """Twin-critic Q-values at ``obs`` (elementwise minimum), read out from
    Q-bar when the critics have a softplus head."""
    q1, q2 = critics[0](obs), critics[1](obs)
    if head == "softplus":
        q1, q2 = risk.critic_readout(q1, beta), risk.critic_readout(q2, beta)
    return torch.minimum(q1, q2)


def policy_loss(obs, bundle: NetworkBundle, alpha: float, beta: float = 0.0) -> torch.Tensor:
    """Mean over the batch of ``pi(s) . (alpha * log pi(s) - min Q(s))``; critics
    are held fixed."""
    probs, log_probs = actor_log_probs(obs, bundle.actor)
    with torch.no_grad():
        q = critic_values(obs, bundle.critics, beta, bundle.critic_head)
    inner = torch.where(probs > 0, alpha * log_probs, torch.zeros_like(log_probs)) - q
    loss = (probs * inner).sum(-1).mean()
    if not torch.isfinite(loss):
        raise TrainingDiverged(f"non-finite policy loss {loss.item()}")
    return loss


def neutral_target_from_values(reward, done, next_probs, next_log_probs, next_q,
                               alpha: float, gamma: float) -> torch.Tensor:
    # 0 * log 0 := 0
    ent = torch.where(next_probs > 0, next_probs * next_log_probs, torch.zeros_like(next_probs))
    soft_v = (next_probs * next_q).sum(-1) - alpha * ent.sum(-1)
    return reward + (~torch.as_tensor(done, dtype=torch.bool)).to(reward.dtype) * gamma * soft_v


def critic_target_neutral(batch, bundle: NetworkBundle, alpha: float, gamma: float) -> torch.Tensor:
    with torch.no_grad():
        probs, log_probs = actor_log_probs(batch["s_next"], bundle.actor)
        q = torch.minimum(bundle.target1(batch["s_next"]), bundle.target2(batch["s_next"]))
    return neutral_target_from_values(batch["r"], batch["d"], probs, log_probs, q, alpha, gamma)


def critic_loss(pred: torch.Tensor, targets: torch.Tensor, delta: float = 2.0) -> torch.Tensor:
    """Mean Huber loss between predicted values of the taken actions and targets."""
    if pred.shape != targets.shape:
        raise ValueError("prediction and target batches differ in shape")
    return F.huber_loss(pred, targets, delta=delta)


TargetFn = Callable[[dict, NetworkBundle, float, float], torch.Tensor]


def make_target_fn(variant: str = "entropic", beta: float = 0.0) -> TargetFn:
    """Critic target dispatch: ``beta == 0`` always means the neutral target."""
    if variant == "qbar":
        def target(batch, bundle, alpha, gamma):
            return risk.qbar_target(batch, bundle, risk.RiskParams(beta, alpha, gamma))
        target.kind = "qbar"
        return target
    if variant != "entropic":
        raise ValueError(f"unknown variant {variant!r}")
    if beta == 0:
        def target(batch, bundle, alpha, gamma):
            return critic_target_neutral(batch, bundle, alpha, gamma)
        target.kind = "neutral"
        return target

    def target(batch, bundle, alpha, gamma):
        return risk.entropic_target(batch, bundle, risk.RiskParams(beta, alpha, gamma))
    target.kind = "entropic"
    return target


def clip_gradients(grads: list[torch.Tensor], max_norm: float) -> float:
    """Rescale ``grads`` in place to global norm at most ``max_norm``; returns
    the norm before clipping."""
    total = float(torch.linalg.vector_norm(torch.stack(
        [torch.linalg.vector_norm(g.double()) for g in grads])))
    if total > max_norm:
        torch._foreach_mul_(grads, max_norm / (total + 1e-6))
    return total


# ---------------------------------------------------------------------------
# training loop


@dataclass
class TrainResult:
    seed: int
    best_bundle: NetworkBundle
    best_validation: float
    best_step: int
    final_bundle: NetworkBundle
    metrics: list[dict]
    checkpoint: Path | None = None

    @property
    def validation_curve(self) -> list[tuple[int, float]]:
        return [(m["step"], m["validation_return"]) for m in self.metrics]


class Trainer:
    """Owns one network bundle, its optimizers and replay buffer."""

    def __init__(self, config: TrainerConfig, grid: GridConfig, seed: int,
                 dtype: torch.dtype = torch.float32):
        self.config, self.grid, self.seed = config, grid, seed
        self.rng = np.random.default_rng(seed)
        torch.manual_seed(seed)
        self.bundle = make_bundle(config.architecture, config.critic_head, seed, dtype)
        lr = config.learning_rate
        self.optimizers = {
            "actor": torch.optim.Adam(self.bundle.actor.parameters(), lr=lr, foreach=True),
            "critic1": torch.optim.Adam(self.bundle.critic1.parameters(), lr=lr, foreach=True),
            "critic2": torch.optim.Adam(self.bundle.critic2.parameters(), lr=lr, foreach=True),
        }
        obs_shape = (grid.height, grid.width, 3)
        self.buffer = ReplayBuffer(config.buffer_capacity, obs_shape)
        self.target_fn = make_target_fn(config.variant, config.beta)
        self.dtype = dtype
        self.step_count = 0
        self.last_losses = (float("nan"), float("nan"))

    def _apply(self, name: str, params: list[torch.Tensor], loss_fn) -> float:
        holder = {}

        def wrapped():
            holder["loss"] = loss = loss_fn()
            return loss

        grads = gradients(wrapped, params, self.config.architecture.l2_coefficient)
        clip_gradients(grads, self.config.grad_clip)
        for p, g in zip(params, grads):
            p.grad = g
        self.optimizers[name].step()
        return float(holder["loss"].detach())

    def update(self, alpha: float) -> tuple[float, float]:
        cfg, b = self.config, self.bundle
        raw = self.buffer.sample(cfg.batch_size, self.rng)
        if cfg.normalize_rewards:
            std = self.buffer.reward_std()
            if std >= 1e-8:
                raw["r"] = raw["r"] / std
        batch = _tensors(raw, self.dtype)
        try:
            with torch.no_grad():
                targets = self.target_fn(batch, b, alpha, cfg.gamma)
        except ValueError as exc:
            raise TrainingDiverged(f"step {self.step_count}: {exc}") from exc
        if not torch.all(torch.isfinite(targets)):
            raise TrainingDiverged(f"step {self.step_count}: non-finite critic target")
        idx = batch["a"].unsqueeze(-1)
        c_losses = []
        for name, critic in (("critic1", b.critic1), ("critic2", b.critic2)):
            def loss_fn(critic=critic):
                pred = critic(batch["s"]).gather(-1, idx).squeeze(-1)
                return critic_loss(pred, targets, cfg.huber_delta)
            c_losses.append(self._apply(name, list(critic.parameters()), loss_fn))
        b.soft_update(cfg.tau)
        a_loss = self._apply("actor", list(b.actor.parameters()),
                             lambda: policy_loss(batch["s"], b, alpha, cfg.beta))
        self.last_losses = (a_loss, float(np.mean(c_losses)))
        return self.last_losses

    @torch.no_grad()
    def act(self, obs: np.ndarray) -> int:
        logits = self.bundle.actor(torch.as_tensor(obs, dtype=self.dtype).unsqueeze(0))[0]
        probs = torch.softmax(logits.double(), -1).numpy()
        cdf = np.cumsum(probs)
        return int(min(np.searchsorted(cdf, self.rng.random() * cdf[-1], side="right"),
                       N_ACTIONS - 1))

    def validate(self, dataset: EpisodeDataset) -> float:
        policy = ActorPolicy(self.bundle.actor, self.grid)
        return evaluate_policy(policy, dataset, self.grid).mean_return

    def run(self, train: EpisodeDataset, validation: EpisodeDataset | None,
            out_dir: str | Path | None = None, on_validate=None) -> TrainResult:
        with flush_denormal():
            return self._run(train, validation, out_dir, on_validate)

    def _run(self, train, validation, out_dir, on_validate) -> TrainResult:
        cfg = self.config
        env = GridEnv(self.grid)
        order: list[int] = []

        def next_episode():
            if not order:
                order.extend(self.rng.permutation(len(train)).tolist())
            return env.reset(train.schedule(order.pop(0)))

        start = time.perf_counter()
        metrics: list[dict] = []
        best_val, best_step = -np.inf, 0
        best_bundle = self.bundle.clone()
        checkpoint = None
        out = Path(out_dir) if out_dir is not None else None

        obs = next_episode() if cfg.total_steps > 0 else None
        for step in range(1, cfg.total_steps + 1):
            self.step_count = step
            alpha = cfg.alpha_at(step)
            if step <= cfg.warmup_random_steps:
                a = int(self.rng.integers(N_ACTIONS))
            else:
                a = self.act(obs)
            obs_next, r, done = env.step(a)
            self.buffer.add(obs, a, r, done, obs_next)
            obs = next_episode() if done else obs_next

            if step > cfg.warmup_random_steps and step % cfg.update_every == 0:
                for _ in range(cfg.gradient_steps):
                    self.update(alpha)

            if validation is not None and step % cfg.validate_every == 0:
                val = self.validate(validation)
                row = {
                    "step": step, "seed": self.seed, "validation_return": val,
                    "actor_loss": self.last_losses[0], "critic_loss": self.last_losses[1],
                    "alpha": alpha, "beta": cfg.beta,
                    "wall_time_s": round(time.perf_counter() - start, 3),
                }
                metrics.append(row)
                log.info("seed %d step %d validation %.2f", self.seed, step, val)
                if on_validate is not None:
                    on_validate(row)
                if val > best_val:
                    best_val, best_step = val, step
                    best_bundle = self.bundle.clone()
                    if out is not None:
                        checkpoint = save_checkpoint(
                            out / f"seed{self.seed}_best.pt", self.bundle, self.optimizers,
                            step, {"validation_return": val, "trainer": cfg.to_dict()})

        if validation is not None and not metrics:
            best_val = self.validate(validation)
        return TrainResult(self.seed, best_bundle, float(best_val), best_step,
                           self.bundle, metrics, checkpoint)


def train(datasets: dict[str, EpisodeDataset], config: TrainerConfig,
          grid: GridConfig | None = None, seed: int | None = None,
          out_dir: str | Path | None = None) -> TrainResult:
    """Run the training loop for one seed (``config.seeds[0]`` by default)."""
    if "train" not in datasets:
        raise KeyError("datasets must contain a 'train' split")
    grid = grid or GridConfig()
    seed = config.seeds[0] if seed is None else seed
    trainer = Trainer(config, grid, seed)
    return trainer.run(datasets["train"], datasets.get("validation"), out_dir)


def train_seeds(datasets: dict[str, EpisodeDataset], config: TrainerConfig,
                grid: GridConfig | None = None,
                out_dir: str | Path | None = None) -> tuple[TrainResult, list[TrainResult]]:
    """Train every seed in ``config.seeds``; returns the best-validation run
    and all runs."""
    runs = [train(datasets, config, grid, s, out_dir) for s in config.seeds]
    best = max(runs, key=lambda r: r.best_validation)
    return best, runs


def write_metrics(path: str | Path, rows: list[dict], header_lines: list[str] = ()) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as f:
        for line in header_lines:
            f.write(f"# {line}\n")
        w = csv.DictWriter(f, fieldnames=METRIC_COLUMNS)
        w.writeheader()
        for row in rows:
            w.writerow({k: row[k] for k in METRIC_COLUMNS})
    return path
