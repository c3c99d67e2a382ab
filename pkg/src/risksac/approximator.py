"""Actor and critic networks, the shared parameter bundle, and checkpoints.

All five networks (actor, two critics, two target critics) share one trunk
architecture and differ only in the output activation. Observations are
channels-last ``(batch, height, width, 3)`` arrays as produced by
``risksac.env.encode_state``.
"""
from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

HEADS = ("softmax", "linear", "softplus")


@dataclass(frozen=True)
class ArchitectureSpec:
    """``kind="conv"`` is the full image network, ``kind="desk"`` a small MLP
    on the flattened observation for quick runs."""

    kind: str = "conv"
    conv_layers: tuple[tuple[int, int], ...] = ((32, 3), (64, 2), (64, 2))
    dense_units: tuple[int, ...] = (256, 256)
    input_shape: tuple[int, int, int] = (5, 5, 3)
    n_actions: int = 5
    l2_coefficient: float = 1e-4

    def __post_init__(self):
        if self.kind not in ("conv", "desk"):
            raise ValueError(f"unknown architecture kind {self.kind!r}")
        object.__setattr__(self, "conv_layers", tuple(tuple(c) for c in self.conv_layers))
        object.__setattr__(self, "dense_units", tuple(self.dense_units))
        object.__setattr__(self, "input_shape", tuple(self.input_shape))

    @classmethod
    def desk(cls, **kw) -> "ArchitectureSpec":
        kw.setdefault("dense_units", (64, 64))
        return cls(kind="desk", conv_layers=(), **kw)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ArchitectureSpec":
        return cls(**d)


class Network(nn.Module):
    def __init__(self, spec: ArchitectureSpec, head: str):
        super().__init__()
        if head not in HEADS:
            raise ValueError(f"unknown head {head!r}")
        self.spec, self.head = spec, head
        h, w, c = spec.input_shape
        convs = []
        for filters, size in spec.conv_layers:
            convs.append(nn.Conv2d(c, filters, size, stride=1, padding="same"))
            c = filters
        self.convs = nn.ModuleList(convs)
        width = h * w * c
        dense = []
        for units in spec.dense_units:
            dense.append(nn.Linear(width, units))
            width = units
        self.dense = nn.ModuleList(dense)
        self.out = nn.Linear(width, spec.n_actions)

    def forward(self, obs: torch.Tensor) -> torch.Tensor:
        """Pre-activation outputs; softmax logits for the actor head."""
        x = obs
        if self.convs:
            x = x.permute(0, 3, 1, 2)
            for conv in self.convs:
                x = F.relu(conv(x))
        x = x.flatten(1)
        for layer in self.dense:
            x = F.relu(layer(x))
        x = self.out(x)
        if self.head == "softplus":
            x = F.softplus(x)
        return x


def build_network(spec: ArchitectureSpec, head: str, seed: int,
                  dtype: torch.dtype = torch.float32) -> Network:
    # torch's default layer init is uniform with fan-in scaling
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        net = Network(spec, head)
    return net.to(dtype)


def _as_batch(obs, like: nn.Module) -> torch.Tensor:
    p = next(like.parameters())
    x = torch.as_tensor(np.asarray(obs) if not torch.is_tensor(obs) else obs, dtype=p.dtype)
    return x.unsqueeze(0) if x.dim() == 3 else x


def actor_forward(obs, actor: Network) -> torch.Tensor:
    """Action probabilities, shape ``(batch, n_actions)``."""
    return torch.softmax(actor(_as_batch(obs, actor)), dim=-1)


def actor_log_probs(obs, actor: Network) -> tuple[torch.Tensor, torch.Tensor]:
    logits = actor(_as_batch(obs, actor))
    log_p = torch.log_softmax(logits, dim=-1)
    return log_p.exp(), log_p


def critic_forward(obs, critic: Network) -> torch.Tensor:
    return critic(_as_batch(obs, critic))


def l2_penalty(params: Iterable[torch.Tensor], coefficient: float) -> torch.Tensor:
    return coefficient * sum((p * p).sum() for p in params)


def gradients(loss_fn: Callable[[], torch.Tensor], params: list[torch.Tensor],
              l2_coefficient: float = 0.0) -> list[torch.Tensor]:
    """Gradient of ``loss_fn() + l2 * sum(params**2)`` with respect to ``params``.

    ``loss_fn`` is re-evaluated here so it must close over the parameters.
    """
    params = list(params)
    loss = loss_fn()
    if not torch.isfinite(loss):
        raise FloatingPointError(f"non-finite loss: {loss.item()}")
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    grads = [torch.zeros_like(p) if g is None else g for p, g in zip(params, grads)]
    if l2_coefficient:
        # d/dp of l2 * p**2, added outside the graph; out of place because
        # autograd may hand back expanded views
        grads = list(torch._foreach_add(grads, [p.detach() for p in params],
                                        alpha=2.0 * l2_coefficient))
    return grads


@dataclass
class NetworkBundle:
    spec: ArchitectureSpec
    critic_head: str
    actor: Network
    critic1: Network
    critic2: Network
    target1: Network
    target2: Network
    seed: int = 0

    @property
    def critics(self) -> tuple[Network, Network]:
        return self.critic1, self.critic2

    @property
    def targets(self) -> tuple[Network, Network]:
        return self.target1, self.target2

    def networks(self) -> dict[str, Network]:
        return {
            "actor": self.actor, "critic1": self.critic1, "critic2": self.critic2,
            "target1": self.target1, "target2": self.target2,
        }

    @torch.no_grad()
    def soft_update(self, tau: float) -> None:
        for critic, target in zip(self.critics, self.targets):
            for p, tp in zip(critic.parameters(), target.parameters()):
                tp.mul_(1.0 - tau).add_(p, alpha=tau)

    def clone(self) -> "NetworkBundle":
        return copy.deepcopy(self)

    def to(self, dtype: torch.dtype) -> "NetworkBundle":
        for net in self.networks().values():
            net.to(dtype)
        return self


def make_bundle(spec: ArchitectureSpec, critic_head: str = "linear", seed: int = 0,
                dtype: torch.dtype = torch.float32) -> NetworkBundle:
    if critic_head not in ("linear", "softplus"):
        raise ValueError(f"critic head must be linear or softplus, got {critic_head!r}")
    actor = build_network(spec, "softmax", seed, dtype)
    c1 = build_network(spec, critic_head, seed + 1, dtype)
    c2 = build_network(spec, critic_head, seed + 2, dtype)
    t1, t2 = copy.deepcopy(c1), copy.deepcopy(c2)
    for t in (t1, t2):
        t.requires_grad_(False)
    return NetworkBundle(spec, critic_head, actor, c1, c2, t1, t2, seed)


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path: str | Path, bundle: NetworkBundle, optimizers: dict | None = None,
                    step: int = 0, extra: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "architecture": bundle.spec.to_dict(),
        "critic_head": bundle.critic_head,
        "seed": bundle.seed,
        "dtype": str(next(bundle.actor.parameters()).dtype),
        "params": {k: net.state_dict() for k, net in bundle.networks().items()},
        "optimizers": {k: opt.state_dict() for k, opt in (optimizers or {}).items()},
        "step": int(step),
        "extra": extra or {},
    }
    torch.save(payload, path)
    return path


def load_checkpoint(path: str | Path) -> tuple[NetworkBundle, dict]:
    """Returns the bundle plus the raw payload (optimizer states, step, extra)."""
    payload = torch.load(path, map_location="cpu", weights_only=False)
    spec = ArchitectureSpec.from_dict(payload["architecture"])
    dtype = getattr(torch, payload["dtype"].split(".")[-1])
    bundle = make_bundle(spec, payload["critic_head"], payload["seed"], dtype)
    for k, net in bundle.networks().items():
        net.load_state_dict(payload["params"][k])
    return bundle, payload
