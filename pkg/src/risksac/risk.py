"""Critic targets for soft actor-critic under the entropic risk measure.

Two parameterizations are provided. The Q-form learns ordinary Q-values and
bootstraps through a log-sum-exp over next actions; it is the one used in
practice. The Q-bar form learns ``exp(beta * Q)`` directly with positive
(softplus) critic outputs and is kept mainly to demonstrate its instability.

All functions work on batched torch tensors, the action axis last.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from risksac.approximator import actor_log_probs


@dataclass(frozen=True)
class RiskParams:
    beta: float
    alpha: float = 0.0
    gamma: float = 0.99

    def __post_init__(self):
        if not (self.beta == self.beta and abs(self.beta) < float("inf")):
            raise ValueError("beta must be finite")
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must lie in (0, 1]")


def _tensor(x) -> torch.Tensor:
    # plain Python/numpy input defaults to float64
    return x if torch.is_tensor(x) else torch.as_tensor(np.asarray(x, dtype=np.float64))


def _check_beta(beta: float) -> None:
    if beta == 0:
        raise ValueError("beta = 0 is the risk-neutral case; use the neutral target")


def logsumexp_shifted(weights, values, beta) -> torch.Tensor:
    """``(1/beta) * log(sum_i w_i * exp(beta * v_i))`` along the last axis.

    ``beta`` is a scalar or a tensor broadcastable against the leading axes
    (one coefficient per row).

    The exponent is shifted by the support entry that maximizes ``beta * v``
    (the largest value for ``beta > 0``, the smallest for ``beta < 0``) so
    every exponential is at most one and the shifted entry contributes its
    full weight. Zero-weight entries are ignored. Weights are renormalized
    to sum to one. When the sum is close to one it is taken through
    ``expm1``/``log1p``, so rounding in the weights cannot leak into the
    result when ``beta`` is tiny.
    """
    w, v = _tensor(weights), _tensor(values)
    w = w.to(torch.promote_types(w.dtype, v.dtype))
    v = v.to(w.dtype)
    if torch.is_tensor(beta) or isinstance(beta, np.ndarray):
        beta = _tensor(beta).to(w.dtype)
        if torch.any(beta == 0):
            _check_beta(0.0)
        row_beta = beta.unsqueeze(-1)
    else:
        _check_beta(beta)
        row_beta = beta
    z = row_beta * v
    support = w > 0
    shift = torch.where(support, z, torch.full_like(z, -torch.inf)).amax(-1, keepdim=True)
    w = w / w.sum(-1, keepdim=True)
    zero = torch.zeros_like(z)
    near = torch.where(support, w * torch.expm1(z - shift), zero).sum(-1)
    far = torch.where(support, w * torch.exp(z - shift), zero).sum(-1)
    log_sum = torch.where(near.abs() < 0.5, torch.log1p(near), torch.log(far))
    return (shift.squeeze(-1) + log_sum) / beta


def entropy(probs: torch.Tensor, log_probs: torch.Tensor) -> torch.Tensor:
    # 0 * log 0 := 0
    return -torch.where(probs > 0, probs * log_probs, torch.zeros_like(probs)).sum(-1)


def entropic_target_from_values(reward, done, next_probs, next_log_probs, next_q,
                                params: RiskParams) -> torch.Tensor:
    """Risk-sensitive soft Bellman target from next-state quantities.

    ``next_q`` holds target-critic Q-values at ``s'`` (already reduced over the
    twin critics). Terminal transitions return the reward alone.
    """
    _check_beta(params.beta)
    h = entropy(next_probs, next_log_probs)
    lse = logsumexp_shifted(next_probs, params.gamma * next_q, params.beta)
    bootstrap = reward + params.gamma * params.alpha * h + lse
    return torch.where(torch.as_tensor(done, dtype=torch.bool), reward, bootstrap)


def critic_readout(qbar, beta: float) -> torch.Tensor:
    """Map exponentiated critic outputs back to Q-values: ``log(qbar) / beta``."""
    _check_beta(beta)
    qbar = _tensor(qbar)
    if torch.any(qbar <= 0):
        raise ValueError("Q-bar values must be strictly positive")
    return torch.log(qbar) / beta


def qbar_target_from_values(reward, done, next_probs, next_log_probs, next_qbar,
                            params: RiskParams) -> torch.Tensor:
    """Multiplicative Bellman target for ``Qbar = exp(beta * Q)``."""
    _check_beta(params.beta)
    if torch.any(next_qbar <= 0):
        raise ValueError("non-positive critic output in the Q-bar target")
    b, g = params.beta, params.gamma
    h = entropy(next_probs, next_log_probs)
    head = torch.exp(b * reward + b * g * params.alpha * h)
    tail = (next_probs * next_qbar.pow(g)).sum(-1)
    return torch.where(torch.as_tensor(done, dtype=torch.bool), torch.exp(b * reward), head * tail)


def min_qbar(qbar1: torch.Tensor, qbar2: torch.Tensor, beta: float) -> torch.Tensor:
    """Twin-critic reduction for Q-bar critics: the Q-bar of the smaller Q read-out."""
    return qbar2.minimum(qbar1) if beta > 0 else qbar2.maximum(qbar1)


# --- network-level wrappers -------------------------------------------------


def _next_state_terms(batch, bundle):
    with torch.no_grad():
        probs, log_probs = actor_log_probs(batch["s_next"], bundle.actor)
        q1 = bundle.target1(batch["s_next"])
        q2 = bundle.target2(batch["s_next"])
    return probs, log_probs, q1, q2


def entropic_target(batch, bundle, params: RiskParams) -> torch.Tensor:
    probs, log_probs, q1, q2 = _next_state_terms(batch, bundle)
    return entropic_target_from_values(batch["r"], batch["d"], probs, log_probs,
                                       torch.minimum(q1, q2), params)


def qbar_target(batch, bundle, params: RiskParams) -> torch.Tensor:
    probs, log_probs, q1, q2 = _next_state_terms(batch, bundle)
    return qbar_target_from_values(batch["r"], batch["d"], probs, log_probs,
                                   min_qbar(q1, q2, params.beta), params)
