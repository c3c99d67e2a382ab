"""Myopic greedy dispatcher used as the robust reference policy."""
from __future__ import annotations

from dataclasses import dataclass

from risksac.env import DOWN, LEFT, RIGHT, STAY, UP, Cell, EnvState, GridConfig, Item


@dataclass(frozen=True)
class GreedyDecision:
    chosen_action: int
    intent: str  # "deliver", "fetch" or "idle"
    item: Item | None = None


def manhattan(a: Cell, b: Cell) -> int:
    return abs(a[0] - b[0]) + abs(a[1] - b[1])


def item_profit(agent: Cell, item: Item, target: Cell, config: GridConfig) -> tuple[float, bool]:
    """Revenue minus travel cost agent -> item -> target, and whether the item
    can be reached before it expires."""
    to_item = manhattan(agent, item.cell)
    profit = config.delivery_revenue + config.move_cost * (to_item + manhattan(item.cell, target))
    return profit, to_item <= item.remaining


def step_toward(src: Cell, dst: Cell) -> int:
    """First move of a shortest route; the axis with the larger gap goes first,
    vertical on ties."""
    dr, dc = dst[0] - src[0], dst[1] - src[1]
    if dr == 0 and dc == 0:
        return STAY
    if abs(dr) >= abs(dc):
        return DOWN if dr > 0 else UP
    return RIGHT if dc > 0 else LEFT


def greedy_decision(state: EnvState, config: GridConfig) -> GreedyDecision:
    target = config.target_cell
    if state.carrying:
        return GreedyDecision(step_toward(state.agent, target), "deliver")
    best_key, best_item = None, None
    for item in state.items:
        profit, reachable = item_profit(state.agent, item, target, config)
        if not reachable or profit <= 0:
            continue
        key = (-profit, item.remaining, item.cell)
        if best_key is None or key < best_key:
            best_key, best_item = key, item
    if best_item is None:
        return GreedyDecision(STAY, "idle")
    return GreedyDecision(step_toward(state.agent, best_item.cell), "fetch", best_item)


def greedy_action(state: EnvState, config: GridConfig) -> int:
    return greedy_decision(state, config).chosen_action


class GreedyPolicy:
    """Callable wrapper so the greedy rule plugs into the evaluation harness."""

    name = "greedy"

    def __init__(self, config: GridConfig):
        self.config = config

    def __call__(self, state: EnvState) -> int:
        return greedy_action(state, self.config)
