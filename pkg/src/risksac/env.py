"""Item pickup-and-delivery grid world.

A single agent moves on a small grid, collects items that appear at random
cells and expire after a fixed response time, and delivers them to a fixed
target cell. Item appearances are pre-sampled into replayable schedules so
that every policy sees exactly the same demand.

Actions are encoded as ``0=stay, 1=up, 2=right, 3=down, 4=left`` where "up"
decreases the row index.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

Cell = tuple[int, int]

STAY, UP, RIGHT, DOWN, LEFT = range(5)
ACTIONS = ("stay", "up", "right", "down", "left")
N_ACTIONS = len(ACTIONS)
MOVES: tuple[Cell, ...] = ((0, 0), (-1, 0), (0, 1), (1, 0), (0, -1))

SPLITS = ("train", "validation", "test")
DEFAULT_SPLIT_SIZES = {"train": 800, "validation": 100, "test": 100}


@dataclass(frozen=True)
class GridConfig:
    width: int = 5
    height: int = 5
    horizon: int = 200
    max_response_time: int = 10
    move_cost: float = -1.0
    delivery_revenue: float = 15.0
    target_cell: Cell = (2, 2)
    items_per_step_rate: float = 1.0

    def __post_init__(self):
        for name in ("width", "height", "horizon", "max_response_time"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.move_cost > 0:
            raise ValueError("move_cost must be <= 0")
        if self.delivery_revenue < 0:
            raise ValueError("delivery_revenue must be >= 0")
        if self.items_per_step_rate <= 0:
            raise ValueError("items_per_step_rate must be > 0")
        object.__setattr__(self, "target_cell", tuple(int(v) for v in self.target_cell))
        if not self.in_grid(self.target_cell):
            raise ValueError(f"target_cell {self.target_cell} outside the grid")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    def in_grid(self, cell: Cell) -> bool:
        return 0 <= cell[0] < self.height and 0 <= cell[1] < self.width


@dataclass(frozen=True)
class Item:
    cell: Cell
    remaining: int


@dataclass(frozen=True)
class EnvState:
    agent: Cell
    carrying: bool = False
    items: tuple[Item, ...] = ()
    t: int = 0


def initial_state(config: GridConfig) -> EnvState:
    """Empty grid with the agent parked on the target cell."""
    return EnvState(agent=config.target_cell)


# ---------------------------------------------------------------------------
# item distributions


@dataclass(frozen=True)
class ItemDistribution:
    name: str
    probs: np.ndarray = field(repr=False)

    def __post_init__(self):
        probs = np.array(self.probs, dtype=np.float64)
        probs.setflags(write=False)
        object.__setattr__(self, "probs", probs)

    @property
    def rate(self) -> float:
        return float(self.probs.sum())


def load_registry(path: str | Path | None = None) -> dict[str, np.ndarray]:
    """Raw (unnormalized) weight maps keyed by distribution name."""
    if path is None:
        text = resources.files("risksac").joinpath("data/distributions.json").read_text()
    else:
        text = Path(path).read_text()
    return {k: np.asarray(v, dtype=np.float64) for k, v in json.loads(text).items()}


DISTRIBUTION_NAMES: tuple[str, ...] = tuple(load_registry())
TRAINING_DISTRIBUTION = "gradient-1"


def make_distribution(
    kind: str | np.ndarray | Sequence[Sequence[float]],
    rate: float = 1.0,
    target_cell: Cell = (2, 2),
    name: str | None = None,
) -> ItemDistribution:
    """Build a per-cell appearance-probability map summing to ``rate``.

    ``kind`` is either a registered name (see ``DISTRIBUTION_NAMES``) or a
    custom nonnegative weight matrix. The target cell is zeroed before
    normalization so items never appear on it.
    """
    if isinstance(kind, str):
        registry = load_registry()
        if kind not in registry:
            raise KeyError(
                f"unknown distribution {kind!r}; registered: {', '.join(registry)}"
            )
        weights = registry[kind].copy()
        name = name or kind
    else:
        weights = np.array(kind, dtype=np.float64)
        name = name or "custom"
    if weights.ndim != 2:
        raise ValueError("distribution matrix must be 2-D")
    if np.any(weights < 0) or not np.all(np.isfinite(weights)):
        raise ValueError("distribution weights must be finite and nonnegative")
    if rate <= 0:
        raise ValueError(f"rate must be > 0, got {rate}")
    weights[tuple(target_cell)] = 0.0
    total = weights.sum()
    if total <= 0:
        raise ValueError("distribution has no mass outside the target cell")
    probs = weights * (rate / total)
    if probs.max() > 1.0:
        raise ValueError(f"rate {rate} pushes a cell probability above 1")
    return ItemDistribution(name=name, probs=probs)


def zero_distribution(config: GridConfig, name: str = "empty") -> ItemDistribution:
    return ItemDistribution(name=name, probs=np.zeros(config.shape))


def spawn_items(dist: ItemDistribution, rng: np.random.Generator) -> list[Cell]:
    """One time step of independent per-cell Bernoulli appearances."""
    hits = rng.random(dist.probs.shape) < dist.probs
    return [(int(r), int(c)) for r, c in zip(*np.nonzero(hits))]


# ---------------------------------------------------------------------------
# dynamics


def step(
    state: EnvState,
    action: int,
    spawned: Iterable[Cell],
    config: GridConfig,
    events: list | None = None,
) -> tuple[EnvState, float, bool]:
    """Advance the simulator by one time step.

    Order within a step: move, deliver, pick up, age items, spawn. Moves that
    would leave the grid keep the agent in place but still cost ``move_cost``.
    If ``events`` is given, ``("move", cost)``, ``("deliver", revenue)`` and
    ``("pickup", cell)`` tuples are appended to it.
    """
    if state.t >= config.horizon:
        raise RuntimeError("step called on a finished episode")
    if not 0 <= action < N_ACTIONS:
        raise ValueError(f"invalid action {action}")

    reward = 0.0
    row, col = state.agent
    if action != STAY:
        dr, dc = MOVES[action]
        row = min(max(row + dr, 0), config.height - 1)
        col = min(max(col + dc, 0), config.width - 1)
        reward += config.move_cost
        if events is not None:
            events.append(("move", config.move_cost))
    agent = (row, col)

    carrying = state.carrying
    if carrying and agent == config.target_cell:
        carrying = False
        reward += config.delivery_revenue
        if events is not None:
            events.append(("deliver", config.delivery_revenue))

    items = list(state.items)
    if not carrying:
        here = [i for i, it in enumerate(items) if it.cell == agent]
        if here:
            pick = min(here, key=lambda i: items[i].remaining)
            items.pop(pick)
            carrying = True
            if events is not None:
                events.append(("pickup", agent))

    aged = [Item(it.cell, it.remaining - 1) for it in items if it.remaining > 1]
    for cell in spawned:
        cell = (int(cell[0]), int(cell[1]))
        if not config.in_grid(cell):
            raise ValueError(f"spawned cell {cell} outside the grid")
        aged.append(Item(cell, config.max_response_time))

    t = state.t + 1
    return EnvState(agent, carrying, tuple(aged), t), reward, t == config.horizon


def encode_state(state: EnvState, config: GridConfig) -> np.ndarray:
    """Encode as a ``(height, width, 3)`` float32 image: target, agent, items.

    The agent entry is 0.5 while carrying and 1 otherwise. An item cell holds
    the largest remaining lifetime among its items divided by the maximum
    response time.
    """
    obs = np.zeros((config.height, config.width, 3), dtype=np.float32)
    obs[config.target_cell + (0,)] = 1.0
    obs[state.agent + (1,)] = 0.5 if state.carrying else 1.0
    scale = 1.0 / config.max_response_time
    for it in state.items:
        v = it.remaining * scale
        if v > obs[it.cell + (2,)]:
            obs[it.cell + (2,)] = v
    return obs


def render(state: EnvState, config: GridConfig) -> str:
    """Plain-text dump: ``T`` target, ``A``/``a`` agent (lowercase = carrying),
    digits are the largest remaining lifetime of items in a cell (``+`` for 10+)."""
    grid = [["." for _ in range(config.width)] for _ in range(config.height)]
    grid[config.target_cell[0]][config.target_cell[1]] = "T"
    best: dict[Cell, int] = {}
    for it in state.items:
        best[it.cell] = max(best.get(it.cell, 0), it.remaining)
    for (r, c), rem in best.items():
        grid[r][c] = str(rem) if rem < 10 else "+"
    r, c = state.agent
    grid[r][c] = "a" if state.carrying else "A"
    lines = ["".join(row) for row in grid]
    lines.append(f"t={state.t} carrying={state.carrying} items={len(state.items)}")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# datasets


@dataclass(frozen=True)
class EpisodeDataset:
    """Pre-sampled item appearances.

    Each episode is an ``(n, 3)`` int array of ``(t, row, col)`` records sorted
    by ``t`` then cell. Items listed at time ``t`` appear at the end of step ``t``.
    """

    distribution_name: str
    episodes: tuple[np.ndarray, ...] = field(repr=False)
    split: str = "train"
    seed: int = 0
    horizon: int = 200

    def __post_init__(self):
        if self.split not in SPLITS:
            raise ValueError(f"unknown split {self.split!r}")
        frozen = []
        for ep in self.episodes:
            arr = np.array(ep, dtype=np.int64).reshape(-1, 3)
            arr.setflags(write=False)
            frozen.append(arr)
        object.__setattr__(self, "episodes", tuple(frozen))

    def __len__(self) -> int:
        return len(self.episodes)

    @property
    def n_items(self) -> int:
        return int(sum(len(ep) for ep in self.episodes))

    def schedule(self, i: int) -> list[list[Cell]]:
        """Per-time-step lists of appearance cells for episode ``i``."""
        out: list[list[Cell]] = [[] for _ in range(self.horizon)]
        for t, r, c in self.episodes[i].tolist():
            out[t].append((r, c))
        return out

    def subset(self, indices: Iterable[int], split: str | None = None) -> "EpisodeDataset":
        return replace(
            self,
            episodes=tuple(self.episodes[i] for i in indices),
            split=split or self.split,
        )

    def equals(self, other: "EpisodeDataset") -> bool:
        return (
            self.header() == other.header()
            and len(self) == len(other)
            and all(np.array_equal(a, b) for a, b in zip(self.episodes, other.episodes))
        )

    def header(self) -> dict:
        return {
            "distribution_name": self.distribution_name,
            "split": self.split,
            "seed": int(self.seed),
            "horizon": int(self.horizon),
            "n_episodes": len(self),
            "n_items": self.n_items,
        }


def _sample_episodes(dist: ItemDistribution, n_episodes: int, horizon: int,
                     rng: np.random.Generator) -> list[np.ndarray]:
    episodes = []
    for _ in range(n_episodes):
        hits = rng.random((horizon,) + dist.probs.shape) < dist.probs
        episodes.append(np.argwhere(hits))
    return episodes


def generate_dataset(
    dist: ItemDistribution,
    n_episodes: int,
    horizon: int = 200,
    seed: int = 0,
    split: str = "train",
) -> EpisodeDataset:
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    rng = np.random.default_rng(seed)
    return EpisodeDataset(
        distribution_name=dist.name,
        episodes=tuple(_sample_episodes(dist, n_episodes, horizon, rng)),
        split=split,
        seed=seed,
        horizon=horizon,
    )


def generate_splits(
    dist: ItemDistribution,
    seed: int,
    horizon: int = 200,
    sizes: dict[str, int] | None = None,
) -> dict[str, EpisodeDataset]:
    """Sample one pool of episodes and cut it into train/validation/test."""
    sizes = dict(DEFAULT_SPLIT_SIZES if sizes is None else sizes)
    pool = generate_dataset(dist, sum(sizes.values()), horizon, seed)
    out, start = {}, 0
    for split in SPLITS:
        n = sizes.get(split, 0)
        out[split] = pool.subset(range(start, start + n), split=split)
        start += n
    return out


def save_dataset(dataset: EpisodeDataset, path: str | Path) -> Path:
    path = Path(path)
    payload = {
        "header": dataset.header(),
        "episodes": [ep.tolist() for ep in dataset.episodes],
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, separators=(",", ":"), sort_keys=True))
    return path


def load_dataset(path: str | Path) -> EpisodeDataset:
    payload = json.loads(Path(path).read_text())
    h = payload["header"]
    ds = EpisodeDataset(
        distribution_name=h["distribution_name"],
        episodes=tuple(np.asarray(ep, dtype=np.int64).reshape(-1, 3) for ep in payload["episodes"]),
        split=h["split"],
        seed=h["seed"],
        horizon=h["horizon"],
    )
    if len(ds) != h["n_episodes"] or ds.n_items != h["n_items"]:
        raise ValueError(f"{path}: header counts do not match payload")
    return ds


# ---------------------------------------------------------------------------
# replaying an episode


class GridEnv:
    """Stateful wrapper that replays one appearance schedule at a time."""

    def __init__(self, config: GridConfig | None = None):
        self.config = config or GridConfig()
        self.state: EnvState | None = None
        self._schedule: list[list[Cell]] = []

    def reset(self, schedule: list[list[Cell]]) -> np.ndarray:
        if len(schedule) < self.config.horizon:
            raise ValueError("schedule shorter than the horizon")
        self._schedule = schedule
        self.state = initial_state(self.config)
        return encode_state(self.state, self.config)

    def step(self, action: int) -> tuple[np.ndarray, float, bool]:
        s = self.state
        self.state, reward, done = step(s, int(action), self._schedule[s.t], self.config)
        return encode_state(self.state, self.config), reward, done
