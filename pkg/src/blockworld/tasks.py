"""Samplers for the three benchmark task distributions.

Each setting pairs a random initial state with a goal box arrangement:

* ``no_stitching`` — boxes anywhere, goal a different random arrangement;
  train and eval draw from the same distribution.
* ``quarters`` — boxes start inside one quarter of the board; train goals
  sit in an edge-adjacent quarter, eval goals in the diagonal one.
* ``few_to_many`` — n goal cells anywhere; during training m of them
  already hold a box, during eval none do.

Samplers are pure given an explicit ``numpy.random.Generator``; parallel
collectors should hand each environment its own spawned stream.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .env import GoalObservation, GridState

MAX_RESAMPLES = 1_000


class SettingKind(Enum):
    NO_STITCHING = "no_stitching"
    QUARTERS = "quarters"
    FEW_TO_MANY = "few_to_many"


class Mode(Enum):
    TRAIN = "train"
    EVAL = "eval"


def parse_setting(name: str) -> SettingKind:
    try:
        return SettingKind(name.strip().lower())
    except ValueError:
        valid = ", ".join(k.value for k in SettingKind)
        raise ValueError(f"unknown setting {name!r}; expected one of: {valid}") from None


def parse_mode(name: str) -> Mode:
    try:
        return Mode(name.strip().lower())
    except ValueError:
        raise ValueError(f"unknown mode {name!r}; expected 'train' or 'eval'") from None


@dataclass(frozen=True)
class SettingSpec:
    kind: SettingKind
    grid_size: int
    n_boxes: int
    m_preplaced: int = 0
    mode: Mode = Mode.TRAIN

    def __post_init__(self) -> None:
        g, n, m = self.grid_size, self.n_boxes, self.m_preplaced
        if g < 2:
            raise ValueError(f"grid_size must be >= 2, got {g}")
        if n < 1:
            raise ValueError(f"n_boxes must be >= 1, got {n}")
        if self.kind is SettingKind.QUARTERS:
            if g % 2:
                raise ValueError(f"quarters needs an even grid_size, got {g}")
            if n > (g // 2) ** 2:
                raise ValueError(f"{n} boxes exceed a {g // 2}x{g // 2} quarter")
        elif self.kind is SettingKind.NO_STITCHING:
            # The goal must be a *different* arrangement, so a full board
            # admits no task at all.
            if n > g * g - 1:
                raise ValueError(f"{n} boxes exceed capacity of a {g}x{g} grid")
        else:  # FEW_TO_MANY
            if not 0 <= m < n:
                raise ValueError(f"need 0 <= m < n, got m={m}, n={n}")
            off_goal = n - m if self.mode is Mode.TRAIN else n
            if n + off_goal > g * g:
                raise ValueError(
                    f"{n} goals plus {off_goal} off-goal boxes exceed a {g}x{g} grid"
                )

    def with_mode(self, mode: Mode) -> "SettingSpec":
        return SettingSpec(self.kind, self.grid_size, self.n_boxes, self.m_preplaced, mode)


@dataclass(frozen=True)
class Task:
    initial: GridState
    goal: GoalObservation
    spec: SettingSpec = field(compare=False)


# Quarters are indexed 0..3 as (row half, col half): 0=TL, 1=TR, 2=BL, 3=BR.


def quarter_cells(grid_size: int, quarter: int) -> list[int]:
    half = grid_size // 2
    qr, qc = divmod(quarter, 2)
    return [
        (qr * half + r) * grid_size + (qc * half + c)
        for r in range(half)
        for c in range(half)
    ]


def adjacent_quarters(quarter: int) -> tuple[int, int]:
    """The two quarters sharing an edge with ``quarter``."""
    qr, qc = divmod(quarter, 2)
    return ((1 - qr) * 2 + qc, qr * 2 + (1 - qc))


def diagonal_quarter(quarter: int) -> int:
    return 3 - quarter


def quarter_pairs(mode: Mode) -> list[tuple[int, int]]:
    """(start, goal) quarter pairs admissible in the given mode."""
    pairs = []
    for q in range(4):
        if mode is Mode.TRAIN:
            pairs.extend((q, a) for a in adjacent_quarters(q))
        else:
            pairs.append((q, diagonal_quarter(q)))
    return pairs


def _mask_of(indices: np.ndarray) -> int:
    mask = 0
    for idx in indices:
        mask |= 1 << int(idx)
    return mask


def _random_agent(grid_size: int, rng: np.random.Generator) -> tuple[int, int]:
    return divmod(int(rng.integers(grid_size * grid_size)), grid_size)


def sample_no_stitching(spec: SettingSpec, rng: np.random.Generator) -> Task:
    g, n = spec.grid_size, spec.n_boxes
    cells = g * g
    box_mask = _mask_of(rng.choice(cells, size=n, replace=False))
    for _ in range(MAX_RESAMPLES):
        goal_mask = _mask_of(rng.choice(cells, size=n, replace=False))
        if goal_mask != box_mask:
            break
    else:
        raise RuntimeError("could not draw a goal arrangement distinct from the start")
    initial = GridState(g, box_mask, _random_agent(g, rng), False)
    return Task(initial, GoalObservation(g, goal_mask), spec)


def sample_quarters(spec: SettingSpec, rng: np.random.Generator) -> Task:
    g, n = spec.grid_size, spec.n_boxes
    start_q = int(rng.integers(4))
    if spec.mode is Mode.TRAIN:
        goal_q = adjacent_quarters(start_q)[int(rng.integers(2))]
    else:
        goal_q = diagonal_quarter(start_q)
    starts = np.asarray(quarter_cells(g, start_q))
    goals = np.asarray(quarter_cells(g, goal_q))
    box_mask = _mask_of(rng.choice(starts, size=n, replace=False))
    goal_mask = _mask_of(rng.choice(goals, size=n, replace=False))
    initial = GridState(g, box_mask, _random_agent(g, rng), False)
    return Task(initial, GoalObservation(g, goal_mask), spec)


def sample_few_to_many(spec: SettingSpec, rng: np.random.Generator) -> Task:
    g, n, m = spec.grid_size, spec.n_boxes, spec.m_preplaced
    cells = g * g
    goal_cells = rng.choice(cells, size=n, replace=False)
    goal_mask = _mask_of(goal_cells)
    off_goal = np.asarray([i for i in range(cells) if not goal_mask >> i & 1])
    if spec.mode is Mode.TRAIN and m > 0:
        placed = rng.choice(goal_cells, size=m, replace=False)
        box_mask = _mask_of(placed) | _mask_of(rng.choice(off_goal, size=n - m, replace=False))
    else:
        # m == 0 consumes the generator identically to eval mode, so the
        # no-stitching degenerate case really is the same distribution.
        box_mask = _mask_of(rng.choice(off_goal, size=n, replace=False))
    initial = GridState(g, box_mask, _random_agent(g, rng), False)
    return Task(initial, GoalObservation(g, goal_mask), spec)


_SAMPLERS = {
    SettingKind.NO_STITCHING: sample_no_stitching,
    SettingKind.QUARTERS: sample_quarters,
    SettingKind.FEW_TO_MANY: sample_few_to_many,
}


def sample_task(spec: SettingSpec, rng: np.random.Generator) -> Task:
    return _SAMPLERS[spec.kind](spec, rng)
