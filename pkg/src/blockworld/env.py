"""Deterministic block-moving grid world.

An agent walks on an open square grid, lifting and dropping boxes; there
are no walls and no irreversible states.  All operations are pure
functions: ``step`` returns a fresh state and never mutates its inputs,
so any number of workers may drive independent episodes concurrently.

Box occupancy is stored as a bitmask (bit ``r * grid_size + c``), which
makes states hashable, cheap to copy, and fast to compare against goal
configurations.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum
from typing import Iterable, Iterator

import numpy as np


class Action(IntEnum):
    GO_LEFT = 0
    GO_RIGHT = 1
    GO_UP = 2
    GO_DOWN = 3
    PICK_UP = 4
    PUT_DOWN = 5


N_ACTIONS = 6
ACTIONS = tuple(Action)

# (drow, dcol) for the four movement actions.
_MOVES = {
    Action.GO_LEFT: (0, -1),
    Action.GO_RIGHT: (0, 1),
    Action.GO_UP: (-1, 0),
    Action.GO_DOWN: (1, 0),
}

# Per-cell observation codes.
CODE_EMPTY = 0
CODE_BOX = 1
CODE_AGENT = 2
CODE_AGENT_ON_BOX = 3
CODE_CARRIER = 4
CODE_CARRIER_ON_BOX = 5
N_CELL_CODES = 6

# Goal grids are binary, so two one-hot channels per cell.
N_GOAL_CODES = 2


def cell_index(row: int, col: int, grid_size: int) -> int:
    return row * grid_size + col


def mask_from_cells(cells: Iterable[tuple[int, int]], grid_size: int) -> int:
    mask = 0
    for r, c in cells:
        mask |= 1 << cell_index(r, c, grid_size)
    return mask


def cells_from_mask(mask: int, grid_size: int) -> list[tuple[int, int]]:
    cells = []
    idx = 0
    while mask:
        if mask & 1:
            cells.append(divmod(idx, grid_size))
        mask >>= 1
        idx += 1
    return cells


@dataclass(frozen=True)
class GridState:
    """Complete environment state.

    ``boxes`` is the floor-box bitmask; a box held by the agent is
    represented only by ``carrying`` and occupies no cell.
    """

    grid_size: int
    boxes: int
    agent: tuple[int, int]
    carrying: bool

    def __post_init__(self) -> None:
        g = self.grid_size
        if g < 1:
            raise ValueError(f"grid_size must be >= 1, got {g}")
        if not (0 <= self.agent[0] < g and 0 <= self.agent[1] < g):
            raise ValueError(f"agent {self.agent} out of bounds for grid {g}")
        if self.boxes < 0 or self.boxes >> (g * g):
            raise ValueError("box mask has bits outside the grid")

    @property
    def box_count(self) -> int:
        """Total boxes: floor boxes plus the carried one, if any."""
        return self.boxes.bit_count() + (1 if self.carrying else 0)

    def has_box(self, row: int, col: int) -> bool:
        return bool(self.boxes >> cell_index(row, col, self.grid_size) & 1)

    def box_cells(self) -> list[tuple[int, int]]:
        return cells_from_mask(self.boxes, self.grid_size)


@dataclass(frozen=True)
class GoalObservation:
    """Desired floor-box configuration; contains no agent information."""

    grid_size: int
    boxes: int

    def __post_init__(self) -> None:
        g = self.grid_size
        if g < 1:
            raise ValueError(f"grid_size must be >= 1, got {g}")
        if self.boxes <= 0 or self.boxes >> (g * g):
            raise ValueError("goal mask must be non-empty and within the grid")

    @property
    def box_count(self) -> int:
        return self.boxes.bit_count()

    def box_cells(self) -> list[tuple[int, int]]:
        return cells_from_mask(self.boxes, self.grid_size)

    @property
    def cells(self) -> np.ndarray:
        """Binary (grid_size, grid_size) array, 1 where a box belongs."""
        g = self.grid_size
        out = np.zeros((g, g), dtype=np.uint8)
        for r, c in self.box_cells():
            out[r, c] = 1
        return out


def step(state: GridState, action: Action) -> GridState:
    """Deterministic transition; invalid actions are silent no-ops.

    Movement off the grid edge keeps the agent in place.  PICK_UP works
    only over a floor box with empty hands; PUT_DOWN only onto an empty
    cell with a held box.  The total box count is always conserved.
    """
    g = state.grid_size
    action = Action(action)
    if action in _MOVES:
        dr, dc = _MOVES[action]
        r, c = state.agent[0] + dr, state.agent[1] + dc
        if 0 <= r < g and 0 <= c < g:
            return GridState(g, state.boxes, (r, c), state.carrying)
        return state
    bit = 1 << cell_index(state.agent[0], state.agent[1], g)
    if action == Action.PICK_UP:
        if not state.carrying and state.boxes & bit:
            return GridState(g, state.boxes & ~bit, state.agent, True)
        return state
    # PUT_DOWN
    if state.carrying and not state.boxes & bit:
        return GridState(g, state.boxes | bit, state.agent, False)
    return state


def encode_observation(state: GridState) -> np.ndarray:
    """Integer cell-code grid; bijective with GridState.

    Codes: 0 empty, 1 floor box, 2 agent, 3 agent on box, 4 agent
    carrying, 5 agent carrying on box.
    """
    g = state.grid_size
    cells = np.zeros((g, g), dtype=np.uint8)
    for r, c in state.box_cells():
        cells[r, c] = CODE_BOX
    ar, ac = state.agent
    on_box = state.has_box(ar, ac)
    if state.carrying:
        cells[ar, ac] = CODE_CARRIER_ON_BOX if on_box else CODE_CARRIER
    else:
        cells[ar, ac] = CODE_AGENT_ON_BOX if on_box else CODE_AGENT
    return cells


def decode_observation(cells: np.ndarray) -> GridState:
    """Inverse of :func:`encode_observation`."""
    cells = np.asarray(cells)
    if cells.ndim != 2 or cells.shape[0] != cells.shape[1]:
        raise ValueError(f"observation must be square, got shape {cells.shape}")
    g = cells.shape[0]
    agent = None
    carrying = False
    boxes = 0
    for r in range(g):
        for c in range(g):
            code = int(cells[r, c])
            if code == CODE_EMPTY:
                continue
            if code == CODE_BOX:
                boxes |= 1 << cell_index(r, c, g)
                continue
            if code not in (CODE_AGENT, CODE_AGENT_ON_BOX, CODE_CARRIER, CODE_CARRIER_ON_BOX):
                raise ValueError(f"unknown cell code {code} at {(r, c)}")
            if agent is not None:
                raise ValueError("more than one agent-bearing cell")
            agent = (r, c)
            carrying = code in (CODE_CARRIER, CODE_CARRIER_ON_BOX)
            if code in (CODE_AGENT_ON_BOX, CODE_CARRIER_ON_BOX):
                boxes |= 1 << cell_index(r, c, g)
    if agent is None:
        raise ValueError("no agent-bearing cell")
    return GridState(g, boxes, agent, carrying)


def encode_goal(goal_boxes: Iterable[tuple[int, int]], grid_size: int) -> GoalObservation:
    """Build a goal grid from desired box cells.

    Rejects empty, duplicate, or out-of-bounds goal cells.
    """
    cells = list(goal_boxes)
    if not cells:
        raise ValueError("goal must contain at least one box cell")
    if len(set(cells)) != len(cells):
        raise ValueError(f"duplicate goal cells in {cells}")
    for r, c in cells:
        if not (0 <= r < grid_size and 0 <= c < grid_size):
            raise ValueError(f"goal cell {(r, c)} out of bounds for grid {grid_size}")
    return GoalObservation(grid_size, mask_from_cells(cells, grid_size))


def is_success(state: GridState, goal: GoalObservation) -> bool:
    """True iff every goal cell holds a floor box and nothing is held.

    A carried box is not "in position", so ``carrying`` must be false.
    Extra floor boxes on non-goal cells do not block success.
    """
    if state.grid_size != goal.grid_size:
        raise ValueError(
            f"grid size mismatch: state {state.grid_size} vs goal {goal.grid_size}"
        )
    if state.box_count < goal.box_count:
        raise ValueError(
            f"goal needs {goal.box_count} boxes but state has {state.box_count}"
        )
    return not state.carrying and goal.boxes & ~state.boxes == 0


def reward(state_next: GridState, goal: GoalObservation) -> int:
    """Sparse reward: 1 on success, 0 otherwise."""
    return int(is_success(state_next, goal))


# --- text serialization (golden test vectors) -------------------------------
#
# Format: g=<grid_size>;a=<r>,<c>;c=<0|1>;b=<r>,<c>;...  with one b= entry
# per floor box in row-major order.  Goals use only g= and b= entries.


def state_to_text(state: GridState) -> str:
    parts = [
        f"g={state.grid_size}",
        f"a={state.agent[0]},{state.agent[1]}",
        f"c={int(state.carrying)}",
    ]
    parts += [f"b={r},{c}" for r, c in state.box_cells()]
    return ";".join(parts)


def goal_to_text(goal: GoalObservation) -> str:
    parts = [f"g={goal.grid_size}"]
    parts += [f"b={r},{c}" for r, c in goal.box_cells()]
    return ";".join(parts)


def _parse_fields(text: str) -> dict[str, list[str]]:
    fields: dict[str, list[str]] = {}
    for chunk in text.strip().split(";"):
        if not chunk:
            continue
        key, _, value = chunk.partition("=")
        fields.setdefault(key, []).append(value)
    return fields


def _single(fields: dict[str, list[str]], key: str) -> str:
    values = fields.get(key, [])
    if len(values) != 1:
        raise ValueError(f"expected exactly one '{key}=' field, got {len(values)}")
    return values[0]


def state_from_text(text: str) -> GridState:
    fields = _parse_fields(text)
    g = int(_single(fields, "g"))
    ar, ac = (int(x) for x in _single(fields, "a").split(","))
    carrying = bool(int(_single(fields, "c")))
    cells = [tuple(int(x) for x in v.split(",")) for v in fields.get("b", [])]
    if len(set(cells)) != len(cells):
        raise ValueError("duplicate box cells in state text")
    return GridState(g, mask_from_cells(cells, g), (ar, ac), carrying)


def goal_from_text(text: str) -> GoalObservation:
    fields = _parse_fields(text)
    g = int(_single(fields, "g"))
    cells = [tuple(int(x) for x in v.split(",")) for v in fields.get("b", [])]
    return encode_goal(cells, g)


def render_ascii(state: GridState, goal: GoalObservation | None = None) -> str:
    """Debug rendering.  '.' empty, 'b' box, 'x' goal, 'B' box-on-goal;
    agent: 'a' empty-handed / 'C' carrying, uppercased context wins."""
    g = state.grid_size
    goal_mask = goal.boxes if goal is not None else 0
    rows = []
    for r in range(g):
        row = []
        for c in range(g):
            bit = 1 << cell_index(r, c, g)
            has_box = bool(state.boxes & bit)
            is_goal = bool(goal_mask & bit)
            if (r, c) == state.agent:
                ch = "C" if state.carrying else "a"
            elif has_box and is_goal:
                ch = "B"
            elif has_box:
                ch = "b"
            elif is_goal:
                ch = "x"
            else:
                ch = "."
            row.append(ch)
        rows.append("".join(row))
    return "\n".join(rows)


def random_reachable_state(grid_size: int, n_boxes: int, rng: np.random.Generator,
                           walk_len: int = 40) -> GridState:
    """Random state drawn by a uniform-random action walk from a random start."""
    cells = rng.choice(grid_size * grid_size, size=n_boxes, replace=False)
    boxes = 0
    for idx in cells:
        boxes |= 1 << int(idx)
    agent = divmod(int(rng.integers(grid_size * grid_size)), grid_size)
    state = GridState(grid_size, boxes, agent, False)
    for _ in range(walk_len):
        state = step(state, Action(int(rng.integers(N_ACTIONS))))
    return state


def iter_states(grid_size: int, n_boxes: int) -> Iterator[GridState]:
    """All states with the given total box count (floor or carried)."""
    from itertools import combinations

    n_cells = grid_size * grid_size
    for carrying in (False, True):
        floor = n_boxes - (1 if carrying else 0)
        if floor < 0 or floor > n_cells:
            continue
        for combo in combinations(range(n_cells), floor):
            mask = 0
            for idx in combo:
                mask |= 1 << idx
            for a in range(n_cells):
                yield GridState(grid_size, mask, divmod(a, grid_size), carrying)
