"""Brute-force ground truth over the exact discrete state space.

BFS over the deterministic transition graph gives solvability, optimal
step counts, and optimal-action sets; combinatorics helpers size the
test instances.  Everything here favors exactness over speed and is
meant for desk-scale instances only.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from itertools import combinations
from typing import Iterator

from .env import (
    ACTIONS,
    Action,
    GoalObservation,
    GridState,
    is_success,
    step,
)
from .tasks import Mode, SettingKind, SettingSpec, Task, quarter_cells, quarter_pairs

DEFAULT_STATE_BOUND = 10_000_000
DEFAULT_TASK_BOUND = 1_000_000


class SearchBoundExceeded(RuntimeError):
    """The instance is too large for exhaustive search."""


@dataclass
class SearchResult:
    """Exact distances-to-goal over every state reachable from the start."""

    solvable: bool
    optimal_steps: int | None
    goal: GoalObservation | None = None
    _dist: dict[GridState, int] = field(default_factory=dict, repr=False)
    _next: dict[GridState, tuple[GridState, ...]] = field(default_factory=dict, repr=False)

    def distance(self, state: GridState) -> int:
        return self._dist[state]

    def reachable_states(self) -> list[GridState]:
        return list(self._dist)

    def optimal_first_actions(self, state: GridState) -> set[Action]:
        """Actions whose successor minimizes the distance to the goal."""
        succs = self._next[state]
        best = min(self._dist[s] for s in succs)
        return {a for a, s in zip(ACTIONS, succs) if self._dist[s] == best}


def is_solvable(initial: GridState, goal: GoalObservation) -> bool:
    """On an open grid any same-count box arrangement is reachable, so a
    task is solvable exactly when the goal does not ask for more boxes
    than the state owns.  Cross-checked against BFS in the test suite."""
    if initial.grid_size != goal.grid_size:
        return False
    return goal.box_count <= initial.box_count


def _explore(initial: GridState, max_states: int):
    """Reachable set plus successor table, breadth-first from ``initial``."""
    succ: dict[GridState, tuple[GridState, ...]] = {}
    queue = deque([initial])
    seen = {initial}
    while queue:
        state = queue.popleft()
        nexts = tuple(step(state, a) for a in ACTIONS)
        succ[state] = nexts
        for s in nexts:
            if s not in seen:
                if len(seen) >= max_states:
                    raise SearchBoundExceeded(
                        f"reachable set exceeds {max_states} states"
                    )
                seen.add(s)
                queue.append(s)
    return succ


def _distances_to(targets: set[GridState],
                  succ: dict[GridState, tuple[GridState, ...]]) -> dict[GridState, int]:
    """Reverse BFS from the target set over the explored graph."""
    pred: dict[GridState, list[GridState]] = {s: [] for s in succ}
    for s, nexts in succ.items():
        for t in nexts:
            if t is not s and t != s:
                pred[t].append(s)
    dist = {t: 0 for t in targets}
    queue = deque(targets)
    while queue:
        state = queue.popleft()
        d = dist[state]
        for p in pred[state]:
            if p not in dist:
                dist[p] = d + 1
                queue.append(p)
    return dist


def optimal_steps(initial: GridState, goal: GoalObservation,
                  max_states: int = DEFAULT_STATE_BOUND) -> SearchResult:
    """Exact shortest action-sequence length from ``initial`` to success.

    BFS over the full reachable set, then reverse BFS from the goal set,
    so the result also answers distance queries for every reachable
    state (used to grade greedy policies).
    """
    if initial.grid_size != goal.grid_size:
        raise ValueError("grid size mismatch between state and goal")
    if goal.box_count > initial.box_count:
        return SearchResult(solvable=False, optimal_steps=None, goal=goal)
    succ = _explore(initial, max_states)
    targets = {s for s in succ if is_success(s, goal)}
    if not targets:
        return SearchResult(solvable=False, optimal_steps=None, goal=goal)
    dist = _distances_to(targets, succ)
    if initial not in dist:
        return SearchResult(solvable=False, optimal_steps=None, goal=goal)
    return SearchResult(True, dist[initial], goal, dist, succ)


def state_distance(a: GridState, b: GridState,
                   max_states: int = DEFAULT_STATE_BOUND) -> int | None:
    """Shortest path length between two complete states (exact match)."""
    if a == b:
        return 0
    queue = deque([a])
    dist = {a: 0}
    while queue:
        state = queue.popleft()
        d = dist[state]
        for act in ACTIONS:
            s = step(state, act)
            if s not in dist:
                if s == b:
                    return d + 1
                if len(dist) >= max_states:
                    raise SearchBoundExceeded(
                        f"reachable set exceeds {max_states} states"
                    )
                dist[s] = d + 1
                queue.append(s)
    return None


def count_configurations(cells: int, boxes: int) -> int:
    """Number of floor-box placements: C(cells, boxes), exact."""
    if boxes < 0 or boxes > cells:
        raise ValueError(f"need 0 <= boxes <= cells, got {boxes} of {cells}")
    return math.comb(cells, boxes)


def _cell_combos(cells: list[int], k: int) -> Iterator[int]:
    for combo in combinations(cells, k):
        mask = 0
        for idx in combo:
            mask |= 1 << idx
        yield mask


def count_tasks(spec: SettingSpec) -> int:
    """Exact number of tasks :func:`enumerate_tasks` would yield."""
    g, n, m = spec.grid_size, spec.n_boxes, spec.m_preplaced
    cells = g * g
    agents = cells
    if spec.kind is SettingKind.NO_STITCHING:
        placements = math.comb(cells, n)
        return placements * (placements - 1) * agents
    if spec.kind is SettingKind.QUARTERS:
        q_cells = (g // 2) ** 2
        pairs = len(quarter_pairs(spec.mode))
        return pairs * math.comb(q_cells, n) ** 2 * agents
    # FEW_TO_MANY
    goals = math.comb(cells, n)
    if spec.mode is Mode.TRAIN:
        per_goal = math.comb(n, m) * math.comb(cells - n, n - m)
    else:
        per_goal = math.comb(cells - n, n)
    return goals * per_goal * agents


def enumerate_tasks(spec: SettingSpec,
                    max_tasks: int = DEFAULT_TASK_BOUND) -> Iterator[Task]:
    """Every (initial, goal) pair consistent with the setting, exactly once."""
    total = count_tasks(spec)
    if total > max_tasks:
        raise SearchBoundExceeded(f"{total} tasks exceeds bound {max_tasks}")
    g, n, m = spec.grid_size, spec.n_boxes, spec.m_preplaced
    cells = g * g
    all_cells = list(range(cells))

    def emit(box_mask: int, goal_mask: int) -> Iterator[Task]:
        goal = GoalObservation(g, goal_mask)
        for a in range(cells):
            initial = GridState(g, box_mask, divmod(a, g), False)
            yield Task(initial, goal, spec)

    if spec.kind is SettingKind.NO_STITCHING:
        for box_mask in _cell_combos(all_cells, n):
            for goal_mask in _cell_combos(all_cells, n):
                if goal_mask != box_mask:
                    yield from emit(box_mask, goal_mask)
    elif spec.kind is SettingKind.QUARTERS:
        for start_q, goal_q in quarter_pairs(spec.mode):
            starts = quarter_cells(g, start_q)
            goals = quarter_cells(g, goal_q)
            for box_mask in _cell_combos(starts, n):
                for goal_mask in _cell_combos(goals, n):
                    yield from emit(box_mask, goal_mask)
    else:  # FEW_TO_MANY
        for goal_combo in combinations(all_cells, n):
            goal_mask = 0
            for idx in goal_combo:
                goal_mask |= 1 << idx
            off_goal = [i for i in all_cells if not goal_mask >> i & 1]
            if spec.mode is Mode.TRAIN:
                for placed in combinations(goal_combo, m):
                    placed_mask = 0
                    for idx in placed:
                        placed_mask |= 1 << idx
                    for rest_mask in _cell_combos(off_goal, n - m):
                        yield from emit(placed_mask | rest_mask, goal_mask)
            else:
                for box_mask in _cell_combos(off_goal, n):
                    yield from emit(box_mask, goal_mask)
