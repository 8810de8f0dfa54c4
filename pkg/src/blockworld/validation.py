"""Input validation helpers shared by the estimator and CLI surfaces."""

from __future__ import annotations

import numbers

import numpy as np

from .env import N_CELL_CODES


def check_random_state(seed) -> np.random.Generator:
    """Accept an int seed, a Generator, a SeedSequence, or None."""
    if isinstance(seed, np.random.Generator):
        return seed
    if isinstance(seed, np.random.SeedSequence):
        return np.random.default_rng(seed)
    if seed is None or isinstance(seed, numbers.Integral):
        return np.random.default_rng(seed)
    raise TypeError(f"cannot build a Generator from {seed!r}")


def check_positive_int(name: str, value) -> int:
    if not isinstance(value, numbers.Integral) or value <= 0:
        raise ValueError(f"{name} must be a positive integer, got {value!r}")
    return int(value)


def check_observation_grid(x, grid_size: int) -> np.ndarray:
    """Validate (N, g*g) or (N, g, g) integer cell codes; returns (N, g*g)."""
    arr = np.asarray(x)
    n2 = grid_size * grid_size
    if arr.ndim == 3:
        arr = arr.reshape(arr.shape[0], -1)
    if arr.ndim != 2 or arr.shape[1] != n2:
        raise ValueError(
            f"expected observations of shape (N, {grid_size}, {grid_size}) "
            f"or (N, {n2}), got {np.asarray(x).shape}"
        )
    if not np.issubdtype(arr.dtype, np.integer):
        if not np.all(arr == arr.astype(np.int64)):
            raise ValueError("observation codes must be integers")
        arr = arr.astype(np.int64)
    if arr.min() < 0 or arr.max() >= N_CELL_CODES:
        raise ValueError(f"observation codes must lie in [0, {N_CELL_CODES})")
    return arr.astype(np.uint8)


def check_goal_grid(x, grid_size: int) -> np.ndarray:
    """Validate (N, g*g) or (N, g, g) binary goal grids; returns (N, g*g)."""
    arr = np.asarray(x)
    n2 = grid_size * grid_size
    if arr.ndim == 3:
        arr = arr.reshape(arr.shape[0], -1)
    if arr.ndim != 2 or arr.shape[1] != n2:
        raise ValueError(
            f"expected goals of shape (N, {grid_size}, {grid_size}) "
            f"or (N, {n2}), got {np.asarray(x).shape}"
        )
    if not np.isin(arr, (0, 1)).all():
        raise ValueError("goal grids must be binary")
    if not (arr.sum(axis=1) >= 1).all():
        raise ValueError("every goal grid needs at least one box cell")
    return arr.astype(np.uint8)
