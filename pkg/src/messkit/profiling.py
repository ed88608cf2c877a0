"""Candidate exit-point placement from a backbone workload profile."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DuplicatePlacement, TooManyExits
from .tensorio import CostProfile


@dataclass(frozen=True)
class ExitPlacement:
    """Block ordinals K_1 < ... < K_N carrying candidate exits (1-based)."""

    exit_points: tuple[int, ...]

    def __post_init__(self):
        points = tuple(int(k) for k in self.exit_points)
        if not points:
            raise ValueError("placement must contain at least one exit point")
        if any(k < 1 for k in points):
            raise ValueError("block ordinals are 1-based")
        if any(b <= a for a, b in zip(points, points[1:])):
            raise ValueError("exit points must be strictly increasing")
        object.__setattr__(self, "exit_points", points)

    @property
    def count(self) -> int:
        return len(self.exit_points)

    def __len__(self) -> int:
        return len(self.exit_points)


def place_exit_points(profile: CostProfile, num_exits: int) -> ExitPlacement:
    """Pick `num_exits` block ordinals splitting the workload near-evenly.

    The n-th point (n < N) is the block whose cumulative workload is
    nearest to n/N of the total, ties resolved toward the shallower
    block; the last point is always the final block.  Placement depends
    only on cost ratios, so rescaling the profile leaves it unchanged.
    """
    if num_exits < 1:
        raise ValueError("num_exits must be >= 1")
    if num_exits > profile.n_blocks:
        raise TooManyExits(
            f"cannot place {num_exits} exits on a {profile.n_blocks}-block backbone"
        )
    cumulative = np.cumsum(np.asarray(profile.block_workloads, dtype=np.float64))
    total = cumulative[-1]
    points = []
    for n in range(1, num_exits):
        target = total * n / num_exits
        # argmin returns the first (shallowest) block on exact ties
        k = int(np.argmin(np.abs(cumulative - target))) + 1
        points.append(k)
    points.append(profile.n_blocks)
    if len(set(points)) != len(points):
        raise DuplicatePlacement(
            f"workload targets collapse onto the same block: {points}; "
            "reduce num_exits or refine the block profile"
        )
    return ExitPlacement(tuple(points))


def segment_workloads(placement: ExitPlacement, profile: CostProfile,
                      kind: str = "workload") -> tuple[float, ...]:
    """Backbone cost of each inter-exit segment (K_{n-1}, K_n], with K_0 = 0."""
    bounds = (0,) + placement.exit_points
    return tuple(
        profile.segment_cost(a, b, kind) for a, b in zip(bounds, bounds[1:])
    )
