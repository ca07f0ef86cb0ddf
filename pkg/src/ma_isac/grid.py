"""Discrete transmit-region geometry.

The antenna elements move on a square lattice of candidate positions inside
a bounded region. This module owns the lattice, the position-selection
encoding of antenna trajectories, and every mobility / spacing feasibility
predicate. Predicates compare integer step counts so that boundary cases
(displacement exactly at the per-snapshot limit, spacing exactly at the
minimum) are decided without floating-point ties.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

# Relative guard used when converting a length limit to a lattice step count.
# Recovers step counts that are mathematically integral but land a few ulps
# below the integer after float division.
_STEP_GUARD = 1e-9


class ParameterError(ValueError):
    """Structurally invalid geometry or mobility parameters."""


def _steps_within(limit_mm: float, step_mm: float) -> int:
    """Largest k such that k*step_mm <= limit_mm (boundary inclusive)."""
    if limit_mm < 0:
        return -1
    return int(np.floor(limit_mm / step_mm * (1.0 + _STEP_GUARD)))


@dataclass(frozen=True)
class PositionGrid:
    """Square lattice of candidate antenna positions.

    Positions are indexed row-major: index j corresponds to the lattice cell
    (col, row) = (j % points_per_axis, j // points_per_axis) at coordinates
    p_j = (col * step_mm, row * step_mm). Index 0 is the reference position
    at the region corner (0, 0).
    """

    step_mm: float
    side_mm: float
    wavelength_mm: float
    points_per_axis: int

    @property
    def n_positions(self) -> int:
        return self.points_per_axis * self.points_per_axis

    def coords(self, j: int) -> tuple[int, int]:
        """Integer lattice coordinates (col, row) of position j."""
        if not 0 <= j < self.n_positions:
            raise ParameterError(f"position index {j} out of range [0, {self.n_positions})")
        return j % self.points_per_axis, j // self.points_per_axis

    def index_of(self, col: int, row: int) -> int:
        n = self.points_per_axis
        if not (0 <= col < n and 0 <= row < n):
            raise ParameterError(f"lattice cell ({col}, {row}) outside {n}x{n} grid")
        return row * n + col

    def position_mm(self, j: int) -> tuple[float, float]:
        col, row = self.coords(j)
        return col * self.step_mm, row * self.step_mm

    @property
    def positions_mm(self) -> np.ndarray:
        """All candidate positions as a (J, 2) array of (x, y) in mm."""
        n = self.points_per_axis
        cols, rows = np.meshgrid(np.arange(n), np.arange(n))
        return np.stack([cols.ravel(), rows.ravel()], axis=1) * self.step_mm


@dataclass(frozen=True)
class MobilityParams:
    """Per-snapshot displacement limit and inter-element spacing floor.

    The displacement limit is the product of actuator speed and the motion
    interval; a zero speed models immobile elements.
    """

    speed_mm_per_ms: float
    motion_time_ms: float
    d_min_mm: float

    def __post_init__(self) -> None:
        if self.speed_mm_per_ms < 0:
            raise ParameterError("speed must be nonnegative")
        if self.motion_time_ms <= 0 or self.d_min_mm <= 0:
            raise ParameterError("motion time and minimum spacing must be positive")

    @property
    def d_max_mm(self) -> float:
        return self.speed_mm_per_ms * self.motion_time_ms


@dataclass(frozen=True)
class Trajectory:
    """Per-snapshot position selections for all movable elements.

    ``initial`` holds the configuration before the first snapshot;
    ``selections[n-1]`` holds the configuration during snapshot n (1-based).
    One index per (snapshot, element), so the one-selection-per-element
    constraint holds by construction.
    """

    initial: tuple[int, ...]
    selections: tuple[tuple[int, ...], ...]

    def __post_init__(self) -> None:
        m = len(self.initial)
        if m == 0:
            raise ParameterError("trajectory needs at least one element")
        for row in self.selections:
            if len(row) != m:
                raise ParameterError("every snapshot must select one position per element")

    @property
    def n_elements(self) -> int:
        return len(self.initial)

    @property
    def n_snapshots(self) -> int:
        return len(self.selections)

    def positions(self, snapshot: int) -> tuple[int, ...]:
        """Configuration at a snapshot; snapshot 0 is the initial placement."""
        if snapshot == 0:
            return self.initial
        return self.selections[snapshot - 1]


def build_grid(l: float, step_mm: float, wavelength_mm: float) -> PositionGrid:
    """Quantize the l*lambda x l*lambda transmit region with lattice pitch step_mm."""
    if l <= 0 or step_mm <= 0 or wavelength_mm <= 0:
        raise ParameterError("region size, step and wavelength must all be positive")
    side = l * wavelength_mm
    if step_mm > side:
        raise ParameterError(f"step {step_mm} mm exceeds region side {side} mm")
    per_axis = _steps_within(side, step_mm) + 1
    return PositionGrid(
        step_mm=step_mm,
        side_mm=side,
        wavelength_mm=wavelength_mm,
        points_per_axis=per_axis,
    )


def mobility_feasible(j_prev: int, j_next: int, grid: PositionGrid, params: MobilityParams) -> bool:
    """True iff the move stays within the per-snapshot displacement limit.

    The limit applies per axis (Chebyshev ball): the actuators drive both
    axes simultaneously at the same speed.
    """
    c0, r0 = grid.coords(j_prev)
    c1, r1 = grid.coords(j_next)
    max_steps = _steps_within(params.d_max_mm, grid.step_mm)
    return max(abs(c1 - c0), abs(r1 - r0)) <= max_steps


def min_distance_feasible(indices: tuple[int, ...], grid: PositionGrid, params: MobilityParams) -> bool:
    """True iff every pair of selected positions is at least d_min apart (Euclidean)."""
    # Compare squared distances in integer lattice units against the squared
    # threshold, shrunk by the guard so an exact-boundary pair counts feasible.
    threshold = (params.d_min_mm / grid.step_mm) ** 2 * (1.0 - _STEP_GUARD)
    cells = [grid.coords(j) for j in indices]
    for (c0, r0), (c1, r1) in itertools.combinations(cells, 2):
        if (c1 - c0) ** 2 + (r1 - r0) ** 2 < threshold:
            return False
    return True


def _window(grid: PositionGrid, j_center: int, steps: int) -> tuple[int, ...]:
    """Indices within a Chebyshev ball of the given lattice radius, clipped."""
    if steps < 0:
        return ()
    n = grid.points_per_axis
    c, r = grid.coords(j_center)
    cols = range(max(0, c - steps), min(n - 1, c + steps) + 1)
    rows = range(max(0, r - steps), min(n - 1, r + steps) + 1)
    return tuple(row * n + col for row in rows for col in cols)


def candidate_set(j_prev: int, grid: PositionGrid, params: MobilityParams) -> tuple[int, ...]:
    """Positions reachable from j_prev within one snapshot, j_prev included."""
    return _window(grid, j_prev, _steps_within(params.d_max_mm, grid.step_mm))


def reachable_set(j_start: int, hops: int, grid: PositionGrid, params: MobilityParams) -> tuple[int, ...]:
    """Positions within hops*d_max of j_start (Chebyshev), clipped to the grid.

    This is the relaxed multi-snapshot reach used by the lower-bound
    subproblems; it contains (and for hops=1 equals) the one-snapshot
    candidate set.
    """
    if hops < 0:
        raise ParameterError("hops must be nonnegative")
    if hops == 0:
        return (j_start,)
    return _window(grid, j_start, _steps_within(hops * params.d_max_mm, grid.step_mm))


def trajectory_violations(traj: Trajectory, grid: PositionGrid, params: MobilityParams) -> list[str]:
    """Re-check every trajectory constraint directly; empty list means feasible.

    Checks index validity, the per-snapshot displacement limit for every
    consecutive configuration pair (initial included), and the pairwise
    spacing floor in every snapshot. Kept independent of the search code so
    it can audit solver output.
    """
    problems: list[str] = []
    configs = [traj.initial, *traj.selections]
    for n, config in enumerate(configs):
        for m, j in enumerate(config):
            if not 0 <= j < grid.n_positions:
                problems.append(f"snapshot {n}: element {m} selects invalid index {j}")
    if problems:
        return problems
    for n in range(1, len(configs)):
        for m, (j0, j1) in enumerate(zip(configs[n - 1], configs[n])):
            if not mobility_feasible(j0, j1, grid, params):
                problems.append(f"snapshot {n}: element {m} moves farther than d_max")
    for n, config in enumerate(configs):
        if not min_distance_feasible(config, grid, params):
            problems.append(f"snapshot {n}: elements closer than d_min")
    return problems


def trajectory_feasible(traj: Trajectory, grid: PositionGrid, params: MobilityParams) -> bool:
    return not trajectory_violations(traj, grid, params)


def random_initial_positions(
    grid: PositionGrid,
    params: MobilityParams,
    n_elements: int,
    rng: np.random.Generator,
    max_attempts: int = 10_000,
) -> tuple[int, ...]:
    """Draw a uniformly random spacing-feasible initial placement."""
    if n_elements > grid.n_positions:
        raise ParameterError("more elements than candidate positions")
    for _ in range(max_attempts):
        picks = tuple(int(j) for j in rng.choice(grid.n_positions, size=n_elements, replace=False))
        if min_distance_feasible(picks, grid, params):
            return picks
    raise ParameterError(
        f"no spacing-feasible placement of {n_elements} elements found in {max_attempts} draws"
    )


def random_trajectory(
    grid: PositionGrid,
    params: MobilityParams,
    initial: tuple[int, ...],
    n_snapshots: int,
    rng: np.random.Generator,
    max_attempts: int = 1_000,
) -> Trajectory:
    """Sample a feasible trajectory by sequential rejection.

    Each element draws uniformly from its one-snapshot candidate set; a draw
    violating the spacing floor against the elements already placed in the
    snapshot is redrawn. If an element exhausts its attempts the whole
    snapshot is resampled, and persistent failure raises.
    """
    if not min_distance_feasible(initial, grid, params):
        raise ParameterError("initial placement violates the spacing floor")
    snapshots: list[tuple[int, ...]] = []
    prev = initial
    for n in range(n_snapshots):
        for _ in range(max_attempts):
            placed: list[int] = []
            ok = True
            for m in range(len(initial)):
                options = candidate_set(prev[m], grid, params)
                pick = None
                for _ in range(max_attempts):
                    j = int(options[rng.integers(len(options))])
                    if min_distance_feasible(tuple(placed) + (j,), grid, params):
                        pick = j
                        break
                if pick is None:
                    ok = False
                    break
                placed.append(pick)
            if ok:
                break
        else:
            raise ParameterError(f"could not sample a feasible configuration for snapshot {n + 1}")
        snapshots.append(tuple(placed))
        prev = snapshots[-1]
    return Trajectory(initial=tuple(initial), selections=tuple(snapshots))


def grid_to_json(grid: PositionGrid) -> dict:
    return {
        "step_mm": grid.step_mm,
        "side_mm": grid.side_mm,
        "wavelength_mm": grid.wavelength_mm,
    }


def grid_from_json(data: dict) -> PositionGrid:
    side = float(data["side_mm"])
    wavelength = float(data["wavelength_mm"])
    return build_grid(side / wavelength, float(data["step_mm"]), wavelength)


def trajectory_to_json(traj: Trajectory) -> dict:
    """Serialize with 1-based position indices."""
    return {
        "initial": [j + 1 for j in traj.initial],
        "selections": [[j + 1 for j in row] for row in traj.selections],
    }


def trajectory_from_json(data: dict) -> Trajectory:
    return Trajectory(
        initial=tuple(int(j) - 1 for j in data["initial"]),
        selections=tuple(tuple(int(j) - 1 for j in row) for row in data["selections"]),
    )
