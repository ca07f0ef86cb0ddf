"""Frozen problem instances: everything the optimizer consumes."""

from __future__ import annotations

from dataclasses import dataclass

from .beampattern import AngularGrid
from .channel import EffectiveChannel
from .grid import MobilityParams, ParameterError, PositionGrid, min_distance_feasible


@dataclass(frozen=True)
class InstanceData:
    """One fully specified joint trajectory/beamforming design problem.

    The channels, the angular grid with the desired-beam description, the
    initial antenna placement and the budgets are all fixed; solvers only
    choose the trajectory and the covariances.
    """

    grid: PositionGrid
    mobility: MobilityParams
    channels: tuple[EffectiveChannel, ...]
    angles: AngularGrid
    initial: tuple[int, ...]
    n_snapshots: int
    power_budget: float
    symbol_power: float = 1.0

    def __post_init__(self) -> None:
        if self.n_snapshots < 1:
            raise ParameterError("need at least one snapshot")
        if self.power_budget <= 0 or self.symbol_power <= 0:
            raise ParameterError("power budget and symbol power must be positive")
        if not self.initial:
            raise ParameterError("need at least one element")
        j = self.grid.n_positions
        if any(not 0 <= idx < j for idx in self.initial):
            raise ParameterError("initial placement indexes beyond the grid")
        if not min_distance_feasible(self.initial, self.grid, self.mobility):
            raise ParameterError("initial placement violates the spacing floor")
        for ch in self.channels:
            if ch.h_hat.shape != (j,):
                raise ParameterError(
                    f"channel of user {ch.user_id} has {ch.h_hat.shape[0]} entries, grid has {j}"
                )
        ids = [ch.user_id for ch in self.channels]
        if ids != list(range(len(ids))):
            raise ParameterError("channels must be ordered with user_id 0..K-1")

    @property
    def n_elements(self) -> int:
        return len(self.initial)

    @property
    def n_users(self) -> int:
        return len(self.channels)

    @property
    def n_layers(self) -> int:
        """Depth of the selection search: one layer per (snapshot, element)."""
        return self.n_snapshots * self.n_elements
