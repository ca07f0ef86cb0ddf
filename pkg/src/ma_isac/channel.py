"""User channels over the candidate lattice and virtual-aperture steering.

The effective channel of a user collects its coefficient to every candidate
position, so selecting antenna positions reduces to indexing. Steering
vectors are likewise evaluated over the whole lattice ("virtual aperture")
and restricted to a trajectory on demand.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import ParameterError, PositionGrid, Trajectory

SPEED_OF_LIGHT_M_PER_S = 299_792_458.0


@dataclass(frozen=True)
class AngleOfDeparture:
    """Elevation/azimuth pair, each in (-pi/2, pi/2]."""

    elevation_rad: float
    azimuth_rad: float

    def __post_init__(self) -> None:
        for name, value in (("elevation", self.elevation_rad), ("azimuth", self.azimuth_rad)):
            if not (-np.pi / 2 < value <= np.pi / 2 + 1e-12):
                raise ParameterError(f"{name} {value} rad outside (-pi/2, pi/2]")


@dataclass(frozen=True)
class ChannelParams:
    """Large-scale and small-scale fading model parameters."""

    carrier_hz: float = 28e9
    path_loss_exponent: float = 2.2
    rician_factor: float = 4.0
    ref_loss: float | None = None  # None -> free-space loss at ref_distance_m
    ref_distance_m: float = 1.0
    distance_range_m: tuple[float, float] = (10.0, 50.0)

    def __post_init__(self) -> None:
        if self.carrier_hz <= 0 or self.path_loss_exponent <= 0:
            raise ParameterError("carrier frequency and path-loss exponent must be positive")
        if self.rician_factor < 0:
            raise ParameterError("Rician factor must be nonnegative")
        lo, hi = self.distance_range_m
        if not 0 < lo <= hi:
            raise ParameterError("invalid user distance range")

    @property
    def wavelength_mm(self) -> float:
        return SPEED_OF_LIGHT_M_PER_S / self.carrier_hz * 1e3

    @property
    def ref_loss_value(self) -> float:
        if self.ref_loss is not None:
            return self.ref_loss
        wavelength_m = self.wavelength_mm * 1e-3
        return (wavelength_m / (4.0 * np.pi * self.ref_distance_m)) ** 2


@dataclass(frozen=True)
class EffectiveChannel:
    """Channel from one movable element to a user, for every lattice position."""

    user_id: int
    h_hat: np.ndarray  # (J,) complex
    noise_power: float  # linear W
    sinr_target: float  # linear ratio

    def __post_init__(self) -> None:
        if not np.all(np.isfinite(self.h_hat)):
            raise ParameterError("channel entries must be finite")
        if self.noise_power <= 0 or self.sinr_target <= 0:
            raise ParameterError("noise power and SINR target must be positive")


def steering_phases(grid: PositionGrid, elevation_rad: np.ndarray, azimuth_rad: np.ndarray) -> np.ndarray:
    """Phase of each lattice position toward each angle pair, shape (I, J).

    The phase of position p relative to the reference corner p_0 is
    (2*pi/lambda) * ((x - x0)*cos(el)*sin(az) + (y - y0)*sin(el)).
    """
    xy = grid.positions_mm
    dx = (xy[:, 0] - xy[0, 0])[None, :]
    dy = (xy[:, 1] - xy[0, 1])[None, :]
    el = np.atleast_1d(np.asarray(elevation_rad, dtype=float))[:, None]
    az = np.atleast_1d(np.asarray(azimuth_rad, dtype=float))[:, None]
    return 2.0 * np.pi / grid.wavelength_mm * (dx * np.cos(el) * np.sin(az) + dy * np.sin(el))


def virtual_steering(grid: PositionGrid, aod: AngleOfDeparture) -> np.ndarray:
    """Unit-modulus steering vector over all J candidate positions."""
    phases = steering_phases(grid, np.array([aod.elevation_rad]), np.array([aod.azimuth_rad]))
    return np.exp(1j * phases[0])


def restrict_steering(a: np.ndarray, trajectory: Trajectory, snapshot: int) -> np.ndarray:
    """Entries of a virtual-aperture vector at the positions held in a snapshot.

    Snapshot numbering is 1-based; snapshot 0 addresses the initial placement.
    """
    return a[np.asarray(trajectory.positions(snapshot), dtype=int)]


def stacked_steering(a: np.ndarray, trajectory: Trajectory) -> np.ndarray:
    """Concatenation of per-snapshot restrictions: the virtual-array steering."""
    return np.concatenate([restrict_steering(a, trajectory, n) for n in range(1, trajectory.n_snapshots + 1)])


def sample_channel(
    grid: PositionGrid,
    params: ChannelParams,
    rng: np.random.Generator | int,
    user_id: int,
    *,
    noise_power: float = 1e-11,
    sinr_target: float = 10.0,
) -> EffectiveChannel:
    """Draw one Rician effective channel.

    The line-of-sight component is the steering vector toward a random
    departure angle (azimuth uniform on [-pi/2, pi/2], elevation uniform on
    [-pi/4, pi/4]); the diffuse component has i.i.d. standard circularly
    symmetric Gaussian entries. Draw order is fixed (distance, elevation,
    azimuth, diffuse part), so a given seed always yields the same channel.
    """
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    j = grid.n_positions
    distance = rng.uniform(*params.distance_range_m)
    elevation = rng.uniform(-np.pi / 4, np.pi / 4)
    azimuth = rng.uniform(-np.pi / 2, np.pi / 2)
    h_los = virtual_steering(grid, AngleOfDeparture(elevation, azimuth))
    h_nlos = (rng.standard_normal(j) + 1j * rng.standard_normal(j)) / np.sqrt(2.0)
    kappa = params.rician_factor
    scale = np.sqrt(params.ref_loss_value * distance ** (-params.path_loss_exponent))
    h = scale * (np.sqrt(kappa / (1.0 + kappa)) * h_los + np.sqrt(1.0 / (1.0 + kappa)) * h_nlos)
    return EffectiveChannel(user_id=user_id, h_hat=h, noise_power=noise_power, sinr_target=sinr_target)


def channel_to_json(channel: EffectiveChannel) -> dict:
    return {
        "user_id": channel.user_id,
        "noise_power": channel.noise_power,
        "sinr_target": channel.sinr_target,
        "h_hat": [[float(v.real), float(v.imag)] for v in channel.h_hat],
    }


def channel_from_json(data: dict) -> EffectiveChannel:
    h = np.array([complex(re, im) for re, im in data["h_hat"]])
    return EffectiveChannel(
        user_id=int(data["user_id"]),
        h_hat=h,
        noise_power=float(data["noise_power"]),
        sinr_target=float(data["sinr_target"]),
    )
