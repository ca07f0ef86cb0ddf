"""Beampattern math: ideal pattern, realized beam gain, mismatch and SINR.

Everything here is pure numpy evaluation of closed-form expressions. The
optimizer builds conic programs elsewhere; this module is what the tests and
the verification layer trust, so it deliberately shares no code with the
solver path.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .channel import EffectiveChannel, AngleOfDeparture, steering_phases, stacked_steering
from .grid import MobilityParams, ParameterError, PositionGrid, Trajectory, trajectory_violations

# Beam gains this far below zero are treated as numerical noise and clamped.
GAIN_CLAMP = 1e-9
_BOUNDARY_TOL = 1e-12


class InternalConsistencyError(RuntimeError):
    """A quantity violated a bound that only numerical corruption can break."""


@dataclass(frozen=True)
class AngularGrid:
    """Discretized angular domain plus the desired-beam description.

    ``alphas``/``betas`` hold the elevation/azimuth of each of the I grid
    points; ``desired_center`` and ``widths`` describe the angular rectangle
    the ideal pattern illuminates.
    """

    alphas: np.ndarray
    betas: np.ndarray
    desired_center: tuple[float, float]
    widths: tuple[float, float]

    def __post_init__(self) -> None:
        if self.alphas.shape != self.betas.shape or self.alphas.ndim != 1 or self.alphas.size == 0:
            raise ParameterError("angular grid needs matching nonempty alpha/beta vectors")
        if self.widths[0] < 0 or self.widths[1] < 0:
            raise ParameterError("beam widths must be nonnegative")

    @property
    def n_points(self) -> int:
        return self.alphas.size

    @classmethod
    def azimuth_cut(
        cls,
        desired_center: tuple[float, float] = (0.0, 0.0),
        widths: tuple[float, float] = (0.0, np.pi / 16),
        n_points: int = 181,
        azimuth_span: tuple[float, float] = (-np.pi / 2, np.pi / 2),
    ) -> "AngularGrid":
        """1-D azimuth sweep with elevation pinned to the desired elevation."""
        betas = np.linspace(azimuth_span[0], azimuth_span[1], n_points)
        alphas = np.full(n_points, desired_center[0])
        return cls(alphas=alphas, betas=betas, desired_center=desired_center, widths=widths)

    @classmethod
    def product(
        cls,
        desired_center: tuple[float, float] = (0.0, 0.0),
        widths: tuple[float, float] = (np.pi / 8, np.pi / 8),
        n_alpha: int = 19,
        n_beta: int = 19,
        elevation_span: tuple[float, float] = (-np.pi / 2, np.pi / 2),
        azimuth_span: tuple[float, float] = (-np.pi / 2, np.pi / 2),
    ) -> "AngularGrid":
        """2-D tensor grid, uniform in each angle."""
        al = np.linspace(elevation_span[0], elevation_span[1], n_alpha)
        be = np.linspace(azimuth_span[0], azimuth_span[1], n_beta)
        aa, bb = np.meshgrid(al, be, indexing="ij")
        return cls(alphas=aa.ravel(), betas=bb.ravel(), desired_center=desired_center, widths=widths)


def ideal_pattern(angles: AngularGrid) -> np.ndarray:
    """Binary desired pattern: 1 inside the angular rectangle, boundary inclusive."""
    a0, b0 = angles.desired_center
    half_psi, half_phi = angles.widths[0] / 2.0, angles.widths[1] / 2.0
    in_alpha = np.abs(angles.alphas - a0) <= half_psi + _BOUNDARY_TOL
    in_beta = np.abs(angles.betas - b0) <= half_phi + _BOUNDARY_TOL
    return (in_alpha & in_beta).astype(float)


@dataclass(frozen=True)
class CovarianceDesign:
    """Transmit covariances for all snapshots plus the pattern scale.

    ``comm_cov`` has shape (K, N, M, M): one Hermitian PSD matrix per user
    and snapshot. ``radar_cov`` is the joint Hermitian PSD covariance of the
    sensing signal across the whole virtual array (NM x NM). ``gain_scale``
    is the scale applied to the ideal pattern when measuring mismatch.
    """

    comm_cov: np.ndarray
    radar_cov: np.ndarray
    gain_scale: float
    symbol_power: float = 1.0

    def __post_init__(self) -> None:
        if self.comm_cov.ndim != 4 or self.comm_cov.shape[2] != self.comm_cov.shape[3]:
            raise ParameterError("comm_cov must have shape (K, N, M, M)")
        n, m = self.comm_cov.shape[1], self.comm_cov.shape[2]
        if self.radar_cov.shape != (n * m, n * m):
            raise ParameterError("radar_cov must be (N*M, N*M)")
        if self.gain_scale < 0:
            raise ParameterError("gain_scale must be nonnegative")

    @property
    def n_users(self) -> int:
        return self.comm_cov.shape[0]

    @property
    def n_snapshots(self) -> int:
        return self.comm_cov.shape[1]

    @property
    def n_elements(self) -> int:
        return self.comm_cov.shape[2]

    def radar_block(self, snapshot: int) -> np.ndarray:
        """Principal submatrix of the radar covariance for one snapshot (1-based)."""
        m = self.n_elements
        lo = (snapshot - 1) * m
        return self.radar_cov[lo : lo + m, lo : lo + m]


def zero_design(n_users: int, n_snapshots: int, n_elements: int, symbol_power: float = 1.0) -> CovarianceDesign:
    return CovarianceDesign(
        comm_cov=np.zeros((n_users, n_snapshots, n_elements, n_elements), dtype=complex),
        radar_cov=np.zeros((n_snapshots * n_elements, n_snapshots * n_elements), dtype=complex),
        gain_scale=0.0,
        symbol_power=symbol_power,
    )


def design_violations(
    design: CovarianceDesign,
    hermitian_tol: float = 1e-9,
    psd_tol: float = 1e-7,
) -> list[str]:
    """Hermitian-within-tolerance and numerically-PSD checks for all matrices."""
    problems: list[str] = []

    def check(mat: np.ndarray, label: str) -> None:
        herm = np.max(np.abs(mat - mat.conj().T)) if mat.size else 0.0
        if herm > hermitian_tol:
            problems.append(f"{label}: Hermitian deviation {herm:.3e}")
        if mat.size:
            min_eig = float(np.linalg.eigvalsh((mat + mat.conj().T) / 2.0)[0])
            if min_eig < -psd_tol:
                problems.append(f"{label}: min eigenvalue {min_eig:.3e}")

    for k in range(design.n_users):
        for n in range(design.n_snapshots):
            check(design.comm_cov[k, n], f"comm_cov[user {k}, snapshot {n + 1}]")
    check(design.radar_cov, "radar_cov")
    return problems


def beam_gains(
    design: CovarianceDesign,
    trajectory: Trajectory,
    grid: PositionGrid,
    angles: AngularGrid,
) -> np.ndarray:
    """Realized beam gain at every angular grid point, shape (I,).

    The gain at an angle is the symbol power times the per-snapshot
    communication quadratic forms plus the virtual-array radar quadratic
    form. Tiny negative values are clamped; anything below the clamp raises.
    """
    m = design.n_elements
    n_snap = design.n_snapshots
    if trajectory.n_snapshots != n_snap or trajectory.n_elements != m:
        raise ParameterError("design and trajectory dimensions disagree")
    if grid.n_positions <= max(max(row) for row in [trajectory.initial, *trajectory.selections]):
        raise ParameterError("trajectory indexes beyond the grid")

    phases = steering_phases(grid, angles.alphas, angles.betas)  # (I, J)
    steer = np.exp(1j * phases)
    sel = np.concatenate([np.asarray(trajectory.positions(n), dtype=int) for n in range(1, n_snap + 1)])
    s_virtual = steer[:, sel]  # (I, NM)

    gains = np.einsum("ip,pq,iq->i", s_virtual.conj(), design.radar_cov, s_virtual).real
    for n in range(n_snap):
        block = s_virtual[:, n * m : (n + 1) * m]
        for k in range(design.n_users):
            gains = gains + design.symbol_power * np.einsum(
                "ip,pq,iq->i", block.conj(), design.comm_cov[k, n], block
            ).real

    low = gains.min(initial=0.0)
    if low < -GAIN_CLAMP:
        raise InternalConsistencyError(f"beam gain {low:.3e} below the numerical clamp")
    return np.maximum(gains, 0.0)


def beam_gain(
    design: CovarianceDesign,
    trajectory: Trajectory,
    grid: PositionGrid,
    aod: AngleOfDeparture,
) -> float:
    """Realized beam gain toward a single departure angle."""
    single = AngularGrid(
        alphas=np.array([aod.elevation_rad]),
        betas=np.array([aod.azimuth_rad]),
        desired_center=(aod.elevation_rad, aod.azimuth_rad),
        widths=(0.0, 0.0),
    )
    return float(beam_gains(design, trajectory, grid, single)[0])


def mismatch(
    design: CovarianceDesign,
    trajectory: Trajectory,
    grid: PositionGrid,
    angles: AngularGrid,
) -> float:
    """Sum of absolute deviations between the scaled ideal and realized patterns."""
    gains = beam_gains(design, trajectory, grid, angles)
    return float(np.abs(design.gain_scale * ideal_pattern(angles) - gains).sum())


def sinr(
    design: CovarianceDesign,
    trajectory: Trajectory,
    channel: EffectiveChannel,
    snapshot: int,
) -> float:
    """Received SINR of one user in one snapshot (1-based).

    Only the channel entries at the selected positions matter; the selection
    acts as pure indexing, no dense selection matrices are formed.
    """
    h_t = channel.h_hat[np.asarray(trajectory.positions(snapshot), dtype=int)]
    k_self = channel.user_id
    signal = float(np.real(h_t.conj() @ design.comm_cov[k_self, snapshot - 1] @ h_t))
    interference = 0.0
    for k in range(design.n_users):
        if k != k_self:
            interference += float(np.real(h_t.conj() @ design.comm_cov[k, snapshot - 1] @ h_t))
    interference += float(np.real(h_t.conj() @ design.radar_block(snapshot) @ h_t))
    return max(signal, 0.0) / (interference + channel.noise_power)


def total_power(design: CovarianceDesign) -> float:
    comm = float(np.real(np.einsum("knii->", design.comm_cov))) if design.comm_cov.size else 0.0
    return design.symbol_power * comm + float(np.real(np.trace(design.radar_cov)))


@dataclass
class VerificationReport:
    """Outcome of the solver-independent validity audit of a returned design."""

    ok: bool
    failures: list[str] = field(default_factory=list)
    sinr_margin: float = float("inf")
    power_used: float = 0.0
    mismatch_value: float = 0.0


def verify_solution(
    grid: PositionGrid,
    params: MobilityParams,
    angles: AngularGrid,
    channels: tuple[EffectiveChannel, ...],
    trajectory: Trajectory,
    design: CovarianceDesign,
    power_budget: float,
    reported_objective: float | None = None,
    *,
    sinr_slack: float = 1e-6,
    power_slack: float = 1e-7,
    objective_tol: float = 1e-6,
) -> VerificationReport:
    """Re-verify a returned solution without trusting the solver.

    Checks trajectory feasibility, the per-user per-snapshot SINR targets,
    the power budget, Hermitian/PSD structure, and (when given) that the
    reported objective matches the recomputed mismatch.
    """
    failures = list(trajectory_violations(trajectory, grid, params))
    failures += design_violations(design)

    sinr_margin = float("inf")
    for ch in channels:
        for n in range(1, trajectory.n_snapshots + 1):
            ratio = sinr(design, trajectory, ch, n)
            sinr_margin = min(sinr_margin, ratio / ch.sinr_target)
            if ratio < ch.sinr_target * (1.0 - sinr_slack):
                failures.append(
                    f"user {ch.user_id} snapshot {n}: SINR {ratio:.6g} below target {ch.sinr_target:.6g}"
                )

    used = total_power(design)
    if used > power_budget * (1.0 + power_slack):
        failures.append(f"power {used:.6g} exceeds budget {power_budget:.6g}")

    value = mismatch(design, trajectory, grid, angles)
    if reported_objective is not None and abs(value - reported_objective) > objective_tol:
        failures.append(
            f"recomputed mismatch {value:.9g} differs from reported objective {reported_objective:.9g}"
        )

    return VerificationReport(
        ok=not failures,
        failures=failures,
        sinr_margin=sinr_margin,
        power_used=used,
        mismatch_value=value,
    )


def write_beampattern_csv(
    path: str | Path,
    design: CovarianceDesign,
    trajectory: Trajectory,
    grid: PositionGrid,
    angles: AngularGrid,
) -> None:
    """Export the realized pattern: (alpha_rad, beta_rad, ideal, gain, normalized_gain).

    The normalized column divides by the pattern scale; it is blank when the
    scale is numerically zero.
    """
    gains = beam_gains(design, trajectory, grid, angles)
    ideal = ideal_pattern(angles)
    scale = design.gain_scale
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["alpha_rad", "beta_rad", "ideal", "gain", "normalized_gain"])
        for a, b, p, g in zip(angles.alphas, angles.betas, ideal, gains):
            norm = g / scale if scale > 1e-12 else ""
            writer.writerow([f"{a:.10g}", f"{b:.10g}", int(p), f"{g:.12g}", norm if norm == "" else f"{norm:.12g}"])
