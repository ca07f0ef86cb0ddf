"""Convex design subproblems.

Two families of programs, both expressed in the conic canonical form:

* fixed-trajectory problems - antenna positions given, optimize the per-user
  covariances, the joint radar covariance and the pattern scale (used for
  upper bounds, baselines and leaf evaluations);
* support-relaxed problems - the position selections are replaced by
  lattice-sized covariance surrogates whose rows/columns vanish outside the
  set of positions reachable from a (possibly partial) trajectory prefix
  (used for lower bounds).

The absolute-deviation objective is handled with one epigraph scalar per
angular grid point and two linear inequalities each. SINR constraints are
normalized by the user noise power so all rows are O(1)-scaled.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .beampattern import AngularGrid, CovarianceDesign, ideal_pattern
from .channel import steering_phases
from .conic import (
    OPTIMAL,
    ConicProblem,
    ConicSolution,
    LinearExpr,
    MatrixBlock,
    solve_conic,
)
from .grid import ParameterError, Trajectory, reachable_set, trajectory_feasible, trajectory_violations
from .instance import InstanceData


class InfeasibleTrajectoryError(ValueError):
    """A fixed-trajectory problem was requested for an infeasible trajectory."""


class EmptySupportError(ValueError):
    """A support set has an empty snapshot."""


RADAR_BLOCK = "radar"
GAIN_SCALE = "gain_scale"


def comm_block(user: int, snapshot: int) -> str:
    """Block name of a user's covariance in a 1-based snapshot."""
    return f"comm_u{user}_s{snapshot}"


@dataclass(frozen=True)
class SupportSet:
    """Admissible position indices per snapshot for the relaxed problems."""

    per_snapshot: tuple[tuple[int, ...], ...]

    def __post_init__(self) -> None:
        for n, idx in enumerate(self.per_snapshot):
            if not idx:
                raise EmptySupportError(f"snapshot {n + 1} has empty support")
            if list(idx) != sorted(set(idx)):
                raise ParameterError(f"snapshot {n + 1} support must be sorted and unique")

    @property
    def n_snapshots(self) -> int:
        return len(self.per_snapshot)

    @property
    def union(self) -> tuple[int, ...]:
        out: set[int] = set()
        for idx in self.per_snapshot:
            out.update(idx)
        return tuple(sorted(out))

    def sizes(self) -> tuple[int, ...]:
        return tuple(len(idx) for idx in self.per_snapshot)

    @property
    def total_size(self) -> int:
        return sum(self.sizes())


def full_support(n_snapshots: int, n_positions: int) -> SupportSet:
    all_idx = tuple(range(n_positions))
    return SupportSet(per_snapshot=tuple(all_idx for _ in range(n_snapshots)))


def determined_snapshots(prefix_len: int, n_elements: int) -> tuple[int, ...]:
    """Number of snapshots each element has fixed, given a prefix length.

    Prefix entries fill layer order: snapshot 1 elements 1..M, then snapshot
    2, and so on.
    """
    full, partial = divmod(prefix_len, n_elements)
    return tuple(full + 1 if m < partial else full for m in range(n_elements))


def prefix_position(instance: InstanceData, prefix: tuple[int, ...], snapshot: int, element: int) -> int:
    """Position of an element at a determined snapshot (0 = initial placement)."""
    if snapshot == 0:
        return instance.initial[element]
    return prefix[(snapshot - 1) * instance.n_elements + element]


def node_support(instance: InstanceData, prefix: tuple[int, ...]) -> SupportSet:
    """Reachable-position supports around a partial trajectory prefix.

    Determined (snapshot, element) pairs contribute their selected index;
    undetermined ones contribute every position within h hops of the
    element's last determined position, where h counts the snapshots since
    that anchor. The empty prefix reproduces the root relaxation anchored at
    the initial placement.
    """
    m_count, n_count = instance.n_elements, instance.n_snapshots
    if len(prefix) > m_count * n_count:
        raise ParameterError("prefix longer than the selection tree depth")
    fixed = determined_snapshots(len(prefix), m_count)
    per_snapshot: list[tuple[int, ...]] = []
    for n in range(1, n_count + 1):
        idx: set[int] = set()
        for m in range(m_count):
            if n <= fixed[m]:
                idx.add(prefix_position(instance, prefix, n, m))
            else:
                anchor_snapshot = fixed[m]
                anchor = prefix_position(instance, prefix, anchor_snapshot, m)
                idx.update(reachable_set(anchor, n - anchor_snapshot, instance.grid, instance.mobility))
        per_snapshot.append(tuple(sorted(idx)))
    return SupportSet(per_snapshot=tuple(per_snapshot))


@dataclass(frozen=True)
class SupportMapping:
    """Bijection between support indices and compact solver dimensions."""

    support: SupportSet
    snapshot_offsets: tuple[int, ...]

    def local_index(self, snapshot: int, j: int) -> int:
        """Compact stacked coordinate of lattice index j in a 1-based snapshot."""
        idx = self.support.per_snapshot[snapshot - 1]
        pos = idx.index(j)
        return self.snapshot_offsets[snapshot - 1] + pos

    def restrict_snapshot(self, mat: np.ndarray, snapshot: int) -> np.ndarray:
        idx = np.asarray(self.support.per_snapshot[snapshot - 1], dtype=int)
        return mat[np.ix_(idx, idx)]

    def embed_snapshot(self, small: np.ndarray, snapshot: int, n_positions: int) -> np.ndarray:
        idx = np.asarray(self.support.per_snapshot[snapshot - 1], dtype=int)
        out = np.zeros((n_positions, n_positions), dtype=small.dtype)
        out[np.ix_(idx, idx)] = small
        return out

    def stacked_indices(self, n_positions: int) -> np.ndarray:
        """Coordinates of the compact stacked space inside the N*J stacked space."""
        parts = [
            np.asarray(idx, dtype=int) + n * n_positions
            for n, idx in enumerate(self.support.per_snapshot)
        ]
        return np.concatenate(parts)

    def restrict_stacked(self, mat: np.ndarray, n_positions: int) -> np.ndarray:
        idx = self.stacked_indices(n_positions)
        return mat[np.ix_(idx, idx)]

    def embed_stacked(self, small: np.ndarray, n_positions: int) -> np.ndarray:
        idx = self.stacked_indices(n_positions)
        n_total = len(self.support.per_snapshot) * n_positions
        out = np.zeros((n_total, n_total), dtype=small.dtype)
        out[np.ix_(idx, idx)] = small
        return out


def compress_support(support: SupportSet) -> SupportMapping:
    sizes = support.sizes()
    offsets = tuple(int(v) for v in np.concatenate([[0], np.cumsum(sizes)[:-1]]))
    return SupportMapping(support=support, snapshot_offsets=offsets)


def _steering_matrix(instance: InstanceData) -> np.ndarray:
    """Unit-modulus steering over (angular grid point, lattice position)."""
    return np.exp(1j * steering_phases(instance.grid, instance.angles.alphas, instance.angles.betas))


def _outer(vec: np.ndarray) -> np.ndarray:
    return np.outer(vec, vec.conj())


def _add_epigraph(
    problem: ConicProblem,
    gain_terms: list[tuple[str, np.ndarray]],
    ideal_value: float,
    index: int,
) -> None:
    """dev_i >= |gain_scale * ideal_i - realized_i| as two linear rows."""
    dev = f"dev_{index}"
    above = LinearExpr(scalar_coeffs={dev: 1.0, GAIN_SCALE: -ideal_value})
    below = LinearExpr(scalar_coeffs={dev: 1.0, GAIN_SCALE: ideal_value})
    for name, coeff in gain_terms:
        above.add_matrix(name, coeff)
        below.add_matrix(name, -coeff)
    problem.ineq.append(above)
    problem.ineq.append(below)


def build_fixed_trajectory_problem(instance: InstanceData, trajectory: Trajectory) -> ConicProblem:
    """Covariance design for a fully determined feasible trajectory.

    Variables: one M x M Hermitian PSD block per (user, snapshot), the
    NM x NM joint radar block, the nonnegative pattern scale and the
    per-angle deviation scalars. The rank-one structure of the user
    covariances is not enforced; it is recovered (and audited) afterwards.
    """
    problems = trajectory_violations(trajectory, instance.grid, instance.mobility)
    if problems:
        raise InfeasibleTrajectoryError("; ".join(problems))
    if trajectory.n_snapshots != instance.n_snapshots or trajectory.n_elements != instance.n_elements:
        raise ParameterError("trajectory dimensions disagree with the instance")

    m_count, n_count, k_count = instance.n_elements, instance.n_snapshots, instance.n_users
    steer = _steering_matrix(instance)
    sel = [np.asarray(trajectory.positions(n), dtype=int) for n in range(1, n_count + 1)]
    virtual = np.concatenate(sel)
    ideal = ideal_pattern(instance.angles)

    problem = ConicProblem()
    for k in range(k_count):
        for n in range(1, n_count + 1):
            problem.blocks.append(MatrixBlock(comm_block(k, n), m_count))
    problem.blocks.append(MatrixBlock(RADAR_BLOCK, n_count * m_count))
    problem.scalars.append(GAIN_SCALE)
    problem.scalar_lower[GAIN_SCALE] = 0.0
    for i in range(instance.angles.n_points):
        name = f"dev_{i}"
        problem.scalars.append(name)
        problem.objective.add_scalar(name, 1.0)

    sigma_s2 = instance.symbol_power
    for i in range(instance.angles.n_points):
        terms: list[tuple[str, np.ndarray]] = []
        for n in range(1, n_count + 1):
            a_t = steer[i, sel[n - 1]]
            coeff = sigma_s2 * _outer(a_t)
            for k in range(k_count):
                terms.append((comm_block(k, n), coeff))
        terms.append((RADAR_BLOCK, _outer(steer[i, virtual])))
        _add_epigraph(problem, terms, float(ideal[i]), i)

    for ch in instance.channels:
        gamma = ch.sinr_target
        inv_noise = 1.0 / ch.noise_power
        for n in range(1, n_count + 1):
            h_t = ch.h_hat[sel[n - 1]]
            h_outer = _outer(h_t) * inv_noise
            row = LinearExpr(constant=-gamma)
            row.add_matrix(comm_block(ch.user_id, n), h_outer)
            for k in range(k_count):
                if k != ch.user_id:
                    row.add_matrix(comm_block(k, n), -gamma * h_outer)
            radar_coeff = np.zeros((n_count * m_count, n_count * m_count), dtype=complex)
            lo = (n - 1) * m_count
            radar_coeff[lo : lo + m_count, lo : lo + m_count] = -gamma * h_outer
            row.add_matrix(RADAR_BLOCK, radar_coeff)
            problem.ineq.append(row)

    power = LinearExpr(constant=instance.power_budget)
    for k in range(k_count):
        for n in range(1, n_count + 1):
            power.add_matrix(comm_block(k, n), -sigma_s2 * np.eye(m_count, dtype=complex))
    power.add_matrix(RADAR_BLOCK, -np.eye(n_count * m_count, dtype=complex))
    problem.ineq.append(power)
    return problem


def _check_support_prefix(instance: InstanceData, support: SupportSet, prefix: tuple[int, ...]) -> None:
    if support.n_snapshots != instance.n_snapshots:
        raise ParameterError("support snapshot count disagrees with the instance")
    fixed = determined_snapshots(len(prefix), instance.n_elements)
    for m in range(instance.n_elements):
        for n in range(1, fixed[m] + 1):
            j = prefix_position(instance, prefix, n, m)
            if j not in support.per_snapshot[n - 1]:
                raise ParameterError(
                    f"support omits the determined position of element {m} in snapshot {n}"
                )


def build_relaxed_problem(
    instance: InstanceData,
    support: SupportSet,
    prefix: tuple[int, ...] = (),
    *,
    compressed: bool = True,
) -> ConicProblem:
    """Support-restricted convex relaxation around a trajectory prefix.

    The per-user covariances become lattice-sized surrogates restricted to
    the snapshot support; the radar covariance becomes a stacked surrogate
    over all snapshot supports. Selection variables disappear entirely: the
    prefix enters through singleton supports. With ``compressed`` the blocks
    are built directly at support size; otherwise they stay lattice-sized
    with explicit zero constraints on out-of-support diagonal entries
    (equivalent under semidefiniteness).
    """
    _check_support_prefix(instance, support, prefix)
    m_count, n_count, k_count = instance.n_elements, instance.n_snapshots, instance.n_users
    j_count = instance.grid.n_positions
    steer = _steering_matrix(instance)
    ideal = ideal_pattern(instance.angles)
    mapping = compress_support(support)
    sizes = support.sizes()
    total = support.total_size
    sigma_s2 = instance.symbol_power

    if compressed:
        comm_dim = {n: sizes[n - 1] for n in range(1, n_count + 1)}
        radar_dim = total
    else:
        comm_dim = {n: j_count for n in range(1, n_count + 1)}
        radar_dim = n_count * j_count

    problem = ConicProblem()
    for k in range(k_count):
        for n in range(1, n_count + 1):
            problem.blocks.append(MatrixBlock(comm_block(k, n), comm_dim[n]))
    problem.blocks.append(MatrixBlock(RADAR_BLOCK, radar_dim))
    problem.scalars.append(GAIN_SCALE)
    problem.scalar_lower[GAIN_SCALE] = 0.0
    for i in range(instance.angles.n_points):
        name = f"dev_{i}"
        problem.scalars.append(name)
        problem.objective.add_scalar(name, 1.0)

    supports = [np.asarray(idx, dtype=int) for idx in support.per_snapshot]

    def comm_coeff(vec_j: np.ndarray, n: int) -> np.ndarray:
        """Lift a per-position coefficient vector into the snapshot-n block."""
        if compressed:
            return _outer(vec_j[supports[n - 1]])
        return _outer(vec_j)

    def radar_coeff_from_stacked(vec_stacked_j: np.ndarray) -> np.ndarray:
        if compressed:
            return _outer(vec_stacked_j[mapping.stacked_indices(j_count)])
        return _outer(vec_stacked_j)

    for i in range(instance.angles.n_points):
        terms: list[tuple[str, np.ndarray]] = []
        a_full = steer[i]
        for n in range(1, n_count + 1):
            coeff = sigma_s2 * comm_coeff(a_full, n)
            for k in range(k_count):
                terms.append((comm_block(k, n), coeff))
        terms.append((RADAR_BLOCK, radar_coeff_from_stacked(np.tile(a_full, n_count))))
        _add_epigraph(problem, terms, float(ideal[i]), i)

    for ch in instance.channels:
        gamma = ch.sinr_target
        inv_noise = 1.0 / ch.noise_power
        h_full = ch.h_hat
        for n in range(1, n_count + 1):
            h_coeff = comm_coeff(h_full, n) * inv_noise
            row = LinearExpr(constant=-gamma)
            row.add_matrix(comm_block(ch.user_id, n), h_coeff)
            for k in range(k_count):
                if k != ch.user_id:
                    row.add_matrix(comm_block(k, n), -gamma * h_coeff)
            radar_coeff = np.zeros((radar_dim, radar_dim), dtype=complex)
            if compressed:
                lo = mapping.snapshot_offsets[n - 1]
                hi = lo + sizes[n - 1]
                radar_coeff[lo:hi, lo:hi] = -gamma * inv_noise * _outer(h_full[supports[n - 1]])
            else:
                lo = (n - 1) * j_count
                hi = lo + j_count
                radar_coeff[lo:hi, lo:hi] = -gamma * inv_noise * _outer(h_full)
            row.add_matrix(RADAR_BLOCK, radar_coeff)
            problem.ineq.append(row)

    power = LinearExpr(constant=instance.power_budget)
    for k in range(k_count):
        for n in range(1, n_count + 1):
            power.add_matrix(comm_block(k, n), -sigma_s2 * np.eye(comm_dim[n], dtype=complex))
    power.add_matrix(RADAR_BLOCK, -np.eye(radar_dim, dtype=complex))
    problem.ineq.append(power)

    if not compressed:
        for n in range(1, n_count + 1):
            missing = sorted(set(range(j_count)) - set(support.per_snapshot[n - 1]))
            for j in missing:
                diag = np.zeros((j_count, j_count), dtype=complex)
                diag[j, j] = 1.0
                for k in range(k_count):
                    problem.eq.append(LinearExpr(matrix_coeffs={comm_block(k, n): diag}))
                stacked = np.zeros((radar_dim, radar_dim), dtype=complex)
                stacked[(n - 1) * j_count + j, (n - 1) * j_count + j] = 1.0
                problem.eq.append(LinearExpr(matrix_coeffs={RADAR_BLOCK: stacked}))
    return problem


@dataclass
class FixedTrajectorySolve:
    status: str
    objective: float | None
    design: CovarianceDesign | None
    solution: ConicSolution
    trajectory: Trajectory


def design_from_solution(instance: InstanceData, solution: ConicSolution) -> CovarianceDesign:
    m_count, n_count, k_count = instance.n_elements, instance.n_snapshots, instance.n_users
    comm = np.zeros((k_count, n_count, m_count, m_count), dtype=complex)
    for k in range(k_count):
        for n in range(1, n_count + 1):
            comm[k, n - 1] = solution.matrices[comm_block(k, n)]
    return CovarianceDesign(
        comm_cov=comm,
        radar_cov=solution.matrices[RADAR_BLOCK],
        gain_scale=max(solution.scalars[GAIN_SCALE], 0.0),
        symbol_power=instance.symbol_power,
    )


def solve_fixed_trajectory(
    instance: InstanceData, trajectory: Trajectory, solver: str | None = None
) -> FixedTrajectorySolve:
    problem = build_fixed_trajectory_problem(instance, trajectory)
    solution = solve_conic(problem, solver)
    design = design_from_solution(instance, solution) if solution.status == OPTIMAL else None
    return FixedTrajectorySolve(
        status=solution.status,
        objective=solution.objective_value if solution.status == OPTIMAL else None,
        design=design,
        solution=solution,
        trajectory=trajectory,
    )


@dataclass
class RelaxedSolve:
    status: str
    objective: float | None
    solution: ConicSolution
    support: SupportSet


def solve_relaxed(
    instance: InstanceData,
    prefix: tuple[int, ...] = (),
    support: SupportSet | None = None,
    solver: str | None = None,
    *,
    compressed: bool = True,
) -> RelaxedSolve:
    support = support if support is not None else node_support(instance, prefix)
    problem = build_relaxed_problem(instance, support, prefix, compressed=compressed)
    solution = solve_conic(problem, solver)
    return RelaxedSolve(
        status=solution.status,
        objective=solution.objective_value if solution.status == OPTIMAL else None,
        solution=solution,
        support=support,
    )


def relaxed_beam_gains(instance: InstanceData, support: SupportSet, solution: ConicSolution) -> np.ndarray:
    """Realized gains of a support-relaxed solution at every angular point.

    Matrices are restricted to the support before evaluation, so entries
    outside the admissible rows/columns (zero in any valid solution) cannot
    influence the gain.
    """
    mapping = compress_support(support)
    j_count = instance.grid.n_positions
    n_count = instance.n_snapshots
    steer = _steering_matrix(instance)
    compressed = solution.matrices[RADAR_BLOCK].shape[0] == support.total_size

    gains = np.zeros(instance.angles.n_points)
    for n in range(1, n_count + 1):
        idx = np.asarray(support.per_snapshot[n - 1], dtype=int)
        a_c = steer[:, idx]
        for k in range(instance.n_users):
            mat = solution.matrices[comm_block(k, n)]
            if not compressed:
                mat = mapping.restrict_snapshot(mat, n)
            gains += instance.symbol_power * np.einsum("ip,pq,iq->i", a_c.conj(), mat, a_c).real
    radar = solution.matrices[RADAR_BLOCK]
    if not compressed:
        radar = mapping.restrict_stacked(radar, j_count)
    stacked_idx = mapping.stacked_indices(j_count)
    a_stacked = np.tile(steer, (1, n_count))[:, stacked_idx]
    gains += np.einsum("ip,pq,iq->i", a_stacked.conj(), radar, a_stacked).real
    return gains


def relaxed_mismatch(instance: InstanceData, support: SupportSet, solution: ConicSolution) -> float:
    """Recompute the absolute-deviation objective of a relaxed solution."""
    gains = relaxed_beam_gains(instance, support, solution)
    scale = solution.scalars[GAIN_SCALE]
    return float(np.abs(scale * ideal_pattern(instance.angles) - gains).sum())


def extract_rank_one(mat: np.ndarray, tol: float = 1e-7) -> tuple[np.ndarray, float]:
    """Dominant-eigenpair factor of a PSD matrix and the rank-one quality ratio.

    Returns (w, ratio) with w = sqrt(lam_1) v_1 and ratio = lam_2 / lam_1
    (zero for exactly rank-one input; 0 for the zero matrix). Raises if the
    matrix is not PSD within the tolerance.
    """
    herm = (mat + mat.conj().T) / 2.0
    evals, evecs = np.linalg.eigh(herm)
    if evals[0] < -tol * max(1.0, float(evals[-1])):
        raise ParameterError(f"matrix is not PSD within tolerance (min eig {evals[0]:.3e})")
    lam1 = float(evals[-1])
    if lam1 <= 0.0:
        return np.zeros(mat.shape[0], dtype=complex), 0.0
    ratio = max(float(evals[-2]), 0.0) / lam1 if mat.shape[0] > 1 else 0.0
    return np.sqrt(lam1) * evecs[:, -1], ratio
