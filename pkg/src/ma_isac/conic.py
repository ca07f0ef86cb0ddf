"""Solver-agnostic conic programs over Hermitian PSD blocks and real scalars.

Every convex subproblem in this package has the same shape: minimize a real
affine functional of complex Hermitian PSD matrix blocks and real scalars,
subject to affine equality/inequality constraints in trace form. This module
hosts that canonical form, an exact real-symmetric embedding of the complex
blocks, and two interchangeable backends:

* ``clarabel`` - assembles the cone program directly (fast; the default),
* ``cvxpy`` - goes through cvxpy's canonicalization (reference/fallback).

A complex Hermitian block X = A + iB of dimension d is represented by the
real symmetric matrix T(X) = [[A, -B], [B, A]] of dimension 2d. T(X) is PSD
iff X is, its eigenvalues are those of X duplicated, and for Hermitian C
Tr(C X) = Tr(T(C) T(Y)) / 2. Trace-form problems are invariant under the
congruence-averaging projection onto embedded matrices, so the backends may
solve with unstructured real PSD variables and project afterwards.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import sparse

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
MAX_ITERATIONS = "max_iterations"
NUMERICAL_FAILURE = "numerical_failure"

DEFAULT_SOLVER = "clarabel"

_HERMITIAN_TOL = 1e-10


class ProblemFormatError(ValueError):
    """The conic problem references undeclared variables or mismatched shapes."""


@dataclass(frozen=True)
class MatrixBlock:
    name: str
    dim: int  # complex Hermitian dimension


@dataclass
class LinearExpr:
    """Real affine functional: sum of Re Tr(C_b X_b), scalar terms and a constant."""

    matrix_coeffs: dict[str, np.ndarray] = field(default_factory=dict)
    scalar_coeffs: dict[str, float] = field(default_factory=dict)
    constant: float = 0.0

    def add_matrix(self, name: str, coeff: np.ndarray) -> "LinearExpr":
        coeff = np.asarray(coeff, dtype=complex)
        if np.max(np.abs(coeff - coeff.conj().T)) > _HERMITIAN_TOL * max(1.0, np.abs(coeff).max()):
            raise ProblemFormatError(f"coefficient for block {name} is not Hermitian")
        coeff = (coeff + coeff.conj().T) / 2.0
        if name in self.matrix_coeffs:
            self.matrix_coeffs[name] = self.matrix_coeffs[name] + coeff
        else:
            self.matrix_coeffs[name] = coeff
        return self

    def add_scalar(self, name: str, coeff: float) -> "LinearExpr":
        self.scalar_coeffs[name] = self.scalar_coeffs.get(name, 0.0) + float(coeff)
        return self

    def value(self, matrices: dict[str, np.ndarray], scalars: dict[str, float]) -> float:
        total = self.constant
        for name, coeff in self.matrix_coeffs.items():
            total += float(np.real(np.sum(coeff.conj().T * matrices[name])))
        for name, coeff in self.scalar_coeffs.items():
            total += coeff * scalars[name]
        return total


@dataclass
class ConicProblem:
    blocks: list[MatrixBlock] = field(default_factory=list)
    scalars: list[str] = field(default_factory=list)
    scalar_lower: dict[str, float] = field(default_factory=dict)
    objective: LinearExpr = field(default_factory=LinearExpr)
    eq: list[LinearExpr] = field(default_factory=list)  # expr == 0
    ineq: list[LinearExpr] = field(default_factory=list)  # expr >= 0

    def block_dims(self) -> dict[str, int]:
        return {b.name: b.dim for b in self.blocks}

    def validate(self) -> None:
        dims = self.block_dims()
        if len(dims) != len(self.blocks):
            raise ProblemFormatError("duplicate block names")
        if len(set(self.scalars)) != len(self.scalars):
            raise ProblemFormatError("duplicate scalar names")
        names = set(self.scalars)
        for label, exprs in (("objective", [self.objective]), ("eq", self.eq), ("ineq", self.ineq)):
            for expr in exprs:
                for bname, coeff in expr.matrix_coeffs.items():
                    if bname not in dims:
                        raise ProblemFormatError(f"{label}: unknown block {bname}")
                    if coeff.shape != (dims[bname], dims[bname]):
                        raise ProblemFormatError(f"{label}: coefficient shape mismatch for {bname}")
                for sname in expr.scalar_coeffs:
                    if sname not in names:
                        raise ProblemFormatError(f"{label}: unknown scalar {sname}")
        for sname in self.scalar_lower:
            if sname not in names:
                raise ProblemFormatError(f"scalar bound on unknown scalar {sname}")


@dataclass
class ConicSolution:
    status: str
    objective_value: float | None
    matrices: dict[str, np.ndarray]
    scalars: dict[str, float]
    solver_stats: dict


def real_embedding(mat: np.ndarray) -> np.ndarray:
    """T(X) = [[Re X, -Im X], [Im X, Re X]] for a complex square matrix."""
    re, im = np.real(mat), np.imag(mat)
    return np.block([[re, -im], [im, re]])


def complex_from_embedding(emb: np.ndarray) -> np.ndarray:
    """Inverse of the embedding, averaging over the embedding symmetry.

    For an arbitrary symmetric PSD Y this is the congruence-averaging
    projection; for Y = T(X) it recovers X exactly.
    """
    d2 = emb.shape[0]
    if d2 % 2:
        raise ProblemFormatError("embedded matrix must have even dimension")
    d = d2 // 2
    a = (emb[:d, :d] + emb[d:, d:]) / 2.0
    b = (emb[d:, :d] - emb[:d, d:]) / 2.0
    x = a + 1j * b
    return (x + x.conj().T) / 2.0


# --- scaled svec helpers (upper triangle by columns, off-diagonals * sqrt 2) ---

_TRI_CACHE: dict[int, tuple[np.ndarray, np.ndarray, np.ndarray]] = {}


def _tri_indices(dim: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if dim not in _TRI_CACHE:
        rows, cols = [], []
        for c in range(dim):
            for r in range(c + 1):
                rows.append(r)
                cols.append(c)
        rows_a = np.asarray(rows)
        cols_a = np.asarray(cols)
        scale = np.where(rows_a == cols_a, 1.0, np.sqrt(2.0))
        _TRI_CACHE[dim] = (rows_a, cols_a, scale)
    return _TRI_CACHE[dim]


def svec(mat: np.ndarray) -> np.ndarray:
    rows, cols, scale = _tri_indices(mat.shape[0])
    return mat[rows, cols] * scale


def unsvec(vec: np.ndarray, dim: int) -> np.ndarray:
    rows, cols, scale = _tri_indices(dim)
    out = np.zeros((dim, dim))
    out[rows, cols] = vec / scale
    out[cols, rows] = out[rows, cols]
    return out


def tri_size(dim: int) -> int:
    return dim * (dim + 1) // 2


# --- backends ---


def _layout(problem: ConicProblem) -> tuple[dict[str, int], dict[str, tuple[int, int]], int]:
    """Variable layout: scalars first, then svec coordinates of each embedded block."""
    scalar_pos = {name: i for i, name in enumerate(problem.scalars)}
    offset = len(problem.scalars)
    block_span: dict[str, tuple[int, int]] = {}
    for blk in problem.blocks:
        size = tri_size(2 * blk.dim)
        block_span[blk.name] = (offset, size)
        offset += size
    return scalar_pos, block_span, offset


def _expr_row(
    expr: LinearExpr,
    scalar_pos: dict[str, int],
    block_span: dict[str, tuple[int, int]],
    n_vars: int,
) -> np.ndarray:
    row = np.zeros(n_vars)
    for name, coeff in expr.scalar_coeffs.items():
        row[scalar_pos[name]] = coeff
    for name, coeff in expr.matrix_coeffs.items():
        off, size = block_span[name]
        row[off : off + size] = 0.5 * svec(real_embedding(coeff))
    return row


def _extract(problem: ConicProblem, x: np.ndarray) -> tuple[dict[str, np.ndarray], dict[str, float]]:
    scalar_pos, block_span, _ = _layout(problem)
    scalars = {name: float(x[i]) for name, i in scalar_pos.items()}
    matrices = {}
    for blk in problem.blocks:
        off, size = block_span[blk.name]
        emb = unsvec(x[off : off + size], 2 * blk.dim)
        matrices[blk.name] = complex_from_embedding(emb)
    return matrices, scalars


def _solve_clarabel(problem: ConicProblem, **opts) -> ConicSolution:
    import clarabel

    scalar_pos, block_span, n_vars = _layout(problem)

    q = _expr_row(problem.objective, scalar_pos, block_span, n_vars)
    rows: list[np.ndarray] = []
    b: list[float] = []
    cones = []

    if problem.eq:
        for expr in problem.eq:
            rows.append(_expr_row(expr, scalar_pos, block_span, n_vars))
            b.append(-expr.constant)
        cones.append(clarabel.ZeroConeT(len(problem.eq)))

    ineqs = list(problem.ineq)
    for name, lo in problem.scalar_lower.items():
        ineqs.append(LinearExpr(scalar_coeffs={name: 1.0}, constant=-lo))
    if ineqs:
        for expr in ineqs:
            rows.append(-_expr_row(expr, scalar_pos, block_span, n_vars))
            b.append(expr.constant)
        cones.append(clarabel.NonnegativeConeT(len(ineqs)))

    for blk in problem.blocks:
        off, size = block_span[blk.name]
        eye = np.zeros((size, n_vars))
        eye[:, off : off + size] = -np.eye(size)
        rows.append(eye)
        b.extend([0.0] * size)
        cones.append(clarabel.PSDTriangleConeT(2 * blk.dim))

    a_mat = sparse.csc_matrix(np.vstack(rows)) if rows else sparse.csc_matrix((0, n_vars))
    p_mat = sparse.csc_matrix((n_vars, n_vars))

    settings = clarabel.DefaultSettings()
    settings.verbose = bool(opts.get("verbose", False))
    if "max_iter" in opts:
        settings.max_iter = int(opts["max_iter"])

    solver = clarabel.DefaultSolver(p_mat, q, a_mat, np.asarray(b), cones, settings)
    result = solver.solve()

    raw = str(result.status)
    status = {
        "Solved": OPTIMAL,
        "PrimalInfeasible": INFEASIBLE,
        "AlmostPrimalInfeasible": INFEASIBLE,
        "DualInfeasible": UNBOUNDED,
        "AlmostDualInfeasible": UNBOUNDED,
        "MaxIterations": MAX_ITERATIONS,
        "MaxTime": MAX_ITERATIONS,
    }.get(raw, NUMERICAL_FAILURE)

    stats = {
        "backend": "clarabel",
        "raw_status": raw,
        "iterations": int(result.iterations),
        "solve_time": float(result.solve_time),
    }
    if status in (INFEASIBLE, UNBOUNDED):
        return ConicSolution(status, None, {}, {}, stats)

    x = np.asarray(result.x)
    matrices, scalars = _extract(problem, x)
    objective = float(q @ x) + problem.objective.constant
    if status != OPTIMAL:
        stats["note"] = "returned iterate did not reach solved status"
    return ConicSolution(status, objective, matrices, scalars, stats)


def _solve_cvxpy(problem: ConicProblem, **opts) -> ConicSolution:
    import cvxpy as cp

    y_vars = {blk.name: cp.Variable((2 * blk.dim, 2 * blk.dim), PSD=True) for blk in problem.blocks}
    s_vars = {name: cp.Variable() for name in problem.scalars}

    def build(expr: LinearExpr):
        total = expr.constant
        for name, coeff in expr.matrix_coeffs.items():
            total = total + 0.5 * cp.sum(cp.multiply(real_embedding(coeff), y_vars[name]))
        for name, coeff in expr.scalar_coeffs.items():
            total = total + coeff * s_vars[name]
        return total

    constraints = [build(e) == 0 for e in problem.eq]
    constraints += [build(e) >= 0 for e in problem.ineq]
    constraints += [s_vars[name] >= lo for name, lo in problem.scalar_lower.items()]

    prob = cp.Problem(cp.Minimize(build(problem.objective)), constraints)
    solver_name = opts.get("cvxpy_solver", "CLARABEL")
    try:
        prob.solve(solver=solver_name, verbose=bool(opts.get("verbose", False)))
    except cp.error.SolverError as exc:
        return ConicSolution(NUMERICAL_FAILURE, None, {}, {}, {"backend": "cvxpy", "error": str(exc)})

    raw = prob.status
    stats = {"backend": "cvxpy", "raw_status": raw, "cvxpy_solver": solver_name}
    if raw in (cp.INFEASIBLE, "infeasible_inaccurate"):
        return ConicSolution(INFEASIBLE, None, {}, {}, stats)
    if raw in (cp.UNBOUNDED, "unbounded_inaccurate"):
        return ConicSolution(UNBOUNDED, None, {}, {}, stats)
    if prob.value is None:
        return ConicSolution(NUMERICAL_FAILURE, None, {}, {}, stats)

    matrices = {
        blk.name: complex_from_embedding(np.asarray(y_vars[blk.name].value)) for blk in problem.blocks
    }
    scalars = {name: float(var.value) for name, var in s_vars.items()}
    status = OPTIMAL if raw == cp.OPTIMAL else NUMERICAL_FAILURE
    return ConicSolution(status, float(prob.value), matrices, scalars, stats)


def solve_conic(problem: ConicProblem, solver: str | None = None, **opts) -> ConicSolution:
    """Solve the conic program with the chosen backend.

    ``solver`` is one of ``clarabel`` (direct assembly, default), ``cvxpy``
    (cvxpy canonicalization over Clarabel) or ``cvxpy-scs``.
    """
    problem.validate()
    solver = solver or DEFAULT_SOLVER
    if solver == "clarabel":
        return _solve_clarabel(problem, **opts)
    if solver == "cvxpy":
        return _solve_cvxpy(problem, **opts)
    if solver == "cvxpy-scs":
        return _solve_cvxpy(problem, cvxpy_solver="SCS", **opts)
    raise ProblemFormatError(f"unknown solver backend {solver!r}")


def solution_residuals(problem: ConicProblem, solution: ConicSolution) -> dict[str, float]:
    """Recompute primal residuals of a solution from the returned variables."""
    mats, scals = solution.matrices, solution.scalars
    eq_res = max((abs(e.value(mats, scals)) for e in problem.eq), default=0.0)
    ineq_res = max((max(0.0, -e.value(mats, scals)) for e in problem.ineq), default=0.0)
    bound_res = max(
        (max(0.0, lo - scals[name]) for name, lo in problem.scalar_lower.items()), default=0.0
    )
    min_eig = 0.0
    for blk in problem.blocks:
        mat = mats[blk.name]
        if mat.size:
            min_eig = min(min_eig, float(np.linalg.eigvalsh(mat)[0]))
    objective_gap = 0.0
    if solution.objective_value is not None:
        objective_gap = abs(problem.objective.value(mats, scals) - solution.objective_value)
    return {
        "eq": eq_res,
        "ineq": max(ineq_res, bound_res),
        "min_block_eig": min_eig,
        "objective_recompute_gap": objective_gap,
    }


def _expr_to_json(expr: LinearExpr) -> dict:
    return {
        "matrix_coeffs": {
            name: [[[float(v.real), float(v.imag)] for v in row] for row in coeff]
            for name, coeff in expr.matrix_coeffs.items()
        },
        "scalar_coeffs": dict(expr.scalar_coeffs),
        "constant": expr.constant,
    }


def problem_to_json(problem: ConicProblem) -> dict:
    """Self-describing dump for offline debugging and cross-solver testing."""
    return {
        "blocks": [{"name": b.name, "dim": b.dim, "field": "complex_hermitian_psd"} for b in problem.blocks],
        "scalars": list(problem.scalars),
        "scalar_lower": dict(problem.scalar_lower),
        "objective": _expr_to_json(problem.objective),
        "eq": [_expr_to_json(e) for e in problem.eq],
        "ineq": [_expr_to_json(e) for e in problem.ineq],
    }


def dump_problem(problem: ConicProblem, path: str | Path) -> None:
    with open(path, "w") as fh:
        json.dump(problem_to_json(problem), fh)
