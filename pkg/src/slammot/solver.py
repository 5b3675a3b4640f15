"""Levenberg-Marquardt over the joint factor graph.

Max-mixture components are re-selected every time the residual is
evaluated, i.e. after each accepted step; inside one linear solve the
selection is frozen because the Jacobian is taken at the current point.

Normal equations ``(H + lam * diag(H)) dx = -J^T r`` are factorised with
SuperLU in symmetric mode (no pivoting across the diagonal, minimum-degree
ordering on ``A^T + A``), which on a symmetric positive definite matrix is an
``LDL^T``-style sparse Cholesky. A non-positive pivot is treated as
singularity.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .ctrv import EPS_OMEGA
from .graph import CompiledGraph, FactorGraph, FactorKind, VariableKey

log = logging.getLogger(__name__)


class StructuralDeficiencyError(RuntimeError):
    """The problem leaves some variables unconstrained (gauge freedom or missing factors)."""

    def __init__(self, message: str, variables: list[VariableKey]):
        self.variables = variables
        names = ", ".join(str(v) for v in variables[:12])
        more = "" if len(variables) <= 12 else f", ... ({len(variables)} total)"
        super().__init__(f"{message}: {names}{more}")


class StopReason(str, enum.Enum):
    GRADIENT_TOL = "GradientTol"
    STEP_TOL = "StepTol"
    MAX_ITER = "MaxIter"
    COST_TOL = "CostTol"


@dataclass(frozen=True)
class SolveReport:
    iterations: int
    initial_cost: float
    final_cost: float
    converged: bool
    reason: StopReason

    def as_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "initial_cost": self.initial_cost,
            "final_cost": self.final_cost,
            "converged": self.converged,
            "reason": self.reason.value,
        }


@dataclass
class SolverOptions:
    max_iterations: int = 100
    lambda_init: float = 1e-4
    lambda_factor: float = 10.0
    lambda_max: float = 1e10
    rel_cost_tol: float = 1e-9
    gradient_tol: float = 1e-8
    step_tol: float = 1e-12
    fixed: frozenset[VariableKey] = field(default_factory=frozenset)
    eps_omega: float = EPS_OMEGA


def evaluate_cost(graph: FactorGraph, eps_omega: float = EPS_OMEGA) -> float:
    """``0.5 * sum |whitened residual|^2`` with the current component selection."""
    cg = CompiledGraph(graph, eps_omega)
    return cg.cost(cg.pack())


def check_structure(graph: FactorGraph, fixed: frozenset[VariableKey] = frozenset()) -> None:
    """Raise if any connected group of free variables has nothing tying it to a fixed frame.

    A group is anchored when it contains a unary (prior) factor or touches a
    fixed variable through some factor.
    """
    parent = {k: k for k in graph.variables}

    def find(k):
        while parent[k] != k:
            parent[k] = parent[parent[k]]
            k = parent[k]
        return k

    anchored_keys = set(fixed)
    for f in graph.factors:
        free = [k for k in f.keys if k not in fixed]
        if not free:
            continue
        if f.kind is FactorKind.PRIOR or len(free) < len(f.keys):
            anchored_keys.add(free[0])
        root = find(free[0])
        for k in free[1:]:
            r = find(k)
            if r != root:
                parent[r] = root
    anchored_roots = {find(k) for k in anchored_keys if k in parent}
    loose = [k for k in graph.variables if k not in fixed and find(k) not in anchored_roots]
    if loose:
        raise StructuralDeficiencyError("unconstrained variables (no prior or fixed anchor)", loose)


def _free_columns(cg: CompiledGraph, fixed: frozenset[VariableKey]) -> np.ndarray:
    if not fixed:
        return np.arange(cg.size)
    mask = np.ones(cg.size, dtype=bool)
    for k in fixed:
        if k in cg.index:
            i = cg.index[k]
            mask[i : i + k.dim] = False
    return np.flatnonzero(mask)


def _column_owners(cg: CompiledGraph, cols: np.ndarray) -> list[VariableKey]:
    starts = np.array([cg.index[k] for k in cg.keys])
    owners = []
    for c in cols:
        k = cg.keys[int(np.searchsorted(starts, c, side="right") - 1)]
        if k not in owners:
            owners.append(k)
    return owners


def solve(graph: FactorGraph, opts: SolverOptions | None = None) -> SolveReport:
    """Minimise the graph cost in place and return a :class:`SolveReport`.

    Raises
    ------
    StructuralDeficiencyError
        When the structure leaves variables unanchored, or the damped normal
        equations stay singular up to ``lambda_max``.
    """
    opts = opts or SolverOptions()
    check_structure(graph, opts.fixed)
    cg = CompiledGraph(graph, opts.eps_omega)
    x = cg.pack()
    free = _free_columns(cg, opts.fixed)
    r, J = cg.linearize(x)
    cost = 0.5 * float(r @ r)
    initial = cost
    lam = opts.lambda_init
    reason = StopReason.MAX_ITER
    converged = False
    iterations = 0

    if free.size == 0 or cg.rows == 0:
        return SolveReport(0, initial, cost, True, StopReason.GRADIENT_TOL)

    for iterations in range(opts.max_iterations):
        Jf = J[:, free] if free.size != cg.size else J
        g = Jf.T @ r
        if float(np.max(np.abs(g))) < opts.gradient_tol:
            reason, converged = StopReason.GRADIENT_TOL, True
            break
        H = (Jf.T @ Jf).tocsc()
        diag = H.diagonal()
        zero = np.flatnonzero(diag <= 0.0)
        if zero.size:
            raise StructuralDeficiencyError(
                "variables without any information", _column_owners(cg, free[zero])
            )

        accepted = False
        while lam <= opts.lambda_max:
            A = (H + sp.diags(lam * diag, format="csc")).tocsc()
            dx = _solve_spd(A)(-g)
            if dx is None:
                lam *= opts.lambda_factor
                continue
            delta = np.zeros(cg.size)
            delta[free] = dx
            x_new = cg.retract(x, delta)
            r_new = cg.residual(x_new)
            cost_new = 0.5 * float(r_new @ r_new)
            if np.isfinite(cost_new) and cost_new < cost:
                accepted = True
                break
            lam *= opts.lambda_factor
        if not accepted:
            if not _factorizes(H, diag, opts.lambda_max):
                raise StructuralDeficiencyError(
                    "normal equations singular after damping", _column_owners(cg, free)
                )
            reason, converged = StopReason.STEP_TOL, True
            break

        rel = (cost - cost_new) / max(cost, 1e-300)
        step = float(np.linalg.norm(dx))
        x, cost = x_new, cost_new
        lam = max(lam / opts.lambda_factor, 1e-15)
        r, J = cg.linearize(x)
        if cost == 0.0 or rel < opts.rel_cost_tol:
            reason, converged = StopReason.COST_TOL, True
            iterations += 1
            break
        if step < opts.step_tol * (float(np.linalg.norm(x)) + opts.step_tol):
            reason, converged = StopReason.STEP_TOL, True
            iterations += 1
            break
    else:
        iterations = opts.max_iterations

    cg.unpack(x)
    return SolveReport(iterations, initial, cost, converged, reason)


def _solve_spd(A: sp.csc_matrix):
    """Return a solver callable for ``A``, or a callable returning ``None`` if ``A`` is not SPD."""
    try:
        lu = spla.splu(
            A,
            permc_spec="MMD_AT_PLUS_A",
            diag_pivot_thresh=0.0,
            options={"SymmetricMode": True},
        )
    except RuntimeError:
        return lambda b: None
    piv = lu.U.diagonal()
    if np.any(~np.isfinite(piv)) or np.any(piv <= 1e-14 * max(float(np.max(np.abs(piv))), 1.0)):
        return lambda b: None

    def run(b):
        out = lu.solve(b)
        return out if np.all(np.isfinite(out)) else None

    return run


def _factorizes(H, diag, lam) -> bool:
    A = (H + sp.diags(lam * diag, format="csc")).tocsc()
    return _solve_spd(A)(np.ones(A.shape[0])) is not None
