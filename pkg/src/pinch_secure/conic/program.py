"""Solver-agnostic conic program builder on top of cvxpy.

Variables are registered by name so that solutions can be read back by the
same names the optimizers use. The objective is maximized and is the sum of
linear parts and weighted logarithms of affine expressions, each log realized
through an exponential-cone hypograph. PSD constraints over Hermitian blocks
go through the real embedding.
"""

import logging
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import cvxpy as cp
import numpy as np
from cvxpy.constraints.exponential import ExpCone
from numpy.typing import NDArray

from ..config import Settings, get_settings
from ..constants import LN2
from .embedding import ConicError, embed_expression

logger = logging.getLogger(__name__)

STATUSES = ("optimal", "infeasible", "unbounded", "numerical")

_STATUS_MAP = {
    cp.OPTIMAL: "optimal",
    cp.OPTIMAL_INACCURATE: "optimal",
    cp.INFEASIBLE: "infeasible",
    cp.INFEASIBLE_INACCURATE: "infeasible",
    cp.UNBOUNDED: "unbounded",
    cp.UNBOUNDED_INACCURATE: "unbounded",
}

Affine = Union[cp.Expression, float]


class ConicProgram:
    """Registry of named variables, typed constraints and a concave objective."""

    def __init__(self, name: str = "program"):
        self.name = name
        self.variables: Dict[str, cp.Variable] = {}
        self.constraints: List[Tuple[str, cp.Constraint]] = []
        self._objective: List[cp.Expression] = []
        self._log_count = 0

    # Variables

    def _register(self, name: str, variable: cp.Variable) -> cp.Variable:
        if name in self.variables:
            raise ConicError(f"Variable '{name}' already registered in {self.name}")
        self.variables[name] = variable
        return variable

    def scalar(self, name: str, nonneg: bool = False) -> cp.Variable:
        return self._register(name, cp.Variable(name=name, nonneg=nonneg))

    def vector(self, name: str, n: int, nonneg: bool = False, complex: bool = False) -> cp.Variable:
        if n < 1:
            raise ConicError(f"Vector '{name}' needs a positive length")
        if complex:
            return self._register(name, cp.Variable(n, name=name, complex=True))
        return self._register(name, cp.Variable(n, name=name, nonneg=nonneg))

    def hermitian(self, name: str, n: int, psd: bool = False) -> cp.Variable:
        """Complex Hermitian n x n variable, optionally constrained PSD via the embedding."""
        if n < 1:
            raise ConicError(f"Hermitian block '{name}' needs a positive size")
        variable = self._register(name, cp.Variable((n, n), name=name, hermitian=True))
        if psd:
            self.add_psd(variable, tag=f"psd:{name}")
        return variable

    def symmetric(self, name: str, n: int, psd: bool = False) -> cp.Variable:
        variable = self._register(name, cp.Variable((n, n), name=name, symmetric=True))
        if psd:
            self.add_psd(variable, tag=f"psd:{name}")
        return variable

    def __getitem__(self, name: str) -> cp.Variable:
        try:
            return self.variables[name]
        except KeyError as e:
            raise ConicError(f"Unknown variable '{name}' in {self.name}") from e

    # Constraints

    def add(self, constraint: Union[cp.Constraint, Sequence[cp.Constraint]], tag: str = "linear"):
        constraints = constraint if isinstance(constraint, (list, tuple)) else [constraint]
        for c in constraints:
            self.constraints.append((tag, c))

    def add_psd(self, expr, tag: str = "psd") -> cp.Constraint:
        """Constrain a square (complex) matrix expression PSD through its real embedding."""
        shape = expr.shape if isinstance(expr, cp.Expression) else np.shape(expr)
        if len(shape) != 2 or shape[0] != shape[1]:
            raise ConicError(f"PSD block '{tag}' must be square, got {shape}")
        constraint = embed_expression(expr) >> 0
        self.constraints.append((tag, constraint))
        return constraint

    def add_soc(self, t: Affine, x: cp.Expression, tag: str = "soc") -> cp.Constraint:
        constraint = cp.SOC(t, x)
        self.constraints.append((tag, constraint))
        return constraint

    def add_log_geq(self, t: Affine, affine: Affine, tag: str = "log") -> cp.Constraint:
        """t <= ln(affine), as (t, 1, affine) in the exponential cone."""
        constraint = ExpCone(t, 1.0, affine)
        self.constraints.append((tag, constraint))
        return constraint

    def add_log_term(self, weight: float, affine: Affine, tag: str = "log", bits: bool = True):
        """Add weight * log(affine) to the maximized objective.

        Logs in bits are converted to nats with a 1/ln2 weight.

        Raises:
            ConicError: If the weight is not positive (the term would be convex)
        """
        if weight <= 0:
            raise ConicError(f"Log term '{tag}' needs a positive weight, got {weight}")
        self._log_count += 1
        t = self.scalar(f"_log{self._log_count}")
        self.add_log_geq(t, affine, tag=tag)
        self._objective.append((weight / LN2 if bits else weight) * t)
        return t

    def add_softplus_leq(self, s: Affine, arg: Affine, theta: float, tag: str = "softplus"):
        """log2(1 + exp(-theta * arg)) <= s via two exponential cones.

        Equivalent to exp(-s ln2) + exp(-theta arg - s ln2) <= 1. Vector
        arguments are handled elementwise.
        """
        shape = arg.shape if isinstance(arg, cp.Expression) else np.shape(arg)
        ones = np.ones(shape) if shape else 1.0
        u0 = cp.Variable(shape, nonneg=True)
        u1 = cp.Variable(shape, nonneg=True)
        constraints = [
            ExpCone(-s * LN2, ones, u0),
            ExpCone(-theta * arg - s * LN2, ones, u1),
            u0 + u1 <= 1.0,
        ]
        self.add(constraints, tag=tag)
        return u0, u1

    # Objective

    def add_objective(self, expr: cp.Expression):
        """Add a concave (typically affine) expression to the maximized objective."""
        self._objective.append(expr)

    def add_penalty(self, expr: cp.Expression, weight: float = 1.0):
        """Subtract weight * convex expr from the maximized objective."""
        self._objective.append(-weight * expr)

    def objective_expression(self) -> cp.Expression:
        return sum(self._objective, cp.Constant(0.0))

    def problem(self) -> cp.Problem:
        return cp.Problem(cp.Maximize(self.objective_expression()), [c for _, c in self.constraints])

    def describe(self) -> Dict[str, int]:
        counts: Dict[str, int] = {}
        for tag, _ in self.constraints:
            family = tag.split(":")[0]
            counts[family] = counts.get(family, 0) + 1
        return counts


@dataclass
class Solution:
    status: str
    values: Dict[str, NDArray] = field(default_factory=dict)
    objective: float = float("nan")
    residual: float = float("nan")
    solve_time: float = 0.0
    solver: Optional[str] = None
    inaccurate: bool = False

    @property
    def ok(self) -> bool:
        return self.status == "optimal"

    def value(self, name: str) -> NDArray:
        try:
            return self.values[name]
        except KeyError as e:
            raise ConicError(f"No value for variable '{name}' (status {self.status})") from e

    def scalar(self, name: str) -> float:
        return float(np.real(self.value(name)))


def _solver_options(solver: str, settings: Settings) -> Dict[str, object]:
    if solver == "CLARABEL":
        return {
            "tol_feas": settings.tol_feas,
            "tol_gap_abs": settings.tol_gap,
            "tol_gap_rel": settings.tol_gap,
            "max_iter": settings.max_solver_iters,
        }
    if solver == "SCS":
        return {
            "eps_abs": settings.tol_feas,
            "eps_rel": settings.tol_gap,
            "max_iters": max(settings.max_solver_iters, 20000),
        }
    return {}


def _max_violation(program: ConicProgram) -> float:
    worst = 0.0
    for tag, constraint in program.constraints:
        try:
            violation = np.max(np.atleast_1d(constraint.violation()))
        except (ValueError, TypeError, AttributeError):
            continue
        worst = max(worst, float(violation))
    return worst


def solve(
    program: ConicProgram,
    settings: Optional[Settings] = None,
    solvers: Optional[Sequence[str]] = None,
) -> Solution:
    """Solve a program with the first installed solver that does not fail numerically.

    Solver failures never raise; they come back as status ``numerical``.
    """
    settings = settings or get_settings()
    installed = set(cp.installed_solvers())
    order = [s for s in (solvers or settings.solver_order) if s in installed]
    if not order:
        raise ConicError(f"None of the solvers {list(solvers or settings.solver_order)} is installed")

    problem = program.problem()
    solution = Solution(status="numerical")
    for solver in order:
        start = time.perf_counter()
        try:
            problem.solve(solver=solver, verbose=False, **_solver_options(solver, settings))
        except cp.SolverError as e:
            logger.warning(f"{program.name}: solver {solver} failed ({e}), trying next")
            continue
        elapsed = time.perf_counter() - start
        status = _STATUS_MAP.get(problem.status, "numerical")
        solution = Solution(
            status=status,
            solve_time=elapsed,
            solver=solver,
            inaccurate=problem.status in (cp.OPTIMAL_INACCURATE, cp.INFEASIBLE_INACCURATE),
        )
        if status == "numerical":
            logger.warning(f"{program.name}: solver {solver} returned {problem.status}")
            continue
        if status == "optimal":
            solution.objective = float(problem.value)
            solution.values = {
                name: np.asarray(var.value) for name, var in program.variables.items()
                if var.value is not None
            }
            solution.residual = _max_violation(program)
        logger.debug(
            f"{program.name}: {status} via {solver} in {elapsed * 1e3:.1f} ms "
            f"(objective {solution.objective:.6g}, residual {solution.residual:.2e})"
        )
        return solution
    return solution
