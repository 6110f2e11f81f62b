"""Sparse text dump of a program's standard-form data.

Format, one record per line::

    # <program name> solver=<solver>
    dims <variables> <rows>
    cone zero <n>
    cone nonneg <n>
    cone soc <d1> <d2> ...
    cone psd <n1> <n2> ...
    cone exp <n>
    c <col> <value>
    A <row> <col> <value>
    b <row> <value>

Rows of A are ordered by cone in the order of the cone lines. The program
minimizes c'x subject to b - Ax in the cone product.
"""

import logging
from pathlib import Path
from typing import Union

import cvxpy as cp
import numpy as np
import scipy.sparse as sp

from .embedding import ConicError
from .program import ConicProgram

logger = logging.getLogger(__name__)


def dump_program(program: ConicProgram, path: Union[str, Path], solver: str = "SCS") -> Path:
    """Write the standard-form data cvxpy hands to ``solver``.

    Raises:
        ConicError: If the program cannot be compiled for the solver
    """
    path = Path(path)
    try:
        data, _, _ = program.problem().get_problem_data(solver)
    except (cp.SolverError, cp.DCPError) as e:
        raise ConicError(f"Cannot compile {program.name} for {solver}: {e}") from e

    A = sp.coo_matrix(data["A"])
    b = np.asarray(data["b"]).ravel()
    c = np.asarray(data["c"]).ravel()
    dims = data["dims"]

    lines = [f"# {program.name} solver={solver}", f"dims {c.size} {b.size}"]
    lines.append(f"cone zero {getattr(dims, 'zero', 0)}")
    lines.append(f"cone nonneg {getattr(dims, 'nonneg', 0)}")
    lines.append("cone soc " + " ".join(str(d) for d in getattr(dims, "soc", [])))
    lines.append("cone psd " + " ".join(str(d) for d in getattr(dims, "psd", [])))
    lines.append(f"cone exp {getattr(dims, 'exp', 0)}")
    lines.extend(f"c {j} {v:.17g}" for j, v in enumerate(c) if v != 0.0)
    lines.extend(f"A {i} {j} {v:.17g}" for i, j, v in zip(A.row, A.col, A.data))
    lines.extend(f"b {i} {v:.17g}" for i, v in enumerate(b) if v != 0.0)

    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n")
    logger.info(f"Dumped {program.name}: {c.size} variables, {b.size} rows, {A.nnz} nonzeros to {path}")
    return path
