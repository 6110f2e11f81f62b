"""Conic program construction and solving."""

from .dump import dump_program
from .embedding import ConicError, embed_expression, hermitian_embed, hermitian_extract
from .program import STATUSES, ConicProgram, Solution, solve

__all__ = [
    "STATUSES",
    "ConicError",
    "ConicProgram",
    "Solution",
    "dump_program",
    "embed_expression",
    "hermitian_embed",
    "hermitian_extract",
    "solve",
]
