"""Conic program assembly over Hermitian PSD variables and a Clarabel backend."""

from .backend import SolveReport, SolveStatus, Tolerances, compile_program, solve
from .p3 import (P3Data, PowerMode, alternative_power_constraints, assemble_feasibility,
                 assemble_p3, formula_size)
from .program import (Affine, ConicProgram, HermitianVar, ScalarVar, embed_hermitian,
                      extract_hermitian, hermitian_basis)

__all__ = [
    "Affine", "ConicProgram", "HermitianVar", "P3Data", "PowerMode", "ScalarVar",
    "SolveReport", "SolveStatus", "Tolerances", "alternative_power_constraints",
    "assemble_feasibility", "assemble_p3", "compile_program", "embed_hermitian", "extract_hermitian",
    "formula_size", "hermitian_basis", "solve",
]
