"""Matrix-free ILU(0) smoothers with polynomial stencil surrogates on
structured tetrahedral multigrid."""

from . import assembly, cli, geometry, ilu, lfa, multigrid, schur, surrogate
from .assembly import CoefficientField, assemble_stencil, kappa_poly, stencil_source
from .geometry import MacroMesh, MacroTet
from .ilu import CellILU, PivotBreakdown, factorize_tet
from .lfa import asymptotic_stencils, best_permutation, reorder_mesh, smoothing_factor
from .multigrid import GridFunction, Hierarchy, SmootherConfig, pcg_solve
from .schur import SchurComplement
from .surrogate import (
    SurrogateILU,
    build_surrogate_ilu,
    build_surrogate_operator,
    lsq_fit,
    nddf_row_evaluate,
    sample_set,
)

__version__ = "0.1.0"
