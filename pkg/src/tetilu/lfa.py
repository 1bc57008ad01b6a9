"""Smoothing analysis of the ILU on translation-invariant stencils.

Deep inside a macro-tetrahedron the factor rows approach a fixed point of
the stencil equations.  Their Fourier symbols give a smoothing factor over
the oscillatory frequency range, which is used to pick the vertex
permutation (and hence DoF ordering) that smooths best.  The analysis
assumes a constant-coefficient operator; the unit-tensor stencil of the
(permuted) macro-tetrahedron is used for the search.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import geometry
from .assembly import CoefficientField, assemble_stencil
from .geometry import BC, BE, BN, BNW, C, LOWER, OFFSETS, S, SE, W, MacroTet

__all__ = [
    "AsymptoticStencils",
    "LFAReport",
    "interior_stencil",
    "asymptotic_stencils",
    "fixed_point_residual",
    "smoothing_factor",
    "best_permutation",
]

#: Samples per frequency axis.
THETA_SAMPLES = 16

_L_INDEX = {d: i for i, d in enumerate(LOWER)}


class FixedPointError(RuntimeError):
    pass


@dataclass(frozen=True)
class AsymptoticStencils:
    """Fixed point of the factor equations: 7 lower entries and the diagonal."""

    lower: np.ndarray
    diag: float


def interior_stencil(tet: MacroTet) -> np.ndarray:
    """Translation-invariant unit-tensor stencil of a macro-tetrahedron.

    Assembled at the coarsest level; for constant coefficients the stencil
    only scales with the mesh width, which cancels in the smoothing factor.
    """
    return assemble_stencil(tet, 2, (1, 1, 1), CoefficientField.constant(1.0))


def asymptotic_stencils(a_row: np.ndarray, tol: float = 1e-13,
                        max_iter: int = 10000) -> AsymptoticStencils:
    """Translation-invariant fixed point of the factor equations.

    Iterates the stencil equations with all neighbours set to the current
    iterate, starting from L = 0, D = 1.  For strongly anisotropic stencils
    that cold start can leave the fixed point's basin of attraction; the
    iteration is then reseeded from a deep factor row of an auxiliary
    factorization of the constant-stencil operator, where it converges.
    """
    with np.errstate(over="ignore", invalid="ignore"):
        try:
            return _fixed_point_sweep(a_row, np.zeros(7), 1.0, tol, max_iter)
        except FixedPointError:
            pass
        seed = _factorized_seed(a_row)
        return _fixed_point_sweep(a_row, seed[:7].copy(), float(seed[7]), tol, max_iter)


def _factorized_seed(a_row: np.ndarray, level: int = 5) -> np.ndarray:
    from .assembly import StencilSource
    from .ilu import factorize_tet

    source = StencilSource(level, np.asarray(a_row, dtype=np.float64), True)
    rows = factorize_tet(source, level).rows
    n = 2 ** level
    q = n // 4
    rank = int(geometry.lattice_rank(np.array([(q, q, n - 1 - 2 * q - 1)]), level)[0])
    return rows[rank]


def _fixed_point_sweep(a_row: np.ndarray, L: np.ndarray, D: float,
                       tol: float, max_iter: int) -> AsymptoticStencils:
    for _ in range(max_iter):
        L_old = L.copy()
        D_old = D
        L[_L_INDEX[BC]] = a_row[BC] / D
        L[_L_INDEX[S]] = (a_row[S] - L[_L_INDEX[BC]] * D * L[_L_INDEX[BN]]) / D
        L[_L_INDEX[BNW]] = (a_row[BNW] - L[_L_INDEX[BC]] * D * L[_L_INDEX[SE]]) / D
        L[_L_INDEX[BE]] = (a_row[BE] - L[_L_INDEX[BC]] * D * L[_L_INDEX[W]]) / D
        L[_L_INDEX[W]] = (a_row[W] - L[_L_INDEX[BC]] * D * L[_L_INDEX[BE]]
                          - L[_L_INDEX[BNW]] * D * L[_L_INDEX[BN]]
                          - L[_L_INDEX[S]] * D * L[_L_INDEX[SE]]) / D
        L[_L_INDEX[BN]] = (a_row[BN] - L[_L_INDEX[BC]] * D * L[_L_INDEX[S]]
                           - L[_L_INDEX[BE]] * D * L[_L_INDEX[SE]]
                           - L[_L_INDEX[BNW]] * D * L[_L_INDEX[W]]) / D
        L[_L_INDEX[SE]] = (a_row[SE] - L[_L_INDEX[BC]] * D * L[_L_INDEX[BNW]]
                           - L[_L_INDEX[BE]] * D * L[_L_INDEX[BN]]
                           - L[_L_INDEX[S]] * D * L[_L_INDEX[W]]) / D
        # diagonal equation solved for D with all stencils translation
        # invariant; keeps D positive where the relaxed update can oscillate
        D = a_row[C] / (1.0 + float(L @ L))
        if not np.isfinite(D) or not np.isfinite(L).all() or D <= 0.0:
            raise FixedPointError("diverging asymptotic stencil iteration")
        num = max(np.abs(L - L_old).max(), abs(D - D_old))
        den = max(np.abs(L).max(), abs(D))
        if num <= tol * den:
            return AsymptoticStencils(L, D)
    raise FixedPointError("asymptotic stencil iteration did not converge")


def fixed_point_residual(a_row: np.ndarray, asym: AsymptoticStencils) -> float:
    """Max defect of the stencil equations at the fixed point."""
    L, D = asym.lower, asym.diag
    i = _L_INDEX
    eqs = [
        a_row[BC] - L[i[BC]] * D,
        a_row[S] - (L[i[BC]] * D * L[i[BN]] + L[i[S]] * D),
        a_row[BNW] - (L[i[BC]] * D * L[i[SE]] + L[i[BNW]] * D),
        a_row[BE] - (L[i[BC]] * D * L[i[W]] + L[i[BE]] * D),
        a_row[W] - (L[i[BC]] * D * L[i[BE]] + L[i[BNW]] * D * L[i[BN]]
                    + L[i[S]] * D * L[i[SE]] + L[i[W]] * D),
        a_row[BN] - (L[i[BC]] * D * L[i[S]] + L[i[BE]] * D * L[i[SE]]
                     + L[i[BNW]] * D * L[i[W]] + L[i[BN]] * D),
        a_row[SE] - (L[i[BC]] * D * L[i[BNW]] + L[i[BE]] * D * L[i[BN]]
                     + L[i[S]] * D * L[i[W]] + L[i[SE]] * D),
        a_row[C] - (D + float(asym.lower @ asym.lower) * D),
    ]
    return float(np.abs(eqs).max())


def _theta_grid() -> tuple[np.ndarray, np.ndarray]:
    """Uniform frequency samples on (-pi, pi]^3 and the oscillatory mask."""
    k = np.arange(THETA_SAMPLES)
    t = -np.pi + 2.0 * np.pi * (k + 1) / THETA_SAMPLES
    tx, ty, tz = np.meshgrid(t, t, t, indexing="ij")
    theta = np.stack([tx.ravel(), ty.ravel(), tz.ravel()], axis=1)
    low = (np.abs(theta) < np.pi / 2).all(axis=1)
    return theta, ~low


_THETA, _OSC_MASK = _theta_grid()
_PHASES = np.exp(1j * (_THETA @ OFFSETS.T.astype(np.float64)))


def smoothing_factor(a_row: np.ndarray, asym: AsymptoticStencils | None = None,
                     ) -> tuple[float, int]:
    """Worst error-propagation symbol ratio over the oscillatory frequencies.

    Returns (mu, number of symbol evaluations); symbols are evaluated on the
    full 16^3 grid, the supremum is taken outside the low-frequency cube.
    """
    if asym is None:
        asym = asymptotic_stencils(a_row)
    a_sym = _PHASES @ a_row
    l_sym = 1.0 + _PHASES[:, list(LOWER)] @ asym.lower
    ldl = asym.diag * (l_sym * np.conj(l_sym))
    denom = np.abs(ldl[_OSC_MASK])
    if denom.min() < 1e-14:
        raise FixedPointError("vanishing smoother symbol at a frequency sample")
    mu = float(np.max(np.abs(ldl[_OSC_MASK] - a_sym[_OSC_MASK]) / denom))
    return mu, len(_THETA)


@dataclass
class LFAReport:
    """Smoothing factors of all vertex permutations of one macro-tetrahedron."""

    permutations: list[tuple[int, int, int, int]]
    mus: np.ndarray
    best_index: int
    symbols_evaluated: int

    @property
    def best_permutation(self) -> tuple[int, int, int, int]:
        return self.permutations[self.best_index]

    @property
    def best_mu(self) -> float:
        return float(self.mus[self.best_index])


def reorder_mesh(mesh) -> list[tuple[int, int, int, int]]:
    """Permute each cell's vertex order to its smoothing-optimal frame.

    Modifies the mesh in place and returns the applied permutations."""
    perms = []
    for ci in range(mesh.num_cells):
        perm, _ = best_permutation(mesh.cell_tet(ci))
        mesh.permute_cell(ci, perm)
        perms.append(perm)
    return perms


def best_permutation(tet: MacroTet) -> tuple[tuple[int, int, int, int], LFAReport]:
    """Evaluate the smoothing factor for all 24 vertex orderings and return
    the minimizer (ties break toward the lexicographically smallest)."""
    perms = geometry.all_vertex_permutations()
    mus = np.full(len(perms), np.inf)
    nsym = 0
    for i, perm in enumerate(perms):
        try:
            a_row = interior_stencil(tet.permuted(perm))
            mus[i], count = smoothing_factor(a_row)
            nsym += count
        except (FixedPointError, ValueError):
            continue
    if not np.isfinite(mus).any():
        raise FixedPointError("smoothing analysis failed for all permutations")
    best = int(np.argmin(mus))
    report = LFAReport(perms, mus, best, nsym)
    return perms[best], report
