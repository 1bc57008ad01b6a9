"""P1 stiffness assembly as 15-point vertex stencils.

The bilinear form is ``a(u, v) = int grad(u)^T K grad(v)`` with a symmetric
positive-definite tensor ``K`` (a scalar coefficient is promoted to
``kappa * Id``).  Inside a macro-tetrahedron every interior vertex sees the
same 24 adjacent micro-elements, so a matrix row reduces to one weight per
stencil direction.  Variable coefficients are integrated with one-point
(centroid) quadrature, which is exact for constant ``K`` and matches the
accuracy of the piecewise-linear discretization otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse

from . import geometry
from .geometry import (
    C,
    CELL_CLASS_OFFSETS,
    OFFSETS,
    VERTEX_ADJACENT_ELEMENTS,
    MacroTet,
)

__all__ = [
    "CoefficientField",
    "kappa_poly",
    "element_stiffness",
    "element_stiffness_batch",
    "assemble_stencil",
    "StencilSource",
    "stencil_source",
    "assemble_cell_matrix",
]

_OFFSET_TO_INDEX = {tuple(off): i for i, off in enumerate(OFFSETS)}


# ---------------------------------------------------------------------------
# coefficients
# ---------------------------------------------------------------------------

class CoefficientField:
    """Diffusion coefficient: constant scalar, scalar field or tensor field."""

    def __init__(self, fn=None, constant: float | None = None, name: str = ""):
        if (fn is None) == (constant is None):
            raise ValueError("pass exactly one of fn or constant")
        self.fn = fn
        self.const = constant
        self.name = name or ("constant" if fn is None else "field")

    @classmethod
    def constant(cls, value: float = 1.0) -> "CoefficientField":
        return cls(constant=float(value), name=f"constant({value:g})")

    @classmethod
    def scalar(cls, fn, name: str = "scalar") -> "CoefficientField":
        return cls(fn=lambda pts: np.asarray(fn(pts), dtype=np.float64), name=name)

    @classmethod
    def tensor(cls, fn, name: str = "tensor") -> "CoefficientField":
        return cls(fn=fn, name=name)

    @property
    def is_constant(self) -> bool:
        return self.const is not None

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        """Tensor values at points, shape (m, 3, 3)."""
        points = np.atleast_2d(points)
        m = len(points)
        if self.const is not None:
            return np.broadcast_to(self.const * np.eye(3), (m, 3, 3))
        vals = np.asarray(self.fn(points), dtype=np.float64)
        if vals.shape == (m,):
            return vals[:, None, None] * np.eye(3)
        if vals.shape == (m, 3, 3):
            return vals
        raise ValueError("coefficient function must return (m,) or (m, 3, 3)")


def kappa_poly(i: int) -> CoefficientField:
    """Scalar coefficient 1 + 10 (x^i + y^i + z^i) of polynomial degree i."""
    if not 0 <= i <= 3:
        raise ValueError("kappa_poly degree must be in 0..3")

    def fn(pts):
        pts = np.atleast_2d(pts)
        return 1.0 + 10.0 * (pts ** i).sum(axis=1)

    return CoefficientField.scalar(fn, name=f"kappa_poly({i})")


# ---------------------------------------------------------------------------
# element stiffness
# ---------------------------------------------------------------------------

def element_stiffness_batch(verts: np.ndarray, K: np.ndarray,
                            check: bool = True) -> np.ndarray:
    """Stiffness matrices |T| g_i^T K g_j for a batch of tetrahedra.

    Parameters
    ----------
    verts : (m, 4, 3) vertex positions.
    K : (m, 3, 3) coefficient tensors at the quadrature point.
    """
    verts = np.asarray(verts, dtype=np.float64)
    edges = verts[:, 1:] - verts[:, :1]
    det = np.linalg.det(edges)
    if check:
        scale = np.linalg.norm(edges, axis=2).max(axis=1)
        bad = np.abs(det) <= 1e-14 * scale ** 3
        if np.any(bad):
            raise ValueError(f"degenerate element at batch index {int(np.argmax(bad))}")
    grads = np.empty((len(verts), 4, 3))
    grads[:, 1:] = np.linalg.inv(edges).transpose(0, 2, 1)
    grads[:, 0] = -grads[:, 1:].sum(axis=1)
    vol = np.abs(det) / 6.0
    return np.einsum("m,mid,mde,mje->mij", vol, grads, K, grads, optimize=True)


def element_stiffness(v0, v1, v2, v3, K=None) -> np.ndarray:
    """Stiffness matrix of a single tetrahedron (K defaults to identity)."""
    verts = np.array([v0, v1, v2, v3], dtype=np.float64)[None]
    if K is None:
        K = np.eye(3)
    K = np.asarray(K, dtype=np.float64)
    if K.ndim == 0:
        K = float(K) * np.eye(3)
    return element_stiffness_batch(verts, K[None])[0]


# ---------------------------------------------------------------------------
# stencil assembly
# ---------------------------------------------------------------------------

def _positions(tet: MacroTet, level: int, geometry_map=None) -> np.ndarray:
    """Physical positions of the full lattice, in rank order."""
    pos = tet.micro_vertex_position(geometry.enumerate_grid(level), level)
    if geometry_map is not None:
        pos = geometry_map(pos)
    return pos


def assemble_stencil(tet: MacroTet, level: int, p, coeff: CoefficientField,
                     geometry_map=None) -> np.ndarray:
    """15-entry stencil of the stiffness row at interior coordinate ``p``.

    Sums the contributions of the 24 micro-elements adjacent to ``p``; with a
    geometry map the micro-vertex positions are mapped before assembly.
    """
    p = np.asarray(p, dtype=np.int64)
    if not geometry.is_interior(p, level)[0]:
        raise ValueError(f"{tuple(p)} is not an interior coordinate at level {level}")
    pos_full = _positions(tet, level, geometry_map)
    stencil = np.zeros(15)
    for ci, aoff, li in VERTEX_ADJACENT_ELEMENTS:
        vcoords = p + aoff + CELL_CLASS_OFFSETS[ci]
        ranks = geometry.lattice_rank(vcoords, level)
        verts = pos_full[ranks]
        Kc = coeff.evaluate(verts.mean(axis=0)[None])
        S = element_stiffness_batch(verts[None], Kc)[0]
        for j in range(4):
            d = _OFFSET_TO_INDEX[tuple(vcoords[j] - p)] if j != li else C
            stencil[d] += S[li, j]
    return stencil


@dataclass
class StencilSource:
    """Stencil rows of the operator on one refined macro-tetrahedron.

    ``data`` is either a single row (translation-invariant operator) or one
    row per full-lattice rank with only interior rows filled.
    """

    level: int
    data: np.ndarray
    constant: bool

    def row(self, p) -> np.ndarray:
        if self.constant:
            return self.data.copy()
        rank = int(geometry.lattice_rank(np.asarray(p)[None], self.level)[0])
        return self.data[rank].copy()

    @property
    def kernel_args(self) -> tuple[np.ndarray, bool]:
        """(rows array, constant flag) as consumed by the numba kernels."""
        return (np.atleast_2d(self.data), self.constant)


def stencil_source(tet: MacroTet, level: int, coeff: CoefficientField,
                   geometry_map=None) -> StencilSource:
    """Assemble the operator's stencil rows for all interior vertices.

    Constant coefficient and no geometry map give a translation-invariant
    stencil, assembled once at a single interior vertex.
    """
    if coeff.is_constant and geometry_map is None:
        row = assemble_stencil(tet, level, _deep_point(level), coeff)
        return StencilSource(level, row, True)

    pos_full = _positions(tet, level, geometry_map)
    interior = geometry.enumerate_grid(level, "interior")
    iranks = geometry.lattice_rank(interior, level)
    data = np.zeros((geometry.grid_size(level), 15))
    for ci, aoff, li in VERTEX_ADJACENT_ELEMENTS:
        vcoords = interior[:, None, :] + (aoff + CELL_CLASS_OFFSETS[ci])[None]
        ranks = geometry.lattice_rank(vcoords.reshape(-1, 3), level).reshape(-1, 4)
        verts = pos_full[ranks]
        Kc = coeff.evaluate(verts.mean(axis=1))
        S = element_stiffness_batch(verts, Kc)
        for j in range(4):
            d = _OFFSET_TO_INDEX[tuple((aoff + CELL_CLASS_OFFSETS[ci])[j])] if j != li else C
            data[iranks, d] += S[:, li, j]
    return StencilSource(level, data, False)


def _deep_point(level: int) -> np.ndarray:
    """An interior point as far from the boundary as the level permits."""
    n = 2 ** level
    q = max(1, n // 4)
    return np.array((q, q, q), dtype=np.int64)


def assemble_cell_load(tet: MacroTet, level: int, fn=None,
                       geometry_map=None) -> np.ndarray:
    """Load vector of the linear form int f v on one cell (one-point
    quadrature), indexed by lattice rank.  ``fn`` defaults to f = 1."""
    pos_full = _positions(tet, level, geometry_map)
    out = np.zeros(geometry.grid_size(level))
    for ci in range(6):
        anchors = geometry.cell_class_anchors(level, ci)
        if len(anchors) == 0:
            continue
        vcoords = anchors[:, None, :] + CELL_CLASS_OFFSETS[ci][None]
        ranks = geometry.lattice_rank(vcoords.reshape(-1, 3), level).reshape(-1, 4)
        verts = pos_full[ranks]
        edges = verts[:, 1:] - verts[:, :1]
        vol = np.abs(np.linalg.det(edges)) / 6.0
        fv = np.ones(len(verts)) if fn is None else np.asarray(fn(verts.mean(axis=1)))
        contrib = vol * fv / 4.0
        for a in range(4):
            np.add.at(out, ranks[:, a], contrib)
    return out


def assemble_cell_matrix(tet: MacroTet, level: int, coeff: CoefficientField,
                         geometry_map=None) -> sparse.coo_matrix:
    """Element-loop stiffness matrix on one cell, indexed by lattice rank."""
    pos_full = _positions(tet, level, geometry_map)
    nfull = geometry.grid_size(level)
    uniform = coeff.is_constant and geometry_map is None
    rows, cols, vals = [], [], []
    for ci in range(6):
        anchors = geometry.cell_class_anchors(level, ci)
        if len(anchors) == 0:
            continue
        vcoords = anchors[:, None, :] + CELL_CLASS_OFFSETS[ci][None]
        ranks = geometry.lattice_rank(vcoords.reshape(-1, 3), level).reshape(-1, 4)
        if uniform:
            # all elements of one class are congruent under the affine map
            verts = pos_full[ranks[:1]]
            S = np.broadcast_to(
                element_stiffness_batch(verts, coeff.evaluate(verts.mean(axis=1)))[0],
                (len(ranks), 4, 4))
        else:
            verts = pos_full[ranks]
            Kc = coeff.evaluate(verts.mean(axis=1))
            S = element_stiffness_batch(verts, Kc)
        for a in range(4):
            for b in range(4):
                rows.append(ranks[:, a])
                cols.append(ranks[:, b])
                vals.append(S[:, a, b])
    return sparse.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(nfull, nfull),
    )
