"""ILU(0) factorization in LDL^T form on macro-tetrahedron interiors.

The factorization keeps exactly the 15-point sparsity pattern of the
interior-restricted operator, with unit-diagonal L and a separate diagonal.
A bottom-up sweep over z-layers needs only two triangular face-layer buffers
(the current layer and the one below), so the transient working set grows
like the layer size O(4^level) while a full factor store grows like the
volume O(8^level).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import _kernels, geometry
from .assembly import StencilSource

__all__ = [
    "PivotBreakdown",
    "FaceLayerPair",
    "factor_step",
    "FactorizationResult",
    "factorize_tet",
    "CellILU",
    "dump_factors_csv",
]

#: Column layout of a factor row.
FACTOR_COLUMNS = ("L_w", "L_s", "L_se", "L_bnw", "L_bn", "L_bc", "L_be", "D_c", "inv_D_c")


class PivotBreakdown(RuntimeError):
    """Raised when a diagonal pivot vanishes during factorization."""

    def __init__(self, coord):
        self.coord = tuple(int(c) for c in coord)
        super().__init__(f"zero pivot at logical coordinate {self.coord}")


@dataclass
class FaceLayerPair:
    """The two working layers of the streaming factorization.

    ``beta`` holds factor rows [L_w..L_be, D] of the layer being factorized,
    ``gamma`` the finished layer below.  Both cover the full z=0 triangle and
    are initialized to the neutral values L = 0, D = 1 so that terms touching
    unfactorized (boundary) positions vanish.
    """

    n: int
    beta: np.ndarray = field(init=False)
    gamma: np.ndarray = field(init=False)
    loff: np.ndarray = field(init=False)

    def __post_init__(self):
        tri = (self.n + 1) * (self.n + 2) // 2
        self.beta = np.zeros((tri, 8))
        self.gamma = np.zeros((tri, 8))
        self.beta[:, 7] = 1.0
        self.gamma[:, 7] = 1.0
        y = np.arange(self.n + 1)
        self.loff = y * (self.n + 1) - y * (y - 1) // 2

    @property
    def nbytes(self) -> int:
        return self.beta.nbytes + self.gamma.nbytes

    def slot(self, x: int, y: int) -> int:
        return int(self.loff[y]) + x

    def advance(self):
        """Finish the current layer: gamma <- beta, beta <- neutral."""
        self.gamma[:] = self.beta
        self.beta[:, :7] = 0.0
        self.beta[:, 7] = 1.0


def factor_step(a_row: np.ndarray, x: int, y: int, layers: FaceLayerPair) -> np.ndarray:
    """Solve the eight stencil equations at (x, y) of the current layer.

    ``a_row`` is the interior-restricted stencil (entries toward boundary
    vertices zeroed).  Writes the factor row into ``layers.beta`` and
    returns it as [L_w..L_be, D].
    """
    b = layers.beta
    g = layers.gamma
    l = layers.slot(x, y)
    lw, ls, lse = l - 1, layers.slot(x, y - 1), layers.slot(x + 1, y - 1)
    lnw, ln, le = layers.slot(x - 1, y + 1), layers.slot(x, y + 1), l + 1

    b_bc = a_row[geometry.BC] / g[l, 7]
    b_s = (a_row[geometry.S] - b_bc * g[l, 7] * b[ls, 4]) / b[ls, 7]
    b_bnw = (a_row[geometry.BNW] - b_bc * g[l, 7] * g[lnw, 2]) / g[lnw, 7]
    b_be = (a_row[geometry.BE] - b_bc * g[l, 7] * g[le, 0]) / g[le, 7]
    b_w = (a_row[geometry.W] - b_bc * g[l, 7] * b[lw, 6]
           - b_bnw * g[lnw, 7] * b[lw, 4]
           - b_s * b[ls, 7] * b[lw, 2]) / b[lw, 7]
    b_bn = (a_row[geometry.BN] - b_bc * g[l, 7] * g[ln, 1]
            - b_be * g[le, 7] * g[ln, 2]
            - b_bnw * g[lnw, 7] * g[ln, 0]) / g[ln, 7]
    b_se = (a_row[geometry.SE] - b_bc * g[l, 7] * b[lse, 3]
            - b_be * g[le, 7] * b[lse, 4]
            - b_s * b[ls, 7] * b[lse, 0]) / b[lse, 7]
    d_c = (a_row[geometry.C]
           - b_bc ** 2 * g[l, 7] - b_be ** 2 * g[le, 7]
           - b_bnw ** 2 * g[lnw, 7] - b_bn ** 2 * g[ln, 7]
           - b_se ** 2 * b[lse, 7] - b_s ** 2 * b[ls, 7]
           - b_w ** 2 * b[lw, 7])
    b[l, :] = (b_w, b_s, b_se, b_bnw, b_bn, b_bc, b_be, d_c)
    return b[l].copy()


@dataclass
class FactorizationResult:
    """Factor rows plus memory accounting of one factorization run."""

    level: int
    rows: np.ndarray | None
    collected: np.ndarray | None
    aux_bytes: int
    store_bytes: int

    def row_at(self, p) -> np.ndarray:
        rank = int(geometry.lattice_rank(np.asarray(p)[None], self.level)[0])
        return self.rows[rank].copy()


def _pivot_eps(source: StencilSource) -> float:
    if source.constant:
        scale = abs(float(source.data[geometry.C]))
    else:
        scale = float(np.abs(source.data[:, geometry.C]).max())
    return 1e-300 * max(scale, 1.0)


def factorize_tet(source: StencilSource, level: int, *, full_store: bool = True,
                  collect_ranks: np.ndarray | None = None) -> FactorizationResult:
    """Run the streaming factorization over one macro-tetrahedron interior.

    Parameters
    ----------
    source : stencil rows of the operator on this tetrahedron.
    full_store : keep every factor row, indexed by full-lattice rank.
    collect_ranks : sorted lattice ranks at which factor rows are emitted
        while streaming (sampling, boundary stores, line dumps).
    """
    n = 2 ** level
    _, rowoff = geometry.rank_tables(level)
    arows, aconst = source.kernel_args
    if collect_ranks is None:
        collect_ranks = np.empty(0, dtype=np.int64)
    collect_ranks = np.asarray(collect_ranks, dtype=np.int64)
    collected = np.zeros((len(collect_ranks), 9))
    rows = np.zeros((geometry.grid_size(level), 9)) if full_store else np.zeros((1, 9))

    status = _kernels.factorize_stream(
        n, rowoff, arows, aconst, rows, full_store,
        collect_ranks, collected, _pivot_eps(source),
    )
    if status != 0:
        coord = geometry.enumerate_grid(level)[status - 1]
        raise PivotBreakdown(coord)

    tri = (n + 1) * (n + 2) // 2
    aux_bytes = 2 * tri * 8 * 8 + collected.nbytes
    return FactorizationResult(
        level=level,
        rows=rows if full_store else None,
        collected=collected if len(collect_ranks) else None,
        aux_bytes=aux_bytes,
        store_bytes=rows.nbytes if full_store else 0,
    )


def factorize_tet_reference(source: StencilSource, level: int) -> np.ndarray:
    """Pure-python factorization via :func:`factor_step`; used to validate
    the streaming kernel."""
    n = 2 ** level
    layers = FaceLayerPair(n)
    rows = np.zeros((geometry.grid_size(level), 9))
    interior = geometry.enumerate_grid(level, "interior")
    ranks = geometry.lattice_rank(interior, level)
    by_z: dict[int, list[tuple[int, int, int]]] = {}
    for (x, y, z), r in zip(interior, ranks):
        by_z.setdefault(int(z), []).append((int(x), int(y), int(r)))
    for z in sorted(by_z):
        for x, y, r in by_z[z]:
            a_row = _restricted_row(source, level, x, y, z)
            vals = factor_step(a_row, x, y, layers)
            rows[r, :8] = vals
            rows[r, 8] = 1.0 / vals[7]
        layers.advance()
    return rows


def _restricted_row(source: StencilSource, level: int, x: int, y: int, z: int) -> np.ndarray:
    row = source.row((x, y, z))
    p = np.array((x, y, z))
    for d in range(15):
        if d == geometry.C:
            continue
        if not geometry.is_interior(p + geometry.OFFSETS[d], level)[0]:
            row[d] = 0.0
    return row


class CellILU:
    """Matrix-based ILU(0) preconditioner of one cell interior.

    ``solve_into`` overwrites a full-lattice residual (zero outside the
    interior) with the correction (L D L^T)^{-1} r.
    """

    def __init__(self, result: FactorizationResult):
        if result.rows is None:
            raise ValueError("CellILU needs a full factor store")
        self.level = result.level
        self.rows = result.rows
        self._n = 2 ** result.level
        _, self._rowoff = geometry.rank_tables(result.level)

    def solve_into(self, w: np.ndarray) -> None:
        _kernels.ilu_forward(self._n, self._rowoff, self.rows, w)
        _kernels.ilu_backward(self._n, self._rowoff, self.rows, w)


def dump_factors_csv(result: FactorizationResult, path) -> None:
    """Per-coordinate factor records (x, y, z, L_w..L_be, D_c)."""
    interior = geometry.enumerate_grid(result.level, "interior")
    ranks = geometry.lattice_rank(interior, result.level)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x", "y", "z"] + list(FACTOR_COLUMNS[:8]))
        for (x, y, z), r in zip(interior, ranks):
            writer.writerow([x, y, z] + [f"{v:.17g}" for v in result.rows[r, :8]])
