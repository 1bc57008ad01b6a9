"""Geometric multigrid on hybrid macro-meshes.

Degrees of freedom live in one global vector per level; shared micro-vertices
on macro-vertices, -edges and -faces are unified through their integer
barycentric weights, so ghost values need no separate synchronization.  The
smoother follows the symmetric primitive sequence: Gauss-Seidel stages on
vertex, edge and face blocks, a symmetric block preconditioner on the cell
interiors, then the transposed interface stages in reverse order, with the
residual refreshed per stage.  On a single all-Dirichlet macro-tetrahedron
only the cell stage has free DoF, which recovers the plain interior smoother.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy import sparse

from . import _kernels, geometry
from .assembly import CoefficientField, StencilSource, assemble_cell_matrix, stencil_source
from .ilu import CellILU, factorize_tet
from .surrogate import SurrogateILU, SurrogateOperator, build_surrogate_ilu, build_surrogate_operator

__all__ = [
    "SmootherConfig",
    "LevelSpace",
    "GridFunction",
    "Hierarchy",
    "pcg_solve",
    "NotSPDError",
]


class NotSPDError(RuntimeError):
    pass


@dataclass(frozen=True)
class SmootherConfig:
    """Smoother selection for the cell interiors.

    kind : 'gs', 'sgs', 'ilu' or 'surrogate_ilu'.
    degrees : polynomial degrees (x, y, z) of the factor surrogates.
    variant : 'v1' stores exact boundary-band factor rows, 'v2' relies on
        the surrogate everywhere and zeroes boundary-pointing entries.
    sample_level : coarse sampling level for the least-squares fit
        (default: two below the current level, clamped to >= 2).
    a_mode : residual evaluation, 'assembled' or 'surrogate'.
    a_degrees : degrees of the operator surrogate when a_mode='surrogate'.
    """

    kind: str = "sgs"
    degrees: tuple = (3, 3, 3)
    variant: str = "v1"
    sample_level: int | None = None
    a_mode: str = "assembled"
    a_degrees: tuple = (3, 3, 3)

    def __post_init__(self):
        if self.kind not in ("gs", "sgs", "ilu", "surrogate_ilu"):
            raise ValueError(f"unknown smoother kind {self.kind!r}")
        if self.variant not in ("v1", "v2"):
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.a_mode not in ("assembled", "surrogate"):
            raise ValueError(f"unknown a_mode {self.a_mode!r}")

    @property
    def symmetric(self) -> bool:
        return self.kind != "gs"


# ---------------------------------------------------------------------------
# global numbering
# ---------------------------------------------------------------------------

class LevelSpace:
    """Global DoF numbering of a macro-mesh at one refinement level."""

    def __init__(self, mesh, level: int):
        if level < 2:
            raise ValueError("refinement hierarchy starts at level 2")
        self.mesh = mesh
        self.level = level
        self.n = 2 ** level
        self.coords = geometry.enumerate_grid(level)
        self.interior_mask = geometry.is_interior(self.coords, level)
        self.interior_ranks = np.nonzero(self.interior_mask)[0]
        self._number()

    # -- construction -------------------------------------------------

    def _number(self):
        mesh, n = self.mesh, self.n
        ncells = mesh.num_cells
        nfull = len(self.coords)

        if ncells == 1 and len(mesh.dirichlet_faces) == 4:
            # single all-Dirichlet tetrahedron: identity numbering
            self.ndof = nfull
            self.cell_dof = [np.arange(nfull, dtype=np.int64)]
            self.free = self.interior_mask.copy()
            self.prim_dofs = {"vertex": [], "edge": [], "face": []}
            self.cell_interior = [self.interior_ranks.copy()]
            return

        x, y, z = self.coords[:, 0], self.coords[:, 1], self.coords[:, 2]
        weights = np.stack([n - x - y - z, x, y, z], axis=1)

        bnd_faces_of = self._boundary_face_lookup()
        key_to_id: dict = {}
        dirichlet: list[bool] = []
        prim_entries: dict = {"vertex": {}, "edge": {}, "face": {}}
        self.cell_dof = []
        for ci in range(ncells):
            vids = mesh.cells[ci]
            gids = np.empty(nfull, dtype=np.int64)
            for r in range(nfull):
                wr = weights[r]
                key = tuple(sorted((int(vids[k]), int(wr[k])) for k in range(4) if wr[k] > 0))
                gid = key_to_id.get(key)
                if gid is None:
                    gid = len(key_to_id)
                    key_to_id[key] = gid
                    dirichlet.append(self._classify(key, bnd_faces_of, prim_entries, gid))
                gids[r] = gid
            self.cell_dof.append(gids)
        self.ndof = len(key_to_id)
        self.free = ~np.array(dirichlet, dtype=bool)
        self.cell_interior = [gids[self.interior_ranks] for gids in self.cell_dof]
        self.prim_dofs = {
            kind: [
                np.array([gid for _, gid in sorted(entries)], dtype=np.int64)
                for prim, entries in sorted(prim_entries[kind].items())
                if entries and not self._prim_dirichlet(prim, bnd_faces_of)
            ]
            for kind in ("vertex", "edge", "face")
        }

    def _boundary_face_lookup(self):
        mesh = self.mesh
        lookup: dict = {}
        for f in mesh.boundary_faces:
            tag = mesh.face_is_dirichlet(f)
            for sub in self._subsets(f):
                lookup.setdefault(sub, []).append(tag)
        return lookup

    @staticmethod
    def _subsets(face):
        a, b, c = face
        return [(a,), (b,), (c,), (a, b), (a, c), (b, c), (a, b, c)]

    @staticmethod
    def _prim_dirichlet(prim, bnd_faces_of) -> bool:
        tags = bnd_faces_of.get(prim, [])
        return bool(tags) and all(tags)

    def _classify(self, key, bnd_faces_of, prim_entries, gid) -> bool:
        """Register the DoF with its owning primitive; Dirichlet iff it lies
        on the boundary and every containing boundary macro-face is tagged."""
        support = tuple(v for v, _ in key)
        if len(support) == 4:
            return False
        tags = bnd_faces_of.get(support, [])
        if len(support) == 1:
            prim_entries["vertex"].setdefault(support, []).append(((0,), gid))
        elif len(support) == 2:
            order = (key[1][1],)
            prim_entries["edge"].setdefault(support, []).append((order, gid))
        else:
            order = (key[1][1], key[2][1])
            prim_entries["face"].setdefault(support, []).append((order, gid))
        return bool(tags) and all(tags)

    # -- assembly -------------------------------------------------------

    def assemble_load(self, fn=None, geometry_map=None) -> np.ndarray:
        """Global load vector of int f v with Dirichlet entries zeroed."""
        from .assembly import assemble_cell_load

        out = np.zeros(self.ndof)
        for ci in range(self.mesh.num_cells):
            local = assemble_cell_load(self.mesh.cell_tet(ci), self.level, fn,
                                       geometry_map)
            np.add.at(out, self.cell_dof[ci], local)
        out[~self.free] = 0.0
        return out

    def assemble(self, coeff: CoefficientField, geometry_map=None) -> sparse.csr_matrix:
        """Global stiffness matrix with Dirichlet rows/columns replaced by
        identity (homogeneous elimination)."""
        blocks = []
        for ci in range(self.mesh.num_cells):
            tet = self.mesh.cell_tet(ci)
            local = assemble_cell_matrix(tet, self.level, coeff, geometry_map)
            gids = self.cell_dof[ci]
            blocks.append((gids[local.row], gids[local.col], local.data))
        rows = np.concatenate([b[0] for b in blocks])
        cols = np.concatenate([b[1] for b in blocks])
        vals = np.concatenate([b[2] for b in blocks])
        keep = self.free[rows] & self.free[cols]
        vals = np.where(keep, vals, 0.0)
        fixed = np.nonzero(~self.free)[0]
        rows = np.concatenate([rows, fixed])
        cols = np.concatenate([cols, fixed])
        vals = np.concatenate([vals, np.ones(len(fixed))])
        A = sparse.coo_matrix((vals, (rows, cols)), shape=(self.ndof, self.ndof)).tocsr()
        A.sum_duplicates()
        return A


@dataclass
class GridFunction:
    """Nodal values over all DoF of one level."""

    level: int
    values: np.ndarray

    def copy(self) -> "GridFunction":
        return GridFunction(self.level, self.values.copy())


# ---------------------------------------------------------------------------
# transfers
# ---------------------------------------------------------------------------

#: For each odd-parity class (x%2 + 2 y%2 + 4 z%2) the two coarse endpoint
#: maps a, b with a + b = fine coordinate (in coarse lattice units).
_PARITY_ENDPOINTS = {
    1: ((-1, 0, 0), (1, 0, 0)),
    2: ((0, -1, 0), (0, 1, 0)),
    4: ((0, 0, -1), (0, 0, 1)),
    3: ((1, -1, 0), (-1, 1, 0)),
    5: ((1, 0, -1), (-1, 0, 1)),
    6: ((0, 1, -1), (0, -1, 1)),
    7: ((-1, 1, -1), (1, -1, 1)),
}


def build_prolongation(coarse: LevelSpace, fine: LevelSpace) -> sparse.csr_matrix:
    """Linear interpolation: coinciding vertices copy, edge midpoints average
    their two coarse endpoints."""
    if fine.level != coarse.level + 1:
        raise ValueError("prolongation needs adjacent levels")
    seen = np.zeros(fine.ndof, dtype=bool)
    rows, cols, vals = [], [], []
    coords = fine.coords
    parity = (coords[:, 0] % 2) + 2 * (coords[:, 1] % 2) + 4 * (coords[:, 2] % 2)
    for ci in range(fine.mesh.num_cells):
        fdof = fine.cell_dof[ci]
        cdof = coarse.cell_dof[ci]
        new = ~seen[fdof]
        seen[fdof] = True
        even = new & (parity == 0)
        if even.any():
            cr = geometry.lattice_rank(coords[even] // 2, coarse.level)
            rows.append(fdof[even])
            cols.append(cdof[cr])
            vals.append(np.ones(even.sum()))
        for code, (da, db) in _PARITY_ENDPOINTS.items():
            sel = new & (parity == code)
            if not sel.any():
                continue
            half = (coords[sel] + np.array(da)) // 2
            ca = geometry.lattice_rank(half, coarse.level)
            cb = geometry.lattice_rank(half + np.array(db), coarse.level)
            for cc in (ca, cb):
                rows.append(fdof[sel])
                cols.append(cdof[cc])
                vals.append(np.full(sel.sum(), 0.5))
    P = sparse.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(fine.ndof, coarse.ndof),
    ).tocsr()
    P.sum_duplicates()
    return P


# ---------------------------------------------------------------------------
# cell preconditioners
# ---------------------------------------------------------------------------

class CellGS:
    """Gauss-Seidel block preconditioner of one cell interior, forward or
    symmetric (L D^-1 L^T)."""

    def __init__(self, source: StencilSource, symmetric: bool = True):
        self.level = source.level
        self.symmetric = symmetric
        self._arows, self._aconst = source.kernel_args
        self._n = 2 ** source.level
        _, self._rowoff = geometry.rank_tables(source.level)

    def solve_into(self, w: np.ndarray) -> None:
        _kernels.gs_solve(self._n, self._rowoff, self._arows, self._aconst,
                          w, self.symmetric)


def _build_cell_preconditioner(cfg: SmootherConfig, source: StencilSource, level: int):
    if cfg.kind in ("gs", "sgs"):
        return CellGS(source, symmetric=cfg.kind == "sgs")
    if cfg.kind == "ilu":
        return CellILU(factorize_tet(source, level))
    return build_surrogate_ilu(source, level, cfg.degrees, variant=cfg.variant,
                               sample_level=cfg.sample_level)


# ---------------------------------------------------------------------------
# hierarchy
# ---------------------------------------------------------------------------

class Hierarchy:
    """Multigrid hierarchy from ``lmin`` (coarse solve) to ``lmax``."""

    def __init__(self, mesh, lmin: int = 2, lmax: int = 6,
                 coeff: CoefficientField | None = None, geometry_map=None,
                 smoother: SmootherConfig | None = None,
                 nu_pre: int = 3, nu_post: int = 3, coarse_tol: float = 1e-12):
        if not 2 <= lmin <= lmax:
            raise ValueError("need 2 <= lmin <= lmax")
        self.mesh = mesh
        self.levels = list(range(lmin, lmax + 1))
        self.coeff = coeff if coeff is not None else CoefficientField.constant(1.0)
        self.geometry_map = geometry_map
        self.smoother_config = smoother if smoother is not None else SmootherConfig()
        self.nu_pre = nu_pre
        self.nu_post = nu_post
        self.coarse_tol = coarse_tol

        self.spaces = [LevelSpace(mesh, l) for l in self.levels]
        self.A = [sp.assemble(self.coeff, geometry_map) for sp in self.spaces]
        self.P = [build_prolongation(self.spaces[i], self.spaces[i + 1])
                  for i in range(len(self.levels) - 1)]
        self.sources = [
            [stencil_source(mesh.cell_tet(ci), sp.level, self.coeff, geometry_map)
             for ci in range(mesh.num_cells)]
            for sp in self.spaces
        ]
        self._cell_precs: dict = {}
        self._a_surrogates: dict = {}
        self._prim_blocks: dict = {}

    # -- level helpers --------------------------------------------------

    @property
    def top(self) -> int:
        return len(self.levels) - 1

    def space(self, li: int) -> LevelSpace:
        return self.spaces[li]

    def zero(self, li: int) -> GridFunction:
        return GridFunction(self.levels[li], np.zeros(self.spaces[li].ndof))

    def cell_preconditioners(self, li: int):
        if li not in self._cell_precs:
            cfg = self.smoother_config
            self._cell_precs[li] = [
                _build_cell_preconditioner(cfg, src, self.levels[li])
                for src in self.sources[li]
            ]
        return self._cell_precs[li]

    def a_surrogate(self, li: int, ci: int) -> SurrogateOperator:
        key = (li, ci)
        if key not in self._a_surrogates:
            cfg = self.smoother_config
            self._a_surrogates[key] = build_surrogate_operator(
                self.sources[li][ci], self.levels[li], cfg.a_degrees,
                sample_level=cfg.sample_level)
        return self._a_surrogates[key]

    def _blocks(self, li: int, kind: str):
        key = (li, kind)
        if key not in self._prim_blocks:
            A = self.A[li]
            self._prim_blocks[key] = [
                (ids, A[np.ix_(ids, ids)].tocsr())
                for ids in self.spaces[li].prim_dofs[kind]
            ]
        return self._prim_blocks[key]

    # -- transfers --------------------------------------------------------

    def prolongate(self, gf: GridFunction) -> GridFunction:
        li = self.levels.index(gf.level)
        if li + 1 > self.top:
            raise ValueError("already on the finest level")
        return GridFunction(self.levels[li + 1], self.P[li] @ gf.values)

    def restrict(self, gf: GridFunction) -> GridFunction:
        li = self.levels.index(gf.level)
        if li == 0:
            raise ValueError("already on the coarsest level")
        return GridFunction(self.levels[li - 1], self.P[li - 1].T @ gf.values)

    # -- smoother ----------------------------------------------------------

    def _interface_stage(self, li: int, u, f, kind: str, transposed: bool):
        blocks = self._blocks(li, kind)
        if not blocks:
            return
        r = f - self.A[li] @ u
        for ids, block in blocks:
            b = r[ids]
            zv = np.empty_like(b)
            if transposed:
                _kernels.csr_upper_solve(block.indptr, block.indices, block.data, b, zv)
            else:
                _kernels.csr_lower_solve(block.indptr, block.indices, block.data, b, zv)
            u[ids] += zv

    def _cell_stage(self, li: int, u, f):
        sp = self.spaces[li]
        cfg = self.smoother_config
        precs = self.cell_preconditioners(li)
        use_surrogate_a = cfg.a_mode == "surrogate" and cfg.kind == "surrogate_ilu"
        if not use_surrogate_a:
            r = f - self.A[li] @ u
        for ci in range(sp.mesh.num_cells):
            w = np.zeros(len(sp.coords))
            if use_surrogate_a:
                gids = sp.cell_dof[ci]
                self.a_surrogate(li, ci).residual_into(u[gids], f[gids], w)
            else:
                w[sp.interior_ranks] = r[sp.cell_interior[ci]]
            precs[ci].solve_into(w)
            u[sp.cell_interior[ci]] += w[sp.interior_ranks]

    def smooth(self, li: int, u: np.ndarray, f: np.ndarray):
        """One application of the primitive-sequence smoother."""
        if self.smoother_config.symmetric:
            for kind in ("vertex", "edge", "face"):
                self._interface_stage(li, u, f, kind, transposed=False)
            self._cell_stage(li, u, f)
            for kind in ("face", "edge", "vertex"):
                self._interface_stage(li, u, f, kind, transposed=True)
        else:
            for kind in ("vertex", "edge", "face"):
                self._interface_stage(li, u, f, kind, transposed=False)
            self._cell_stage(li, u, f)

    # -- cycles ------------------------------------------------------------

    def coarse_solve(self, u: np.ndarray, f: np.ndarray):
        li = 0
        A = self.A[li]
        free = self.spaces[li].free
        b = np.where(free, f, 0.0)
        nb = np.linalg.norm(b)
        if nb == 0.0:
            u[free] = 0.0
            return
        x, _, _ = pcg_solve(lambda v: A @ v, b, tol=self.coarse_tol * nb,
                            max_iter=10 * self.spaces[li].ndof)
        u[:] = np.where(free, x, u)

    def v_cycle(self, li: int, u: np.ndarray, f: np.ndarray):
        """Standard V-cycle with pre/post smoothing and coarse PCG solve."""
        if li == 0:
            self.coarse_solve(u, f)
            return
        for _ in range(self.nu_pre):
            self.smooth(li, u, f)
        free = self.spaces[li].free
        r = f - self.A[li] @ u
        r[~free] = 0.0
        rc = self.P[li - 1].T @ r
        rc[~self.spaces[li - 1].free] = 0.0
        ec = np.zeros(self.spaces[li - 1].ndof)
        self.v_cycle(li - 1, ec, rc)
        u += self.P[li - 1] @ ec
        u[~free] = 0.0
        for _ in range(self.nu_post):
            self.smooth(li, u, f)

    def solve(self, f: np.ndarray, tol: float = 1e-10, max_cycles: int = 100,
              u0: np.ndarray | None = None):
        """V-cycle iteration until the relative residual drops below tol."""
        li = self.top
        free = self.spaces[li].free
        u = np.zeros(self.spaces[li].ndof) if u0 is None else u0.copy()
        b = np.where(free, f, 0.0)
        nb = np.linalg.norm(b)
        if nb == 0.0:
            return u, 0
        for k in range(1, max_cycles + 1):
            self.v_cycle(li, u, b)
            if np.linalg.norm(np.where(free, b - self.A[li] @ u, 0.0)) <= tol * nb:
                return u, k
        return u, max_cycles

    # -- convergence estimation ---------------------------------------------

    def convergence_factor(self, steps: int = 20, seed: int = 42) -> float:
        """Asymptotic error-reduction factor of the V-cycle, estimated by a
        normalized power iteration on the error propagator (f = 0)."""
        li = self.top
        sp = self.spaces[li]
        rng = np.random.default_rng(seed)
        e = rng.standard_normal(sp.ndof)
        e[~sp.free] = 0.0
        e /= np.linalg.norm(e)
        f = np.zeros(sp.ndof)
        rho = 0.0
        for _ in range(steps):
            self.v_cycle(li, e, f)
            rho = float(np.linalg.norm(e))
            if not np.isfinite(rho) or rho == 0.0:
                raise RuntimeError("power iteration collapsed")
            e /= rho
        return rho

    # -- preconditioner interfaces -------------------------------------------

    def smoother_preconditioner(self, li: int | None = None):
        """One symmetric smoother application from a zero guess, as an SPD
        preconditioner for conjugate gradients."""
        if not self.smoother_config.symmetric:
            raise NotSPDError("forward Gauss-Seidel is not a symmetric preconditioner")
        li = self.top if li is None else li

        def apply(r: np.ndarray) -> np.ndarray:
            z = np.zeros_like(r)
            self.smooth(li, z, r)
            return z

        return apply

    def vcycle_preconditioner(self):
        if not self.smoother_config.symmetric:
            raise NotSPDError("V-cycle with nonsymmetric smoothing is not SPD")

        def apply(r: np.ndarray) -> np.ndarray:
            z = np.zeros_like(r)
            self.v_cycle(self.top, z, r)
            return z

        return apply


# ---------------------------------------------------------------------------
# conjugate gradients
# ---------------------------------------------------------------------------

def pcg_solve(apply_a, b: np.ndarray, preconditioner=None, tol: float = 1e-10,
              max_iter: int = 10000, x0: np.ndarray | None = None):
    """Preconditioned conjugate gradients down to an absolute residual.

    Returns (x, iterations, residual history); raises NotSPDError on a
    nonpositive curvature direction.
    """
    x = np.zeros_like(b) if x0 is None else x0.copy()
    r = b - apply_a(x)
    resids = [float(np.linalg.norm(r))]
    if resids[0] < tol:
        return x, 0, resids
    z = preconditioner(r) if preconditioner is not None else r
    p = z.copy()
    rz = float(r @ z)
    for k in range(1, max_iter + 1):
        Ap = apply_a(p)
        pAp = float(p @ Ap)
        if pAp <= 0.0:
            raise NotSPDError("nonpositive curvature in conjugate gradients")
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        resids.append(float(np.linalg.norm(r)))
        if resids[-1] < tol:
            return x, k, resids
        z = preconditioner(r) if preconditioner is not None else r
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    return x, max_iter, resids
