"""Interface reduction of the hybrid-grid system.

Eliminating all cell-interior DoF condenses the problem onto the macro
interface (vertices, edges, faces).  The condensed operator

    S = A_GG - sum_t A_Gt A_tt^{-1} A_tG

is applied matrix-free: each cell's interior solve reuses the single
tetrahedron machinery, either exactly (coarse levels) or by an inner V-cycle
with the factor-surrogate smoother.  The interface system is solved by
conjugate gradients with the interface diagonal as preconditioner, after
which the interiors are reconstructed cell by cell.
"""

from __future__ import annotations

import numpy as np
from scipy.sparse import linalg as sla

from .assembly import CoefficientField
from .geometry import MacroMesh, single_tet_mesh
from .multigrid import Hierarchy, LevelSpace, SmootherConfig, pcg_solve

__all__ = ["SchurComplement"]

_DEFAULT_INNER_SMOOTHER = SmootherConfig(kind="surrogate_ilu", degrees=(3, 3, 3))


class InnerSolveError(RuntimeError):
    pass


class SchurComplement:
    """Steklov-Poincare operator of one refinement level of a macro-mesh.

    Parameters
    ----------
    inner : 'exact' (sparse factorization of each interior block),
        'multigrid' (V-cycles with the configured smoother), or 'auto'
        (exact up to level 3, multigrid above).
    """

    def __init__(self, mesh: MacroMesh, level: int,
                 coeff: CoefficientField | None = None, geometry_map=None,
                 inner: str = "auto", inner_tol: float = 1e-8,
                 inner_max_cycles: int = 50,
                 inner_smoother: SmootherConfig | None = None):
        self.mesh = mesh
        self.level = level
        self.coeff = coeff if coeff is not None else CoefficientField.constant(1.0)
        self.geometry_map = geometry_map
        self.inner_tol = inner_tol
        self.inner_max_cycles = inner_max_cycles
        if inner == "auto":
            inner = "exact" if level <= 3 else "multigrid"
        if inner not in ("exact", "multigrid"):
            raise ValueError(f"unknown inner solver {inner!r}")
        self.inner = inner
        self.inner_smoother = inner_smoother or _DEFAULT_INNER_SMOOTHER

        self.space = LevelSpace(mesh, level)
        self.A = self.space.assemble(self.coeff, geometry_map)
        interface = np.concatenate(
            [ids for kind in ("vertex", "edge", "face")
             for ids in self.space.prim_dofs[kind]] or [np.empty(0, np.int64)])
        self.gamma_ids = np.sort(interface.astype(np.int64))
        if len(self.gamma_ids) == 0:
            raise ValueError("mesh has no free interface DoF to condense onto")
        self.A_gg = self.A[np.ix_(self.gamma_ids, self.gamma_ids)].tocsr()
        self._cells = []
        for ci in range(mesh.num_cells):
            t_ids = self.space.cell_interior[ci]
            A_tg = self.A[np.ix_(t_ids, self.gamma_ids)].tocsr()
            A_tt = self.A[np.ix_(t_ids, t_ids)].tocsr()
            self._cells.append({"ids": t_ids, "A_tg": A_tg, "A_tt": A_tt})
        self._inner_state = [None] * mesh.num_cells

    # -- interior solves ---------------------------------------------------

    def _inner_solve(self, ci: int, rhs: np.ndarray) -> np.ndarray:
        cell = self._cells[ci]
        if self.inner == "exact":
            if self._inner_state[ci] is None:
                self._inner_state[ci] = sla.splu(cell["A_tt"].tocsc())
            return self._inner_state[ci].solve(rhs)
        if self._inner_state[ci] is None:
            mesh_t = single_tet_mesh(self.mesh.cell_tet(ci).vertices)
            self._inner_state[ci] = Hierarchy(
                mesh_t, 2, self.level, coeff=self.coeff,
                geometry_map=self.geometry_map, smoother=self.inner_smoother)
        hier = self._inner_state[ci]
        sp = hier.space(hier.top)
        f = np.zeros(sp.ndof)
        f[sp.interior_ranks] = rhs
        u, cycles = hier.solve(f, tol=self.inner_tol, max_cycles=self.inner_max_cycles)
        resid = np.linalg.norm(np.where(sp.free, f - hier.A[hier.top] @ u, 0.0))
        if resid > 10 * self.inner_tol * np.linalg.norm(f):
            raise InnerSolveError(
                f"inner multigrid stalled on cell {ci} (residual {resid:.2e})")
        return u[sp.interior_ranks]

    # -- operator ------------------------------------------------------------

    def apply(self, u_gamma: np.ndarray) -> np.ndarray:
        """S u = A_GG u - sum_t A_Gt A_tt^{-1} A_tG u."""
        out = self.A_gg @ u_gamma
        for ci, cell in enumerate(self._cells):
            g = cell["A_tg"] @ u_gamma
            out -= cell["A_tg"].T @ self._inner_solve(ci, g)
        return out

    def rhs(self, b: np.ndarray) -> np.ndarray:
        """Condensed right-hand side chi = b_G - sum_t A_Gt A_tt^{-1} b_t."""
        chi = b[self.gamma_ids].copy()
        for ci, cell in enumerate(self._cells):
            chi -= cell["A_tg"].T @ self._inner_solve(ci, b[cell["ids"]])
        return chi

    def reconstruct(self, u_gamma: np.ndarray, b: np.ndarray) -> np.ndarray:
        """Full solution: interface values plus per-cell interior solves."""
        u = np.zeros(self.space.ndof)
        u[self.gamma_ids] = u_gamma
        for ci, cell in enumerate(self._cells):
            rhs = b[cell["ids"]] - cell["A_tg"] @ u_gamma
            u[cell["ids"]] = self._inner_solve(ci, rhs)
        return u

    def solve(self, b: np.ndarray, tol: float = 1e-10, max_iter: int = 10000):
        """Interface PCG (diagonal preconditioner) plus reconstruction.

        Returns (full solution, interface iterations, residual history).
        """
        chi = self.rhs(b)
        diag = self.A_gg.diagonal()
        u_gamma, iters, resids = pcg_solve(
            self.apply, chi, preconditioner=lambda r: r / diag,
            tol=tol * max(np.linalg.norm(chi), 1e-300), max_iter=max_iter)
        return self.reconstruct(u_gamma, b), iters, resids
