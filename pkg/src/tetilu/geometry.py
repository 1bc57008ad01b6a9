"""Macro meshes, logical grid coordinates and stencil direction algebra.

A macro-tetrahedron refined ``level`` times carries micro-vertices at the
logical lattice coordinates

    ``G = {(x, y, z) : x, y, z >= 0 and x + y + z <= 2**level}``

with the interior subset requiring ``x, y, z >= 1`` and
``x + y + z <= 2**level - 1``.  Degrees of freedom are ordered
lexicographically by (z, y, x).  Each interior vertex couples to its 14
lattice neighbours; together with the center this yields the 15 named
stencil directions used throughout the package.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import permutations

import numpy as np

__all__ = [
    "DIRECTION_NAMES",
    "OFFSETS",
    "LOWER",
    "UPPER",
    "C",
    "direction_index",
    "direction_offset",
    "negate_direction",
    "num_lattice_points",
    "grid_size",
    "interior_size",
    "enumerate_grid",
    "is_interior",
    "lattice_rank",
    "rank_tables",
    "CELL_CLASS_OFFSETS",
    "VERTEX_ADJACENT_ELEMENTS",
    "cell_class_anchors",
    "MacroTet",
    "MacroMesh",
    "single_tet_mesh",
    "regular_tet",
    "spindle_tet",
    "cap_tet",
    "spade_tet",
    "trirect_tet",
    "shell_tet",
    "shell_blending_map",
    "cube_mesh",
    "read_mesh",
    "write_mesh",
]

# ---------------------------------------------------------------------------
# stencil directions
# ---------------------------------------------------------------------------

#: Direction names: w/e along x, s/n along y, b*/t* one layer down/up in z.
DIRECTION_NAMES = (
    "w", "s", "se", "bnw", "bn", "bc", "be",
    "c",
    "e", "n", "nw", "tse", "ts", "tc", "tw",
)

#: Lattice displacement of each direction, aligned with DIRECTION_NAMES.
OFFSETS = np.array(
    [
        (-1, 0, 0),   # w
        (0, -1, 0),   # s
        (1, -1, 0),   # se
        (-1, 1, -1),  # bnw
        (0, 1, -1),   # bn
        (0, 0, -1),   # bc
        (1, 0, -1),   # be
        (0, 0, 0),    # c
        (1, 0, 0),    # e
        (0, 1, 0),    # n
        (-1, 1, 0),   # nw
        (1, -1, 1),   # tse
        (0, -1, 1),   # ts
        (0, 0, 1),    # tc
        (-1, 0, 1),   # tw
    ],
    dtype=np.int64,
)

W, S, SE, BNW, BN, BC, BE, C, E, N, NW, TSE, TS, TC, TW = range(15)

#: Directions preceding the center in the (z, y, x) lattice order.
LOWER = (W, S, SE, BNW, BN, BC, BE)
UPPER = (E, N, NW, TSE, TS, TC, TW)

_NAME_TO_INDEX = {name: i for i, name in enumerate(DIRECTION_NAMES)}
_OFFSET_TO_INDEX = {tuple(off): i for i, off in enumerate(OFFSETS)}


def direction_index(name: str) -> int:
    """Index of a direction given its name, e.g. ``'bnw'`` -> 3."""
    try:
        return _NAME_TO_INDEX[name]
    except KeyError:
        raise ValueError(f"unknown stencil direction {name!r}") from None


def direction_offset(d) -> np.ndarray:
    """Lattice displacement of direction ``d`` (index or name)."""
    if isinstance(d, str):
        d = direction_index(d)
    return OFFSETS[d].copy()


def negate_direction(d: int) -> int:
    """Index of the opposite direction; maps lower <-> upper, fixes c."""
    return _OFFSET_TO_INDEX[tuple(-OFFSETS[d])]


# ---------------------------------------------------------------------------
# logical lattice
# ---------------------------------------------------------------------------

def num_lattice_points(m: int) -> int:
    """Number of nonnegative integer triples with x + y + z <= m."""
    if m < 0:
        return 0
    return (m + 1) * (m + 2) * (m + 3) // 6


def grid_size(level: int) -> int:
    """Total micro-vertices of a macro-tetrahedron at ``level``."""
    return num_lattice_points(2 ** level)


def interior_size(level: int) -> int:
    """Number of interior micro-vertices at ``level``."""
    return num_lattice_points(2 ** level - 4)


def enumerate_grid(level: int, region: str = "full", z: int | None = None) -> np.ndarray:
    """Lattice coordinates of a region, ordered lexicographically by (z, y, x).

    Parameters
    ----------
    level : refinement level, >= 2.
    region : one of ``full``, ``interior``, ``boundary`` or ``face_layer``
        (the latter returns the slice at height ``z``).
    """
    if level < 2:
        raise ValueError("refinement hierarchy starts at level 2")
    n = 2 ** level
    if region == "face_layer":
        if z is None or not 0 <= z <= n:
            raise ValueError("face_layer needs 0 <= z <= 2**level")
        coords = enumerate_grid_simplex(n - z)[:, [0, 1, 2]]
        coords = coords[coords[:, 2] == 0]
        coords[:, 2] = z
        return coords
    if region not in ("full", "interior", "boundary"):
        raise ValueError(f"unknown region {region!r}")

    rows = []
    lo = 1 if region == "interior" else 0
    top = n - 1 if region == "interior" else n
    for zc in range(lo, top + 1):
        for yc in range(lo, top - zc + 1):
            if top - zc - yc < lo:
                continue
            xs = np.arange(lo, top - zc - yc + 1)
            row = np.empty((xs.size, 3), dtype=np.int64)
            row[:, 0] = xs
            row[:, 1] = yc
            row[:, 2] = zc
            rows.append(row)
    coords = np.concatenate(rows) if rows else np.empty((0, 3), dtype=np.int64)
    if region == "boundary":
        coords = coords[~is_interior(coords, level)]
    return coords


def is_interior(coords: np.ndarray, level: int) -> np.ndarray:
    """Boolean mask of interior lattice coordinates."""
    coords = np.atleast_2d(np.asarray(coords, dtype=np.int64))
    n = 2 ** level
    return (coords >= 1).all(axis=1) & (coords.sum(axis=1) < n)


def lattice_rank(coords: np.ndarray, level: int) -> np.ndarray:
    """Rank of coordinates in the (z, y, x)-lexicographic full enumeration."""
    coords = np.atleast_2d(np.asarray(coords, dtype=np.int64))
    n = 2 ** level
    x, y, z = coords[:, 0], coords[:, 1], coords[:, 2]
    if np.any(coords < 0) or np.any(x + y + z > n):
        raise ValueError("coordinate outside the lattice")
    m = n - z
    zoff = num_lattice_points(n) - (m + 1) * (m + 2) * (m + 3) // 6
    yoff = y * (n - z + 1) - y * (y - 1) // 2
    return zoff + yoff + x


def rank_tables(level: int) -> tuple[np.ndarray, np.ndarray]:
    """Lookup tables for kernels: per-z offsets and per-(z, y) row starts.

    ``rowoff[z, y] + x`` is the full-lattice rank of (x, y, z); rows outside
    the lattice hold -1.
    """
    n = 2 ** level
    zoff = np.empty(n + 2, dtype=np.int64)
    for z in range(n + 2):
        zoff[z] = num_lattice_points(n) - num_lattice_points(n - min(z, n + 1))
    rowoff = np.full((n + 1, n + 1), -1, dtype=np.int64)
    for z in range(n + 1):
        for y in range(n - z + 1):
            rowoff[z, y] = zoff[z] + y * (n - z + 1) - y * (y - 1) // 2
    return zoff, rowoff


# ---------------------------------------------------------------------------
# micro-element structure
# ---------------------------------------------------------------------------

#: Vertex offsets (from the anchor) of the six translation classes of the
#: structured tetrahedral subdivision.  All edges of these elements lie along
#: stencil directions, which keeps the vertex neighbourhood 15-point.
CELL_CLASS_OFFSETS = np.array(
    [
        [(0, 0, 0), (0, 0, 1), (0, 1, 0), (1, 0, 0)],
        [(0, 0, 1), (0, 1, 0), (0, 1, 1), (1, 0, 1)],
        [(0, 0, 1), (0, 1, 0), (1, 0, 0), (1, 0, 1)],
        [(0, 1, 0), (0, 1, 1), (1, 0, 1), (1, 1, 0)],
        [(0, 1, 0), (1, 0, 0), (1, 0, 1), (1, 1, 0)],
        [(0, 1, 1), (1, 0, 1), (1, 1, 0), (1, 1, 1)],
    ],
    dtype=np.int64,
)

#: Largest coordinate sum within each class; anchors a are valid iff
#: sum(a) <= 2**level - that value.
CELL_CLASS_MAX_SUM = CELL_CLASS_OFFSETS.sum(axis=2).max(axis=1)


def _build_vertex_adjacency() -> list[tuple[int, np.ndarray, int]]:
    adj = []
    for ci in range(6):
        for li in range(4):
            adj.append((ci, -CELL_CLASS_OFFSETS[ci, li], li))
    return adj


#: The 24 micro-elements adjacent to an interior vertex p, as
#: (class index, anchor offset relative to p, local index of p).
VERTEX_ADJACENT_ELEMENTS = _build_vertex_adjacency()


def cell_class_anchors(level: int, class_index: int) -> np.ndarray:
    """Anchor coordinates of all elements of one class inside the macro-tet."""
    n = 2 ** level
    return enumerate_grid_simplex(n - int(CELL_CLASS_MAX_SUM[class_index]))


def enumerate_grid_simplex(m: int) -> np.ndarray:
    """All nonnegative integer triples with x + y + z <= m, (z, y, x) order."""
    if m < 0:
        return np.empty((0, 3), dtype=np.int64)
    rows = []
    for z in range(m + 1):
        for y in range(m - z + 1):
            xs = np.arange(0, m - z - y + 1)
            row = np.empty((xs.size, 3), dtype=np.int64)
            row[:, 0] = xs
            row[:, 1] = y
            row[:, 2] = z
            rows.append(row)
    return np.concatenate(rows)


# ---------------------------------------------------------------------------
# macro-tetrahedron
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MacroTet:
    """A macro-tetrahedron with an ordered vertex list.

    The vertex order fixes the coordinate frame: the base point is the first
    vertex and the edge vectors d_i run from it to the remaining three.  The
    frame determines both micro-vertex positions and the DoF ordering, so
    permuting the vertex list changes smoother behaviour while leaving the
    geometry untouched.
    """

    vertices: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64)
        if v.shape != (4, 3):
            raise ValueError("MacroTet needs exactly four 3D vertices")
        object.__setattr__(self, "vertices", v)

    @property
    def base_point(self) -> np.ndarray:
        return self.vertices[0]

    @property
    def edge_matrix(self) -> np.ndarray:
        """Rows are the spanning edge vectors d_1, d_2, d_3."""
        return self.vertices[1:] - self.vertices[0]

    @property
    def volume(self) -> float:
        return abs(np.linalg.det(self.edge_matrix)) / 6.0

    def micro_vertex_position(self, coords: np.ndarray, level: int) -> np.ndarray:
        """Physical position of logical coordinates: p1 + (x d1 + y d2 + z d3) / 2**level."""
        coords = np.asarray(coords, dtype=np.float64)
        single = coords.ndim == 1
        coords = np.atleast_2d(coords)
        n = 2 ** level
        if np.any(coords < 0) or np.any(coords.sum(axis=1) > n):
            raise ValueError("logical coordinate outside the macro-tetrahedron")
        pos = self.base_point + coords @ self.edge_matrix / n
        return pos[0] if single else pos

    def permuted(self, perm) -> "MacroTet":
        """Reorder the vertex list by ``perm`` (0-based); same point set."""
        perm = tuple(int(p) for p in perm)
        if sorted(perm) != [0, 1, 2, 3]:
            raise ValueError(f"{perm} is not a permutation of (0, 1, 2, 3)")
        return MacroTet(self.vertices[list(perm)])


def permute_macro_tet(tet: MacroTet, perm) -> MacroTet:
    """Free-function alias for :meth:`MacroTet.permuted`."""
    return tet.permuted(perm)


def all_vertex_permutations():
    """The 24 vertex permutations, in lexicographic order."""
    return list(permutations(range(4)))


# ---------------------------------------------------------------------------
# macro-mesh
# ---------------------------------------------------------------------------

@dataclass
class MacroMesh:
    """Conforming macro-mesh: vertices, cells and boundary tags on faces.

    ``cells`` rows are ordered vertex indices; the order defines each cell's
    coordinate frame.  Faces are stored as sorted vertex triples; boundary
    faces (adjacent to exactly one cell) carry a Dirichlet flag.
    """

    vertices: np.ndarray
    cells: np.ndarray
    dirichlet_faces: set = field(default_factory=set)

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64)
        self.cells = np.asarray(self.cells, dtype=np.int64)
        if self.cells.ndim != 2 or self.cells.shape[1] != 4:
            raise ValueError("cells must be an (n, 4) index array")
        self._build_topology()
        self.validate()

    def _build_topology(self):
        faces = {}
        edges = set()
        for ci, cell in enumerate(self.cells):
            vs = sorted(int(v) for v in cell)
            for tri in ((0, 1, 2), (0, 1, 3), (0, 2, 3), (1, 2, 3)):
                key = (vs[tri[0]], vs[tri[1]], vs[tri[2]])
                faces.setdefault(key, []).append(ci)
            for i in range(4):
                for j in range(i + 1, 4):
                    edges.add((vs[i], vs[j]))
        self.faces = sorted(faces)
        self.face_cells = {f: tuple(faces[f]) for f in self.faces}
        self.edges = sorted(edges)
        self.boundary_faces = [f for f in self.faces if len(self.face_cells[f]) == 1]

    def validate(self):
        for f, cs in self.face_cells.items():
            if len(cs) > 2:
                raise ValueError(f"face {f} shared by more than two cells")
        for f in self.dirichlet_faces:
            if tuple(f) not in self.face_cells:
                raise ValueError(f"boundary tag on unknown face {f}")
        for ci in range(len(self.cells)):
            if self.cell_tet(ci).volume < 1e-14:
                raise ValueError(f"cell {ci} is degenerate")

    @property
    def num_cells(self) -> int:
        return len(self.cells)

    def cell_tet(self, ci: int) -> MacroTet:
        return MacroTet(self.vertices[self.cells[ci]])

    def permute_cell(self, ci: int, perm) -> None:
        """Apply a vertex permutation (0-based) to one cell's frame."""
        perm = list(perm)
        if sorted(perm) != [0, 1, 2, 3]:
            raise ValueError(f"{perm} is not a permutation of (0, 1, 2, 3)")
        self.cells[ci] = self.cells[ci][perm]

    def face_is_dirichlet(self, face) -> bool:
        return tuple(face) in self.dirichlet_faces

    def mark_all_boundary_dirichlet(self):
        self.dirichlet_faces = set(self.boundary_faces)


# ---------------------------------------------------------------------------
# builtin shapes
# ---------------------------------------------------------------------------

def single_tet_mesh(vertices, dirichlet: bool = True) -> MacroMesh:
    """One-cell mesh; by default all four faces are Dirichlet."""
    mesh = MacroMesh(np.asarray(vertices, dtype=np.float64), np.array([[0, 1, 2, 3]]))
    if dirichlet:
        mesh.mark_all_boundary_dirichlet()
    return mesh


def regular_tet() -> np.ndarray:
    """Regular tetrahedron with unit edge length."""
    return np.array(
        [
            (0.0, 0.0, 0.0),
            (1.0, 0.0, 0.0),
            (0.5, np.sqrt(3.0) / 2.0, 0.0),
            (0.5, np.sqrt(3.0) / 6.0, np.sqrt(6.0) / 3.0),
        ]
    )


def spindle_tet() -> np.ndarray:
    return np.array(
        [
            (0.0, 0.0, 0.5),
            (0.0, 0.0, -0.5),
            (0.5, 1.0, 0.0),
            (-0.5, 1.0, 0.0),
        ]
    )


def cap_tet() -> np.ndarray:
    return np.array(
        [
            (0.0, 0.0, 0.0),
            (1.0, 0.0, 0.0),
            (0.5, 0.866, 0.0),
            (0.5, 0.288, 0.093),
        ]
    )


def spade_tet() -> np.ndarray:
    return np.array(
        [
            (0.0, 0.0, 0.0),
            (1.0, -0.666, 0.0),
            (1.0, 0.666, 0.0),
            (1.0, 0.0, 0.443),
        ]
    )


def trirect_tet(height: float = 1.0) -> np.ndarray:
    """Trirectangular tetrahedron with unit legs in x, y and a z leg of ``height``."""
    return np.array(
        [
            (0.0, 0.0, 0.0),
            (1.0, 0.0, 0.0),
            (0.0, 1.0, 0.0),
            (0.0, 0.0, float(height)),
        ]
    )


# Aperture of the shell tetrahedron's outer triangle (colatitude of its
# vertices around the north pole).  Sized so the blended element carries the
# strong flat-element anisotropy of the shell benchmarks.
SHELL_APERTURE = 0.6

SHELL_OUTER_RADIUS = 1.0
SHELL_INNER_RADIUS = 0.9


def shell_tet(aperture: float = SHELL_APERTURE) -> np.ndarray:
    """Thin tetrahedron of a narrow spherical shell, cut from a prism: the
    outer face lies on the unit sphere, the apex sits radially below the
    first outer vertex on the inner sphere of radius 0.9."""
    a = float(aperture)
    base = []
    for phi in (0.0, 2 * np.pi / 3, 4 * np.pi / 3):
        base.append(
            (
                SHELL_OUTER_RADIUS * np.sin(a) * np.cos(phi),
                SHELL_OUTER_RADIUS * np.sin(a) * np.sin(phi),
                SHELL_OUTER_RADIUS * np.cos(a),
            )
        )
    apex = SHELL_INNER_RADIUS * np.asarray(base[0])
    return np.array(base + [apex])


def shell_blending_map(tet: MacroTet):
    """Radial blending onto the spherical shell for a macro-tet whose
    vertices sit on the inner/outer shell spheres.

    Points are projected radially so that the linearly interpolated vertex
    radius is attained exactly; the outer face lands on the unit sphere and
    all images satisfy 0.9 <= |x| <= 1.0.
    """
    verts = tet.vertices
    radii = np.linalg.norm(verts, axis=1)
    frame = np.linalg.inv(tet.edge_matrix.T)
    base = tet.base_point

    def blend(points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        norms = np.linalg.norm(points, axis=1)
        if np.any(norms < 1e-14):
            raise ValueError("blending map undefined at the origin")
        lam = (points - base) @ frame.T
        lam0 = 1.0 - lam.sum(axis=1)
        target = lam0 * radii[0] + lam @ radii[1:]
        return points * (target / norms)[:, None]

    return blend


def cube_mesh(h_lower: float = 0.5) -> MacroMesh:
    """Unit cube split into two boxes at height ``h_lower``, each box cut
    into six tetrahedra along its main diagonal.  Dirichlet on top and
    bottom, natural boundary conditions on the sides."""
    if not 0.0 < h_lower < 1.0:
        raise ValueError("h_lower must lie strictly between 0 and 1")
    zs = [0.0, float(h_lower), 1.0]
    verts = []
    vid = {}
    for z in zs:
        for y in (0.0, 1.0):
            for x in (0.0, 1.0):
                vid[(x, y, z)] = len(verts)
                verts.append((x, y, z))
    cells = []
    paths = list(permutations(range(3)))
    for layer in range(2):
        corner = {
            (bx, by, bz): vid[(float(bx), float(by), zs[layer + bz])]
            for bx in (0, 1) for by in (0, 1) for bz in (0, 1)
        }
        for path in paths:
            p = [0, 0, 0]
            quad = [corner[tuple(p)]]
            for axis in path:
                p[axis] = 1
                quad.append(corner[tuple(p)])
            cells.append(quad)
    mesh = MacroMesh(np.array(verts), np.array(cells))
    for f in mesh.boundary_faces:
        z = mesh.vertices[list(f), 2]
        if np.allclose(z, 0.0) or np.allclose(z, 1.0):
            mesh.dirichlet_faces.add(f)
    return mesh


# ---------------------------------------------------------------------------
# mesh file format
# ---------------------------------------------------------------------------

def write_mesh(mesh: MacroMesh, path) -> None:
    """Plain-text mesh: vertex coordinates, cell quadruples, boundary tags."""
    with open(path, "w") as fh:
        fh.write(f"vertices {len(mesh.vertices)}\n")
        for v in mesh.vertices:
            fh.write(f"{v[0]:.17g} {v[1]:.17g} {v[2]:.17g}\n")
        fh.write(f"cells {len(mesh.cells)}\n")
        for c in mesh.cells:
            fh.write(" ".join(str(int(i)) for i in c) + "\n")
        fh.write("boundary\n")
        for f in mesh.boundary_faces:
            tag = "dirichlet" if mesh.face_is_dirichlet(f) else "neumann"
            fh.write(f"{tag} {f[0]} {f[1]} {f[2]}\n")


def read_mesh(path) -> MacroMesh:
    with open(path) as fh:
        tokens = [
            line.split() for line in fh
            if line.strip() and not line.lstrip().startswith("#")
        ]
    it = iter(tokens)
    head = next(it)
    if head[0] != "vertices":
        raise ValueError("mesh file must start with a 'vertices' section")
    nv = int(head[1])
    verts = np.array([[float(x) for x in next(it)] for _ in range(nv)])
    head = next(it)
    if head[0] != "cells":
        raise ValueError("expected 'cells' section")
    nc = int(head[1])
    cells = np.array([[int(x) for x in next(it)] for _ in range(nc)])
    dirichlet = set()
    explicit = False
    for tok in it:
        if tok[0] == "boundary":
            explicit = True
            continue
        if tok[0] not in ("dirichlet", "neumann"):
            raise ValueError(f"unknown boundary tag {tok[0]!r}")
        if tok[0] == "dirichlet":
            dirichlet.add(tuple(sorted(int(v) for v in tok[1:4])))
    mesh = MacroMesh(verts, cells, dirichlet)
    if not explicit:
        mesh.mark_all_boundary_dirichlet()
    return mesh
