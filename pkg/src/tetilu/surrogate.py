"""Polynomial surrogates of factor and operator stencil fields.

Each stencil direction's field over a macro-tetrahedron is approximated by
one trivariate polynomial with independent degrees per axis, fitted by least
squares on a strided sample set collected while the factorization streams.
Sample coordinates are rescaled by the mesh width so the fit is level
independent.  During smoothing the polynomials are evaluated along lattice
rows by marching forward differences, which costs additions only.

Two substitution variants handle the boundary band (interior points whose
stencil touches the boundary): V1 stores the exact factor rows there, V2
evaluates the surrogate everywhere and zeroes entries that point into the
boundary.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels, geometry
from .assembly import StencilSource
from .ilu import factorize_tet

__all__ = [
    "SurrogatePolynomial",
    "SampleSet",
    "sample_set",
    "lsq_fit",
    "nddf_row_evaluate",
    "SurrogateILU",
    "build_surrogate_ilu",
    "SurrogateOperator",
    "build_surrogate_operator",
]


class RankDeficientFit(RuntimeError):
    pass


class EmptySampleSet(RuntimeError):
    pass


@dataclass
class SurrogatePolynomial:
    """Trivariate polynomial sum c[i,j,k] X^i Y^j Z^k over coordinates scaled
    by the mesh width ``spacing``."""

    degrees: tuple
    coef: np.ndarray
    spacing: float

    def evaluate_scaled(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        return _design_matrix(points, self.degrees) @ self.coef.ravel()

    def evaluate_logical(self, coords: np.ndarray) -> np.ndarray:
        return self.evaluate_scaled(np.asarray(coords, dtype=np.float64) * self.spacing)

    @classmethod
    def zero(cls, degrees: tuple, spacing: float) -> "SurrogatePolynomial":
        return cls(tuple(degrees), np.zeros(tuple(d + 1 for d in degrees)), spacing)


def _design_matrix(points: np.ndarray, degrees: tuple) -> np.ndarray:
    dgx, dgy, dgz = degrees
    px = points[:, 0][:, None] ** np.arange(dgx + 1)
    py = points[:, 1][:, None] ** np.arange(dgy + 1)
    pz = points[:, 2][:, None] ** np.arange(dgz + 1)
    return np.einsum("mi,mj,mk->mijk", px, py, pz).reshape(len(points), -1)


def lsq_fit(points: np.ndarray, values: np.ndarray, degrees: tuple,
            spacing: float = 1.0, label: str = "") -> SurrogatePolynomial:
    """Least-squares fit in the monomial basis, solved by orthogonal
    factorization.  Raises :class:`RankDeficientFit` on a rank-deficient
    design matrix."""
    degrees = tuple(int(d) for d in degrees)
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    M = _design_matrix(points, degrees)
    if M.shape[0] < M.shape[1]:
        raise RankDeficientFit(f"underdetermined fit{' for ' + label if label else ''}")
    sol, _, rank, _ = np.linalg.lstsq(M, np.asarray(values, dtype=np.float64), rcond=None)
    if rank < M.shape[1]:
        raise RankDeficientFit(f"rank-deficient design matrix{' for ' + label if label else ''}")
    shape = tuple(d + 1 for d in degrees)
    return SurrogatePolynomial(degrees, sol.reshape(shape), spacing)


def nddf_row_evaluate(poly: SurrogatePolynomial, start, count: int) -> np.ndarray:
    """Evaluate a polynomial along an x-row of equally spaced lattice points
    by forward differences: the leading values seed a difference table, each
    further value costs one addition per table entry."""
    if count <= 0:
        return np.empty(0)
    x0, y0, z0 = (int(c) for c in start)
    h = poly.spacing
    kx = poly.degrees[0]
    seedlen = min(kx + 1, count)
    pts = np.stack([
        (x0 + np.arange(seedlen)) * h,
        np.full(seedlen, y0 * h),
        np.full(seedlen, z0 * h),
    ], axis=1)
    table = poly.evaluate_scaled(pts)
    for order in range(1, seedlen):
        table[order:] = table[order:] - table[order - 1:-1].copy()
    out = np.empty(count)
    diffs = table.copy()
    for t in range(count):
        out[t] = diffs[0]
        for j in range(seedlen - 1):
            diffs[j] += diffs[j + 1]
    return out


# ---------------------------------------------------------------------------
# sample sets
# ---------------------------------------------------------------------------

@dataclass
class SampleSet:
    """Strided, direction-shifted interior sample coordinates."""

    direction: int
    level: int
    sample_level: int
    stride: int
    coords: np.ndarray

    @property
    def ranks(self) -> np.ndarray:
        return geometry.lattice_rank(self.coords, self.level)


def _sample_coords(d: int, level: int, stride: int) -> np.ndarray:
    """Interior points p with p = (1 - d) + stride * k and p + d interior.

    The shift by the direction keeps the samples closest to the boundary that
    still carry smooth-field values in that direction."""
    n = 2 ** level
    off = geometry.OFFSETS[d]
    shift = 1 - off
    axes = [np.arange(shift[a], n + 1, stride) for a in range(3)]
    gx, gy, gz = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)
    pts = pts[geometry.is_interior(pts, level)]
    if len(pts):
        pts = pts[geometry.is_interior(pts + off, level)]
    if len(pts):
        order = np.lexsort((pts[:, 0], pts[:, 1], pts[:, 2]))
        pts = pts[order]
    return pts


def sample_set(d: int, level: int, sample_level: int) -> SampleSet:
    """Sample set of one stencil direction for a coarse sampling level."""
    if not 2 <= sample_level <= level:
        raise ValueError("need 2 <= sample_level <= level")
    stride = max(2 ** (level - sample_level), 1)
    coords = _sample_coords(d, level, stride)
    if len(coords) == 0:
        raise EmptySampleSet(
            f"empty sample set for direction {geometry.DIRECTION_NAMES[d]!r} at level {level}")
    return SampleSet(d, level, sample_level, stride, coords)


def _supported_degrees(coord_sets: list[np.ndarray], degrees: tuple) -> tuple:
    """Clamp degrees to what the sample sets can resolve: enough distinct
    values per axis and at least as many samples as coefficients."""
    eff = list(degrees)
    counts = [len(c) for c in coord_sets if len(c)]
    for coords in coord_sets:
        if len(coords) == 0:
            continue
        for a in range(3):
            eff[a] = min(eff[a], len(np.unique(coords[:, a])) - 1)
    eff = [max(0, e) for e in eff]
    min_count = min(counts) if counts else 1
    while (eff[0] + 1) * (eff[1] + 1) * (eff[2] + 1) > min_count:
        j = int(np.argmax(eff))
        if eff[j] == 0:
            break
        eff[j] -= 1
    return tuple(eff)


def _choose_stride(level: int, sample_level: int | None, degrees: tuple,
                   directions) -> int:
    """Largest power-of-two stride (bounded by the requested sampling level)
    that still resolves the requested degrees along every axis."""
    lh = max(2, level - 2) if sample_level is None else max(2, min(sample_level, level))
    stride = 2 ** (level - lh)
    while stride > 1:
        sets = [_sample_coords(d, level, stride) for d in directions]
        if all(len(s) for s in sets) and _supported_degrees(sets, degrees) == tuple(degrees):
            break
        stride //= 2
    return stride


# ---------------------------------------------------------------------------
# surrogate ILU
# ---------------------------------------------------------------------------

def _fit_with_degrade(fit_all, degrees: tuple):
    """Run the fits, lowering the largest degree on rank deficiency (sparse
    staircase sample sets at coarse levels can defeat the count heuristics)."""
    deg = tuple(degrees)
    while True:
        try:
            return fit_all(deg), deg
        except RankDeficientFit:
            if max(deg) == 0:
                raise
            j = int(np.argmax(deg))
            deg = tuple(d - 1 if a == j else d for a, d in enumerate(deg))


def _band_ranks(level: int) -> np.ndarray:
    """Ranks of the boundary band: interior points whose stencil reaches the
    cell boundary (x, y or z equal 1, or on the last interior diagonal)."""
    n = 2 ** level
    coords = geometry.enumerate_grid(level, "interior")
    band = ((coords == 1).any(axis=1)) | (coords.sum(axis=1) == n - 1)
    return geometry.lattice_rank(coords[band], level)


class SurrogateILU:
    """Polynomial surrogate of the factor fields of one cell interior."""

    def __init__(self, level: int, degrees: tuple, variant: str,
                 polys: dict, band_ranks: np.ndarray, store_rows: np.ndarray,
                 sample_level: int, stride: int, aux_bytes: int):
        self.level = level
        self.degrees = degrees
        self.variant = variant
        self.polys = polys
        self.sample_level = sample_level
        self.stride = stride
        self.aux_bytes = aux_bytes
        self._band_ranks = band_ranks
        self._store_rows = store_rows
        self._n = 2 ** level
        _, self._rowoff = geometry.rank_tables(level)
        self._h = 1.0 / self._n
        self._lcoefs = np.stack([polys[geometry.DIRECTION_NAMES[d]].coef
                                 for d in geometry.LOWER])
        self._dcoefs = polys["inv_dc"].coef[None]

    @property
    def use_store(self) -> bool:
        return self.variant == "v1"

    def solve_into(self, w: np.ndarray) -> None:
        _kernels.surrogate_forward(self._n, self._rowoff, self._h, self._lcoefs,
                                   w, self.use_store, self._band_ranks, self._store_rows)
        _kernels.surrogate_backward(self._n, self._rowoff, self._h, self._lcoefs,
                                    self._dcoefs, w, self.use_store,
                                    self._band_ranks, self._store_rows)


def build_surrogate_ilu(source: StencilSource, level: int, degrees: tuple,
                        variant: str = "v1", sample_level: int | None = None,
                        ) -> SurrogateILU:
    """Stream the factorization once, collecting strided factor samples (and
    the boundary band for V1), then solve the eight least-squares problems.
    The center target is the multiplicative inverse of the diagonal."""
    if variant not in ("v1", "v2"):
        raise ValueError(f"unknown variant {variant!r}")
    degrees = tuple(int(d) for d in degrees)
    targets = list(geometry.LOWER) + [geometry.C]
    stride = _choose_stride(level, sample_level, degrees, targets)

    band = _band_ranks(level) if variant == "v1" else np.empty(0, dtype=np.int64)
    while True:
        sets: dict[int, np.ndarray] = {}
        for d in targets:
            coords = _sample_coords(d, level, stride)
            if len(coords) == 0 and level > 2:
                raise EmptySampleSet(
                    f"empty sample set for direction {geometry.DIRECTION_NAMES[d]!r}")
            sets[d] = coords
        eff_degrees = _supported_degrees([sets[d] for d in targets], degrees)

        rank_lists = [geometry.lattice_rank(c, level) for c in sets.values() if len(c)]
        union = np.unique(np.concatenate(rank_lists + [band]))
        result = factorize_tet(source, level, full_store=False, collect_ranks=union)
        rows = result.collected

        h = 1.0 / 2 ** level

        def fit_all(deg):
            polys = {}
            for slot, d in enumerate(geometry.LOWER):
                coords = sets[d]
                name = geometry.DIRECTION_NAMES[d]
                if len(coords) == 0:
                    polys[name] = SurrogatePolynomial.zero(deg, h)
                    continue
                vals = rows[np.searchsorted(union, geometry.lattice_rank(coords, level)), slot]
                polys[name] = lsq_fit(coords * h, vals, deg, spacing=h, label=name)
            coords = sets[geometry.C]
            vals = rows[np.searchsorted(union, geometry.lattice_rank(coords, level)), 8]
            polys["inv_dc"] = lsq_fit(coords * h, vals, deg, spacing=h, label="inv_dc")
            return polys

        polys, eff_degrees = _fit_with_degrade(fit_all, eff_degrees)
        if _inverse_diag_positive(polys["inv_dc"], level, variant) or stride == 1:
            break
        # the fitted reciprocal diagonal dipped nonpositive where it will be
        # evaluated; densify the sampling and refit
        stride //= 2

    eff_sample_level = level - int(np.log2(stride))
    if variant == "v1":
        store_rows = rows[np.searchsorted(union, band)].copy()
    else:
        store_rows = np.zeros((1, 9))
        band = np.zeros(1, dtype=np.int64)
    aux_bytes = result.aux_bytes + store_rows.nbytes + band.nbytes
    return SurrogateILU(level, eff_degrees, variant, polys, band, store_rows,
                        eff_sample_level, stride, aux_bytes)


def _inverse_diag_positive(poly: SurrogatePolynomial, level: int, variant: str) -> bool:
    coords = geometry.enumerate_grid(level, "interior")
    if variant == "v1":
        n = 2 ** level
        band = ((coords == 1).any(axis=1)) | (coords.sum(axis=1) == n - 1)
        coords = coords[~band]
    if len(coords) == 0:
        return True
    return bool(poly.evaluate_logical(coords).min() > 0.0)


# ---------------------------------------------------------------------------
# operator surrogate
# ---------------------------------------------------------------------------

class SurrogateOperator:
    """Polynomial surrogate of all 15 operator stencil fields, used to
    evaluate residuals without assembling."""

    def __init__(self, level: int, polys: dict):
        self.level = level
        self.polys = polys
        self._n = 2 ** level
        _, self._rowoff = geometry.rank_tables(level)
        self._h = 1.0 / self._n
        self._acoefs = np.stack([polys[name].coef for name in geometry.DIRECTION_NAMES])

    def residual_into(self, u: np.ndarray, f: np.ndarray, w: np.ndarray) -> None:
        _kernels.surrogate_apply_residual(self._n, self._rowoff, self._h,
                                          self._acoefs, u, f, w)


def build_surrogate_operator(source: StencilSource, level: int, degrees: tuple,
                             sample_level: int | None = None) -> SurrogateOperator:
    """Fit one polynomial per stencil direction to the assembled rows."""
    degrees = tuple(int(d) for d in degrees)
    dirs = list(range(15))
    stride = _choose_stride(level, sample_level, degrees, dirs)
    h = 1.0 / 2 ** level
    sets = {d: _sample_coords(d, level, stride) for d in dirs}
    eff_degrees = _supported_degrees(list(sets.values()), degrees)

    def fit_all(deg):
        polys = {}
        for d in dirs:
            name = geometry.DIRECTION_NAMES[d]
            coords = sets[d]
            if len(coords) == 0:
                if level > 2:
                    raise EmptySampleSet(f"empty sample set for direction {name!r}")
                coords = geometry.enumerate_grid(level, "interior")
            if source.constant:
                vals = np.full(len(coords), source.data[d])
            else:
                vals = source.data[geometry.lattice_rank(coords, level), d]
            polys[name] = lsq_fit(coords * h, vals, deg, spacing=h, label=name)
        return polys

    polys, _ = _fit_with_degrade(fit_all, eff_degrees)
    return SurrogateOperator(level, polys)
