"""Numba kernels for lattice sweeps on a refined macro-tetrahedron.

All kernels address values through the full-lattice rank ``rowoff[z, y] + x``
and assume arrays are zero outside the interior, which makes boundary terms
vanish without explicit branching.  Factor rows are stored as
``[L_w, L_s, L_se, L_bnw, L_bn, L_bc, L_be, D, 1/D]``.
"""

import numpy as np
from numba import njit

# lattice displacements of the seven lower directions (w s se bnw bn bc be)
_DX = np.array([-1, 0, 1, -1, 0, 0, 1], dtype=np.int64)
_DY = np.array([0, -1, -1, 1, 1, 0, 0], dtype=np.int64)
_DZ = np.array([0, 0, 0, -1, -1, -1, -1], dtype=np.int64)
# and of the seven upper directions (e n nw tse ts tc tw)
_UX = -_DX
_UY = -_DY
_UZ = -_DZ


@njit(cache=True, inline="always")
def _is_interior(x, y, z, n):
    return x >= 1 and y >= 1 and z >= 1 and x + y + z <= n - 1


@njit(cache=True, inline="always")
def _find_rank(ranks, v):
    lo, hi = 0, ranks.shape[0]
    while lo < hi:
        mid = (lo + hi) // 2
        if ranks[mid] < v:
            lo = mid + 1
        else:
            hi = mid
    return lo


@njit(cache=True)
def factorize_stream(n, rowoff, arows, aconst, full_store, do_full,
                     collect_ranks, collect_out, pivot_eps):
    """Streaming two-layer LDL^T factorization sweep.

    Keeps only the current (beta) and previous (gamma) face layers.  Factor
    rows are optionally written to ``full_store`` (full-lattice rank indexed)
    and emitted at ``collect_ranks`` (sorted) into ``collect_out``.
    Returns 0 on success or 1 + rank of the first vanishing pivot.
    """
    tri = (n + 1) * (n + 2) // 2
    loff = np.empty(n + 1, dtype=np.int64)
    for y in range(n + 1):
        loff[y] = y * (n + 1) - y * (y - 1) // 2
    beta = np.zeros((tri, 8))
    gamma = np.zeros((tri, 8))
    for t in range(tri):
        beta[t, 7] = 1.0
        gamma[t, 7] = 1.0

    cptr = 0
    ncollect = collect_ranks.shape[0]
    for z in range(1, n - 2):
        for y in range(1, n - 1 - z):
            base = rowoff[z, y]
            for x in range(1, n - z - y):
                rank = base + x
                if aconst:
                    row = arows[0]
                else:
                    row = arows[rank]
                # stencil of the interior-restricted operator
                a_w = row[0] if _is_interior(x - 1, y, z, n) else 0.0
                a_s = row[1] if _is_interior(x, y - 1, z, n) else 0.0
                a_se = row[2] if _is_interior(x + 1, y - 1, z, n) else 0.0
                a_bnw = row[3] if _is_interior(x - 1, y + 1, z - 1, n) else 0.0
                a_bn = row[4] if _is_interior(x, y + 1, z - 1, n) else 0.0
                a_bc = row[5] if _is_interior(x, y, z - 1, n) else 0.0
                a_be = row[6] if _is_interior(x + 1, y, z - 1, n) else 0.0
                a_c = row[7]

                l = loff[y] + x
                lw = loff[y] + x - 1
                ls = loff[y - 1] + x
                lse = loff[y - 1] + x + 1
                lnw = loff[y + 1] + x - 1
                ln = loff[y + 1] + x
                le = loff[y] + x + 1

                g_c = gamma[l, 7]
                b_bc = a_bc / g_c
                b_s = (a_s - b_bc * g_c * beta[ls, 4]) / beta[ls, 7]
                b_bnw = (a_bnw - b_bc * g_c * gamma[lnw, 2]) / gamma[lnw, 7]
                b_be = (a_be - b_bc * g_c * gamma[le, 0]) / gamma[le, 7]
                b_w = (a_w - b_bc * g_c * beta[lw, 6]
                       - b_bnw * gamma[lnw, 7] * beta[lw, 4]
                       - b_s * beta[ls, 7] * beta[lw, 2]) / beta[lw, 7]
                b_bn = (a_bn - b_bc * g_c * gamma[ln, 1]
                        - b_be * gamma[le, 7] * gamma[ln, 2]
                        - b_bnw * gamma[lnw, 7] * gamma[ln, 0]) / gamma[ln, 7]
                b_se = (a_se - b_bc * g_c * beta[lse, 3]
                        - b_be * gamma[le, 7] * beta[lse, 4]
                        - b_s * beta[ls, 7] * beta[lse, 0]) / beta[lse, 7]
                d_c = (a_c
                       - b_bc * b_bc * g_c
                       - b_be * b_be * gamma[le, 7]
                       - b_bnw * b_bnw * gamma[lnw, 7]
                       - b_bn * b_bn * gamma[ln, 7]
                       - b_se * b_se * beta[lse, 7]
                       - b_s * b_s * beta[ls, 7]
                       - b_w * b_w * beta[lw, 7])
                if abs(d_c) < pivot_eps:
                    return rank + 1

                beta[l, 0] = b_w
                beta[l, 1] = b_s
                beta[l, 2] = b_se
                beta[l, 3] = b_bnw
                beta[l, 4] = b_bn
                beta[l, 5] = b_bc
                beta[l, 6] = b_be
                beta[l, 7] = d_c
                if do_full:
                    full_store[rank, 0] = b_w
                    full_store[rank, 1] = b_s
                    full_store[rank, 2] = b_se
                    full_store[rank, 3] = b_bnw
                    full_store[rank, 4] = b_bn
                    full_store[rank, 5] = b_bc
                    full_store[rank, 6] = b_be
                    full_store[rank, 7] = d_c
                    full_store[rank, 8] = 1.0 / d_c
                if cptr < ncollect and collect_ranks[cptr] == rank:
                    for q in range(8):
                        collect_out[cptr, q] = beta[l, q]
                    collect_out[cptr, 8] = 1.0 / d_c
                    cptr += 1
        # advance to the next layer
        for t in range(tri):
            for q in range(8):
                gamma[t, q] = beta[t, q]
            for q in range(7):
                beta[t, q] = 0.0
            beta[t, 7] = 1.0
    return 0


# ---------------------------------------------------------------------------
# substitution with stored factors
# ---------------------------------------------------------------------------

@njit(cache=True)
def ilu_forward(n, rowoff, factors, w):
    """In-place solve of L y = w on the interior (unit-diagonal L)."""
    for z in range(1, n - 2):
        for y in range(1, n - 1 - z):
            base = rowoff[z, y]
            for x in range(1, n - z - y):
                r = base + x
                acc = w[r]
                acc -= factors[r, 0] * w[r - 1]
                acc -= factors[r, 1] * w[rowoff[z, y - 1] + x]
                acc -= factors[r, 2] * w[rowoff[z, y - 1] + x + 1]
                acc -= factors[r, 3] * w[rowoff[z - 1, y + 1] + x - 1]
                acc -= factors[r, 4] * w[rowoff[z - 1, y + 1] + x]
                acc -= factors[r, 5] * w[rowoff[z - 1, y] + x]
                acc -= factors[r, 6] * w[rowoff[z - 1, y] + x + 1]
                w[r] = acc


@njit(cache=True)
def ilu_backward(n, rowoff, factors, w):
    """In-place diagonal scaling and L^T solve."""
    for z in range(n - 3, 0, -1):
        for y in range(n - 2 - z, 0, -1):
            base = rowoff[z, y]
            for x in range(n - 1 - z - y, 0, -1):
                r = base + x
                acc = factors[r, 8] * w[r]
                q = r + 1
                acc -= factors[q, 0] * w[q]
                q = rowoff[z, y + 1] + x
                acc -= factors[q, 1] * w[q]
                q = rowoff[z, y + 1] + x - 1
                acc -= factors[q, 2] * w[q]
                q = rowoff[z + 1, y - 1] + x + 1
                acc -= factors[q, 3] * w[q]
                q = rowoff[z + 1, y - 1] + x
                acc -= factors[q, 4] * w[q]
                q = rowoff[z + 1, y] + x
                acc -= factors[q, 5] * w[q]
                q = rowoff[z + 1, y] + x - 1
                acc -= factors[q, 6] * w[q]
                w[r] = acc


# ---------------------------------------------------------------------------
# Gauss-Seidel substitution on stencil rows
# ---------------------------------------------------------------------------

@njit(cache=True, inline="always")
def _arow(arows, aconst, r):
    if aconst:
        return arows[0]
    return arows[r]


@njit(cache=True)
def gs_solve(n, rowoff, arows, aconst, w, symmetric):
    """Applies (lower GS)^-1 or the symmetric-GS inverse to w in place."""
    for z in range(1, n - 2):
        for y in range(1, n - 1 - z):
            base = rowoff[z, y]
            for x in range(1, n - z - y):
                r = base + x
                row = _arow(arows, aconst, r)
                acc = w[r]
                acc -= row[0] * w[r - 1]
                acc -= row[1] * w[rowoff[z, y - 1] + x]
                acc -= row[2] * w[rowoff[z, y - 1] + x + 1]
                acc -= row[3] * w[rowoff[z - 1, y + 1] + x - 1]
                acc -= row[4] * w[rowoff[z - 1, y + 1] + x]
                acc -= row[5] * w[rowoff[z - 1, y] + x]
                acc -= row[6] * w[rowoff[z - 1, y] + x + 1]
                w[r] = acc / row[7]
    if not symmetric:
        return
    for z in range(n - 3, 0, -1):
        for y in range(n - 2 - z, 0, -1):
            base = rowoff[z, y]
            for x in range(n - 1 - z - y, 0, -1):
                r = base + x
                row = _arow(arows, aconst, r)
                acc = 0.0
                acc += row[8] * w[r + 1]
                acc += row[9] * w[rowoff[z, y + 1] + x]
                acc += row[10] * w[rowoff[z, y + 1] + x - 1]
                acc += row[11] * w[rowoff[z + 1, y - 1] + x + 1]
                acc += row[12] * w[rowoff[z + 1, y - 1] + x]
                acc += row[13] * w[rowoff[z + 1, y] + x]
                acc += row[14] * w[rowoff[z + 1, y] + x - 1]
                w[r] = w[r] - acc / row[7]


@njit(cache=True)
def stencil_apply(n, rowoff, arows, aconst, u, out):
    """out = A u on interior rows, using the full 15-point stencil."""
    for z in range(1, n - 2):
        for y in range(1, n - 1 - z):
            base = rowoff[z, y]
            for x in range(1, n - z - y):
                r = base + x
                row = _arow(arows, aconst, r)
                acc = row[7] * u[r]
                acc += row[0] * u[r - 1]
                acc += row[1] * u[rowoff[z, y - 1] + x]
                acc += row[2] * u[rowoff[z, y - 1] + x + 1]
                acc += row[3] * u[rowoff[z - 1, y + 1] + x - 1]
                acc += row[4] * u[rowoff[z - 1, y + 1] + x]
                acc += row[5] * u[rowoff[z - 1, y] + x]
                acc += row[6] * u[rowoff[z - 1, y] + x + 1]
                acc += row[8] * u[r + 1]
                acc += row[9] * u[rowoff[z, y + 1] + x]
                acc += row[10] * u[rowoff[z, y + 1] + x - 1]
                acc += row[11] * u[rowoff[z + 1, y - 1] + x + 1]
                acc += row[12] * u[rowoff[z + 1, y - 1] + x]
                acc += row[13] * u[rowoff[z + 1, y] + x]
                acc += row[14] * u[rowoff[z + 1, y] + x - 1]
                out[r] = acc


# ---------------------------------------------------------------------------
# polynomial helpers (Horner collapse + forward-difference marching)
# ---------------------------------------------------------------------------

@njit(cache=True, inline="always")
def _collapse_z(coefs, m, zval, bxy):
    ni, nj, nk = coefs.shape[1], coefs.shape[2], coefs.shape[3]
    for i in range(ni):
        for j in range(nj):
            acc = coefs[m, i, j, nk - 1]
            for k in range(nk - 2, -1, -1):
                acc = acc * zval + coefs[m, i, j, k]
            bxy[i, j] = acc


@njit(cache=True, inline="always")
def _collapse_y(bxy, yval, ax):
    ni, nj = bxy.shape
    for i in range(ni):
        acc = bxy[i, nj - 1]
        for j in range(nj - 2, -1, -1):
            acc = acc * yval + bxy[i, j]
        ax[i] = acc


@njit(cache=True, inline="always")
def _horner1(ax, xval):
    acc = ax[ax.shape[0] - 1]
    for i in range(ax.shape[0] - 2, -1, -1):
        acc = acc * xval + ax[i]
    return acc


@njit(cache=True, inline="always")
def _seed_diffs(ax, x0, step, h, count, out):
    """Difference table of the row values at x0, x0+step, ..., in ``out``."""
    for t in range(count):
        out[t] = _horner1(ax, (x0 + t * step) * h)
    for o in range(1, count):
        for t in range(count - 1, o - 1, -1):
            out[t] = out[t] - out[t - 1]


@njit(cache=True, inline="always")
def _march(diffs, count):
    for j in range(count - 1):
        diffs[j] += diffs[j + 1]


# ---------------------------------------------------------------------------
# surrogate substitution (NDDF evaluation of the factor polynomials)
# ---------------------------------------------------------------------------

@njit(cache=True)
def surrogate_forward(n, rowoff, h, lcoefs, w, use_store, band_ranks, store_rows):
    """Forward substitution with L rows evaluated by marching forward
    differences; at boundary-band points stored rows are used instead when
    ``use_store`` (variant V1)."""
    kx1 = lcoefs.shape[1]
    bxy = np.empty((7, lcoefs.shape[1], lcoefs.shape[2]))
    ax = np.empty((7, kx1))
    diffs = np.empty((7, kx1))
    for z in range(1, n - 2):
        zv = z * h
        for m in range(7):
            _collapse_z(lcoefs, m, zv, bxy[m])
        for y in range(1, n - 1 - z):
            yv = y * h
            base = rowoff[z, y]
            xe = n - 1 - z - y
            cnt = min(kx1, xe)
            for m in range(7):
                _collapse_y(bxy[m], yv, ax[m])
                _seed_diffs(ax[m], 1, 1, h, cnt, diffs[m])
            band_row = z == 1 or y == 1
            for x in range(1, xe + 1):
                r = base + x
                acc = w[r]
                if use_store and (band_row or x == 1 or x + y + z == n - 1):
                    s = _find_rank(band_ranks, r)
                    acc -= store_rows[s, 0] * w[r - 1]
                    acc -= store_rows[s, 1] * w[rowoff[z, y - 1] + x]
                    acc -= store_rows[s, 2] * w[rowoff[z, y - 1] + x + 1]
                    acc -= store_rows[s, 3] * w[rowoff[z - 1, y + 1] + x - 1]
                    acc -= store_rows[s, 4] * w[rowoff[z - 1, y + 1] + x]
                    acc -= store_rows[s, 5] * w[rowoff[z - 1, y] + x]
                    acc -= store_rows[s, 6] * w[rowoff[z - 1, y] + x + 1]
                else:
                    acc -= diffs[0, 0] * w[r - 1]
                    acc -= diffs[1, 0] * w[rowoff[z, y - 1] + x]
                    acc -= diffs[2, 0] * w[rowoff[z, y - 1] + x + 1]
                    acc -= diffs[3, 0] * w[rowoff[z - 1, y + 1] + x - 1]
                    acc -= diffs[4, 0] * w[rowoff[z - 1, y + 1] + x]
                    acc -= diffs[5, 0] * w[rowoff[z - 1, y] + x]
                    acc -= diffs[6, 0] * w[rowoff[z - 1, y] + x + 1]
                w[r] = acc
                for m in range(7):
                    _march(diffs[m], cnt)


@njit(cache=True)
def surrogate_backward(n, rowoff, h, lcoefs, dcoefs, w,
                       use_store, band_ranks, store_rows):
    """Diagonal scaling with the 1/D surrogate and L^T substitution.  The
    seven L marchers run on direction-shifted rows so each transpose entry
    L^{p-d}_d is evaluated at its source point."""
    kx1 = lcoefs.shape[1]
    bxy = np.empty((7, lcoefs.shape[1], lcoefs.shape[2]))
    dbxy = np.empty((dcoefs.shape[1], dcoefs.shape[2]))
    ax = np.empty((7, kx1))
    dax = np.empty(dcoefs.shape[1])
    diffs = np.empty((7, kx1))
    ddiffs = np.empty(dcoefs.shape[1])
    kd1 = dcoefs.shape[1]
    for z in range(n - 3, 0, -1):
        for m in range(7):
            _collapse_z(lcoefs, m, (z - _DZ[m]) * h, bxy[m])
        _collapse_z(dcoefs, 0, z * h, dbxy)
        for y in range(n - 2 - z, 0, -1):
            base = rowoff[z, y]
            xe = n - 1 - z - y
            cnt = min(kx1, xe)
            dcnt = min(kd1, xe)
            for m in range(7):
                _collapse_y(bxy[m], (y - _DY[m]) * h, ax[m])
                # q.x runs from xe - dx downward
                _seed_diffs(ax[m], xe - _DX[m], -1, h, cnt, diffs[m])
            _collapse_y(dbxy, y * h, dax)
            _seed_diffs(dax, xe, -1, h, dcnt, ddiffs)
            for x in range(xe, 0, -1):
                r = base + x
                if use_store and (z == 1 or y == 1 or x == 1 or x + y + z == n - 1):
                    inv_d = store_rows[_find_rank(band_ranks, r), 8]
                else:
                    inv_d = ddiffs[0]
                acc = inv_d * w[r]
                # subtract L^{p-d}_d w^{p-d} for the seven lower directions
                q = r + 1
                acc -= _lq(0, x + 1, y, z, n, diffs, use_store, band_ranks,
                           store_rows, q) * w[q]
                q = rowoff[z, y + 1] + x
                acc -= _lq(1, x, y + 1, z, n, diffs, use_store, band_ranks,
                           store_rows, q) * w[q]
                q = rowoff[z, y + 1] + x - 1
                acc -= _lq(2, x - 1, y + 1, z, n, diffs, use_store, band_ranks,
                           store_rows, q) * w[q]
                q = rowoff[z + 1, y - 1] + x + 1
                acc -= _lq(3, x + 1, y - 1, z + 1, n, diffs, use_store, band_ranks,
                           store_rows, q) * w[q]
                q = rowoff[z + 1, y - 1] + x
                acc -= _lq(4, x, y - 1, z + 1, n, diffs, use_store, band_ranks,
                           store_rows, q) * w[q]
                q = rowoff[z + 1, y] + x
                acc -= _lq(5, x, y, z + 1, n, diffs, use_store, band_ranks,
                           store_rows, q) * w[q]
                q = rowoff[z + 1, y] + x - 1
                acc -= _lq(6, x - 1, y, z + 1, n, diffs, use_store, band_ranks,
                           store_rows, q) * w[q]
                w[r] = acc
                for m in range(7):
                    _march(diffs[m], cnt)
                _march(ddiffs, dcnt)


@njit(cache=True, inline="always")
def _lq(m, qx, qy, qz, n, diffs, use_store, band_ranks, store_rows, q):
    """L value at the shifted source point q = p - d of direction m."""
    if not _is_interior(qx, qy, qz, n):
        return 0.0
    if use_store and (qx == 1 or qy == 1 or qz == 1 or qx + qy + qz == n - 1):
        return store_rows[_find_rank(band_ranks, q), m]
    return diffs[m, 0]


@njit(cache=True)
def surrogate_apply_residual(n, rowoff, h, acoefs, u, f, w):
    """w = f - A u on the interior with all 15 stencil entries evaluated by
    marching forward differences of the operator surrogate."""
    kx1 = acoefs.shape[1]
    bxy = np.empty((15, acoefs.shape[1], acoefs.shape[2]))
    ax = np.empty((15, kx1))
    diffs = np.empty((15, kx1))
    for z in range(1, n - 2):
        zv = z * h
        for m in range(15):
            _collapse_z(acoefs, m, zv, bxy[m])
        for y in range(1, n - 1 - z):
            yv = y * h
            base = rowoff[z, y]
            xe = n - 1 - z - y
            cnt = min(kx1, xe)
            for m in range(15):
                _collapse_y(bxy[m], yv, ax[m])
                _seed_diffs(ax[m], 1, 1, h, cnt, diffs[m])
            for x in range(1, xe + 1):
                r = base + x
                acc = f[r] - diffs[7, 0] * u[r]
                acc -= diffs[0, 0] * u[r - 1]
                acc -= diffs[1, 0] * u[rowoff[z, y - 1] + x]
                acc -= diffs[2, 0] * u[rowoff[z, y - 1] + x + 1]
                acc -= diffs[3, 0] * u[rowoff[z - 1, y + 1] + x - 1]
                acc -= diffs[4, 0] * u[rowoff[z - 1, y + 1] + x]
                acc -= diffs[5, 0] * u[rowoff[z - 1, y] + x]
                acc -= diffs[6, 0] * u[rowoff[z - 1, y] + x + 1]
                acc -= diffs[8, 0] * u[r + 1]
                acc -= diffs[9, 0] * u[rowoff[z, y + 1] + x]
                acc -= diffs[10, 0] * u[rowoff[z, y + 1] + x - 1]
                acc -= diffs[11, 0] * u[rowoff[z + 1, y - 1] + x + 1]
                acc -= diffs[12, 0] * u[rowoff[z + 1, y - 1] + x]
                acc -= diffs[13, 0] * u[rowoff[z + 1, y] + x]
                acc -= diffs[14, 0] * u[rowoff[z + 1, y] + x - 1]
                w[r] = acc
                for m in range(15):
                    _march(diffs[m], cnt)


# ---------------------------------------------------------------------------
# CSR triangular substitution for interface blocks
# ---------------------------------------------------------------------------

@njit(cache=True)
def csr_lower_solve(indptr, indices, data, b, out):
    """Solve (lower incl. diagonal) z = b for a CSR block."""
    m = b.shape[0]
    for i in range(m):
        acc = b[i]
        diag = 0.0
        for k in range(indptr[i], indptr[i + 1]):
            j = indices[k]
            if j < i:
                acc -= data[k] * out[j]
            elif j == i:
                diag = data[k]
        out[i] = acc / diag


@njit(cache=True)
def csr_upper_solve(indptr, indices, data, b, out):
    """Solve (upper incl. diagonal) z = b for a CSR block."""
    m = b.shape[0]
    for i in range(m - 1, -1, -1):
        acc = b[i]
        diag = 0.0
        for k in range(indptr[i], indptr[i + 1]):
            j = indices[k]
            if j > i:
                acc -= data[k] * out[j]
            elif j == i:
                diag = data[k]
        out[i] = acc / diag
