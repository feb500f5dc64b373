# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: assignment solver, tie-break matching, polyline raster.

Behaviour is identical to ``laneformer._kernels_py``.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport floor, ceil, INFINITY

cnp.import_array()


def solve_lap(cost):
    cdef double[:, ::1] c = np.ascontiguousarray(cost, dtype=np.float64)
    cdef Py_ssize_t n = c.shape[0]
    u_arr = np.zeros(n + 1)
    v_arr = np.zeros(n + 1)
    p_arr = np.zeros(n + 1, dtype=np.int64)
    way_arr = np.zeros(n + 1, dtype=np.int64)
    minv_arr = np.empty(n + 1)
    used_arr = np.empty(n + 1, dtype=np.uint8)
    cdef double[::1] u = u_arr
    cdef double[::1] v = v_arr
    cdef cnp.int64_t[::1] p = p_arr
    cdef cnp.int64_t[::1] way = way_arr
    cdef double[::1] minv = minv_arr
    cdef unsigned char[::1] used = used_arr
    cdef Py_ssize_t i, j, j0, j1, i0
    cdef double delta, cur
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        for j in range(n + 1):
            minv[j] = INFINITY
            used[j] = 0
        while True:
            used[j0] = 1
            i0 = p[j0]
            delta = INFINITY
            j1 = 0
            for j in range(1, n + 1):
                if not used[j]:
                    cur = c[i0 - 1, j - 1] - u[i0] - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta = minv[j]
                        j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while True:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
            if j0 == 0:
                break
    row_to_col = np.empty(n, dtype=np.int64)
    cdef cnp.int64_t[::1] rc = row_to_col
    for j in range(1, n + 1):
        rc[p[j] - 1] = j - 1
    return row_to_col, u_arr[1:].copy(), v_arr[1:].copy()


cdef int _alt_path(unsigned char[:, ::1] ok, cnp.int64_t[::1] match_row,
                   cnp.int64_t[::1] match_col, Py_ssize_t i, Py_ssize_t j,
                   cnp.int64_t[::1] parent, unsigned char[::1] seen,
                   cnp.int64_t[::1] stack) noexcept:
    cdef Py_ssize_t n = ok.shape[0]
    cdef Py_ssize_t target = match_row[i]
    cdef Py_ssize_t start = match_col[j]
    cdef Py_ssize_t top = 0, r, c, row, k
    for k in range(n):
        seen[k] = 0
    seen[j] = 1
    stack[top] = start
    top += 1
    while top > 0:
        top -= 1
        r = stack[top]
        for c in range(n):
            if not ok[r, c] or seen[c] or match_col[c] < i:
                continue
            seen[c] = 1
            parent[c] = r
            if c == target:
                # rewire along the path back to the displaced row
                while True:
                    row = parent[c]
                    k = match_row[row]
                    match_row[row] = c
                    match_col[c] = row
                    if row == start:
                        break
                    c = k
                match_row[i] = j
                match_col[j] = i
                return 1
            stack[top] = match_col[c]
            top += 1
    return 0


def lexmin_matching(allowed, start):
    cdef unsigned char[:, ::1] ok = np.ascontiguousarray(allowed, dtype=np.uint8)
    cdef Py_ssize_t n = ok.shape[0]
    out = np.array(start, dtype=np.int64)
    cdef cnp.int64_t[::1] match_row = out
    col_arr = np.empty(n, dtype=np.int64)
    cdef cnp.int64_t[::1] match_col = col_arr
    cdef cnp.int64_t[::1] parent = np.empty(n, dtype=np.int64)
    cdef unsigned char[::1] seen = np.empty(n, dtype=np.uint8)
    cdef cnp.int64_t[::1] stack = np.empty(n * n + 1, dtype=np.int64)
    cdef Py_ssize_t i, j
    for i in range(n):
        match_col[match_row[i]] = i
    for i in range(n):
        for j in range(n):
            if not ok[i, j] or match_col[j] < i:
                continue
            if j == match_row[i]:
                break
            if _alt_path(ok, match_row, match_col, i, j, parent, seen, stack):
                break
    return out


def raster_polyline(points, Py_ssize_t height, Py_ssize_t width, double radius):
    cdef double[:, ::1] pts = np.ascontiguousarray(
        np.asarray(points, dtype=np.float64).reshape(-1, 2))
    mask_arr = np.zeros((height, width), dtype=np.uint8)
    cdef unsigned char[:, ::1] mask = mask_arr
    cdef Py_ssize_t k, npts = pts.shape[0], nseg
    cdef Py_ssize_t x, y, x0, x1, y0, y1
    cdef double ax, ay, bx, by, dx, dy, seg2, t, ex, ey, r2 = radius * radius
    if npts == 0:
        return mask_arr
    nseg = npts - 1 if npts > 1 else 1
    for k in range(nseg):
        ax = pts[k, 0]
        ay = pts[k, 1]
        if npts > 1:
            bx = pts[k + 1, 0]
            by = pts[k + 1, 1]
        else:
            bx = ax
            by = ay
        x0 = max(<Py_ssize_t>floor(min(ax, bx) - radius), 0)
        x1 = min(<Py_ssize_t>ceil(max(ax, bx) + radius), width - 1)
        y0 = max(<Py_ssize_t>floor(min(ay, by) - radius), 0)
        y1 = min(<Py_ssize_t>ceil(max(ay, by) + radius), height - 1)
        dx = bx - ax
        dy = by - ay
        seg2 = dx * dx + dy * dy
        for y in range(y0, y1 + 1):
            for x in range(x0, x1 + 1):
                if seg2 > 0.0:
                    t = ((x - ax) * dx + (y - ay) * dy) / seg2
                    if t < 0.0:
                        t = 0.0
                    elif t > 1.0:
                        t = 1.0
                else:
                    t = 0.0
                ex = x - (ax + t * dx)
                ey = y - (ay + t * dy)
                if ex * ex + ey * ey <= r2:
                    mask[y, x] = 1
    return mask_arr
