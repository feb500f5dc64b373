"""Pure-Python/numpy versions of the hot kernels.

Used when the compiled ``_kernels`` extension is not available. Signatures and
results match the Cython module exactly.
"""
import numpy as np


def solve_lap(cost):
    """Minimum-cost perfect assignment on a square matrix.

    Shortest augmenting path with row/column potentials, O(n^3).
    Returns ``(row_to_col, u, v)`` where ``u``/``v`` are optimal duals, so that
    ``cost[i, j] - u[i] - v[j] >= 0`` everywhere and is zero on the assignment.
    """
    cost = np.ascontiguousarray(cost, dtype=np.float64)
    n = cost.shape[0]
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    p = np.zeros(n + 1, dtype=np.int64)  # p[j]: row (1-based) holding column j
    way = np.zeros(n + 1, dtype=np.int64)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            free = ~used[1:]
            cur = cost[i0 - 1] - u[i0] - v[1:]
            better = free & (cur < minv[1:])
            minv[1:][better] = cur[better]
            way[1:][better] = j0
            cand = np.where(free, minv[1:], np.inf)
            j1 = int(np.argmin(cand)) + 1
            delta = cand[j1 - 1]
            u[p[used]] += delta
            v[used] -= delta
            minv[~used] -= delta
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
    row_to_col[p[1:] - 1] = np.arange(n)
    return row_to_col, u[1:].copy(), v[1:].copy()


def lexmin_matching(allowed, start):
    """Lexicographically smallest perfect matching inside ``allowed``.

    ``start`` must be a perfect matching using only allowed edges. Rows are
    fixed in order; each one takes the smallest column for which the rest of
    the rows can still be matched (checked with one alternating-path search).
    """
    allowed = np.asarray(allowed, dtype=bool)
    n = allowed.shape[0]
    match_row = np.array(start, dtype=np.int64)
    match_col = np.empty(n, dtype=np.int64)
    match_col[match_row] = np.arange(n)
    adj = [np.flatnonzero(allowed[i]) for i in range(n)]
    for i in range(n):
        for j in adj[i]:
            if match_col[j] < i:
                continue
            if j == match_row[i]:
                break
            path = _alternating_path(adj, match_row, match_col, i, j)
            if path is not None:
                c0 = match_row[i]
                match_row[i] = j
                match_col[j] = i
                for row, col in path:
                    match_row[row] = col
                    match_col[col] = row
                assert match_col[c0] != i
                break
    return match_row


def _alternating_path(adj, match_row, match_col, i, j):
    # Free column is match_row[i]; displaced row is match_col[j]. Rows < i are
    # frozen, as are columns j and those owned by frozen rows.
    target = match_row[i]
    start = match_col[j]
    n = len(adj)
    seen = np.zeros(n, dtype=bool)
    seen[j] = True
    parent = {}
    stack = [start]
    while stack:
        r = stack.pop()
        for c in adj[r]:
            if seen[c] or match_col[c] < i:
                continue
            seen[c] = True
            parent[c] = r
            if c == target:
                path = []
                while True:
                    row = parent[c]
                    path.append((row, c))
                    if row == start:
                        return path
                    c = match_row[row]
            stack.append(match_col[c])
    return None


def raster_polyline(points, height, width, radius):
    """uint8 mask of pixels whose centre lies within ``radius`` of the polyline.

    Pixel ``(r, c)`` has its centre at ``(x=c, y=r)``. Round caps and joins
    fall out of the point-to-segment distance.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    mask = np.zeros((height, width), dtype=np.uint8)
    if len(pts) == 0:
        return mask
    if len(pts) == 1:
        pts = np.vstack([pts, pts])
    r2 = radius * radius
    for (ax, ay), (bx, by) in zip(pts[:-1], pts[1:]):
        x0 = max(int(np.floor(min(ax, bx) - radius)), 0)
        x1 = min(int(np.ceil(max(ax, bx) + radius)), width - 1)
        y0 = max(int(np.floor(min(ay, by) - radius)), 0)
        y1 = min(int(np.ceil(max(ay, by) + radius)), height - 1)
        if x0 > x1 or y0 > y1:
            continue
        ys, xs = np.mgrid[y0:y1 + 1, x0:x1 + 1].astype(np.float64)
        dx, dy = bx - ax, by - ay
        seg2 = dx * dx + dy * dy
        if seg2 > 0.0:
            t = np.clip(((xs - ax) * dx + (ys - ay) * dy) / seg2, 0.0, 1.0)
        else:
            t = np.zeros_like(xs)
        ex = xs - (ax + t * dx)
        ey = ys - (ay + t * dy)
        hit = ex * ex + ey * ey <= r2
        mask[y0:y1 + 1, x0:x1 + 1] |= hit.astype(np.uint8)
    return mask
