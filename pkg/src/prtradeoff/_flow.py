"""Successive-shortest-path solver for the dense transportation problem.

The bipartite network has supply rows, demand columns and an uncapacitated
arc i -> j of cost C[i, j] for every pair. Row potentials ``u`` and column
potentials ``v`` keep every reduced cost ``C[i, j] - u[i] - v[j]``
nonnegative and every arc that carries flow tight. Each round runs a dense
Dijkstra from one row with remaining supply, through forward arcs and
reverse (flow-carrying) arcs, to the nearest column with remaining demand,
augments by the bottleneck, and shifts the potentials of the settled nodes.
Termination leaves a primal-feasible plan and dual potentials that satisfy
complementary slackness, hence an optimal plan.

When the problem is an assignment (square, all supplies and demands equal)
an epsilon-scaling auction first supplies near-optimal column potentials.
Only rows whose auction column has exactly minimal reduced cost keep it, so
the invariants above hold, and the shortest-path phase routes the rest with
short searches.
"""

import numba
import numpy as np


@numba.njit(cache=True)
def _relax(i, d0, C, u, v, remaining, n_rem, dist_c, pred_c):
    """Relax row i over the unvisited columns; return the position of the closest one."""
    ui = u[i]
    best = np.inf
    kbest = -1
    for k in range(n_rem):
        j = remaining[k]
        d = d0 + C[i, j] - ui - v[j]
        if d < dist_c[j]:
            dist_c[j] = d
            pred_c[j] = i
        if dist_c[j] < best:
            best = dist_c[j]
            kbest = k
    return kbest


@numba.njit(cache=True)
def _closest(remaining, n_rem, dist_c):
    best = np.inf
    kbest = -1
    for k in range(n_rem):
        if dist_c[remaining[k]] < best:
            best = dist_c[remaining[k]]
            kbest = k
    return kbest


@numba.njit(cache=True)
def _two_smallest(i, C, v):
    m = C.shape[1]
    u1 = np.inf
    u2 = np.inf
    j1 = -1
    j2 = -1
    for j in range(m):
        h = C[i, j] - v[j]
        if h < u2:
            if h < u1:
                u2 = u1
                j2 = j1
                u1 = h
                j1 = j
            else:
                u2 = h
                j2 = j
    return u1, j1, u2, j2


@numba.njit(cache=True)
def _auction(C, v, row_col, col_row, eps, eps_end, factor):
    """Forward auction with epsilon-scaling on column prices ``v``.

    Each bid lowers the price of the row's best column by the margin over
    its second best plus ``eps``; every phase ends with all rows assigned.
    The result is only eps-optimal and serves as a warm start.
    """
    n = C.shape[0]
    free = np.empty(n, dtype=np.int64)
    while True:
        for i in range(n):
            row_col[i] = -1
            col_row[i] = -1
            free[i] = n - 1 - i
        n_free = n
        while n_free > 0:
            n_free -= 1
            i = free[n_free]
            u1, j1, u2, j2 = _two_smallest(i, C, v)
            if j2 >= 0:
                v[j1] -= u2 - u1 + eps
            i0 = col_row[j1]
            col_row[j1] = i
            row_col[i] = j1
            if i0 >= 0:
                row_col[i0] = -1
                free[n_free] = i0
                n_free += 1
        if eps <= eps_end:
            return
        eps = max(eps / factor, eps_end)


@numba.njit(cache=True)
def transport_ssp(a, b, C, tol):
    """Return ``(flow, u, v, n_augmentations, unrouted)`` for supplies ``a`` and demands ``b``.

    ``flow`` is stored column-major as an (m, n) array: ``flow[j, i]`` is the
    mass moved from row i to column j. ``unrouted`` is the supply left when
    no column with demand above ``tol`` remains reachable.
    """
    n, m = C.shape
    inf = np.inf
    u = np.zeros(n)
    v = np.empty(m)
    for j in range(m):
        best = inf
        for i in range(n):
            if C[i, j] < best:
                best = C[i, j]
        v[j] = best
    flow = np.zeros((m, n))
    ra = a.copy()
    rb = b.copy()
    # rows carrying flow into each column: col_rows[j, :col_cnt[j]]
    cap = 4
    col_rows = np.empty((m, cap), dtype=np.int64)
    col_cnt = np.zeros(m, dtype=np.int64)

    square = n == m
    if square:
        for i in range(n):
            if a[i] != a[0] or b[i] != a[0]:
                square = False
                break
    if square:
        row_col = -np.ones(n, dtype=np.int64)
        col_row = -np.ones(m, dtype=np.int64)
        lo = inf
        hi = -inf
        for i in range(n):
            for j in range(m):
                lo = min(lo, C[i, j])
                hi = max(hi, C[i, j])
        spread = hi - lo
        if spread > 0 and n > 1:
            _auction(C, v, row_col, col_row, spread / 4, spread * 1e-9 / n, 6.0)
        for i in range(n):
            u[i] = _two_smallest(i, C, v)[0]
            j = row_col[i]
            if j >= 0 and C[i, j] - v[j] <= u[i]:
                flow[j, i] = a[i]
                ra[i] = 0.0
                rb[j] = 0.0
                col_rows[j, 0] = i
                col_cnt[j] = 1
    else:
        # arcs at a column minimum are tight under the initial potentials, so
        # any flow pushed along them keeps complementary slackness
        for j in range(m):
            i = 0
            best = inf
            for r in range(n):
                if C[r, j] < best:
                    best = C[r, j]
                    i = r
            d = min(ra[i], rb[j])
            if d > tol:
                flow[j, i] = d
                ra[i] -= d
                rb[j] -= d
                col_rows[j, 0] = i
                col_cnt[j] = 1

    dist_c = np.empty(m)
    pred_c = np.empty(m, dtype=np.int64)
    remaining = np.empty(m, dtype=np.int64)
    dist_r = np.empty(n)
    pred_r = np.empty(n, dtype=np.int64)
    reached_r = np.zeros(n, dtype=np.bool_)
    rows_seen = np.empty(n, dtype=np.int64)
    cols_seen = np.empty(m, dtype=np.int64)

    nr_prev = 0
    n_aug = 0
    unrouted = 0.0
    src = 0
    while True:
        while src < n and ra[src] <= tol:
            src += 1
        if src == n:
            break

        for j in range(m):
            dist_c[j] = inf
            pred_c[j] = -1
            remaining[j] = j
        n_rem = m
        for k in range(nr_prev):
            reached_r[rows_seen[k]] = False
        nr = 0
        nc = 0
        reached_r[src] = True
        dist_r[src] = 0.0
        pred_r[src] = -1
        rows_seen[nr] = src
        nr += 1
        kmin = _relax(src, 0.0, C, u, v, remaining, n_rem, dist_c, pred_c)

        sink = -1
        while kmin >= 0:
            jmin = remaining[kmin]
            dmin = dist_c[jmin]
            n_rem -= 1
            remaining[kmin] = remaining[n_rem]
            cols_seen[nc] = jmin
            nc += 1
            if rb[jmin] > tol:
                sink = jmin
                break
            relaxed = False
            for k in range(col_cnt[jmin]):
                i = col_rows[jmin, k]
                if not reached_r[i]:
                    reached_r[i] = True
                    dist_r[i] = dmin
                    pred_r[i] = jmin
                    rows_seen[nr] = i
                    nr += 1
                    kmin = _relax(i, dmin, C, u, v, remaining, n_rem, dist_c, pred_c)
                    relaxed = True
            if not relaxed:
                kmin = _closest(remaining, n_rem, dist_c)
        nr_prev = nr

        if sink == -1:
            # supply exceeds demand by rounding only; nothing left to route to
            unrouted += ra[src]
            ra[src] = 0.0
            continue

        D = dist_c[sink]
        delta = min(ra[src], rb[sink])
        j = sink
        while True:
            i = pred_c[j]
            jp = pred_r[i]
            if jp == -1:
                break
            if flow[jp, i] < delta:
                delta = flow[jp, i]
            j = jp

        j = sink
        while True:
            i = pred_c[j]
            if flow[j, i] == 0.0:
                if col_cnt[j] == cap:
                    grown = np.empty((m, 2 * cap), dtype=np.int64)
                    grown[:, :cap] = col_rows
                    col_rows = grown
                    cap *= 2
                col_rows[j, col_cnt[j]] = i
                col_cnt[j] += 1
            flow[j, i] += delta
            jp = pred_r[i]
            if jp == -1:
                break
            flow[jp, i] -= delta
            if flow[jp, i] <= 0.0:
                flow[jp, i] = 0.0
                for k in range(col_cnt[jp]):
                    if col_rows[jp, k] == i:
                        col_rows[jp, k] = col_rows[jp, col_cnt[jp] - 1]
                        col_cnt[jp] -= 1
                        break
            j = jp
        ra[src] -= delta
        rb[sink] -= delta
        n_aug += 1

        for k in range(nr):
            i = rows_seen[k]
            u[i] += D - dist_r[i]
        for k in range(nc):
            j = cols_seen[k]
            v[j] -= D - dist_c[j]

    return flow, u, v, n_aug, unrouted
