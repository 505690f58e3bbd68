# cython: language_level=3
"""Compiled hot loops. Mirrors ``_pykernels`` operation for operation."""

import numpy as np
cimport numpy as cnp
from libc.math cimport floor, INFINITY, copysign

cnp.import_array()

BACKEND = "cython"

ctypedef cnp.int64_t i64
ctypedef cnp.uint8_t u8


cdef inline Py_ssize_t _pick(const double[:, :, ::1] cum, Py_ssize_t s, Py_ssize_t a, double u) noexcept nogil:
    cdef Py_ssize_t k = 0
    cdef Py_ssize_t last = cum.shape[2] - 1
    while k < last and u >= cum[s, a, k]:
        k += 1
    return k


def tabular_rollout(const i64[:, :, ::1] nxt, const double[:, :, ::1] cum, long start,
                    const double[:, ::1] u):
    cdef Py_ssize_t n_actions = nxt.shape[1]
    cdef Py_ssize_t h = u.shape[0]
    actions_arr = np.empty(h, dtype=np.int64)
    states_arr = np.empty(h + 1, dtype=np.int64)
    cdef i64[::1] actions = actions_arr
    cdef i64[::1] states = states_arr
    cdef Py_ssize_t t, a, k
    cdef i64 s = start
    states[0] = s
    with nogil:
        for t in range(h):
            a = <Py_ssize_t>(u[t, 0] * n_actions)
            if a >= n_actions:
                a = n_actions - 1
            k = _pick(cum, s, a, u[t, 1])
            s = nxt[s, a, k]
            actions[t] = a
            states[t + 1] = s
    return actions_arr, states_arr


cdef inline bint _is_wall(const u8[:, ::1] walls, long cx, long cy) noexcept nogil:
    if cx < 0 or cy < 0 or cx >= walls.shape[1] or cy >= walls.shape[0]:
        return True
    return walls[cy, cx] != 0


cdef void _cast(const u8[:, ::1] walls, double x, double y, double dx, double dy,
                double* t_out, bint* bx, bint* by) noexcept nogil:
    cdef long cx = <long>floor(x)
    cdef long cy = <long>floor(y)
    cdef long sx, sy
    cdef double tmx, tmy, tdx, tdy
    cdef bint wx, wy, wd
    if dx > 0:
        sx = 1; tmx = (cx + 1 - x) / dx; tdx = 1.0 / dx
    elif dx < 0:
        sx = -1; tmx = (cx - x) / dx; tdx = -1.0 / dx
    else:
        sx = 0; tmx = INFINITY; tdx = INFINITY
    if dy > 0:
        sy = 1; tmy = (cy + 1 - y) / dy; tdy = 1.0 / dy
    elif dy < 0:
        sy = -1; tmy = (cy - y) / dy; tdy = -1.0 / dy
    else:
        sy = 0; tmy = INFINITY; tdy = INFINITY
    while True:
        if tmx < tmy:
            if tmx > 1.0:
                t_out[0] = 1.0; bx[0] = False; by[0] = False
                return
            cx += sx
            if _is_wall(walls, cx, cy):
                t_out[0] = tmx; bx[0] = True; by[0] = False
                return
            tmx += tdx
        elif tmy < tmx:
            if tmy > 1.0:
                t_out[0] = 1.0; bx[0] = False; by[0] = False
                return
            cy += sy
            if _is_wall(walls, cx, cy):
                t_out[0] = tmy; bx[0] = False; by[0] = True
                return
            tmy += tdy
        else:
            if tmx > 1.0:
                t_out[0] = 1.0; bx[0] = False; by[0] = False
                return
            wx = _is_wall(walls, cx + sx, cy)
            wy = _is_wall(walls, cx, cy + sy)
            wd = _is_wall(walls, cx + sx, cy + sy)
            if wx or wy:
                t_out[0] = tmx; bx[0] = wx; by[0] = wy
                return
            if wd:
                t_out[0] = tmx; bx[0] = True; by[0] = True
                return
            cx += sx
            cy += sy
            tmx += tdx
            tmy += tdy


cdef void _slide(const u8[:, ::1] walls, double* px, double* py, double dx, double dy,
                 double margin) noexcept nogil:
    cdef double x = px[0]
    cdef double y = py[0]
    cdef double t, rdx, rdy
    cdef bint bx, by
    cdef int it
    for it in range(3):
        if dx == 0.0 and dy == 0.0:
            break
        _cast(walls, x, y, dx, dy, &t, &bx, &by)
        if not bx and not by:
            x += dx
            y += dy
            break
        x += t * dx
        y += t * dy
        rdx = (1.0 - t) * dx
        rdy = (1.0 - t) * dy
        if bx:
            x -= copysign(margin, dx)
            rdx = 0.0
        if by:
            y -= copysign(margin, dy)
            rdy = 0.0
        dx = rdx
        dy = rdy
    px[0] = x
    py[0] = y


def slide_step(const u8[:, ::1] walls, double x, double y, double dx, double dy, double margin):
    _slide(walls, &x, &y, dx, dy, margin)
    return x, y


def point_rollout(const u8[:, ::1] walls, double x, double y, const double[:, ::1] disp,
                  double margin):
    cdef Py_ssize_t h = disp.shape[0]
    out_arr = np.empty((h + 1, 2), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t t
    out[0, 0] = x
    out[0, 1] = y
    with nogil:
        for t in range(h):
            _slide(walls, &x, &y, disp[t, 0], disp[t, 1], margin)
            out[t + 1, 0] = x
            out[t + 1, 1] = y
    return out_arr


def average_linkage(const double[:, ::1] dist, double threshold):
    cdef Py_ssize_t n = dist.shape[0]
    d_arr = np.array(dist, dtype=np.float64, copy=True)
    cdef double[:, ::1] d = d_arr
    size_arr = np.ones(n, dtype=np.float64)
    cdef double[::1] size = size_arr
    active_arr = np.ones(n, dtype=np.uint8)
    cdef u8[::1] active = active_arr
    root_arr = np.arange(n, dtype=np.int64)
    cdef i64[::1] root = root_arr
    cdef Py_ssize_t i, j, k, bi, bj
    cdef double best, si, sj, dik, djk, v
    with nogil:
        while True:
            best = INFINITY
            bi = -1
            bj = -1
            for i in range(n):
                if not active[i]:
                    continue
                for j in range(i + 1, n):
                    if active[j] and d[i, j] < best:
                        best = d[i, j]
                        bi = i
                        bj = j
            if bi < 0 or not best < threshold:
                break
            si = size[bi]
            sj = size[bj]
            for k in range(n):
                if not active[k] or k == bi or k == bj:
                    continue
                dik = d[bi, k] if bi < k else d[k, bi]
                djk = d[bj, k] if bj < k else d[k, bj]
                v = (si * dik + sj * djk) / (si + sj)
                if k < bi:
                    d[k, bi] = v
                else:
                    d[bi, k] = v
            size[bi] = si + sj
            active[bj] = 0
            for k in range(n):
                if root[k] == bj:
                    root[k] = bi
    labels = np.empty(n, dtype=np.int64)
    seen = {}
    for k in range(n):
        labels[k] = seen.setdefault(int(root[k]), len(seen))
    return labels


def q_episode(double[:, ::1] q, const i64[:, :, ::1] nxt, const double[:, :, ::1] cum,
              const double[::1] phi, const u8[::1] gate, long goal, long start,
              double alpha, double gamma, double eps, double kappa,
              const double[:, ::1] u, bint learn, bint shaped, i64[::1] trace=None):
    cdef Py_ssize_t n_actions = q.shape[1]
    cdef Py_ssize_t h = u.shape[0]
    cdef Py_ssize_t t, a, b, k, ties, pick
    cdef i64 s = start
    cdef i64 s2
    cdef double best, m, r, target
    cdef bint done
    cdef bint has_trace = trace is not None
    cdef Py_ssize_t steps = h
    cdef bint success = False
    if has_trace:
        trace[0] = s
    with nogil:
        for t in range(h):
            if u[t, 0] < eps:
                a = <Py_ssize_t>(u[t, 1] * n_actions)
                if a >= n_actions:
                    a = n_actions - 1
            else:
                best = q[s, 0]
                for b in range(1, n_actions):
                    if q[s, b] > best:
                        best = q[s, b]
                ties = 0
                for b in range(n_actions):
                    if q[s, b] == best:
                        ties += 1
                pick = <Py_ssize_t>(u[t, 1] * ties)
                if pick >= ties:
                    pick = ties - 1
                a = 0
                for b in range(n_actions):
                    if q[s, b] == best:
                        if pick == 0:
                            a = b
                            break
                        pick -= 1
            k = _pick(cum, s, a, u[t, 2])
            s2 = nxt[s, a, k]
            done = s2 == goal
            r = 1.0 if done else 0.0
            if shaped and gate[s] and gate[s2]:
                r += kappa * (phi[s] - gamma * phi[s2])
            if learn:
                if done:
                    target = r
                else:
                    m = q[s2, 0]
                    for b in range(1, n_actions):
                        if q[s2, b] > m:
                            m = q[s2, b]
                    target = r + gamma * m
                q[s, a] += alpha * (target - q[s, a])
            if has_trace:
                trace[t + 1] = s2
            s = s2
            if done:
                steps = t + 1
                success = True
                break
    return steps, success
