"""Pure-Python implementations of the hot loops.

Every function here has a twin in ``_kernels.pyx`` with the same signature
and the same floating-point operation order, so both backends return
bit-identical results for identical inputs.
"""

import math

import numpy as np

BACKEND = "python"


def _pick(cum_row, u):
    k = 0
    last = len(cum_row) - 1
    while k < last and u >= cum_row[k]:
        k += 1
    return k


def tabular_rollout(nxt, cum, start, u):
    """Random-policy rollout on a padded sparse transition table.

    ``u[t, 0]`` picks the action, ``u[t, 1]`` the outcome. Returns the
    action sequence and the ``h + 1`` visited state indices.
    """
    n_actions = nxt.shape[1]
    h = u.shape[0]
    nxt_l = nxt.tolist()
    cum_l = cum.tolist()
    u_l = u.tolist()
    actions = [0] * h
    states = [0] * (h + 1)
    s = int(start)
    states[0] = s
    for t in range(h):
        a = int(u_l[t][0] * n_actions)
        if a >= n_actions:
            a = n_actions - 1
        k = _pick(cum_l[s][a], u_l[t][1])
        s = nxt_l[s][a][k]
        actions[t] = a
        states[t + 1] = s
    return np.array(actions, dtype=np.int64), np.array(states, dtype=np.int64)


def _is_wall(walls, cx, cy):
    h, w = walls.shape
    if cx < 0 or cy < 0 or cx >= w or cy >= h:
        return True
    return walls[cy, cx] != 0


def _cast(walls, x, y, dx, dy):
    # grid traversal along (dx, dy); returns (t, blocked_x, blocked_y)
    cx = math.floor(x)
    cy = math.floor(y)
    inf = math.inf
    if dx > 0:
        sx, tmx, tdx = 1, (cx + 1 - x) / dx, 1.0 / dx
    elif dx < 0:
        sx, tmx, tdx = -1, (cx - x) / dx, -1.0 / dx
    else:
        sx, tmx, tdx = 0, inf, inf
    if dy > 0:
        sy, tmy, tdy = 1, (cy + 1 - y) / dy, 1.0 / dy
    elif dy < 0:
        sy, tmy, tdy = -1, (cy - y) / dy, -1.0 / dy
    else:
        sy, tmy, tdy = 0, inf, inf
    while True:
        if tmx < tmy:
            if tmx > 1.0:
                return 1.0, False, False
            cx += sx
            if _is_wall(walls, cx, cy):
                return tmx, True, False
            tmx += tdx
        elif tmy < tmx:
            if tmy > 1.0:
                return 1.0, False, False
            cy += sy
            if _is_wall(walls, cx, cy):
                return tmy, False, True
            tmy += tdy
        else:
            if tmx > 1.0:
                return 1.0, False, False
            wx = _is_wall(walls, cx + sx, cy)
            wy = _is_wall(walls, cx, cy + sy)
            wd = _is_wall(walls, cx + sx, cy + sy)
            if wx or wy:
                return tmx, wx, wy
            if wd:
                return tmx, True, True
            cx += sx
            cy += sy
            tmx += tdx
            tmy += tdy


def slide_step(walls, x, y, dx, dy, margin):
    """Move a point by (dx, dy), sliding along any wall it meets."""
    x = float(x)
    y = float(y)
    dx = float(dx)
    dy = float(dy)
    for _ in range(3):
        if dx == 0.0 and dy == 0.0:
            break
        t, bx, by = _cast(walls, x, y, dx, dy)
        if not bx and not by:
            x += dx
            y += dy
            break
        x += t * dx
        y += t * dy
        rdx = (1.0 - t) * dx
        rdy = (1.0 - t) * dy
        if bx:
            x -= math.copysign(margin, dx)
            rdx = 0.0
        if by:
            y -= math.copysign(margin, dy)
            rdy = 0.0
        dx = rdx
        dy = rdy
    return x, y


def point_rollout(walls, x, y, disp, margin):
    h = disp.shape[0]
    out = np.empty((h + 1, 2), dtype=np.float64)
    out[0, 0] = x
    out[0, 1] = y
    x = float(x)
    y = float(y)
    for t, (dx, dy) in enumerate(disp.tolist()):
        x, y = slide_step(walls, x, y, dx, dy, margin)
        out[t + 1, 0] = x
        out[t + 1, 1] = y
    return out


def average_linkage(dist, threshold):
    """Agglomerative clustering, average linkage, merge while distance < threshold.

    Ties go to the lexicographically smallest (i, j) pair; labels are
    numbered by each cluster's lowest point index.
    """
    n = dist.shape[0]
    d = np.array(dist, dtype=np.float64, copy=True)
    upper = np.triu(np.ones((n, n), dtype=bool), k=1)
    d[~upper] = np.inf
    size = np.ones(n, dtype=np.float64)
    root = np.arange(n)
    while True:
        flat = int(np.argmin(d))
        i, j = divmod(flat, n)
        best = d[i, j]
        if not best < threshold:
            break
        si, sj = size[i], size[j]
        # rows/cols hold the distance of i to every other cluster k
        row_i = np.minimum(d[i, :], d[:, i])
        row_j = np.minimum(d[j, :], d[:, j])
        merged = (si * row_i + sj * row_j) / (si + sj)
        alive = np.isfinite(row_i) & np.isfinite(row_j)
        for k in np.flatnonzero(alive):
            if k == i or k == j:
                continue
            if k < i:
                d[k, i] = merged[k]
            else:
                d[i, k] = merged[k]
        d[j, :] = np.inf
        d[:, j] = np.inf
        size[i] = si + sj
        root[root == j] = i
    labels = np.empty(n, dtype=np.int64)
    seen = {}
    for p in range(n):
        labels[p] = seen.setdefault(int(root[p]), len(seen))
    return labels


def q_episode(q, nxt, cum, phi, gate, goal, start, alpha, gamma, eps, kappa,
              u, learn, shaped, trace=None):
    """One epsilon-greedy Q-learning (or greedy evaluation) episode.

    ``q`` is the (n_states, n_actions) slice for this goal and is updated in
    place when ``learn`` is true. Shaping ``kappa * (phi[s] - gamma * phi[s'])``
    is added only when both endpoints pass ``gate``.
    Returns ``(steps, success)``.
    """
    n_actions = q.shape[1]
    ql = q.tolist()
    nxt_l = nxt.tolist()
    cum_l = cum.tolist()
    phil = phi.tolist() if shaped else None
    gl = gate.tolist() if shaped else None
    s = int(start)
    goal = int(goal)
    if trace is not None:
        trace[0] = s
    steps = u.shape[0]
    success = False
    for t, (u0, u1, u2) in enumerate(u.tolist()):
        row = ql[s]
        if u0 < eps:
            a = int(u1 * n_actions)
            if a >= n_actions:
                a = n_actions - 1
        else:
            best = row[0]
            for b in range(1, n_actions):
                if row[b] > best:
                    best = row[b]
            ties = 0
            for b in range(n_actions):
                if row[b] == best:
                    ties += 1
            pick = int(u1 * ties)
            if pick >= ties:
                pick = ties - 1
            a = 0
            for b in range(n_actions):
                if row[b] == best:
                    if pick == 0:
                        a = b
                        break
                    pick -= 1
        k = _pick(cum_l[s][a], u2)
        s2 = nxt_l[s][a][k]
        done = s2 == goal
        r = 1.0 if done else 0.0
        if shaped and gl[s] and gl[s2]:
            r += kappa * (phil[s] - gamma * phil[s2])
        if learn:
            if done:
                target = r
            else:
                nrow = ql[s2]
                m = nrow[0]
                for b in range(1, n_actions):
                    if nrow[b] > m:
                        m = nrow[b]
                target = r + gamma * m
            row[a] += alpha * (target - row[a])
        if trace is not None:
            trace[t + 1] = s2
        s = s2
        if done:
            steps = t + 1
            success = True
            break
    if learn:
        q[:, :] = ql
    return steps, success
