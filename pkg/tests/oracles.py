"""Brute-force reference computations, written with explicit loops.

These deliberately avoid the package's vectorized code paths.
"""

import itertools
import math

import numpy as np


def gauss(h, x, y):
    return math.exp(-((x - y) ** 2) / (2.0 * h * h))


def functionals(ens):
    return [(u, i) for u in range(len(ens.groups)) for i in range(1, ens.n + 1)]


def mean_increments(ens):
    out = []
    for grp in ens.groups:
        y = grp.snapshots
        for i in range(1, ens.n + 1):
            acc = 0.0
            for j in range(y.shape[0]):
                acc += y[j, i] - y[j, i - 1]
            out.append(acc / y.shape[0])
    return np.array(out)


def expected_pair(ens, h, u, s, v, t, distinct=True):
    """Empirical E[K(x_s, x_t)] for group u at time index s and group v at t."""
    yu = ens.groups[u].snapshots
    yv = ens.groups[v].snapshots
    acc = 0.0
    count = 0
    for j1 in range(yu.shape[0]):
        for j2 in range(yv.shape[0]):
            if distinct and u == v and j1 == j2:
                continue
            acc += gauss(h, yu[j1, s], yv[j2, t])
            count += 1
    return acc / count


def occupation_gram(ens, h, distinct=True):
    fs = functionals(ens)
    dt = np.diff(ens.grid.times)
    G = np.zeros((len(fs), len(fs)))
    for r, (u, a) in enumerate(fs):
        for c, (v, b) in enumerate(fs):
            total = 0.0
            for s, t in itertools.product((a - 1, a), (b - 1, b)):
                total += expected_pair(ens, h, u, s, v, t, distinct)
            G[r, c] = dt[a - 1] / 2.0 * dt[b - 1] / 2.0 * total
    return G


def representer(ens, h, index, x, exclude=None):
    u, i = functionals(ens)[index]
    y = ens.groups[u].snapshots
    dt = ens.grid.times[i] - ens.grid.times[i - 1]
    lo = hi = 0.0
    count = 0
    for j in range(y.shape[0]):
        if j == exclude:
            continue
        lo += gauss(h, x, y[j, i - 1])
        hi += gauss(h, x, y[j, i])
        count += 1
    return dt / 2.0 * (lo / count + hi / count)


def moment_matrices(ens, p):
    mats = []
    dt = np.diff(ens.grid.times)
    for grp in ens.groups:
        y = grp.snapshots
        k = y.shape[0]
        for i in range(1, ens.n + 1):
            M = np.zeros((p, p))
            for a in range(p):
                for b in range(p):
                    lo = sum(y[j, i - 1] ** (a + b) for j in range(k)) / k
                    hi = sum(y[j, i] ** (a + b) for j in range(k)) / k
                    M[a, b] = dt[i - 1] / 2.0 * (lo + hi)
            mats.append(M)
    N = len(mats)
    G = np.zeros((N, N))
    for r in range(N):
        for c in range(N):
            G[r, c] = sum(mats[r][a, b] * mats[c][b, a] for a in range(p) for b in range(p))
    return np.array(mats), G


def deterministic_fit(times, traj, h, lam):
    """Occupation-kernel regression for one noiseless trajectory.

    Returns a callable drift estimate.  Ridge is ``lam * n``.
    """
    n = len(times) - 1
    dt = [times[i] - times[i - 1] for i in range(1, n + 1)]
    G = np.zeros((n, n))
    for a in range(1, n + 1):
        for b in range(1, n + 1):
            total = 0.0
            for s in (a - 1, a):
                for t in (b - 1, b):
                    total += gauss(h, traj[s], traj[t])
            G[a - 1, b - 1] = dt[a - 1] * dt[b - 1] / 4.0 * total
    dy = np.array([traj[i] - traj[i - 1] for i in range(1, n + 1)])
    alpha = np.linalg.solve(G + lam * n * np.eye(n), dy)

    def f(x):
        total = 0.0
        for i in range(1, n + 1):
            total += alpha[i - 1] * dt[i - 1] / 2.0 * (gauss(h, x, traj[i - 1]) + gauss(h, x, traj[i]))
        return total

    return f


def grid_search_qp(A, b, c, mats, lo=-3.0, hi=3.0, step=1e-3, refine=(1e-5, 1e-7)):
    """Minimize ``a^T A a + b^T a + c`` over a grid of ``a`` (N <= 2) subject to
    ``sum a_i M_i`` PSD, then refine with finer local grids around the best cell.
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    mats = np.asarray(mats, dtype=float)
    N = b.size
    p = mats.shape[1]

    def feasible(pts):
        S = np.tensordot(pts, mats, axes=1)  # (..., p, p)
        if p == 1:
            return S[..., 0, 0] >= 0
        a, bb, d = S[..., 0, 0], S[..., 0, 1], S[..., 1, 1]
        return (a >= 0) & (d >= 0) & (a * d - bb * bb >= 0)

    def cost(pts):
        return np.einsum("...i,ij,...j->...", pts, A, pts) + pts @ b + c

    def search(centers_lo, centers_hi, h):
        axes = [np.arange(l, u + h / 2, h) for l, u in zip(centers_lo, centers_hi)]
        best_val, best_pt = np.inf, None
        if N == 1:
            pts = axes[0][:, None]
            vals = np.where(feasible(pts), cost(pts), np.inf)
            k = int(np.argmin(vals))
            return vals[k], pts[k]
        a0, a1 = axes
        for start in range(0, a0.size, 400):
            g0, g1 = np.meshgrid(a0[start:start + 400], a1, indexing="ij")
            pts = np.stack([g0, g1], axis=-1)
            vals = np.where(feasible(pts), cost(pts), np.inf)
            k = np.unravel_index(np.argmin(vals), vals.shape)
            if vals[k] < best_val:
                best_val, best_pt = vals[k], pts[k]
        return best_val, best_pt

    val, pt = search([lo] * N, [hi] * N, step)
    h_prev = step
    for h in refine:
        if pt is None or not np.isfinite(val):
            break
        v2, p2 = search(pt - 2 * h_prev, pt + 2 * h_prev, h)
        if v2 <= val:
            val, pt = v2, p2
        h_prev = h
    return float(val), pt
