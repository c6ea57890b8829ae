"""Hot inner loops, each in two flavours.

The ``*_loops`` functions are written element-by-element for numba; the
``*_numpy`` functions compute the same quantity with vectorized numpy and are
used when numba is disabled (see :mod:`vpcca._accel`).  Public callers go
through the un-suffixed dispatchers at the bottom of the module.
"""
from __future__ import annotations

import math

import numpy as np

from ._accel import USE_NUMBA, njit

# ---------------------------------------------------------------------------
# cyclic Jacobi eigensolver


def _jacobi_eig_loops(a, vt, tol, max_sweeps):
    # a is symmetric; only rows are swept and mirrored into columns.
    # vt accumulates the rotations row-wise (rows are eigenvectors).
    n = a.shape[0]
    for sweep in range(max_sweeps + 1):
        off = 0.0
        for i in range(n):
            for j in range(i + 1, n):
                off += 2.0 * a[i, j] * a[i, j]
        if math.sqrt(off) <= tol:
            return sweep, True
        if sweep == max_sweeps:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                if theta >= 0.0:
                    t = 1.0 / (theta + math.sqrt(theta * theta + 1.0))
                else:
                    t = -1.0 / (-theta + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                for k in range(n):
                    if k == p or k == q:
                        continue
                    apk = a[p, k]
                    aqk = a[q, k]
                    a[p, k] = c * apk - s * aqk
                    a[q, k] = s * apk + c * aqk
                    a[k, p] = a[p, k]
                    a[k, q] = a[q, k]
                a[p, p] -= t * apq
                a[q, q] += t * apq
                a[p, q] = 0.0
                a[q, p] = 0.0
                for k in range(n):
                    vpk = vt[p, k]
                    vqk = vt[q, k]
                    vt[p, k] = c * vpk - s * vqk
                    vt[q, k] = s * vpk + c * vqk
    return max_sweeps, False


_jacobi_eig_loops_jit = njit(_jacobi_eig_loops)


def round_robin(n: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Tournament schedule: ``n - 1`` rounds (``n`` padded to even) of disjoint index pairs."""
    m = n + (n % 2)
    players = list(range(m))
    rounds = []
    for _ in range(m - 1):
        p, q = [], []
        for i in range(m // 2):
            x, y = players[i], players[m - 1 - i]
            if x >= n or y >= n:
                continue
            p.append(min(x, y))
            q.append(max(x, y))
        rounds.append((np.array(p, dtype=np.intp), np.array(q, dtype=np.intp)))
        players = [players[0], players[-1], *players[1:-1]]
    return rounds


def _rotation(app, aqq, apq):
    nz = apq != 0.0
    theta = np.where(nz, (aqq - app) / np.where(nz, 2.0 * apq, 1.0), 0.0)
    sign = np.where(theta >= 0.0, 1.0, -1.0)
    t = np.where(nz, sign / (np.abs(theta) + np.sqrt(theta * theta + 1.0)), 0.0)
    c = 1.0 / np.sqrt(t * t + 1.0)
    return c, t * c


def _jacobi_eig_numpy(a, vt, tol, max_sweeps):
    n = a.shape[0]
    schedule = round_robin(n)
    iu = np.triu_indices(n, 1)
    for sweep in range(max_sweeps + 1):
        if math.sqrt(2.0 * float(np.sum(a[iu] ** 2))) <= tol:
            return sweep, True
        if sweep == max_sweeps:
            break
        # pairs in one round are disjoint, so their rotations commute
        for p, q in schedule:
            c, s = _rotation(a[p, p], a[q, q], a[p, q])
            rp, rq = a[p, :].copy(), a[q, :].copy()
            a[p, :] = c[:, None] * rp - s[:, None] * rq
            a[q, :] = s[:, None] * rp + c[:, None] * rq
            cp, cq = a[:, p].copy(), a[:, q].copy()
            a[:, p] = cp * c - cq * s
            a[:, q] = cp * s + cq * c
            a[p, q] = 0.0
            a[q, p] = 0.0
            vp, vq = vt[p, :].copy(), vt[q, :].copy()
            vt[p, :] = c[:, None] * vp - s[:, None] * vq
            vt[q, :] = s[:, None] * vp + c[:, None] * vq
    return max_sweeps, False


# ---------------------------------------------------------------------------
# one-sided (Hestenes) Jacobi SVD on the rows of g (the columns of the input)


def _jacobi_svd_loops(g, vt, tol, max_sweeps, small):
    # rows of g are the columns of the input; they are rotated until mutually orthogonal.
    # rows whose squared norm is below `small` are round-off and left alone.
    n, m = g.shape
    for sweep in range(max_sweeps):
        rotated = False
        for p in range(n - 1):
            for q in range(p + 1, n):
                alpha = 0.0
                beta = 0.0
                gamma = 0.0
                for k in range(m):
                    alpha += g[p, k] * g[p, k]
                    beta += g[q, k] * g[q, k]
                    gamma += g[p, k] * g[q, k]
                if alpha <= small or beta <= small:
                    continue
                if abs(gamma) <= tol * math.sqrt(alpha * beta):
                    continue
                rotated = True
                zeta = (beta - alpha) / (2.0 * gamma)
                if zeta >= 0.0:
                    t = 1.0 / (zeta + math.sqrt(1.0 + zeta * zeta))
                else:
                    t = -1.0 / (-zeta + math.sqrt(1.0 + zeta * zeta))
                c = 1.0 / math.sqrt(1.0 + t * t)
                s = c * t
                for k in range(m):
                    gpk = g[p, k]
                    gqk = g[q, k]
                    g[p, k] = c * gpk - s * gqk
                    g[q, k] = s * gpk + c * gqk
                for k in range(n):
                    vpk = vt[p, k]
                    vqk = vt[q, k]
                    vt[p, k] = c * vpk - s * vqk
                    vt[q, k] = s * vpk + c * vqk
        if not rotated:
            return sweep + 1, True
    return max_sweeps, False


_jacobi_svd_loops_jit = njit(_jacobi_svd_loops)


def _jacobi_svd_numpy(g, vt, tol, max_sweeps, small):
    n = g.shape[0]
    schedule = round_robin(n)
    for sweep in range(max_sweeps):
        rotated = False
        for p, q in schedule:
            gp, gq = g[p, :].copy(), g[q, :].copy()
            alpha = np.einsum("ij,ij->i", gp, gp)
            beta = np.einsum("ij,ij->i", gq, gq)
            gamma = np.einsum("ij,ij->i", gp, gq)
            act = (alpha > small) & (beta > small) & (np.abs(gamma) > tol * np.sqrt(alpha * beta))
            if not act.any():
                continue
            rotated = True
            # same angle as the eigen-rotation of the Gram block [[alpha, gamma], [gamma, beta]]
            c, s = _rotation(alpha, beta, np.where(act, gamma, 0.0))
            g[p, :] = c[:, None] * gp - s[:, None] * gq
            g[q, :] = s[:, None] * gp + c[:, None] * gq
            vp, vq = vt[p, :].copy(), vt[q, :].copy()
            vt[p, :] = c[:, None] * vp - s[:, None] * vq
            vt[q, :] = s[:, None] * vp + c[:, None] * vq
        if not rotated:
            return sweep + 1, True
    return max_sweeps, False


# ---------------------------------------------------------------------------
# nearest-centroid assignment


def _assign_loops(x, centers):
    n, d = x.shape
    k = centers.shape[0]
    labels = np.empty(n, dtype=np.int64)
    dist = np.empty(n, dtype=np.float64)
    for i in range(n):
        best = np.inf
        arg = 0
        for j in range(k):
            acc = 0.0
            for t in range(d):
                diff = x[i, t] - centers[j, t]
                acc += diff * diff
            if acc < best:
                best = acc
                arg = j
        labels[i] = arg
        dist[i] = best
    return labels, dist


_assign_loops_jit = njit(_assign_loops)


def _assign_numpy(x, centers, chunk=4096):
    n = x.shape[0]
    labels = np.empty(n, dtype=np.int64)
    dist = np.empty(n, dtype=np.float64)
    for start in range(0, n, chunk):
        block = x[start:start + chunk]
        d2 = np.sum((block[:, None, :] - centers[None, :, :]) ** 2, axis=2)
        lab = np.argmin(d2, axis=1)
        labels[start:start + chunk] = lab
        dist[start:start + chunk] = d2[np.arange(block.shape[0]), lab]
    return labels, dist


# ---------------------------------------------------------------------------
# bilinear rotation about the image centre, zero fill


def _rotate_loops(images, angles):
    b, h, w = images.shape
    out = np.zeros_like(images)
    cy = (h - 1) / 2.0
    cx = (w - 1) / 2.0
    for n in range(b):
        ca = math.cos(angles[n])
        sa = math.sin(angles[n])
        for y in range(h):
            for x in range(w):
                dx = x - cx
                dy = y - cy
                sx = ca * dx + sa * dy + cx
                sy = -sa * dx + ca * dy + cy
                x0 = math.floor(sx)
                y0 = math.floor(sy)
                fx = sx - x0
                fy = sy - y0
                acc = 0.0
                for oy in range(2):
                    yy = y0 + oy
                    if yy < 0 or yy >= h:
                        continue
                    wy = fy if oy == 1 else 1.0 - fy
                    for ox in range(2):
                        xx = x0 + ox
                        if xx < 0 or xx >= w:
                            continue
                        wx = fx if ox == 1 else 1.0 - fx
                        acc += wy * wx * images[n, yy, xx]
                out[n, y, x] = min(max(acc, 0.0), 1.0)
    return out


_rotate_loops_jit = njit(_rotate_loops)


def _rotate_numpy(images, angles):
    b, h, w = images.shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    yy, xx = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    dx, dy = xx - cx, yy - cy
    ca = np.cos(angles)[:, None, None]
    sa = np.sin(angles)[:, None, None]
    sx = ca * dx + sa * dy + cx
    sy = -sa * dx + ca * dy + cy
    x0, y0 = np.floor(sx), np.floor(sy)
    fx, fy = sx - x0, sy - y0
    x0 = x0.astype(np.intp)
    y0 = y0.astype(np.intp)
    idx = np.arange(b)[:, None, None]
    out = np.zeros(images.shape, dtype=np.float64)
    for oy, wy in ((0, 1.0 - fy), (1, fy)):
        for ox, wx in ((0, 1.0 - fx), (1, fx)):
            ys, xs = y0 + oy, x0 + ox
            ok = (ys >= 0) & (ys < h) & (xs >= 0) & (xs < w)
            vals = images[idx, np.clip(ys, 0, h - 1), np.clip(xs, 0, w - 1)]
            out += np.where(ok, wy * wx * vals, 0.0)
    return np.clip(out, 0.0, 1.0)


# ---------------------------------------------------------------------------
# dispatch

if USE_NUMBA:
    jacobi_eig = _jacobi_eig_loops_jit
    jacobi_svd = _jacobi_svd_loops_jit
    assign = _assign_loops_jit
    rotate = _rotate_loops_jit
else:
    jacobi_eig = _jacobi_eig_numpy
    jacobi_svd = _jacobi_svd_numpy
    assign = _assign_numpy
    rotate = _rotate_numpy

IMPLEMENTATIONS = {
    "jacobi_eig": (_jacobi_eig_loops_jit, _jacobi_eig_numpy),
    "jacobi_svd": (_jacobi_svd_loops_jit, _jacobi_svd_numpy),
    "assign": (_assign_loops_jit, _assign_numpy),
    "rotate": (_rotate_loops_jit, _rotate_numpy),
}
