"""Compiled inner loops for the primal-dual solvers.

Discretisation: forward differences with Neumann boundary (the difference
leaving the last row/column is zero); divergence is the negative adjoint.
Loops run in a fixed order, so results are reproducible bit for bit.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def tv_isotropic(u):
    h, w = u.shape
    total = 0.0
    for i in range(h):
        for j in range(w):
            gx = u[i, j + 1] - u[i, j] if j < w - 1 else 0.0
            gy = u[i + 1, j] - u[i, j] if i < h - 1 else 0.0
            total += np.sqrt(gx * gx + gy * gy)
    return total


@njit(cache=True)
def tvl1_energy_kernel(u, f, lam):
    h, w = u.shape
    fid = 0.0
    for i in range(h):
        for j in range(w):
            fid += abs(u[i, j] - f[i, j])
    return tv_isotropic(u) + lam * fid


@njit(cache=True)
def tvl1_iterate(f, u, ubar, px, py, lam, tau, sigma, n_iter):
    """Chambolle-Pock iterations for min_u TV(u) + lam*|u - f|_1, in place."""
    h, w = f.shape
    shrink = tau * lam
    for _ in range(n_iter):
        for i in range(h):
            for j in range(w):
                gx = ubar[i, j + 1] - ubar[i, j] if j < w - 1 else 0.0
                gy = ubar[i + 1, j] - ubar[i, j] if i < h - 1 else 0.0
                a = px[i, j] + sigma * gx
                b = py[i, j] + sigma * gy
                nrm = np.sqrt(a * a + b * b)
                if nrm > 1.0:
                    a /= nrm
                    b /= nrm
                px[i, j] = a
                py[i, j] = b
        for i in range(h):
            for j in range(w):
                d = 0.0
                if j < w - 1:
                    d += px[i, j]
                if j > 0:
                    d -= px[i, j - 1]
                if i < h - 1:
                    d += py[i, j]
                if i > 0:
                    d -= py[i - 1, j]
                old = u[i, j]
                v = old + tau * d - f[i, j]
                if v > shrink:
                    new = f[i, j] + v - shrink
                elif v < -shrink:
                    new = f[i, j] + v + shrink
                else:
                    new = f[i, j]
                u[i, j] = new
                ubar[i, j] = 2.0 * new - old


@njit(cache=True)
def potts_energy_kernel(u, costs, lam):
    """0.5 * sum_k TV(u_k) + lam * sum_k <costs_k, u_k>."""
    k = u.shape[0]
    total = 0.0
    data = 0.0
    for c in range(k):
        total += 0.5 * tv_isotropic(u[c])
        data += np.sum(costs[c] * u[c])
    return total + lam * data


@njit(cache=True)
def _potts_dual_plane(ubar, xx, xy, sigma, radius):
    h, w = ubar.shape
    r2 = radius * radius
    for i in range(h):
        for j in range(w):
            ub = ubar[i, j]
            gx = ubar[i, j + 1] - ub if j < w - 1 else 0.0
            gy = ubar[i + 1, j] - ub if i < h - 1 else 0.0
            a = xx[i, j] + sigma * gx
            b = xy[i, j] + sigma * gy
            n2 = a * a + b * b
            if n2 > r2:
                s = radius / np.sqrt(n2)
                a *= s
                b *= s
            xx[i, j] = a
            xy[i, j] = b


@njit(cache=True)
def _potts_primal_plane(u, xx, xy, cost, lam, tau, out):
    h, w = u.shape
    for i in range(h):
        for j in range(w):
            d = 0.0
            if j < w - 1:
                d += xx[i, j]
            if j > 0:
                d -= xx[i, j - 1]
            if i < h - 1:
                d += xy[i, j]
            if i > 0:
                d -= xy[i - 1, j]
            out[i, j] = u[i, j] + tau * (d - lam * cost[i, j])


@njit(cache=True)
def project_planes(u, v):
    """Project each pixel's class vector in ``v`` onto the simplex; writes ``u`` and the extrapolation into ``v``.

    Michelot's active-set iteration: finite, exact, at most K passes per pixel.
    """
    k, h, w = v.shape
    for i in range(h):
        for j in range(w):
            s = 0.0
            for c in range(k):
                s += v[c, i, j]
            theta = (s - 1.0) / k
            for _ in range(k):
                s = 0.0
                n = 0
                for c in range(k):
                    x = v[c, i, j]
                    if x > theta:
                        s += x
                        n += 1
                t = (s - 1.0) / n
                if t == theta:
                    break
                theta = t
            for c in range(k):
                x = v[c, i, j] - theta
                if x < 0.0:
                    x = 0.0
                old = u[c, i, j]
                u[c, i, j] = x
                v[c, i, j] = 2.0 * x - old


@njit(cache=True)
def potts_iterate(costs, u, ubar, xx, xy, lam, tau, sigma, radius, n_iter):
    """Primal-dual iterations for the relaxed Potts model with per-label dual balls of ``radius``."""
    k = costs.shape[0]
    for _ in range(n_iter):
        for c in range(k):
            _potts_dual_plane(ubar[c], xx[c], xy[c], sigma, radius)
        for c in range(k):
            _potts_primal_plane(u[c], xx[c], xy[c], costs[c], lam, tau, ubar[c])
        project_planes(u, ubar)
