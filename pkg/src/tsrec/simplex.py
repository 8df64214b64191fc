"""Nelder-Mead simplex search for conditional-sum-of-squares ARMA fits.

Standard coefficients (reflection 1, expansion 2, contraction 0.5, shrink 0.5)
and the usual stopping rule: stop once both the spread of objective values and
the spread of vertices fall below their tolerances.
"""

from __future__ import annotations

import numba
import numpy as np


@numba.njit(cache=True)
def _sort(sim, fsim):
    order = np.argsort(fsim, kind="mergesort")
    return sim[order].copy(), fsim[order].copy()


@numba.njit(cache=True)
def css_objective(x, w, p):
    """Conditional sum of squares of a zero-mean ARMA with coefficients x = [phi; theta]."""
    n = w.size
    q = x.size - p
    e = np.zeros(n)
    sse = 0.0
    for t in range(p, n):
        pred = 0.0
        for i in range(p):
            pred += x[i] * w[t - 1 - i]
        for j in range(q):
            if t - 1 - j >= 0:
                pred += x[p + j] * e[t - 1 - j]
        e[t] = w[t] - pred
        sse += e[t] * e[t]
    if not np.isfinite(sse):
        return 1e300
    return sse


@numba.njit(cache=True)
def minimize_css(x0, step, w, p, max_iter, fatol, xatol):
    """Nelder-Mead over ARMA coefficients; returns (x, f, converged, iterations)."""
    k = x0.size
    sim = np.empty((k + 1, k))
    fsim = np.empty(k + 1)
    sim[0] = x0
    fsim[0] = css_objective(x0, w, p)
    for i in range(k):
        v = x0.copy()
        v[i] += step
        sim[i + 1] = v
        fsim[i + 1] = css_objective(v, w, p)
    sim, fsim = _sort(sim, fsim)
    it = 0
    converged = False
    while it < max_iter:
        fspread = 0.0
        xspread = 0.0
        for i in range(1, k + 1):
            fspread = max(fspread, abs(fsim[i] - fsim[0]))
            for j in range(k):
                xspread = max(xspread, abs(sim[i, j] - sim[0, j]))
        if fspread <= fatol and xspread <= xatol:
            converged = True
            break
        it += 1
        centroid = np.zeros(k)
        for i in range(k):
            centroid += sim[i]
        centroid /= k
        xr = 2.0 * centroid - sim[k]
        fr = css_objective(xr, w, p)
        shrink = False
        if fr < fsim[0]:
            xe = 3.0 * centroid - 2.0 * sim[k]
            fe = css_objective(xe, w, p)
            if fe < fr:
                sim[k], fsim[k] = xe, fe
            else:
                sim[k], fsim[k] = xr, fr
        elif fr < fsim[k - 1]:
            sim[k], fsim[k] = xr, fr
        elif fr < fsim[k]:
            xc = 1.5 * centroid - 0.5 * sim[k]
            fc = css_objective(xc, w, p)
            if fc <= fr:
                sim[k], fsim[k] = xc, fc
            else:
                shrink = True
        else:
            xcc = 0.5 * centroid + 0.5 * sim[k]
            fcc = css_objective(xcc, w, p)
            if fcc < fsim[k]:
                sim[k], fsim[k] = xcc, fcc
            else:
                shrink = True
        if shrink:
            for i in range(1, k + 1):
                sim[i] = sim[0] + 0.5 * (sim[i] - sim[0])
                fsim[i] = css_objective(sim[i], w, p)
        sim, fsim = _sort(sim, fsim)
    return sim[0].copy(), fsim[0], converged, it
