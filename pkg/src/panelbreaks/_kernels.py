"""Compiled inner loops: segment SSR table and the sup-statistic path functional."""

from __future__ import annotations

import numba as nb
import numpy as np


@nb.njit(cache=True)
def _segment_projection(z):
    """Orthonormal basis of the nonzero columns of ``z`` and the squared-sv rcond."""
    length, q = z.shape
    keep = 0
    for c in range(q):
        nrm = 0.0
        for t in range(length):
            nrm += z[t, c] * z[t, c]
        if nrm > 0.0:
            keep += 1
    if keep == 0:
        return np.zeros((length, 0)), 1.0
    if keep >= length:
        return np.zeros((length, 0)), 0.0
    zs = np.empty((length, keep))
    j = 0
    for c in range(q):
        nrm = 0.0
        for t in range(length):
            nrm += z[t, c] * z[t, c]
        if nrm > 0.0:
            nrm = np.sqrt(nrm)
            for t in range(length):
                zs[t, j] = z[t, c] / nrm
            j += 1
    u, s, _ = np.linalg.svd(zs, full_matrices=False)
    rcond = (s[-1] / s[0]) ** 2 if s[0] > 0 else 0.0
    return np.ascontiguousarray(u), rcond


@nb.njit(cache=True)
def segment_table(s_rr, s_ry, s_yy, zbase, h, rcond_tol, pd_tol, annihilation_tol):
    """SSR of every segment ``[a, b)`` with ``b - a >= h`` from pooled cross-products.

    ``s_rr[t, :, s, :] = sum_i r_it r_is'``, ``s_ry[t, :, s] = sum_i r_it y_is``,
    ``s_yy[t, s] = sum_i y_it y_is``. Entry ``out[a, b - 1]`` is the segment SSR,
    ``inf`` when infeasible. Cost does not depend on N.
    """
    t_all = s_yy.shape[0]
    p = s_rr.shape[1]
    out = np.full((t_all, t_all), np.inf)
    count = 0
    for a in range(t_all):
        for b in range(a + h, t_all + 1):
            count += 1
            length = b - a
            u, rcond = _segment_projection(zbase[a:b])
            if rcond < rcond_tol:
                continue
            proj = u @ u.T
            g = np.zeros((p, p))
            c = np.zeros(p)
            yy = 0.0
            for t in range(length):
                for s in range(length):
                    w = -proj[t, s]
                    if t == s:
                        w += 1.0
                    if w == 0.0:
                        continue
                    yy += w * s_yy[a + t, a + s]
                    for i in range(p):
                        c[i] += w * s_ry[a + t, i, a + s]
                        for j in range(p):
                            g[i, j] += w * s_rr[a + t, i, a + s, j]
            ok = True
            d = np.empty(p)
            for i in range(p):
                raw = 0.0
                for t in range(length):
                    raw += s_rr[a + t, i, a + t, i]
                if not g[i, i] > annihilation_tol * raw:
                    ok = False
                    break
                d[i] = np.sqrt(g[i, i])
            if not ok:
                continue
            corr = g / np.outer(d, d)
            corr = 0.5 * (corr + corr.T)
            if not np.linalg.eigvalsh(corr)[0] > pd_tol:
                continue
            coef = np.linalg.solve(g, c)
            ssr = yy - c @ coef
            out[a, b - 1] = ssr if ssr > 0.0 else 0.0
    return out, count


@nb.njit(fastmath=True, boundscheck=False, cache=True)
def _push(tmp, hr, hb):
    for j in range(tmp.shape[0]):
        v = tmp[j] + hb
        if v > hr[j]:
            hr[j] = v


@nb.njit(fastmath=True, boundscheck=False, cache=True)
def _terms(u, b, lo, n, scale, inv_gap, ioff, av, tmp):
    # term(a, b) for a in [lo, lo + n), without the 1 / (r p_w) factor
    p = u.shape[0]
    t = tmp[:n]
    ud = u[0, lo:lo + n]
    ub = u[0, b]
    for j in range(n):
        df = ub - ud[j]
        t[j] = df * df
    for d in range(1, p):
        ub = u[d, b]
        ud = u[d, lo:lo + n]
        for j in range(n):
            df = ub - ud[j]
            t[j] += df * df
    a2 = av[lo:lo + n]
    iv = inv_gap[ioff:ioff + n]
    for j in range(n):
        t[j] *= a2[j] * scale * iv[j]
    return t


@nb.njit(fastmath=True, boundscheck=False, cache=True, nogil=True)
def supq_path(bt, m, kmax, out):
    """sup over trimmed partitions of the k-break functional, k = 1..kmax, for one path.

    ``bt`` is (p, G + 1) float32 Brownian motion on the grid ``i / G`` with
    ``bt[:, 0] = 0``; ``m`` is the minimum gap in grid steps. Writes
    ``max Q(k)`` into ``out[k - 1]``; entries with no admissible partition get -inf.
    Max-plus dynamic programme over the last break, pushed from right to left.
    """
    p = bt.shape[0]
    g_n = bt.shape[1] - 1
    dt = bt.dtype
    u = np.zeros((p, g_n + 1), dtype=dt)
    for d in range(p):
        for i in range(1, g_n + 1):
            u[d, i] = bt[d, i] * g_n / i
    inv_gap = np.zeros(g_n + 1, dtype=dt)
    for x in range(g_n):
        inv_gap[x] = 1.0 / (g_n - x)
    av = np.arange(g_n + 1).astype(dt)
    neg = dt.type(-1e30)
    h = np.full((kmax + 1, g_n + 1), neg, dtype=dt)
    hi = g_n - m
    tmp = np.empty(g_n + 1, dtype=dt)
    if hi >= m:
        t = _terms(u, g_n, m, hi - m + 1, dt.type(1.0), inv_gap, m, av, tmp)
        h[1, m:hi + 1] = t
        # term(a, b) = |u_b - u_a|^2 a b / (G (b - a)); here scale = b / G and the
        # inverse gap 1 / (b - a) is read from inv_gap shifted by G - b
        for b in range(hi, 2 * m - 1, -1):
            n = b - 2 * m + 1
            t = _terms(u, b, m, n, dt.type(b / g_n), inv_gap, g_n - b + m, av, tmp)
            for r in range(2, kmax + 1):
                hb = h[r - 1, b]
                if hb > neg:
                    _push(t, h[r, m:m + n], hb)
    for r in range(1, kmax + 1):
        best = -np.inf
        if hi >= m:
            for j in range(m, hi + 1):
                v = h[r, j]
                if v > neg and v > best:
                    best = v
        out[r - 1] = best / (r * p) if best > -np.inf else -np.inf


@nb.njit(cache=True, nogil=True)
def supq_chunk(bts, m, kmax, out):
    for i in range(bts.shape[0]):
        supq_path(bts[i], m, kmax, out[i])
