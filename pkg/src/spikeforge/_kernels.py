"""Compiled inner loop for transient Newton steps.

Mirrors :meth:`spikeforge.solver.MnaSystem.static` plus the trapezoidal
companion terms and the damped Newton update, fused into one call so the
per-step cost is not dominated by interpreter overhead.  The numpy path in
``solver`` remains the reference implementation.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit


@njit(cache=True)
def _softplus(h):
    if h > 0.0:
        return h + math.log1p(math.exp(-h))
    return math.log1p(math.exp(h))


@njit(cache=True)
def static_eval(x, isrc, G, vs_val, N, n, r_p, r_n, r_g, cs_p, cs_n, vs_p, vs_n,
                m_sign, m_vt0, m_n, m_is, m_ut, m_d, m_g, m_s, m_b, fe, J, scale, mos_i):
    """Fill ``fe`` (K), ``J`` (K x K), ``scale`` (K) and ``mos_i`` for state ``x``."""
    K = n + 1
    xe = np.empty(K)
    for i in range(n):
        xe[i] = x[i]
    xe[n] = 0.0
    for i in range(K):
        acc = 0.0
        for j in range(K):
            J[i, j] = G[i, j]
            acc += G[i, j] * xe[j]
        fe[i] = acc
        scale[i] = 0.0
    for k in range(vs_val.shape[0]):
        fe[N + k] -= vs_val[k]
    for k in range(r_g.shape[0]):
        a = abs(r_g[k] * (xe[r_p[k]] - xe[r_n[k]]))
        scale[r_p[k]] = max(scale[r_p[k]], a)
        scale[r_n[k]] = max(scale[r_n[k]], a)
    for k in range(isrc.shape[0]):
        fe[cs_p[k]] += isrc[k]
        fe[cs_n[k]] -= isrc[k]
        a = abs(isrc[k])
        scale[cs_p[k]] = max(scale[cs_p[k]], a)
        scale[cs_n[k]] = max(scale[cs_n[k]], a)
    for k in range(vs_val.shape[0]):
        a = abs(x[N + k])
        scale[vs_p[k]] = max(scale[vs_p[k]], a)
        scale[vs_n[k]] = max(scale[vs_n[k]], a)
    for k in range(m_sign.shape[0]):
        sg = m_sign[k]
        d, g, s, b = m_d[k], m_g[k], m_s[k], m_b[k]
        v_p = (sg * (xe[g] - xe[b]) - m_vt0[k]) / m_n[k]
        hf = 0.5 * (v_p - sg * (xe[s] - xe[b])) / m_ut[k]
        hr = 0.5 * (v_p - sg * (xe[d] - xe[b])) / m_ut[k]
        spf = _softplus(hf)
        spr = _softplus(hr)
        dff = spf * math.exp(hf - spf)
        dfr = spr * math.exp(hr - spr)
        kk = m_is[k] / m_ut[k]
        i_ds = sg * m_is[k] * (spf * spf - spr * spr)
        gm = kk * (dff - dfr) / m_n[k]
        gds = kk * dfr
        gms = -kk * dff
        gmb = -(gm + gds + gms)
        mos_i[k] = i_ds
        fe[d] += i_ds
        fe[s] -= i_ds
        J[d, g] += gm
        J[d, d] += gds
        J[d, s] += gms
        J[d, b] += gmb
        J[s, g] -= gm
        J[s, d] -= gds
        J[s, s] -= gms
        J[s, b] -= gmb
        a = abs(i_ds)
        scale[d] = max(scale[d], a)
        scale[s] = max(scale[s], a)


@njit(cache=True)
def _lu_solve(A, b):
    """Gaussian elimination with partial pivoting; ``ok`` False on a zero pivot."""
    n = b.shape[0]
    M = A.copy()
    y = b.copy()
    for c in range(n):
        p = c
        best = abs(M[c, c])
        for r in range(c + 1, n):
            if abs(M[r, c]) > best:
                best = abs(M[r, c])
                p = r
        if best == 0.0:
            return y, False
        if p != c:
            for j in range(n):
                M[c, j], M[p, j] = M[p, j], M[c, j]
            y[c], y[p] = y[p], y[c]
        for r in range(c + 1, n):
            fct = M[r, c] / M[c, c]
            if fct != 0.0:
                for j in range(c, n):
                    M[r, j] -= fct * M[c, j]
                y[r] -= fct * y[c]
    for c in range(n - 1, -1, -1):
        acc = y[c]
        for j in range(c + 1, n):
            acc -= M[c, j] * y[j]
        y[c] = acc / M[c, c]
    return y, True


@njit(cache=True)
def tran_newton(guess, xn, icn_nodes, a, Cm, isrc, G, vs_val, N, n, r_p, r_n, r_g, cs_p, cs_n,
                vs_p, vs_n, m_sign, m_vt0, m_n, m_is, m_ut, m_d, m_g, m_s, m_b,
                abstol_i, abstol_v, reltol, v_step, maxit):
    """Damped Newton on the trapezoidal step equations.

    Returns ``(x, ok, iters, mos_i, ratio)`` with the same convergence rule
    as the interpreted solver: every KCL row within
    ``abstol_i + reltol*scale``, every source row within ``abstol_v`` and
    the preceding update within the voltage tolerance.
    """
    K = n + 1
    fe = np.empty(K)
    J = np.empty((K, K))
    scale = np.empty(K)
    mos_i = np.empty(m_sign.shape[0])
    R = np.empty(n)
    Jt = np.empty((n, n))
    x = guess.copy()
    dx_ok = False
    ratio = np.inf
    for it in range(maxit + 1):
        static_eval(x, isrc, G, vs_val, N, n, r_p, r_n, r_g, cs_p, cs_n, vs_p, vs_n,
                    m_sign, m_vt0, m_n, m_is, m_ut, m_d, m_g, m_s, m_b, fe, J, scale, mos_i)
        ratio = 0.0
        finite = True
        for i in range(n):
            cap = 0.0
            for j in range(n):
                cap += Cm[i, j] * (x[j] - xn[j])
                Jt[i, j] = J[i, j] + a * Cm[i, j]
            cap = a * cap - icn_nodes[i]
            R[i] = cap + fe[i]
            if not math.isfinite(R[i]):
                finite = False
            if i < N:
                r = abs(R[i]) / (abstol_i + reltol * max(scale[i], abs(cap)))
            else:
                r = abs(R[i]) / abstol_v
            if r > ratio:
                ratio = r
        if not finite:
            return x, False, it, mos_i, np.inf
        if dx_ok and ratio <= 1.0:
            return x, True, it, mos_i, ratio
        if it == maxit:
            break
        dx, ok = _lu_solve(Jt, -R)
        if not ok:
            return x, False, it, mos_i, ratio
        for i in range(n):
            if not math.isfinite(dx[i]):
                return x, False, it, mos_i, ratio
        dx_ok = True
        for i in range(n):
            d = dx[i]
            if i < N:
                d = min(max(d, -v_step), v_step)
            x[i] += d
            if i < N and abs(d) > abstol_v + reltol * abs(x[i]):
                dx_ok = False
    return x, False, maxit, mos_i, ratio
