"""Element-local numba kernels for the multi-cell polarization problem.

Per element, minimize over J_1..J_K

    sum_k U_k(J_k) + chi_k |J_k - Jp_k|_eps + nu0/2 |B - sum_k J_k|^2.

The problem is solved through its dual in the field H: for fixed H every cell
decouples into min_J U_k(J) - <H, J> + chi_k |J - Jp_k|_eps, and H maximizes
the strongly concave function

    D(H) = <H, B> - |H|^2 / (2 nu0) - sum_k phi_k*(H),

whose gradient is B - H/nu0 - sum_k J_k(H). Damped Newton on -D uses the
Hessian I/nu0 + sum_k D_k^{-1} with D_k the cell Hessians.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

SERIES_CUTOFF = 1e-3
DOMAIN_MARGIN = 1e-9


@njit(cache=True)
def radial(r, As, Js, c):
    """Return (u, u'/r, w) of the log-cos profile so that hess U = (u'/r) I + w J J^T.

    Returns u = inf when r >= Js.
    """
    if r >= Js:
        return np.inf, np.inf, np.inf
    q = 0.5 * math.pi / Js
    a = 0.5 * c * As * q
    th = q * r
    pref = c * As * Js / math.pi
    if th < SERIES_CUTOFF:
        t2 = th * th
        u = pref * (0.5 * t2 + t2 * t2 / 12.0)
        du_r = a * (1.0 + t2 / 3.0 + 2.0 * t2 * t2 / 15.0)
        w = a * q * q * (2.0 / 3.0 + 8.0 * t2 / 15.0)
        return u, du_r, w
    s = math.sin(th)
    co = math.cos(th)
    if th < 0.5:
        u = -0.5 * pref * math.log1p(-s * s)
    else:
        u = -pref * math.log(co)
    du_r = a * (s / co) / th
    d2u = a / (co * co)
    w = (d2u - du_r) / (r * r)
    return u, du_r, w


@njit(cache=True)
def _max_step(J, delta, Js):
    """Largest t <= 1 keeping |J_k + t delta_k| <= (1 - margin) Js_k."""
    t = 1.0
    for k in range(J.shape[0]):
        R = (1.0 - DOMAIN_MARGIN) * Js[k]
        a = delta[k, 0] ** 2 + delta[k, 1] ** 2
        if a == 0.0:
            continue
        if (J[k, 0] + delta[k, 0]) ** 2 + (J[k, 1] + delta[k, 1]) ** 2 <= R * R:
            continue
        b = J[k, 0] * delta[k, 0] + J[k, 1] * delta[k, 1]
        cc = J[k, 0] ** 2 + J[k, 1] ** 2 - R * R
        disc = max(b * b - a * cc, 0.0)
        tk = (-b + math.sqrt(disc)) / a
        if tk < t:
            t = max(tk, 0.0)
    return t


@njit(cache=True)
def cell_eval(hx, hy, jx, jy, jpx, jpy, As, Js, c, chi, eps):
    """Cell objective U(J) - <H, J> + chi |J - Jp|_eps with gradient and Hessian.

    Returns (f, gx, gy, dxx, dxy, dyy); f is inf outside the domain.
    """
    r = math.sqrt(jx * jx + jy * jy)
    u, du_r, w = radial(r, As, Js, c)
    if not math.isfinite(u):
        return np.inf, 0.0, 0.0, 0.0, 0.0, 0.0
    dx = jx - jpx
    dy = jy - jpy
    nrm = math.sqrt(dx * dx + dy * dy + eps)
    gx = du_r * jx - hx
    gy = du_r * jy - hy
    dxx = du_r + w * jx * jx
    dxy = w * jx * jy
    dyy = du_r + w * jy * jy
    if chi > 0.0 and nrm > 0.0:
        vx = dx / nrm
        vy = dy / nrm
        gx += chi * vx
        gy += chi * vy
        cc = chi / nrm
        dxx += cc * (1.0 - vx * vx)
        dxy -= cc * vx * vy
        dyy += cc * (1.0 - vy * vy)
    return u - hx * jx - hy * jy + chi * nrm, gx, gy, dxx, dxy, dyy


@njit(cache=True)
def _max_step_cell(jx, jy, px, py, Js):
    R = (1.0 - DOMAIN_MARGIN) * Js
    a = px * px + py * py
    if a == 0.0 or (jx + px) ** 2 + (jy + py) ** 2 <= R * R:
        return 1.0
    b = jx * px + jy * py
    cc = jx * jx + jy * jy - R * R
    disc = max(b * b - a * cc, 0.0)
    return min(1.0, max((-b + math.sqrt(disc)) / a, 0.0))


@njit(cache=True)
def cell_guess(hx, hy, jpx, jpy, As, Js, c, chi, eps):
    """Starting point for a cell update from the eps -> 0 case analysis."""
    r = math.sqrt(jpx * jpx + jpy * jpy)
    _, du_r, _ = radial(r, As, Js, c)
    fx = hx - du_r * jpx
    fy = hy - du_r * jpy
    fn = math.sqrt(fx * fx + fy * fy)
    if fn == 0.0:
        return jpx, jpy
    ex = fx / fn
    ey = fy / fn
    if fn > chi:
        # moving cell: grad U(J) = H - chi e with e the driving direction
        px = hx - chi * ex
        py = hy - chi * ey
        pn = math.sqrt(px * px + py * py)
        if pn == 0.0:
            return 0.0, 0.0
        rr = (2.0 * Js / math.pi) * math.atan(2.0 * pn / (c * As))
        rr = min(rr, (1.0 - DOMAIN_MARGIN) * Js)
        return rr * px / pn, rr * py / pn
    # pinned cell: 1D balance chi t / sqrt(t^2 + eps) = |f|
    rho = fn / chi
    t = math.sqrt(eps) * rho / math.sqrt(max(1.0 - rho * rho, 1e-300))
    t = min(t, 0.5 * (Js - r))
    return jpx + t * ex, jpy + t * ey


@njit(cache=True)
def cell_solve(hx, hy, jpx, jpy, sx, sy, As, Js, c, chi, eps, tol, max_iter):
    """Minimize the cell objective by damped Newton.

    Starts from the best of (sx, sy), Jp and the case-analysis guess. Returns
    (jx, jy, gx, gy, dxx, dxy, dyy, residual).
    """
    f, gx, gy, dxx, dxy, dyy = cell_eval(hx, hy, sx, sy, jpx, jpy, As, Js, c, chi, eps)
    res = math.sqrt(gx * gx + gy * gy)
    jx, jy = sx, sy
    if res > tol:
        qx, qy = cell_guess(hx, hy, jpx, jpy, As, Js, c, chi, eps)
        f1 = cell_eval(hx, hy, jpx, jpy, jpx, jpy, As, Js, c, chi, eps)[0]
        f2 = cell_eval(hx, hy, qx, qy, jpx, jpy, As, Js, c, chi, eps)[0]
        if f1 < f and f1 <= f2:
            jx, jy = jpx, jpy
        elif f2 < f:
            jx, jy = qx, qy
        if jx != sx or jy != sy:
            f, gx, gy, dxx, dxy, dyy = cell_eval(hx, hy, jx, jy, jpx, jpy, As, Js, c, chi, eps)
            res = math.sqrt(gx * gx + gy * gy)
    it = 0
    while res > tol and it < max_iter:
        it += 1
        det = dxx * dyy - dxy * dxy
        px = -(dyy * gx - dxy * gy) / det
        py = -(-dxy * gx + dxx * gy) / det
        slope = gx * px + gy * py
        t = _max_step_cell(jx, jy, px, py, Js)
        noise = 1e-12 * (abs(f) + (abs(hx) + abs(hy) + chi) * Js)
        ok = False
        while t > 1e-20:
            tx = jx + t * px
            ty = jy + t * py
            ft, tgx, tgy, txx, txy, tyy = cell_eval(hx, hy, tx, ty, jpx, jpy, As, Js, c, chi, eps)
            rt = math.sqrt(tgx * tgx + tgy * tgy)
            if -slope <= noise:
                ok = rt < res
                if not ok and t < 0.1:
                    break
            else:
                ok = ft <= f + 1e-4 * t * slope
            if ok:
                break
            t *= 0.5
        if not ok:
            break
        jx = tx
        jy = ty
        f, gx, gy, dxx, dxy, dyy = ft, tgx, tgy, txx, txy, tyy
        res = rt
        if t * max(abs(px), abs(py)) <= 1e-16 * Js:
            break
    return jx, jy, gx, gy, dxx, dxy, dyy, res


@njit(cache=True)
def _dual_eval(hx, hy, B, Jp, Jstart, As, Js, c, chi, eps, nu0, tol_cell, cells):
    """Solve all cells at field H; returns (-D(H), grad_x, grad_y, max cell residual).

    ``cells`` (K, 7) receives [jx, jy, gx, gy, dxx, dxy, dyy] per cell.
    """
    K = Jp.shape[0]
    val = 0.5 * (hx * hx + hy * hy) / nu0 - hx * B[0] - hy * B[1]
    gx = hx / nu0 - B[0]
    gy = hy / nu0 - B[1]
    rmax = 0.0
    for k in range(K):
        row = cells[k]
        sol = cell_solve(hx, hy, Jp[k, 0], Jp[k, 1], Jstart[k, 0], Jstart[k, 1],
                         As[k], Js[k], c[k], chi[k], eps[k], tol_cell, 100)
        for i in range(7):
            row[i] = sol[i]
        rmax = max(rmax, sol[7])
        rr = math.sqrt(row[0] ** 2 + row[1] ** 2)
        u, _, _ = radial(rr, As[k], Js[k], c[k])
        dx = row[0] - Jp[k, 0]
        dy = row[1] - Jp[k, 1]
        # conjugate value phi*(H) = <H, J> - U(J) - chi |J - Jp|_eps
        val += hx * row[0] + hy * row[1] - u - chi[k] * math.sqrt(dx * dx + dy * dy + eps[k])
        gx += row[0]
        gy += row[1]
    return val, gx, gy, rmax


@njit(cache=True)
def _primal_residual(B, J, Jp, As, Js, c, chi, eps, nu0):
    K = J.shape[0]
    sx = 0.0
    sy = 0.0
    for k in range(K):
        sx += J[k, 0]
        sy += J[k, 1]
    hx = nu0 * (B[0] - sx)
    hy = nu0 * (B[1] - sy)
    res = 0.0
    for k in range(K):
        v, gx, gy, _, _, _ = cell_eval(hx, hy, J[k, 0], J[k, 1], Jp[k, 0], Jp[k, 1], As[k], Js[k], c[k], chi[k], eps[k])
        if not math.isfinite(v):
            return np.inf
        res = max(res, math.sqrt(gx * gx + gy * gy))
    return res


@njit(cache=True)
def _anhysteretic_field(B, As, Js, c, nu0):
    """H parallel to B with |B| = |H|/nu0 + sum_k J_k,anh(|H|)."""
    bn = math.sqrt(B[0] * B[0] + B[1] * B[1])
    if bn == 0.0:
        return 0.0, 0.0
    lo = 0.0
    hi = nu0 * bn
    h = 0.5 * (lo + hi)
    for _ in range(200):
        f = h / nu0 - bn
        df = 1.0 / nu0
        for k in range(As.shape[0]):
            z = 2.0 * h / (c[k] * As[k])
            f += (2.0 * Js[k] / math.pi) * math.atan(z)
            df += (2.0 * Js[k] / math.pi) * (2.0 / (c[k] * As[k])) / (1.0 + z * z)
        if f > 0.0:
            hi = h
        else:
            lo = h
        hn = h - f / df
        if not (lo < hn < hi):
            hn = 0.5 * (lo + hi)
        if abs(hn - h) <= 1e-15 * max(h, 1.0):
            h = hn
            break
        h = hn
    return h * B[0] / bn, h * B[1] / bn


@njit(cache=True)
def local_minimize(B, Jp, J0, H0, use_H0, As, Js, c, chi, eps, nu0, tol, max_iter,
                   J_out, H_out, iters, res_out):
    """Element-wise joint minimization; results written into J_out, H_out, iters, res_out.

    ``tol`` is the residual tolerance in A/m on every cell's optimality
    condition grad U_k - H + chi_k v_k = 0 with H = nu0 (B - sum J).
    With ``use_H0`` the field iteration starts at ``H0[e]``; this is the right
    warm start after a small change of B, because nu0 (B - sum J0) amplifies
    that change by the cell susceptibility.
    """
    T = Jp.shape[0]
    K = Jp.shape[1]
    cells = np.empty((K, 7))
    trial = np.empty((K, 7))
    Jstart = np.empty((K, 2))
    jsum = 0.0
    for k in range(K):
        jsum += Js[k]
    for e in range(T):
        sx = 0.0
        sy = 0.0
        for k in range(K):
            sx += J0[e, k, 0]
            sy += J0[e, k, 1]
            Jstart[k, 0] = J0[e, k, 0]
            Jstart[k, 1] = J0[e, k, 1]
        if use_H0:
            hx = H0[e, 0]
            hy = H0[e, 1]
        else:
            hx = nu0 * (B[e, 0] - sx)
            hy = nu0 * (B[e, 1] - sy)
        tol_cell = 1e-13 * (math.sqrt(hx * hx + hy * hy) + As.max() + chi.max())
        val, gx, gy, rc = _dual_eval(hx, hy, B[e], Jp[e], Jstart, As, Js, c, chi, eps, nu0, tol_cell, cells)
        res = nu0 * math.sqrt(gx * gx + gy * gy) + rc
        # saturated cells cannot resolve H below ~1e-11 |H| in double precision
        tol_e = tol + 1e-11 * math.sqrt(hx * hx + hy * hy)
        if res > tol_e and not use_H0:
            ax, ay = _anhysteretic_field(B[e], As, Js, c, nu0)
            va, gxa, gya, rca = _dual_eval(ax, ay, B[e], Jp[e], Jstart, As, Js, c, chi, eps, nu0, tol_cell, trial)
            if va < val:
                hx, hy, val, gx, gy, rc = ax, ay, va, gxa, gya, rca
                res = nu0 * math.sqrt(gx * gx + gy * gy) + rc
                for k in range(K):
                    for i in range(7):
                        cells[k, i] = trial[k, i]
        it = 0
        tol_e = tol + 1e-11 * math.sqrt(hx * hx + hy * hy)
        stalled = False
        while res > tol_e and it < max_iter and not stalled:
            it += 1
            mxx = 1.0 / nu0
            mxy = 0.0
            myy = 1.0 / nu0
            for k in range(K):
                det = cells[k, 4] * cells[k, 6] - cells[k, 5] * cells[k, 5]
                mxx += cells[k, 6] / det
                mxy -= cells[k, 5] / det
                myy += cells[k, 4] / det
            det = mxx * myy - mxy * mxy
            dhx = -(myy * gx - mxy * gy) / det
            dhy = -(-mxy * gx + mxx * gy) / det
            slope = gx * dhx + gy * dhy
            hn = math.sqrt(hx * hx + hy * hy)
            bn = math.sqrt(B[e, 0] ** 2 + B[e, 1] ** 2)
            noise = 1e-13 * (abs(val) + hn * (bn + jsum) + hn * hn / nu0)
            tol_cell = 1e-13 * (hn + As.max() + chi.max())
            for k in range(K):
                Jstart[k, 0] = cells[k, 0]
                Jstart[k, 1] = cells[k, 1]
            t = 1.0
            ok = False
            while t > 1e-20:
                vt, gxt, gyt, rct = _dual_eval(hx + t * dhx, hy + t * dhy, B[e], Jp[e], Jstart,
                                               As, Js, c, chi, eps, nu0, tol_cell, trial)
                rest = nu0 * math.sqrt(gxt * gxt + gyt * gyt) + rct
                if -slope <= 100.0 * noise:
                    # predicted decrease is at roundoff level: judge by the residual
                    ok = rest < res
                    stalled = ok and rest > 0.5 * res
                    if not ok and t < 0.1:
                        break
                else:
                    ok = vt <= val + 1e-4 * t * slope
                if ok:
                    break
                t *= 0.5
            if not ok:
                break
            hx += t * dhx
            hy += t * dhy
            val = vt
            gx = gxt
            gy = gyt
            res = rest
            for k in range(K):
                for i in range(7):
                    cells[k, i] = trial[k, i]
        for k in range(K):
            J_out[e, k, 0] = cells[k, 0]
            J_out[e, k, 1] = cells[k, 1]
        H_out[e, 0] = hx
        H_out[e, 1] = hy
        iters[e] = it
        res_out[e] = _primal_residual(B[e], J_out[e], Jp[e], As, Js, c, chi, eps, nu0)


@njit(cache=True)
def cell_terms(J, Jp, As, Js, c, chi, eps, grad, hess):
    """Per element sum_k U_k + chi_k |J_k - Jp_k|_eps with cell gradients and Hessians.

    ``grad`` is (T, K, 2); ``hess`` is (T, K, 3) holding (xx, xy, yy). Elements
    with a cell outside the domain get an infinite value.
    """
    T = J.shape[0]
    K = J.shape[1]
    out = np.empty(T)
    for e in range(T):
        s = 0.0
        for k in range(K):
            f, gx, gy, dxx, dxy, dyy = cell_eval(0.0, 0.0, J[e, k, 0], J[e, k, 1], Jp[e, k, 0], Jp[e, k, 1],
                                                 As[k], Js[k], c[k], chi[k], eps[k])
            s += f
            grad[e, k, 0] = gx
            grad[e, k, 1] = gy
            hess[e, k, 0] = dxx
            hess[e, k, 1] = dxy
            hess[e, k, 2] = dyy
        out[e] = s
    return out


@njit(cache=True)
def cell_energy(J, Jp, As, Js, c, chi, eps):
    """Per element sum_k U_k + chi_k |J_k - Jp_k|_eps, inf outside the domain."""
    T = J.shape[0]
    K = J.shape[1]
    out = np.empty(T)
    for e in range(T):
        s = 0.0
        for k in range(K):
            dx = J[e, k, 0] - Jp[e, k, 0]
            dy = J[e, k, 1] - Jp[e, k, 1]
            u = radial(math.sqrt(J[e, k, 0] ** 2 + J[e, k, 1] ** 2), As[k], Js[k], c[k])[0]
            s += u + chi[k] * math.sqrt(dx * dx + dy * dy + eps[k])
        out[e] = s
    return out
