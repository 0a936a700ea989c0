"""Compiled inner loops.

Polynomials are coefficient arrays, highest degree first, as produced by
``family.coefficient_table``.  Everything here is deterministic and
allocation-light so it can be called per grid cell.
"""

import math

import numpy as np
from numba import njit

# past this modulus the Newton ratio of P^n(z) - z is taken from its asymptotics
_HUGE = 1e8


@njit(cache=True, nogil=True)
def horner(coef, z):
    r = coef[0]
    for k in range(1, coef.shape[0]):
        r = r * z + coef[k]
    return r


@njit(cache=True, nogil=True)
def horner2(coef, z):
    p = coef[0]
    dp = 0j
    for k in range(1, coef.shape[0]):
        dp = dp * z + p
        p = p * z + coef[k]
    return p, dp


@njit(cache=True, nogil=True)
def green_point(coef, z, radius, tol, max_iter):
    """Escape-rate Green function with a certified tail.

    Returns (value, iterations, escaped).  Once |z_n| >= max(R, 2S', 1), with
    S' = sum_{j<d} |coef_j| / |lead|, the remainder after truncating at
    d^{-n} (log|z_n| + log|lead| / (d - 1)) is bounded by
    d^{-n} * 4 S' / ((2d - 1) |z_n|).
    """
    d = coef.shape[0] - 1
    lead = abs(coef[0])
    s = 0.0
    for k in range(1, d + 1):
        s += abs(coef[k])
    s /= lead
    floor = max(radius, 2.0 * s, 1.0)
    shift = math.log(lead) / (d - 1)
    w = z
    scale = 1.0
    for n in range(max_iter + 1):
        m = abs(w)
        if m >= floor:
            bound = scale * 4.0 * s / ((2 * d - 1) * m)
            if bound <= tol or m > 1e100:
                return scale * (math.log(m) + shift), n, True
        if n == max_iter:
            break
        w = horner(coef, w)
        scale /= d
    return 0.0, max_iter, False


@njit(cache=True, nogil=True)
def green_batch(coefs, zs, radii, tol, max_iter, values, iters, escaped):
    for i in range(zs.shape[0]):
        v, it, e = green_point(coefs[i], zs[i], radii[i], tol, max_iter)
        values[i] = v
        iters[i] = it
        escaped[i] = e


@njit(cache=True, nogil=True)
def newton_ratio(coef, z, n):
    """Q(z)/Q'(z) for Q = P^n(z) - z, safe for far-out z."""
    d = coef.shape[0] - 1
    w = z
    dw = 1.0 + 0j
    for k in range(n):
        p, dp = horner2(coef, w)
        dw = dw * dp
        w = p
        if abs(w) > _HUGE:
            # z_n / z_n' with each further step contributing a factor ~ 1/d
            return (w / dw) * float(d) ** (-(n - k - 1))
    return (w - z) / (dw - 1.0)


@njit(cache=True, nogil=True)
def aberth(coef, n, roots, max_iter, tol):
    """In-place Aberth-Ehrlich iteration on P^n(z) - z.

    Returns the number of roots whose last correction exceeded the tolerance.
    """
    N = roots.shape[0]
    done = np.zeros(N, dtype=np.bool_)
    for _ in range(max_iter):
        left = 0
        for i in range(N):
            if done[i]:
                continue
            zi = roots[i]
            r = newton_ratio(coef, zi, n)
            s = 0j
            for j in range(N):
                if j != i:
                    diff = zi - roots[j]
                    if diff == 0:
                        diff = 1e-12 * (1.0 + abs(zi)) * (1.0 + 1j) * (1 if j > i else -1)
                    s += 1.0 / diff
            delta = r / (1.0 - r * s)
            roots[i] = zi - delta
            if abs(delta) <= tol * (1.0 + abs(zi)):
                done[i] = True
            else:
                left += 1
        if left == 0:
            return 0
    left = 0
    for i in range(N):
        if not done[i]:
            left += 1
    return left


@njit(cache=True, nogil=True)
def newton_polish(coef, n, roots, steps, tol):
    """A few Newton steps per root; returns per-root final step sizes."""
    N = roots.shape[0]
    last = np.empty(N)
    for i in range(N):
        z = roots[i]
        step = np.inf
        for _ in range(steps):
            r = newton_ratio(coef, z, n)
            if not (np.isfinite(r.real) and np.isfinite(r.imag)):
                step = np.inf
                break
            z = z - r
            step = abs(r)
            if step <= tol * (1.0 + abs(z)):
                break
        roots[i] = z
        last[i] = step
    return last


@njit(cache=True, nogil=True)
def track(coef0, coef1, roots, n, substeps, newton_steps, tol):
    """Continue the roots of P_t^n(z) - z along P_t = (1-t) P_0 + t P_1.

    Tangent predictor dz/dt = -(dQ/dt)/(dQ/dz), Newton corrector.  Returns
    per-root final correction sizes (inf on breakdown).
    """
    N = roots.shape[0]
    dcoef = coef1 - coef0
    last = np.empty(N)
    ct = coef0.copy()
    for s in range(substeps):
        t0 = s / substeps
        t1 = (s + 1) / substeps
        for k in range(ct.shape[0]):
            ct[k] = coef0[k] + t0 * dcoef[k]
        cn = coef0 + t1 * dcoef
        for i in range(N):
            z = roots[i]
            w = z
            dw = 1.0 + 0j
            y = 0j
            for k in range(n):
                p, dp = horner2(ct, w)
                y = dp * y + horner(dcoef, w)
                dw = dw * dp
                w = p
            z = z - (t1 - t0) * y / (dw - 1.0)
            step = np.inf
            for _ in range(newton_steps):
                r = newton_ratio(cn, z, n)
                if not (np.isfinite(r.real) and np.isfinite(r.imag)):
                    step = np.inf
                    break
                z = z - r
                step = abs(r)
                if step <= tol * (1.0 + abs(z)):
                    break
            roots[i] = z
            last[i] = step
    return last


@njit(cache=True, nogil=True)
def _nearest(xs, order, roots, q, exclude):
    """Nearest root to q (index into roots), skipping ``exclude``; xs = sorted real parts."""
    N = xs.shape[0]
    pos = np.searchsorted(xs, q.real)
    best = np.inf
    bi = -1
    k = pos
    while k < N and xs[k] - q.real < best:
        j = order[k]
        if j != exclude:
            dist = abs(roots[j] - q)
            if dist < best:
                best = dist
                bi = j
        k += 1
    k = pos - 1
    while k >= 0 and q.real - xs[k] < best:
        j = order[k]
        if j != exclude:
            dist = abs(roots[j] - q)
            if dist < best:
                best = dist
                bi = j
        k -= 1
    return bi, best


@njit(cache=True, nogil=True)
def group_orbits(coef, roots, n, steps, merge_tol, map_tol):
    """Group roots of P^n(z) = z into orbits under P.

    Returns (succ, cycle_id, cycle_len, bad) where succ[i] is the index of
    P(roots[i]), cycle_id labels orbits (-1 for unresolved roots), cycle_len
    gives each orbit's length, and bad flags roots counted as defect:
    unconverged, closer than ``merge_tol`` to another root, or not part of a
    clean permutation cycle whose length divides n.
    """
    N = roots.shape[0]
    bad = np.zeros(N, dtype=np.bool_)
    for i in range(N):
        if not steps[i] <= 1e-6 * (1.0 + abs(roots[i])):
            bad[i] = True
    order = np.argsort(roots.real)
    xs = roots.real[order]
    for i in range(N):
        j, dist = _nearest(xs, order, roots, roots[i], i)
        if j >= 0 and dist <= merge_tol:
            bad[i] = True
    succ = np.full(N, -1, dtype=np.int64)
    hits = np.zeros(N, dtype=np.int64)
    for i in range(N):
        q = horner(coef, roots[i])
        j, dist = _nearest(xs, order, roots, q, -1)
        if j >= 0 and dist <= map_tol * (1.0 + abs(q)):
            succ[i] = j
            hits[j] += 1
        else:
            bad[i] = True
    for i in range(N):
        if hits[i] != 1:
            bad[i] = True
    cycle_id = np.full(N, -1, dtype=np.int64)
    cycle_len = np.zeros(N, dtype=np.int64)
    path = np.empty(N, dtype=np.int64)
    ncyc = 0
    visited = np.zeros(N, dtype=np.bool_)
    for i in range(N):
        if visited[i]:
            continue
        length = 0
        j = i
        ok = True
        while True:
            if j < 0 or bad[j] or visited[j]:
                ok = False
                break
            visited[j] = True
            path[length] = j
            length += 1
            j = succ[j]
            if j == i:
                break
        if ok and n % length == 0:
            for k in range(length):
                cycle_id[path[k]] = ncyc
            cycle_len[ncyc] = length
            ncyc += 1
        else:
            for k in range(length):
                bad[path[k]] = True
    return succ, cycle_id, cycle_len[:ncyc], bad


@njit(cache=True, nogil=True)
def cycle_log_products(coef, roots, succ, cycle_id, cycle_len, n, ws, out):
    """out[k] = sum over exact period-n orbits of log|ws[k] - multiplier|."""
    nc = cycle_len.shape[0]
    mult = np.ones(nc, dtype=np.complex128)
    d = coef.shape[0] - 1
    dcoef = np.empty(d, dtype=np.complex128)
    for k in range(d):
        dcoef[k] = coef[k] * (d - k)
    for i in range(roots.shape[0]):
        c = cycle_id[i]
        if c >= 0:
            mult[c] *= horner(dcoef, roots[i])
    for k in range(ws.shape[0]):
        out[k] = 0.0
    for c in range(nc):
        if cycle_len[c] != n:
            continue
        for k in range(ws.shape[0]):
            out[k] += math.log(abs(ws[k] - mult[c])) if ws[k] != mult[c] else -np.inf
    return mult


@njit(cache=True, nogil=True)
def repair(coef, n, roots, steps, merge_tol, max_iter, tol):
    """Re-solve only the broken roots, holding the others fixed.

    Broken means unconverged, or the later member of a near-duplicate pair.
    The moving roots run Aberth iterations against all roots, which is
    deflated Newton for the missing zeros.  Returns the number still moving.
    """
    N = roots.shape[0]
    active = np.zeros(N, dtype=np.bool_)
    for i in range(N):
        if not (steps[i] <= 1e-6 * (1.0 + abs(roots[i]))) or not np.isfinite(abs(roots[i])):
            active[i] = True
    order = np.argsort(roots.real)
    xs = roots.real[order]
    for i in range(N):
        j, dist = _nearest(xs, order, roots, roots[i], i)
        if j >= 0 and dist <= merge_tol and j < i:
            active[i] = True
    idx = np.flatnonzero(active)
    k = idx.shape[0]
    if k == 0:
        return 0
    for t in range(k):
        i = idx[t]
        if not np.isfinite(abs(roots[i])):
            roots[i] = 0.1 * (t + 1) * (1.0 + 0.5j)
        else:
            roots[i] += 1e-3 * (1.0 + abs(roots[i])) * np.exp(2j * np.pi * 0.618034 * (t + 1))
    done = np.zeros(k, dtype=np.bool_)
    for _ in range(max_iter):
        left = 0
        for t in range(k):
            if done[t]:
                continue
            i = idx[t]
            zi = roots[i]
            r = newton_ratio(coef, zi, n)
            s = 0j
            for j in range(N):
                if j != i:
                    diff = zi - roots[j]
                    if diff == 0:
                        diff = 1e-12 * (1.0 + abs(zi)) * (1.0 + 1j)
                    s += 1.0 / diff
            delta = r / (1.0 - r * s)
            roots[i] = zi - delta
            if abs(delta) <= tol * (1.0 + abs(zi)):
                done[t] = True
            else:
                left += 1
        if left == 0:
            return 0
    left = 0
    for t in range(k):
        if not done[t]:
            left += 1
    return left


@njit(cache=True, nogil=True)
def _tangent(ct, dcoef, z, n):
    w = z
    dw = 1.0 + 0j
    y = 0j
    for k in range(n):
        p, dp = horner2(ct, w)
        y = dp * y + horner(dcoef, w)
        dw = dw * dp
        w = p
    return -y / (dw - 1.0)


@njit(cache=True, nogil=True)
def track_adaptive(coef0, coef1, roots, n, tol, min_dt):
    """Per-root adaptive continuation of P_t^n(z) = z from t = 0 to t = 1.

    A step is accepted when the corrector contracts (second Newton
    correction at most a tenth of the first) and the first correction is
    small next to the predicted displacement; otherwise the step is halved.
    Returns final correction sizes (inf where the step fell below min_dt).
    """
    N = roots.shape[0]
    dcoef = coef1 - coef0
    ct = coef0.copy()
    last = np.empty(N)
    for i in range(N):
        z = roots[i]
        t = 0.0
        dt = 1.0
        ok = True
        while t < 1.0:
            if dt < min_dt:
                ok = False
                break
            if t + dt > 1.0:
                dt = 1.0 - t
            for k in range(ct.shape[0]):
                ct[k] = coef0[k] + t * dcoef[k]
            v = _tangent(ct, dcoef, z, n)
            zp = z + dt * v
            t1 = t + dt
            for k in range(ct.shape[0]):
                ct[k] = coef0[k] + t1 * dcoef[k]
            r1 = newton_ratio(ct, zp, n)
            z1 = zp - r1
            r2 = newton_ratio(ct, z1, n)
            a1 = abs(r1)
            a2 = abs(r2)
            scale = 1e-13 * (1.0 + abs(zp))
            if (np.isfinite(a1) and np.isfinite(a2) and a2 <= 0.1 * a1 + scale
                    and a1 <= 0.25 * dt * abs(v) + 1e3 * scale):
                z = z1 - r2
                t = t1
                dt *= 2.0
            else:
                dt *= 0.5
        if not ok:
            roots[i] = z
            last[i] = np.inf
            continue
        step = np.inf
        for _ in range(6):
            r = newton_ratio(coef1, z, n)
            z = z - r
            step = abs(r)
            if step <= tol * (1.0 + abs(z)):
                break
        roots[i] = z
        last[i] = step
    return last
