"""Hot inner loops.

Every kernel exists twice: an explicit-loop version compiled with numba and a
vectorised numpy version. The public names bind to one or the other according
to :data:`stiffkit._accel.USE_NUMBA`. Both versions perform the same floating
point comparisons, so the integer-valued kernels agree exactly.
"""

import numpy as np

from ._accel import USE_NUMBA, njit

__all__ = [
    "delta_counts",
    "kendall_counts",
    "jacobi_eigh",
    "euler_final",
    "euler_states",
]


# -- exceedance counts on a threshold grid ------------------------------------

@njit
def _delta_counts_loop(vals, mus, offsets, m1, m2):
    n_inputs = offsets.shape[0] - 1
    counts = np.zeros((m1.shape[0], m2.shape[0]), dtype=np.int64)
    for i in range(n_inputs):
        lo = offsets[i]
        hi = offsets[i + 1]
        for a in range(m1.shape[0]):
            scale = 1.0 + m1[a]
            best = -np.inf
            for j in range(lo, hi):
                v = vals[j]
                if v >= mus[j] * scale and v > best:
                    best = v
            if best == -np.inf:
                continue
            for b in range(m2.shape[0]):
                if best >= m2[b]:
                    counts[a, b] += 1
    return counts


def _delta_counts_numpy(vals, mus, offsets, m1, m2):
    counts = np.zeros((m1.shape[0], m2.shape[0]), dtype=np.int64)
    scale = 1.0 + m1
    for i in range(offsets.shape[0] - 1):
        lo, hi = offsets[i], offsets[i + 1]
        if hi == lo:
            continue
        v = vals[lo:hi, None]
        passes = v >= mus[lo:hi, None] * scale[None, :]
        best = np.where(passes, v, -np.inf).max(axis=0)
        counts += best[:, None] >= m2[None, :]
    return counts


# -- Kendall pair bookkeeping -------------------------------------------------

@njit
def _kendall_counts_loop(x, y):
    n = x.shape[0]
    conc = 0
    disc = 0
    tie_x = 0
    tie_y = 0
    tie_xy = 0
    for i in range(n):
        for j in range(i + 1, n):
            sx = 0
            if x[i] > x[j]:
                sx = 1
            elif x[i] < x[j]:
                sx = -1
            sy = 0
            if y[i] > y[j]:
                sy = 1
            elif y[i] < y[j]:
                sy = -1
            if sx == 0 and sy == 0:
                tie_xy += 1
            elif sx == 0:
                tie_x += 1
            elif sy == 0:
                tie_y += 1
            elif sx == sy:
                conc += 1
            else:
                disc += 1
    return conc, disc, tie_x, tie_y, tie_xy


def _kendall_counts_numpy(x, y):
    iu, ju = np.triu_indices(x.shape[0], k=1)
    sx = np.sign(x[iu] - x[ju])
    sy = np.sign(y[iu] - y[ju])
    zx = sx == 0
    zy = sy == 0
    prod = sx * sy
    return (
        int(np.count_nonzero(prod > 0)),
        int(np.count_nonzero(prod < 0)),
        int(np.count_nonzero(zx & ~zy)),
        int(np.count_nonzero(zy & ~zx)),
        int(np.count_nonzero(zx & zy)),
    )


# -- cyclic Jacobi eigen-solver ----------------------------------------------

@njit
def _rotation(app, aqq, apq):
    theta = (aqq - app) / (2.0 * apq)
    t = 1.0 / (abs(theta) + np.sqrt(theta * theta + 1.0))
    if theta < 0.0:
        t = -t
    c = 1.0 / np.sqrt(t * t + 1.0)
    return c, t * c


@njit
def _jacobi_loop(a, tol, max_sweeps):
    a = a.copy()
    d = a.shape[0]
    v = np.eye(d)
    scale = np.sqrt(np.sum(a * a))
    sweeps = 0
    while sweeps < max_sweeps:
        off = 0.0
        for p in range(d):
            for q in range(p + 1, d):
                off += a[p, q] * a[p, q]
        if np.sqrt(2.0 * off) <= tol * scale:
            break
        for p in range(d):
            for q in range(p + 1, d):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                c, s = _rotation(a[p, p], a[q, q], apq)
                for k in range(d):
                    akp = a[k, p]
                    akq = a[k, q]
                    a[k, p] = c * akp - s * akq
                    a[k, q] = s * akp + c * akq
                for k in range(d):
                    apk = a[p, k]
                    aqk = a[q, k]
                    a[p, k] = c * apk - s * aqk
                    a[q, k] = s * apk + c * aqk
                for k in range(d):
                    vkp = v[k, p]
                    vkq = v[k, q]
                    v[k, p] = c * vkp - s * vkq
                    v[k, q] = s * vkp + c * vkq
        sweeps += 1
    return np.diag(a).copy(), v, sweeps


def _jacobi_numpy(a, tol, max_sweeps):
    a = np.array(a, dtype=np.float64, copy=True)
    d = a.shape[0]
    v = np.eye(d)
    scale = np.sqrt(np.sum(a * a))
    iu = np.triu_indices(d, k=1)
    sweeps = 0
    while sweeps < max_sweeps:
        if np.sqrt(2.0 * np.sum(a[iu] ** 2)) <= tol * scale:
            break
        for p in range(d):
            for q in range(p + 1, d):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = 1.0 / (abs(theta) + np.sqrt(theta * theta + 1.0))
                if theta < 0.0:
                    t = -t
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                cp, cq = a[:, p].copy(), a[:, q].copy()
                a[:, p] = c * cp - s * cq
                a[:, q] = s * cp + c * cq
                rp, rq = a[p, :].copy(), a[q, :].copy()
                a[p, :] = c * rp - s * rq
                a[q, :] = s * rp + c * rq
                vp, vq = v[:, p].copy(), v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
        sweeps += 1
    return np.diag(a).copy(), v, sweeps


# -- fixed-step forward Euler -------------------------------------------------
# ``rhs(u, t)`` must be a numba-compiled function when the numba path is used.

@njit
def _euler_states_loop(rhs, u0, t0, dt, n_steps, blowup):
    d = u0.shape[0]
    out = np.empty((n_steps + 1, d))
    out[0] = u0
    for k in range(n_steps):
        du = rhs(out[k], t0 + k * dt)
        bad = False
        for i in range(d):
            x = out[k, i] + du[i] * dt
            out[k + 1, i] = x
            if not np.isfinite(x) or abs(x) > blowup:
                bad = True
        if bad:
            return out[: k + 2], k + 1
    return out, -1


@njit
def _euler_final_loop(rhs, u0, t0, dt, n_steps, blowup):
    d = u0.shape[0]
    u = u0.copy()
    for k in range(n_steps):
        du = rhs(u, t0 + k * dt)
        bad = False
        for i in range(d):
            u[i] = u[i] + du[i] * dt
            if not np.isfinite(u[i]) or abs(u[i]) > blowup:
                bad = True
        if bad:
            return u, k + 1
    return u, -1


def _euler_states_python(rhs, u0, t0, dt, n_steps, blowup):
    out = np.empty((n_steps + 1, u0.shape[0]))
    out[0] = u0
    for k in range(n_steps):
        out[k + 1] = out[k] + rhs(out[k], t0 + k * dt) * dt
        row = out[k + 1]
        if not np.all(np.isfinite(row)) or np.max(np.abs(row)) > blowup:
            return out[: k + 2], k + 1
    return out, -1


def _euler_final_python(rhs, u0, t0, dt, n_steps, blowup):
    u = np.array(u0, dtype=np.float64, copy=True)
    for k in range(n_steps):
        u = u + rhs(u, t0 + k * dt) * dt
        if not np.all(np.isfinite(u)) or np.max(np.abs(u)) > blowup:
            return u, k + 1
    return u, -1


if USE_NUMBA:
    delta_counts = _delta_counts_loop
    _kendall_impl = _kendall_counts_loop
    _jacobi_impl = _jacobi_loop
    euler_states = _euler_states_loop
    euler_final = _euler_final_loop
else:
    delta_counts = _delta_counts_numpy
    _kendall_impl = _kendall_counts_numpy
    _jacobi_impl = _jacobi_numpy
    euler_states = _euler_states_python
    euler_final = _euler_final_python


def kendall_counts(x, y):
    """Return ``(concordant, discordant, ties_x_only, ties_y_only, ties_both)``."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    return tuple(int(c) for c in _kendall_impl(x, y))


def jacobi_eigh(a, tol=1e-12, max_sweeps=100):
    a = np.ascontiguousarray(a, dtype=np.float64)
    return _jacobi_impl(a, tol, max_sweeps)
