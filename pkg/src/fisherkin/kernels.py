"""Hot loops, each with a numba and a pure-numpy implementation.

The public functions dispatch on :func:`fisherkin._backend.backend`. Both
implementations follow the same arithmetic, so results agree to rounding
(and bit-for-bit for :func:`pairwise_sum`).
"""

from __future__ import annotations

import numpy as np

from ._backend import njit, use_numba

# ---------------------------------------------------------------------------
# pairwise tree reduction


def _pairwise_sum_numpy(x):
    buf = np.array(x, dtype=np.float64).ravel()
    m = buf.size
    if m == 0:
        return 0.0
    while m > 1:
        half = m // 2
        nxt = buf[0 : 2 * half : 2] + buf[1 : 2 * half : 2]
        if m % 2:
            nxt = np.append(nxt, buf[m - 1])
        buf = nxt
        m = buf.size
    return float(buf[0])


@njit
def _pairwise_sum_numba(x):
    m = x.size
    if m == 0:
        return 0.0
    buf = x.copy()
    while m > 1:
        half = m // 2
        for i in range(half):
            buf[i] = buf[2 * i] + buf[2 * i + 1]
        if m % 2:
            buf[half] = buf[m - 1]
            m = half + 1
        else:
            m = half
    return buf[0]


def pairwise_sum(x) -> float:
    """Sum with a fixed pairwise tree order (adjacent pairs, odd tail carried)."""
    arr = np.ascontiguousarray(x, dtype=np.float64).ravel()
    if use_numba():
        return float(_pairwise_sum_numba(arr))
    return _pairwise_sum_numpy(arr)


# ---------------------------------------------------------------------------
# direct lattice convolution: out[v] = sum_w kern[v - w] f[w]


def _direct_convolve_numpy(f, kern):
    n = f.shape[0]
    out = np.zeros_like(f)
    for i, j, k in zip(*np.nonzero(f)):
        out += f[i, j, k] * kern[n - 1 - i : 2 * n - 1 - i, n - 1 - j : 2 * n - 1 - j, n - 1 - k : 2 * n - 1 - k]
    return out


@njit
def _direct_convolve_numba(f, kern):
    n = f.shape[0]
    out = np.zeros_like(f)
    for i in range(n):
        for j in range(n):
            for k in range(n):
                s = 0.0
                for a in range(n):
                    for b in range(n):
                        for c in range(n):
                            s += kern[i - a + n - 1, j - b + n - 1, k - c + n - 1] * f[a, b, c]
                out[i, j, k] = s
    return out


def direct_convolve(f, kern):
    """Brute-force lattice convolution on a cubic ``n^3`` grid.

    ``kern`` holds kernel values at all lattice offsets, shape ``(2n-1,)*3``
    with offset zero at index ``n-1``.
    """
    f = np.ascontiguousarray(f, dtype=np.float64)
    kern = np.ascontiguousarray(kern, dtype=np.float64)
    if use_numba():
        return _direct_convolve_numba(f, kern)
    return _direct_convolve_numpy(f, kern)


# ---------------------------------------------------------------------------
# gain term by shift interpolation over lattice offsets


def lagrange_weights(t: float, order: int) -> np.ndarray:
    """Lagrange weights at fractional position ``t`` on nodes ``lo..lo+order-1``."""
    w = np.empty(order)
    _lagrange_weights(t, order, w)
    return w


@njit
def _lagrange_weights(t, order, w):
    lo = -(order // 2 - 1)
    for m in range(order):
        xm = lo + m
        s = 1.0
        for q in range(order):
            if q != m:
                xq = lo + q
                s *= (t - xq) / (xm - xq)
        w[m] = s


@njit
def _shift_interp_numba(f, px, py, pz, order, ilo, jlo, klo, mx, my, mz, t1, t2, res):
    # res[a,b,c] = f interpolated at (ilo+a+px, jlo+b+py, klo+c+pz), zero outside
    n = f.shape[0]
    lo = -(order // 2 - 1)
    ix = int(np.floor(px))
    iy = int(np.floor(py))
    iz = int(np.floor(pz))
    wx = np.empty(order)
    wy = np.empty(order)
    wz = np.empty(order)
    _lagrange_weights(px - ix, order, wx)
    _lagrange_weights(py - iy, order, wy)
    _lagrange_weights(pz - iz, order, wz)
    for a in range(mx + order - 1):
        ii = ilo + ix + lo + a
        for b in range(my + order - 1):
            jj = jlo + iy + lo + b
            if ii < 0 or ii >= n or jj < 0 or jj >= n:
                for c in range(mz):
                    t1[a, b, c] = 0.0
                continue
            for c in range(mz):
                s = 0.0
                for m in range(order):
                    kk = klo + c + iz + lo + m
                    if kk >= 0 and kk < n:
                        s += wz[m] * f[ii, jj, kk]
                t1[a, b, c] = s
    for a in range(mx + order - 1):
        for b in range(my):
            for c in range(mz):
                s = 0.0
                for m in range(order):
                    s += wy[m] * t1[a, b + m, c]
                t2[a, b, c] = s
    for a in range(mx):
        for b in range(my):
            for c in range(mz):
                s = 0.0
                for m in range(order):
                    s += wx[m] * t2[a + m, b, c]
                res[a, b, c] = s if s > 0.0 else 0.0


@njit
def _offset_frame(ux, uy, uz):
    r = np.sqrt(ux * ux + uy * uy + uz * uz)
    if r > 0.0:
        e3x = ux / r
        e3y = uy / r
        e3z = uz / r
    else:
        e3x = 0.0
        e3y = 0.0
        e3z = 1.0
    if abs(e3x) < 0.9:
        ax, ay, az = 1.0, 0.0, 0.0
    else:
        ax, ay, az = 0.0, 1.0, 0.0
    d = ax * e3x + ay * e3y + az * e3z
    e1x = ax - d * e3x
    e1y = ay - d * e3y
    e1z = az - d * e3z
    nn = np.sqrt(e1x * e1x + e1y * e1y + e1z * e1z)
    e1x /= nn
    e1y /= nn
    e1z /= nn
    e2x = e3y * e1z - e3z * e1y
    e2y = e3z * e1x - e3x * e1z
    e2z = e3x * e1y - e3y * e1x
    return e1x, e1y, e1z, e2x, e2y, e2z, e3x, e3y, e3z


@njit
def _qplus_numba(f, g, h, gamma, local, weights, order):
    n = f.shape[0]
    out = np.zeros((n, n, n))
    t1 = np.empty((n + order, n + order, n))
    t2 = np.empty((n + order, n, n))
    ga = np.empty((n, n, n))
    fa = np.empty((n, n, n))
    ns = local.shape[0]
    h3 = h * h * h
    for ux in range(-(n - 1), n):
        for uy in range(-(n - 1), n):
            for uz in range(-(n - 1), n):
                rr = np.sqrt(ux * ux + uy * uy + uz * uz)
                if rr == 0.0 and gamma > 0.0:
                    continue
                kern = (h * rr) ** gamma if rr > 0.0 else 1.0
                e1x, e1y, e1z, e2x, e2y, e2z, e3x, e3y, e3z = _offset_frame(ux, uy, uz)
                ilo = max(0, ux)
                jlo = max(0, uy)
                klo = max(0, uz)
                mx = min(n, n + ux) - ilo
                my = min(n, n + uy) - jlo
                mz = min(n, n + uz) - klo
                for s in range(ns):
                    sa = local[s, 0]
                    sb = local[s, 1]
                    sc = local[s, 2]
                    sx = sa * e1x + sb * e2x + sc * e3x
                    sy = sa * e1y + sb * e2y + sc * e3y
                    sz = sa * e1z + sb * e2z + sc * e3z
                    w = weights[s] * kern * h3
                    # v' = v - u/2 + |u|sigma/2 and v'_* = v - u/2 - |u|sigma/2, in grid units
                    _shift_interp_numba(g, 0.5 * (-ux + rr * sx), 0.5 * (-uy + rr * sy), 0.5 * (-uz + rr * sz),
                                        order, ilo, jlo, klo, mx, my, mz, t1, t2, ga)
                    _shift_interp_numba(f, 0.5 * (-ux - rr * sx), 0.5 * (-uy - rr * sy), 0.5 * (-uz - rr * sz),
                                        order, ilo, jlo, klo, mx, my, mz, t1, t2, fa)
                    for a in range(mx):
                        for b in range(my):
                            for c in range(mz):
                                out[ilo + a, jlo + b, klo + c] += w * ga[a, b, c] * fa[a, b, c]
    return out


def _shift_axis_numpy(arr, axis, start, count, base, weights):
    # out[a] = sum_m weights[m] * arr[start + a + base + m], zero outside
    n = arr.shape[axis]
    order = len(weights)
    pad = count + order + n + abs(base)
    widths = [(0, 0)] * arr.ndim
    widths[axis] = (pad, pad)
    padded = np.pad(arr, widths)
    out = 0.0
    for m, wm in enumerate(weights):
        lo = pad + start + base + m
        sl = [slice(None)] * arr.ndim
        sl[axis] = slice(lo, lo + count)
        out = out + wm * padded[tuple(sl)]
    return out


def _shift_interp_numpy(f, p, order, lo3, m3):
    lo = -(order // 2 - 1)
    res = f
    for axis in range(3):
        base = int(np.floor(p[axis]))
        w = lagrange_weights(p[axis] - base, order)
        res = _shift_axis_numpy(res, axis, lo3[axis], m3[axis], base + lo, w)
    return np.maximum(res, 0.0)


def _qplus_numpy(f, g, h, gamma, local, weights, order):
    n = f.shape[0]
    out = np.zeros((n, n, n))
    for ux in range(-(n - 1), n):
        for uy in range(-(n - 1), n):
            for uz in range(-(n - 1), n):
                rr = np.sqrt(ux * ux + uy * uy + uz * uz)
                if rr == 0.0 and gamma > 0.0:
                    continue
                kern = (h * rr) ** gamma if rr > 0.0 else 1.0
                fr = _offset_frame(float(ux), float(uy), float(uz))
                e1, e2, e3 = np.array(fr[0:3]), np.array(fr[3:6]), np.array(fr[6:9])
                u = np.array([ux, uy, uz], dtype=float)
                lo3 = (max(0, ux), max(0, uy), max(0, uz))
                m3 = tuple(min(n, n + c) - l for c, l in zip((ux, uy, uz), lo3))
                sl = tuple(slice(l, l + m) for l, m in zip(lo3, m3))
                for s in range(local.shape[0]):
                    sig = local[s, 0] * e1 + local[s, 1] * e2 + local[s, 2] * e3
                    w = weights[s] * kern * h**3
                    ga = _shift_interp_numpy(g, 0.5 * (-u + rr * sig), order, lo3, m3)
                    fa = _shift_interp_numpy(f, 0.5 * (-u - rr * sig), order, lo3, m3)
                    out[sl] += w * ga * fa
    return out


def qplus_shift(f, g, h, gamma, local_nodes, weights, order=4):
    """Gain term by direct quadrature over lattice offsets and sigma nodes.

    ``local_nodes`` are unit vectors in the frame whose third axis is the
    relative velocity direction; ``weights`` already include the angular
    kernel. Off-grid values use Lagrange interpolation of the given order
    (2 = trilinear, 4 = tricubic), zero outside the box and clipped at zero.
    """
    f = np.ascontiguousarray(f, dtype=np.float64)
    g = np.ascontiguousarray(g, dtype=np.float64)
    local_nodes = np.ascontiguousarray(local_nodes, dtype=np.float64)
    weights = np.ascontiguousarray(weights, dtype=np.float64)
    if order not in (2, 4):
        raise ValueError("interpolation order must be 2 or 4")
    if use_numba():
        return _qplus_numba(f, g, float(h), float(gamma), local_nodes, weights, int(order))
    return _qplus_numpy(f, g, float(h), float(gamma), local_nodes, weights, int(order))


# ---------------------------------------------------------------------------
# Landau operator: fitted gradient and its exact adjoint
#
# ratio[ax, p, o+2] = M(x_p)/M(x_{p+o}) along axis ax, slope[ax, p] = d log M.
# The fitted gradient is M * D(f/M), with D the central/one-sided stencil.


def _fitted_gradient_numpy(f, ratio, slope, h):
    n = f.shape[0]
    c = 0.5 / h
    out = np.empty((3,) + f.shape)
    for ax in range(3):
        g = np.moveaxis(f, ax, 0)
        r = ratio[ax]
        sh = (slice(None), None, None)
        d = np.empty_like(g)
        d[1:-1] = c * (g[2:] * r[1:-1, 3][sh] - g[:-2] * r[1:-1, 1][sh])
        d[0] = c * (-3.0 * g[0] + 4.0 * g[1] * r[0, 3] - g[2] * r[0, 4])
        d[n - 1] = c * (3.0 * g[n - 1] - 4.0 * g[n - 2] * r[n - 1, 1] + g[n - 3] * r[n - 1, 0])
        d += g * slope[ax][sh]
        out[ax] = np.moveaxis(d, 0, ax)
    return out


def _adjoint_numpy(flux, h):
    # -sum_ax D_ax^T flux[ax]
    c = 0.5 / h
    total = np.zeros(flux.shape[1:])
    for ax in range(3):
        g = np.moveaxis(flux[ax], ax, 0)
        out = np.zeros_like(g)
        out[2:] += c * g[1:-1]
        out[:-2] -= c * g[1:-1]
        out[0] += -3.0 * c * g[0]
        out[1] += 4.0 * c * g[0]
        out[2] += -c * g[0]
        out[-1] += 3.0 * c * g[-1]
        out[-2] += -4.0 * c * g[-1]
        out[-3] += c * g[-1]
        total -= np.moveaxis(out, 0, ax)
    return total


def _landau_apply_numpy(f, a, drift, ratio, slope, h):
    grad = _fitted_gradient_numpy(f, ratio, slope, h)
    flux = np.einsum("ij...,j...->i...", a, grad) - drift * f[None]
    return _adjoint_numpy(flux, h)


@njit
def _fg_numba(f, r, s, i, j, k, ax, n, c):
    x0 = f[i, j, k]
    if ax == 0:
        p = i
        if p == 0:
            d = c * (-3.0 * x0 + 4.0 * f[1, j, k] * r[0, 0, 3] - f[2, j, k] * r[0, 0, 4])
        elif p == n - 1:
            d = c * (3.0 * x0 - 4.0 * f[n - 2, j, k] * r[0, p, 1] + f[n - 3, j, k] * r[0, p, 0])
        else:
            d = c * (f[i + 1, j, k] * r[0, p, 3] - f[i - 1, j, k] * r[0, p, 1])
    elif ax == 1:
        p = j
        if p == 0:
            d = c * (-3.0 * x0 + 4.0 * f[i, 1, k] * r[1, 0, 3] - f[i, 2, k] * r[1, 0, 4])
        elif p == n - 1:
            d = c * (3.0 * x0 - 4.0 * f[i, n - 2, k] * r[1, p, 1] + f[i, n - 3, k] * r[1, p, 0])
        else:
            d = c * (f[i, j + 1, k] * r[1, p, 3] - f[i, j - 1, k] * r[1, p, 1])
    else:
        p = k
        if p == 0:
            d = c * (-3.0 * x0 + 4.0 * f[i, j, 1] * r[2, 0, 3] - f[i, j, 2] * r[2, 0, 4])
        elif p == n - 1:
            d = c * (3.0 * x0 - 4.0 * f[i, j, n - 2] * r[2, p, 1] + f[i, j, n - 3] * r[2, p, 0])
        else:
            d = c * (f[i, j, k + 1] * r[2, p, 3] - f[i, j, k - 1] * r[2, p, 1])
    return d + x0 * s[ax, p]


@njit
def _fitted_gradient_numba(f, ratio, slope, h):
    n = f.shape[0]
    c = 0.5 / h
    out = np.empty((3, n, n, n))
    for i in range(n):
        for j in range(n):
            for k in range(n):
                for ax in range(3):
                    out[ax, i, j, k] = _fg_numba(f, ratio, slope, i, j, k, ax, n, c)
    return out


@njit
def _scatter_numba(out, J, i, j, k, ax, n, c):
    if ax == 0:
        if i == 0:
            out[0, j, k] += 3.0 * c * J
            out[1, j, k] -= 4.0 * c * J
            out[2, j, k] += c * J
        elif i == n - 1:
            out[n - 1, j, k] -= 3.0 * c * J
            out[n - 2, j, k] += 4.0 * c * J
            out[n - 3, j, k] -= c * J
        else:
            out[i + 1, j, k] -= c * J
            out[i - 1, j, k] += c * J
    elif ax == 1:
        if j == 0:
            out[i, 0, k] += 3.0 * c * J
            out[i, 1, k] -= 4.0 * c * J
            out[i, 2, k] += c * J
        elif j == n - 1:
            out[i, n - 1, k] -= 3.0 * c * J
            out[i, n - 2, k] += 4.0 * c * J
            out[i, n - 3, k] -= c * J
        else:
            out[i, j + 1, k] -= c * J
            out[i, j - 1, k] += c * J
    else:
        if k == 0:
            out[i, j, 0] += 3.0 * c * J
            out[i, j, 1] -= 4.0 * c * J
            out[i, j, 2] += c * J
        elif k == n - 1:
            out[i, j, n - 1] -= 3.0 * c * J
            out[i, j, n - 2] += 4.0 * c * J
            out[i, j, n - 3] -= c * J
        else:
            out[i, j, k + 1] -= c * J
            out[i, j, k - 1] += c * J


@njit
def _landau_apply_numba(f, a, drift, ratio, slope, h):
    n = f.shape[0]
    c = 0.5 / h
    out = np.zeros_like(f)
    for i in range(n):
        for j in range(n):
            for k in range(n):
                g0 = _fg_numba(f, ratio, slope, i, j, k, 0, n, c)
                g1 = _fg_numba(f, ratio, slope, i, j, k, 1, n, c)
                g2 = _fg_numba(f, ratio, slope, i, j, k, 2, n, c)
                fv = f[i, j, k]
                for ax in range(3):
                    jv = a[ax, 0, i, j, k] * g0 + a[ax, 1, i, j, k] * g1 + a[ax, 2, i, j, k] * g2 - drift[ax, i, j, k] * fv
                    _scatter_numba(out, jv, i, j, k, ax, n, c)
    return out


def fitted_gradient(f, ratio, slope, h):
    """Exponentially fitted gradient ``M * D(f / M)``, shape ``(3, n, n, n)``."""
    f = np.ascontiguousarray(f, dtype=np.float64)
    if use_numba():
        return _fitted_gradient_numba(f, ratio, slope, float(h))
    return _fitted_gradient_numpy(f, ratio, slope, float(h))


def landau_apply(f, a, drift, ratio, slope, h):
    """``-D^T (a * fitted_gradient(f) - drift * f)`` with frozen coefficient fields."""
    f = np.ascontiguousarray(f, dtype=np.float64)
    if use_numba():
        return _landau_apply_numba(f, a, drift, ratio, slope, float(h))
    return _landau_apply_numpy(f, a, drift, ratio, slope, float(h))
