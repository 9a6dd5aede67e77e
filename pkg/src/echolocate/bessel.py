"""Spherical Bessel and Hankel functions by recurrence.

``j_n`` uses Miller's downward recurrence normalised against the closed-form
``j_0``/``j_1``; ``y_n`` uses the (stable) upward recurrence. All functions
return every order ``0..order`` at once with shape ``x.shape + (order + 1,)``.
"""

import numpy as np

_RESCALE = 1e100
_SMALL_X = 1e-8


def _start_order(order, xmax):
    m = max(order, int(np.ceil(xmax)))
    return m + int(np.sqrt(40.0 * max(m, 1))) + 10


def spherical_jn_all(order, x):
    """``j_n(x)`` for n = 0..order (x >= 0)."""
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise ValueError("spherical_jn_all expects x >= 0")
    flat = x.reshape(-1)
    out = np.zeros((flat.size, order + 1))
    small = flat < _SMALL_X
    if np.any(small):
        xs = flat[small]
        dfact = 1.0
        for n in range(order + 1):
            dfact *= 2 * n + 1
            out[small, n] = xs**n / dfact
    big = ~small
    if np.any(big):
        xb = flat[big]
        m = _start_order(order, xb.max())
        f_next = np.zeros_like(xb)
        f_cur = np.full_like(xb, 1e-300)
        vals = np.zeros((xb.size, order + 1))
        for n in range(m, 0, -1):
            f_prev = (2 * n + 1) / xb * f_cur - f_next
            f_next, f_cur = f_cur, f_prev
            if n - 1 <= order:
                vals[:, n - 1] = f_cur
            huge = np.abs(f_cur) > _RESCALE
            if np.any(huge):
                f_cur[huge] /= _RESCALE
                f_next[huge] /= _RESCALE
                vals[huge] /= _RESCALE
        j0 = np.sin(xb) / xb
        j1 = np.sin(xb) / xb**2 - np.cos(xb) / xb
        use0 = np.abs(j0) >= np.abs(j1)
        if order == 0:
            use0[:] = True
        ref = np.where(use0, j0, j1)
        col = np.where(use0, 0, min(1, order))
        scale = ref / vals[np.arange(xb.size), col]
        out[big] = vals * scale[:, None]
    return out.reshape(x.shape + (order + 1,))


def spherical_yn_all(order, x):
    """``y_n(x)`` for n = 0..order (x > 0)."""
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0):
        raise ValueError("spherical_yn_all expects x > 0")
    out = np.empty(x.shape + (order + 1,))
    out[..., 0] = -np.cos(x) / x
    if order >= 1:
        out[..., 1] = -np.cos(x) / x**2 - np.sin(x) / x
    for n in range(1, order):
        out[..., n + 1] = (2 * n + 1) / x * out[..., n] - out[..., n - 1]
    return out


def _derivative(f_all, x, order):
    # f_all holds orders 0..order+1
    d = np.empty(f_all.shape[:-1] + (order + 1,), dtype=f_all.dtype)
    d[..., 0] = -f_all[..., 1]
    n = np.arange(1, order + 1)
    d[..., 1:] = f_all[..., :order] - (n + 1) / x[..., None] * f_all[..., 1 : order + 1]
    return d


def spherical_jn_derivative_all(order, x):
    x = np.asarray(x, dtype=float)
    return _derivative(spherical_jn_all(order + 1, x), x, order)


def spherical_yn_derivative_all(order, x):
    x = np.asarray(x, dtype=float)
    return _derivative(spherical_yn_all(order + 1, x), x, order)


def spherical_hankel2_all(order, x, derivative=False):
    """Spherical Hankel function of the second kind, ``h_n = j_n - i y_n``.

    This is the outgoing wave for the ``exp(+i w t)`` time convention that
    matches numpy's FFT sign.
    """
    if derivative:
        return spherical_jn_derivative_all(order, x) - 1j * spherical_yn_derivative_all(order, x)
    return spherical_jn_all(order, x) - 1j * spherical_yn_all(order, x)
