"""Fused row kernels for the hot encoder ops.

Every kernel has a numba implementation and a pure-numpy twin with the same
signature. ``MRCDISTILL_DISABLE_NUMBA=1`` (or a missing numba install)
selects the numpy path at import; :func:`use_backend` switches at runtime.
All kernels take C-contiguous float64 arrays whose last axis is the row.
"""

from __future__ import annotations

import math
import os

import numpy as np
from scipy.special import erf as _erf

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

_SQRT_HALF = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


# ------------------------------------------------------------------- numpy


def softmax_fwd_numpy(x):
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_bwd_numpy(p, g):
    return p * (g - (g * p).sum(axis=-1, keepdims=True))


def layer_norm_fwd_numpy(x, gamma, beta, eps):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    return xhat * gamma + beta, xhat, rstd


def layer_norm_bwd_numpy(g, xhat, rstd, gamma):
    d = xhat.shape[-1]
    g2 = g.reshape(-1, d)
    xh2 = xhat.reshape(-1, d)
    dgamma = (g2 * xh2).sum(axis=0)
    dbeta = g2.sum(axis=0)
    gx = g * gamma
    mean_gx = gx.mean(axis=-1, keepdims=True)
    mean_gxx = (gx * xhat).mean(axis=-1, keepdims=True)
    dx = (gx - mean_gx - xhat * mean_gxx) * rstd
    return dx, dgamma, dbeta


def gelu_fwd_numpy(x):
    """Return ``(gelu(x), Phi(x))``; the normal CDF is reused by the backward pass."""
    cdf = 0.5 * (1.0 + _erf(x * _SQRT_HALF))
    return x * cdf, cdf


def gelu_bwd_numpy(x, cdf, g):
    pdf = np.exp(-0.5 * x * x) * _INV_SQRT_2PI
    return g * (cdf + x * pdf)


# ------------------------------------------------------------------- numba

if numba is not None:
    _jit = numba.njit(cache=True, fastmath=False)

    @_jit
    def _softmax_fwd_2d(x):
        n, m = x.shape
        out = np.empty_like(x)
        for i in range(n):
            mx = x[i, 0]
            for j in range(1, m):
                if x[i, j] > mx:
                    mx = x[i, j]
            s = 0.0
            for j in range(m):
                e = math.exp(x[i, j] - mx)
                out[i, j] = e
                s += e
            for j in range(m):
                out[i, j] /= s
        return out

    @_jit
    def _softmax_bwd_2d(p, g):
        n, m = p.shape
        out = np.empty_like(p)
        for i in range(n):
            dot = 0.0
            for j in range(m):
                dot += g[i, j] * p[i, j]
            for j in range(m):
                out[i, j] = p[i, j] * (g[i, j] - dot)
        return out

    @_jit
    def _layer_norm_fwd_2d(x, gamma, beta, eps):
        n, d = x.shape
        y = np.empty_like(x)
        xhat = np.empty_like(x)
        rstd = np.empty((n, 1))
        for i in range(n):
            mu = 0.0
            for j in range(d):
                mu += x[i, j]
            mu /= d
            var = 0.0
            for j in range(d):
                c = x[i, j] - mu
                var += c * c
            var /= d
            r = 1.0 / math.sqrt(var + eps)
            rstd[i, 0] = r
            for j in range(d):
                h = (x[i, j] - mu) * r
                xhat[i, j] = h
                y[i, j] = h * gamma[j] + beta[j]
        return y, xhat, rstd

    @_jit
    def _layer_norm_bwd_2d(g, xhat, rstd, gamma):
        n, d = g.shape
        dx = np.empty_like(g)
        dgamma = np.zeros(d)
        dbeta = np.zeros(d)
        for i in range(n):
            m1 = 0.0
            m2 = 0.0
            for j in range(d):
                gx = g[i, j] * gamma[j]
                m1 += gx
                m2 += gx * xhat[i, j]
                dgamma[j] += g[i, j] * xhat[i, j]
                dbeta[j] += g[i, j]
            m1 /= d
            m2 /= d
            r = rstd[i, 0]
            for j in range(d):
                dx[i, j] = (g[i, j] * gamma[j] - m1 - xhat[i, j] * m2) * r
        return dx, dgamma, dbeta

    @_jit
    def _gelu_fwd_1d(x):
        out = np.empty_like(x)
        cdf = np.empty_like(x)
        for i in range(x.size):
            v = x[i]
            c = 0.5 * (1.0 + math.erf(v * _SQRT_HALF))
            cdf[i] = c
            out[i] = v * c
        return out, cdf

    @_jit
    def _gelu_bwd_1d(x, cdf, g):
        out = np.empty_like(x)
        for i in range(x.size):
            v = x[i]
            pdf = math.exp(-0.5 * v * v) * _INV_SQRT_2PI
            out[i] = g[i] * (cdf[i] + v * pdf)
        return out

    def softmax_fwd_numba(x):
        return _softmax_fwd_2d(x.reshape(-1, x.shape[-1])).reshape(x.shape)

    def softmax_bwd_numba(p, g):
        m = p.shape[-1]
        return _softmax_bwd_2d(p.reshape(-1, m), g.reshape(-1, m)).reshape(p.shape)

    def layer_norm_fwd_numba(x, gamma, beta, eps):
        d = x.shape[-1]
        y, xhat, rstd = _layer_norm_fwd_2d(x.reshape(-1, d), gamma, beta, eps)
        return y.reshape(x.shape), xhat.reshape(x.shape), rstd.reshape(x.shape[:-1] + (1,))

    def layer_norm_bwd_numba(g, xhat, rstd, gamma):
        d = g.shape[-1]
        dx, dgamma, dbeta = _layer_norm_bwd_2d(
            g.reshape(-1, d), xhat.reshape(-1, d), rstd.reshape(-1, 1), gamma
        )
        return dx.reshape(g.shape), dgamma, dbeta

    def gelu_fwd_numba(x):
        out, cdf = _gelu_fwd_1d(x.ravel())
        return out.reshape(x.shape), cdf.reshape(x.shape)

    def gelu_bwd_numba(x, cdf, g):
        return _gelu_bwd_1d(x.ravel(), cdf.ravel(), g.ravel()).reshape(x.shape)


_NAMES = ("softmax_fwd", "softmax_bwd", "layer_norm_fwd", "layer_norm_bwd", "gelu_fwd", "gelu_bwd")
_active: dict = {}
backend = "numpy"


def available_backends() -> tuple[str, ...]:
    return ("numpy", "numba") if numba is not None else ("numpy",)


def use_backend(name: str) -> None:
    """Route the fused kernels to ``"numba"`` or ``"numpy"``."""
    global backend
    if name not in available_backends():
        raise ValueError(f"backend {name!r} unavailable; have {available_backends()}")
    g = globals()
    for op in _NAMES:
        _active[op] = g[f"{op}_{name}"]
    backend = name


def softmax_fwd(x):
    return _active["softmax_fwd"](x)


def softmax_bwd(p, g):
    return _active["softmax_bwd"](p, g)


def layer_norm_fwd(x, gamma, beta, eps):
    return _active["layer_norm_fwd"](x, gamma, beta, eps)


def layer_norm_bwd(g, xhat, rstd, gamma):
    return _active["layer_norm_bwd"](g, xhat, rstd, gamma)


def gelu_fwd(x):
    return _active["gelu_fwd"](x)


def gelu_bwd(x, cdf, g):
    return _active["gelu_bwd"](x, cdf, g)


_disabled = os.environ.get("MRCDISTILL_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes")
use_backend("numpy" if (_disabled or numba is None) else "numba")
