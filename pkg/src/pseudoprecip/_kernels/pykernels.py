"""Pure-numpy kernel backend.

Reference implementations of the hot numerical kernels.  The compiled
backend in ``_core.pyx`` mirrors these signatures exactly; either one is
selected at import time by :mod:`pseudoprecip._kernels`.

All arrays are float64 and C-contiguous.  ``adam_update`` mutates its
parameter/moment arguments in place; everything else is pure.
"""

import numpy as np

name = "python"


def affine_forward(x, w, b):
    """y = x @ w.T + b for x (n,in), w (out,in), b (out,)."""
    return x @ w.T + b


def affine_backward(x, w, dy):
    """Gradients of an affine layer: returns (dx, dw, db)."""
    dx = dy @ w
    dw = dy.T @ x
    db = dy.sum(axis=0)
    return dx, dw, db


def tanh_forward(z):
    return np.tanh(z)


def tanh_backward(a, da):
    """Gradient through tanh given its output ``a``."""
    return da * (1.0 - a * a)


def adam_update(p, g, m, v, t, lr, beta1, beta2, eps):
    """Bias-corrected Adam step, in place on p, m, v. t is the 1-based step."""
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * g * g
    mhat = m / (1.0 - beta1 ** t)
    vhat = v / (1.0 - beta2 ** t)
    p -= lr * mhat / (np.sqrt(vhat) + eps)


def sorted_quantiles(sx, probs):
    """Linear-interpolation quantiles of an ascending-sorted sample.

    Position h = p*(n-1); q = sx[floor(h)] + frac*(sx[floor(h)+1] - sx[floor(h)]).
    """
    n = sx.shape[0]
    h = probs * (n - 1)
    lo = np.floor(h).astype(np.intp)
    np.clip(lo, 0, n - 2 if n > 1 else 0, out=lo)
    frac = h - lo
    if n == 1:
        return np.full_like(probs, sx[0])
    return sx[lo] * (1.0 - frac) + sx[lo + 1] * frac


def quantile_loss_grad(sx, probs, targets):
    """MSE between interpolated quantiles of a sorted sample and targets.

    Returns (loss, gradient w.r.t. the sorted sample).  Each bin routes
    its residual to the two sample positions that formed the quantile,
    weighted by the interpolation coefficients.
    """
    n = sx.shape[0]
    nb = probs.shape[0]
    h = probs * (n - 1)
    lo = np.floor(h).astype(np.intp)
    np.clip(lo, 0, n - 2 if n > 1 else 0, out=lo)
    frac = h - lo
    q = sx[lo] * (1.0 - frac) + sx[lo + 1] * frac if n > 1 else np.full(nb, sx[0])
    r = q - targets
    loss = float(r @ r) / nb
    coef = (2.0 / nb) * r
    grad = np.zeros(n)
    if n > 1:
        np.add.at(grad, lo, coef * (1.0 - frac))
        np.add.at(grad, lo + 1, coef * frac)
    else:
        grad[0] = coef.sum()
    return loss, grad
