"""Layer primitives used by the recurrent event detector.

Layouts are channel-last: sequences are ``(batch, time, channels)`` and
2D feature maps are ``(batch, freq, time, channels)``.
"""
from __future__ import annotations

import numpy as np

from .tensor import Tensor, as_tensor, make_node

__all__ = ["conv1d", "conv2d", "batch_norm", "avg_pool", "max_pool", "dropout",
           "dense", "softmax", "cross_entropy", "lstm", "LayerShapeError"]

CE_EPS = 1e-12


class LayerShapeError(ValueError):
    pass


def _shape_error(layer, expected, got):
    raise LayerShapeError(f"{layer}: expected input shape {expected}, got {got}")


def conv1d(x, w, b=None):
    """Same-length 1D convolution with zero padding; ``w`` is ``(k, c_in, c_out)``."""
    x, w = as_tensor(x), as_tensor(w)
    k, cin, cout = w.shape
    if x.ndim != 3 or x.shape[2] != cin:
        _shape_error("conv1d", f"(batch, time, {cin})", x.shape)
    if k % 2 == 0:
        raise LayerShapeError(f"conv1d: kernel size must be odd, got {k}")
    B, T, _ = x.shape
    p = k // 2
    xp = np.pad(x.data, ((0, 0), (p, p), (0, 0)))
    out = np.zeros((B, T, cout))
    for j in range(k):
        out += xp[:, j:j + T, :] @ w.data[j]
    if b is not None:
        b = as_tensor(b)
        out += b.data
    parents = (x, w) if b is None else (x, w, b)

    def back(g):
        gxp = np.zeros_like(xp)
        gw = np.empty_like(w.data)
        g2 = g.reshape(-1, cout)
        for j in range(k):
            gw[j] = xp[:, j:j + T, :].reshape(-1, cin).T @ g2
            gxp[:, j:j + T, :] += g @ w.data[j].T
        grads = (gxp[:, p:p + T, :], gw)
        if b is not None:
            grads += (g2.sum(axis=0),)
        return grads

    return make_node(out, parents, back)


def conv2d(x, w, b=None):
    """Same-size 2D convolution with zero padding; ``w`` is ``(kh, kw, c_in, c_out)``."""
    x, w = as_tensor(x), as_tensor(w)
    kh, kw, cin, cout = w.shape
    if x.ndim != 4 or x.shape[3] != cin:
        _shape_error("conv2d", f"(batch, freq, time, {cin})", x.shape)
    B, H, W, _ = x.shape
    ph, pw = kh // 2, kw // 2
    xp = np.pad(x.data, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
    out = np.zeros((B, H, W, cout))
    for i in range(kh):
        for j in range(kw):
            out += xp[:, i:i + H, j:j + W, :] @ w.data[i, j]
    if b is not None:
        b = as_tensor(b)
        out += b.data
    parents = (x, w) if b is None else (x, w, b)

    def back(g):
        gxp = np.zeros_like(xp)
        gw = np.empty_like(w.data)
        g2 = g.reshape(-1, cout)
        for i in range(kh):
            for j in range(kw):
                win = xp[:, i:i + H, j:j + W, :]
                gw[i, j] = win.reshape(-1, cin).T @ g2
                gxp[:, i:i + H, j:j + W, :] += g @ w.data[i, j].T
        grads = (gxp[:, ph:ph + H, pw:pw + W, :], gw)
        if b is not None:
            grads += (g2.sum(axis=0),)
        return grads

    return make_node(out, parents, back)


def batch_norm(x, gamma, beta, state, axes, training, momentum=0.99, eps=1e-5):
    """Batch normalization over ``axes``; ``gamma``/``beta`` broadcast over them.

    ``state`` holds ``mean`` and ``var`` running estimates (same shape as
    ``gamma``) and is updated in place when training.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    axes = tuple(a % x.ndim for a in axes)
    pshape = tuple(1 if i in axes else n for i, n in enumerate(x.shape))
    if gamma.shape != pshape:
        _shape_error("batch_norm", f"parameters of shape {pshape}", gamma.shape)
    if training:
        n = int(np.prod([x.shape[a] for a in axes]))
        mu = x.data.mean(axis=axes, keepdims=True)
        var = x.data.var(axis=axes, keepdims=True)
        state["mean"] = momentum * state["mean"] + (1 - momentum) * mu
        state["var"] = momentum * state["var"] + (1 - momentum) * var
    else:
        mu, var = state["mean"], state["var"]
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = gamma.data * xhat + beta.data

    def back(g):
        ggamma = (g * xhat).sum(axis=axes, keepdims=True)
        gbeta = g.sum(axis=axes, keepdims=True)
        gxhat = g * gamma.data
        if training:
            gx = inv / n * (n * gxhat - gxhat.sum(axis=axes, keepdims=True)
                            - xhat * (gxhat * xhat).sum(axis=axes, keepdims=True))
        else:
            gx = gxhat * inv
        return gx, ggamma, gbeta

    return make_node(out, (x, gamma, beta), back)


def _pool_view(data, axis, size):
    n = data.shape[axis]
    if n % size:
        raise LayerShapeError(f"pool: axis {axis} of length {n} is not divisible by {size}")
    shape = data.shape[:axis] + (n // size, size) + data.shape[axis + 1:]
    return data.reshape(shape)


def avg_pool(x, axis=1, size=2):
    axis %= x.ndim
    v = _pool_view(x.data, axis, size)
    out = v.mean(axis=axis + 1)

    def back(g):
        ge = np.repeat(np.expand_dims(g, axis + 1), size, axis=axis + 1) / size
        return (ge.reshape(x.shape),)

    return make_node(out, (x,), back)


def max_pool(x, axis=1, size=2):
    axis %= x.ndim
    v = _pool_view(x.data, axis, size)
    idx = v.argmax(axis=axis + 1)
    out = np.take_along_axis(v, np.expand_dims(idx, axis + 1), axis=axis + 1).squeeze(axis + 1)

    def back(g):
        ge = np.zeros(v.shape)
        np.put_along_axis(ge, np.expand_dims(idx, axis + 1), np.expand_dims(g, axis + 1),
                          axis=axis + 1)
        return (ge.reshape(x.shape),)

    return make_node(out, (x,), back)


def dropout(x, rate, training, rng):
    """Inverted dropout with an independent mask per element."""
    if not training or rate == 0:
        return x
    if not 0 <= rate < 1:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return make_node(x.data * mask, (x,), lambda g: (g * mask,))


def dense(x, w, b=None):
    """Pointwise dense layer (kernel-size-1 convolution) on the last axis."""
    x, w = as_tensor(x), as_tensor(w)
    if x.shape[-1] != w.shape[0]:
        _shape_error("dense", f"(..., {w.shape[0]})", x.shape)
    out = x.data @ w.data
    if b is not None:
        b = as_tensor(b)
        out = out + b.data
    parents = (x, w) if b is None else (x, w, b)

    def back(g):
        g2 = g.reshape(-1, w.shape[1])
        grads = (g @ w.data.T, x.data.reshape(-1, w.shape[0]).T @ g2)
        if b is not None:
            grads += (g2.sum(axis=0),)
        return grads

    return make_node(out, parents, back)


def softmax(x, axis=-1):
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return make_node(out, (x,), back)


def cross_entropy(probs, labels):
    """Mean over time steps of ``-log probs[..., label]``, clamped at 1e-12."""
    probs = as_tensor(probs)
    labels = np.asarray(labels)
    if probs.shape[:-1] != labels.shape:
        _shape_error("cross_entropy", f"{labels.shape + (probs.shape[-1],)}", probs.shape)
    lab = labels.astype(np.int64)[..., None]
    p = np.take_along_axis(probs.data, lab, axis=-1)[..., 0]
    pc = np.maximum(p, CE_EPS)
    n = p.size
    loss = -np.log(pc).mean()

    def back(g):
        gp = np.zeros_like(probs.data)
        val = np.where(p > CE_EPS, -1.0 / pc, 0.0) * (g / n)
        np.put_along_axis(gp, lab, val[..., None], axis=-1)
        return (gp,)

    return make_node(np.asarray(loss), (probs,), back)


def _sig(z):
    return 1.0 / (1.0 + np.exp(-z))


def lstm(x, wx, wh, b, reverse=False):
    """Single-direction LSTM over ``(batch, time, features)`` from zero state.

    Gate layout along the last weight axis: input, forget, output, candidate.
    Returns the hidden-state sequence ``(batch, time, hidden)``.
    """
    x, wx, wh, b = as_tensor(x), as_tensor(wx), as_tensor(wh), as_tensor(b)
    B, T, D = x.shape
    H = wh.shape[0]
    if wx.shape != (D, 4 * H):
        _shape_error("lstm", f"(batch, time, {wx.shape[0]})", x.shape)
    xp = np.ascontiguousarray((x.data @ wx.data + b.data).transpose(1, 0, 2))
    steps = range(T - 1, -1, -1) if reverse else range(T)
    gates = np.empty((T, B, 4 * H))
    cs = np.empty((T, B, H))
    tcs = np.empty((T, B, H))
    hprev = np.empty((T, B, H))
    hs = np.empty((T, B, H))
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    whd = wh.data
    for t in steps:
        hprev[t] = h
        z = xp[t] + h @ whd
        a = gates[t]
        a[:, :3 * H] = _sig(z[:, :3 * H])
        a[:, 3 * H:] = np.tanh(z[:, 3 * H:])
        c = a[:, H:2 * H] * c + a[:, :H] * a[:, 3 * H:]
        tc = np.tanh(c)
        h = a[:, 2 * H:3 * H] * tc
        cs[t], tcs[t], hs[t] = c, tc, h

    def back(g):
        gT = np.ascontiguousarray(g.transpose(1, 0, 2))
        dz = np.empty((T, B, 4 * H))
        dh_next = np.zeros((B, H))
        dc_next = np.zeros((B, H))
        whT = whd.T
        zeros = np.zeros((B, H))
        for t in reversed(list(steps)):
            a = gates[t]
            i, f, o, gg = a[:, :H], a[:, H:2 * H], a[:, 2 * H:3 * H], a[:, 3 * H:]
            c_prev = cs[t - 1] if (not reverse and t > 0) else (
                cs[t + 1] if (reverse and t < T - 1) else zeros)
            dh = gT[t] + dh_next
            tc = tcs[t]
            dc = dh * o * (1.0 - tc ** 2) + dc_next
            d = dz[t]
            d[:, :H] = dc * gg * i * (1.0 - i)
            d[:, H:2 * H] = dc * c_prev * f * (1.0 - f)
            d[:, 2 * H:3 * H] = dh * tc * o * (1.0 - o)
            d[:, 3 * H:] = dc * i * (1.0 - gg ** 2)
            dc_next = dc * f
            dh_next = d @ whT
        dzf = dz.reshape(T * B, 4 * H)
        gwh = hprev.reshape(T * B, H).T @ dzf
        gb = dzf.sum(axis=0)
        dzb = dz.transpose(1, 0, 2)
        gx = dzb @ wx.data.T
        gwx = x.data.reshape(B * T, D).T @ dzb.reshape(B * T, 4 * H)
        return gx, gwx, gwh, gb

    out = np.ascontiguousarray(hs.transpose(1, 0, 2))
    return make_node(out, (x, wx, wh, b), back)


def parameter(shape, rng, bound, name=None):
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True, name=name)
