"""Hand-derived backward passes.

Per-node gradients come back as ``GradientRecord``; head and layer backward
passes return plain dicts of arrays keyed like the weights they mirror.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ContractError, DomainError
from .heads import (REGRESSED, ConvNodeWeights, NodeWeights, _from_segment_last, _patches,
                    conv_forward, dense_forward, resolve_padding, stack)
from .plf import _check_T, _check_tau, integral_grad, potential_grad


@dataclass(frozen=True)
class GradientRecord:
    """Partials of a scalar w.r.t. one node's coefficients.

    ``d_t`` covers the interior endpoints only (``t[0]`` and ``t[n]`` are fixed).
    """

    d_m: np.ndarray
    d_b: np.ndarray
    d_t: np.ndarray
    d_vbar: float = 0.0

    def __post_init__(self):
        d_m, d_b, d_t = (np.asarray(a, dtype=float) for a in (self.d_m, self.d_b, self.d_t))
        if d_m.shape != d_b.shape or d_t.shape != (d_m.size - 1,):
            raise ContractError(f"gradient shapes {d_m.shape}, {d_b.shape}, {d_t.shape} do not mirror a SegmentSet")
        if not all(np.all(np.isfinite(a)) for a in (d_m, d_b, d_t)) or not np.isfinite(self.d_vbar):
            raise DomainError("non-finite gradient")
        object.__setattr__(self, "d_m", d_m)
        object.__setattr__(self, "d_b", d_b)
        object.__setattr__(self, "d_t", d_t)
        object.__setattr__(self, "d_vbar", float(self.d_vbar))

    def flat(self):
        return np.concatenate([self.d_m, self.d_b, self.d_t, [self.d_vbar]])

    def __add__(self, other):
        return GradientRecord(self.d_m + other.d_m, self.d_b + other.d_b,
                              self.d_t + other.d_t, self.d_vbar + other.d_vbar)

    def scale(self, c):
        return GradientRecord(c * self.d_m, c * self.d_b, c * self.d_t, c * self.d_vbar)


def grad_unsmoothed(theta, tau):
    _check_tau(tau)
    return GradientRecord(*potential_grad(theta.m, theta.b, theta.t, float(tau)))


def grad_smoothed(theta, tau, T):
    _check_tau(tau)
    if T is None:
        raise DomainError("temperature required")
    _check_T(T)
    return GradientRecord(*potential_grad(theta.m, theta.b, theta.t, float(tau), T))


def grad_normalized(theta, tau, T=None):
    """Gradient of ``normalize_eval`` (``d_vbar`` is always 1)."""
    _check_tau(tau)
    _check_T(T)
    dm, db, dt = potential_grad(theta.m, theta.b, theta.t, float(tau), T)
    im, ib, it = integral_grad(theta.m, theta.b, theta.t)
    return GradientRecord(dm - im, db - ib, dt - it, 1.0)


def coefficient_jacobian(m, b, t, taus, T=None, normalize=False):
    """Per-sample partials ``(dm, db, dt)`` for a vector of times.

    Shapes ``(M, n)``, ``(M, n)``, ``(M, n-1)``. Used by the fitting engine.
    """
    dm, db, dt = potential_grad(m, b, t, taus, T)
    if normalize:
        im, ib, it = integral_grad(m, b, t)
        dm, db, dt = dm - im, db - ib, dt - it
    return dm, db, dt


# ---------------------------------------------------------------------------
# heads
# ---------------------------------------------------------------------------

def _reverse_cumsum(a):
    return np.flip(np.cumsum(np.flip(a, -1), -1), -1)


def node_core_backward(core, G):
    """Pull ``G = dL/dy`` back to the pre-activations ``(zm, zb, zs)`` and ``v_bar``."""
    G = np.asarray(G, dtype=float)
    dm, db, dt = potential_grad(core.m, core.b, core.t, core.tau, core.T)
    if core.normalize:
        im, ib, it = integral_grad(core.m, core.b, core.t)
        dm, db, dt = dm - im, db - ib, dt - it
        g_vbar = G
    else:
        g_vbar = np.zeros_like(G)
    Ge = G[..., None]
    gzm = Ge * dm * (1.0 - core.m ** 2)
    gzb = Ge * db
    # interior endpoint t[k+1] = s[0] + ... + s[k]
    gt = Ge * dt
    gs = np.zeros_like(core.s)
    gs[..., :-1] = _reverse_cumsum(gt)
    gzs = core.s * (gs - np.sum(gs * core.s, axis=-1, keepdims=True))
    return gzm, gzb, gzs, g_vbar


def dense_backward(W_m, W_b, W_s, w_V, cache, G):
    """Gradients of a batched dense layer.

    Returns ``({"W_m", "W_b", "W_s", "w_V"}, dL/dX)``.
    """
    gzm, gzb, gzs, gv = node_core_backward(cache.core, G)
    X = cache.X
    grads = {
        "W_m": np.einsum("bjn,bk->jnk", gzm, X),
        "W_b": np.einsum("bjn,bk->jnk", gzb, X),
        "W_s": np.einsum("bjn,bk->jnk", gzs, X),
    }
    gX = (np.einsum("bjn,jnk->bk", gzm, W_m) + np.einsum("bjn,jnk->bk", gzb, W_b)
          + np.einsum("bjn,jnk->bk", gzs, W_s))
    if cache.regressed:
        grads["w_V"] = gv.T @ X
        gX = gX + gv @ w_V
    else:
        grads["w_V"] = np.zeros_like(w_V)
    return grads, gX


def conv2d_backward(X, kernel, stride, padding, G):
    """Gradients of ``conv2d`` w.r.t. the kernel and the input."""
    O, C, kh, kw = kernel.shape
    ph, pw = resolve_padding(padding, kh, kw)
    P = _patches(X, kh, kw, stride, ph, pw)
    dK = np.einsum("bohw,bchwij->ocij", G, P)
    B, _, H, W = X.shape
    Ho, Wo = G.shape[2:]
    dXp = np.zeros((B, C, H + 2 * ph, W + 2 * pw))
    for i in range(kh):
        for j in range(kw):
            dXp[:, :, i:i + stride * Ho:stride, j:j + stride * Wo:stride] += np.einsum(
                "bohw,oc->bchw", G, kernel[:, :, i, j])
    return dK, dXp[:, :, ph:ph + H, pw:pw + W]


def conv_backward(w, cache, G):
    """Gradients of a batched conv node layer.

    Returns ``({"W_m", "W_b", "W_s", "w_V"}, dL/dX)``.
    """
    gzm, gzb, gzs, gv = node_core_backward(cache.core, G)
    grads = {}
    gX = np.zeros_like(cache.X)
    for name, g in (("W_m", gzm), ("W_b", gzb), ("W_s", gzs)):
        dK, dX = conv2d_backward(cache.X, getattr(w, name), w.stride, w.padding, _from_segment_last(g))
        grads[name] = dK
        gX += dX
    if cache.regressed:
        dK, dX = conv2d_backward(cache.X, w.w_V, w.stride, w.padding, gv)
        grads["w_V"] = dK
        gX += dX
    else:
        grads["w_V"] = np.zeros_like(w.w_V)
    return grads, gX


def grad_node_forward(w, x, tau, T=None, vmode=REGRESSED, normalize=True):
    """Gradient of ``node_forward`` as ``(NodeWeights of partials, d/dx)``."""
    _check_tau(tau)
    _check_T(T)
    arrays = stack([w])
    _, cache = dense_forward(*arrays, np.asarray(x, dtype=float)[None], float(tau), T, vmode, normalize)
    grads, gX = dense_backward(*arrays, cache, np.ones((1, 1)))
    return NodeWeights(grads["W_m"][0], grads["W_b"][0], grads["W_s"][0], grads["w_V"][0]), gX[0]


def grad_conv_node_forward(w, x, tau, upstream, T=None, vmode=REGRESSED, normalize=True):
    """Gradient of ``sum(upstream * conv_node_forward(...))``."""
    _check_tau(tau)
    _check_T(T)
    Y, cache = conv_forward(w, np.asarray(x, dtype=float)[None], float(tau), T, vmode, normalize)
    upstream = np.asarray(upstream, dtype=float)
    if upstream.shape != Y.shape[1:]:
        raise ContractError(f"upstream shape {upstream.shape} does not match output {Y.shape[1:]}")
    grads, gX = conv_backward(w, cache, upstream[None])
    return ConvNodeWeights(grads["W_m"], grads["W_b"], grads["W_s"], grads["w_V"],
                           w.n, w.stride, w.padding), gX[0]


# ---------------------------------------------------------------------------
# chain driver
# ---------------------------------------------------------------------------

@dataclass
class LayerRecord:
    """One forward-evaluated layer on the tape.

    ``backward(g_out) -> (param_grads, g_in)``.
    """

    backward: Callable
    out_shape: tuple
    name: str = ""
    extra: dict = field(default_factory=dict)


def backprop_chain(layers, upstream):
    """Reverse accumulation through ``layers`` (in forward order).

    Returns one parameter-gradient dict per layer, in forward order.
    """
    g = np.asarray(upstream, dtype=float)
    if not layers:
        raise ContractError("empty chain")
    if g.shape != tuple(layers[-1].out_shape):
        raise ContractError(f"upstream shape {g.shape} does not match final output {tuple(layers[-1].out_shape)}")
    grads = [None] * len(layers)
    for i in range(len(layers) - 1, -1, -1):
        rec = layers[i]
        if g.shape != tuple(rec.out_shape):
            raise ContractError(f"layer {i} ({rec.name}) received gradient of shape {g.shape}, expected {rec.out_shape}")
        grads[i], g = rec.backward(g)
    return grads
