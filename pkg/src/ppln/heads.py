"""Coefficient-prediction heads and the PPLN node forward pass.

A dense node maps ``x`` (length ``k``) through three bias-free linear maps::

    m = tanh(W_m x),   b = W_b x,   s = softmax(W_s x),   v_bar = <w_V, x>

and outputs the potential at ``tau`` shifted to temporal mean ``v_bar``. The
convolutional node does the same with convolutions, one softmax over the
``n`` segment channels of each output node at every pixel.

Everything is vectorized through ``node_core``; dense and conv heads only
differ in how they produce the pre-activations.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ContractError, DomainError
from .plf import SegmentSet, integral, potential, sizes_to_endpoints, _check_T, _check_tau


@dataclass(frozen=True)
class VBarMode:
    """Where the temporal mean comes from.

    ``regressed`` predicts it linearly from the input; ``observed`` takes a
    known value (a scalar, or a per-pixel array for conv nodes).
    """

    mode: str = "regressed"
    observed_value: object = None

    def __post_init__(self):
        if self.mode not in ("regressed", "observed"):
            raise DomainError(f"unknown v_bar mode {self.mode!r}")
        if self.mode == "observed":
            if self.observed_value is None or not np.all(np.isfinite(self.observed_value)):
                raise DomainError("observed mode needs a finite observed_value")

    @property
    def regressed(self):
        return self.mode == "regressed"

    @classmethod
    def observed(cls, value):
        return cls("observed", value)


REGRESSED = VBarMode()


def softmax(z, axis=-1):
    z = np.asarray(z, dtype=float)
    e = np.exp(z - np.max(z, axis=axis, keepdims=True))
    return e / np.sum(e, axis=axis, keepdims=True)


def augment(x):
    """Append a constant-1 feature (opt-in bias)."""
    x = np.asarray(x, dtype=float)
    return np.concatenate([x, np.ones(x.shape[:-1] + (1,))], axis=-1)


# ---------------------------------------------------------------------------
# shared per-node core
# ---------------------------------------------------------------------------

class CoreCache(NamedTuple):
    m: np.ndarray
    b: np.ndarray
    s: np.ndarray
    t: np.ndarray
    tau: np.ndarray
    T: object
    normalize: bool


def node_core(zm, zb, zs, vbar, tau, T=None, normalize=True):
    """Node output from pre-activations with the segment axis last.

    ``vbar`` is ignored when ``normalize`` is False.
    """
    m = np.tanh(zm)
    s = softmax(zs)
    t = sizes_to_endpoints(s)
    tau = np.broadcast_to(np.asarray(tau, dtype=float), m.shape[:-1])
    y = potential(m, zb, t, tau, T)
    if normalize:
        y = y - integral(m, zb, t) + vbar
    return y, CoreCache(m, np.asarray(zb, dtype=float), s, t, tau, T, normalize)


# ---------------------------------------------------------------------------
# dense heads
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NodeWeights:
    W_m: np.ndarray
    W_b: np.ndarray
    W_s: np.ndarray
    w_V: np.ndarray

    def __post_init__(self):
        mats = [np.array(getattr(self, f), dtype=float) for f in ("W_m", "W_b", "W_s")]
        w_V = np.array(self.w_V, dtype=float).reshape(-1)
        if any(a.ndim != 2 for a in mats) or len({a.shape for a in mats}) != 1:
            raise ContractError(f"W_m, W_b, W_s must share one n x k shape, got {[a.shape for a in mats]}")
        if w_V.size != mats[0].shape[1]:
            raise ContractError(f"w_V has length {w_V.size}, expected k={mats[0].shape[1]}")
        if not all(np.all(np.isfinite(a)) for a in mats + [w_V]):
            raise DomainError("non-finite weight")
        for f, a in zip(("W_m", "W_b", "W_s", "w_V"), mats + [w_V]):
            object.__setattr__(self, f, a)

    @property
    def n(self):
        return self.W_m.shape[0]

    @property
    def k(self):
        return self.W_m.shape[1]

    @classmethod
    def init(cls, n, k, rng):
        """Uniform in +-1/sqrt(k) per block."""
        r = 1.0 / np.sqrt(k)
        return cls(*(rng.uniform(-r, r, size=shape) for shape in ((n, k), (n, k), (n, k), (k,))))


def _dense_pre(W_m, W_b, W_s, w_V, X):
    zm = np.einsum("jnk,bk->bjn", W_m, X)
    zb = np.einsum("jnk,bk->bjn", W_b, X)
    zs = np.einsum("jnk,bk->bjn", W_s, X)
    vb = X @ w_V.T
    return zm, zb, zs, vb


def _vbar(vmode, regressed_value):
    if vmode.regressed:
        return regressed_value
    return np.broadcast_to(np.asarray(vmode.observed_value, dtype=float), np.shape(regressed_value))


class DenseCache(NamedTuple):
    X: np.ndarray
    core: CoreCache
    regressed: bool


def dense_forward(W_m, W_b, W_s, w_V, X, tau, T=None, vmode=REGRESSED, normalize=True):
    """Batched dense layer.

    Weights are stacked over output nodes: ``W_m`` is ``(J, n, k)``, ``w_V``
    is ``(J, k)``. ``X`` is ``(B, k)`` and ``tau`` is ``(B,)`` or scalar.
    Returns ``Y`` of shape ``(B, J)`` and a cache for the backward pass.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != W_m.shape[2]:
        raise ContractError(f"input of shape {X.shape} does not match k={W_m.shape[2]}")
    zm, zb, zs, vb = _dense_pre(W_m, W_b, W_s, w_V, X)
    tau = np.broadcast_to(np.asarray(tau, dtype=float).reshape(-1, 1), vb.shape)
    Y, core = node_core(zm, zb, zs, _vbar(vmode, vb), tau, T, normalize)
    return Y, DenseCache(X, core, vmode.regressed)


def stack(weights):
    """Stack a list of NodeWeights into layer arrays ``(W_m, W_b, W_s, w_V)``."""
    weights = list(weights)
    if not weights:
        raise ContractError("empty layer")
    ks = {w.k for w in weights}
    ns = {w.n for w in weights}
    if len(ks) != 1:
        raise ContractError(f"nodes in one layer must share the input dimension, got {sorted(ks)}")
    if len(ns) != 1:
        raise ContractError(f"nodes in one layer must share the segment count, got {sorted(ns)}")
    return tuple(np.stack([getattr(w, f) for w in weights]) for f in ("W_m", "W_b", "W_s", "w_V"))


def _check_x(w, x):
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.size != w.k:
        raise ContractError(f"input of shape {x.shape} does not match k={w.k}")
    if not np.all(np.isfinite(x)):
        raise DomainError("non-finite input")
    return x


def predict_coefficients(w, x, vmode=REGRESSED):
    """``(SegmentSet, v_bar)`` predicted by one dense node."""
    x = _check_x(w, x)
    m = np.tanh(w.W_m @ x)
    b = w.W_b @ x
    s = softmax(w.W_s @ x)
    v_bar = float(w.w_V @ x) if vmode.regressed else float(vmode.observed_value)
    return SegmentSet(m, b, sizes_to_endpoints(s), min_gap=0.0), v_bar


def node_forward(w, x, tau, T=None, vmode=REGRESSED, normalize=True):
    _check_tau(tau)
    _check_T(T)
    x = _check_x(w, x)
    Y, _ = dense_forward(*stack([w]), x[None, :], float(tau), T, vmode, normalize)
    return float(Y[0, 0])


def layer_forward(weights, x, tau, T=None, vmode=REGRESSED, normalize=True):
    """All nodes of a layer at the same ``tau``."""
    _check_tau(tau)
    _check_T(T)
    W_m, W_b, W_s, w_V = stack(weights)
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ContractError("layer_forward takes a single input vector")
    Y, _ = dense_forward(W_m, W_b, W_s, w_V, x[None, :], float(tau), T, vmode, normalize)
    return Y[0]


# ---------------------------------------------------------------------------
# convolutional heads
# ---------------------------------------------------------------------------

def resolve_padding(padding, kh, kw):
    if padding == "same":
        if kh % 2 == 0 or kw % 2 == 0:
            raise ContractError("'same' padding needs odd kernel sizes")
        return (kh - 1) // 2, (kw - 1) // 2
    if padding == "valid":
        return 0, 0
    if isinstance(padding, (int, np.integer)):
        return int(padding), int(padding)
    ph, pw = padding
    return int(ph), int(pw)


def _out_size(h, k, p, stride):
    out = (h + 2 * p - k) // stride + 1
    if out < 1:
        raise ContractError(f"kernel {k} with padding {p} does not fit input size {h}")
    return out


def _patches(X, kh, kw, stride, ph, pw):
    """``(B, C, H', W', kh, kw)`` view of zero-padded input patches."""
    Xp = np.pad(X, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    _out_size(X.shape[2], kh, ph, stride)
    _out_size(X.shape[3], kw, pw, stride)
    win = sliding_window_view(Xp, (kh, kw), axis=(2, 3))
    return win[:, :, ::stride, ::stride]


def conv2d(X, kernel, stride=1, padding="same"):
    """Cross-correlation by patch gathering.

    ``X`` is ``(C, H, W)`` or ``(B, C, H, W)``; ``kernel`` is ``(O, C, kh, kw)``.
    """
    X = np.asarray(X, dtype=float)
    single = X.ndim == 3
    if single:
        X = X[None]
    O, C, kh, kw = kernel.shape
    if X.ndim != 4 or X.shape[1] != C:
        raise ContractError(f"input {X.shape} incompatible with kernel {kernel.shape}")
    ph, pw = resolve_padding(padding, kh, kw)
    out = np.einsum("bchwij,ocij->bohw", _patches(X, kh, kw, stride, ph, pw), kernel)
    return out[0] if single else out


def conv2d_direct(X, kernel, stride=1, padding="same"):
    """Reference cross-correlation with explicit loops over output pixels."""
    X = np.asarray(X, dtype=float)
    O, C, kh, kw = kernel.shape
    if X.ndim != 3 or X.shape[0] != C:
        raise ContractError(f"input {X.shape} incompatible with kernel {kernel.shape}")
    ph, pw = resolve_padding(padding, kh, kw)
    Xp = np.pad(X, ((0, 0), (ph, ph), (pw, pw)))
    Ho = _out_size(X.shape[1], kh, ph, stride)
    Wo = _out_size(X.shape[2], kw, pw, stride)
    out = np.zeros((O, Ho, Wo))
    for i in range(Ho):
        for j in range(Wo):
            patch = Xp[:, i * stride:i * stride + kh, j * stride:j * stride + kw]
            for o in range(O):
                out[o, i, j] = np.sum(patch * kernel[o])
    return out


@dataclass(frozen=True)
class ConvNodeWeights:
    """Kernels of ``out_nodes`` convolutional PPLN nodes with ``n`` segments.

    ``W_m``, ``W_b``, ``W_s`` are ``(out_nodes * n, C, kh, kw)``; channel
    ``j * n + i`` holds segment ``i`` of node ``j``. ``w_V`` is
    ``(out_nodes, C, kh, kw)``.
    """

    W_m: np.ndarray
    W_b: np.ndarray
    W_s: np.ndarray
    w_V: np.ndarray
    n: int
    stride: int = 1
    padding: object = "same"

    def __post_init__(self):
        arrs = [np.array(getattr(self, f), dtype=float) for f in ("W_m", "W_b", "W_s", "w_V")]
        if any(a.ndim != 4 for a in arrs):
            raise ContractError("conv kernels must be 4-d (out, in, kh, kw)")
        if len({a.shape for a in arrs[:3]}) != 1:
            raise ContractError("W_m, W_b, W_s must share a shape")
        JN, C, kh, kw = arrs[0].shape
        if kh < 1 or kw < 1 or JN % self.n:
            raise ContractError(f"kernel shape {arrs[0].shape} incompatible with n={self.n}")
        if arrs[3].shape != (JN // self.n, C, kh, kw):
            raise ContractError(f"w_V shape {arrs[3].shape}, expected {(JN // self.n, C, kh, kw)}")
        if self.stride < 1:
            raise ContractError("stride must be positive")
        resolve_padding(self.padding, kh, kw)
        for f, a in zip(("W_m", "W_b", "W_s", "w_V"), arrs):
            object.__setattr__(self, f, a)

    @property
    def out_nodes(self):
        return self.W_m.shape[0] // self.n

    @property
    def in_channels(self):
        return self.W_m.shape[1]

    @property
    def kernel_size(self):
        return self.W_m.shape[2:]

    @classmethod
    def init(cls, out_nodes, n, in_channels, kernel_size, rng, stride=1, padding="same"):
        kh, kw = (kernel_size, kernel_size) if np.isscalar(kernel_size) else kernel_size
        r = 1.0 / np.sqrt(in_channels * kh * kw)
        big = (out_nodes * n, in_channels, kh, kw)
        return cls(rng.uniform(-r, r, big), rng.uniform(-r, r, big), rng.uniform(-r, r, big),
                   rng.uniform(-r, r, (out_nodes, in_channels, kh, kw)), n, stride, padding)


@dataclass(frozen=True)
class CoefficientField:
    """Per-pixel coefficients; node axis first, segment axis last."""

    m: np.ndarray       # (J, H', W', n)
    b: np.ndarray       # (J, H', W', n)
    s: np.ndarray       # (J, H', W', n)
    t: np.ndarray       # (J, H', W', n+1)
    v_bar: np.ndarray   # (J, H', W')

    def segment_set(self, node, i, j):
        return SegmentSet(self.m[node, i, j], self.b[node, i, j], self.t[node, i, j], min_gap=0.0)


def _to_segment_last(z, n):
    """``(B, J*n, H, W)`` -> ``(B, J, H, W, n)``."""
    B, JN, H, W = z.shape
    return z.reshape(B, JN // n, n, H, W).transpose(0, 1, 3, 4, 2)


def _from_segment_last(z):
    B, J, H, W, n = z.shape
    return z.transpose(0, 1, 4, 2, 3).reshape(B, J * n, H, W)


def _conv_pre(w, X, reference=False):
    if reference:
        convs = [np.stack([conv2d_direct(x, K, w.stride, w.padding) for x in X])
                 for K in (w.W_m, w.W_b, w.W_s, w.w_V)]
    else:
        convs = [conv2d(X, K, w.stride, w.padding) for K in (w.W_m, w.W_b, w.W_s, w.w_V)]
    zm, zb, zs, vb = convs
    return _to_segment_last(zm, w.n), _to_segment_last(zb, w.n), _to_segment_last(zs, w.n), vb


def _check_image(w, X):
    X = np.asarray(X, dtype=float)
    if X.ndim != 4 or X.shape[1] != w.in_channels:
        raise ContractError(f"input {X.shape[1:]} has the wrong channel count for {w.in_channels} input channels")
    if not np.all(np.isfinite(X)):
        raise DomainError("non-finite input")
    return X


def conv_predict_coefficients(w, x, vmode=REGRESSED, reference=False):
    """Per-pixel coefficient field for a ``(C, H, W)`` input."""
    X = _check_image(w, np.asarray(x, dtype=float)[None])
    zm, zb, zs, vb = _conv_pre(w, X, reference)
    s = softmax(zs[0])
    v_bar = vb[0] if vmode.regressed else np.broadcast_to(
        np.asarray(vmode.observed_value, dtype=float), vb[0].shape).copy()
    return CoefficientField(np.tanh(zm[0]), zb[0], s, sizes_to_endpoints(s), v_bar)


class ConvCache(NamedTuple):
    X: np.ndarray
    core: CoreCache
    regressed: bool


def conv_forward(w, X, tau, T=None, vmode=REGRESSED, normalize=True):
    """Batched conv node layer: ``(B, C, H, W)`` -> ``(B, J, H', W')``."""
    X = _check_image(w, X)
    zm, zb, zs, vb = _conv_pre(w, X)
    tau = np.broadcast_to(np.asarray(tau, dtype=float).reshape(-1, 1, 1, 1), vb.shape)
    Y, core = node_core(zm, zb, zs, _vbar(vmode, vb), tau, T, normalize)
    return Y, ConvCache(X, core, vmode.regressed)


def conv_node_forward(w, x, tau, T=None, vmode=REGRESSED, normalize=True):
    """Output image ``(out_nodes, H', W')`` at time ``tau``."""
    _check_tau(tau)
    _check_T(T)
    Y, _ = conv_forward(w, np.asarray(x, dtype=float)[None], float(tau), T, vmode, normalize)
    return Y[0]
