"""Piecewise-linear membrane potentials on normalized time ``[0, 1]``.

Two layers live here. The array functions (``segment_index``, ``potential``,
``integral`` and friends) work on coefficient arrays whose *last* axis indexes
segments, so the same code serves a single node, a batch of dense nodes, or a
per-pixel convolutional field. ``SegmentSet`` and the scalar helpers below it
wrap those for one node.

Segment ``i`` (0-based) owns the half-open interval ``[t[i], t[i+1])``; the
last segment also owns ``tau = 1``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.special import expit

from .errors import DomainError

MIN_GAP = 1e-4
SUM_TOL = 1e-12


# ---------------------------------------------------------------------------
# array layer
# ---------------------------------------------------------------------------

def sizes_to_endpoints(s):
    """Cumulative endpoints ``(..., n+1)`` from interval sizes ``(..., n)``.

    No validation; the last endpoint is pinned to exactly 1.
    """
    s = np.asarray(s, dtype=float)
    t = np.zeros(s.shape[:-1] + (s.shape[-1] + 1,))
    np.cumsum(s, axis=-1, out=t[..., 1:])
    t[..., -1] = 1.0
    return t


def segment_index(t, tau):
    """0-based index of the segment owning ``tau``.

    ``t`` has shape ``(..., n+1)``, ``tau`` broadcasts against ``t[..., 0]``.
    """
    tau = np.asarray(tau, dtype=float)
    interior = t[..., 1:-1]
    return np.sum(interior <= tau[..., None], axis=-1)


def _onehot(idx, n):
    return np.arange(n) == idx[..., None]


def _gather(a, idx):
    return np.take_along_axis(a, idx[..., None], axis=-1)[..., 0]


class Blend(NamedTuple):
    idx: np.ndarray
    w_left: np.ndarray
    w_right: np.ndarray


def blend_weights(t, tau, T):
    """Sigmoid blend weights toward the neighbouring segments.

    ``w_left = 1 / (1 + exp(T (tau - t[i])))`` unless ``i`` is the first
    segment, ``w_right = 1 / (1 + exp(T (t[i+1] - tau)))`` unless ``i`` is the
    last. ``expit`` keeps both finite for any ``T``.
    """
    tau = np.asarray(tau, dtype=float)
    n = t.shape[-1] - 1
    idx = segment_index(t, tau)
    lo = _gather(t, idx)
    hi = _gather(t, idx + 1)
    w_left = np.where(idx > 0, expit(-T * (tau - lo)), 0.0)
    w_right = np.where(idx < n - 1, expit(-T * (hi - tau)), 0.0)
    return Blend(idx, w_left, w_right)


def _lines(m, b, tau, idx):
    """Values of the active line and its two neighbours (zero off the ends)."""
    n = m.shape[-1]
    lines = m * tau[..., None] + b
    prev = _gather(lines, np.clip(idx - 1, 0, n - 1))
    cur = _gather(lines, idx)
    nxt = _gather(lines, np.clip(idx + 1, 0, n - 1))
    return prev, cur, nxt


def _align(m, b, t, tau):
    m = np.asarray(m, dtype=float)
    b = np.asarray(b, dtype=float)
    t = np.asarray(t, dtype=float)
    tau = np.asarray(tau, dtype=float)
    shape = np.broadcast_shapes(m.shape[:-1], t.shape[:-1], tau.shape)
    n = m.shape[-1]
    return (np.broadcast_to(m, shape + (n,)), np.broadcast_to(b, shape + (n,)),
            np.broadcast_to(t, shape + (n + 1,)), np.broadcast_to(tau, shape))


def potential(m, b, t, tau, T=None):
    """Evaluate the potential; unsmoothed when ``T`` is None."""
    m, b, t, tau = _align(m, b, t, tau)
    if T is None:
        idx = segment_index(t, tau)
        return _gather(m, idx) * tau + _gather(b, idx)
    bw = blend_weights(t, tau, T)
    prev, cur, nxt = _lines(m, b, tau, bw.idx)
    return bw.w_left * prev + (1.0 - bw.w_left - bw.w_right) * cur + bw.w_right * nxt


def potential_grad(m, b, t, tau, T=None):
    """Partials of ``potential`` w.r.t. ``m``, ``b`` and the interior endpoints.

    Returns ``(dm, db, dt)`` with shapes ``(..., n)``, ``(..., n)``, ``(..., n-1)``.
    """
    m, b, t, tau = _align(m, b, t, tau)
    n = m.shape[-1]
    if T is None:
        oh = _onehot(segment_index(t, tau), n)
        db = oh.astype(float)
        return db * tau[..., None], db, np.zeros(m.shape[:-1] + (n - 1,))

    idx, wl, wr = blend_weights(t, tau, T)
    db = (wl[..., None] * _onehot(idx - 1, n)
          + (1.0 - wl - wr)[..., None] * _onehot(idx, n)
          + wr[..., None] * _onehot(idx + 1, n))
    dm = db * tau[..., None]

    prev, cur, nxt = _lines(m, b, tau, idx)
    # d w_left / d t[idx] = T w_left (1 - w_left); d w_right / d t[idx+1] = -T w_right (1 - w_right)
    d_lo = T * wl * (1.0 - wl) * (prev - cur)
    d_hi = -T * wr * (1.0 - wr) * (nxt - cur)
    dt = (d_lo[..., None] * _onehot(idx - 1, n - 1)
          + d_hi[..., None] * _onehot(idx, n - 1))
    return dm, db, dt


def integral(m, b, t):
    """Closed-form integral of the unsmoothed potential over ``[0, 1]``."""
    t2 = t * t
    return (0.5 * np.sum(m * (t2[..., 1:] - t2[..., :-1]), axis=-1)
            + np.sum(b * np.diff(t, axis=-1), axis=-1))


def integral_grad(m, b, t):
    """Partials of ``integral`` w.r.t. ``m``, ``b`` and the interior endpoints."""
    t2 = t * t
    dm = 0.5 * (t2[..., 1:] - t2[..., :-1])
    db = np.diff(t, axis=-1)
    ti = t[..., 1:-1]
    # value of segment i at its right end minus segment i+1 at the same point
    dt = (m[..., :-1] * ti + b[..., :-1]) - (m[..., 1:] * ti + b[..., 1:])
    return dm, db, dt


# ---------------------------------------------------------------------------
# single node
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SegmentSet:
    """Slopes ``m``, intercepts ``b`` and endpoints ``t`` of one node.

    ``t`` starts at 0, ends at 1 and increases by at least ``min_gap``. Heads
    build sets with ``min_gap=0`` (any strictly positive softmax size is legal).
    """

    m: np.ndarray
    b: np.ndarray
    t: np.ndarray
    min_gap: float = MIN_GAP

    def __post_init__(self):
        m = np.array(self.m, dtype=float).reshape(-1)
        b = np.array(self.b, dtype=float).reshape(-1)
        t = np.array(self.t, dtype=float).reshape(-1)
        n = m.size
        if n < 1:
            raise DomainError("a SegmentSet needs at least one segment")
        if b.size != n or t.size != n + 1:
            raise DomainError(f"shape mismatch: m={m.size}, b={b.size}, t={t.size} (want n, n, n+1)")
        if not (np.all(np.isfinite(m)) and np.all(np.isfinite(b)) and np.all(np.isfinite(t))):
            raise DomainError("non-finite coefficient")
        if t[0] != 0.0 or t[-1] != 1.0:
            raise DomainError(f"endpoints must run from 0 to 1 exactly, got {t[0]!r}..{t[-1]!r}")
        gaps = np.diff(t)
        # a relative slack absorbs rounding in t[i+1] - t[i] after projection
        if np.any(gaps <= 0) or np.any(gaps < self.min_gap * (1.0 - 1e-9)):
            raise DomainError(f"segment lengths must be >= {self.min_gap:g} and positive, got min {gaps.min():.3g}")
        for name, arr in (("m", m), ("b", b), ("t", t)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n(self):
        return self.m.size

    @classmethod
    def from_sizes(cls, m, b, s, min_gap=MIN_GAP):
        return cls(m, b, endpoints_from_sizes(s), min_gap=min_gap)

    @classmethod
    def uniform(cls, n, m=None, b=None):
        m = np.zeros(n) if m is None else m
        b = np.zeros(n) if b is None else b
        return cls(m, b, np.linspace(0.0, 1.0, n + 1))

    def replace(self, **kw):
        fields = {"m": self.m, "b": self.b, "t": self.t, "min_gap": self.min_gap}
        fields.update(kw)
        return SegmentSet(**fields)

    def __call__(self, tau, T=None):
        """Vectorized evaluation (unsmoothed when ``T`` is None)."""
        tau = _check_tau(tau)
        return potential(self.m, self.b, self.t, tau, T)

    def to_dict(self):
        return {"m": self.m.tolist(), "b": self.b.tolist(), "t": self.t.tolist()}

    def to_json(self):
        # float repr round-trips exactly (17 significant digits)
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text, min_gap=MIN_GAP):
        d = json.loads(text) if isinstance(text, (str, bytes)) else text
        return cls(d["m"], d["b"], d["t"], min_gap=min_gap)

    def __eq__(self, other):
        if not isinstance(other, SegmentSet):
            return NotImplemented
        return (np.array_equal(self.m, other.m) and np.array_equal(self.b, other.b)
                and np.array_equal(self.t, other.t))

    __hash__ = None


@dataclass(frozen=True)
class SmoothingWeights:
    w_left: float
    w_right: float
    i: int  # 1-based active segment


def _check_tau(tau):
    arr = np.asarray(tau, dtype=float)
    if np.any(~np.isfinite(arr)) or np.any(arr < 0.0) or np.any(arr > 1.0):
        raise DomainError(f"tau must lie in [0, 1], got {tau!r}")
    return arr


def _check_T(T):
    if T is not None and not (T > 0 and np.isfinite(T)):
        raise DomainError(f"temperature must be positive and finite, got {T!r}")
    return T


def endpoints_from_sizes(s):
    s = np.asarray(s, dtype=float).reshape(-1)
    if s.size == 0 or np.any(~np.isfinite(s)) or np.any(s <= 0):
        raise DomainError("interval sizes must be positive")
    if abs(s.sum() - 1.0) > SUM_TOL:
        raise DomainError(f"interval sizes must sum to 1, got {s.sum()!r}")
    return sizes_to_endpoints(s)


def active_segment(theta, tau):
    """1-based index of the segment owning ``tau``."""
    _check_tau(tau)
    return int(segment_index(theta.t, float(tau))) + 1


def eval_unsmoothed(theta, tau):
    _check_tau(tau)
    return float(potential(theta.m, theta.b, theta.t, float(tau)))


def smoothing_weights(theta, tau, T):
    _check_tau(tau)
    if T is None:
        raise DomainError("temperature required")
    _check_T(T)
    idx, wl, wr = blend_weights(theta.t, float(tau), T)
    return SmoothingWeights(float(wl), float(wr), int(idx) + 1)


def eval_smoothed(theta, tau, T):
    _check_tau(tau)
    if T is None:
        raise DomainError("temperature required")
    _check_T(T)
    return float(potential(theta.m, theta.b, theta.t, float(tau), T))


def integral_unsmoothed(theta):
    return float(integral(theta.m, theta.b, theta.t))


def normalize_eval(theta, v_bar, tau, T=None):
    """Potential shifted so its mean over ``[0, 1]`` is ``v_bar``.

    The shift always uses the closed-form *unsmoothed* integral, also when a
    temperature is given.
    """
    _check_tau(tau)
    _check_T(T)
    value = potential(theta.m, theta.b, theta.t, float(tau), T)
    return float(value - integral(theta.m, theta.b, theta.t) + v_bar)
