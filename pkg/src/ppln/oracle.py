"""Brute-force reference computations.

Nothing here imports from the rest of the package: these are the independent
side of every dual-route check, written as plainly as possible.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, OracleError


@dataclass(frozen=True)
class FiniteDiffSpec:
    h: float = 1e-6
    rtol: float = 1e-4
    atol: float = 1e-8
    scheme: str = "central"

    def __post_init__(self):
        if not (self.h > 0 and self.rtol > 0 and self.atol > 0):
            raise ValueError("step and tolerances must be positive")
        if self.scheme != "central":
            raise ValueError("only central differences are supported")

    @property
    def floor(self):
        """Magnitude below which errors are judged absolutely."""
        return self.atol / self.rtol


def fd_gradient(f, params, spec=FiniteDiffSpec()):
    """Central differences ``(f(p + h e_i) - f(p - h e_i)) / 2h``."""
    p = np.array(params, dtype=float)
    g = np.zeros(p.size)
    flat = p.reshape(-1)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + spec.h
        hi = f(p)
        flat[i] = keep - spec.h
        lo = f(p)
        flat[i] = keep
        if not (math.isfinite(hi) and math.isfinite(lo)):
            raise OracleError(f"non-finite evaluation at coordinate {i}")
        g[i] = (hi - lo) / (2.0 * spec.h)
    return g.reshape(p.shape)


def relative_error(analytic, numeric, floor=1e-4):
    """``max |a - f| / max(|a|, |f|, floor)`` over all coordinates."""
    a = np.asarray(analytic, dtype=float).reshape(-1)
    f = np.asarray(numeric, dtype=float).reshape(-1)
    if a.size == 0:
        return 0.0
    scale = np.maximum(np.maximum(np.abs(a), np.abs(f)), floor)
    return float(np.max(np.abs(a - f) / scale))


def quad_integral(f, points=100_000, breakpoints=None):
    """Midpoint rule on ``[0, 1]``; ``f`` is called on an array of nodes.

    With ``breakpoints`` the rule runs separately on each piece between them
    (points shared out by length, at least one per piece), so a jump costs
    nothing instead of up to ``jump / (2 * points)``.
    """
    if breakpoints is None:
        x = (np.arange(points) + 0.5) / points
        return float(np.sum(f(x)) / points)
    edges = np.unique(np.concatenate([[0.0], np.asarray(breakpoints, dtype=float), [1.0]]))
    total = 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        k = max(1, int(round(points * (hi - lo))))
        x = lo + (np.arange(k) + 0.5) * (hi - lo) / k
        total += float(np.sum(f(x))) * (hi - lo) / k
    return total


def naive_conv2d(kernel, x, stride=1, padding=0):
    """Cross-correlation with four nested loops per output value.

    ``kernel`` is ``(O, C, kh, kw)``, ``x`` is ``(C, H, W)``; ``padding`` is an
    int or ``"same"`` (odd kernels).
    """
    O, C, kh, kw = kernel.shape
    if x.shape[0] != C:
        raise ContractError("channel mismatch")
    if padding == "same":
        ph, pw = (kh - 1) // 2, (kw - 1) // 2
    else:
        ph = pw = int(padding)
    H, W = x.shape[1], x.shape[2]
    Ho = (H + 2 * ph - kh) // stride + 1
    Wo = (W + 2 * pw - kw) // stride + 1
    out = np.zeros((O, Ho, Wo))
    for o in range(O):
        for i in range(Ho):
            for j in range(Wo):
                acc = 0.0
                for c in range(C):
                    for di in range(kh):
                        for dj in range(kw):
                            r = i * stride + di - ph
                            q = j * stride + dj - pw
                            if 0 <= r < H and 0 <= q < W:
                                acc += kernel[o, c, di, dj] * x[c, r, q]
                out[o, i, j] = acc
    return out


def grid_sup(f, g, points=100_000):
    """``max |f - g|`` over an evenly spaced grid including both ends."""
    x = np.linspace(0.0, 1.0, points)
    return float(np.max(np.abs(f(x) - g(x))))


# ---------------------------------------------------------------------------
# straight-line recomputations
# ---------------------------------------------------------------------------

def plain_potential(m, b, t, tau, T=None):
    """One potential value from Python lists, following the definition literally."""
    n = len(m)
    i = n - 1
    for k in range(n):
        if t[k] <= tau < t[k + 1]:
            i = k
            break
    line = lambda k: m[k] * tau + b[k]
    if T is None:
        return line(i)
    wl = 0.0 if i == 0 else 1.0 / (1.0 + math.exp(min(T * (tau - t[i]), 700.0)))
    wr = 0.0 if i == n - 1 else 1.0 / (1.0 + math.exp(min(T * (t[i + 1] - tau), 700.0)))
    out = (1.0 - wl - wr) * line(i)
    if i > 0:
        out += wl * line(i - 1)
    if i < n - 1:
        out += wr * line(i + 1)
    return out


def plain_integral(m, b, t):
    total = 0.0
    for i in range(len(m)):
        total += 0.5 * m[i] * (t[i + 1] ** 2 - t[i] ** 2) + b[i] * (t[i + 1] - t[i])
    return total


def plain_node_forward(W_m, W_b, W_s, w_V, x, tau, T=None, v_bar=None, normalize=True):
    """Dense node output by explicit loops; ``v_bar`` overrides the regressed mean."""
    n, k = len(W_m), len(x)
    dot = lambda row: sum(row[c] * x[c] for c in range(k))
    m = [math.tanh(dot(W_m[i])) for i in range(n)]
    b = [dot(W_b[i]) for i in range(n)]
    z = [dot(W_s[i]) for i in range(n)]
    zmax = max(z)
    e = [math.exp(v - zmax) for v in z]
    tot = sum(e)
    t = [0.0]
    for i in range(n):
        t.append(t[-1] + e[i] / tot)
    t[-1] = 1.0
    value = plain_potential(m, b, t, tau, T)
    if not normalize:
        return value
    vb = dot(w_V) if v_bar is None else v_bar
    return value - plain_integral(m, b, t) + vb


def normal_equations_line(taus, vs):
    """Least-squares ``(slope, intercept)`` by solving the 2x2 normal equations."""
    u = np.asarray(taus, dtype=float)
    v = np.asarray(vs, dtype=float)
    A = np.array([[np.sum(u * u), np.sum(u)], [np.sum(u), float(u.size)]])
    rhs = np.array([np.sum(u * v), np.sum(v)])
    a, c = np.linalg.solve(A, rhs)
    return float(a), float(c)


def brute_uniform_sampling_constant(taus):
    taus = list(map(float, taus))
    num = den = 0.0
    span = 0.0
    for p in range(len(taus)):
        for q in range(p + 1, len(taus)):
            d = abs(taus[p] - taus[q])
            num += d
            den += d * d
            span = max(span, d)
    return num / den * span
