"""Analytic-versus-finite-difference gradient suites.

Each suite draws random configurations from a seeded stream, compares the
hand-written gradient with :func:`ppln.oracle.fd_gradient` and keeps the worst
relative error together with the trial and coordinate where it occurred.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import net
from .grad import grad_conv_node_forward, grad_node_forward, grad_normalized, grad_smoothed
from .heads import REGRESSED, ConvNodeWeights, NodeWeights, conv_node_forward, node_forward, softmax
from .oracle import FiniteDiffSpec, fd_gradient
from .plf import SegmentSet, eval_smoothed, normalize_eval, sizes_to_endpoints

MODULES = ("plf", "heads", "net")
MARGIN = 1e-3   # keep tau this far from any endpoint so differences do not straddle a switch


@dataclass
class CheckResult:
    op: str
    module: str
    trials: int
    max_rel_error: float
    tol: float
    worst_trial: int
    worst_coord: int

    @property
    def ok(self):
        return self.max_rel_error <= self.tol

    def to_dict(self):
        return {"op": self.op, "module": self.module, "trials": self.trials, "max_rel_error": self.max_rel_error,
                "tol": self.tol, "ok": self.ok, "worst_trial": self.worst_trial, "worst_coord": self.worst_coord}


def _worst(analytic, numeric, floor):
    a = np.asarray(analytic, dtype=float).reshape(-1)
    f = np.asarray(numeric, dtype=float).reshape(-1)
    err = np.abs(a - f) / np.maximum(np.maximum(np.abs(a), np.abs(f)), floor)
    i = int(np.argmax(err))
    return float(err[i]), i


def _random_theta(rng, n_max=5):
    n = int(rng.integers(1, n_max + 1))
    sizes = 0.02 + 0.98 * rng.dirichlet(np.ones(n))
    t = sizes_to_endpoints(sizes / sizes.sum())
    return SegmentSet(rng.normal(size=n), rng.normal(size=n), t)


def _random_tau(rng, t):
    while True:
        tau = float(rng.uniform(0.0, 1.0))
        if np.all(np.abs(np.asarray(t)[..., 1:-1] - tau) > MARGIN):
            return tau


def _theta_from(p, n):
    return SegmentSet(p[:n], p[n:2 * n], np.concatenate([[0.0], p[2 * n:3 * n - 1], [1.0]]))


def _check_eval_smoothed(rng, spec):
    theta = _random_theta(rng)
    tau = _random_tau(rng, theta.t)
    T = float(np.exp(rng.uniform(0.0, np.log(100.0))))
    n = theta.n
    p = np.concatenate([theta.m, theta.b, theta.t[1:-1]])
    num = fd_gradient(lambda q: eval_smoothed(_theta_from(q, n), tau, T), p, spec)
    g = grad_smoothed(theta, tau, T)
    return np.concatenate([g.d_m, g.d_b, g.d_t]), num


def _check_normalize_eval(rng, spec):
    theta = _random_theta(rng)
    tau = _random_tau(rng, theta.t)
    T = None if rng.uniform() < 0.5 else float(np.exp(rng.uniform(0.0, np.log(100.0))))
    n = theta.n
    p = np.concatenate([theta.m, theta.b, theta.t[1:-1], [rng.normal()]])
    num = fd_gradient(lambda q: normalize_eval(_theta_from(q, n), q[-1], tau, T), p, spec)
    return grad_normalized(theta, tau, T).flat(), num


def _node_parts(w):
    return [w.W_m, w.W_b, w.W_s, w.w_V]


def _check_node_forward(rng, spec):
    n, k = int(rng.integers(1, 5)), int(rng.integers(1, 6))
    w = NodeWeights.init(n, k, rng)
    x = rng.normal(size=k)
    tau = _random_tau(rng, sizes_to_endpoints(softmax(w.W_s @ x)))
    T = None if rng.uniform() < 0.3 else float(np.exp(rng.uniform(0.0, np.log(100.0))))
    normalize = bool(rng.uniform() < 0.7)
    shapes = [a.shape for a in _node_parts(w)] + [x.shape]
    p = np.concatenate([a.reshape(-1) for a in _node_parts(w)] + [x])

    def split(q):
        out, at = [], 0
        for s in shapes:
            size = int(np.prod(s))
            out.append(q[at:at + size].reshape(s))
            at += size
        return out

    def f(q):
        Wm, Wb, Ws, wV, xx = split(q)
        return node_forward(NodeWeights(Wm, Wb, Ws, wV), xx, tau, T, REGRESSED, normalize)

    gw, gx = grad_node_forward(w, x, tau, T, REGRESSED, normalize)
    return np.concatenate([a.reshape(-1) for a in _node_parts(gw)] + [gx]), fd_gradient(f, p, spec)


def _check_conv_node_forward(rng, spec):
    J, n, C = int(rng.integers(1, 3)), int(rng.integers(1, 4)), int(rng.integers(1, 3))
    ks = int(rng.choice([1, 3]))
    H, W = int(rng.integers(2, 5)), int(rng.integers(2, 5))
    w = ConvNodeWeights.init(J, n, C, ks, rng, padding="same")
    x = rng.normal(size=(C, H, W))
    from .heads import conv_predict_coefficients
    tau = _random_tau(rng, conv_predict_coefficients(w, x).t)
    T = None if rng.uniform() < 0.3 else float(np.exp(rng.uniform(0.0, np.log(100.0))))
    normalize = bool(rng.uniform() < 0.7)
    up = rng.normal(size=(J, H, W))
    shapes = [a.shape for a in _node_parts(w)] + [x.shape]
    p = np.concatenate([a.reshape(-1) for a in _node_parts(w)] + [x.reshape(-1)])

    def f(q):
        parts, at = [], 0
        for s in shapes:
            size = int(np.prod(s))
            parts.append(q[at:at + size].reshape(s))
            at += size
        ww = ConvNodeWeights(*parts[:4], n, 1, "same")
        return float(np.sum(up * conv_node_forward(ww, parts[4], tau, T, REGRESSED, normalize)))

    gw, gx = grad_conv_node_forward(w, x, tau, up, T, REGRESSED, normalize)
    return np.concatenate([a.reshape(-1) for a in _node_parts(gw)] + [gx.reshape(-1)]), fd_gradient(f, p, spec)


TWO_LAYER = net.ModelSpec((3,), [{"type": "dense", "out": 4, "n": 2, "bias": True},
                                 {"type": "dense", "out": 1, "n": 2, "bias": True}], T=20.0)


def _check_two_layer(rng, spec):
    mspec = TWO_LAYER.with_flags(T=None if rng.uniform() < 0.3 else TWO_LAYER.T,
                                 normalization=bool(rng.uniform() < 0.7))
    params = net.init_params(mspec, int(rng.integers(0, 2 ** 31)))
    X = rng.normal(size=(2, 3))
    tau = rng.uniform(size=2)
    G = rng.normal(size=(2, 1))
    keys = [(li, k) for li, p in enumerate(params) for k in sorted(p)]
    p0 = np.concatenate([params[li][k].reshape(-1) for li, k in keys])

    def unflat(q):
        out = [dict(p) for p in params]
        at = 0
        for li, k in keys:
            s = params[li][k].shape
            size = int(np.prod(s))
            out[li][k] = q[at:at + size].reshape(s)
            at += size
        return out

    f = lambda q: float(np.sum(G * net.model_forward(mspec, unflat(q), X, tau)))
    grads = net.model_grad(mspec, params, X, tau, G)
    return np.concatenate([grads[li][k].reshape(-1) for li, k in keys]), fd_gradient(f, p0, spec)


SUITES = [
    ("eval_smoothed", "plf", _check_eval_smoothed, 1e-4),
    ("normalize_eval", "plf", _check_normalize_eval, 1e-4),
    ("node_forward", "heads", _check_node_forward, 1e-4),
    ("conv_node_forward", "heads", _check_conv_node_forward, 1e-4),
    ("two_layer_model", "net", _check_two_layer, 1e-3),
]


def run_gradcheck(trials=100, seed=0, modules=MODULES, spec=FiniteDiffSpec()):
    """Run every suite in ``modules``; one :class:`CheckResult` per operation."""
    results = []
    for i, (op, module, fn, tol) in enumerate(SUITES):
        if module not in modules:
            continue
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(100 + i,)))
        worst, wt, wc = 0.0, -1, -1
        for trial in range(trials):
            a, f = fn(rng, spec)
            err, coord = _worst(a, f, spec.floor)
            if err > worst or wt < 0:
                worst, wt, wc = err, trial, coord
        results.append(CheckResult(op, module, trials, worst, tol, wt, wc))
    return results
