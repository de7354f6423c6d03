"""Direct fitting of one piecewise-linear curve to noisy samples.

The engine is plain full-batch gradient descent on ``(m, b, interior t)``
under the smoothed L2 loss, with the temperature raised geometrically each
time the gradient at the current temperature has (nearly) vanished and the
learning rate tied to ``eta0 / T``.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.special import expit

from .errors import DomainError, FitError
from .plf import MIN_GAP, SegmentSet, integral, potential, segment_index
from .samples import SampleSet
from . import synth


# ---------------------------------------------------------------------------
# closed forms
# ---------------------------------------------------------------------------

def segment_regression_oracle(taus, vs):
    """Least-squares line ``(slope, intercept)`` through the samples.

    Slope is ``sum_{p<q} (u_p-u_q)(v_p-v_q) / sum_{p<q} (u_p-u_q)^2``, which
    equals the centred covariance ratio; the intercept follows from the
    stationarity condition in the intercept.
    """
    u = np.asarray(taus, dtype=float)
    v = np.asarray(vs, dtype=float)
    if u.size != v.size or u.size < 2 or np.all(u == u[0]):
        raise DomainError("need at least two distinct taus")
    du = u - u.mean()
    a = float(du @ (v - v.mean()) / (du @ du))
    return a, float(v.mean() - a * u.mean())


def uniform_sampling_constant(taus):
    """Smallest ``c`` satisfying the uniform sampling bound for these taus."""
    u = np.sort(np.asarray(taus, dtype=float))
    N = u.size
    if N < 2 or u[0] == u[-1]:
        raise DomainError("need at least two distinct taus")
    # sum_{p<q} |u_p - u_q| over sorted values
    abs_sum = float(np.sum(u * (2 * np.arange(N) - N + 1)))
    sq_sum = float(N * np.sum(u * u) - np.sum(u) ** 2)
    return abs_sum / sq_sum * float(u[-1] - u[0])


def sup_error(theta_a, theta_b):
    """Exact ``sup |V_a - V_b|`` over ``[0, 1]`` (unsmoothed).

    On each piece of the merged partition both curves are single lines, so the
    difference peaks at a piece end; both one-sided limits are checked.
    """
    P = np.union1d(theta_a.t, theta_b.t)
    lo, hi = P[:-1], P[1:]
    mid = 0.5 * (lo + hi)
    ia = segment_index(theta_a.t, mid)
    ib = segment_index(theta_b.t, mid)
    dm = theta_a.m[ia] - theta_b.m[ib]
    db = theta_a.b[ia] - theta_b.b[ib]
    return float(max(np.max(np.abs(dm * lo + db)), np.max(np.abs(dm * hi + db))))


# ---------------------------------------------------------------------------
# configuration and loss
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FitConfig:
    n: int = 2
    T0: float = 10.0
    gamma_T: float = 2.0
    T_max: float = 1e4
    eps_grad: float = 1e-5
    max_inner_iters: int = 2000
    eta0: float = 2.0
    init: object = "warm"          # "warm" | "uniform" | SegmentSet
    init_endpoints: tuple | None = None
    seed: int = 0
    normalization: bool = False
    smoothing: bool = True
    v_bar_init: float | None = None
    max_halvings: int = 20

    def __post_init__(self):
        if self.n < 1:
            raise DomainError("n must be positive")
        if not self.T0 > 0 or not self.gamma_T > 1 or not self.T_max >= self.T0:
            raise DomainError("need T0 > 0, gamma_T > 1 and T_max >= T0")
        if not self.eps_grad > 0 or not self.eta0 > 0 or self.max_inner_iters < 1:
            raise DomainError("need eps_grad > 0, eta0 > 0, max_inner_iters >= 1")
        if not (isinstance(self.init, SegmentSet) or self.init in ("warm", "uniform")):
            raise DomainError(f"unknown init {self.init!r}")
        if isinstance(self.init, SegmentSet) and self.init.n != self.n:
            raise DomainError("explicit init has the wrong segment count")

    def temperatures(self):
        Ts, T = [], self.T0
        while T < self.T_max:
            Ts.append(T)
            T *= self.gamma_T
        Ts.append(self.T_max)
        return Ts

    def to_dict(self):
        d = asdict(self)
        if isinstance(self.init, SegmentSet):
            d["init"] = self.init.to_dict()
        return d


class _Problem:
    """Loss and gradient of one sample set, specialised to a single 1-d curve.

    This is the hot loop of the fitting engine; it is cross-checked against the
    general array routines in :mod:`ppln.plf` by the test-suite.
    """

    def __init__(self, samples, T, normalization):
        self.taus = samples.taus
        self.vs = samples.vs
        self.T = T
        self.norm = normalization

    def _parts(self, m, b, t):
        n = m.size
        tau = self.taus
        idx = np.searchsorted(t[1:-1], tau, side="right")
        mp = np.concatenate([[0.0], m, [0.0]])
        bp = np.concatenate([[0.0], b, [0.0]])
        cur = m[idx] * tau + b[idx]
        if self.T is None:
            return idx, cur, None
        prev = mp[idx] * tau + bp[idx]
        nxt = mp[idx + 2] * tau + bp[idx + 2]
        wl = np.where(idx > 0, expit(self.T * (t[idx] - tau)), 0.0)
        wr = np.where(idx < n - 1, expit(self.T * (tau - t[idx + 1])), 0.0)
        val = wl * prev + (1.0 - wl - wr) * cur + wr * nxt
        return idx, val, (prev, cur, nxt, wl, wr)

    def _residual(self, m, b, t, v_bar, val):
        if self.norm:
            val = val - (0.5 * m @ (t[1:] ** 2 - t[:-1] ** 2) + b @ np.diff(t)) + v_bar
        return val - self.vs

    def loss(self, m, b, t, v_bar=0.0):
        r = self._residual(m, b, t, v_bar, self._parts(m, b, t)[1])
        return float(r @ r)

    def loss_grad(self, m, b, t, v_bar=0.0):
        n = m.size
        tau = self.taus
        idx, val, extra = self._parts(m, b, t)
        r = self._residual(m, b, t, v_bar, val)
        g = 2.0 * r
        if extra is None:
            d_m = np.bincount(idx, g * tau, minlength=n)
            d_b = np.bincount(idx, g, minlength=n)
            d_t = np.zeros(n - 1)
        else:
            prev, cur, nxt, wl, wr = extra
            # neighbour contributions land at idx-1 and idx+1; pad by one on each side
            wc = g * (1.0 - wl - wr)
            gl, gr = g * wl, g * wr
            d_b = (np.bincount(idx, gl, minlength=n + 2)
                   + np.bincount(idx + 1, wc, minlength=n + 2)
                   + np.bincount(idx + 2, gr, minlength=n + 2))[1:n + 1]
            d_m = (np.bincount(idx, gl * tau, minlength=n + 2)
                   + np.bincount(idx + 1, wc * tau, minlength=n + 2)
                   + np.bincount(idx + 2, gr * tau, minlength=n + 2))[1:n + 1]
            lo = g * self.T * wl * (1.0 - wl) * (prev - cur)
            hi = -g * self.T * wr * (1.0 - wr) * (nxt - cur)
            # interior endpoint k is t[k+1]: left end of segment k+1, right end of segment k
            d_t = (np.bincount(idx, lo, minlength=n + 1)[1:n]
                   + np.bincount(idx, hi, minlength=n)[:n - 1])
        d_v = 0.0
        if self.norm:
            total = float(g.sum())
            ti = t[1:-1]
            d_m = d_m - total * 0.5 * (t[1:] ** 2 - t[:-1] ** 2)
            d_b = d_b - total * np.diff(t)
            d_t = d_t - total * ((m[:-1] - m[1:]) * ti + b[:-1] - b[1:])
            d_v = total
        return LossGrad(float(r @ r), d_m, d_b, d_t, d_v)


def smoothed_l2_loss(theta, samples, T, normalization=False, v_bar=0.0):
    """Sum of squared residuals; ``T=None`` evaluates without smoothing."""
    pred = potential(theta.m, theta.b, theta.t, samples.taus, T)
    if normalization:
        pred = pred - integral(theta.m, theta.b, theta.t) + v_bar
    r = pred - samples.vs
    return float(r @ r)


class LossGrad(NamedTuple):
    loss: float
    d_m: np.ndarray
    d_b: np.ndarray
    d_t: np.ndarray
    d_vbar: float


def loss_and_grad(theta, samples, T, normalization=False, v_bar=0.0):
    """Loss with its partials in ``(m, b, interior t, v_bar)``."""
    return _Problem(samples, T, normalization).loss_grad(theta.m, theta.b, theta.t, v_bar)


def project_endpoints(interior, gap=MIN_GAP):
    """Ordered interior endpoints with spacing at least ``gap``."""
    t = np.asarray(interior, dtype=float).copy()
    k = t.size
    if k == 0:
        return t
    lo = gap * np.arange(1, k + 1)
    hi = 1.0 - gap * np.arange(k, 0, -1)
    t = np.clip(t, lo, hi)
    for i in range(1, k):
        t[i] = max(t[i], t[i - 1] + gap)
    for i in range(k - 2, -1, -1):
        t[i] = min(t[i], t[i + 1] - gap)
    return t


class StepResult(NamedTuple):
    theta: SegmentSet
    v_bar: float
    loss: float
    eta: float
    accepted: bool


def _step(prob, m, b, t, v_bar, g, eta, max_halvings):
    """Guarded step on raw arrays; returns ``(m, b, t, v_bar, loss, eta, accepted)``."""
    step = eta
    for _ in range(max_halvings + 1):
        tm = m - step * g.d_m
        tb = b - step * g.d_b
        tt = t.copy()
        tt[1:-1] = project_endpoints(t[1:-1] - step * g.d_t)
        tv = v_bar - step * g.d_vbar
        loss = prob.loss(tm, tb, tt, tv)
        if loss <= g.loss:
            return tm, tb, tt, tv, loss, step, True
        step *= 0.5
    return m, b, t, v_bar, g.loss, 0.0, False


def _check_finite(g, T):
    flat = np.concatenate([g.d_m, g.d_b, g.d_t, [g.d_vbar, g.loss]])
    if not np.all(np.isfinite(flat)):
        bad = int(np.flatnonzero(~np.isfinite(flat))[0])
        raise FitError(f"non-finite loss or gradient at T={T} (flat coordinate {bad})")


def fit_gradient_step(theta, samples, T, eta, config, v_bar=0.0):
    """One full-batch step with loss-increase guard and endpoint projection.

    If the step raises the loss, ``eta`` is halved up to ``config.max_halvings``
    times; when no trial helps the step is rejected and ``theta`` returned.
    """
    if not eta >= 0:
        raise DomainError("eta must be non-negative")
    prob = _Problem(samples, T, config.normalization)
    g = prob.loss_grad(theta.m, theta.b, theta.t, v_bar)
    _check_finite(g, T)
    if eta == 0:
        return StepResult(theta, v_bar, g.loss, 0.0, True)
    m, b, t, vb, loss, used, ok = _step(prob, theta.m, theta.b, theta.t, v_bar, g, eta, config.max_halvings)
    return StepResult(SegmentSet(m, b, t) if ok else theta, vb, loss, used, ok)


# ---------------------------------------------------------------------------
# driver
# ---------------------------------------------------------------------------

@dataclass
class FitReport:
    final_theta: SegmentSet
    v_bar: float
    loss_trace: list = field(default_factory=list)
    T_trace: list = field(default_factory=list)
    endpoint_trace: list = field(default_factory=list)
    endpoint_grad_trace: list = field(default_factory=list)
    iterations: int = 0
    initial_theta: SegmentSet | None = None
    sup_error: float | None = None

    @property
    def endpoint_moved(self):
        return not np.array_equal(self.initial_theta.t, self.final_theta.t)

    def to_dict(self):
        return {
            "final_theta": self.final_theta.to_dict(),
            "initial_theta": self.initial_theta.to_dict(),
            "v_bar": self.v_bar,
            "loss_trace": self.loss_trace,
            "T_trace": self.T_trace,
            "endpoint_trace": self.endpoint_trace,
            "endpoint_grad_trace": self.endpoint_grad_trace,
            "iterations": self.iterations,
            "endpoint_moved": self.endpoint_moved,
            "sup_error": self.sup_error,
        }


def _check_sampling(samples, t):
    for i in range(t.size - 1):
        last = i == t.size - 2
        mask = (samples.taus >= t[i]) & ((samples.taus <= t[i + 1]) if last else (samples.taus < t[i + 1]))
        if np.count_nonzero(mask) < 2:
            raise DomainError(
                f"segment [{t[i]:.3g}, {t[i + 1]:.3g}) holds fewer than two samples; the samples "
                "violate the Uniform Sampling Assumption for this initialization")


def initial_theta(samples, config):
    if isinstance(config.init, SegmentSet):
        return config.init
    n = config.n
    if config.init_endpoints is not None:
        t = np.concatenate([[0.0], project_endpoints(config.init_endpoints), [1.0]])
        if t.size != n + 1:
            raise DomainError("init_endpoints must hold n-1 interior endpoints")
    else:
        t = np.linspace(0.0, 1.0, n + 1)
    if config.init == "uniform":
        return SegmentSet(np.zeros(n), np.zeros(n), t)
    _check_sampling(samples, t)
    idx = segment_index(t, samples.taus)
    m, b = np.zeros(n), np.zeros(n)
    for i in range(n):
        m[i], b[i] = segment_regression_oracle(samples.taus[idx == i], samples.vs[idx == i])
    return SegmentSet(m, b, t)


def fit_piecewise_linear(samples, config=FitConfig(), truth=None):
    """Anneal-and-descend fit; returns ``(theta, FitReport)``.

    Raises :class:`FitError` when the loss exceeds a million times its
    initial value.
    """
    theta = initial_theta(samples, config)
    _check_sampling(samples, theta.t)
    if config.v_bar_init is not None:
        v_bar = float(config.v_bar_init)
    else:
        v_bar = float(integral(theta.m, theta.b, theta.t))
    report = FitReport(theta, v_bar, initial_theta=theta)
    m, b, t = theta.m.copy(), theta.b.copy(), theta.t.copy()
    initial_loss = None
    for T in config.temperatures():
        prob = _Problem(samples, T if config.smoothing else None, config.normalization)
        eta = config.eta0 / T
        for _ in range(config.max_inner_iters):
            g = prob.loss_grad(m, b, t, v_bar)
            _check_finite(g, T)
            if initial_loss is None:
                initial_loss = max(g.loss, 1e-300)
            if g.loss > 1e6 * initial_loss:
                raise FitError(f"diverged at T={T}: loss {g.loss:.3g} vs initial {initial_loss:.3g}")
            report.endpoint_grad_trace.append(float(np.max(np.abs(g.d_t), initial=0.0)))
            gmax = max(float(np.max(np.abs(g.d_m))), float(np.max(np.abs(g.d_b))),
                       float(np.max(np.abs(g.d_t), initial=0.0)), abs(g.d_vbar))
            if gmax < config.eps_grad:
                break
            m, b, t, v_bar, loss, _, ok = _step(prob, m, b, t, v_bar, g, eta, config.max_halvings)
            report.iterations += 1
            if not ok:
                break
            report.loss_trace.append(loss)
            report.T_trace.append(T)
            report.endpoint_trace.append(t[1:-1].tolist())
    theta = SegmentSet(m, b, t)
    report.final_theta = theta
    report.v_bar = v_bar
    if truth is not None:
        report.sup_error = sup_error(fitted_curve(theta, v_bar, config.normalization), truth)
    return theta, report


def _shift(theta, c):
    return theta.replace(b=theta.b + c)


def fitted_curve(theta, v_bar, normalization):
    """The function the fit actually represents, as a SegmentSet."""
    if not normalization:
        return theta
    return _shift(theta, v_bar - float(integral(theta.m, theta.b, theta.t)))


# ---------------------------------------------------------------------------
# two-segment toy
# ---------------------------------------------------------------------------

TOY_TRUTH = SegmentSet([1.0, -1.5], [0.0, 1.75], [0.0, 0.7, 1.0])


@dataclass(frozen=True)
class ToyConfig:
    truth: SegmentSet = TOY_TRUTH
    samples: int = 100
    noise: float = 0.02
    seed: int = 0
    fit: FitConfig = FitConfig(n=2, init="uniform", T0=10.0, T_max=1e3, max_inner_iters=1000)


@dataclass
class ToyVariant:
    normalization: bool
    smoothing: bool
    theta: SegmentSet
    curve: SegmentSet
    report: FitReport
    sup_error: float
    endpoint_moved: bool
    max_endpoint_grad: float

    @property
    def name(self):
        return f"norm-{'on' if self.normalization else 'off'}_smooth-{'on' if self.smoothing else 'off'}"


@dataclass
class ToyReport:
    samples: SampleSet
    truth: SegmentSet
    variants: list

    def variant(self, normalization, smoothing):
        for v in self.variants:
            if v.normalization == normalization and v.smoothing == smoothing:
                return v
        raise KeyError((normalization, smoothing))

    def summary(self):
        return {v.name: {"sup_error": v.sup_error, "endpoint_moved": v.endpoint_moved,
                         "final_endpoints": v.theta.t[1:-1].tolist(),
                         "max_endpoint_grad": v.max_endpoint_grad,
                         "iterations": v.report.iterations}
                for v in self.variants}


def toy_experiment(config=ToyConfig()):
    """Fit the two-segment toy under all four normalization x smoothing variants.

    Every variant starts from zero slopes, zero intercepts and equal lengths.
    """
    truth = config.truth
    spec = synth.SynthSpec(n_true=truth.n, samples=config.samples, noise_level=config.noise,
                           seed=config.seed)
    samples = synth.sample_from(truth, spec)
    variants = []
    for norm in (False, True):
        for smooth in (False, True):
            fc = FitConfig(**{**config.fit.to_dict(), "normalization": norm, "smoothing": smooth,
                              "init": config.fit.init, "seed": config.seed})
            theta, rep = fit_piecewise_linear(samples, fc)
            curve = fitted_curve(theta, rep.v_bar, norm)
            variants.append(ToyVariant(norm, smooth, theta, curve, rep, sup_error(curve, truth),
                                       rep.endpoint_moved, max(rep.endpoint_grad_trace, default=0.0)))
    return ToyReport(samples, truth, variants)
