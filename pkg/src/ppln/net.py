"""Small stacked PPLN networks: forward, training loop, optimizers, ablation sweeps."""
from __future__ import annotations

import itertools
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import synth
from .errors import ContractError, DomainError, TrainingError
from .grad import LayerRecord, backprop_chain, conv_backward, dense_backward
from .heads import (REGRESSED, ConvNodeWeights, VBarMode, augment, conv_forward, dense_forward,
                    resolve_padding, _out_size)

DEFAULT_T = 20.0
LAYER_TYPES = ("dense", "conv", "relu", "identity", "flatten")


# ---------------------------------------------------------------------------
# model description
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ModelSpec:
    """Ordered layer descriptors plus global node flags.

    Layers are dicts: ``{"type": "dense", "out": J, "n": n, "bias": False}``,
    ``{"type": "conv", "out": J, "n": n, "kernel": 3, "stride": 1,
    "padding": "same"}``, or one of ``relu``, ``identity``, ``flatten``.
    ``input_shape`` excludes the batch axis. ``T=None`` turns smoothing off.
    """

    input_shape: tuple
    layers: tuple
    T: float | None = DEFAULT_T
    normalization: bool = True
    vbar: str = "regressed"
    observed_vbar: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(d) for d in self.input_shape))
        object.__setattr__(self, "layers", tuple(dict(l) for l in self.layers))
        if self.T is not None and not self.T > 0:
            raise DomainError("T must be positive or None")
        if not any(l.get("type") in ("dense", "conv") for l in self.layers):
            raise ContractError("a model needs at least one PPLN layer")
        self.shapes()  # raises on anything that does not compose

    @property
    def vmode(self):
        if self.vbar == "regressed":
            return REGRESSED
        return VBarMode.observed(self.observed_vbar)

    def shapes(self):
        """Activation shape after every layer (first entry is the input)."""
        shape = self.input_shape
        out = [shape]
        for i, l in enumerate(self.layers):
            kind = l.get("type")
            if kind not in LAYER_TYPES:
                raise ContractError(f"layer {i}: unknown type {kind!r}")
            if kind == "dense":
                if len(shape) != 1:
                    raise ContractError(f"layer {i}: dense layer needs a flat input, got {shape}")
                _positive(l, ("out", "n"), i)
                shape = (int(l["out"]),)
            elif kind == "conv":
                if len(shape) != 3:
                    raise ContractError(f"layer {i}: conv layer needs (C, H, W), got {shape}")
                _positive(l, ("out", "n"), i)
                k = int(l.get("kernel", 3))
                ph, pw = resolve_padding(l.get("padding", "same"), k, k)
                stride = int(l.get("stride", 1))
                Ho, Wo = _out_size(shape[1], k, ph, stride), _out_size(shape[2], k, pw, stride)
                if Ho < 1 or Wo < 1:
                    raise ContractError(f"layer {i}: kernel {k} does not fit input {shape}")
                shape = (int(l["out"]), Ho, Wo)
            elif kind == "flatten":
                shape = (int(np.prod(shape)),)
            out.append(shape)
        return out

    @property
    def output_shape(self):
        return self.shapes()[-1]

    def with_flags(self, **kw):
        return replace(self, **kw)

    def with_segments(self, n):
        layers = [dict(l, n=n) if l["type"] in ("dense", "conv") else l for l in self.layers]
        return replace(self, layers=tuple(layers))

    def to_dict(self):
        d = asdict(self)
        d["input_shape"] = list(self.input_shape)
        d["layers"] = [dict(l) for l in self.layers]
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def _positive(l, keys, i):
    for key in keys:
        if int(l.get(key, 0)) < 1:
            raise ContractError(f"layer {i}: {key!r} must be a positive integer")


def init_params(spec, seed=0):
    """One dict of arrays per layer (empty for parameter-free layers)."""
    rng = synth.stream(seed, "init")
    params = []
    for l, shape in zip(spec.layers, spec.shapes()):
        if l["type"] == "dense":
            k = shape[0] + (1 if l.get("bias") else 0)
            J, n = int(l["out"]), int(l["n"])
            r = 1.0 / math.sqrt(k)
            params.append({
                "W_m": rng.uniform(-r, r, (J, n, k)), "W_b": rng.uniform(-r, r, (J, n, k)),
                "W_s": rng.uniform(-r, r, (J, n, k)), "w_V": rng.uniform(-r, r, (J, k)),
            })
        elif l["type"] == "conv":
            w = ConvNodeWeights.init(int(l["out"]), int(l["n"]), shape[0], int(l.get("kernel", 3)),
                                     rng, int(l.get("stride", 1)), l.get("padding", "same"))
            params.append({f: getattr(w, f) for f in ("W_m", "W_b", "W_s", "w_V")})
        else:
            params.append({})
    return params


def count_params(params):
    return sum(a.size for p in params for a in p.values())


# ---------------------------------------------------------------------------
# forward / backward
# ---------------------------------------------------------------------------

def _conv_weights(l, p):
    return ConvNodeWeights(p["W_m"], p["W_b"], p["W_s"], p["w_V"], int(l["n"]),
                           int(l.get("stride", 1)), l.get("padding", "same"))


def _check_batch(spec, X, tau):
    X = np.asarray(X, dtype=float)
    if X.shape[1:] != spec.input_shape:
        raise ContractError(f"input of shape {X.shape[1:]} does not match model input {spec.input_shape}")
    tau = np.broadcast_to(np.asarray(tau, dtype=float).reshape(-1), (X.shape[0],))
    if np.any(tau < 0) or np.any(tau > 1) or not np.all(np.isfinite(tau)):
        raise DomainError("tau must lie in [0, 1]")
    return X, tau


def forward_tape(spec, params, X, tau):
    """Batched forward pass; returns ``(output, [LayerRecord, ...])``."""
    X, tau = _check_batch(spec, X, tau)
    if len(params) != len(spec.layers):
        raise ContractError(f"{len(params)} parameter groups for {len(spec.layers)} layers")
    T, norm, vmode = spec.T, spec.normalization, spec.vmode
    tape = []
    h = X
    for i, (l, p) in enumerate(zip(spec.layers, params)):
        kind = l["type"]
        if kind == "dense":
            bias = bool(l.get("bias"))
            hin = augment(h) if bias else h
            Y, cache = dense_forward(p["W_m"], p["W_b"], p["W_s"], p["w_V"], hin, tau, T, vmode, norm)

            def back(g, p=p, cache=cache, bias=bias):
                grads, gX = dense_backward(p["W_m"], p["W_b"], p["W_s"], p["w_V"], cache, g)
                return grads, (gX[:, :-1] if bias else gX)
        elif kind == "conv":
            w = _conv_weights(l, p)
            Y, cache = conv_forward(w, h, tau, T, vmode, norm)

            def back(g, w=w, cache=cache):
                return conv_backward(w, cache, g)
        elif kind == "relu":
            mask = h > 0
            Y = h * mask

            def back(g, mask=mask):
                return {}, g * mask
        elif kind == "flatten":
            in_shape = h.shape
            Y = h.reshape(h.shape[0], -1)

            def back(g, in_shape=in_shape):
                return {}, g.reshape(in_shape)
        else:
            Y = h

            def back(g):
                return {}, g
        tape.append(LayerRecord(back, Y.shape, f"{i}:{kind}"))
        h = Y
    return h, tape


def model_forward(spec, params, x, tau):
    """Output for a batch ``x`` of shape ``(B, *input_shape)``; every PPLN layer sees ``tau``."""
    return forward_tape(spec, params, x, tau)[0]


def model_grad(spec, params, X, tau, G):
    """Parameter gradients of ``sum(G * model_forward(...))``."""
    _, tape = forward_tape(spec, params, X, tau)
    return backprop_chain(tape, G)


# ---------------------------------------------------------------------------
# losses and optimizers
# ---------------------------------------------------------------------------

def loss_value(kind, pred, y):
    """Mean over all output elements of the squared (l2) or absolute (l1) error."""
    d = pred - y
    if kind == "l2":
        return float(np.mean(d * d))
    if kind == "l1":
        return float(np.mean(np.abs(d)))
    raise DomainError(f"unknown loss {kind!r}")


def loss_grad(kind, pred, y):
    d = pred - y
    if kind == "l2":
        return 2.0 * d / d.size
    return np.sign(d) / d.size


class SGD:
    def __init__(self, momentum=0.0):
        self.momentum = momentum
        self.v = None

    def step(self, params, grads, lr):
        if self.v is None:
            self.v = [{k: np.zeros_like(a) for k, a in p.items()} for p in params]
        for p, g, v in zip(params, grads, self.v):
            for k in p:
                v[k] = self.momentum * v[k] + g[k]
                p[k] -= lr * v[k]


class Adam:
    def __init__(self, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = self.v = None
        self.t = 0

    def step(self, params, grads, lr):
        if self.m is None:
            self.m = [{k: np.zeros_like(a) for k, a in p.items()} for p in params]
            self.v = [{k: np.zeros_like(a) for k, a in p.items()} for p in params]
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            for k in p:
                m[k] = self.beta1 * m[k] + (1 - self.beta1) * g[k]
                v[k] = self.beta2 * v[k] + (1 - self.beta2) * g[k] ** 2
                p[k] -= lr * (m[k] / c1) / (np.sqrt(v[k] / c2) + self.eps)


class RMSProp:
    def __init__(self, alpha=0.99, eps=1e-8):
        self.alpha, self.eps = alpha, eps
        self.v = None

    def step(self, params, grads, lr):
        if self.v is None:
            self.v = [{k: np.zeros_like(a) for k, a in p.items()} for p in params]
        for p, g, v in zip(params, grads, self.v):
            for k in p:
                v[k] = self.alpha * v[k] + (1 - self.alpha) * g[k] ** 2
                p[k] -= lr * g[k] / (np.sqrt(v[k]) + self.eps)


@dataclass(frozen=True)
class TrainConfig:
    optimizer: str = "adam"
    lr: float = 0.01
    loss: str = "l2"
    epochs: int = 50
    batch_size: int = 32
    milestones: tuple = ()
    decay: float = 0.1
    seed: int = 0
    momentum: float = 0.0
    betas: tuple = (0.9, 0.999)
    alpha: float = 0.99
    eps: float = 1e-8

    def __post_init__(self):
        object.__setattr__(self, "milestones", tuple(int(m) for m in self.milestones))
        object.__setattr__(self, "betas", tuple(float(b) for b in self.betas))
        if self.optimizer not in ("sgd", "adam", "rmsprop"):
            raise DomainError(f"unknown optimizer {self.optimizer!r}")
        if self.loss not in ("l1", "l2"):
            raise DomainError(f"unknown loss {self.loss!r}")
        if not self.lr > 0 or self.epochs < 1 or self.batch_size < 1 or not self.decay > 0:
            raise DomainError("lr, epochs, batch_size and decay must be positive")

    def make_optimizer(self):
        if self.optimizer == "sgd":
            return SGD(self.momentum)
        if self.optimizer == "adam":
            return Adam(*self.betas, self.eps)
        return RMSProp(self.alpha, self.eps)

    def lr_at(self, epoch):
        return self.lr * self.decay ** sum(epoch >= m for m in self.milestones)

    def to_dict(self):
        d = asdict(self)
        d["milestones"] = list(self.milestones)
        d["betas"] = list(self.betas)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class TrainReport:
    train_loss: list = field(default_factory=list)   # entry 0 is before any update
    val_loss: list = field(default_factory=list)
    batches: int = 0

    @property
    def final_train(self):
        return self.train_loss[-1]

    @property
    def final_val(self):
        return self.val_loss[-1] if self.val_loss else None

    def to_dict(self):
        return {"train_loss": self.train_loss, "val_loss": self.val_loss, "batches": self.batches}


def evaluate(spec, params, data, loss="l2", chunk=1024):
    """Dataset loss computed in fixed-size chunks."""
    total = 0.0
    for lo in range(0, len(data), chunk):
        sl = slice(lo, lo + chunk)
        pred = model_forward(spec, params, data.X[sl], data.tau[sl])
        total += loss_value(loss, pred, data.y[sl]) * pred.size
    return total / (len(data) * data.y.shape[1])


def _check_data(spec, data):
    if len(data) == 0:
        raise DomainError("empty dataset")
    if data.y.shape[1:] != tuple(spec.output_shape[-1:]) or len(spec.output_shape) != 1:
        raise ContractError(f"targets of shape {data.y.shape[1:]} do not match model output {spec.output_shape}")


def train(spec, config, data, params=None, val=None):
    """Mini-batch training; returns ``(params, TrainReport)``.

    Batches follow a seeded permutation per epoch, so runs repeat bit for bit.
    """
    _check_data(spec, data)
    params = init_params(spec, config.seed) if params is None else [
        {k: np.array(a, dtype=float) for k, a in p.items()} for p in params]
    opt = config.make_optimizer()
    shuffle = synth.stream(config.seed, "shuffle")
    report = TrainReport()
    report.train_loss.append(evaluate(spec, params, data, config.loss))
    if val is not None:
        report.val_loss.append(evaluate(spec, params, val, config.loss))
    N = len(data)
    for epoch in range(config.epochs):
        lr = config.lr_at(epoch)
        order = shuffle.permutation(N)
        for bi, lo in enumerate(range(0, N, config.batch_size)):
            idx = order[lo:lo + config.batch_size]
            pred, tape = forward_tape(spec, params, data.X[idx], data.tau[idx])
            loss = loss_value(config.loss, pred, data.y[idx])
            if not math.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {bi}")
            grads = backprop_chain(tape, loss_grad(config.loss, pred, data.y[idx]))
            if not all(np.all(np.isfinite(a)) for g in grads for a in g.values()):
                raise TrainingError(f"non-finite gradient at epoch {epoch}, batch {bi}")
            opt.step(params, grads, lr)
            report.batches += 1
        tl = evaluate(spec, params, data, config.loss)
        if not math.isfinite(tl):
            raise TrainingError(f"non-finite loss after epoch {epoch}, batch {bi}")
        report.train_loss.append(tl)
        if val is not None:
            report.val_loss.append(evaluate(spec, params, val, config.loss))
    return params, report


# ---------------------------------------------------------------------------
# ablation
# ---------------------------------------------------------------------------

@dataclass
class Variant:
    normalization: bool
    smoothing: bool
    n: int | None
    train_loss: float | None = None
    val_loss: float | None = None
    error: str | None = None
    report: TrainReport | None = None

    def row(self):
        return {"normalization": self.normalization, "smoothing": self.smoothing, "n": self.n,
                "train_loss": self.train_loss, "val_loss": self.val_loss, "error": self.error}


@dataclass
class AblationReport:
    variants: list

    def find(self, **kw):
        return [v for v in self.variants if all(getattr(v, k) == val for k, val in kw.items())]

    def rows(self):
        return [v.row() for v in self.variants]


AXES = ("normalization", "smoothing", "n")


def ablate(spec, config, data, axes=None, val_fraction=0.2):
    """Train one variant per combination of ``axes`` on a shared split and seed.

    ``axes`` maps any of ``normalization``, ``smoothing`` (bools) and ``n``
    (segment counts) to the values to sweep; missing axes keep the spec's
    setting. A failing variant records its error and the sweep continues.
    """
    axes = dict(axes or {})
    unknown = set(axes) - set(AXES)
    if unknown:
        raise DomainError(f"unknown ablation axes {sorted(unknown)}")
    for name, vals in axes.items():
        if len(vals) == 0:
            raise DomainError(f"axis {name!r} has no values")
    base_n = next(int(l["n"]) for l in spec.layers if l["type"] in ("dense", "conv"))
    norms = axes.get("normalization", [spec.normalization])
    smooths = axes.get("smoothing", [spec.T is not None])
    ns = axes.get("n", [base_n])
    tr, va = data.split(val_fraction, config.seed)
    variants = []
    for norm, smooth, n in itertools.product(norms, smooths, ns):
        T = (spec.T or DEFAULT_T) if smooth else None
        vspec = spec.with_segments(int(n)).with_flags(normalization=bool(norm), T=T)
        v = Variant(bool(norm), bool(smooth), int(n))
        try:
            _, rep = train(vspec, config, tr, val=va)
            v.train_loss, v.val_loss, v.report = rep.final_train, rep.final_val, rep
        except (TrainingError, FloatingPointError) as exc:
            v.error = str(exc)
        variants.append(v)
    return AblationReport(variants)
