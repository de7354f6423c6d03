"""Seeded synthetic data: ground-truth segment sets, samples and regression tasks.

Every generator draws from PCG64 streams keyed by ``(seed, purpose)``, so the
truth does not change when, say, the sample count does.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import DomainError
from .heads import node_core
from .plf import MIN_GAP, SegmentSet, potential, sizes_to_endpoints
from .samples import SampleSet

STREAMS = {"endpoints": 1, "slopes": 2, "intercepts": 3, "taus": 4, "noise": 5,
           "inputs": 6, "times": 7, "hidden": 8, "split": 9,
           "init": 10, "shuffle": 11, "coeffs": 12}


def stream(seed, purpose):
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(STREAMS[purpose],))))


@dataclass(frozen=True)
class SynthSpec:
    n_true: int = 2
    slope_range: tuple = (-1.0, 1.0)
    intercept_range: tuple = (-1.0, 1.0)
    min_gap: float = 0.1
    samples: int = 200
    noise: str = "uniform"        # or "gaussian"
    noise_level: float = 0.0      # epsilon (uniform) or sigma (gaussian)
    placement: str = "equispaced"  # or "uniform"
    continuous: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.n_true < 1:
            raise DomainError("n_true must be positive")
        if self.samples < 2:
            raise DomainError("need at least two samples")
        if self.min_gap < MIN_GAP:
            raise DomainError(f"min_gap must be at least {MIN_GAP}")
        if self.noise not in ("uniform", "gaussian"):
            raise DomainError(f"unknown noise model {self.noise!r}")
        if self.placement not in ("equispaced", "uniform"):
            raise DomainError(f"unknown placement {self.placement!r}")
        if not self.noise_level >= 0:
            raise DomainError("noise_level must be non-negative")
        if not all(np.all(np.isfinite(r)) for r in (self.slope_range, self.intercept_range)):
            raise DomainError("ranges must be finite")

    def to_dict(self):
        return asdict(self)


def random_segment_set(spec):
    """Ground truth with every interval at least ``spec.min_gap`` long.

    With ``continuous=True`` the intercepts after the first are chosen so that
    neighbouring lines meet at their shared endpoint.
    """
    n = spec.n_true
    slack = 1.0 - n * spec.min_gap
    if slack < 0:
        raise DomainError(f"{n} segments of length >= {spec.min_gap} do not fit in [0, 1]")
    sizes = spec.min_gap + slack * stream(spec.seed, "endpoints").dirichlet(np.ones(n))
    t = sizes_to_endpoints(sizes / sizes.sum())
    m = stream(spec.seed, "slopes").uniform(*spec.slope_range, size=n)
    b = stream(spec.seed, "intercepts").uniform(*spec.intercept_range, size=n)
    if spec.continuous:
        for i in range(1, n):
            b[i] = b[i - 1] + (m[i - 1] - m[i]) * t[i]
    return SegmentSet(m, b, t)


def sample_taus(spec):
    if spec.placement == "equispaced":
        return np.linspace(0.0, 1.0, spec.samples)
    inner = np.sort(stream(spec.seed, "taus").uniform(0.0, 1.0, size=spec.samples - 2))
    return np.concatenate([[0.0], inner, [1.0]])


def sample_from(theta, spec):
    """Noisy samples of ``theta``; ``noise_bound`` bounds the realized noise."""
    taus = sample_taus(spec)
    rng = stream(spec.seed, "noise")
    eps = spec.noise_level
    if spec.noise == "uniform":
        psi = rng.uniform(-eps, eps, size=taus.size) if eps > 0 else np.zeros(taus.size)
        bound = eps
    else:
        psi = rng.normal(0.0, eps, size=taus.size) if eps > 0 else np.zeros(taus.size)
        bound = float(np.max(np.abs(psi)))
    vs = potential(theta.m, theta.b, theta.t, taus) + psi
    return SampleSet(taus, vs, bound)


# ---------------------------------------------------------------------------
# (x, tau, y) regression tasks
# ---------------------------------------------------------------------------

@dataclass
class Dataset:
    X: np.ndarray
    tau: np.ndarray
    y: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.tau = np.asarray(self.tau, dtype=float).reshape(-1)
        self.y = np.asarray(self.y, dtype=float)
        if self.y.ndim == 1:
            self.y = self.y[:, None]
        if not (len(self.X) == len(self.tau) == len(self.y)):
            raise DomainError("X, tau and y must have the same length")
        if len(self.X) == 0:
            raise DomainError("empty dataset")
        if np.any(self.tau < 0) or np.any(self.tau > 1):
            raise DomainError("taus must lie in [0, 1]")

    def __len__(self):
        return len(self.X)

    def subset(self, idx):
        return Dataset(self.X[idx], self.tau[idx], self.y[idx], dict(self.meta))

    def split(self, val_fraction=0.2, seed=0):
        perm = stream(seed, "split").permutation(len(self))
        cut = len(self) - int(round(val_fraction * len(self)))
        return self.subset(np.sort(perm[:cut])), self.subset(np.sort(perm[cut:]))


TASKS = ("constant", "sine-in-tau", "pwl-field")


@dataclass(frozen=True)
class TaskSizes:
    samples: int = 2000
    k: int = 4
    hidden_n: int = 3
    times: str = "uniform"   # random taus, or "grid": ten evenly spaced timestamps
    constant: float = 0.5
    frequency: float = 1.0
    scale: float = 1.5


def make_regression_task(task, sizes=TaskSizes(), seed=0):
    """Dataset of ``(x, tau, y)`` for one of ``TASKS``.

    ``pwl-field`` draws a hidden dense node with ``hidden_n`` segments and sets
    ``y`` to its unsmoothed, unnormalized potential at ``tau``.
    """
    if task not in TASKS:
        raise DomainError(f"unknown task {task!r}; choose from {', '.join(TASKS)}")
    N, k = sizes.samples, sizes.k
    X = stream(seed, "inputs").normal(size=(N, k))
    trng = stream(seed, "times")
    if sizes.times == "grid":
        tau = trng.integers(0, 10, size=N) / 9.0
    elif sizes.times == "uniform":
        tau = trng.uniform(0.0, 1.0, size=N)
    else:
        raise DomainError(f"unknown time placement {sizes.times!r}")
    hidden = stream(seed, "hidden")
    meta = {"task": task, "seed": seed, **asdict(sizes)}
    if task == "constant":
        y = np.full(N, sizes.constant)
    elif task == "sine-in-tau":
        a, p = hidden.normal(size=k) / np.sqrt(k), hidden.normal(size=k) / np.sqrt(k)
        y = (X @ a) * np.sin(2 * np.pi * sizes.frequency * tau + X @ p)
    else:
        n = sizes.hidden_n
        W = [hidden.normal(size=(1, n, k)) * sizes.scale / np.sqrt(k) for _ in range(3)]
        zm, zb, zs = (np.einsum("jnk,bk->bjn", w, X) for w in W)
        y, _ = node_core(zm, zb, zs, 0.0, tau[:, None], None, normalize=False)
        y = y[:, 0]
        meta["hidden_weights"] = [w[0].tolist() for w in W]
    return Dataset(X, tau, y, meta)
