"""Noisy point samples ``(tau_j, v_j)`` on ``[0, 1]`` and their CSV form."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .errors import DomainError


@dataclass(frozen=True)
class SampleSet:
    """Samples with strictly increasing taus spanning exactly ``[0, 1]``.

    Build from raw data with :meth:`canonical`, which sorts and rescales.
    """

    taus: np.ndarray
    vs: np.ndarray
    noise_bound: float | None = None

    def __post_init__(self):
        taus = np.array(self.taus, dtype=float).reshape(-1)
        vs = np.array(self.vs, dtype=float).reshape(-1)
        if taus.size != vs.size:
            raise DomainError(f"{taus.size} taus but {vs.size} values")
        if taus.size < 2:
            raise DomainError("need at least two samples")
        if not (np.all(np.isfinite(taus)) and np.all(np.isfinite(vs))):
            raise DomainError("non-finite sample")
        if np.any(np.diff(taus) <= 0):
            raise DomainError("taus must be strictly increasing (ties are rejected)")
        if taus[0] != 0.0 or taus[-1] != 1.0:
            raise DomainError("taus must span [0, 1] exactly; use SampleSet.canonical to rescale")
        if self.noise_bound is not None and not self.noise_bound >= 0:
            raise DomainError("noise_bound must be non-negative")
        taus.setflags(write=False)
        vs.setflags(write=False)
        object.__setattr__(self, "taus", taus)
        object.__setattr__(self, "vs", vs)

    def __len__(self):
        return self.taus.size

    @classmethod
    def canonical(cls, taus, vs, noise_bound=None):
        """Sort by tau, reject ties and rescale taus affinely onto ``[0, 1]``."""
        taus = np.asarray(taus, dtype=float).reshape(-1)
        vs = np.asarray(vs, dtype=float).reshape(-1)
        if taus.size != vs.size:
            raise DomainError(f"{taus.size} taus but {vs.size} values")
        order = np.argsort(taus, kind="stable")
        taus, vs = taus[order], vs[order]
        if taus.size < 2 or np.any(np.diff(taus) == 0):
            raise DomainError("taus must be distinct (ties are rejected)")
        lo, hi = taus[0], taus[-1]
        return cls((taus - lo) / (hi - lo), vs, noise_bound)

    def to_csv(self):
        buf = io.StringIO()
        buf.write("tau,v\n")
        for tau, v in zip(self.taus, self.vs):
            buf.write(f"{float(tau)!r},{float(v)!r}\n")
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text):
        """Parse ``tau,v`` CSV; errors name the offending line."""
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or [c.strip() for c in rows[0]] != ["tau", "v"]:
            raise DomainError("line 1: expected header 'tau,v'")
        taus, vs = [], []
        for lineno, row in enumerate(rows[1:], start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 2:
                raise DomainError(f"line {lineno}: expected 2 fields, got {len(row)}")
            try:
                tau, v = float(row[0]), float(row[1])
            except ValueError:
                raise DomainError(f"line {lineno}: not a number: {','.join(row)!r}") from None
            if not (np.isfinite(tau) and np.isfinite(v)):
                raise DomainError(f"line {lineno}: non-finite value")
            taus.append(tau)
            vs.append(v)
        return cls.canonical(taus, vs)
