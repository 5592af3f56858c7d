"""Equal-width ordinal binning of real-valued series.

A quantizer maps reals to bin indices (left-closed bins, the last bin
closed on both sides) and turns a categorical over bins back into a
piecewise-uniform density over ``[lo, hi]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "OrdinalQuantizer",
    "OrdinalSequence",
    "extend_range",
    "max_abs_diff",
    "build_quantizer",
    "encode",
    "decode_density",
]

PROB_TOL = 1e-9


def extend_range(observed_min, observed_max, delta_max, horizon):
    """Widen ``[observed_min, observed_max]`` by ``horizon * delta_max`` on each side."""
    if delta_max < 0 or not np.isfinite(delta_max):
        raise ValueError(f"delta_max must be finite and non-negative, got {delta_max}")
    if horizon <= 0:
        raise ValueError(f"horizon must be positive, got {horizon}")
    if observed_max < observed_min:
        raise ValueError("observed_max < observed_min")
    slack = horizon * delta_max
    return observed_min - slack, observed_max + slack


@dataclass(frozen=True)
class OrdinalQuantizer:
    m: int
    lo: float
    hi: float
    edges: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if int(self.m) != self.m or self.m < 1:
            raise ValueError(f"bin count must be a positive integer, got {self.m}")
        if not (np.isfinite(self.lo) and np.isfinite(self.hi)) or not self.hi > self.lo:
            raise ValueError(f"need finite lo < hi, got [{self.lo}, {self.hi}]")
        object.__setattr__(self, "m", int(self.m))
        object.__setattr__(self, "lo", float(self.lo))
        object.__setattr__(self, "hi", float(self.hi))
        edges = np.linspace(self.lo, self.hi, self.m + 1)
        edges.setflags(write=False)
        object.__setattr__(self, "edges", edges)

    @property
    def width(self) -> float:
        return (self.hi - self.lo) / self.m

    @property
    def midpoints(self) -> np.ndarray:
        return 0.5 * (self.edges[:-1] + self.edges[1:])

    def decode_midpoint(self, k):
        return self.midpoints[k]

    def encode(self, values):
        """Bin index of each value; out-of-range values clamp to the end bins."""
        v = np.asarray(values, dtype=float)
        if not np.all(np.isfinite(v)):
            raise ValueError("cannot encode non-finite values")
        k = np.searchsorted(self.edges, v, side="right") - 1
        k = np.clip(k, 0, self.m - 1)
        return int(k) if k.ndim == 0 else k

    def cdf(self, probs, x):
        """CDF of the piecewise-uniform density defined by ``probs`` at ``x``."""
        probs = np.asarray(probs, dtype=float)
        cum = np.concatenate([[0.0], np.cumsum(probs)])
        pos = np.clip((np.asarray(x, dtype=float) - self.lo) / self.width, 0.0, self.m)
        k = np.minimum(np.floor(pos).astype(int), self.m - 1)
        return cum[k] + probs[k] * (pos - k)

    def to_dict(self):
        return {"m": self.m, "lo": self.lo, "hi": self.hi}

    @classmethod
    def from_dict(cls, d):
        return cls(int(d["m"]), float(d["lo"]), float(d["hi"]))


@dataclass(frozen=True)
class OrdinalSequence:
    """Bin indices together with the quantizer that produced them."""

    indices: np.ndarray
    quantizer: OrdinalQuantizer

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64).reshape(-1)
        if idx.size and (idx.min() < 0 or idx.max() >= self.quantizer.m):
            raise ValueError(f"bin index out of range for m={self.quantizer.m}")
        idx.setflags(write=False)
        object.__setattr__(self, "indices", idx)

    def __len__(self):
        return len(self.indices)

    @classmethod
    def from_values(cls, values, quantizer):
        return cls(quantizer.encode(np.asarray(values, dtype=float).reshape(-1)), quantizer)


def max_abs_diff(values) -> float:
    v = np.asarray(values, dtype=float)
    return float(np.max(np.abs(np.diff(v)))) if v.size > 1 else 0.0


def build_quantizer(series, m, horizon=0, extend=False) -> OrdinalQuantizer:
    """Fit an ``m``-bin quantizer to the observed range of ``series``.

    With ``extend`` the range is widened by ``horizon`` times the largest
    absolute first difference. A constant series under extension uses a
    slack of ``1e-6 * max(1, |value|)`` per step instead of zero.
    """
    v = np.asarray(getattr(series, "values", series), dtype=float).reshape(-1)
    if v.size < 2:
        raise ValueError("need at least 2 observations to build a quantizer")
    if not np.all(np.isfinite(v)):
        raise ValueError("series contains non-finite values")
    lo, hi = float(v.min()), float(v.max())
    if extend:
        if horizon <= 0:
            raise ValueError("range extension needs a positive horizon")
        delta = max_abs_diff(v)
        delta = max(delta, 1e-6 * max(1.0, abs(lo), abs(hi)))
        lo, hi = extend_range(lo, hi, delta, horizon)
    elif hi == lo:
        raise ValueError("constant series has a zero-width range; enable extension")
    return OrdinalQuantizer(m, lo, hi)


def encode(q: OrdinalQuantizer, value):
    return q.encode(value)


def _check_probs(probs, m):
    probs = np.asarray(probs, dtype=float)
    if probs.shape[-1] != m:
        raise ValueError(f"expected {m} bin probabilities, got {probs.shape[-1]}")
    if np.any(probs < 0) or np.any(np.abs(probs.sum(axis=-1) - 1.0) > PROB_TOL):
        raise ValueError("bin probabilities must be non-negative and sum to 1")
    return probs


def decode_density(q: OrdinalQuantizer, probs, x):
    """Piecewise-uniform density at ``x``; zero outside ``[lo, hi]``.

    The upper edge ``hi`` belongs to the last bin, matching :meth:`encode`.
    A 2-D ``probs`` is read row-wise against a matching vector ``x``.
    """
    probs = _check_probs(probs, q.m)
    x = np.asarray(x, dtype=float)
    inside = (x >= q.lo) & (x <= q.hi)
    k = q.encode(np.where(inside, x, q.lo))
    if probs.ndim == 2:
        mass = probs[np.arange(probs.shape[0]), k]
    else:
        mass = probs[k]
    dens = np.where(inside, mass / q.width, 0.0)
    return float(dens) if dens.ndim == 0 else dens
