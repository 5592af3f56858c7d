"""Synthetic series families used in place of the external corpora."""

from __future__ import annotations

import numpy as np

from .harness.data import TimeSeries

FAMILIES = ("sine", "sawtooth", "ar2", "trend_seasonal")


def sine(n, rng):
    period = rng.uniform(8, 30)
    phase = rng.uniform(0, 2 * np.pi)
    amp = rng.uniform(0.5, 5.0)
    t = np.arange(n)
    noise = rng.uniform(0.1, 0.4) * amp
    return amp * np.sin(2 * np.pi * t / period + phase) + rng.normal(0, noise, n) + rng.normal(0, 3)


def sawtooth(n, rng):
    period = rng.uniform(8, 30)
    amp = rng.uniform(0.5, 5.0)
    t = np.arange(n) + rng.uniform(0, period)
    noise = rng.uniform(0.05, 0.3) * amp
    return amp * ((t / period) % 1.0) + rng.normal(0, noise, n) + rng.normal(0, 3)


def ar2(n, rng, burn=200):
    # stationary pair of complex roots with modulus r gives a damped oscillation
    r = rng.uniform(0.8, 0.97)
    theta = rng.uniform(0.2, 1.2)
    a1, a2 = 2 * r * np.cos(theta), -r * r
    x = np.zeros(n + burn)
    eps = rng.normal(0, 1, n + burn)
    for t in range(2, n + burn):
        x[t] = a1 * x[t - 1] + a2 * x[t - 2] + eps[t]
    return x[burn:] * rng.uniform(0.2, 2.0) + rng.normal(0, 3)


def trend_seasonal(n, rng):
    period = rng.choice([7, 12, 24])
    t = np.arange(n)
    slope = rng.uniform(-0.02, 0.02)
    amp = rng.uniform(0.5, 3.0)
    season = amp * np.sin(2 * np.pi * t / period + rng.uniform(0, 2 * np.pi))
    return slope * t + season + rng.normal(0, rng.uniform(0.2, 0.6) * amp, n) + rng.normal(0, 3)


GENERATORS = {"sine": sine, "sawtooth": sawtooth, "ar2": ar2, "trend_seasonal": trend_seasonal}


def generate(family, n, seed, name=None) -> TimeSeries:
    rng = np.random.default_rng(seed)
    return TimeSeries(name or f"{family}-{seed}", GENERATORS[family](n, rng))


def corpus(n_series, n, seed, families=FAMILIES, prefix="syn"):
    """``n_series`` series cycling through ``families``, each with its own child seed."""
    seeds = np.random.SeedSequence(seed).spawn(n_series)
    out = []
    for i, ss in enumerate(seeds):
        fam = families[i % len(families)]
        rng = np.random.default_rng(ss)
        out.append(TimeSeries(f"{prefix}{i:03d}-{fam}", GENERATORS[fam](n, rng)))
    return out
