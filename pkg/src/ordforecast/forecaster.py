"""MC-dropout forecasting with a trained encoder-decoder.

Each trajectory draws one set of dropout masks, encodes the context and
then feeds its own sampled bin back into the decoder for ``horizon``
steps. The predictive distribution at each step is the average of the
per-trajectory softmax rows.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .quantizer import OrdinalQuantizer, OrdinalSequence, build_quantizer
from .seq2seq import (
    DropoutMasks,
    Seq2SeqModel,
    TrainingConfig,
    decoder_step,
    encoder_forward,
    evaluate_loss,
    train,
)

__all__ = [
    "ForecastDistribution",
    "sample_trajectory",
    "forecast",
    "predictive_mean",
    "predictive_quantile",
    "finetune",
    "hyperparameter_grid",
    "DEFAULT_GRID",
]

DEFAULT_GRID = {
    "n_h": (64, 128, 256, 512),
    "dropout_rate": (0.25, 0.5),
    "l2_lambda": (1e-5, 1e-6, 1e-7, 1e-8),
}


@dataclass
class ForecastDistribution:
    """Per-step bin probabilities ``probs`` (horizon x m) and sampled ``trajectories``."""

    probs: np.ndarray
    trajectories: np.ndarray
    quantizer: OrdinalQuantizer

    def __post_init__(self):
        self.probs = np.atleast_2d(np.asarray(self.probs, dtype=float))
        self.trajectories = np.atleast_2d(np.asarray(self.trajectories, dtype=np.int64))
        if self.probs.shape[1] != self.quantizer.m:
            raise ValueError("probability rows must cover every bin")
        if np.any(np.abs(self.probs.sum(axis=1) - 1.0) > 1e-6) or np.any(self.probs < 0):
            raise ValueError("per-step rows must be probability vectors")
        if self.trajectories.size and self.trajectories.shape[1] != self.probs.shape[0]:
            raise ValueError("trajectory length differs from horizon")

    @property
    def horizon(self) -> int:
        return self.probs.shape[0]

    def mean(self):
        return self.probs @ self.quantizer.midpoints

    def quantile(self, q):
        """Inverse CDF of each step's piecewise-uniform density.

        ``q`` may be a scalar or an array of levels; the result has shape
        ``(horizon,)`` or ``(horizon, len(q))``.
        """
        qs = np.atleast_1d(np.asarray(q, dtype=float))
        if np.any((qs <= 0) | (qs >= 1)):
            raise ValueError("quantile levels must lie strictly inside (0, 1)")
        qz = self.quantizer
        cum = np.cumsum(self.probs, axis=1)
        out = np.empty((self.horizon, qs.size))
        for t in range(self.horizon):
            k = np.searchsorted(cum[t], qs, side="left")
            k = np.minimum(k, qz.m - 1)
            mass = self.probs[t, k]
            safe = np.where(mass > 0, mass, 1.0)
            frac = np.where(mass > 0, (qs - (cum[t, k] - mass)) / safe, 0.0)
            out[t] = qz.edges[k] + np.clip(frac, 0.0, 1.0) * qz.width
        return out[:, 0] if np.ndim(q) == 0 else out

    def density(self, truth):
        """Density at each step's truth; truths outside the support use the end bins."""
        qz = self.quantizer
        k = qz.encode(np.asarray(truth, dtype=float))
        return self.probs[np.arange(self.horizon), k] / qz.width

    def cdf(self, truth):
        return np.array([self.quantizer.cdf(self.probs[t], x) for t, x in enumerate(np.asarray(truth, dtype=float))])


def predictive_mean(fd):
    return fd.mean()


def predictive_quantile(fd, t, q):
    if not 0.0 < q < 1.0:
        raise ValueError("q must lie strictly inside (0, 1)")
    return float(fd.quantile(q)[t])


def _as_sequence(model, context):
    if isinstance(context, OrdinalSequence):
        if context.quantizer.m != model.m:
            raise ValueError("context quantizer bin count differs from the model")
        return context
    if model.quantizer is None:
        raise ValueError("raw context indices need a model with a quantizer")
    return OrdinalSequence(context, model.quantizer)


def _run_trajectories(model, idx, horizon, streams, dropout_rate, feedback):
    """Batched free-running decode; every trajectory consumes only its own stream."""
    n = len(streams)
    m, n_h = model.m, model.n_h
    keep = 1.0 - dropout_rate
    if dropout_rate > 0:
        raw = np.stack([s.random(2 * m + n_h) for s in streams]) < keep
        masks = DropoutMasks(raw[:, :m] / keep, raw[:, m:2 * m] / keep, raw[:, 2 * m:] / keep)
    else:
        masks = None
    uniforms = np.stack([s.random(horizon) for s in streams])

    ctx = np.broadcast_to(idx, (n, idx.size))
    h, c = encoder_forward(model, ctx, None if masks is None else masks.enc_in)
    eye = np.eye(m)
    prev = np.full(n, idx[-1])
    rows = np.empty((n, horizon, m))
    traj = np.empty((n, horizon), dtype=np.int64)
    for t in range(horizon):
        h, c, p = decoder_step(model, h, c, eye[prev],
                               None if masks is None else masks.dec_in,
                               None if masks is None else masks.dec_out)
        rows[:, t] = p
        if feedback == "argmax":
            nxt = np.argmax(p, axis=1)
        else:
            cum = np.cumsum(p, axis=1)
            nxt = np.minimum((cum < (uniforms[:, t:t + 1] * cum[:, -1:])).sum(axis=1), m - 1)
        traj[:, t] = nxt
        prev = nxt
    return traj, rows


def sample_trajectory(model: Seq2SeqModel, context, horizon, rng_seed=None,
                      dropout_rate=None, feedback="sample"):
    """One MC-dropout trajectory: ``(bin indices, per-step probability rows)``."""
    if horizon < 1:
        raise ValueError("horizon must be positive")
    seq = _as_sequence(model, context)
    if len(seq) == 0:
        raise ValueError("context must be non-empty")
    rate = model.config.dropout_rate if dropout_rate is None else dropout_rate
    traj, rows = _run_trajectories(model, seq.indices, horizon,
                                   [np.random.default_rng(rng_seed)], rate, feedback)
    return traj[0], rows[0]


def forecast(model: Seq2SeqModel, context, horizon, n_samples=100, seed=0,
             dropout_rate=None, feedback="sample", chunk=256) -> ForecastDistribution:
    """Aggregate ``n_samples`` MC-dropout trajectories into a predictive distribution.

    Trajectory ``i`` uses the ``i``-th child of ``SeedSequence(seed)``, so
    results do not depend on ``chunk``. Model parameters are checked to be
    unchanged afterwards.
    """
    if n_samples < 1 or horizon < 1:
        raise ValueError("n_samples and horizon must be positive")
    seq = _as_sequence(model, context)
    if len(seq) == 0:
        raise ValueError("context must be non-empty")
    rate = model.config.dropout_rate if dropout_rate is None else dropout_rate
    before = model.checksum()
    children = np.random.SeedSequence(seed).spawn(n_samples)
    trajs, total = [], np.zeros((horizon, model.m))
    for s in range(0, n_samples, chunk):
        streams = [np.random.default_rng(cs) for cs in children[s:s + chunk]]
        traj, rows = _run_trajectories(model, seq.indices, horizon, streams, rate, feedback)
        trajs.append(traj)
        total += rows.sum(axis=0)
    if model.checksum() != before:
        raise RuntimeError("model parameters changed during forecasting")
    probs = total / n_samples
    probs /= probs.sum(axis=1, keepdims=True)
    return ForecastDistribution(probs, np.concatenate(trajs), seq.quantizer)


def hyperparameter_grid(n_h=DEFAULT_GRID["n_h"], dropout_rate=DEFAULT_GRID["dropout_rate"],
                        l2_lambda=DEFAULT_GRID["l2_lambda"]):
    """All ``(n_h, dropout_rate, l2_lambda)`` combinations, n_h varying slowest."""
    return [dict(n_h=a, dropout_rate=b, l2_lambda=c)
            for a in n_h for b in dropout_rate for c in l2_lambda]


def finetune(pretrained: Seq2SeqModel, target, cfg: TrainingConfig, horizon=None,
             stride=1, val_fraction=0.2, extend=True):
    """Continue training ``pretrained`` on one target series.

    The series is re-quantized over its own (extended) range with the
    pretrained bin count, windowed with ``cfg.encoder_len`` / ``cfg.decoder_len``
    and split chronologically.

    Returns
    -------
    (Seq2SeqModel, dict)
        Fine-tuned model carrying the target quantizer, and the training history.
    """
    from .harness.data import make_windows, split_windows

    if cfg.n_h != pretrained.n_h:
        raise ValueError(f"cfg.n_h={cfg.n_h} does not match the pretrained width {pretrained.n_h}")
    values = np.asarray(getattr(target, "values", target), dtype=float)
    q = build_quantizer(values, pretrained.m, horizon or cfg.decoder_len, extend=extend)
    pairs = make_windows(values, cfg.encoder_len, cfg.decoder_len, stride)
    tr, va = split_windows(pairs, val_fraction)
    if not tr or not va:
        raise ValueError("target series too short for a training and a validation window")
    enc = lambda v: q.encode(v)
    tr = [(enc(a), enc(b)) for a, b in tr]
    va = [(enc(a), enc(b)) for a, b in va]
    start = pretrained.with_quantizer(q)
    model, hist = train(start, tr, cfg, va)
    hist["pretrained_val_loss"] = evaluate_loss(start, va)
    return model, hist
