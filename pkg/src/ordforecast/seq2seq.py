"""LSTM encoder-decoder over one-hot bin symbols, written directly in numpy.

The encoder scans a context of bin indices and hands its final ``(h, c)``
to the decoder, which emits a softmax over bins at every step. Training
minimises mean categorical cross-entropy under teacher forcing plus an L2
penalty on the weight matrices, using hand-written backpropagation
through time and Adam.

Gate order inside every ``4 * n_h`` block is input, forget, cell, output.
"""

from __future__ import annotations

import copy
import hashlib
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import NumericalError
from .quantizer import OrdinalQuantizer, OrdinalSequence

__all__ = [
    "TrainingConfig",
    "LstmLayerParams",
    "Seq2SeqModel",
    "DropoutMasks",
    "DivergenceError",
    "init_model",
    "lstm_cell_forward",
    "encoder_forward",
    "decoder_step",
    "sample_masks",
    "loss_and_grad",
    "stack_windows",
    "evaluate_loss",
    "train",
]

log = logging.getLogger(__name__)

TENSOR_NAMES = ("enc_Wx", "enc_Wh", "enc_b", "dec_Wx", "dec_Wh", "dec_b", "out_W", "out_b")
WEIGHT_NAMES = ("enc_Wx", "enc_Wh", "dec_Wx", "dec_Wh", "out_W")


class DivergenceError(NumericalError):
    """Raised when activations or the training loss stop being finite."""


@dataclass
class TrainingConfig:
    n_h: int = 64
    dropout_rate: float = 0.25
    l2_lambda: float = 1e-6
    max_epochs: int = 50
    patience: int = 5
    learning_rate: float = 1e-3
    batch_size: int = 32
    encoder_len: int = 50
    decoder_len: int = 25
    seed: int = 0
    clip_norm: float = 5.0

    def __post_init__(self):
        if self.n_h < 1 or self.batch_size < 1 or self.encoder_len < 1 or self.decoder_len < 1:
            raise ValueError("n_h, batch_size, encoder_len and decoder_len must be positive")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"dropout_rate must lie in [0, 1), got {self.dropout_rate}")
        if self.l2_lambda < 0 or self.max_epochs < 0 or self.patience < 1:
            raise ValueError("l2_lambda, max_epochs must be >= 0 and patience >= 1")
        if self.learning_rate <= 0 or self.clip_norm <= 0:
            raise ValueError("learning_rate and clip_norm must be positive")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class LstmLayerParams:
    Wx: np.ndarray
    Wh: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        n_h = self.Wh.shape[0]
        if self.Wh.shape != (n_h, 4 * n_h) or self.Wx.shape[1] != 4 * n_h or self.b.shape != (4 * n_h,):
            raise ValueError(
                f"inconsistent LSTM shapes Wx{self.Wx.shape} Wh{self.Wh.shape} b{self.b.shape}"
            )

    @property
    def n_h(self) -> int:
        return self.Wh.shape[0]

    @property
    def n_in(self) -> int:
        return self.Wx.shape[0]


@dataclass
class Seq2SeqModel:
    encoder: LstmLayerParams
    decoder: LstmLayerParams
    out_W: np.ndarray
    out_b: np.ndarray
    quantizer: OrdinalQuantizer | None = None
    config: TrainingConfig = field(default_factory=TrainingConfig)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.encoder.n_h != self.decoder.n_h:
            raise ValueError("encoder and decoder must share n_h")
        if self.out_W.shape != (self.n_h, self.m) or self.out_b.shape != (self.m,):
            raise ValueError("output projection must map n_h to m bins")
        if self.encoder.n_in != self.m or self.decoder.n_in != self.m:
            raise ValueError("encoder/decoder inputs must be one-hot over m bins")
        if self.quantizer is not None and self.quantizer.m != self.m:
            raise ValueError("quantizer bin count differs from model output width")

    @property
    def m(self) -> int:
        return self.out_W.shape[1]

    @property
    def n_h(self) -> int:
        return self.encoder.n_h

    def tensors(self) -> dict:
        return {
            "enc_Wx": self.encoder.Wx, "enc_Wh": self.encoder.Wh, "enc_b": self.encoder.b,
            "dec_Wx": self.decoder.Wx, "dec_Wh": self.decoder.Wh, "dec_b": self.decoder.b,
            "out_W": self.out_W, "out_b": self.out_b,
        }

    @classmethod
    def from_tensors(cls, t, quantizer=None, config=None, meta=None):
        return cls(
            LstmLayerParams(t["enc_Wx"], t["enc_Wh"], t["enc_b"]),
            LstmLayerParams(t["dec_Wx"], t["dec_Wh"], t["dec_b"]),
            t["out_W"], t["out_b"], quantizer,
            config if config is not None else TrainingConfig(n_h=t["enc_Wh"].shape[0]),
            dict(meta or {}),
        )

    def copy(self) -> "Seq2SeqModel":
        return copy.deepcopy(self)

    def with_quantizer(self, quantizer) -> "Seq2SeqModel":
        new = self.copy()
        new.quantizer = quantizer
        new.__post_init__()
        return new

    def checksum(self) -> str:
        h = hashlib.sha256()
        for name in TENSOR_NAMES:
            h.update(np.ascontiguousarray(self.tensors()[name], dtype=np.float64).tobytes())
        return h.hexdigest()

    def squared_weight_norm(self) -> float:
        t = self.tensors()
        return float(sum(np.sum(t[k] ** 2) for k in WEIGHT_NAMES))


def _init_layer(rng, n_in, n_h):
    s = 1.0 / np.sqrt(n_h)
    b = np.zeros(4 * n_h)
    b[n_h:2 * n_h] = 1.0
    return LstmLayerParams(
        rng.uniform(-s, s, size=(n_in, 4 * n_h)),
        rng.uniform(-s, s, size=(n_h, 4 * n_h)),
        b,
    )


def init_model(m, cfg: TrainingConfig | None = None, quantizer=None, seed=None) -> Seq2SeqModel:
    """Fresh model with uniform(-1/sqrt(n_h), 1/sqrt(n_h)) weights and forget bias 1."""
    cfg = cfg or TrainingConfig()
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    enc = _init_layer(rng, m, cfg.n_h)
    dec = _init_layer(rng, m, cfg.n_h)
    s = 1.0 / np.sqrt(cfg.n_h)
    out_W = rng.uniform(-s, s, size=(cfg.n_h, m))
    return Seq2SeqModel(enc, dec, out_W, np.zeros(m), quantizer, cfg)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _gates(z, n_h):
    i = _sigmoid(z[..., :n_h])
    f = _sigmoid(z[..., n_h:2 * n_h])
    g = np.tanh(z[..., 2 * n_h:3 * n_h])
    o = _sigmoid(z[..., 3 * n_h:])
    return i, f, g, o


def lstm_cell_forward(x, h, c, p: LstmLayerParams, dropout_mask=None):
    """One LSTM step; ``dropout_mask`` scales the input ``x`` only.

    Works on single vectors or on batches stacked along the first axis.
    """
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != p.n_in or np.shape(h)[-1] != p.n_h or np.shape(c)[-1] != p.n_h:
        raise ValueError(
            f"shape mismatch: x{x.shape} h{np.shape(h)} c{np.shape(c)} for n_in={p.n_in}, n_h={p.n_h}"
        )
    if dropout_mask is not None:
        x = x * dropout_mask
    i, f, g, o = _gates(x @ p.Wx + h @ p.Wh + p.b, p.n_h)
    c_new = f * c + i * g
    h_new = o * np.tanh(c_new)
    if not (np.all(np.isfinite(h_new)) and np.all(np.isfinite(c_new))):
        raise DivergenceError("non-finite LSTM state")
    return h_new, c_new


@dataclass
class DropoutMasks:
    """Per-sequence inverted-dropout masks, shape ``(batch, width)`` each."""

    enc_in: np.ndarray
    dec_in: np.ndarray
    dec_out: np.ndarray


def sample_masks(rng, batch, m, n_h, rate) -> DropoutMasks | None:
    if rate <= 0:
        return None
    keep = 1.0 - rate

    def draw(width):
        return (rng.random((batch, width)) < keep) / keep

    return DropoutMasks(draw(m), draw(m), draw(n_h))


def _context_indices(context):
    if isinstance(context, OrdinalSequence):
        return context.indices
    return np.asarray(context, dtype=np.int64)


def encoder_forward(model: Seq2SeqModel, context, mask=None):
    """Final ``(h, c)`` of the encoder after scanning ``context`` from a zero state.

    ``context`` is a bin-index sequence (1-D) or a batch of equal-length
    sequences (2-D); ``mask`` is an optional input-dropout mask.
    """
    idx = _context_indices(context)
    if idx.shape[-1] == 0:
        raise ValueError("encoder context must be non-empty")
    if idx.min() < 0 or idx.max() >= model.m:
        raise ValueError(f"context indices out of range for m={model.m}")
    eye = np.eye(model.m)
    lead = idx.shape[:-1]
    h = np.zeros(lead + (model.n_h,))
    c = np.zeros(lead + (model.n_h,))
    for t in range(idx.shape[-1]):
        h, c = lstm_cell_forward(eye[idx[..., t]], h, c, model.encoder, mask)
    return h, c


def decoder_step(model: Seq2SeqModel, h, c, x_prev, in_mask=None, out_mask=None):
    """One decoder step from one-hot ``x_prev``; returns ``(h', c', probs)``."""
    h, c = lstm_cell_forward(x_prev, h, c, model.decoder, in_mask)
    hd = h if out_mask is None else h * out_mask
    logits = hd @ model.out_W + model.out_b
    if not np.all(np.isfinite(logits)):
        raise DivergenceError("non-finite decoder logits")
    return h, c, _softmax(logits)


def _lstm_sequence_forward(X, h, c, p: LstmLayerParams):
    """Run over ``X`` of shape ``(B, T, n_in)``; keep what backprop needs."""
    B, T, _ = X.shape
    n = p.n_h
    hs = np.empty((B, T + 1, n))
    cs = np.empty((B, T + 1, n))
    acts = np.empty((B, T, 4 * n))
    hs[:, 0], cs[:, 0] = h, c
    xw = X @ p.Wx + p.b
    for t in range(T):
        z = xw[:, t] + hs[:, t] @ p.Wh
        i, f, g, o = _gates(z, n)
        cs[:, t + 1] = f * cs[:, t] + i * g
        hs[:, t + 1] = o * np.tanh(cs[:, t + 1])
        acts[:, t, :n], acts[:, t, n:2 * n], acts[:, t, 2 * n:3 * n], acts[:, t, 3 * n:] = i, f, g, o
    return hs, cs, acts


def _lstm_sequence_backward(X, hs, cs, acts, dH, dh_last, dc_last, p: LstmLayerParams):
    """Gradients of a sequence run; ``dH`` is the loss gradient w.r.t. each output h."""
    B, T, _ = X.shape
    n = p.n_h
    dZ = np.empty((B, T, 4 * n))
    dh_next, dc_next = dh_last, dc_last
    for t in range(T - 1, -1, -1):
        i, f, g, o = acts[:, t, :n], acts[:, t, n:2 * n], acts[:, t, 2 * n:3 * n], acts[:, t, 3 * n:]
        dh = dH[:, t] + dh_next
        tc = np.tanh(cs[:, t + 1])
        dc = dc_next + dh * o * (1.0 - tc * tc)
        dZ[:, t, :n] = dc * g * i * (1.0 - i)
        dZ[:, t, n:2 * n] = dc * cs[:, t] * f * (1.0 - f)
        dZ[:, t, 2 * n:3 * n] = dc * i * (1.0 - g * g)
        dZ[:, t, 3 * n:] = dh * tc * o * (1.0 - o)
        dc_next = dc * f
        dh_next = dZ[:, t] @ p.Wh.T
    flatZ = dZ.reshape(B * T, 4 * n)
    dWx = X.reshape(B * T, -1).T @ flatZ
    dWh = hs[:, :-1].reshape(B * T, n).T @ flatZ
    db = flatZ.sum(axis=0)
    return dWx, dWh, db, dh_next, dc_next


def loss_and_grad(model: Seq2SeqModel, contexts, dec_inputs, targets, masks=None,
                  l2_lambda=0.0, need_grad=True):
    """Teacher-forced loss on a batch and, optionally, its exact gradient.

    Parameters
    ----------
    contexts : int array (B, P)
        Encoder bin indices.
    dec_inputs, targets : int arrays (B, L)
        Decoder inputs (previous true symbol) and the symbols to predict.
    masks : DropoutMasks, optional
    l2_lambda : float
        Coefficient on the summed squared weight matrices.

    Returns
    -------
    loss, cross_entropy, grads
        ``grads`` maps tensor names to arrays (``None`` if not requested).
    """
    m, n = model.m, model.n_h
    contexts = np.asarray(contexts)
    dec_inputs = np.asarray(dec_inputs)
    targets = np.asarray(targets)
    B, L = targets.shape
    eye = np.eye(m)
    Xe = eye[contexts]
    Xd = eye[dec_inputs]
    if masks is not None:
        Xe = Xe * masks.enc_in[:, None, :]
        Xd = Xd * masks.dec_in[:, None, :]
    zeros = np.zeros((B, n))
    hs_e, cs_e, acts_e = _lstm_sequence_forward(Xe, zeros, zeros, model.encoder)
    hs_d, cs_d, acts_d = _lstm_sequence_forward(Xd, hs_e[:, -1], cs_e[:, -1], model.decoder)
    H = hs_d[:, 1:]
    if masks is not None:
        H = H * masks.dec_out[:, None, :]
    logits = H @ model.out_W + model.out_b
    if not np.all(np.isfinite(logits)):
        raise DivergenceError("non-finite logits during training")
    logits = logits - logits.max(axis=-1, keepdims=True)
    logz = np.log(np.exp(logits).sum(axis=-1))
    picked = np.take_along_axis(logits, targets[..., None], axis=-1)[..., 0]
    ce = float(np.mean(logz - picked))
    loss = ce + l2_lambda * model.squared_weight_norm() if l2_lambda else ce
    if not need_grad:
        return loss, ce, None

    probs = np.exp(logits - logz[..., None])
    dlogits = probs
    np.put_along_axis(dlogits, targets[..., None],
                      np.take_along_axis(dlogits, targets[..., None], axis=-1) - 1.0, axis=-1)
    dlogits /= B * L
    g = {}
    g["out_W"] = H.reshape(B * L, n).T @ dlogits.reshape(B * L, m)
    g["out_b"] = dlogits.sum(axis=(0, 1))
    dH = dlogits @ model.out_W.T
    if masks is not None:
        dH = dH * masks.dec_out[:, None, :]
    g["dec_Wx"], g["dec_Wh"], g["dec_b"], dh0, dc0 = _lstm_sequence_backward(
        Xd, hs_d, cs_d, acts_d, dH, zeros, zeros, model.decoder)
    dHe = np.zeros((B, contexts.shape[1], n))
    dHe[:, -1] = dh0
    g["enc_Wx"], g["enc_Wh"], g["enc_b"], _, _ = _lstm_sequence_backward(
        Xe, hs_e, cs_e, acts_e, dHe, zeros, dc0, model.encoder)
    # dh0 enters through dHe at the last step; dc0 is the carried cell gradient.
    if l2_lambda:
        t = model.tensors()
        for k in WEIGHT_NAMES:
            g[k] = g[k] + 2.0 * l2_lambda * t[k]
    return loss, ce, g


def stack_windows(windows):
    """Turn ``(context, target)`` pairs into ``(contexts, dec_inputs, targets)`` arrays.

    The first decoder input is the last context symbol; afterwards the
    decoder sees the previous true target symbol.
    """
    if isinstance(windows, tuple) and len(windows) == 3 and isinstance(windows[0], np.ndarray):
        return windows
    pairs = list(windows)
    if not pairs:
        raise ValueError("no windows supplied")
    ctx = np.stack([_context_indices(c) for c, _ in pairs]).astype(np.int64)
    tgt = np.stack([_context_indices(t) for _, t in pairs]).astype(np.int64)
    dec = np.concatenate([ctx[:, -1:], tgt[:, :-1]], axis=1)
    return ctx, dec, tgt


def evaluate_loss(model, windows, batch_size=256) -> float:
    """Mean cross-entropy without dropout (the validation loss)."""
    ctx, dec, tgt = stack_windows(windows)
    total = 0.0
    for s in range(0, len(ctx), batch_size):
        _, ce, _ = loss_and_grad(model, ctx[s:s + batch_size], dec[s:s + batch_size],
                                 tgt[s:s + batch_size], need_grad=False)
        total += ce * len(ctx[s:s + batch_size])
    return total / len(ctx)


class _Adam:
    def __init__(self, tensors, lr, b1=0.9, b2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m = {k: np.zeros_like(v) for k, v in tensors.items()}
        self.v = {k: np.zeros_like(v) for k, v in tensors.items()}
        self.t = 0

    def step(self, tensors, grads):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for k, p in tensors.items():
            gk = grads[k]
            self.m[k] = self.b1 * self.m[k] + (1.0 - self.b1) * gk
            self.v[k] = self.b2 * self.v[k] + (1.0 - self.b2) * gk * gk
            p -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


def train(model: Seq2SeqModel, windows, cfg: TrainingConfig, validation, seed=None):
    """Fit ``model`` on ``windows`` with early stopping on ``validation``.

    The input model is left untouched. The returned model carries the
    parameters with the lowest validation loss seen, counting the initial
    parameters as epoch 0.

    Returns
    -------
    (Seq2SeqModel, dict)
        Best model and a history with per-epoch ``train_loss``,
        ``val_loss`` and ``clipped`` (batches whose gradient was clipped).
    """
    ctx, dec, tgt = stack_windows(windows)
    val = stack_windows(validation)
    if len(val[0]) == 0:
        raise ValueError("validation set is empty")
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    work = model.copy()
    work.config = cfg
    params = work.tensors()
    opt = _Adam(params, cfg.learning_rate)

    best_val = evaluate_loss(work, val)
    if not np.isfinite(best_val):
        raise DivergenceError("initial validation loss is not finite")
    best = {k: v.copy() for k, v in params.items()}
    history = {"train_loss": [], "val_loss": [best_val], "clipped": [], "best_epoch": 0}
    stale = 0
    N = len(ctx)
    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(N)
        running, clipped = 0.0, 0
        for s in range(0, N, cfg.batch_size):
            b = order[s:s + cfg.batch_size]
            masks = sample_masks(rng, len(b), work.m, work.n_h, cfg.dropout_rate)
            loss, _, g = loss_and_grad(work, ctx[b], dec[b], tgt[b], masks, cfg.l2_lambda)
            if not np.isfinite(loss):
                raise DivergenceError(f"training loss became non-finite at epoch {epoch}")
            norm = np.sqrt(sum(float(np.sum(v * v)) for v in g.values()))
            if norm > cfg.clip_norm:
                scale = cfg.clip_norm / norm
                g = {k: v * scale for k, v in g.items()}
                clipped += 1
            opt.step(params, g)
            running += loss * len(b)
        val_loss = evaluate_loss(work, val)
        if not np.isfinite(val_loss):
            raise DivergenceError(f"validation loss became non-finite at epoch {epoch}")
        history["train_loss"].append(running / N)
        history["val_loss"].append(val_loss)
        history["clipped"].append(clipped)
        log.debug("epoch %d train %.5f val %.5f", epoch, running / N, val_loss)
        if val_loss < best_val:
            best_val, stale = val_loss, 0
            best = {k: v.copy() for k, v in params.items()}
            history["best_epoch"] = epoch
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    history["best_val_loss"] = best_val
    history["epochs_run"] = len(history["train_loss"])
    out = Seq2SeqModel.from_tensors(best, work.quantizer, cfg, dict(model.meta))
    out.meta.update(epochs_run=history["epochs_run"], best_val_loss=best_val)
    return out, history
