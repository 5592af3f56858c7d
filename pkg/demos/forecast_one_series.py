"""
Forecasting a noisy sine as a sequence of bins
==============================================

Quantize one series, fit a small seq2seq model on its own windows, and
compare the MC-dropout forecast with AR and GP baselines.
Runs in well under a minute on a laptop.
"""

import numpy as np

from ordforecast.baselines import ar_forecast, fit_ar, fit_gp, gp_forecast
from ordforecast.forecaster import forecast
from ordforecast.harness.data import make_windows, split_windows
from ordforecast.metrics import evaluate
from ordforecast.quantizer import build_quantizer
from ordforecast.seq2seq import TrainingConfig, init_model, train
from ordforecast.synthetic import generate

series = generate("sine", 400, seed=4).values
history, future = series[:-20], series[-20:]

# 40 bins over the observed range. Widening by the full 20-step horizon
# times the largest jump would waste most bins on this noisy series, so
# leave room for a 2-step excursion only.
q = build_quantizer(history, 40, horizon=2, extend=True)
print(f"bins: {q.m} of width {q.width:.3f} on [{q.lo:.2f}, {q.hi:.2f})")

cfg = TrainingConfig(n_h=32, dropout_rate=0.25, l2_lambda=1e-6, encoder_len=30,
                     decoder_len=20, max_epochs=40, patience=5, learning_rate=3e-3, seed=0)
tr, va = split_windows(make_windows(history, 30, 20, stride=2))
tr = [(q.encode(a), q.encode(b)) for a, b in tr]
va = [(q.encode(a), q.encode(b)) for a, b in va]
model, hist = train(init_model(q.m, cfg, quantizer=q), tr, cfg, va)
print(f"trained {hist['epochs_run']} epochs, best validation cross-entropy {hist['best_val_loss']:.3f}")

# each row of fd.probs is a distribution over bins for one future step
fd = forecast(model, q.encode(history[-30:]), 20, n_samples=100, seed=1)
lo, hi = fd.quantile(0.05), fd.quantile(0.95)
print("\nstep  truth   mean    90% band")
for t in range(0, 20, 4):
    print(f"{t:4d} {future[t]:7.2f} {fd.mean()[t]:7.2f}  [{lo[t]:6.2f}, {hi[t]:6.2f}]")

forecasts = {
    "seq2seq": fd,
    "AR4": ar_forecast(fit_ar(history, 4), history, 20),
    "GP-M52": gp_forecast(fit_gp(history[-200:], "matern52"), 20),
}
print("\nmodel     nll     rmse    qq")
for name, f in forecasts.items():
    r = evaluate("sine-4", name, f, future)
    print(f"{name:8s} {r.nll:6.3f} {r.rmse:7.3f} {r.qq_distance:6.3f}")
