"""
Reusing a model trained on other series
=======================================

Train one model on a small pool of unrelated synthetic series, then
fine-tune it on a short target and compare with a model trained from
scratch on the same windows for twice as many epochs.
"""

from ordforecast.harness.experiments import few_shot_comparison, train_gum
from ordforecast.seq2seq import TrainingConfig
from ordforecast.synthetic import corpus, generate

pool = corpus(6, 600, seed=21, prefix="pool")
cfg = TrainingConfig(n_h=32, dropout_rate=0.25, l2_lambda=1e-6, encoder_len=30,
                     decoder_len=15, max_epochs=25, patience=4, learning_rate=3e-3, seed=0)
pretrained, hist = train_gum(pool, 40, cfg, stride=3)
print(f"pretrained on {len(pool)} series: {hist['epochs_run']} epochs, "
      f"validation {hist['best_val_loss']:.3f}")

for seed in range(3):
    target = generate(("sine", "sawtooth", "ar2")[seed], 200, 500 + seed)
    tcfg = TrainingConfig(**{**cfg.to_dict(), "seed": seed})
    _, _, info = few_shot_comparison(pretrained, target, tcfg, finetune_epochs=15,
                                     naive_epochs=30, stride=2)
    print(f"{target.name:14s} untouched {info['pretrained_val']:.3f}  "
          f"fine-tuned {info['finetuned_val']:.3f}  scratch {info['naive_val']:.3f}")
