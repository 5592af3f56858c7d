"""
What the encoder remembers
==========================

Encode many short excerpts with a trained model, group the final hidden
states with Ward clustering, and look at the groups in two dimensions.
"""

import numpy as np

from ordforecast.embedding import extract_embeddings, project_2d, select_k
from ordforecast.harness.experiments import train_gum
from ordforecast.quantizer import build_quantizer
from ordforecast.seq2seq import TrainingConfig
from ordforecast.synthetic import corpus

pool = corpus(8, 500, seed=3, prefix="pool")
cfg = TrainingConfig(n_h=24, dropout_rate=0.1, encoder_len=20, decoder_len=10,
                     max_epochs=15, patience=3, learning_rate=3e-3, seed=0)
model, _ = train_gum(pool, 30, cfg, stride=4)

excerpts, family = [], []
for s in pool:
    q = build_quantizer(s.values, model.m, 10, extend=True)
    for start in range(0, len(s.values) - 20, 25):
        excerpts.append(q.encode(s.values[start:start + 20]))
        family.append(s.name.split("-", 2)[-1])

H = extract_embeddings(model, excerpts)
k, cm, scores = select_k(H, 3, 10)
print(f"{len(H)} excerpts, silhouette by k: " + " ".join(f"{j}:{v:.2f}" for j, v in scores.items()))
print(f"chose k={k}")

# how the clusters line up with the generator family of each excerpt
names = sorted(set(family))
table = np.zeros((k, len(names)), int)
for c, f in zip(cm.assignments, family):
    table[c, names.index(f)] += 1
print("\ncluster  " + " ".join(f"{n:>15s}" for n in names))
for c in range(k):
    print(f"{c:7d}  " + " ".join(f"{v:15d}" for v in table[c]))

xy = project_2d(H)
for c in range(k):
    centre = xy[cm.assignments == c].mean(axis=0)
    print(f"cluster {c} centre in the 2-d projection: ({centre[0]:+.2f}, {centre[1]:+.2f})")
