"""Supervised training on synthetic keyframe labels, then held-out evaluation."""

# %%
import os

import numpy as np

from fcsn.dataio import SynthConfig, generate_synthetic
from fcsn.evalkit import prf
from fcsn.model import ModelConfig
from fcsn.pipeline import kts_segment, predict_summary, scores_to_keyshot_summary
from fcsn.train import TrainConfig, predict_scores, train_supervised

epochs = int(os.environ.get("FCSN_DEMO_EPOCHS", 30))
videos = generate_synthetic(SynthConfig(n_videos=80, seed=0))
train, test = [v.record("keyframes") for v in videos[:60]], videos[60:]
cfg = ModelConfig(input_dim=64)
report = train_supervised(train, cfg, TrainConfig(epochs=epochs))
print(report.table())
print(f"{report.wall_clock:.1f} s")

# %%
rng = np.random.default_rng(0)
f_model, f_random = [], []
for v in test:
    seg = kts_segment(v.features.astype(np.float64))
    summary = predict_summary(predict_scores(report.params, cfg, v.features), v.features, seg=seg)
    f_model.append(prf(summary, v.keyshots).fscore)
    f_random.append(np.mean([prf(scores_to_keyshot_summary(rng.uniform(size=seg.length), seg), v.keyshots).fscore
                             for _ in range(100)]))
print(f"held-out F {np.mean(f_model):.2f}  random summaries {np.mean(f_random):.2f}")
