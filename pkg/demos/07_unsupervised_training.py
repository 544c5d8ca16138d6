"""Unsupervised training with the diversity and reconstruction objective."""

# %%
import os

import numpy as np

from fcsn.dataio import SynthConfig, generate_synthetic
from fcsn.model import ModelConfig, init_params
from fcsn.objective import default_keyframe_count, l_div
from fcsn.train import TrainConfig, selection_diversity, train_unsupervised

epochs = int(os.environ.get("FCSN_DEMO_EPOCHS", 30))
videos = generate_synthetic(SynthConfig(n_videos=80, seed=0))
train, test = videos[:60], videos[60:]
cfg = ModelConfig(input_dim=64, reconstruction=True)
tcfg = TrainConfig(epochs=epochs, mode="unsupervised")
init = init_params(cfg, tcfg.seed)
report = train_unsupervised(train, cfg, tcfg)
print(report.table())

# %%
# Cosine similarity of the input features at the selected frames; lower is more diverse.
# Selection is a hard top-Y, so the classifier itself receives no diversity gradient.
rng = np.random.default_rng(0)
before = np.mean([selection_diversity(init, cfg, v.features) for v in test])
after = np.mean([selection_diversity(report.params, cfg, v.features) for v in test])
rand = np.mean([l_div(v.features[np.sort(rng.choice(len(v.features), default_keyframe_count(len(v.features)),
                                                   replace=False))].astype(float)).value for v in test])
print(f"init {before:.4f}  trained {after:.4f}  uniform-random {rand:.4f}")
