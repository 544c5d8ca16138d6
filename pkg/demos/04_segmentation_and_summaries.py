"""From frame scores to a budgeted keyshot summary."""

# %%
import numpy as np

from fcsn.evalkit import prf
from fcsn.pipeline import (
    Segmentation,
    capacity,
    keyframes_to_keyshots,
    knapsack_select,
    kts_segment,
    predict_summary,
    scores_to_keyshot_summary,
)

rng = np.random.default_rng(0)

# Piecewise-constant features: KTS finds the planted boundaries.
centers = rng.normal(scale=2.0, size=(4, 8))
x = np.repeat(centers, [12, 20, 9, 19], axis=0)
seg = kts_segment(x)
print("change points", seg.change_points, " intervals", seg.intervals())

# %%
# Knapsack: maximise value under an integer weight budget.
print("knapsack", knapsack_select([6.0, 10.0, 12.0], [1, 2, 3], 5))

# %%
# Keyframes to keyshots: intervals ranked by keyframe density, packed into 15% of T.
seg = Segmentation((30, 80), 200)
kf = np.zeros(200, dtype=np.uint8)
kf[[10, 15, 50]] = 1
summary = keyframes_to_keyshots(kf, seg, 0.15)
print("capacity", capacity(200, 0.15), " selected", summary.intervals())

# %%
# Importance scores to keyshots, and a prediction scored against it.
scores = rng.uniform(size=200)
scores[80:110] += 2.0
gt = scores_to_keyshot_summary(scores, Segmentation((40, 80, 110, 150), 200))
class_scores = np.stack([np.zeros(200), np.where(np.arange(200) // 10 == 9, 1.0, -1.0)], axis=1)
pred = predict_summary(class_scores, rng.normal(size=(200, 4)), seg=Segmentation((40, 80, 110, 150), 200))
print("ground truth", gt.intervals(), " prediction", pred.intervals(), " ", prf(pred, gt))
