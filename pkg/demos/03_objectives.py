"""Class-balanced cross-entropy, keyframe selection and the diversity loss."""

# %%
import math

import numpy as np

from fcsn.objective import ClassWeights, class_weights, l_div, l_recon, l_sum, select_keyframes

labels = np.array([1, 1, 0, 0, 0, 0, 0, 0, 0, 0])
w = class_weights([labels])
print("median-frequency weights", w)   # rare keyframes weigh more

loss = l_sum(np.zeros((2, 2)), np.array([0, 1]), ClassWeights(2.0, 0.5))
print(f"uniform scores: {loss.value:.6f} = 1.25 ln 2 = {1.25 * math.log(2):.6f}")

# %%
scores = np.array([[0.0, 1.0], [0.0, -1.0], [2.0, 2.5], [0.0, 3.0]])
print("top-2 keyframes", select_keyframes(scores, 2))

# %%
f = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0] / np.sqrt(2)])
print(f"mean pairwise cosine {l_div(f).value:.6f}  (sqrt(2)/3 = {math.sqrt(2) / 3:.6f})")
print("identical rows", l_div(np.ones((4, 3))).value, " reconstruction error", l_recon(f, f + 1).value)
