"""Training objectives and their analytic gradients.

``scores`` are per-frame class scores of shape ``(T, 2)``; column 1 is the
keyframe class.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class ClassWeights:
    w0: float
    w1: float

    def __post_init__(self):
        for w in (self.w0, self.w1):
            if not (np.isfinite(w) and w > 0):
                raise ValueError(f"class weights must be finite and positive, got {self}")

    def as_array(self) -> np.ndarray:
        return np.array([self.w0, self.w1])


@dataclass
class LossValue:
    value: float
    grad: np.ndarray


def class_weights(labels: Sequence[np.ndarray]) -> ClassWeights:
    """Median-frequency balancing over a corpus of binary label sequences.

    ``freq_c`` is the number of frames labelled ``c`` divided by the total
    number of frames of the videos in which ``c`` appears at all.
    """
    if not labels:
        raise ValueError("class weights need a non-empty corpus")
    freqs = []
    for c in (0, 1):
        count = present = 0
        for lab in labels:
            k = int(np.count_nonzero(np.asarray(lab) == c))
            if k:
                count += k
                present += len(lab)
        if count == 0:
            raise ValueError(f"class {c} never occurs in the corpus")
        freqs.append(count / present)
    median = float(np.median(freqs))
    return ClassWeights(median / freqs[0], median / freqs[1])


def _log_softmax(scores: np.ndarray) -> np.ndarray:
    shifted = scores - scores.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def l_sum(scores: np.ndarray, labels: np.ndarray, weights: ClassWeights | None = None) -> LossValue:
    """Class-weighted per-frame cross-entropy, averaged over the T frames."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.ndim != 2 or scores.shape[1] != 2:
        raise ValueError(f"scores must be (T, 2), got {scores.shape}")
    if labels.shape != (scores.shape[0],):
        raise ValueError(f"labels length {labels.shape} does not match T={scores.shape[0]}")
    if not np.all((labels == 0) | (labels == 1)):
        raise ValueError("labels must be 0 or 1")
    labels = labels.astype(np.int64)
    w = (weights or ClassWeights(1.0, 1.0)).as_array()[labels]
    t = scores.shape[0]
    logp = _log_softmax(scores)
    rows = np.arange(t)
    value = -float((w * logp[rows, labels]).sum()) / t
    grad = np.exp(logp)
    grad[rows, labels] -= 1.0
    grad *= (w / t)[:, None]
    return LossValue(value, grad)


def select_keyframes(scores: np.ndarray, count: int) -> np.ndarray:
    """Indices of the ``count`` frames most likely to be keyframes, ascending.

    Ranking uses the score margin ``phi_1 - phi_0``, which orders frames the
    same way as the class-1 softmax probability without saturating to 1.0.
    Ties go to the lower index.
    """
    scores = np.asarray(scores)
    t = scores.shape[0]
    if not 1 <= count <= t:
        raise ValueError(f"keyframe count {count} outside [1, {t}]")
    margin = scores[:, 1] - scores[:, 0]
    order = np.argsort(-margin, kind="stable")
    return np.sort(order[:count])


def default_keyframe_count(length: int, fraction: float = 0.15) -> int:
    return min(length, max(2, int(round(fraction * length))))


def l_div(f: np.ndarray) -> LossValue:
    """Mean cosine similarity over ordered pairs of distinct rows of ``f``."""
    f = np.asarray(f, dtype=np.float64)
    n = f.shape[0]
    if n < 2:
        return LossValue(0.0, np.zeros_like(f))
    norms = np.linalg.norm(f, axis=1)
    if np.any(norms == 0):
        raise ValueError("cosine similarity undefined for a zero-norm row")
    u = f / norms[:, None]
    total = u.sum(axis=0)
    denom = n * (n - 1)
    value = float(total @ total - (u * u).sum()) / denom
    grad_u = 2.0 * (total[None, :] - u) / denom
    radial = (grad_u * u).sum(axis=1, keepdims=True)
    grad = (grad_u - radial * u) / norms[:, None]
    return LossValue(value, grad)


def l_recon(f: np.ndarray, x_sel: np.ndarray) -> LossValue:
    f = np.asarray(f, dtype=np.float64)
    x_sel = np.asarray(x_sel, dtype=np.float64)
    if f.shape != x_sel.shape:
        raise ValueError(f"shape mismatch {f.shape} vs {x_sel.shape}")
    diff = f - x_sel
    return LossValue(float((diff ** 2).mean()), 2.0 * diff / diff.size)


def l_unsup(f: np.ndarray, x_sel: np.ndarray, div_weight: float = 1.0) -> LossValue:
    div, rec = l_div(f), l_recon(f, x_sel)
    return LossValue(div_weight * div.value + rec.value, div_weight * div.grad + rec.grad)
