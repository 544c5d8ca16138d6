"""Resampling, padding, minibatch SGD and the two training loops."""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import model as mdl
from .objective import class_weights, default_keyframe_count, l_div, l_sum, l_unsup, select_keyframes


class NumericalError(RuntimeError):
    """A gradient or loss went non-finite."""


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    learning_rate: float = 1e-3
    momentum: float = 0.9
    batch_size: int = 5
    sample_length: int = 320  # 0 = variable-length mode
    seed: int = 0
    mode: str = "supervised"
    keyframe_fraction: float = 0.15
    div_weight: float = 1.0

    def __post_init__(self):
        # lr 0 is accepted as the continuity check; negative rates are not.
        if not (np.isfinite(self.learning_rate) and self.learning_rate >= 0):
            raise ValueError("learning_rate must be finite and >= 0")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must be in [0, 1)")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.sample_length < 0:
            raise ValueError("sample_length must be >= 0")
        if self.mode not in ("supervised", "unsupervised"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if not 0 < self.keyframe_fraction <= 1:
            raise ValueError("keyframe_fraction must be in (0, 1]")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainReport:
    epoch_losses: list[float]
    wall_clock: float
    checkpoint: str | None
    params: mdl.ModelParams = field(repr=False)
    extra: dict = field(default_factory=dict)

    def table(self) -> str:
        lines = ["epoch  mean_loss"]
        lines += [f"{i + 1:5d}  {v:.10f}" for i, v in enumerate(self.epoch_losses)]
        return "\n".join(lines)

    def to_dict(self) -> dict:
        # wall-clock is excluded so that identical runs serialize identically
        return {"epoch_losses": list(self.epoch_losses), "checkpoint": self.checkpoint, **self.extra}


# -- temporal plumbing ------------------------------------------------------


def uniform_sample(length: int, target: int) -> np.ndarray:
    if length < 1 or target < 1:
        raise ValueError("lengths must be >= 1")
    return (np.arange(target, dtype=np.int64) * length) // target


def upscale_nn(pred: np.ndarray, length: int) -> np.ndarray:
    pred = np.asarray(pred)
    if length < 1 or len(pred) < 1:
        raise ValueError("lengths must be >= 1")
    return pred[(np.arange(length, dtype=np.int64) * len(pred)) // length]


def sample_labels(labels: np.ndarray, target: int) -> np.ndarray:
    """Labels at ``target`` length.  When shrinking, a sampled frame is
    positive if any frame of its window is, so keyframes survive."""
    labels = np.asarray(labels)
    t = len(labels)
    idx = uniform_sample(t, target)
    if target >= t:
        return labels[idx]
    return np.maximum.reduceat(labels, idx)


def pad_to_stride(x: np.ndarray, stride: int) -> tuple[np.ndarray, int]:
    x = np.asarray(x)
    if x.shape[0] == 0:
        raise ValueError("cannot pad an empty sequence")
    t = x.shape[0]
    padded = -(-t // stride) * stride
    if padded == t:
        return x, t
    return np.concatenate([x, np.repeat(x[-1:], padded - t, axis=0)]), t


def prepare_input(features: np.ndarray, config: mdl.ModelConfig, sample_length: int):
    """``(model input, sampled length)``: uniform sampling (unless in
    variable-length mode) then edge padding to the native stride."""
    x = np.asarray(features, dtype=np.float64)
    if sample_length:
        x = x[uniform_sample(len(x), sample_length)]
    return pad_to_stride(x, config.native_stride)


def predict_scores(params, config, features: np.ndarray, sample_length: int = 320) -> np.ndarray:
    """Eval-mode ``(T_orig, 2)`` scores for one video."""
    x, t_s = prepare_input(features, config, sample_length)
    scores, _ = mdl.forward(params, config, [x], "eval")
    return upscale_nn(scores[0][:t_s], len(features))


# -- optimizer --------------------------------------------------------------


def sgd_step(params: mdl.ModelParams, config: TrainConfig) -> mdl.ModelParams:
    for name, p in params.params.items():
        if not np.all(np.isfinite(p.grad)):
            raise NumericalError(f"non-finite gradient in {name}")
    for p in params.params.values():
        p.momentum_buf *= config.momentum
        p.momentum_buf += p.grad
        p.value -= config.learning_rate * p.momentum_buf
        p.grad[...] = 0.0
    params.version += 1
    return params


# -- loops ------------------------------------------------------------------


def _batches(n: int, size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    return [order[i:i + size] for i in range(0, n, size)]


def _features(v):
    return v.features


def _labels(v):
    return v.labels


def _run(corpus, mcfg: mdl.ModelConfig, tcfg: TrainConfig, batch_loss, params, checkpoint):
    if not corpus:
        raise ValueError("empty corpus")
    start = time.perf_counter()
    rng = np.random.default_rng(tcfg.seed)
    params = params if params is not None else mdl.init_params(mcfg, tcfg.seed)
    losses = []
    for _ in range(tcfg.epochs):
        total = []
        for idx in _batches(len(corpus), tcfg.batch_size, rng):
            value = batch_loss(params, [corpus[i] for i in idx], rng)
            if not np.isfinite(value):
                raise NumericalError(f"non-finite loss {value}")
            sgd_step(params, tcfg)
            total.append((value, len(idx)))
        losses.append(float(sum(v * n for v, n in total) / sum(n for _, n in total)))
    path = None
    if checkpoint is not None:
        mdl.save_params(checkpoint, params, mcfg)
        path = str(Path(checkpoint))
    return TrainReport(losses, time.perf_counter() - start, path, params)


def train_supervised(corpus: Sequence, mcfg: mdl.ModelConfig, tcfg: TrainConfig,
                     params: mdl.ModelParams | None = None, checkpoint=None) -> TrainReport:
    """``corpus`` items expose ``features`` (T, D) and ``labels`` (T,)."""
    if not corpus:
        raise ValueError("empty corpus")
    weights = class_weights([_labels(v) for v in corpus])

    def batch_loss(params, videos, rng):
        xs, ys, lens = [], [], []
        for v in videos:
            x, t_s = prepare_input(_features(v), mcfg, tcfg.sample_length)
            lab = np.asarray(_labels(v))
            ys.append(sample_labels(lab, tcfg.sample_length) if tcfg.sample_length else lab)
            xs.append(x)
            lens.append(t_s)
        scores, cache = mdl.forward(params, mcfg, xs, "train", rng)
        grads, value = [], 0.0
        for s, y, t_s in zip(scores, ys, lens):
            lv = l_sum(s[:t_s], y, weights)
            value += lv.value / len(videos)
            g = np.zeros_like(s)
            g[:t_s] = lv.grad / len(videos)
            grads.append(g)
        mdl.backward(params, mcfg, cache, grads)
        return value

    report = _run(corpus, mcfg, tcfg, batch_loss, params, checkpoint)
    report.extra["class_weights"] = [weights.w0, weights.w1]
    return report


def train_unsupervised(corpus: Sequence, mcfg: mdl.ModelConfig, tcfg: TrainConfig,
                       params: mdl.ModelParams | None = None, checkpoint=None) -> TrainReport:
    """Diversity plus reconstruction on the ``Y`` frames the classifier ranks
    highest.  Selection is a hard top-Y, so the gradient reaches the network
    through the decoder path only."""
    if not mcfg.reconstruction:
        raise ValueError("unsupervised training needs a config with reconstruction=True")

    def batch_loss(params, videos, rng):
        xs, lens = [], []
        for v in videos:
            x, t_s = prepare_input(_features(v), mcfg, tcfg.sample_length)
            xs.append(x)
            lens.append(t_s)
        scores, cache = mdl.forward(params, mcfg, xs, "train", rng)
        g_dec, value = [], 0.0
        for i, (s, x, t_s) in enumerate(zip(scores, xs, lens)):
            sel = select_keyframes(s[:t_s], default_keyframe_count(t_s, tcfg.keyframe_fraction))
            f, hc = mdl.reconstruct_head(params, mcfg, cache.decoded[i], sel, x)
            lv = l_unsup(f, x[sel], tcfg.div_weight)
            value += lv.value / len(videos)
            g_dec.append(mdl.reconstruct_head_backward(params, mcfg, hc, lv.grad / len(videos)))
        mdl.backward(params, mcfg, cache, None, g_dec)
        return value

    return _run(corpus, mcfg, tcfg, batch_loss, params, checkpoint)


def selection_diversity(params, mcfg: mdl.ModelConfig, features: np.ndarray, sample_length: int = 320,
                        fraction: float = 0.15) -> float:
    """Mean pairwise cosine similarity of the input features at the frames
    the model selects (eval mode, original length)."""
    scores = predict_scores(params, mcfg, features, sample_length)
    sel = select_keyframes(scores, default_keyframe_count(len(features), fraction))
    return l_div(np.asarray(features, dtype=np.float64)[sel]).value
