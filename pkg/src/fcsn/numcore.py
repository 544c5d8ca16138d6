"""Temporal layer primitives with hand-written backward rules.

A sequence map is a plain ``float64`` array of shape ``(channels, length)``.
Every forward function here is pure; the matching ``*_backward`` takes the
values saved by the forward (input, pooling indices, dropout mask, ...) and
returns exact gradients.  Batches are Python lists of maps, so videos of
different lengths can share a batch and eval-mode outputs never depend on
what else is in the batch.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


@dataclass
class Param:
    """A learnable array with its gradient and momentum buffer."""

    value: np.ndarray
    grad: np.ndarray = field(default=None)  # type: ignore[assignment]
    momentum_buf: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        self.value = np.asarray(self.value, dtype=np.float64)
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        if self.momentum_buf is None:
            self.momentum_buf = np.zeros_like(self.value)
        if not (self.value.shape == self.grad.shape == self.momentum_buf.shape):
            raise ValueError("value, grad and momentum_buf must share one shape")

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad[...] = 0.0


@dataclass(frozen=True)
class ConvSpec:
    in_channels: int
    out_channels: int
    kernel: int
    stride: int = 1
    padding: int = 0
    dilation: int = 1

    def __post_init__(self):
        if min(self.in_channels, self.out_channels, self.kernel, self.stride, self.dilation) < 1:
            raise ValueError(f"invalid conv spec {self}")
        if self.padding < 0:
            raise ValueError(f"negative padding in {self}")

    @property
    def span(self) -> int:
        """Receptive field of one output sample, in input samples."""
        return self.dilation * (self.kernel - 1) + 1

    def out_length(self, length: int) -> int:
        return (length + 2 * self.padding - self.span) // self.stride + 1

    def transposed_out_length(self, length: int) -> int:
        return (length - 1) * self.stride - 2 * self.padding + self.span

    @property
    def weight_shape(self) -> tuple[int, int, int]:
        return (self.out_channels, self.in_channels, self.kernel)


def _tap_index(spec: ConvSpec, l_out: int) -> np.ndarray:
    # [k, l_out] positions into the padded input
    return (np.arange(spec.kernel) * spec.dilation)[:, None] + (np.arange(l_out) * spec.stride)[None, :]


def _im2col(x: np.ndarray, spec: ConvSpec) -> np.ndarray:
    c_in, length = x.shape
    l_out = spec.out_length(length)
    if l_out < 1:
        raise ValueError(f"conv output length {l_out} < 1 for input length {length}")
    xp = np.pad(x, ((0, 0), (spec.padding, spec.padding))) if spec.padding else x
    return xp[:, _tap_index(spec, l_out)].reshape(c_in * spec.kernel, l_out)


def _col2im(cols: np.ndarray, spec: ConvSpec, length: int) -> np.ndarray:
    """Adjoint of ``_im2col``: scatter-add columns back onto a length-``length`` map."""
    c_in = spec.in_channels
    l_out = cols.shape[-1]
    cols = cols.reshape(c_in, spec.kernel, l_out)
    padded = np.zeros((c_in, length + 2 * spec.padding))
    last = (l_out - 1) * spec.stride + 1
    for j in range(spec.kernel):
        start = j * spec.dilation
        padded[:, start:start + last:spec.stride] += cols[:, j, :]
    if spec.padding:
        return padded[:, spec.padding:spec.padding + length]
    return padded


def _check_weights(w: np.ndarray, spec: ConvSpec):
    if w.shape != spec.weight_shape:
        raise ValueError(f"weight shape {w.shape} does not match {spec.weight_shape}")


def conv1d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray, spec: ConvSpec) -> np.ndarray:
    """Zero-padded strided, dilated 1D convolution (cross-correlation).

    ``y[c, t] = b[c] + sum_{c', j} w[c, c', j] * x_pad[c', t*stride + j*dilation]``
    """
    _check_weights(w, spec)
    if x.ndim != 2 or x.shape[0] != spec.in_channels:
        raise ValueError(f"expected {spec.in_channels} input channels, got shape {x.shape}")
    cols = _im2col(x, spec)
    return w.reshape(spec.out_channels, -1) @ cols + b[:, None]


def conv1d_backward(x: np.ndarray, w: np.ndarray, spec: ConvSpec, grad_y: np.ndarray):
    """Returns ``(grad_x, grad_w, grad_b)`` for :func:`conv1d_forward`."""
    _check_weights(w, spec)
    l_out = spec.out_length(x.shape[1])
    if grad_y.shape != (spec.out_channels, l_out):
        raise ValueError(f"grad_y shape {grad_y.shape} != {(spec.out_channels, l_out)}")
    cols = _im2col(x, spec)
    w2 = w.reshape(spec.out_channels, -1)
    grad_w = (grad_y @ cols.T).reshape(w.shape)
    grad_b = grad_y.sum(axis=1)
    grad_x = _col2im(w2.T @ grad_y, spec, x.shape[1])
    return grad_x, grad_w, grad_b


def tconv1d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray, spec: ConvSpec) -> np.ndarray:
    """Transposed convolution, the exact adjoint of :func:`conv1d_forward`.

    ``spec`` and ``w`` describe the *forward* convolution that this layer
    transposes, so ``x`` has ``spec.out_channels`` channels and the result
    has ``spec.in_channels``; ``b`` has length ``spec.in_channels``.
    """
    _check_weights(w, spec)
    if x.ndim != 2 or x.shape[0] != spec.out_channels:
        raise ValueError(f"expected {spec.out_channels} input channels, got shape {x.shape}")
    l_out = spec.transposed_out_length(x.shape[1])
    if l_out < 1:
        raise ValueError(f"transposed conv output length {l_out} < 1")
    cols = w.reshape(spec.out_channels, -1).T @ x
    return _col2im(cols, spec, l_out) + b[:, None]


def tconv1d_backward(x: np.ndarray, w: np.ndarray, spec: ConvSpec, grad_y: np.ndarray):
    """Returns ``(grad_x, grad_w, grad_b)`` for :func:`tconv1d_forward`."""
    _check_weights(w, spec)
    l_out = spec.transposed_out_length(x.shape[1])
    if grad_y.shape != (spec.in_channels, l_out):
        raise ValueError(f"grad_y shape {grad_y.shape} != {(spec.in_channels, l_out)}")
    cols = _im2col(grad_y, spec)
    grad_x = w.reshape(spec.out_channels, -1) @ cols
    grad_w = (x @ cols.T).reshape(w.shape)
    grad_b = grad_y.sum(axis=1)
    return grad_x, grad_w, grad_b


def maxpool1d_forward(x: np.ndarray, window: int, stride: int, padding: int = 0):
    """Windowed channel-wise max.  Returns ``(y, indices)``.

    ``indices`` holds the argmax position of each output in the unpadded
    input; the first maximum wins on ties.  Padding (if any) is ``-inf``.
    """
    c, length = x.shape
    if window < 1 or stride < 1 or padding < 0:
        raise ValueError("window and stride must be positive, padding non-negative")
    if window > length + 2 * padding:
        raise ValueError(f"pool window {window} exceeds input length {length}")
    l_out = (length + 2 * padding - window) // stride + 1
    xp = np.pad(x, ((0, 0), (padding, padding)), constant_values=-np.inf) if padding else x
    taps = np.arange(l_out)[:, None] * stride + np.arange(window)[None, :]
    windows = xp[:, taps]  # [c, l_out, window]
    arg = windows.argmax(axis=2)
    indices = taps[np.arange(l_out)[None, :], arg] - padding
    y = np.take_along_axis(windows, arg[..., None], axis=2)[..., 0]
    return y, indices


def maxpool1d_backward(indices: np.ndarray, grad_y: np.ndarray, length: int) -> np.ndarray:
    """Routes each output gradient to its argmax; overlapping windows accumulate."""
    if indices.shape != grad_y.shape:
        raise ValueError("indices and grad_y must share one shape")
    if indices.size and (indices.min() < 0 or indices.max() >= length):
        raise ValueError("pooling index out of range")
    c = indices.shape[0]
    flat = (indices + np.arange(c)[:, None] * length).ravel()
    return np.bincount(flat, weights=grad_y.ravel(), minlength=c * length).reshape(c, length)


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_backward(x: np.ndarray, grad_y: np.ndarray) -> np.ndarray:
    return np.where(x > 0, grad_y, 0.0)


def dropout(x: np.ndarray, rate: float, rng: np.random.Generator | None, mode: str = "train"):
    """Inverted dropout.  Returns ``(y, mask)``; ``mask`` is ``None`` when inactive.

    The mask already includes the ``1 / (1 - rate)`` survivor scaling.
    """
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if mode == "eval" or rate == 0.0:
        return x, None
    if rng is None:
        raise ValueError("train-mode dropout needs a random generator")
    keep = rng.random(x.shape) >= rate
    mask = keep / (1.0 - rate)
    return x * mask, mask


def dropout_backward(mask: np.ndarray | None, grad_y: np.ndarray) -> np.ndarray:
    return grad_y if mask is None else grad_y * mask


def elementwise_add(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.shape != b.shape:
        raise ValueError(f"cannot add maps of shapes {a.shape} and {b.shape}")
    return a + b


@dataclass
class BNCache:
    xhat: list
    inv_std: np.ndarray
    mode: str


def batchnorm1d(
    xs: Sequence[np.ndarray],
    gamma: np.ndarray,
    beta: np.ndarray,
    mode: str,
    running_mean: np.ndarray | None,
    running_var: np.ndarray | None,
    momentum: float = BN_MOMENTUM,
    eps: float = BN_EPS,
):
    """Batch normalisation over a list of ``(C, L_i)`` maps.

    Train mode normalises with the statistics over every sample and time
    step of the batch and updates ``running_mean``/``running_var`` in place
    (biased variance).  Eval mode uses the running statistics only.
    Returns ``(ys, cache)``.
    """
    if mode == "train":
        n = sum(x.shape[1] for x in xs)
        mean = sum(x.sum(axis=1) for x in xs) / n
        var = sum(((x - mean[:, None]) ** 2).sum(axis=1) for x in xs) / n
        if running_mean is not None:
            running_mean *= 1.0 - momentum
            running_mean += momentum * mean
        if running_var is not None:
            running_var *= 1.0 - momentum
            running_var += momentum * var
    elif mode == "eval":
        if running_mean is None or running_var is None:
            raise ValueError("eval-mode batch norm needs running statistics")
        mean, var = running_mean, running_var
    else:
        raise ValueError(f"unknown mode {mode!r}")
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = [(x - mean[:, None]) * inv_std[:, None] for x in xs]
    ys = [gamma[:, None] * xh + beta[:, None] for xh in xhat]
    return ys, BNCache(xhat, inv_std, mode)


def batchnorm1d_backward(cache: BNCache, gamma: np.ndarray, grad_ys: Sequence[np.ndarray]):
    """Returns ``(grad_xs, grad_gamma, grad_beta)``."""
    grad_gamma = sum((g * xh).sum(axis=1) for g, xh in zip(grad_ys, cache.xhat))
    grad_beta = sum(g.sum(axis=1) for g in grad_ys)
    scale = (gamma * cache.inv_std)[:, None]
    if cache.mode == "eval":
        return [scale * g for g in grad_ys], grad_gamma, grad_beta
    n = sum(g.shape[1] for g in grad_ys)
    mean_g = (grad_beta / n)[:, None]
    mean_gx = (grad_gamma / n)[:, None]
    grad_xs = [scale * (g - mean_g - xh * mean_gx) for g, xh in zip(grad_ys, cache.xhat)]
    return grad_xs, grad_gamma, grad_beta


def _bilinear_taps(length: int, factor: int):
    if factor < 1:
        raise ValueError(f"upsampling factor must be >= 1, got {factor}")
    l_out = length * factor
    if length == 1 or l_out == 1:
        src = np.zeros(l_out)
    else:
        src = np.arange(l_out) * ((length - 1) / (l_out - 1))
    lo = np.minimum(np.floor(src).astype(np.int64), length - 1)
    hi = np.minimum(lo + 1, length - 1)
    frac = src - lo
    return lo, hi, frac


def bilinear_upsample1d(x: np.ndarray, factor: int) -> np.ndarray:
    """Linear interpolation to ``factor`` times the length.

    The first and last output samples sit on the first and last input
    samples, so a linear ramp is reproduced exactly.
    """
    lo, hi, frac = _bilinear_taps(x.shape[1], factor)
    return x[:, lo] * (1.0 - frac) + x[:, hi] * frac


def bilinear_upsample1d_backward(grad_y: np.ndarray, factor: int) -> np.ndarray:
    c, l_out = grad_y.shape
    length = l_out // factor
    lo, hi, frac = _bilinear_taps(length, factor)
    offs = np.arange(c)[:, None] * length
    idx = np.concatenate([(lo + offs).ravel(), (hi + offs).ravel()])
    wts = np.concatenate([(grad_y * (1.0 - frac)).ravel(), (grad_y * frac).ravel()])
    return np.bincount(idx, weights=wts, minlength=c * length).reshape(c, length)


def bilinear_kernel(kernel: int) -> np.ndarray:
    """1D interpolation filter used to initialise transposed convolutions."""
    factor = (kernel + 1) // 2
    center = factor - 1 if kernel % 2 == 1 else factor - 0.5
    return 1.0 - np.abs(np.arange(kernel) - center) / factor


# -- gradient checking -------------------------------------------------------


@dataclass
class GradcheckReport:
    errors: dict[str, float]
    tolerance: float
    checked: dict[str, int]

    @property
    def passed(self) -> bool:
        return all(e < self.tolerance for e in self.errors.values())

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    def lines(self) -> list[str]:
        out = []
        for name, err in self.errors.items():
            flag = "ok" if err < self.tolerance else "FAIL"
            out.append(f"{name:40s} {self.checked[name]:6d} {err:.3e} {flag}")
        return out


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Max abs difference, normalised by the larger of the two max magnitudes."""
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0))
    if scale == 0.0:
        return 0.0
    return float(np.abs(analytic - numeric).max() / scale)


def gradcheck(
    loss_fn: Callable[[], float],
    arrays: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    step: float = 1e-5,
    tolerance: float = 1e-4,
    max_entries: int | None = None,
    seed: int = 0,
) -> GradcheckReport:
    """Compare analytic gradients against central finite differences.

    ``loss_fn`` re-evaluates the scalar loss reading the arrays in
    ``arrays``, which are perturbed in place and restored.  With
    ``max_entries`` set, a seeded random subset of each array is probed.
    """
    rng = np.random.default_rng(seed)
    errors, checked = {}, {}
    for name, arr in arrays.items():
        flat = arr.reshape(-1)
        if flat.base is not arr and not np.shares_memory(flat, arr):
            raise ValueError(f"array {name!r} must be contiguous to be perturbed in place")
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
        numeric = np.empty(idx.size)
        for n, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + step
            up = loss_fn()
            flat[i] = orig - step
            down = loss_fn()
            flat[i] = orig
            numeric[n] = (up - down) / (2.0 * step)
        analytic = np.asarray(grads[name]).reshape(-1)[idx]
        errors[name] = relative_error(analytic, numeric)
        checked[name] = int(idx.size)
    return GradcheckReport(errors, tolerance, checked)
