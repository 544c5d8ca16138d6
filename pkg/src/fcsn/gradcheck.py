"""Finite-difference checks of the full models' backward passes."""

from __future__ import annotations

import numpy as np

from . import model as mdl
from .numcore import GradcheckReport, gradcheck
from .objective import l_unsup, select_keyframes


def check_model(
    config: mdl.ModelConfig,
    length: int = 32,
    seed: int = 0,
    step: float = 1e-6,
    tolerance: float = 1e-3,
    max_entries: int | None = 6,
    batch: int = 2,
) -> GradcheckReport:
    """Gradient check of ``sum(scores * R)`` (plus the unsupervised loss when
    the config carries a reconstruction head) in eval mode, dropout off.

    Every parameter array is probed at up to ``max_entries`` seeded
    positions (all positions when ``None``).
    """
    rng = np.random.default_rng(seed)
    params = mdl.init_params(config, seed)
    for name, buf in params.buffers.items():
        if name.endswith("running_mean"):
            buf[...] = rng.normal(scale=0.1, size=buf.shape)
        else:
            buf[...] = rng.uniform(0.5, 2.0, size=buf.shape)
    for name, p in params.params.items():
        if name.endswith((".gamma", ".beta", ".bias")):
            p.value[...] += rng.normal(scale=0.1, size=p.shape)
    xs = [rng.normal(size=(length, config.input_dim)) for _ in range(batch)]
    rs = [rng.normal(size=(length, 2)) for _ in range(batch)]
    y = min(3, length)

    def evaluate(with_grad: bool):
        scores, cache = mdl.forward(params, config, xs, "eval")
        loss = float(sum((s * r).sum() for s, r in zip(scores, rs)))
        if not config.reconstruction:
            if with_grad:
                mdl.backward(params, config, cache, rs)
            return loss
        g_dec = []
        for i, (s, x) in enumerate(zip(scores, xs)):
            sel = select_keyframes(s, y)
            f, hc = mdl.reconstruct_head(params, config, cache.decoded[i], sel, x)
            lv = l_unsup(f, x[sel])
            loss += lv.value
            if with_grad:
                g_dec.append(mdl.reconstruct_head_backward(params, config, hc, lv.grad))
        if with_grad:
            mdl.backward(params, config, cache, rs, g_dec)
        return loss

    params.zero_grad()
    evaluate(True)
    grads = {k: p.grad.copy() for k, p in params.params.items()}
    arrays = {k: p.value for k, p in params.params.items()}
    return gradcheck(lambda: evaluate(False), arrays, grads, step=step, tolerance=tolerance,
                     max_entries=max_entries, seed=seed)

