"""Acceptance suite: one test per criterion, each recording a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py`` (lines are printed in the
terminal summary) or directly with ``python3 tests/test_acceptance.py``.
"""

from __future__ import annotations

import itertools
import math
import time

import numpy as np
import pytest

from fcsn import model as mdl
from fcsn import numcore as nc
from fcsn.dataio import SynthConfig, generate_synthetic
from fcsn.evalkit import prf
from fcsn.gradcheck import check_model
from fcsn.objective import ClassWeights, class_weights, default_keyframe_count, l_div, l_sum
from fcsn.pipeline import (
    kts_costs,
    kts_penalty,
    kts_segment,
    knapsack_select,
    predict_summary,
    scores_to_keyshot_summary,
)
from fcsn.train import (
    TrainConfig,
    predict_scores,
    selection_diversity,
    train_supervised,
    train_unsupervised,
)

RESULTS: dict[int, str] = {}


def record(number: int, title: str, ok: bool, detail: str):
    RESULTS[number] = f"[{'PASS' if ok else 'FAIL'}] criterion {number:2d} {title}: {detail}"
    print(RESULTS[number])
    assert ok, RESULTS[number]


# -- 1. gradient suite ------------------------------------------------------


def _layer_reports(rng):
    """Finite-difference reports for every layer primitive, all entries probed."""
    reports = {}

    def check(name, loss, arrays, grads):
        reports[name] = nc.gradcheck(loss, arrays, grads, step=1e-5, tolerance=1e-4)

    for tag, spec in {
        "conv": nc.ConvSpec(2, 3, 3, 1, 1, 1),
        "conv_strided_dilated": nc.ConvSpec(2, 3, 3, 2, 2, 2),
        "conv_1x1": nc.ConvSpec(3, 2, 1),
    }.items():
        x, w, b = rng.normal(size=(2 if tag != "conv_1x1" else 3, 11)), rng.normal(size=spec.weight_shape), rng.normal(
            size=spec.out_channels)
        r = rng.normal(size=(spec.out_channels, spec.out_length(11)))
        gx, gw, gb = nc.conv1d_backward(x, w, spec, r)
        check(tag, lambda: float((nc.conv1d_forward(x, w, b, spec) * r).sum()), {"x": x, "w": w, "b": b},
              {"x": gx, "w": gw, "b": gb})

    for tag, spec in {"tconv_k4s2": nc.ConvSpec(2, 3, 4, 2, 1), "tconv_k32s16": nc.ConvSpec(2, 2, 32, 16, 8)}.items():
        x, w, b = rng.normal(size=(spec.out_channels, 5)), rng.normal(size=spec.weight_shape), rng.normal(
            size=spec.in_channels)
        r = rng.normal(size=(spec.in_channels, spec.transposed_out_length(5)))
        gx, gw, gb = nc.tconv1d_backward(x, w, spec, r)
        check(tag, lambda: float((nc.tconv1d_forward(x, w, b, spec) * r).sum()), {"x": x, "w": w, "b": b},
              {"x": gx, "w": gw, "b": gb})

    for tag, (window, stride, pad) in {"maxpool_2_2": (2, 2, 0), "maxpool_3_1_pad1": (3, 1, 1)}.items():
        x = rng.permutation(36).reshape(3, 12).astype(float)  # distinct values: no ties under the probe step
        y, idx = nc.maxpool1d_forward(x, window, stride, pad)
        r = rng.normal(size=y.shape)
        check(tag, lambda: float((nc.maxpool1d_forward(x, window, stride, pad)[0] * r).sum()), {"x": x},
              {"x": nc.maxpool1d_backward(idx, r, x.shape[1])})

    x = rng.normal(size=(3, 9))
    x[np.abs(x) < 1e-2] = 0.5  # keep away from the kink
    r = rng.normal(size=x.shape)
    check("relu", lambda: float((nc.relu(x) * r).sum()), {"x": x}, {"x": nc.relu_backward(x, r)})

    x = rng.normal(size=(3, 9))
    _, mask = nc.dropout(x, 0.5, np.random.default_rng(3), "train")
    check("dropout_frozen_mask", lambda: float((x * mask * r).sum()), {"x": x}, {"x": nc.dropout_backward(mask, r)})

    a, b2 = rng.normal(size=(3, 9)), rng.normal(size=(3, 9))
    check("elementwise_add", lambda: float((nc.elementwise_add(a, b2) * r).sum()), {"a": a, "b": b2}, {"a": r, "b": r})

    x = rng.normal(size=(2, 6))
    r8 = rng.normal(size=(2, 48))
    check("bilinear_x8", lambda: float((nc.bilinear_upsample1d(x, 8) * r8).sum()), {"x": x},
          {"x": nc.bilinear_upsample1d_backward(r8, 8)})

    xs = [rng.normal(size=(3, 7)), rng.normal(size=(3, 5))]
    gamma, beta = rng.uniform(0.5, 1.5, 3), rng.normal(size=3)
    rs = [rng.normal(size=x.shape) for x in xs]
    rm, rv = rng.normal(size=3), rng.uniform(0.5, 2, 3)
    for mode in ("train", "eval"):
        ys, cache = nc.batchnorm1d(xs, gamma, beta, mode, rm.copy(), rv.copy())
        gxs, gg, gb = nc.batchnorm1d_backward(cache, gamma, rs)

        def loss(mode=mode):
            out, _ = nc.batchnorm1d(xs, gamma, beta, mode, rm.copy(), rv.copy())
            return float(sum((o * q).sum() for o, q in zip(out, rs)))

        check(f"batchnorm_{mode}", loss, {"x0": xs[0], "x1": xs[1], "gamma": gamma, "beta": beta},
              {"x0": gxs[0], "x1": gxs[1], "gamma": gg, "beta": gb})
    return reports


def test_c01_gradient_suite():
    start = time.perf_counter()
    layers = _layer_reports(np.random.default_rng(0))
    models = {}
    for variant, upsampler, recon in [("fcn", "deconv", False), ("fcn", "deconv", True),
                                      ("deeplab", "deconv", False), ("deeplab", "bilinear", False),
                                      ("deeplab", "deconv", True)]:
        cfg = mdl.ModelConfig(input_dim=8, variant=variant, upsampler=upsampler, reconstruction=recon)
        models[f"{variant}/{upsampler}{'/recon' if recon else ''}"] = check_model(cfg, length=32, seed=0)
    elapsed = time.perf_counter() - start
    layer_max = max(r.max_error for r in layers.values())
    model_max = max(r.max_error for r in models.values())
    ok = all(r.passed for r in layers.values()) and all(r.passed for r in models.values()) and elapsed < 120
    record(1, "gradient suite", ok,
           f"{len(layers)} layer checks max rel err {layer_max:.2e} (< 1e-4), {len(models)} model checks "
           f"max rel err {model_max:.2e} (< 1e-3), {elapsed:.1f} s (< 120 s)")


# -- 2. adjointness ---------------------------------------------------------


def test_c02_adjointness():
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(50):
        cin, cout = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        k, s, d = int(rng.integers(1, 6)), int(rng.integers(1, 4)), int(rng.integers(1, 3))
        p = int(rng.integers(0, k))
        spec = nc.ConvSpec(cin, cout, k, s, p, d)
        # pick the conv output length; the input length is the one tconv maps it back to
        l_out = int(rng.integers(1, 12))
        length = spec.transposed_out_length(l_out)
        while length < 1 or spec.out_length(length) != l_out:
            l_out += 1
            length = spec.transposed_out_length(l_out)
        w = rng.normal(size=spec.weight_shape)
        x, g = rng.normal(size=(cin, length)), rng.normal(size=(cout, l_out))
        lhs = float((nc.conv1d_forward(x, w, np.zeros(cout), spec) * g).sum())
        rhs = float((x * nc.tconv1d_forward(g, w, np.zeros(cin), spec)).sum())
        worst = max(worst, abs(lhs - rhs))
    record(2, "tconv/conv adjointness", worst < 1e-10, f"50 instances, max |<conv x,g> - <x,tconv g>| = {worst:.2e}")


# -- 3. shape contract ------------------------------------------------------


def test_c03_shape_contract():
    rng = np.random.default_rng(3)
    bad = []
    for variant in ("fcn", "deeplab"):
        cfg = mdl.ModelConfig(input_dim=16, variant=variant)
        params = mdl.init_params(cfg, 0)
        for t in (32, 100, 231, 320, 640):
            x = rng.normal(size=(t, 16))
            for sample_length in (0, 320):
                if predict_scores(params, cfg, x, sample_length).shape != (t, 2):
                    bad.append((variant, t, sample_length))
    data = SynthConfig(n_videos=4, t_min=160, t_max=320, dim=16, salient_dims=4, seed=3)
    corpus = [v.record("keyframes") for v in generate_synthetic(data)]
    runs = []
    cfg = mdl.ModelConfig(input_dim=16)
    init = mdl.init_params(cfg, 0)
    for t_s in (320, 640):
        rep = train_supervised(corpus, cfg, TrainConfig(epochs=3, sample_length=t_s, batch_size=2))
        shapes = all(predict_scores(rep.params, cfg, r.features, t_s).shape == (r.length, 2) for r in corpus)
        runs.append(bool(np.all(np.isfinite(rep.epoch_losses))) and not rep.params.values_equal(init) and shapes)
    record(3, "shape contract", not bad and all(runs),
           f"20 (variant, T, mode) predictions at original length, mismatches {bad}; T_s=320/640 training ok {runs}")


# -- 4-6. loss fixtures -----------------------------------------------------


def _ce_direct(scores, labels):
    total = 0.0
    for s, c in zip(scores, labels):
        m = max(s)
        total += -(s[c] - (m + math.log(sum(math.exp(v - m) for v in s))))
    return total / len(labels)


def test_c04_weighted_cross_entropy():
    fixture = l_sum(np.zeros((2, 2)), np.array([0, 1]), ClassWeights(2.0, 0.5)).value
    err_fixture = abs(fixture - 1.25 * math.log(2))
    rng = np.random.default_rng(4)
    worst = 0.0
    for _ in range(100):
        t = int(rng.integers(1, 40))
        scores, labels = rng.normal(scale=3, size=(t, 2)), rng.integers(0, 2, t)
        worst = max(worst, abs(l_sum(scores, labels, ClassWeights(1.0, 1.0)).value - _ce_direct(scores, labels)))
    record(4, "weighted cross-entropy", err_fixture < 1e-12 and worst < 1e-12,
           f"fixture err {err_fixture:.1e}, unweighted max err {worst:.1e} over 100 instances")


def test_c05_median_frequency():
    w = class_weights([np.array([1, 1, 0, 0, 0, 0, 0, 0, 0, 0])])
    record(5, "median-frequency weights", (w.w0, w.w1) == (0.625, 2.5), f"(w0, w1) = ({w.w0!r}, {w.w1!r})")


def test_c06_diversity_loss():
    f = np.array([[1.0, 0.0], [0.0, 1.0], [1 / math.sqrt(2), 1 / math.sqrt(2)]])
    err = abs(l_div(f).value - math.sqrt(2) / 3)
    rng = np.random.default_rng(6)
    bounded = invariant = True
    for _ in range(100):
        y, d = int(rng.integers(2, 8)), int(rng.integers(1, 6))
        f = rng.normal(size=(y, d))
        v = l_div(f).value
        bounded &= -1 - 1e-12 <= v <= 1 + 1e-12
        g = f.copy()
        g[int(rng.integers(y))] *= rng.uniform(0.01, 100)
        invariant &= abs(l_div(g).value - v) < 1e-12
    record(6, "diversity loss", err < 1e-12 and bounded and invariant,
           f"fixture err {err:.1e}, bounds hold {bounded}, rescaling invariance {invariant} (100 instances)")


# -- 7-9. combinatorial oracles ---------------------------------------------


def _knapsack_brute(values, weights, cap):
    best_key, best = None, ()
    n = len(values)
    for mask in range(1 << n):
        subset = tuple(i for i in range(n) if mask >> i & 1)
        w = sum(weights[i] for i in subset)
        if w > cap:
            continue
        v = sum(values[i] for i in subset)
        key = (-round(v, 9), w, [0 if i in subset else 1 for i in range(n)])
        if best_key is None or key < best_key:
            best_key, best = key, subset
    return sorted(best)


def test_c07_knapsack():
    rng = np.random.default_rng(7)
    mismatches = 0
    for _ in range(100):
        n = int(rng.integers(1, 16))
        values = rng.integers(0, 20, n).astype(float)
        weights = rng.integers(1, 12, n)
        cap = int(rng.integers(0, weights.sum() + 1))
        got = knapsack_select(values, weights, cap).tolist()
        want = _knapsack_brute(values, weights, cap)
        ok_value = math.isclose(values[got].sum(), values[want].sum()) and weights[got].sum() <= cap
        mismatches += got != want or not ok_value
    record(7, "knapsack vs enumeration", mismatches == 0, f"{mismatches} mismatches over 100 instances (n <= 15)")


def _scatter(x):
    return float(((x - x.mean(axis=0)) ** 2).sum())


def test_c08_kts():
    rng = np.random.default_rng(8)
    recovered = 0
    for _ in range(10):
        t = int(rng.integers(20, 61))
        n_seg = int(rng.integers(2, 6))
        sizes = rng.multinomial(t - 4 * n_seg, np.ones(n_seg) / n_seg) + 4
        cps = tuple(int(c) for c in np.cumsum(sizes)[:-1])
        centers = rng.normal(scale=2.0, size=(n_seg, 8))
        x = np.repeat(centers, sizes, axis=0)
        recovered += kts_segment(x).change_points == cps
    x = rng.normal(size=(40, 4))
    infinite = kts_segment(x, penalty=1e12).change_points == ()
    worst = 0.0
    for _ in range(10):
        t = int(rng.integers(2, 13))
        x = rng.normal(size=(t, 3))
        costs, _ = kts_costs(x, t - 1)
        for m in range(t):
            brute = min(sum(_scatter(x[a:b]) for a, b in zip((0, *c), (*c, t)))
                        for c in itertools.combinations(range(1, t), m))
            worst = max(worst, abs(costs[m] - brute))
        # the penalized choice also matches exhaustive search
        pen = [costs[m] + kts_penalty(m, t, 1.0) for m in range(t)]
        worst = max(worst, abs(min(pen) - pen[len(kts_segment(x, t - 1, 1.0).change_points)]))
    record(8, "KTS oracles", recovered == 10 and infinite and worst < 1e-9,
           f"planted recovery {recovered}/10, lambda->inf gives no change points {infinite}, "
           f"DP vs exhaustive max err {worst:.1e} (T <= 12)")


def test_c09_metric():
    rng = np.random.default_rng(9)
    mismatches = 0
    for _ in range(100):
        t = int(rng.integers(1, 60))
        o, g = rng.integers(0, 2, t), rng.integers(0, 2, t)
        so, sg = {i for i in range(t) if o[i]}, {i for i in range(t) if g[i]}
        p = len(so & sg) / len(so) if so else 0.0
        r = len(so & sg) / len(sg) if sg else 0.0
        f = 200 * p * r / (p + r) if p + r else 0.0
        res = prf(o, g)
        mismatches += not (res.precision == p and res.recall == r and abs(res.fscore - f) < 1e-9)
    o, g = np.zeros(100, int), np.zeros(100, int)
    o[:20], g[5:35] = 1, 1
    fix = prf(o, g)
    ok = mismatches == 0 and (fix.precision, fix.recall, fix.fscore) == (0.75, 0.5, 60.0)
    record(9, "overlap metric", ok, f"{mismatches} mismatches over 100 pairs, fixture {fix.precision}, {fix.recall}, "
                                    f"{fix.fscore}")


# -- 10, 11, 13. end-to-end runs --------------------------------------------

CORPUS = SynthConfig(n_videos=80, t_min=160, t_max=320, dim=64, noise_std=0.3, seed=0)
EPOCHS = 30


def _random_baseline(video, seg, rng, n=100):
    return float(np.mean([prf(scores_to_keyshot_summary(rng.uniform(size=seg.length), seg), video.keyshots).fscore
                          for _ in range(n)]))


def supervised_run():
    videos = generate_synthetic(CORPUS)
    train, test = [v.record("keyframes") for v in videos[:60]], videos[60:]
    cfg = mdl.ModelConfig(input_dim=64)
    start = time.perf_counter()
    rep = train_supervised(train, cfg, TrainConfig(epochs=EPOCHS, learning_rate=1e-3, momentum=0.9, batch_size=5))
    scores_f, scores_r = [], []
    rng = np.random.default_rng(10)
    for v in test:
        seg = kts_segment(v.features.astype(np.float64))
        s = predict_scores(rep.params, cfg, v.features)
        scores_f.append(prf(predict_summary(s, v.features, seg=seg), v.keyshots).fscore)
        scores_r.append(_random_baseline(v, seg, rng))
    return {"losses": rep.epoch_losses, "f": scores_f, "random": scores_r, "seconds": time.perf_counter() - start}


def unsupervised_run():
    videos = generate_synthetic(CORPUS)
    train, test = videos[:60], videos[60:]
    cfg = mdl.ModelConfig(input_dim=64, reconstruction=True)
    tcfg = TrainConfig(epochs=EPOCHS, mode="unsupervised")
    init = mdl.init_params(cfg, tcfg.seed)
    rep = train_unsupervised(train, cfg, tcfg)
    rng = np.random.default_rng(11)
    before, after, rand = [], [], []
    for v in test:
        x = v.features.astype(np.float64)
        y = default_keyframe_count(len(x))
        before.append(selection_diversity(init, cfg, x))
        after.append(selection_diversity(rep.params, cfg, x))
        rand.append(float(np.mean([l_div(x[np.sort(rng.choice(len(x), y, replace=False))]).value
                                   for _ in range(100)])))
    return {"losses": rep.epoch_losses, "before": before, "after": after, "random": rand}


@pytest.fixture(scope="module")
def sup():
    return supervised_run()


@pytest.fixture(scope="module")
def unsup():
    return unsupervised_run()


def test_c10_supervised_end_to_end(sup):
    losses = sup["losses"]
    drop = 1 - losses[-1] / losses[0]
    f, r = float(np.mean(sup["f"])), float(np.mean(sup["random"]))
    ok = drop >= 0.5 and f >= 2 * r and sup["seconds"] < 900
    record(10, "supervised end-to-end", ok,
           f"loss {losses[0]:.4f} -> {losses[-1]:.4f} (drop {100 * drop:.1f}% >= 50%), held-out F {f:.2f} vs "
           f"random {r:.2f} (ratio {f / r:.2f} >= 2), {sup['seconds']:.0f} s (< 900 s)")


def test_c11_unsupervised_end_to_end(unsup):
    b, a, r = (float(np.mean(unsup[k])) for k in ("before", "after", "random"))
    ok = a <= b and a <= r
    record(11, "unsupervised end-to-end", ok,
           f"held-out selected-frame cosine similarity: trained {a:.4f}, init {b:.4f} (trained <= init: {a <= b}), "
           f"uniform-random {r:.4f} (trained <= random: {a <= r})")


# -- 12. batch invariance ---------------------------------------------------


def test_c12_batch_invariance():
    rng = np.random.default_rng(12)
    failures = 0
    checked = 0
    for variant, recon in (("fcn", False), ("fcn", True), ("deeplab", False), ("deeplab", True)):
        cfg = mdl.ModelConfig(input_dim=16, variant=variant, reconstruction=recon)
        params = mdl.init_params(cfg, 1)
        for name, buf in params.buffers.items():
            buf[...] = rng.uniform(0.5, 1.5, buf.shape) if name.endswith("var") else rng.normal(0, 0.1, buf.shape)
        xs = [rng.normal(size=(int(l), 16)) for l in rng.choice([32, 64, 96, 160], size=5)]
        solo = [mdl.forward(params, cfg, [x], "eval") for x in xs]
        for _ in range(4):
            order = rng.permutation(len(xs))[: int(rng.integers(2, len(xs) + 1))]
            scores, cache = mdl.forward(params, cfg, [xs[i] for i in order], "eval")
            for j, i in enumerate(order):
                checked += 1
                failures += scores[j].tobytes() != solo[i][0][0].tobytes()
                if recon:
                    failures += cache.decoded[j].tobytes() != solo[i][1].decoded[0].tobytes()
    record(12, "batch invariance", failures == 0, f"{checked} per-video outputs compared bit-exactly, {failures} differ")


# -- 13. determinism --------------------------------------------------------


def test_c13_determinism(sup, unsup):
    sup2, unsup2 = supervised_run(), unsupervised_run()
    same_sup = sup2["losses"] == sup["losses"] and sup2["f"] == sup["f"] and sup2["random"] == sup["random"]
    same_unsup = all(unsup2[k] == unsup[k] for k in ("losses", "before", "after", "random"))
    record(13, "determinism", same_sup and same_unsup,
           f"supervised curve and F-scores identical {same_sup}, unsupervised curve and similarities identical "
           f"{same_unsup}")


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
