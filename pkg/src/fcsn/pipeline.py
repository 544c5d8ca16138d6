"""Temporal segmentation, budgeted keyshot selection and summary conversions."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

DEFAULT_BUDGET = 0.15
DEFAULT_PENALTY = 1.0


@dataclass(frozen=True)
class Segmentation:
    """Change points ``0 < c_1 < ... < c_m < length`` splitting ``[0, length)``."""

    change_points: tuple[int, ...]
    length: int

    def __post_init__(self):
        object.__setattr__(self, "change_points", tuple(int(c) for c in self.change_points))
        if self.length < 1:
            raise ValueError("segmentation of an empty sequence")
        prev = 0
        for c in self.change_points:
            if not prev < c < self.length:
                raise ValueError(f"change points must be strictly increasing inside (0, {self.length})")
            prev = c

    @property
    def bounds(self) -> np.ndarray:
        return np.array((0, *self.change_points, self.length))

    def intervals(self) -> list[tuple[int, int]]:
        b = self.bounds
        return [(int(b[i]), int(b[i + 1])) for i in range(len(b) - 1)]

    def lengths(self) -> np.ndarray:
        return np.diff(self.bounds)

    def __len__(self):
        return len(self.change_points) + 1


@dataclass
class Summary:
    """Binary frame selection; ``fallback`` marks the trimmed-interval escape hatch."""

    selection: np.ndarray
    fallback: bool = False

    def __post_init__(self):
        sel = np.asarray(self.selection)
        if sel.ndim != 1 or not np.all((sel == 0) | (sel == 1)):
            raise ValueError("a summary is a 1D vector of 0/1 entries")
        self.selection = sel.astype(np.uint8)

    def __len__(self):
        return len(self.selection)

    @property
    def n_selected(self) -> int:
        return int(self.selection.sum())

    def intervals(self) -> list[tuple[int, int]]:
        """Maximal runs of selected frames as half-open ``(start, end)`` pairs."""
        padded = np.concatenate([[0], self.selection.astype(np.int8), [0]])
        edges = np.flatnonzero(np.diff(padded))
        return [(int(a), int(b)) for a, b in zip(edges[::2], edges[1::2])]


def capacity(length: int, fraction: float = DEFAULT_BUDGET) -> int:
    if not 0 < fraction <= 1:
        raise ValueError(f"budget fraction must be in (0, 1], got {fraction}")
    # guard against 0.29 * 100 == 28.999999999999996
    return int(math.floor(fraction * length + 1e-9))


# -- kernel temporal segmentation --------------------------------------------


def default_max_segments(length: int) -> int:
    return min(length - 1, length // 10 + 5)


def segment_costs(features: np.ndarray) -> np.ndarray:
    """``cost[a, b]`` = within-segment scatter of frames ``[a, b)`` under a linear kernel.

    Entries with ``b <= a`` are ``inf``.
    """
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or len(x) < 1:
        raise ValueError("features must be a non-empty (T, D) array")
    t = len(x)
    gram = x @ x.T
    diag = np.concatenate([[0.0], np.cumsum(np.diag(gram))])
    block = np.zeros((t + 1, t + 1))
    block[1:, 1:] = np.cumsum(np.cumsum(gram, axis=0), axis=1)
    a = np.arange(t + 1)[:, None]
    b = np.arange(t + 1)[None, :]
    inner = block[b, b] - block[a, b] - block[b, a] + block[a, a]
    with np.errstate(divide="ignore", invalid="ignore"):
        cost = (diag[b] - diag[a]) - inner / (b - a)
    cost = np.maximum(cost, 0.0)
    cost[b <= a] = np.inf
    return cost


def kts_costs(features: np.ndarray, max_segments: int):
    """Optimal total scatter for every change-point count ``0..max_segments``.

    Returns ``(costs, change_points)`` where ``change_points[m]`` is the
    optimal tuple of ``m`` change points.
    """
    cost = segment_costs(features)
    t = cost.shape[0] - 1
    if max_segments < 0:
        raise ValueError("max_segments must be non-negative")
    if max_segments >= t:
        raise ValueError(f"max_segments={max_segments} must be smaller than T={t}")
    # best[m, l]: cheapest split of the first l frames with m change points
    best = np.full((max_segments + 1, t + 1), np.inf)
    back = np.zeros((max_segments + 1, t + 1), dtype=np.int64)
    best[0] = cost[0]
    for m in range(1, max_segments + 1):
        total = best[m - 1][:, None] + cost
        back[m] = np.argmin(total, axis=0)
        best[m] = total[back[m], np.arange(t + 1)]
    costs = best[:, t].copy()
    solutions = []
    for m in range(max_segments + 1):
        cps, cur = [], t
        for k in range(m, 0, -1):
            cur = int(back[k, cur])
            cps.append(cur)
        solutions.append(tuple(reversed(cps)))
    return costs, solutions


def kts_penalty(m: int, length: int, penalty: float) -> float:
    return 0.0 if m == 0 else penalty * m * (math.log(length / m) + 1.0)


def kts_segment(
    features: np.ndarray,
    max_segments: int | None = None,
    penalty: float = DEFAULT_PENALTY,
) -> Segmentation:
    """Kernel temporal segmentation with a linear kernel.

    Picks the change-point count ``m`` minimising
    ``scatter(m) + penalty * m * (log(T / m) + 1)``.
    """
    t = len(features)
    if t < 1:
        raise ValueError("cannot segment an empty sequence")
    if max_segments is None:
        max_segments = default_max_segments(t)
    costs, solutions = kts_costs(features, max_segments)
    objective = [costs[m] + kts_penalty(m, t, penalty) for m in range(len(costs))]
    m = int(np.argmin(objective))
    return Segmentation(solutions[m], t)


# -- knapsack ----------------------------------------------------------------


def knapsack_select(values: Sequence[float], weights: Sequence[int], capacity: int) -> np.ndarray:
    """Exact 0/1 knapsack over integer capacity.

    Among optimal subsets the lighter one wins, then the lexicographically
    smallest index set.  Returns the chosen indices in ascending order.
    """
    v = np.asarray(values, dtype=np.float64)
    w = np.asarray(weights)
    n = len(v)
    if w.shape != (n,):
        raise ValueError("values and weights must have the same length")
    if n and (np.any(v < 0) or not np.all(np.isfinite(v))):
        raise ValueError("knapsack values must be finite and non-negative")
    if n and (np.any(w < 1) or not np.all(w == np.round(w))):
        raise ValueError("knapsack weights must be positive integers")
    capacity = int(capacity)
    if capacity < 0:
        raise ValueError("capacity must be non-negative")
    w = w.astype(np.int64)
    # suffix tables: best (value, weight) using items i..n-1 within capacity c
    best_v = np.zeros((n + 1, capacity + 1))
    best_w = np.zeros((n + 1, capacity + 1), dtype=np.int64)
    take = np.zeros((n, capacity + 1), dtype=bool)
    for i in range(n - 1, -1, -1):
        best_v[i], best_w[i] = best_v[i + 1], best_w[i + 1]
        wi = int(w[i])
        if wi > capacity:
            continue
        tv = best_v[i + 1, :capacity + 1 - wi] + v[i]
        tw = best_w[i + 1, :capacity + 1 - wi] + wi
        sv, sw = best_v[i + 1, wi:], best_w[i + 1, wi:]
        better = (tv > sv) | ((tv == sv) & (tw <= sw))
        take[i, wi:] = better
        best_v[i, wi:] = np.where(better, tv, sv)
        best_w[i, wi:] = np.where(better, tw, sw)
    chosen, c = [], capacity
    for i in range(n):
        if take[i, c]:
            chosen.append(i)
            c -= int(w[i])
    return np.array(chosen, dtype=np.int64)


# -- conversions -------------------------------------------------------------


def _check_length(name: str, arr, seg: Segmentation):
    if len(arr) != seg.length:
        raise ValueError(f"{name} has length {len(arr)}, segmentation covers {seg.length}")


def _mark(seg: Segmentation, chosen) -> np.ndarray:
    sel = np.zeros(seg.length, dtype=np.uint8)
    ivs = seg.intervals()
    for i in chosen:
        a, b = ivs[i]
        sel[a:b] = 1
    return sel


def scores_to_keyshot_summary(scores, seg: Segmentation, budget: float = DEFAULT_BUDGET) -> Summary:
    """Knapsack over intervals valued by their summed frame scores.

    Summing is the same as assigning each frame its interval mean and
    adding those up.  Intervals with a non-positive total are worth 0.
    """
    scores = np.asarray(scores, dtype=np.float64)
    _check_length("scores", scores, seg)
    values = np.array([max(scores[a:b].sum(), 0.0) for a, b in seg.intervals()])
    chosen = knapsack_select(values, seg.lengths(), capacity(seg.length, budget))
    return Summary(_mark(seg, chosen))


def keyshots_to_keyframes(summary, scores, seg: Segmentation) -> np.ndarray:
    """One keyframe per selected interval, at its highest-scoring frame."""
    sel = np.asarray(summary.selection if isinstance(summary, Summary) else summary)
    scores = np.asarray(scores, dtype=np.float64)
    _check_length("summary", sel, seg)
    _check_length("scores", scores, seg)
    labels = np.zeros(seg.length, dtype=np.uint8)
    for a, b in seg.intervals():
        if sel[a:b].any():
            labels[a + int(np.argmax(scores[a:b]))] = 1
    return labels


def keyframes_to_keyshots(keyframes, seg: Segmentation, budget: float = DEFAULT_BUDGET) -> Summary:
    """Intervals ranked by keyframe density, packed into the budget by knapsack.

    If intervals hold keyframes but none of them fits the budget, the
    densest one is trimmed to ``capacity`` frames centred on its first
    keyframe and the result is flagged as a fallback.
    """
    kf = np.asarray(keyframes)
    _check_length("keyframes", kf, seg)
    cap = capacity(seg.length, budget)
    ivs = seg.intervals()
    counts = np.array([int(np.count_nonzero(kf[a:b])) for a, b in ivs])
    lengths = seg.lengths()
    candidates = np.flatnonzero(counts)
    if candidates.size == 0:
        return Summary(np.zeros(seg.length, dtype=np.uint8))
    density = counts[candidates] / lengths[candidates]
    chosen = knapsack_select(density, lengths[candidates], cap)
    if chosen.size or cap == 0:
        return Summary(_mark(seg, candidates[chosen]))
    top = candidates[int(np.argmax(density))]
    a, b = ivs[top]
    first = a + int(np.flatnonzero(kf[a:b])[0])
    start = min(max(first - cap // 2, a), b - cap)
    sel = np.zeros(seg.length, dtype=np.uint8)
    sel[start:start + cap] = 1
    return Summary(sel, fallback=True)


def predict_summary(
    scores: np.ndarray,
    features: np.ndarray,
    budget: float = DEFAULT_BUDGET,
    max_segments: int | None = None,
    penalty: float = DEFAULT_PENALTY,
    seg: Segmentation | None = None,
) -> Summary:
    """Keyshot summary from per-frame class scores at the original video length.

    A frame is a keyframe when its class-1 score is at least its class-0
    score.
    """
    scores = np.asarray(scores)
    if scores.ndim != 2 or scores.shape[1] != 2 or len(scores) != len(features):
        raise ValueError("scores must be (T, 2) with T equal to the number of feature frames")
    keyframes = (scores[:, 1] >= scores[:, 0]).astype(np.uint8)
    if seg is None:
        seg = kts_segment(features, max_segments, penalty)
    return keyframes_to_keyshots(keyframes, seg, budget)
