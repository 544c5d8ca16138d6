"""Keyshot overlap metrics: precision, recall and F-score."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Mapping, Sequence

import numpy as np

from .pipeline import Summary


@dataclass(frozen=True)
class EvalResult:
    precision: float
    recall: float
    fscore: float  # percent


def _selection(s) -> np.ndarray:
    sel = s.selection if isinstance(s, Summary) else np.asarray(s)
    return sel.astype(bool)


def fscore(precision: float, recall: float) -> float:
    if precision + recall == 0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall) * 100.0


def prf(predicted, ground_truth) -> EvalResult:
    """Precision/recall of the temporal overlap between two frame selections."""
    o, g = _selection(predicted), _selection(ground_truth)
    if o.shape != g.shape:
        raise ValueError(f"summary lengths differ: {o.shape[0]} vs {g.shape[0]}")
    overlap = int(np.count_nonzero(o & g))
    n_o, n_g = int(o.sum()), int(g.sum())
    p = overlap / n_o if n_o else 0.0
    r = overlap / n_g if n_g else 0.0
    return EvalResult(p, r, fscore(p, r))


def multi_gt(predicted, ground_truths: Sequence, agg: str = "max") -> EvalResult:
    """Score against several annotators.

    ``agg="mean"`` averages P, R and F over annotators; ``agg="max"``
    reports the annotator with the best F (first one on ties).
    """
    if not ground_truths:
        raise ValueError("need at least one ground-truth summary")
    results = [prf(predicted, g) for g in ground_truths]
    if agg == "max":
        return max(results, key=lambda r: r.fscore)
    if agg == "mean":
        return EvalResult(
            float(np.mean([r.precision for r in results])),
            float(np.mean([r.recall for r in results])),
            float(np.mean([r.fscore for r in results])),
        )
    raise ValueError(f"unknown aggregation {agg!r}")


@dataclass
class CorpusReport:
    per_video: dict[str, EvalResult]
    mean: EvalResult

    def table(self) -> str:
        lines = [f"{'video':24s} {'precision':>10s} {'recall':>10s} {'fscore':>8s}"]
        for vid, r in self.per_video.items():
            lines.append(f"{vid:24s} {r.precision:10.4f} {r.recall:10.4f} {r.fscore:8.2f}")
        m = self.mean
        lines.append(f"{'MEAN':24s} {m.precision:10.4f} {m.recall:10.4f} {m.fscore:8.2f}")
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        payload = {"videos": {k: asdict(v) for k, v in self.per_video.items()}, "mean": asdict(self.mean)}
        return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def evaluate_corpus(
    predictions: Mapping[str, object],
    annotations: Mapping[str, Sequence],
    agg: str = "max",
) -> CorpusReport:
    """Per-video scores keyed by id (sorted) and their corpus mean."""
    if set(predictions) != set(annotations):
        missing = sorted(set(predictions) ^ set(annotations))
        raise ValueError(f"prediction and annotation ids differ: {missing}")
    if not predictions:
        raise ValueError("empty corpus")
    per_video = {vid: multi_gt(predictions[vid], annotations[vid], agg) for vid in sorted(predictions)}
    rs = list(per_video.values())
    mean = EvalResult(
        float(np.mean([r.precision for r in rs])),
        float(np.mean([r.recall for r in rs])),
        float(np.mean([r.fscore for r in rs])),
    )
    return CorpusReport(per_video, mean)
