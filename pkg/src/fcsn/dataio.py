"""Video records on disk and a synthetic corpus generator.

Record file layout (little-endian)::

    magic     4 bytes  b"FCSN"
    version   u32
    T, D      u32, u32
    kind      u8       0 none, 1 keyframes, 2 scores, 3 keyshots
    count     u8       annotators (1 for keyframes, 0 for none)
    features  T*D float32, frame-major
    payload   keyframes/keyshots: count*T uint8; scores: count*T float32

A UTF-8 JSON sidecar ``<file>.json`` carries the id and free-form metadata.
"""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .pipeline import Segmentation, keyshots_to_keyframes, scores_to_keyshot_summary

MAGIC = b"FCSN"
VERSION = 1
KINDS = {"none": 0, "keyframes": 1, "scores": 2, "keyshots": 3}
_KIND_NAMES = {v: k for k, v in KINDS.items()}
_HEADER = struct.Struct("<4sIIIBB")


class RecordFormatError(ValueError):
    """A record file or CSV fixture is malformed."""


@dataclass
class VideoRecord:
    id: str
    features: np.ndarray  # (T, D) float32
    kind: str = "none"
    annotation: np.ndarray | None = None  # (count, T)
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float32)
        if self.features.ndim != 2 or min(self.features.shape) < 1:
            raise RecordFormatError("features must be a non-empty (T, D) array")
        if self.kind not in KINDS:
            raise RecordFormatError(f"unknown annotation kind {self.kind!r}")
        if self.kind == "none":
            self.annotation = None
            return
        ann = np.asarray(self.annotation)
        if ann.ndim == 1:
            ann = ann[None, :]
        if ann.ndim != 2 or ann.shape[1] != self.length:
            raise RecordFormatError(f"annotation shape {ann.shape} does not match T={self.length}")
        if self.kind == "keyframes" and ann.shape[0] != 1:
            raise RecordFormatError("keyframe annotations hold exactly one sequence")
        if not 1 <= ann.shape[0] <= 255:
            raise RecordFormatError("annotator count must be in [1, 255]")
        if self.kind == "scores":
            ann = ann.astype(np.float32)
        else:
            if not np.all((ann == 0) | (ann == 1)):
                raise RecordFormatError("binary annotations must be 0/1")
            ann = ann.astype(np.uint8)
        self.annotation = ann

    @property
    def length(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def labels(self) -> np.ndarray:
        if self.kind != "keyframes":
            raise ValueError(f"record {self.id!r} has no keyframe labels")
        return self.annotation[0]

    def __eq__(self, other):
        if not isinstance(other, VideoRecord):
            return NotImplemented
        same_ann = (self.annotation is None and other.annotation is None) or (
            self.annotation is not None and other.annotation is not None
            and self.annotation.dtype == other.annotation.dtype
            and self.annotation.shape == other.annotation.shape
            and self.annotation.tobytes() == other.annotation.tobytes()
        )
        return (
            self.id == other.id and self.kind == other.kind and self.metadata == other.metadata
            and self.features.shape == other.features.shape
            and self.features.tobytes() == other.features.tobytes() and same_ann
        )


def _sidecar(path: Path) -> Path:
    return path.with_name(path.name + ".json")


def save_record(path, record: VideoRecord):
    path = Path(path)
    count = 0 if record.annotation is None else record.annotation.shape[0]
    header = _HEADER.pack(MAGIC, VERSION, record.length, record.dim, KINDS[record.kind], count)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(record.features.astype("<f4").tobytes())
        if record.annotation is not None:
            dtype = "<f4" if record.kind == "scores" else "u1"
            fh.write(record.annotation.astype(dtype).tobytes())
    sidecar = {"id": record.id, "metadata": record.metadata}
    _sidecar(path).write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_record(path) -> VideoRecord:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise RecordFormatError(f"{path}: truncated header")
    magic, version, t, d, kind, count = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise RecordFormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise RecordFormatError(f"{path}: unsupported version {version}")
    if kind not in _KIND_NAMES:
        raise RecordFormatError(f"{path}: unknown annotation kind {kind}")
    kind_name = _KIND_NAMES[kind]
    item = {"none": 0, "keyframes": 1, "scores": 4, "keyshots": 1}[kind_name]
    expected = _HEADER.size + 4 * t * d + item * count * t
    if len(raw) != expected:
        raise RecordFormatError(f"{path}: expected {expected} bytes, found {len(raw)}")
    off = _HEADER.size
    features = np.frombuffer(raw, dtype="<f4", count=t * d, offset=off).reshape(t, d).astype(np.float32)
    off += 4 * t * d
    annotation = None
    if kind_name != "none":
        dtype = "<f4" if kind_name == "scores" else "u1"
        annotation = np.frombuffer(raw, dtype=dtype, count=count * t, offset=off).reshape(count, t).copy()
    meta = {"id": path.stem, "metadata": {}}
    if _sidecar(path).exists():
        meta = json.loads(_sidecar(path).read_text(encoding="utf-8"))
    return VideoRecord(meta["id"], features, kind_name, annotation, meta.get("metadata", {}))


def load_corpus(directory) -> list[VideoRecord]:
    """Every ``*.fcsn`` record under ``directory``, sorted by file name."""
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"no such corpus directory: {directory}")
    return [load_record(p) for p in sorted(directory.glob("*.fcsn"))]


def load_csv(path, video_id: str | None = None) -> VideoRecord:
    """One row per frame.  With a header row, a ``label`` column becomes
    keyframe labels and ``score`` columns become annotator scores; every
    other column is a feature."""
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows:
        raise RecordFormatError(f"{path}: empty CSV")
    try:
        [float(v) for v in rows[0]]
        header = None
    except ValueError:
        header, rows = [h.strip() for h in rows[0]], rows[1:]
    try:
        table = np.array([[float(v) for v in r] for r in rows], dtype=np.float64)
    except ValueError as exc:
        raise RecordFormatError(f"{path}: non-numeric cell ({exc})") from None
    if table.ndim != 2 or len(table) == 0:
        raise RecordFormatError(f"{path}: ragged or empty table")
    vid = video_id or path.stem
    if header is None:
        return VideoRecord(vid, table)
    if len(header) != table.shape[1]:
        raise RecordFormatError(f"{path}: header has {len(header)} columns, rows have {table.shape[1]}")
    label_cols = [i for i, h in enumerate(header) if h == "label"]
    score_cols = [i for i, h in enumerate(header) if h.startswith("score")]
    feat_cols = [i for i in range(len(header)) if i not in label_cols + score_cols]
    if label_cols and score_cols:
        raise RecordFormatError(f"{path}: use either a label column or score columns, not both")
    feats = table[:, feat_cols]
    if label_cols:
        return VideoRecord(vid, feats, "keyframes", table[:, label_cols[0]].astype(np.uint8))
    if score_cols:
        return VideoRecord(vid, feats, "scores", table[:, score_cols].T)
    return VideoRecord(vid, feats)


# -- synthetic corpus -------------------------------------------------------


@dataclass(frozen=True)
class SynthConfig:
    n_videos: int = 80
    t_min: int = 160
    t_max: int = 320
    dim: int = 64
    seg_min: int = 4
    seg_max: int = 10
    key_fraction: float = 0.25
    noise_std: float = 0.3
    salient_dims: int = 8
    score_jitter: float = 0.05
    min_segment_length: int = 8
    budget: float = 0.15
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.key_fraction < 1:
            raise ValueError("key_fraction must be in (0, 1)")
        if self.noise_std < 0 or self.score_jitter < 0:
            raise ValueError("noise_std and score_jitter must be non-negative")
        if not 1 <= self.seg_min <= self.seg_max:
            raise ValueError("need 1 <= seg_min <= seg_max")
        if self.key_fraction * self.seg_min < 1:
            raise ValueError("key_fraction * seg_min < 1: some videos would have no key segment")
        if not 1 <= self.t_min <= self.t_max:
            raise ValueError("need 1 <= t_min <= t_max")
        if self.seg_max * self.min_segment_length > self.t_min:
            raise ValueError("t_min too short for seg_max segments of min_segment_length frames")
        if self.max_key_segments * self.min_segment_length > int(np.floor(self.budget * self.t_min + 1e-9)):
            raise ValueError("planted key segments cannot fit the summary budget at t_min")
        if not 0 < self.salient_dims < self.dim:
            raise ValueError("salient_dims must be in (0, dim)")
        if self.n_videos < 1:
            raise ValueError("n_videos must be positive")

    @property
    def max_key_segments(self) -> int:
        return int(np.floor(self.key_fraction * self.seg_max + 1e-9))


@dataclass
class SyntheticVideo:
    id: str
    features: np.ndarray  # float32 (T, D)
    segmentation: Segmentation
    key_segments: tuple[int, ...]
    scores: np.ndarray  # float32 (T,)
    keyshots: np.ndarray  # uint8 (T,)
    keyframes: np.ndarray  # uint8 (T,)

    def record(self, kind: str) -> VideoRecord:
        ann = {"none": None, "keyframes": self.keyframes, "scores": self.scores, "keyshots": self.keyshots}[kind]
        meta = {"change_points": list(self.segmentation.change_points), "key_segments": list(self.key_segments)}
        return VideoRecord(self.id, self.features, kind, ann, meta)


def _random_sizes(rng, total, parts, min_len):
    free = total - parts * min_len
    cuts = np.sort(rng.integers(0, free + 1, size=parts - 1))
    return np.diff(np.concatenate([[0], cuts, [free]])) + min_len


def _plant(rng, t, n_seg, n_key, config):
    """Segment lengths with the key segments jointly inside the budget."""
    key = np.sort(rng.choice(n_seg, size=n_key, replace=False))
    cap = min(int(np.floor(config.budget * t + 1e-9)), t - (n_seg - n_key) * config.min_segment_length)
    key_total = int(rng.integers(n_key * config.min_segment_length, cap + 1))
    sizes = np.empty(n_seg, dtype=np.int64)
    sizes[key] = _random_sizes(rng, key_total, n_key, config.min_segment_length)
    rest = np.setdiff1d(np.arange(n_seg), key)
    sizes[rest] = _random_sizes(rng, t - key_total, len(rest), config.min_segment_length)
    return Segmentation(np.cumsum(sizes)[:-1], t), tuple(int(k) for k in key)


def generate_synthetic(config: SynthConfig) -> list[SyntheticVideo]:
    """Piecewise-constant feature videos with planted key segments.

    Ordinary segment centres live in the last ``dim - salient_dims``
    coordinates, key segment centres in the first ``salient_dims``; the key
    segments of a video jointly fit the summary budget.  Frames are centre
    plus Gaussian noise.  Ground truth comes in all three forms:
    jittered 0/1 frame scores, keyshots packed by knapsack over the true
    segments, and one keyframe per selected keyshot.
    """
    rng = np.random.default_rng(config.seed)
    d, s = config.dim, config.salient_dims
    videos = []
    for v in range(config.n_videos):
        t = int(rng.integers(config.t_min, config.t_max + 1))
        n_seg = int(rng.integers(config.seg_min, config.seg_max + 1))
        n_key = int(np.floor(config.key_fraction * n_seg + 1e-9))
        seg, key = _plant(rng, t, n_seg, n_key, config)
        features = np.empty((t, d))
        scores = np.empty(t)
        for i, (a, b) in enumerate(seg.intervals()):
            center = np.zeros(d)
            if i in key:
                center[:s] = rng.normal(size=s) * np.sqrt(d / s)
            else:
                center[s:] = rng.normal(size=d - s) * np.sqrt(d / (d - s))
            features[a:b] = center + config.noise_std * rng.normal(size=(b - a, d))
            scores[a:b] = (1.0 if i in key else 0.0) + config.score_jitter * rng.uniform(-1, 1, size=b - a)
        scores = scores.astype(np.float32)
        keyshots = scores_to_keyshot_summary(scores, seg, config.budget).selection
        keyframes = keyshots_to_keyframes(keyshots, scores, seg)
        videos.append(SyntheticVideo(
            f"synth{v:04d}", features.astype(np.float32), seg, key, scores, keyshots, keyframes,
        ))
    return videos
