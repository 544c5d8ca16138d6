"""Video records on disk and the planted-segment synthetic corpus."""

# %%
import tempfile
from pathlib import Path

import numpy as np

from fcsn.dataio import SynthConfig, VideoRecord, generate_synthetic, load_record, save_record
from fcsn.pipeline import kts_segment

videos = generate_synthetic(SynthConfig(n_videos=3, seed=0))
v = videos[0]
print(v.id, v.features.shape, "segments", len(v.segmentation), "key", v.key_segments)
print("keyshot frames", int(v.keyshots.sum()), " keyframes", np.flatnonzero(v.keyframes))

# %%
# The binary format round-trips bit-exactly; a JSON sidecar keeps the id and metadata.
with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / f"{v.id}.fcsn"
    save_record(path, v.record("keyframes"))
    print("round trip equal:", load_record(path) == v.record("keyframes"), " bytes", path.stat().st_size)

rec = VideoRecord("two-annotators", np.zeros((5, 2)), "scores", np.array([[0, 1, 1, 0, 0], [0, 0, 1, 1, 0.5]]))
print(rec.kind, rec.annotation.shape)

# %%
# Without noise, KTS recovers the planted boundaries.
clean = generate_synthetic(SynthConfig(n_videos=1, noise_std=0.0, t_min=60, t_max=60, seg_max=5, seed=4))[0]
print("planted", clean.segmentation.change_points)
print("found  ", kts_segment(clean.features.astype(np.float64)).change_points)
