import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fcsn.dataio import (
    RecordFormatError,
    SynthConfig,
    VideoRecord,
    generate_synthetic,
    load_corpus,
    load_csv,
    load_record,
    save_record,
)
from fcsn.pipeline import capacity, kts_segment


def random_record(rng, kind, t=17, d=5, count=3):
    feats = rng.normal(size=(t, d)).astype(np.float32)
    ann = {
        "none": None,
        "keyframes": rng.integers(0, 2, t),
        "scores": rng.normal(size=(count, t)),
        "keyshots": rng.integers(0, 2, (count, t)),
    }[kind]
    return VideoRecord(f"vid-{kind}", feats, kind, ann, {"fps": 2, "note": "ünïcode"})


@pytest.mark.parametrize("kind", ["none", "keyframes", "scores", "keyshots"])
def test_round_trip(tmp_path, kind):
    rec = random_record(np.random.default_rng(1), kind)
    save_record(tmp_path / "a.fcsn", rec)
    back = load_record(tmp_path / "a.fcsn")
    assert back == rec
    assert back.features.dtype == np.float32


@settings(max_examples=25, deadline=None)
@given(t=st.integers(1, 40), d=st.integers(1, 6), count=st.integers(1, 4), seed=st.integers(0, 10_000),
       kind=st.sampled_from(["none", "keyframes", "scores", "keyshots"]))
def test_round_trip_property(tmp_path_factory, t, d, count, seed, kind):
    rec = random_record(np.random.default_rng(seed), kind, t, d, count)
    path = tmp_path_factory.mktemp("rt") / "r.fcsn"
    save_record(path, rec)
    assert load_record(path) == rec


def test_bad_magic(tmp_path):
    path = tmp_path / "a.fcsn"
    save_record(path, random_record(np.random.default_rng(0), "scores"))
    raw = bytearray(path.read_bytes())
    raw[0:4] = b"XXXX"
    path.write_bytes(bytes(raw))
    with pytest.raises(RecordFormatError, match="magic"):
        load_record(path)


def test_truncation_and_trailing(tmp_path):
    path = tmp_path / "a.fcsn"
    save_record(path, random_record(np.random.default_rng(0), "keyframes"))
    raw = path.read_bytes()
    path.write_bytes(raw[:-1])
    with pytest.raises(RecordFormatError):
        load_record(path)
    path.write_bytes(raw[:10])
    with pytest.raises(RecordFormatError, match="header"):
        load_record(path)
    path.write_bytes(raw + b"\0")
    with pytest.raises(RecordFormatError):
        load_record(path)


def test_annotation_length_mismatch():
    with pytest.raises(RecordFormatError):
        VideoRecord("x", np.zeros((10, 3)), "keyframes", np.zeros(9))
    with pytest.raises(RecordFormatError):
        VideoRecord("x", np.zeros((10, 3)), "scores", np.zeros((2, 9)))


def test_record_invariants():
    with pytest.raises(RecordFormatError):
        VideoRecord("x", np.zeros((0, 3)))
    with pytest.raises(RecordFormatError):
        VideoRecord("x", np.zeros((4, 3)), "keyshots", [0, 2, 0, 1])
    with pytest.raises(RecordFormatError):
        VideoRecord("x", np.zeros((4, 3)), "bogus")
    with pytest.raises(ValueError):
        VideoRecord("x", np.zeros((4, 3)), "scores", np.zeros(4)).labels


def test_corpus_sorted(tmp_path):
    rng = np.random.default_rng(0)
    for name in ("b", "a", "c"):
        rec = random_record(rng, "keyframes")
        rec.id = name
        save_record(tmp_path / f"{name}.fcsn", rec)
    assert [r.id for r in load_corpus(tmp_path)] == ["a", "b", "c"]
    with pytest.raises(FileNotFoundError):
        load_corpus(tmp_path / "missing")


class TestCSV:
    def test_plain(self, tmp_path):
        p = tmp_path / "v.csv"
        p.write_text("1,2\n3,4\n5,6\n")
        rec = load_csv(p)
        assert rec.id == "v" and rec.kind == "none"
        np.testing.assert_array_equal(rec.features, [[1, 2], [3, 4], [5, 6]])

    def test_labels(self, tmp_path):
        p = tmp_path / "v.csv"
        p.write_text("f0,f1,label\n1,2,0\n3,4,1\n")
        rec = load_csv(p, "clip")
        assert rec.id == "clip" and rec.kind == "keyframes"
        np.testing.assert_array_equal(rec.labels, [0, 1])
        np.testing.assert_array_equal(rec.features, [[1, 2], [3, 4]])

    def test_scores(self, tmp_path):
        p = tmp_path / "v.csv"
        p.write_text("f0,score_a,score_b\n1,0.5,0.25\n3,1,0\n")
        rec = load_csv(p)
        assert rec.kind == "scores" and rec.annotation.shape == (2, 2)
        np.testing.assert_array_equal(rec.annotation[0], [0.5, 1.0])

    def test_malformed(self, tmp_path):
        p = tmp_path / "v.csv"
        p.write_text("a,b\n1,x\n")
        with pytest.raises(RecordFormatError):
            load_csv(p)
        p.write_text("")
        with pytest.raises(RecordFormatError):
            load_csv(p)
        p.write_text("a,b\n1,2,3\n")
        with pytest.raises(RecordFormatError):
            load_csv(p)


SMALL = SynthConfig(n_videos=6, t_min=80, t_max=120, dim=16, seg_min=4, seg_max=6, key_fraction=0.25,
                    salient_dims=4, min_segment_length=6)


class TestSynthetic:
    def test_deterministic(self):
        a, b = generate_synthetic(SMALL), generate_synthetic(SMALL)
        for x, y in zip(a, b):
            assert x.features.tobytes() == y.features.tobytes()
            assert x.scores.tobytes() == y.scores.tobytes()
            assert x.segmentation == y.segmentation and x.key_segments == y.key_segments
        c = generate_synthetic(SynthConfig(**{**SMALL.__dict__, "seed": 1}))
        assert c[0].features.tobytes() != a[0].features.tobytes()

    def test_shapes(self):
        for v in generate_synthetic(SMALL):
            t = v.features.shape[0]
            assert 80 <= t <= 120 and v.features.shape[1] == 16
            assert v.features.dtype == np.float32
            assert 4 <= len(v.segmentation) <= 6
            assert len(v.key_segments) >= 1

    def test_budget_and_consistency(self):
        for v in generate_synthetic(SynthConfig(n_videos=20, seed=3)):
            t = v.segmentation.length
            assert v.keyshots.sum() <= capacity(t, 0.15)
            ivs = v.segmentation.intervals()
            key_frames = sum(ivs[k][1] - ivs[k][0] for k in v.key_segments)
            assert key_frames <= capacity(t, 0.15)
            selected = [i for i, (a, b) in enumerate(ivs) if v.keyshots[a:b].any()]
            # every planted key segment is packed, and keyshots are whole intervals
            assert set(v.key_segments) <= set(selected)
            for i in selected:
                a, b = ivs[i]
                assert v.keyshots[a:b].all()
                assert v.keyframes[a:b].sum() == 1
                assert v.keyframes[a + int(np.argmax(v.scores[a:b]))] == 1
            assert v.keyframes.sum() == len(selected)
            assert np.all(v.keyframes <= v.keyshots)

    def test_noise_free_kts_recovers_change_points(self):
        cfg = SynthConfig(n_videos=10, t_min=40, t_max=60, dim=8, seg_min=2, seg_max=5, key_fraction=0.5,
                          salient_dims=2, min_segment_length=3, noise_std=0.0, seed=5)
        for v in generate_synthetic(cfg):
            seg = kts_segment(v.features.astype(np.float64))
            assert seg.change_points == v.segmentation.change_points

    def test_records(self):
        v = generate_synthetic(SMALL)[0]
        assert v.record("keyframes").labels.tobytes() == v.keyframes.tobytes()
        assert v.record("keyshots").annotation.shape == (1, v.segmentation.length)
        assert v.record("none").annotation is None
        assert v.record("scores").metadata["key_segments"] == list(v.key_segments)

    @pytest.mark.parametrize("bad", [
        dict(key_fraction=0.0), dict(key_fraction=1.0), dict(noise_std=-1.0),
        dict(key_fraction=0.1, seg_min=4), dict(seg_min=5, seg_max=4),
        dict(t_min=50, seg_max=10, min_segment_length=8), dict(salient_dims=64),
        dict(key_fraction=0.5, seg_min=4, seg_max=10, t_min=160),
    ])
    def test_infeasible(self, bad):
        with pytest.raises(ValueError):
            SynthConfig(**bad)
