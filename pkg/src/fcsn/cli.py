"""Command-line interface: ``fcsn <command> [flags]``.

Exit codes: 0 success, 1 usage or config error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import model as mdl
from .dataio import RecordFormatError, SynthConfig, generate_synthetic, load_corpus, load_record, save_record
from .evalkit import evaluate_corpus
from .gradcheck import check_model
from .pipeline import (
    DEFAULT_BUDGET,
    DEFAULT_PENALTY,
    Summary,
    default_max_segments,
    keyframes_to_keyshots,
    kts_segment,
    predict_summary,
    scores_to_keyshot_summary,
)
from .train import NumericalError, TrainConfig, predict_scores, train_supervised, train_unsupervised

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _int_list(text: str) -> tuple[int, ...]:
    try:
        values = tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not values:
        raise argparse.ArgumentTypeError("empty list")
    return values


def _fmt_list(values) -> str:
    return ",".join(str(v) for v in values)


# -- manifest ---------------------------------------------------------------


def _blob_hash(data: bytes) -> str:
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def content_hash(paths) -> str:
    """Git-style hash over files: blob hashes of each file, combined over
    the sorted (name, blob) list.  Directories contribute every file below."""
    entries = []
    for p in paths:
        p = Path(p)
        files = sorted(q for q in p.rglob("*") if q.is_file()) if p.is_dir() else [p]
        for f in files:
            name = f.relative_to(p).as_posix() if p.is_dir() else f.name
            entries.append(f"{name}\0{_blob_hash(f.read_bytes())}\n".encode())
    tree = b"".join(sorted(entries))
    return _blob_hash(tree)


def write_manifest(path: Path, command: str, config: dict, seed, inputs, outputs):
    manifest = {
        "command": command,
        "config": config,
        "seed": seed,
        "inputs": [str(p) for p in inputs],
        "outputs": [str(p) for p in outputs],
        "input_hash": content_hash(inputs) if inputs else None,
    }
    text = json.dumps(manifest, indent=2, sort_keys=True) + "\n"
    if path is None:
        sys.stderr.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")
    return manifest


# -- flag groups ------------------------------------------------------------

_MODEL_DEFAULTS = mdl.ModelConfig()


def _add_model_flags(p, with_input_dim: bool, input_dim: int = 64):
    g = p.add_argument_group("model")
    if with_input_dim:
        g.add_argument("--input-dim", type=int, default=input_dim, help="feature dimension D")
    g.add_argument("--variant", choices=["fcn", "deeplab"], default=_MODEL_DEFAULTS.variant, help="network family")
    g.add_argument("--upsampler", choices=["deconv", "bilinear"], default=_MODEL_DEFAULTS.upsampler,
                   help="final x8 upsampling of the deeplab variant")
    g.add_argument("--block-widths", type=_int_list, default=_fmt_list(_MODEL_DEFAULTS.block_widths),
                   help="channels of conv1..conv5")
    g.add_argument("--convs-per-block", type=_int_list, default=_fmt_list(_MODEL_DEFAULTS.convs_per_block),
                   help="convolutions in each of the five blocks")
    g.add_argument("--head-width", type=int, default=_MODEL_DEFAULTS.head_width, help="channels of conv6/conv7")
    g.add_argument("--dec-width", type=int, default=_MODEL_DEFAULTS.dec_width, help="channels of the decoder path")
    g.add_argument("--dropout-rate", type=float, default=_MODEL_DEFAULTS.dropout_rate, help="dropout after conv6/conv7")
    g.add_argument("--block-kernel", type=int, default=_MODEL_DEFAULTS.block_kernel, help="kernel of block convolutions")
    g.add_argument("--head-kernel", type=int, default=_MODEL_DEFAULTS.head_kernel, help="kernel of conv6")
    g.add_argument("--dilation-rates", type=_int_list, default=_fmt_list(_MODEL_DEFAULTS.dilation_rates),
                   help="pyramid branch rates of the deeplab variant")


def _model_config(args, input_dim=None, reconstruction=False) -> mdl.ModelConfig:
    def as_tuple(v):
        return v if isinstance(v, tuple) else _int_list(v)

    return mdl.ModelConfig(
        input_dim=input_dim if input_dim is not None else args.input_dim,
        variant=args.variant,
        upsampler=args.upsampler,
        block_widths=as_tuple(args.block_widths),
        convs_per_block=as_tuple(args.convs_per_block),
        head_width=args.head_width,
        dec_width=args.dec_width,
        dropout_rate=args.dropout_rate,
        block_kernel=args.block_kernel,
        head_kernel=args.head_kernel,
        dilation_rates=as_tuple(args.dilation_rates),
        reconstruction=reconstruction,
    )


def _add_kts_flags(p):
    g = p.add_argument_group("summary")
    g.add_argument("--budget", type=float, default=DEFAULT_BUDGET, help="summary length as a fraction of the video")
    g.add_argument("--kts-penalty", type=float, default=DEFAULT_PENALTY, help="KTS change-point penalty")
    g.add_argument("--kts-max-segments", type=int, default=0,
                   help="largest change-point count KTS considers (0 = min(T-1, T/10+5))")


def _max_segments(args, length):
    m = args.kts_max_segments or default_max_segments(length)
    return min(m, length - 1)


def _check_kts(args):
    if not 0 < args.budget <= 1:
        raise UsageError("--budget must be in (0, 1]")
    if args.kts_penalty < 0:
        raise UsageError("--kts-penalty must be >= 0")
    if args.kts_max_segments < 0:
        raise UsageError("--kts-max-segments must be >= 0")


def _segment(args, features):
    feats = np.asarray(features, dtype=np.float64)
    return kts_segment(feats, _max_segments(args, len(feats)), args.kts_penalty)


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = _Parser(prog="fcsn", description="Fully convolutional sequence networks for video summarization.",
                     formatter_class=fmt)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, metavar="COMMAND")
    sub.required = True

    s = SynthConfig()
    p = sub.add_parser("gen-data", help="write a synthetic train/test corpus", formatter_class=fmt)
    p.add_argument("--out", type=Path, required=True, help="output directory (train/ and test/ are created)")
    p.add_argument("--n-train", type=int, default=60, help="training videos (keyframe labels)")
    p.add_argument("--n-test", type=int, default=20, help="test videos (keyshot ground truth)")
    p.add_argument("--t-min", type=int, default=s.t_min, help="shortest video")
    p.add_argument("--t-max", type=int, default=s.t_max, help="longest video")
    p.add_argument("--dim", type=int, default=s.dim, help="feature dimension D")
    p.add_argument("--seg-min", type=int, default=s.seg_min, help="fewest segments per video")
    p.add_argument("--seg-max", type=int, default=s.seg_max, help="most segments per video")
    p.add_argument("--key-fraction", type=float, default=s.key_fraction, help="fraction of segments that are key")
    p.add_argument("--noise-std", type=float, default=s.noise_std, help="per-frame gaussian noise")
    p.add_argument("--salient-dims", type=int, default=s.salient_dims, help="dimension of the key-centre subspace")
    p.add_argument("--score-jitter", type=float, default=s.score_jitter, help="amplitude of frame-score jitter")
    p.add_argument("--min-segment-length", type=int, default=s.min_segment_length, help="shortest segment")
    p.add_argument("--seed", type=int, default=s.seed, help="generator seed")

    t = TrainConfig()
    p = sub.add_parser("train", help="train a model on a corpus of keyframe records", formatter_class=fmt)
    p.add_argument("--data", type=Path, required=True, help="directory of .fcsn records")
    p.add_argument("--checkpoint", type=Path, required=True, help="checkpoint file to write")
    _add_model_flags(p, with_input_dim=False)
    g = p.add_argument_group("training")
    g.add_argument("--mode", choices=["supervised", "unsupervised"], default=t.mode, help="objective")
    g.add_argument("--epochs", type=int, default=t.epochs, help="passes over the corpus")
    g.add_argument("--lr", type=float, default=t.learning_rate, help="learning rate")
    g.add_argument("--momentum", type=float, default=t.momentum, help="SGD momentum")
    g.add_argument("--batch-size", type=int, default=t.batch_size, help="videos per minibatch")
    g.add_argument("--sample-length", type=int, default=t.sample_length,
                   help="frames sampled per video (0 = variable length)")
    g.add_argument("--keyframe-fraction", type=float, default=t.keyframe_fraction,
                   help="unsupervised: selected frames as a fraction of T")
    g.add_argument("--div-weight", type=float, default=t.div_weight, help="unsupervised: weight of the diversity term")
    g.add_argument("--seed", type=int, default=t.seed, help="initialization and shuffling seed")

    p = sub.add_parser("summarize", help="write keyshot summaries for videos", formatter_class=fmt)
    p.add_argument("--checkpoint", type=Path, required=True, help="trained checkpoint")
    p.add_argument("--videos", type=Path, nargs="+", required=True, help=".fcsn files or directories of them")
    p.add_argument("--out", type=Path, required=True, help="output directory for <id>.bin and <id>.txt")
    p.add_argument("--sample-length", type=int, default=t.sample_length,
                   help="frames sampled per video (0 = variable length)")
    _add_kts_flags(p)
    p.add_argument("--seed", type=int, default=0, help="unused by inference; recorded for reproducibility")

    p = sub.add_parser("evaluate", help="score predicted summaries against annotations", formatter_class=fmt)
    p.add_argument("--pred", type=Path, required=True, help="directory of <id>.bin summaries")
    p.add_argument("--ann", type=Path, required=True, help="directory of annotated .fcsn records")
    p.add_argument("--agg", choices=["max", "mean"], default="max", help="combination over annotators")
    p.add_argument("--out", type=Path, default=None, help="directory for report.json and the manifest")
    _add_kts_flags(p)
    p.add_argument("--seed", type=int, default=0, help="unused; recorded for reproducibility")

    p = sub.add_parser("gradcheck", help="finite-difference check of a model's gradients", formatter_class=fmt)
    _add_model_flags(p, with_input_dim=True, input_dim=8)
    p.add_argument("--reconstruction", action="store_true", help="include the unsupervised head")
    p.add_argument("--length", type=int, default=32, help="probe sequence length")
    p.add_argument("--max-entries", type=int, default=6, help="probed entries per array (0 = all)")
    p.add_argument("--step", type=float, default=1e-6, help="finite-difference step")
    p.add_argument("--tolerance", type=float, default=1e-3, help="largest accepted relative error")
    p.add_argument("--out", type=Path, default=None, help="directory for report.txt and the manifest")
    p.add_argument("--seed", type=int, default=0, help="parameter and probe seed")

    p = sub.add_parser("bench", help="forward-pass throughput per sequence length", formatter_class=fmt)
    _add_model_flags(p, with_input_dim=True)
    p.add_argument("--lengths", type=_int_list, default="320,640,1280", help="sequence lengths to time")
    p.add_argument("--batch", type=int, default=1, help="videos per forward pass")
    p.add_argument("--repetitions", type=int, default=3, help="timed passes per length (best is kept)")
    p.add_argument("--out", type=Path, default=None, help="directory for bench.txt and the manifest")
    p.add_argument("--seed", type=int, default=0, help="parameter and input seed")
    return parser


# -- commands ---------------------------------------------------------------


def _records_from(paths):
    files = []
    for p in paths:
        if p.is_dir():
            files.extend(sorted(p.glob("*.fcsn")))
        elif p.is_file():
            files.append(p)
        else:
            raise DataError(f"no such file or directory: {p}")
    if not files:
        raise DataError("no .fcsn records found")
    return files


def cmd_gen_data(args) -> int:
    if args.n_train < 1 or args.n_test < 0:
        raise UsageError("--n-train must be >= 1 and --n-test >= 0")
    try:
        cfg = SynthConfig(
            n_videos=args.n_train + args.n_test, t_min=args.t_min, t_max=args.t_max, dim=args.dim,
            seg_min=args.seg_min, seg_max=args.seg_max, key_fraction=args.key_fraction, noise_std=args.noise_std,
            salient_dims=args.salient_dims, score_jitter=args.score_jitter,
            min_segment_length=args.min_segment_length, seed=args.seed,
        )
    except ValueError as exc:
        raise UsageError(f"invalid synthetic config: {exc}") from None
    videos = generate_synthetic(cfg)
    outputs = []
    for split, kind, part in (("train", "keyframes", videos[:args.n_train]), ("test", "keyshots", videos[args.n_train:])):
        d = args.out / split
        d.mkdir(parents=True, exist_ok=True)
        for v in part:
            save_record(d / f"{v.id}.fcsn", v.record(kind))
        outputs.append(d)
    write_manifest(args.out / "manifest.json", "gen-data",
                   {**asdict(cfg), "n_train": args.n_train, "n_test": args.n_test}, args.seed, [], outputs)
    print(f"wrote {args.n_train} training and {args.n_test} test videos to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    try:
        tcfg = TrainConfig(
            epochs=args.epochs, learning_rate=args.lr, momentum=args.momentum, batch_size=args.batch_size,
            sample_length=args.sample_length, seed=args.seed, mode=args.mode,
            keyframe_fraction=args.keyframe_fraction, div_weight=args.div_weight,
        )
    except ValueError as exc:
        raise UsageError(f"invalid training config: {exc}") from None
    if not args.data.is_dir():
        raise DataError(f"no such corpus directory: {args.data}")
    corpus = load_corpus(args.data)
    if not corpus:
        raise DataError(f"no .fcsn records in {args.data}")
    dims = {r.dim for r in corpus}
    if len(dims) != 1:
        raise DataError(f"records disagree on feature dimension: {sorted(dims)}")
    try:
        mcfg = _model_config(args, input_dim=dims.pop(), reconstruction=args.mode == "unsupervised")
    except ValueError as exc:
        raise UsageError(f"invalid model config: {exc}") from None
    if args.mode == "supervised":
        unlabeled = [r.id for r in corpus if r.kind != "keyframes"]
        if unlabeled:
            raise DataError(f"supervised training needs keyframe labels; missing on {unlabeled[0]}")
        fn = train_supervised
    else:
        fn = train_unsupervised
    args.checkpoint.parent.mkdir(parents=True, exist_ok=True)
    try:
        report = fn(corpus, mcfg, tcfg, checkpoint=args.checkpoint)
    except ValueError as exc:
        raise DataError(str(exc)) from None
    report_path = args.checkpoint.with_name(args.checkpoint.name + ".report.json")
    report_path.write_text(json.dumps(report.to_dict(), indent=2) + "\n", encoding="utf-8")
    write_manifest(args.checkpoint.with_name(args.checkpoint.name + ".manifest.json"), "train",
                   {"model": mcfg.to_dict(), "train": tcfg.to_dict()}, args.seed, [args.data],
                   [args.checkpoint, report_path])
    print(report.table())
    print(f"wall-clock {report.wall_clock:.1f} s", file=sys.stderr)
    return EXIT_OK


def cmd_summarize(args) -> int:
    _check_kts(args)
    if args.sample_length < 0:
        raise UsageError("--sample-length must be >= 0")
    if not args.checkpoint.is_file():
        raise DataError(f"no such checkpoint: {args.checkpoint}")
    try:
        params, mcfg = mdl.load_params(args.checkpoint)
    except ValueError as exc:
        raise DataError(f"malformed checkpoint {args.checkpoint}: {exc}") from None
    files = _records_from(args.videos)
    args.out.mkdir(parents=True, exist_ok=True)
    outputs = []
    for f in files:
        rec = load_record(f)
        if rec.dim != mcfg.input_dim:
            raise DataError(f"{f}: feature dimension {rec.dim} does not match the model's {mcfg.input_dim}")
        feats = rec.features.astype(np.float64)
        scores = predict_scores(params, mcfg, feats, args.sample_length)
        summary = predict_summary(scores, feats, args.budget, _max_segments(args, rec.length), args.kts_penalty)
        (args.out / f"{rec.id}.bin").write_bytes(summary.selection.astype(np.uint8).tobytes())
        lines = [f"# {rec.id} T={rec.length} selected={summary.n_selected} fallback={summary.fallback}"]
        lines += [f"{a} {b}" for a, b in summary.intervals()]
        (args.out / f"{rec.id}.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
        outputs.append(args.out / f"{rec.id}.bin")
    config = {"budget": args.budget, "kts_penalty": args.kts_penalty, "kts_max_segments": args.kts_max_segments,
              "sample_length": args.sample_length, "model": mcfg.to_dict()}
    write_manifest(args.out / "manifest.json", "summarize", config, args.seed, [args.checkpoint, *files], outputs)
    print(f"wrote {len(files)} summaries to {args.out}")
    return EXIT_OK


def _ground_truth(args, rec):
    """Keyshot summaries of one annotated record, one per annotator."""
    if rec.kind == "keyshots":
        return list(rec.annotation)
    if rec.kind == "none":
        raise DataError(f"record {rec.id} has no annotation")
    seg = _segment(args, rec.features)
    if rec.kind == "keyframes":
        return [keyframes_to_keyshots(rec.labels, seg, args.budget)]
    return [scores_to_keyshot_summary(s, seg, args.budget) for s in rec.annotation]


def cmd_evaluate(args) -> int:
    _check_kts(args)
    for d in (args.pred, args.ann):
        if not d.is_dir():
            raise DataError(f"no such directory: {d}")
    annotations = {}
    for rec in load_corpus(args.ann):
        annotations[rec.id] = (rec.length, _ground_truth(args, rec))
    predictions = {}
    for f in sorted(args.pred.glob("*.bin")):
        sel = np.frombuffer(f.read_bytes(), dtype=np.uint8)
        if f.stem in annotations and len(sel) != annotations[f.stem][0]:
            raise DataError(f"{f}: {len(sel)} frames, annotation has {annotations[f.stem][0]}")
        try:
            predictions[f.stem] = Summary(sel)
        except ValueError as exc:
            raise DataError(f"{f}: {exc}") from None
    try:
        report = evaluate_corpus(predictions, {k: v[1] for k, v in annotations.items()}, args.agg)
    except ValueError as exc:
        raise DataError(str(exc)) from None
    print(report.table(), end="")
    outputs, manifest = [], None
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        (args.out / "report.json").write_text(report.to_json() + "\n", encoding="utf-8")
        outputs, manifest = [args.out / "report.json"], args.out / "manifest.json"
    config = {"agg": args.agg, "budget": args.budget, "kts_penalty": args.kts_penalty,
              "kts_max_segments": args.kts_max_segments}
    write_manifest(manifest, "evaluate", config, args.seed, [args.pred, args.ann], outputs)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    if args.length < 1 or args.max_entries < 0 or args.step <= 0 or args.tolerance <= 0:
        raise UsageError("--length, --step and --tolerance must be positive and --max-entries >= 0")
    try:
        mcfg = _model_config(args, reconstruction=args.reconstruction)
    except ValueError as exc:
        raise UsageError(f"invalid model config: {exc}") from None
    if args.length % mcfg.native_stride:
        raise UsageError(f"--length must be a multiple of the native stride {mcfg.native_stride}")
    report = check_model(mcfg, args.length, args.seed, args.step, args.tolerance, args.max_entries or None)
    text = "\n".join(report.lines()) + "\n"
    print(text, end="")
    outputs, manifest = [], None
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        (args.out / "report.txt").write_text(text, encoding="utf-8")
        outputs, manifest = [args.out / "report.txt"], args.out / "manifest.json"
    write_manifest(manifest, "gradcheck", {"model": mcfg.to_dict(), "length": args.length, "step": args.step,
                                           "tolerance": args.tolerance, "max_entries": args.max_entries},
                   args.seed, [], outputs)
    if not report.passed:
        raise NumericalError(f"gradient check failed: max relative error {report.max_error:.3e}")
    return EXIT_OK


def cmd_bench(args) -> int:
    if args.repetitions < 1 or args.batch < 1:
        raise UsageError("--repetitions and --batch must be >= 1")
    try:
        mcfg = _model_config(args)
    except ValueError as exc:
        raise UsageError(f"invalid model config: {exc}") from None
    bad = [t for t in args.lengths if t < 1 or t % mcfg.native_stride]
    if bad:
        raise UsageError(f"--lengths must be positive multiples of {mcfg.native_stride}: {bad}")
    params = mdl.init_params(mcfg, args.seed)
    rng = np.random.default_rng(args.seed)
    rows = ["T  seconds  frames/s"]
    for t in args.lengths:
        xs = [rng.normal(size=(t, mcfg.input_dim)) for _ in range(args.batch)]
        best = np.inf
        for _ in range(args.repetitions):
            start = time.perf_counter()
            mdl.forward(params, mcfg, xs, "eval")
            best = min(best, time.perf_counter() - start)
        rows.append(f"{t}  {best:.4f}  {t * args.batch / best:.0f}")
    text = "\n".join(rows) + "\n"
    print(text, end="")
    outputs, manifest = [], None
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        (args.out / "bench.txt").write_text(text, encoding="utf-8")
        outputs, manifest = [args.out / "bench.txt"], args.out / "manifest.json"
    write_manifest(manifest, "bench", {"model": mcfg.to_dict(), "lengths": list(args.lengths), "batch": args.batch,
                                       "repetitions": args.repetitions}, args.seed, [], outputs)
    return EXIT_OK


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "summarize": cmd_summarize,
    "evaluate": cmd_evaluate,
    "gradcheck": cmd_gradcheck,
    "bench": cmd_bench,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, RecordFormatError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
