"""Command-line entry point: ``borderlrp <subcommand> [flags]``.

Exit codes: 0 success, 1 usage error, 2 data or model error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import asdict
from fractions import Fraction

from . import analysis, persist
from .analysis import DegenerateProfileError, Explainer, frame_axis
from .network import NetworkSpec, forward, initialize, mini_c3d_layers
from .relevance import RelevanceConfig, dtd_explain, sensitivity_explain
from .sampler import SnippetSpec, extract_snippet, offset_schedule, parse_step, step_schedule
from .synthlab import SynthConfig, TrainConfig, generate_dataset, train
from .tensor import top_k_indices

class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class DegenerateExplanationError(DataError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _step_arg(text: str) -> Fraction:
    try:
        return parse_step(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _int_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _class_arg(text: str):
    if text == "auto":
        return None
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError("--class takes 'auto' or an integer") from None
    if value < 0:
        raise argparse.ArgumentTypeError("--class must be non-negative")
    return value


def _u64(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"seed must be an integer, got {text!r}") from None
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in 64 bits")
    return value


def _positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError("expected a positive integer")
    return value


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=_u64, default=0)
    common.add_argument("--out")
    common.add_argument("--net")
    common.add_argument("--data")
    common.add_argument("--jobs", type=_positive_int, default=1)

    snippet = argparse.ArgumentParser(add_help=False)
    snippet.add_argument("--offset", type=int, default=0)
    snippet.add_argument("--step", type=_step_arg, default=Fraction(1))
    snippet.add_argument("--method", choices=["dtd", "sensitivity"], default="dtd")

    sweep = argparse.ArgumentParser(add_help=False)
    sweep.add_argument("--schedule", default="default")
    sweep.add_argument("--topk", type=_positive_int, default=5)

    parser = _Parser(prog="borderlrp", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", parents=[common], help="generate a synthetic video dataset")
    p.add_argument("--count", type=_positive_int, default=64)
    p.add_argument("--classes", type=_positive_int, default=8)
    p.add_argument("--frames", type=_positive_int, default=64)
    p.add_argument("--size", type=_positive_int, default=24)
    p.add_argument("--speeds", type=_int_list, default=(1, 2))
    p.add_argument("--bar-level", type=float, default=1.0)
    p.add_argument("--cue-frames", type=_int_list, default=None)
    p.add_argument("--cue-size", type=_positive_int, default=6)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--opening-frames", type=int, default=0)

    p = sub.add_parser("train", parents=[common], help="train the mini network")
    p.add_argument("--epochs", type=_positive_int, default=20)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--batch-size", type=_positive_int, default=8)
    p.add_argument("--step", type=_step_arg, default=Fraction(1))
    p.add_argument("--offsets", type=_int_list, default=(0,))
    p.add_argument("--init-scale", type=float, default=TrainConfig.weight_init)
    p.add_argument("--no-bias", action="store_true")
    p.add_argument("--init-only", action="store_true", help="write the untrained initialization")

    p = sub.add_parser("explain", parents=[common, snippet], help="explain one video snippet")
    p.add_argument("--video-id")
    p.add_argument("--class", dest="target", type=_class_arg, default=None)
    p.add_argument("--heatmap-dir")

    sub.add_parser("analyze", parents=[common, snippet], help="mean relevance profile and fits")
    sub.add_parser("sweep-step", parents=[common, snippet, sweep], help="fits and accuracy per step size")
    sub.add_parser("sweep-offset", parents=[common, snippet, sweep], help="fits per offset")

    p = sub.add_parser("eval", parents=[common], help="top-k accuracy")
    p.add_argument("--topk", type=_positive_int, default=5)
    p.add_argument("--offset", type=int, default=0)
    p.add_argument("--step", type=_step_arg, default=Fraction(1))
    return parser


def _print_config(args) -> None:
    print("# effective configuration")
    for key, value in sorted(vars(args).items()):
        if isinstance(value, Fraction):
            value = persist.format_step(value)
        elif isinstance(value, tuple):
            value = ",".join(str(v) for v in value)
        print(f"#   {key} = {value}")


def _need(args, *names):
    for name in names:
        if getattr(args, name) is None:
            raise UsageError(f"--{name} is required for {args.command}")


def _emit(args, text: str) -> None:
    if args.out:
        persist._atomic_write(args.out, text.encode("utf-8"))
        print(f"wrote {args.out}")
    else:
        sys.stdout.write(text)


def _load(args):
    net = persist.load_network(args.net) if args.net else None
    data = persist.load_dataset(args.data) if args.data else None
    return net, data


def cmd_gen_data(args):
    _need(args, "out")
    config = SynthConfig(
        class_count=args.classes, frames=args.frames, height=args.size, width=args.size,
        speeds=args.speeds, bar_level=args.bar_level, cue_frames=args.cue_frames,
        cue_size=args.cue_size, noise_std=args.noise, opening_frames=args.opening_frames,
        seed=args.seed,
    )
    videos = generate_dataset(config, args.count)
    meta = asdict(config)
    persist.save_dataset(args.out, videos, meta)
    print(f"videos = {len(videos)}")
    print(f"wrote {args.out}")


def cmd_train(args):
    _need(args, "out", "data")
    base, data = _load(args)
    if base is None:
        c, _, h, w = data[0].frames.shape
        classes = max(v.true_class for v in data) + 1
        shape = (c, 16, h, w)
        layers = mini_c3d_layers(classes, shape, bias=not args.no_bias)
    else:
        shape, layers, classes = base.input_shape, base.layers, base.class_count
    net = NetworkSpec(shape, tuple(layers), initialize(layers, args.seed, args.init_scale), classes)
    if not args.init_only:
        config = TrainConfig(args.lr, args.epochs, args.batch_size, args.seed, args.init_scale,
                             args.step, args.offsets)
        net = train(net, data, config)
        acc = analysis.accuracy(net, data, SnippetSpec(args.offsets[0], args.step), 1)
        print(f"train_top1 = {persist.fmt_number(acc)}")
    persist.save_network(args.out, net)
    print(f"wrote {args.out}")


def _pick_video(data, video_id):
    if video_id is None:
        return data[0]
    for v in data:
        if str(v.id) == video_id:
            return v
    raise DataError(f"no video with id {video_id!r}")


def cmd_explain(args):
    _need(args, "net", "data")
    net, data = _load(args)
    video = _pick_video(data, args.video_id)
    snippet = extract_snippet(video, SnippetSpec(args.offset, args.step, net.input_shape[1]))
    lo, hi = video.pixel_range
    trace = forward(net, snippet)
    target = args.target
    if target is not None and target >= net.class_count:
        raise UsageError(f"--class {target} out of range for {net.class_count} classes")
    if args.method == "dtd":
        amap = dtd_explain(net, trace, RelevanceConfig(input_low=lo, input_high=hi, target=target))
    else:
        cls = top_k_indices(trace.logits, 1)[0] if target is None else target
        amap = sensitivity_explain(net, snippet, cls)
    if amap.warning:
        raise DegenerateExplanationError(amap.warning)
    profile = analysis.temporal_profile(amap)
    if args.heatmap_dir:
        paths = persist.render_heatmap(amap, args.heatmap_dir, f"{video.id}_{args.method}")
        print(f"heatmaps = {len(paths)} files in {args.heatmap_dir}")
    t = len(profile.p)
    columns = ["video_id", "method", "class", "explained_value", "total"] + [f"p{i}" for i in range(1, t + 1)]
    row = [str(video.id), amap.method, amap.explained_class, amap.explained_value, amap.total, *profile.p]
    _emit(args, persist.format_csv(columns, [row]))


def cmd_analyze(args):
    _need(args, "net", "data")
    net, data = _load(args)
    spec = SnippetSpec(args.offset, args.step, net.input_shape[1])
    s = analysis.analyze_dataset(net, data, spec, Explainer(args.method), jobs=args.jobs)
    if s.mean_p is None:
        raise DegenerateProfileError("every explanation in the dataset degenerated")
    q, l = s.quadratic, s.linear
    for name, value in (("B", q.B), ("C", q.C), ("D", q.D), ("L", l.L), ("A", l.A)):
        print(f"{name} = {persist.fmt_number(value)}")
    print(f"excluded = {s.excluded}")
    t = frame_axis(len(s.mean_p))
    rows = zip(t.astype(int).tolist(), s.mean_p, q(t), l(t))
    _emit(args, persist.format_csv(["t", "mean_p", "q", "l"], rows))


def _schedule(args, default, parse):
    if args.schedule == "default":
        return default()
    try:
        values = [parse(x.strip()) for x in args.schedule.split(",") if x.strip()]
    except (ValueError, argparse.ArgumentTypeError) as exc:
        raise UsageError(f"bad --schedule: {exc}") from None
    if not values:
        raise UsageError("--schedule is empty")
    return values


def cmd_sweep_step(args):
    _need(args, "net", "data")
    schedule = _schedule(args, step_schedule, parse_step)
    net, data = _load(args)
    rows = analysis.sweep_step(net, data, Explainer(args.method), schedule, args.offset,
                               args.topk, args.jobs)
    _emit(args, persist.sweep_rows_to_csv(rows))


def cmd_sweep_offset(args):
    _need(args, "net", "data")
    offsets = _schedule(args, offset_schedule, int)
    net, data = _load(args)
    rows = analysis.sweep_offset(net, data, Explainer(args.method), offsets, args.step,
                                 args.topk, args.jobs)
    _emit(args, persist.sweep_rows_to_csv(rows))


def cmd_eval(args):
    _need(args, "net", "data")
    net, data = _load(args)
    if any(v.true_class is None for v in data):
        raise DataError("dataset has unlabelled videos")
    spec = SnippetSpec(args.offset, args.step, net.input_shape[1])
    acc = analysis.accuracy(net, data, spec, args.topk, args.jobs)
    print(f"accuracy = {persist.fmt_number(acc)}")
    _emit(args, persist.format_csv(["topk", "accuracy", "count"], [[args.topk, acc, len(data)]]))


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "explain": cmd_explain,
    "analyze": cmd_analyze,
    "sweep-step": cmd_sweep_step,
    "sweep-offset": cmd_sweep_offset,
    "eval": cmd_eval,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    _print_config(args)
    # per-epoch training loss goes to stderr
    logging.basicConfig(level=logging.INFO, format="%(message)s", stream=sys.stderr)
    try:
        COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"borderlrp: usage error: {exc}", file=sys.stderr)
        return 1
    except (DataError, persist.PersistError, FileNotFoundError, ValueError) as exc:
        print(f"borderlrp: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
