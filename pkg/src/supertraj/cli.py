"""Command-line entry point: ``supertraj {synth,track,cluster,segment,eval}``.

Exit status is 0 on success, 1 for usage or configuration errors and 2 for
missing or malformed data.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import clustering
from .config import Config, load_config
from .errors import ConfigError, ContractError, FlowFormatError, ModelError
from .evaluation import (SyntheticSpec, frame_name, frame_paths, generate_synthetic, load_frames, load_flows,
                         read_mask, run_benchmark, write_sequence)
from .flow import write_gray, write_rgb
from .segmentation import segment_video
from .trajectory import compute_features, generate_trajectories, load_trajectories, save_trajectories

WORKERS_ENV = "SUPERTRAJ_WORKERS"
EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2

log = logging.getLogger("supertraj")


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _default_workers() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        value = int(raw)
    except ValueError:
        raise UsageError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None
    if value < 1:
        raise UsageError(f"{WORKERS_ENV} must be positive")
    return value


def _config(args) -> Config:
    overrides = {}
    for item in args.set or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key.strip()] = value.strip()
    return load_config(args.config, overrides)


def _workers(args) -> int:
    if args.workers is None:
        return _default_workers()
    if args.workers < 1:
        raise UsageError("--workers must be positive")
    return args.workers


def _load_inputs(seq: Path):
    """Frames and flow pairs of a sequence directory."""
    if not (seq / "frames").is_dir():
        raise DataError(f"{seq}: no frames/ directory")
    video = load_frames(seq / "frames")
    flows = load_flows(seq / "flow", [p.stem for p in frame_paths(seq / "frames")])
    return video, flows


def _write_json(path: Path, data) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def _gray(prob: np.ndarray) -> np.ndarray:
    return np.floor(np.clip(prob, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(args) -> int:
    try:
        spec = SyntheticSpec.from_dict(json.loads(Path(args.spec).read_text()))
    except (TypeError, KeyError, json.JSONDecodeError) as exc:
        raise DataError(f"{args.spec}: invalid synthetic spec ({exc})") from exc
    seq = generate_synthetic(spec)
    out = Path(args.output)
    write_sequence(out, seq)
    _write_json(out / "spec.json", spec.to_dict())
    print(f"wrote {seq.video.T} frames ({seq.video.width}x{seq.video.height}) to {out}")
    return EXIT_OK


def cmd_track(args) -> int:
    cfg = _config(args)
    video, flows = _load_inputs(Path(args.sequence))
    trajs = generate_trajectories(video, flows, cfg.seed_stride, cfg.app_scale)
    save_trajectories(args.output, trajs)
    mean_len = float(np.mean([len(tr) for tr in trajs])) if trajs else 0.0
    print(f"trajectories: {len(trajs)}")
    print(f"mean length: {mean_len:.3f}")
    return EXIT_OK


def _clustering_config(cfg: Config) -> clustering.ClusteringConfig:
    return clustering.ClusteringConfig(K=cfg.K, iterations=cfg.iterations, min_cluster_size=cfg.min_cluster_size,
                                       dt=cfg.dt, H=cfg.H, density_mode=cfg.density_mode)


def _frame_list(spec: str | None, T: int) -> list[int]:
    if not spec:
        return list(range(1, T + 1))
    try:
        frames = sorted({int(s) for s in spec.split(",") if s.strip()})
    except ValueError:
        raise UsageError(f"bad frame list {spec!r}") from None
    bad = [t for t in frames if not 1 <= t <= T]
    if bad:
        raise UsageError(f"frames {bad} outside 1..{T}")
    return frames


def cmd_cluster(args) -> int:
    cfg = _config(args)
    workers = _workers(args)
    seq = Path(args.sequence)
    video = load_frames(seq / "frames")
    trajs = load_trajectories(args.trajectories)
    if not trajs:
        raise DataError(f"{args.trajectories}: no trajectories")
    if max(tr.t_end for tr in trajs) > video.T:
        raise DataError(f"{args.trajectories}: trajectories extend past the {video.T} frames of {seq}")
    ft = compute_features(trajs, video, cfg.dt)
    sts = clustering.generate_supertrajectories(trajs, ft, (video.width, video.height, video.T),
                                                _clustering_config(cfg), workers)
    clustering.save_supertrajectories(args.output, sts)
    print(f"super-trajectories: {len(sts)}")
    if args.viz:
        viz = Path(args.viz)
        viz.mkdir(parents=True, exist_ok=True)
        for t in _frame_list(args.viz_frames, video.T):
            img = clustering.render_frame(trajs, sts, t, video.width, video.height)
            write_rgb(viz / f"{frame_name(t - 1)}.png", img)
    return EXIT_OK


def cmd_segment(args) -> int:
    cfg = _config(args)
    workers = _workers(args)
    seq = Path(args.sequence)
    video, flows = _load_inputs(seq)
    mask = read_mask(Path(args.mask) if args.mask else seq / "mask.png")
    trajs = sts = None
    if args.trajectories:
        trajs = load_trajectories(args.trajectories)
        if args.supertrajectories:
            ft = compute_features(trajs, video, cfg.dt)
            sts = clustering.load_supertrajectories(args.supertrajectories, trajs, ft)
    elif args.supertrajectories:
        raise UsageError("--supertrajectories needs --trajectories")
    res = segment_video(video, flows, mask, cfg, workers, stage_maps=args.dump_stages,
                        trajectories=trajs, supertrajectories=sts)
    out = Path(args.output)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    names = [p.stem for p in frame_paths(seq / "frames")]
    for name, m in zip(names, res.masks):
        write_gray(out / "masks" / f"{name}.png", m.astype(np.uint8) * 255)
    _write_json(out / "diagnostics.json", res.diagnostics)
    if args.dump_stages:
        for stage, maps in res.stages.items():
            d = out / "stages" / stage
            d.mkdir(parents=True, exist_ok=True)
            for name, p in zip(names, maps):
                write_gray(d / f"{name}.png", _gray(p))
        _write_json(out / "stages" / "supertrajectory_probabilities.json",
                    {str(st.id): p for st, p in zip(res.supertrajectories, res.probabilities)})
    d = res.diagnostics
    print(f"frames: {d['frames']}  trajectories: {d['trajectories']}  super-trajectories: {d['supertrajectories']}"
          f"  regions: {d['regions']}")
    log.info("timings: %s", {k: round(v, 3) for k, v in res.timings.items()})
    return EXIT_OK


def _sweep(spec: str) -> tuple[str, list[str]]:
    if "=" not in spec:
        raise UsageError(f"--sweep expects key=v1,v2,..., got {spec!r}")
    key, values = spec.split("=", 1)
    vals = [v.strip() for v in values.split(",") if v.strip()]
    if not vals:
        raise UsageError("--sweep needs at least one value")
    return key.strip(), vals


def cmd_eval(args) -> int:
    cfg = _config(args)
    workers = _workers(args)
    dataset = Path(args.dataset)
    if not dataset.is_dir():
        raise DataError(f"{dataset}: not a directory")
    skip_first = not args.include_first
    if args.sweep:
        key, values = _sweep(args.sweep)
        runs = []
        for value in values:
            run_cfg = cfg.with_overrides({key: value})
            report = run_benchmark(dataset, run_cfg, workers, skip_first)
            print(f"[{key} = {value}]")
            print(report.table())
            runs.append({"value": value, "report": report.to_dict()})
        if args.output:
            _write_json(Path(args.output), {"schema": 1, "sweep": key, "runs": runs})
        empty = not runs[0]["report"]["sequences"]
    else:
        report = run_benchmark(dataset, cfg, workers, skip_first, args.masks)
        print(report.table())
        if args.output:
            Path(args.output).write_text(report.to_json())
        empty = not report.sequences
    if empty:
        print(f"{dataset}: no sequences found", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value configuration file")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one configuration value")
    common.add_argument("--workers", type=int, help=f"worker threads (default: ${WORKERS_ENV} or 1)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="supertraj", description="Video object segmentation with super-trajectories.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", parents=[common], help="render a synthetic sequence from a JSON spec")
    p.add_argument("spec")
    p.add_argument("output", help="sequence directory to create")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("track", parents=[common], help="generate point trajectories")
    p.add_argument("sequence", help="directory with frames/ and flow/")
    p.add_argument("-o", "--output", required=True, help="trajectory file")
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("cluster", parents=[common], help="group trajectories into super-trajectories")
    p.add_argument("sequence", help="directory with frames/")
    p.add_argument("trajectories", help="trajectory file written by 'track'")
    p.add_argument("-o", "--output", required=True, help="super-trajectory file")
    p.add_argument("--viz", metavar="DIR", help="write one PNG per frame with points coloured by cluster")
    p.add_argument("--viz-frames", metavar="T1,T2,...", help="1-based frames to render (default: all)")
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("segment", parents=[common], help="propagate the first-frame mask")
    p.add_argument("sequence", help="directory with frames/, flow/ and mask.png")
    p.add_argument("-o", "--output", required=True, help="output directory")
    p.add_argument("--mask", help="first-frame mask (default: <sequence>/mask.png)")
    p.add_argument("--trajectories", help="reuse a trajectory file")
    p.add_argument("--supertrajectories", help="reuse a super-trajectory file (needs --trajectories)")
    p.add_argument("--dump-stages", action="store_true", help="write intermediate probability maps")
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("eval", parents=[common], help="segment and score a dataset")
    p.add_argument("dataset", help="dataset directory or a single sequence directory")
    p.add_argument("-o", "--output", help="JSON report path")
    p.add_argument("--masks", metavar="DIR", help="also write predicted masks per sequence")
    p.add_argument("--sweep", metavar="KEY=V1,V2,...", help="evaluate once per value of one config key")
    p.add_argument("--include-first", action="store_true", help="score the annotated first frame too")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"supertraj: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, ContractError, FlowFormatError, ModelError, OSError, ValueError) as exc:
        print(f"supertraj: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
