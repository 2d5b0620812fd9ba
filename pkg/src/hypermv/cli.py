"""Command-line entry point: ``hypermv <command> ...`` or ``python3 -m hypermv``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import hypergraph as hg
from .ablation import FULL_GRID, format_table, run_ablation
from .config import RunConfig
from .dataset import SPLIT_MODES, DatasetSplit, load_manifest, make_splits, scan_dataset
from .events import normalize_volume, read_events, render_volume, segment
from .model import ForwardTrace, HyperMVModel, recording_volumes
from .synth import CameraRig, EventCameraParams, synth_dataset
from .training import DivergenceError, evaluate, train

log = logging.getLogger("hypermv")


def _emit(obj, out: str | None = None) -> None:
    text = obj if isinstance(obj, str) else json.dumps(obj, indent=1)
    if out:
        Path(out).write_text(text + "\n", encoding="utf-8")
    else:
        print(text)


def _load_split(args, manifests, config: RunConfig | None = None) -> DatasetSplit:
    if getattr(args, "split", None):
        return DatasetSplit.load(args.split)
    config = config or RunConfig()
    return make_splits(manifests, config.split_mode, config.seed, config.val_views)


# ---------------------------------------------------------------- commands

def cmd_synth(args) -> int:
    rig = CameraRig.ring(args.views, distance=args.distance, width=args.width, height=args.height, focal=args.focal)
    params = EventCameraParams(threshold=args.theta, refractory_us=args.refractory)
    subjects = list(range(args.first_subject, args.first_subject + args.subjects))

    def progress(m):
        log.info("wrote %s", m.recording_id)

    ms = synth_dataset(args.classes, subjects, rig, params, args.out, args.duration_us, args.frame_rate, progress)
    print(f"{len(ms)} recordings, {sum(m.V for m in ms)} event files -> {args.out}")
    return 0


def cmd_split(args) -> int:
    split = make_splits(scan_dataset(args.data), args.mode, args.seed, args.val_views)
    split.save(args.out)
    print(f"{split.mode}: train {len(split.train)}, val {len(split.val)}, test {len(split.test)} -> {args.out}")
    return 0


def cmd_train(args) -> int:
    config = RunConfig.load(args.config) if args.config else RunConfig()
    manifests = scan_dataset(args.data)
    split = _load_split(args, manifests, config)

    def on_epoch(rec):
        print(json.dumps(rec), flush=True)

    res = train(config, split, args.data, args.out, manifests=manifests, on_epoch=on_epoch, workers=args.workers)
    print(f"best epoch {res.best_epoch}; checkpoint {res.checkpoint}")
    return 0


def cmd_eval(args) -> int:
    split = DatasetSplit.load(args.split)
    _emit(evaluate(args.checkpoint, split, args.partition, args.data), args.out)
    return 0


def cmd_ablate(args) -> int:
    base = RunConfig.load(args.config) if args.config else RunConfig()
    grid = json.loads(Path(args.grid).read_text(encoding="utf-8")) if args.grid else FULL_GRID
    manifests = scan_dataset(args.data)
    split = _load_split(args, manifests, base)
    seeds = list(range(args.seeds))

    def on_run(r):
        log.info("%s", r)

    rows = run_ablation(base, grid, seeds, split, args.data, out_dir=args.work, on_run=on_run)
    _emit(format_table(rows, args.format), args.out)
    return 0


def _recording(path: Path):
    folder = path if path.is_dir() else path.parent
    manifest = load_manifest(folder / "manifest.json")
    return manifest, manifest.read_views(folder.parent)


def cmd_inspect(args) -> int:
    manifest, streams = _recording(Path(args.recording))
    model = HyperMVModel.load(args.checkpoint) if args.checkpoint else None
    T = args.T or (model.config.T if model else RunConfig().T)
    if args.dump == "frames":
        out = {"recording_id": manifest.recording_id, "T": T, "views": []}
        for v, s in enumerate(streams):
            vol = render_volume(s, T, manifest.X, manifest.Y)
            out["views"].append({
                "view": v,
                "events": len(s),
                "packet_events": [p.count for p in segment(s, T)],
                "frame_sums": vol.frames.sum(axis=(1, 2)).tolist(),
                "frame_peaks": np.abs(vol.frames).max(axis=(1, 2)).tolist(),
            })
        _emit(out, args.out)
        return 0
    if model is None:
        print(f"--dump {args.dump} needs --checkpoint", file=sys.stderr)
        return 2
    if args.dump == "weights":
        out = {
            name: {"shape": list(p.shape), "mean": float(p.data.mean()), "std": float(p.data.std())}
            for name, p in model.params.items()
        }
        for name in ("attn.we", "attn.wv"):
            if name in model.params:
                out[name]["values"] = model.params[name].data.tolist()
        _emit(out, args.out)
        return 0
    trace = ForwardTrace()
    logits = model.forward([recording_volumes(streams, model.config.T)], trace).data[0]
    out = {"recording_id": manifest.recording_id, "logits": logits.tolist()}
    if trace.incidences:
        out["hypergraph"] = hg.describe(trace.incidences[0], model.config.T)
        out["omega"] = trace.omegas[0].tolist()
    else:
        out["hypergraph"] = None
    _emit(out, args.out)
    return 0


def cmd_convert(args) -> int:
    src = Path(args.inp)
    if src.suffix == ".csv":
        if args.width is None or args.height is None:
            print("--width and --height are required for a single event file", file=sys.stderr)
            return 2
        streams = [read_events(src, args.width, args.height)]
    else:
        _, streams = _recording(src)
    raw = np.stack([render_volume(s, args.T).frames for s in streams])
    norm = np.stack([normalize_volume(v) for v in raw])
    np.savez(args.out, frames=raw, volumes=norm)
    print(f"{raw.shape} -> {args.out}")
    return 0


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hypermv", description="Multi-view event-based action recognition.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic multi-view event dataset")
    p.add_argument("--classes", type=int, default=5)
    p.add_argument("--subjects", type=int, default=50, help="subject seeds per class")
    p.add_argument("--first-subject", type=int, default=0)
    p.add_argument("--views", type=int, default=3)
    p.add_argument("--theta", type=float, default=0.2, help="contrast threshold")
    p.add_argument("--refractory", type=int, default=100, help="refractory period (us)")
    p.add_argument("--width", type=int, default=32)
    p.add_argument("--height", type=int, default=32)
    p.add_argument("--focal", type=float, default=40.0)
    p.add_argument("--distance", type=float, default=4.0)
    p.add_argument("--duration-us", type=int, default=2_340_000)
    p.add_argument("--frame-rate", type=float, default=200.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("split", help="make a train/val/test split file")
    p.add_argument("--data", required=True)
    p.add_argument("--mode", choices=SPLIT_MODES, default="cross-subject")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--val-views", type=int, default=1)
    p.add_argument("--out", default="split.json")
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--config")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", help="split file (default: derived from the config)")
    p.add_argument("--workers", type=int, default=1, help="threads for frame rendering")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="Top-1/3/5 of a checkpoint on one partition")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--partition", choices=("train", "val", "test"), default="test")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="run an ablation grid")
    p.add_argument("--grid", help="JSON object mapping config fields to value lists")
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--config", help="base run config")
    p.add_argument("--data", required=True)
    p.add_argument("--split")
    p.add_argument("--work", help="keep per-run checkpoints here")
    p.add_argument("--format", choices=("text", "json"), default="text")
    p.add_argument("--out")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("inspect", help="dump hypergraph, weights or frames")
    p.add_argument("--recording", required=True, help="recording folder (with manifest.json)")
    p.add_argument("--dump", choices=("hypergraph", "weights", "frames"), required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--T", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("convert", help="events -> rendered volumes (.npz)")
    p.add_argument("--in", dest="inp", required=True, help="event CSV or recording folder")
    p.add_argument("--out", required=True)
    p.add_argument("--T", type=int, default=9)
    p.add_argument("--width", type=int)
    p.add_argument("--height", type=int)
    p.set_defaults(func=cmd_convert)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except DivergenceError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return 3
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
