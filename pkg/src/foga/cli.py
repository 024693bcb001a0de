"""Command-line entry point.

    foga synth  --out DIR [--seed N]
    foga train  --data DIR --out DIR
    foga score  --data DIR --checkpoint CKPT --out DIR [--maps] [--attention]
    foga eval   --data DIR [--checkpoint CKPT] --out DIR
    foga bench  [--checkpoint CKPT] --out DIR
    foga ablate --data DIR --out DIR [--sweep FILE]

Common flags: ``--config FILE``, ``--set key=value`` (repeatable),
``--mode plain|pyramid``, ``--device cpu``.  ``FOGA_DATA_ROOT`` replaces a
missing ``--data``.  Exit codes: 0 ok, 2 config error, 3 data error,
4 runtime error (including checkpoint problems).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import yaml

from . import __version__
from .backbone import FoGA, load_checkpoint
from .config import CheckpointError, ConfigError, DataError, RunConfig, load_config
from .datapipe import load_split, load_video, synth_generate, write_split

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_RUNTIME = 0, 2, 3, 4

log = logging.getLogger("foga")


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse exits 2 by default; keep that but route through us
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run configuration")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="dotted config override, repeatable")
    common.add_argument("--out", required=True, help="output directory")
    common.add_argument("--mode", choices=["plain", "pyramid"], help="scoring mode")
    common.add_argument("--device", default="cpu", help="torch device (only cpu is supported)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="foga", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=f"foga {__version__}")
    sub = p.add_subparsers(dest="verb", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", parents=[common], help="write the synthetic dataset")
    s.add_argument("--seed", type=int)

    s = sub.add_parser("train", parents=[common], help="train a model")
    s.add_argument("--data", help="dataset root (training/ and testing/)")

    for verb, text in (("score", "write per-video score CSVs"), ("eval", "score and compute AUC")):
        s = sub.add_parser(verb, parents=[common], help=text)
        s.add_argument("--data")
        s.add_argument("--checkpoint", help="trained checkpoint (random weights if omitted)")
        if verb == "score":
            s.add_argument("--maps", action="store_true", help="also dump hybrid error maps")
            s.add_argument("--attention", action="store_true",
                           help="dump GCAM attention maps for the first window of each video")
        else:
            s.add_argument("--fps", action="store_true", help="include throughput in the report")

    s = sub.add_parser("bench", parents=[common], help="params, FLOPs and FPS")
    s.add_argument("--checkpoint")
    s.add_argument("--frames", type=int, default=200)

    s = sub.add_parser("ablate", parents=[common], help="GCAM / loss ablation grid")
    s.add_argument("--data")
    s.add_argument("--sweep", help="YAML sweep file restricting the grid")
    return p


def _config(args) -> RunConfig:
    overrides = list(args.set)
    if args.mode:
        overrides.append(f"scoring.mode={args.mode}")
    if getattr(args, "seed", None) is not None:
        overrides.append(f"synth.seed={args.seed}")
    return load_config(args.config, overrides)


def _data_root(args, cfg: RunConfig) -> Path:
    root = getattr(args, "data", None) or os.environ.get("FOGA_DATA_ROOT") or cfg.data.root
    if not root:
        raise DataError("no dataset given: pass --data, set FOGA_DATA_ROOT or data.root")
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"dataset root not found: {root}")
    return root


def _model(args, cfg: RunConfig) -> FoGA:
    if getattr(args, "checkpoint", None):
        model, _ = load_checkpoint(args.checkpoint, cfg.model)
        return model
    from .engine import seed_everything

    seed_everything(cfg.train.seed)
    model = FoGA(cfg.model)
    model.eval()
    return model


def _snapshot(out: Path, cfg: RunConfig) -> None:
    out.mkdir(parents=True, exist_ok=True)
    cfg.dump(out / "config.yaml")
    (out / "VERSION").write_text(f"foga {__version__}\n")


def _cmd_synth(args, cfg, out):
    train_set, test_set = synth_generate(cfg.synth)
    write_split(train_set, out)
    write_split(test_set, out)
    (out / "intervals.json").write_text(json.dumps(test_set.anomaly_intervals, indent=2, sort_keys=True))
    print(f"wrote {len(train_set)} train and {len(test_set)} test videos to {out}")


def _cmd_train(args, cfg, out):
    from .engine import train

    root = _data_root(args, cfg)
    result = train(cfg, load_split(root, "train", cfg.data.train_dir), out)
    print(f"trained {len(result.history)} steps; checkpoint {result.checkpoint}")


def _cmd_score(args, cfg, out):
    from .engine import export_attention, score_dataset

    root = _data_root(args, cfg)
    test = load_split(root, "test", cfg.data.test_dir)
    model = _model(args, cfg)
    series, skipped = score_dataset(model, test, cfg, out / "error_maps" if args.maps else None)
    for s in series:
        s.to_csv(out / "scores" / f"{s.video_id}.csv")
    if args.attention:
        m = model.config
        for video in test:
            if len(video) >= m.t:
                frames = load_video(video, m.image_size, m.c_in)
                export_attention(model, frames[: m.t], out / "attention" / f"{video.video_id}.npz")
    print(f"scored {len(series)} videos ({len(skipped)} skipped) into {out / 'scores'}")


def _cmd_eval(args, cfg, out):
    from .engine import evaluate

    root = _data_root(args, cfg)
    test = load_split(root, "test", cfg.data.test_dir)
    report, series = evaluate(_model(args, cfg), test, cfg, with_fps=args.fps)
    for s in series:
        s.to_csv(out / "scores" / f"{s.video_id}.csv")
    report.to_json(out / "report.json")
    print(f"AUC {report.auc:.4f} (macro {report.macro_auc})")


def _cmd_bench(args, cfg, out):
    from .engine import bench

    record = bench(_model(args, cfg), cfg, frames=args.frames)
    (out / "bench.json").write_text(json.dumps(record, indent=2))
    print(json.dumps(record, indent=2))


def _cmd_ablate(args, cfg, out):
    from .engine import ablate, format_table

    sweep = None
    if args.sweep:
        try:
            sweep = yaml.safe_load(Path(args.sweep).read_text())
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"bad sweep file {args.sweep}: {exc}") from exc
    root = _data_root(args, cfg)
    rows = ablate(cfg, load_split(root, "train", cfg.data.train_dir),
                  load_split(root, "test", cfg.data.test_dir), sweep, out)
    (out / "ablation.json").write_text(json.dumps(rows, indent=2))
    table = format_table(rows)
    (out / "ablation.txt").write_text(table + "\n")
    print(table)


COMMANDS = {
    "synth": _cmd_synth,
    "train": _cmd_train,
    "score": _cmd_score,
    "eval": _cmd_eval,
    "bench": _cmd_bench,
    "ablate": _cmd_ablate,
}


def run(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except ConfigError as exc:
        print(f"foga: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.device != "cpu":
            raise ConfigError(f"device {args.device!r} is not supported; use cpu")
        cfg = _config(args)
        out = Path(args.out)
        _snapshot(out, cfg)
        COMMANDS[args.verb](args, cfg, out)
    except ConfigError as exc:
        print(f"foga: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"foga: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (CheckpointError, RuntimeError) as exc:
        print(f"foga: runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
