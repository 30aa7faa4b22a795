"""Command line entry point: ``halpha {train,detect,eval,synth}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .config import ConfigError, PipelineConfig, dump_config, load_config
from .errors import HalphaError, InsufficientSamples, InvalidScenario

log = logging.getLogger("halpha")

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2


class UsageError(Exception):
    pass


def _parse_overrides(items: list[str]) -> dict[str, str]:
    out = {}
    for item in items or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        out[key.strip()] = value
    return out


def _config(args) -> PipelineConfig:
    overrides = _parse_overrides(args.set)
    for attr, key in (("model", "io.model"), ("output", "io.output"), ("debug_dir", "io.debug_dir")):
        value = getattr(args, attr, None)
        if value:
            overrides[key] = str(value)
    return load_config(args.config, overrides)


def _read_pairs(args) -> tuple[list[Path], list[Path]]:
    frames = [Path(p) for p in args.frames]
    masks = [Path(p) for p in args.masks]
    if args.list:
        for line in Path(args.list).read_text().splitlines():
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            if len(parts) != 2:
                raise UsageError(f"{args.list}: expected 'frame mask' per line, got {line!r}")
            base = Path(args.list).parent
            frames.append(base / parts[0])
            masks.append(base / parts[1])
    if not frames:
        raise UsageError("train needs at least one annotated frame")
    if len(frames) != len(masks):
        raise UsageError("train needs exactly one mask per frame")
    return frames, masks


def cmd_train(args) -> int:
    from .pipeline import train_model

    cfg = _config(args)
    frames, masks = _read_pairs(args)
    out = Path(args.output or cfg.io.model or "model.json")
    summary = train_model(frames, masks, cfg)
    summary.model.save(out)
    names = ("sunspot", "filament", "flare", "background")
    for name, count, ll in zip(names, summary.counts, summary.model.loglik):
        print(f"{name:10s} samples={count:7d} loglik={ll:.6f}")
    print(f"model written to {out}")
    return EXIT_OK


def cmd_detect(args) -> int:
    from .classmodel import GmmModel
    from .imgio import read_manifest
    from .pipeline import run_detection

    cfg = _config(args)
    model_path = args.model or cfg.io.model
    if not model_path:
        raise UsageError("detect needs --model (or io.model in the config)")
    manifest = read_manifest(args.manifest)
    model = GmmModel.load(model_path)
    output = args.output or cfg.io.output
    debug = args.debug_dir or cfg.io.debug_dir or None
    if output and output != "-":
        with open(output, "w") as sink:
            _, stats = run_detection(manifest, model, cfg, sink, debug)
    else:
        _, stats = run_detection(manifest, model, cfg, sys.stdout, debug)
    log.info(
        "%d frames processed, %d skipped, %d records in %.1f s", stats.frames, stats.skipped, stats.records, stats.seconds
    )
    return EXIT_OK


def cmd_eval(args) -> int:
    from .evaluation import ReferenceFormatError, evaluate, parse_reference_csv, read_detections

    cfg = _config(args)
    try:
        reference = parse_reference_csv(args.reference)
    except ReferenceFormatError as exc:
        print(f"error: {args.reference}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        detections = read_detections(args.detections)
    except ReferenceFormatError as exc:
        print(f"error: {args.detections}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    report = evaluate(detections, reference, cfg.eval)
    text = json.dumps(report, indent=2, sort_keys=True)
    if args.output:
        Path(args.output).write_text(text + "\n")
    else:
        print(text)
    return EXIT_OK


def cmd_synth(args) -> int:
    from .synth import demo_scenario_path, load_scenario, random_scenario, write_sequence

    if args.random is not None:
        if args.scenario:
            raise UsageError("give either a scenario file or --random, not both")
        scenario = random_scenario(args.random, frames=args.frames or 8)
    else:
        scenario = load_scenario(Path(args.scenario) if args.scenario else demo_scenario_path())
        if args.frames:
            scenario.frames = args.frames
            scenario.validate()
    out = write_sequence(scenario, args.output)
    events = json.loads(out.events.read_text())
    print(
        f"{len(out.frame_paths)} frames and {len(out.mask_paths)} masks written to {out.root} "
        f"({len(events['flares'])} flares, {len(events['eruptions'])} eruptions)"
    )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="halpha", description="Flare and filament detection in H-alpha sequences.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML configuration file")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config value, e.g. segment.lambda_data=4")
    common.add_argument("--print-config", action="store_true", help="print the effective configuration and exit")

    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", parents=[common], help="fit class models from annotated frames")
    p.add_argument("--frames", nargs="*", default=[], help="training frames")
    p.add_argument("--masks", nargs="*", default=[], help="annotation masks, one per frame (255 = unlabelled)")
    p.add_argument("--list", help="text file with 'frame mask' pairs")
    p.add_argument("-o", "--output", help="model file (JSON)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("detect", parents=[common], help="run detection over a frame sequence")
    p.add_argument("manifest", help="sequence manifest")
    p.add_argument("--model", help="trained model file")
    p.add_argument("-o", "--output", help="NDJSON output file (default stdout)")
    p.add_argument("--debug-dir", help="write per-frame bandpass, cost planes and label maps here")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("eval", parents=[common], help="score detections against a reference catalogue")
    p.add_argument("detections", help="NDJSON file written by detect")
    p.add_argument("reference", help="reference CSV (type,start,end,importance,lat,lon)")
    p.add_argument("-o", "--output", help="JSON report file (default stdout)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic sequence with ground truth")
    p.add_argument("scenario", nargs="?", help="scenario TOML (default: bundled demo)")
    p.add_argument("--random", type=int, metavar="SEED", help="random training scene with every class present")
    p.add_argument("--frames", type=int, help="override the number of frames")
    p.add_argument("-o", "--output", required=True, help="output directory")
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.print_config:
            print(dump_config(_config(args)), end="")
            return EXIT_OK
        return args.func(args)
    except (UsageError, ConfigError, InvalidScenario, InsufficientSamples) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (HalphaError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
