"""Train on random synthetic scenes, detect on a scenario and score the result.

    python scripts/demo_end_to_end.py --out runs/demo
    python scripts/demo_end_to_end.py --scenario tests/fixtures/eruption.toml --out runs/eruption

Writes the training sequences, the model, the detection NDJSON and the
evaluation report below ``--out``.
"""

from __future__ import annotations

import argparse
import json
import logging
import time
from pathlib import Path

from halpha.config import load_config
from halpha.evaluation import evaluate, parse_reference_csv, read_detections
from halpha.imgio import read_manifest
from halpha.pipeline import run_detection, train_model
from halpha.synth import demo_scenario_path, load_scenario, random_scenario, write_sequence

log = logging.getLogger("demo")


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--scenario", type=Path, default=demo_scenario_path())
    ap.add_argument("--out", type=Path, required=True)
    ap.add_argument("--train-scenes", type=int, default=3)
    ap.add_argument("--train-frames", type=int, default=4)
    ap.add_argument("--train-seed", type=int, default=100)
    ap.add_argument("--config", help="pipeline TOML configuration")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s: %(message)s")

    cfg = load_config(args.config)
    args.out.mkdir(parents=True, exist_ok=True)

    t0 = time.perf_counter()
    frames, masks = [], []
    for s in range(args.train_scenes):
        seq = write_sequence(random_scenario(args.train_seed + s, frames=args.train_frames), args.out / f"train{s}")
        frames += seq.frame_paths
        masks += seq.mask_paths
    summary = train_model(frames, masks, cfg)
    summary.model.save(args.out / "model.json")
    log.info("trained on %d frames in %.1f s, samples per class %s", len(frames), time.perf_counter() - t0, summary.counts)

    seq = write_sequence(load_scenario(args.scenario), args.out / "sequence")
    events_path = args.out / "events.ndjson"
    with open(events_path, "w") as sink:
        _, stats = run_detection(read_manifest(seq.manifest), summary.model, cfg, sink)
    log.info("%d frames in %.1f s, %d records", stats.frames, stats.seconds, stats.records)

    report = evaluate(read_detections(events_path), parse_reference_csv(seq.reference), cfg.eval)
    (args.out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    print(events_path.read_text(), end="")
    print(json.dumps(report["totals"], indent=2, sort_keys=True))


if __name__ == "__main__":
    main()
