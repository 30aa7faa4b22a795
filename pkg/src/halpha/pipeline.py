"""Frame-by-frame detection and model training built from the library stages."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Iterable, Sequence

import numpy as np

from .classmodel import (
    NUM_CLASSES,
    GmmModel,
    ProbVolume,
    class_prob_volume,
    fit_gmm_em,
    temporal_average,
    training_samples,
)
from .config import PipelineConfig
from .errors import DegenerateFrame, DiskNotFound, SingularStructureTensor
from .events import EventTracker
from .imgio import DiskGeometry, FrameBuffer, SequenceManifest, estimate_disk, load_frame, stamped_name, write_pgm
from .preprocess import (
    BandpassParams,
    BandpassResult,
    DisplacementVector,
    apply_shift,
    normalize,
    register_translation,
    structural_bandpass_solve,
)
from .segment import LabelMap, read_label_pgm, segment_frame_solve, write_label_pgm
from .varsolve import PottsState

log = logging.getLogger(__name__)

# failures that cost one frame, not the run
FRAME_ERRORS = (DiskNotFound, DegenerateFrame, SingularStructureTensor)


def bandpass_params(cfg: PipelineConfig) -> BandpassParams:
    p = cfg.preprocess
    return BandpassParams(p.lambda1, p.lambda2, p.max_iters, p.tol)


@dataclass
class Prepared:
    """A normalised, registered frame with its disk and structural bandpass."""

    frame: FrameBuffer
    geom: DiskGeometry
    bandpass: BandpassResult
    shift: DisplacementVector


def prepare_frame(
    raw: FrameBuffer,
    cfg: PipelineConfig,
    reference: FrameBuffer | None = None,
    warm: BandpassResult | None = None,
) -> Prepared:
    """normalise -> locate disk -> register onto ``reference`` -> bandpass."""
    norm = normalize(raw)
    geom = estimate_disk(raw)
    shift = DisplacementVector(0.0, 0.0)
    if reference is not None and cfg.preprocess.register:
        shift = register_translation(reference, norm, cfg.preprocess.pyramid_levels)
        norm = apply_shift(norm, shift)
        geom = DiskGeometry(geom.center_x + shift.u1, geom.center_y + shift.u2, geom.radius)
    bp = structural_bandpass_solve(norm, bandpass_params(cfg), warm)
    return Prepared(norm, geom, bp, shift)


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainingSummary:
    model: GmmModel
    counts: list[int]
    frames_used: int


def train_model(
    frame_paths: Sequence[str | Path],
    mask_paths: Sequence[str | Path],
    cfg: PipelineConfig,
) -> TrainingSummary:
    """Fit the class mixtures from frames and matching annotation masks (255 = unlabelled)."""
    if len(frame_paths) != len(mask_paths):
        raise ValueError("need one annotation mask per frame")
    if not frame_paths:
        raise ValueError("no training frames given")
    rng = np.random.default_rng(cfg.classmodel.seed)
    feats, labels = [], []
    for fp, mp in zip(frame_paths, mask_paths):
        raw = load_frame(fp)
        mask = read_label_pgm(mp)
        prep = prepare_frame(raw, cfg)
        x, y = training_samples(prep.bandpass.frame, prep.geom, mask, cfg.classmodel.max_per_class, rng)
        feats.append(x)
        labels.append(y)
        log.info("%s: %d labelled pixels", Path(fp).name, y.size)
    x = np.concatenate(feats)
    y = np.concatenate(labels)
    counts = [int(np.sum(y == c)) for c in range(NUM_CLASSES)]
    model = fit_gmm_em(x, y, cfg.classmodel.components, cfg.classmodel.seed)
    return TrainingSummary(model, counts, len(frame_paths))


# ---------------------------------------------------------------------------
# detection


@dataclass
class DetectionStats:
    frames: int = 0
    skipped: int = 0
    records: int = 0
    seconds: float = 0.0
    skipped_frames: list[int] = field(default_factory=list)


class DetectionPipeline:
    """Stateful per-frame detector; feed frames in time order, then call ``finish``."""

    def __init__(self, model: GmmModel, cfg: PipelineConfig, debug_dir: str | Path | None = None):
        cfg.validate()
        self.model = model
        self.cfg = cfg
        self.tracker = EventTracker(cfg.events)
        self.reference: FrameBuffer | None = None
        self.bp_warm: BandpassResult | None = None
        self.potts_warm: PottsState | None = None
        self.avg: ProbVolume | None = None
        self.debug_dir = Path(debug_dir) if debug_dir else None
        if self.debug_dir:
            self.debug_dir.mkdir(parents=True, exist_ok=True)
        self.last_labels: LabelMap | None = None

    def process(self, raw: FrameBuffer) -> list:
        """Run one frame; returns the event reports that became final."""
        prep = prepare_frame(raw, self.cfg, self.reference, self.bp_warm)
        if self.reference is None:
            self.reference = prep.frame
        self.bp_warm = prep.bandpass
        probs = class_prob_volume(prep.bandpass.frame, prep.geom, self.model)
        self.avg = temporal_average(self.avg, probs, self.cfg.classmodel.temporal_alpha)
        sc = self.cfg.segment
        seg = segment_frame_solve(self.avg, sc.lambda_data, self.potts_warm, sc.max_iters, sc.tol, sc.check_interval)
        self.potts_warm = seg.state
        self.last_labels = seg.labels
        if self.debug_dir:
            self._write_debug(prep, self.avg, seg.labels)
        return self.tracker.update(seg.labels, prep.frame, prep.geom, prep.bandpass.frame)

    def finish(self) -> list:
        return self.tracker.finish()

    def _write_debug(self, prep: Prepared, probs: ProbVolume, labels: LabelMap) -> None:
        ts = prep.frame.timestamp
        bp = prep.bandpass.frame.data
        scale = max(float(np.abs(bp).max()), 1e-12)
        write_pgm(self.debug_dir / stamped_name("bandpass", ts, ".pgm"), (bp / scale + 1.0) * 32767.5)
        for c in range(probs.planes.shape[0]):
            write_pgm(self.debug_dir / stamped_name(f"nll{c}", ts, ".pgm"), probs.planes[c] / 50.0 * 65535)
        write_label_pgm(self.debug_dir / stamped_name("labels", ts, ".pgm"), labels)


def _emit(reports: Iterable, sink: IO[str] | None, stats: DetectionStats) -> list:
    out = list(reports)
    for rep in out:
        stats.records += 1
        if sink is not None:
            sink.write(json.dumps(rep.to_record(), sort_keys=False) + "\n")
    if sink is not None and out:
        sink.flush()
    return out


def run_detection(
    manifest: SequenceManifest,
    model: GmmModel,
    cfg: PipelineConfig,
    sink: IO[str] | None = None,
    debug_dir: str | Path | None = None,
) -> tuple[list, DetectionStats]:
    """Process a manifest in timestamp order, writing NDJSON records to ``sink`` as they finalise."""
    pipe = DetectionPipeline(model, cfg, debug_dir)
    stats = DetectionStats()
    reports: list = []
    t0 = time.perf_counter()
    for index, (path, stamp) in enumerate(manifest):
        try:
            raw = load_frame(path, index, stamp)
            reports += _emit(pipe.process(raw), sink, stats)
            stats.frames += 1
        except FRAME_ERRORS as exc:
            stats.skipped += 1
            stats.skipped_frames.append(index)
            log.warning("frame %d (%s) skipped: %s", index, Path(path).name, exc)
    reports += _emit(pipe.finish(), sink, stats)
    stats.seconds = time.perf_counter() - t0
    return reports, stats
