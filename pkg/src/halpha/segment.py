"""Per-frame multi-label segmentation with the relaxed Potts model."""

from __future__ import annotations

from dataclasses import dataclass
from datetime import datetime
from pathlib import Path

import numpy as np

from .classmodel import NUM_CLASSES, ProbVolume
from .imgio import read_pgm, write_pgm
from .varsolve import PottsProblem, PottsState, potts_relax, round_labeling

PALETTE = np.array([0, 85, 170, 255], dtype=np.uint8)


@dataclass
class LabelMap:
    labels: np.ndarray
    timestamp: datetime | None = None
    frame_index: int = 0

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.uint8)
        if self.labels.ndim != 2:
            raise ValueError("label map must be 2D")
        if self.labels.size and self.labels.max() >= NUM_CLASSES:
            raise ValueError("label map holds an invalid class id")

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    def mask(self, cls: int) -> np.ndarray:
        return self.labels == cls


@dataclass
class Segmentation:
    labels: LabelMap
    state: PottsState
    iterations: int


def segment_frame_solve(
    probs: ProbVolume,
    lambda_data: float = 5.0,
    warm: PottsState | None = None,
    max_iters: int = 1500,
    tol: float = 1e-5,
    check_interval: int = 50,
) -> Segmentation:
    if not lambda_data > 0:
        raise ValueError("lambda_data must be positive")
    relaxed = potts_relax(PottsProblem(probs.planes, lambda_data, max_iters, check_interval, tol, warm))
    labels = LabelMap(round_labeling(relaxed), probs.timestamp, probs.frame_index)
    return Segmentation(labels, relaxed.state, relaxed.info.iterations)


def segment_frame(probs: ProbVolume, lambda_data: float = 5.0) -> LabelMap:
    """Hard labelling minimising 0.5 * total perimeter + lambda_data * summed class costs.

    Single-pixel islands are kept; size filtering belongs to postprocessing.
    """
    return segment_frame_solve(probs, lambda_data).labels


def write_label_pgm(path: str | Path, labels: LabelMap | np.ndarray, palette: bool = True) -> None:
    """8-bit PGM; ``palette`` maps class ids to grey levels {0, 85, 170, 255}."""
    arr = getattr(labels, "labels", labels)
    write_pgm(path, PALETTE[arr] if palette else arr, maxval=255)


def read_label_pgm(path: str | Path) -> np.ndarray:
    """Annotation mask with raw class ids (255 = unlabelled)."""
    return read_pgm(path).astype(np.uint8)
