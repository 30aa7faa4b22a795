"""Scoring detections against reference event lists."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass
from datetime import date, datetime
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DimensionMismatch
from .events import EruptionReport, FlareReport, report_from_record
from .imgio import format_timestamp, great_circle_deg, parse_timestamp

REFERENCE_COLUMNS = ("type", "start", "end", "importance", "lat", "lon")


class ReferenceFormatError(ValueError):
    """Malformed reference CSV; ``line`` is 1-based."""

    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


@dataclass(frozen=True)
class ReferenceEvent:
    type: str
    start: datetime
    end: datetime
    importance: str | None = None
    lat_deg: float | None = None
    lon_deg: float | None = None

    def __post_init__(self):
        if self.end < self.start:
            raise ValueError("reference event ends before it starts")


@dataclass(frozen=True)
class MatchCounts:
    true_positives: int = 0
    false_positives: int = 0
    false_negatives: int = 0

    def __post_init__(self):
        if min(self.true_positives, self.false_positives, self.false_negatives) < 0:
            raise ValueError("counts must be non-negative")

    def __add__(self, other: "MatchCounts") -> "MatchCounts":
        return MatchCounts(
            self.true_positives + other.true_positives,
            self.false_positives + other.false_positives,
            self.false_negatives + other.false_negatives,
        )


@dataclass(frozen=True)
class Scores:
    precision: float
    recall: float
    f_score: float
    degenerate: bool = False


@dataclass(frozen=True)
class MatchTolerances:
    flare_time_s: float = 600.0
    flare_distance_deg: float = 10.0
    eruption_time_s: float = 1800.0
    eruption_distance_deg: float = 15.0


def prf(counts: MatchCounts) -> Scores:
    """Precision, recall and F-score; an undefined ratio is reported as 0 and flagged."""
    tp, fp, fn = counts.true_positives, counts.false_positives, counts.false_negatives
    degenerate = tp + fp == 0 or tp + fn == 0
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    f = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return Scores(p, r, f, degenerate)


def mask_iou(predicted: np.ndarray, truth: np.ndarray) -> float:
    predicted = np.asarray(predicted, dtype=bool)
    truth = np.asarray(truth, dtype=bool)
    if predicted.shape != truth.shape:
        raise DimensionMismatch(f"mask shapes differ: {predicted.shape} vs {truth.shape}")
    union = np.count_nonzero(predicted | truth)
    if union == 0:
        return 1.0
    return np.count_nonzero(predicted & truth) / union


def _close(lat1, lon1, lat2, lon2, limit: float) -> bool:
    if None in (lat1, lon1, lat2, lon2):
        return False
    return great_circle_deg(lat1, lon1, lat2, lon2) <= limit


def _greedy(detected: list, reference: list, det_time, ref_time, ok) -> MatchCounts:
    """One-to-one matching: detections in time order each take the earliest free compatible reference."""
    det = sorted(detected, key=det_time)
    ref = sorted(reference, key=ref_time)
    used = [False] * len(ref)
    tp = 0
    for d in det:
        for j, r in enumerate(ref):
            if not used[j] and ok(d, r):
                used[j] = True
                tp += 1
                break
    return MatchCounts(tp, len(det) - tp, len(ref) - tp)


def match_flares(detected: Sequence[FlareReport], reference: Sequence[ReferenceEvent], tol: MatchTolerances = MatchTolerances()) -> MatchCounts:
    refs = [r for r in reference if r.type == "flare"]

    def ok(d: FlareReport, r: ReferenceEvent) -> bool:
        return (
            abs((d.start - r.start).total_seconds()) <= tol.flare_time_s
            and abs((d.end - r.end).total_seconds()) <= tol.flare_time_s
            and str(d.importance) == str(r.importance)
            and _close(d.lat_deg, d.lon_deg, r.lat_deg, r.lon_deg, tol.flare_distance_deg)
        )

    return _greedy(list(detected), refs, lambda d: d.start, lambda r: r.start, ok)


def match_eruptions(
    detected: Sequence[EruptionReport], reference: Sequence[ReferenceEvent], tol: MatchTolerances = MatchTolerances()
) -> MatchCounts:
    refs = [r for r in reference if r.type == "filament_eruption"]

    def ok(d: EruptionReport, r: ReferenceEvent) -> bool:
        return abs((d.disappearance - r.start).total_seconds()) <= tol.eruption_time_s and _close(
            d.lat_deg, d.lon_deg, r.lat_deg, r.lon_deg, tol.eruption_distance_deg
        )

    return _greedy(list(detected), refs, lambda d: d.disappearance, lambda r: r.start, ok)


# ---------------------------------------------------------------------------
# file formats


def _opt_float(text: str) -> float | None:
    text = text.strip()
    return float(text) if text else None


def parse_reference_csv(path: str | Path) -> list[ReferenceEvent]:
    """Read ``type,start,end,importance,lat,lon`` rows; raises ReferenceFormatError."""
    events = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != REFERENCE_COLUMNS:
            raise ReferenceFormatError(1, f"expected header {','.join(REFERENCE_COLUMNS)}")
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(REFERENCE_COLUMNS):
                raise ReferenceFormatError(line, f"expected {len(REFERENCE_COLUMNS)} fields, got {len(row)}")
            kind, start, end, importance, lat, lon = (c.strip() for c in row)
            if kind not in ("flare", "filament_eruption"):
                raise ReferenceFormatError(line, f"unknown event type {kind!r}")
            try:
                t0 = parse_timestamp(start)
                t1 = parse_timestamp(end) if end else t0
                events.append(ReferenceEvent(kind, t0, t1, importance or None, _opt_float(lat), _opt_float(lon)))
            except ValueError as exc:
                raise ReferenceFormatError(line, str(exc)) from exc
    return events


def write_reference_csv(path: str | Path, events: Iterable[ReferenceEvent]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REFERENCE_COLUMNS)
        for e in events:
            w.writerow(
                [
                    e.type,
                    format_timestamp(e.start),
                    format_timestamp(e.end),
                    e.importance or "",
                    "" if e.lat_deg is None else f"{e.lat_deg:.4f}",
                    "" if e.lon_deg is None else f"{e.lon_deg:.4f}",
                ]
            )


def read_detections(path: str | Path) -> list:
    """Event reports from an NDJSON file written by ``detect``."""
    out = []
    with open(path) as fh:
        for n, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                out.append(report_from_record(json.loads(line)))
            except (ValueError, KeyError) as exc:
                raise ReferenceFormatError(n, f"bad detection record: {exc}") from exc
    return out


def _day(ts: datetime) -> date:
    return ts.date()


def evaluate(detections: Sequence, reference: Sequence[ReferenceEvent], tol: MatchTolerances = MatchTolerances()) -> dict:
    """Per-day flare and eruption counts plus totals and scores, as a JSON-ready dict."""
    flares = [d for d in detections if isinstance(d, FlareReport)]
    eruptions = [d for d in detections if isinstance(d, EruptionReport)]
    days = sorted(
        {_day(d.start) for d in flares}
        | {_day(d.disappearance) for d in eruptions}
        | {_day(r.start) for r in reference}
    )
    report: dict = {"days": {}, "totals": {}}
    totals = {"flare": MatchCounts(), "filament_eruption": MatchCounts()}
    for day in days:
        fc = match_flares([d for d in flares if _day(d.start) == day], [r for r in reference if _day(r.start) == day], tol)
        ec = match_eruptions(
            [d for d in eruptions if _day(d.disappearance) == day], [r for r in reference if _day(r.start) == day], tol
        )
        totals["flare"] += fc
        totals["filament_eruption"] += ec
        report["days"][day.isoformat()] = {"flare": asdict(fc), "filament_eruption": asdict(ec)}
    for kind, counts in totals.items():
        report["totals"][kind] = {**asdict(counts), **asdict(prf(counts))}
    return report
