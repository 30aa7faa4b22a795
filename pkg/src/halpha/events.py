"""Postprocessing of label maps: components, grouping, tracking, filters and event reports."""

from __future__ import annotations

import heapq
import logging
import math
from collections import deque
from dataclasses import dataclass, field
from datetime import datetime
from typing import Iterable, Sequence

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .classmodel import Label
from .errors import OffDisk, OffDiskCentroid
from .imgio import DiskGeometry, FrameBuffer, format_timestamp, parse_timestamp, pixel_to_heliographic

log = logging.getLogger(__name__)

SQRT2 = math.sqrt(2.0)
MSH_PER_SQ_DEG = 48.5
# upper bounds (corrected square degrees) of importance S, 1, 2, 3; anything larger is 4
IMPORTANCE_BOUNDS = (2.0, 5.15, 12.45, 24.7)
IMPORTANCE_CLASSES = ("S", "1", "2", "3", "4")
FLOYD_WARSHALL_MAX_NODES = 1500
_EIGHT = np.ones((3, 3), dtype=bool)


@dataclass
class Component:
    """8-connected pixel set of one class in one frame."""

    cls: int
    rows: np.ndarray
    cols: np.ndarray
    frame_index: int = 0
    timestamp: datetime | None = None

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=np.int32)
        self.cols = np.asarray(self.cols, dtype=np.int32)
        if self.rows.size == 0 or self.rows.shape != self.cols.shape:
            raise ValueError("component needs a non-empty pixel set")
        if self.cls == Label.BACKGROUND:
            raise ValueError("background is not a component class")

    @property
    def area(self) -> int:
        return int(self.rows.size)

    @property
    def centroid(self) -> tuple[float, float]:
        """(x, y) in pixels."""
        return float(self.cols.mean()), float(self.rows.mean())

    @property
    def bbox(self) -> tuple[int, int, int, int]:
        """(row_min, col_min, row_max, col_max), inclusive."""
        return int(self.rows.min()), int(self.cols.min()), int(self.rows.max()), int(self.cols.max())

    def runs(self) -> list[tuple[int, int, int]]:
        """Run-length encoding as (row, first_col, last_col) triples."""
        order = np.lexsort((self.cols, self.rows))
        r, c = self.rows[order], self.cols[order]
        breaks = np.nonzero((np.diff(r) != 0) | (np.diff(c) != 1))[0] + 1
        starts = np.concatenate([[0], breaks])
        ends = np.concatenate([breaks - 1, [r.size - 1]])
        return [(int(r[s]), int(c[s]), int(c[e])) for s, e in zip(starts, ends)]

    def mask(self, shape: tuple[int, int]) -> np.ndarray:
        out = np.zeros(shape, dtype=bool)
        out[self.rows, self.cols] = True
        return out


@dataclass
class ComponentGroup:
    """Components of one class and frame treated as a single object."""

    cls: int
    parts: list[Component]

    @property
    def rows(self) -> np.ndarray:
        return np.concatenate([p.rows for p in self.parts])

    @property
    def cols(self) -> np.ndarray:
        return np.concatenate([p.cols for p in self.parts])

    @property
    def area(self) -> int:
        return sum(p.area for p in self.parts)

    @property
    def centroid(self) -> tuple[float, float]:
        return float(self.cols.mean()), float(self.rows.mean())

    @property
    def bbox(self) -> tuple[int, int, int, int]:
        boxes = np.array([p.bbox for p in self.parts])
        return int(boxes[:, 0].min()), int(boxes[:, 1].min()), int(boxes[:, 2].max()), int(boxes[:, 3].max())

    def mask(self, shape: tuple[int, int]) -> np.ndarray:
        out = np.zeros(shape, dtype=bool)
        out[self.rows, self.cols] = True
        return out

    def key(self) -> tuple[int, int]:
        r, c = self.rows, self.cols
        i = np.lexsort((c, r))[0]
        return int(r[i]), int(c[i])


# ---------------------------------------------------------------------------
# components and grouping


def extract_components(label_map, cls: int, min_area: int = 10) -> list[Component]:
    """8-connected components of ``cls`` with at least ``min_area`` pixels, in raster order."""
    labels = getattr(label_map, "labels", label_map)
    mask = labels == cls
    lab, n = ndimage.label(mask, structure=_EIGHT)
    if n == 0:
        return []
    rows, cols = np.nonzero(lab)
    ids = lab[rows, cols]
    order = np.argsort(ids, kind="stable")
    rows, cols, ids = rows[order], cols[order], ids[order]
    bounds = np.searchsorted(ids, np.arange(1, n + 2))
    frame_index = getattr(label_map, "frame_index", 0)
    timestamp = getattr(label_map, "timestamp", None)
    out = []
    for k in range(n):
        a, b = bounds[k], bounds[k + 1]
        if b - a >= min_area:
            out.append(Component(cls, rows[a:b], cols[a:b], frame_index, timestamp))
    return out


def _bbox_gap(a, b) -> float:
    ra0, ca0, ra1, ca1 = a
    rb0, cb0, rb1, cb1 = b
    dr = max(0, rb0 - ra1, ra0 - rb1)
    dc = max(0, cb0 - ca1, ca0 - cb1)
    return math.hypot(dr, dc)


def min_distance(a, b, upper: float = math.inf) -> float:
    """Smallest Euclidean distance between pixel centres of two pixel sets."""
    if _bbox_gap(a.bbox, b.bbox) >= upper:
        return math.inf
    pa = np.column_stack([a.rows, a.cols])
    pb = np.column_stack([b.rows, b.cols])
    if pa.shape[0] < pb.shape[0]:
        pa, pb = pb, pa
    d, _ = cKDTree(pa).query(pb, k=1, distance_upper_bound=upper)
    return float(d.min())


DEFAULT_GROUP_DISTANCE = {Label.FILAMENT: 25.0, Label.FLARE: 150.0}


def group_components(components: Sequence, cls: int | None = None, threshold: float | None = None) -> list[ComponentGroup]:
    """Single-linkage grouping: items closer than ``threshold`` px share a group.

    The default threshold is 25 px for filaments and 150 px for flares; other
    classes are not merged. Input may mix components and previously built groups.
    """
    items = list(components)
    if not items:
        return []
    if cls is None:
        cls = items[0].cls
    if threshold is None:
        threshold = DEFAULT_GROUP_DISTANCE.get(cls, 0.0)
    parent = list(range(len(items)))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(len(items)):
        for j in range(i + 1, len(items)):
            if find(i) == find(j):
                continue
            if min_distance(items[i], items[j], threshold) < threshold:
                parent[find(j)] = find(i)
    buckets: dict[int, list[Component]] = {}
    for i, item in enumerate(items):
        parts = item.parts if isinstance(item, ComponentGroup) else [item]
        buckets.setdefault(find(i), []).extend(parts)
    groups = [ComponentGroup(cls, sorted(parts, key=lambda p: (int(p.rows.min()), int(p.cols[np.argmin(p.rows)])))) for parts in buckets.values()]
    groups.sort(key=ComponentGroup.key)
    return groups


# ---------------------------------------------------------------------------
# identity voting


def track_ids(
    groups: Sequence[ComponentGroup],
    history: Iterable[np.ndarray],
    next_id: int,
    retired: set[int] | frozenset = frozenset(),
) -> tuple[list[int], int]:
    """Assign identities to this frame's groups by overlap votes.

    ``history`` holds ID maps (0 = no object) of the previous frames inside the
    vote window. Each group takes the ID with the largest summed overlap; when
    two groups claim one ID the larger vote keeps it and the other is born
    fresh, as is any group without votes. Returns the IDs and the next free ID.
    """
    history = list(history)
    best: list[tuple[int, int]] = []
    for g in groups:
        rows, cols = g.rows, g.cols
        votes: dict[int, int] = {}
        for id_map in history:
            ids = id_map[rows, cols]
            ids = ids[ids > 0]
            if ids.size:
                u, c = np.unique(ids, return_counts=True)
                for a, b in zip(u.tolist(), c.tolist()):
                    if a not in retired:
                        votes[a] = votes.get(a, 0) + b
        if votes:
            winner = min(votes, key=lambda k: (-votes[k], k))
            best.append((winner, votes[winner]))
        else:
            best.append((0, 0))
    assigned = [0] * len(groups)
    taken: set[int] = set()
    for i in sorted(range(len(groups)), key=lambda i: (-best[i][1], i)):
        cand, count = best[i]
        if count > 0 and cand not in taken:
            assigned[i] = cand
            taken.add(cand)
    for i in range(len(groups)):
        if assigned[i] == 0:
            assigned[i] = next_id
            next_id += 1
    return assigned, next_id


# ---------------------------------------------------------------------------
# filament false-positive filters


def compactness(group) -> float:
    """Fraction of the group inside the circle of equal area centred on its centroid."""
    rows, cols = group.rows.astype(np.float64), group.cols.astype(np.float64)
    cx, cy = cols.mean(), rows.mean()
    r2 = rows.size / math.pi
    inside = (cols - cx) ** 2 + (rows - cy) ** 2 <= r2
    return float(inside.mean())


def sunspot_exclusion_zone(sunspots: Sequence[Component], shape: tuple[int, int], border_px: float = 20.0) -> np.ndarray:
    """Pixels within ``border_px`` of any sunspot boundary."""
    spots = np.zeros(shape, dtype=bool)
    for s in sunspots:
        spots[s.rows, s.cols] = True
    if not spots.any():
        return spots
    boundary = spots & ~ndimage.binary_erosion(spots, structure=_EIGHT, border_value=0)
    return ndimage.distance_transform_edt(~boundary) <= border_px


def filter_false_filaments(
    filaments: Sequence[ComponentGroup],
    sunspots: Sequence[Component],
    bright_mask: np.ndarray,
    geom: DiskGeometry | None = None,
    border_px: float = 20.0,
    compactness_max: float = 0.6,
) -> list[ComponentGroup]:
    """Drop filament groups touching a sunspot border zone, and round groups in bright regions."""
    zone = sunspot_exclusion_zone(sunspots, bright_mask.shape, border_px)
    kept = []
    for g in filaments:
        rows, cols = g.rows, g.cols
        if zone[rows, cols].any():
            continue
        if bright_mask[rows, cols].any() and compactness(g) > compactness_max:
            continue
        kept.append(g)
    return kept


# ---------------------------------------------------------------------------
# thinning and length


def skeletonize(mask: np.ndarray) -> np.ndarray:
    """Guo-Hall parallel thinning with two alternating subiterations."""
    img = np.pad(np.asarray(mask, dtype=bool), 1)
    while True:
        changed = False
        for sub in (0, 1):
            c = img[1:-1, 1:-1]
            p2, p3, p4 = img[:-2, 1:-1], img[:-2, 2:], img[1:-1, 2:]
            p5, p6, p7 = img[2:, 2:], img[2:, 1:-1], img[2:, :-2]
            p8, p9 = img[1:-1, :-2], img[:-2, :-2]
            crossings = (
                (~p2 & (p3 | p4)).astype(np.uint8)
                + (~p4 & (p5 | p6))
                + (~p6 & (p7 | p8))
                + (~p8 & (p9 | p2))
            )
            n1 = (p9 | p2).astype(np.uint8) + (p3 | p4) + (p5 | p6) + (p7 | p8)
            n2 = (p2 | p3).astype(np.uint8) + (p4 | p5) + (p6 | p7) + (p8 | p9)
            n = np.minimum(n1, n2)
            if sub == 0:
                m = (p6 | p7 | ~p9) & p8
            else:
                m = (p2 | p3 | ~p5) & p4
            delete = c & (crossings == 1) & (n >= 2) & (n <= 3) & ~m
            if delete.any():
                img[1:-1, 1:-1] = c & ~delete
                changed = True
        if not changed:
            return img[1:-1, 1:-1].copy()


def _skeleton_graph(skel: np.ndarray):
    rows, cols = np.nonzero(skel)
    index = -np.ones(skel.shape, dtype=np.int64)
    index[rows, cols] = np.arange(rows.size)
    edges = []
    h, w = skel.shape
    for dr, dc, diag in ((0, 1, 0), (1, 0, 0), (1, 1, 1), (1, -1, 1)):
        r2, c2 = rows + dr, cols + dc
        ok = (r2 >= 0) & (r2 < h) & (c2 >= 0) & (c2 < w)
        src = np.nonzero(ok)[0]
        dst = index[r2[ok], c2[ok]]
        hit = dst >= 0
        for a, b in zip(src[hit].tolist(), dst[hit].tolist()):
            edges.append((a, b, diag))
    return rows.size, edges


def floyd_warshall_diameter(skel: np.ndarray) -> float:
    """Longest shortest path over all pixel pairs, via Floyd-Warshall.

    Path lengths are tracked as (axis steps, diagonal steps) so the result is
    exactly ``axis + diagonal * sqrt(2)``.
    """
    n, edges = _skeleton_graph(skel)
    if n <= 1:
        return 0.0
    dist = np.full((n, n), np.inf)
    n_axis = np.zeros((n, n), dtype=np.int64)
    n_diag = np.zeros((n, n), dtype=np.int64)
    np.fill_diagonal(dist, 0.0)
    for a, b, diag in edges:
        w = SQRT2 if diag else 1.0
        if w < dist[a, b]:
            dist[a, b] = dist[b, a] = w
            n_axis[a, b] = n_axis[b, a] = 1 - diag
            n_diag[a, b] = n_diag[b, a] = diag
    for k in range(n):
        cand = dist[:, k, None] + dist[None, k, :]
        better = cand < dist
        if better.any():
            dist = np.where(better, cand, dist)
            n_axis = np.where(better, n_axis[:, k, None] + n_axis[None, k, :], n_axis)
            n_diag = np.where(better, n_diag[:, k, None] + n_diag[None, k, :], n_diag)
    finite = np.isfinite(dist)
    return float(np.max(np.where(finite, n_axis + n_diag * SQRT2, 0.0)))


def _dijkstra_counts(n: int, adj: list[list[tuple[int, int]]], src: int):
    dist = [math.inf] * n
    counts = [(0, 0)] * n
    dist[src] = 0.0
    heap = [(0.0, src)]
    while heap:
        d, u = heapq.heappop(heap)
        if d > dist[u]:
            continue
        for v, diag in adj[u]:
            nd = d + (SQRT2 if diag else 1.0)
            if nd < dist[v]:
                dist[v] = nd
                a, b = counts[u]
                counts[v] = (a + 1 - diag, b + diag)
                heapq.heappush(heap, (nd, v))
    return dist, counts


def double_sweep_diameter(skel: np.ndarray) -> float:
    """Tree diameter from two eccentricity searches; exact on trees."""
    n, edges = _skeleton_graph(skel)
    if n <= 1:
        return 0.0
    adj: list[list[tuple[int, int]]] = [[] for _ in range(n)]
    for a, b, diag in edges:
        adj[a].append((b, diag))
        adj[b].append((a, diag))
    best = 0.0
    seen = [False] * n
    for start in range(n):
        if seen[start]:
            continue
        dist, _ = _dijkstra_counts(n, adj, start)
        reach = [i for i in range(n) if math.isfinite(dist[i])]
        for i in reach:
            seen[i] = True
        far = max(reach, key=lambda i: dist[i])
        dist2, counts = _dijkstra_counts(n, adj, far)
        end = max(reach, key=lambda i: dist2[i])
        a, b = counts[end]
        best = max(best, a + b * SQRT2)
    return best


def skeleton_length(skel: np.ndarray) -> float:
    """Graph diameter of a skeleton with unit axis and sqrt(2) diagonal edges."""
    if np.count_nonzero(skel) <= FLOYD_WARSHALL_MAX_NODES:
        return floyd_warshall_diameter(skel)
    return double_sweep_diameter(skel)


def group_length(group, pad: int = 1) -> float:
    """Filament length: summed skeleton diameters of the group's pieces."""
    total = 0.0
    for part in getattr(group, "parts", [group]):
        r0, c0, r1, c1 = part.bbox
        crop = np.zeros((r1 - r0 + 1 + 2 * pad, c1 - c0 + 1 + 2 * pad), dtype=bool)
        crop[part.rows - r0 + pad, part.cols - c0 + pad] = True
        total += skeleton_length(skeletonize(crop))
    return total


# ---------------------------------------------------------------------------
# flare importance


def foreshortening(geom: DiskGeometry, x: float, y: float) -> float:
    rho = geom.radial_of(x, y)
    if rho >= 1.0:
        raise OffDiskCentroid(f"centroid ({x:.1f}, {y:.1f}) is off the disk")
    return math.sqrt(1.0 - rho * rho)


def corrected_area_msh(area_px: float, geom: DiskGeometry, x: float, y: float) -> float:
    """Area in millionths of the solar hemisphere, corrected for foreshortening."""
    cos_theta = foreshortening(geom, x, y)
    return area_px * 1e6 / (2.0 * math.pi * geom.radius**2 * cos_theta)


def importance_class(area_sq_deg: float) -> str:
    for bound, name in zip(IMPORTANCE_BOUNDS, IMPORTANCE_CLASSES):
        if area_sq_deg < bound or (name == "3" and area_sq_deg <= bound):
            return name
    return IMPORTANCE_CLASSES[-1]


def importance_rank(name: str) -> int:
    return IMPORTANCE_CLASSES.index(str(name))


# ---------------------------------------------------------------------------
# tracks and reports


@dataclass
class Observation:
    frame_index: int
    timestamp: datetime
    area_px: int
    centroid: tuple[float, float]
    radial: float
    mean_intensity: float | None = None
    rel_intensity: float | None = None
    area_msh: float | None = None
    lat_deg: float | None = None
    lon_deg: float | None = None
    length_px: float | None = None


@dataclass
class EventTrack:
    id: int
    cls: int
    observations: list[Observation] = field(default_factory=list)
    status: str = "active"

    @property
    def first_seen(self) -> datetime:
        return self.observations[0].timestamp

    @property
    def last_seen(self) -> datetime:
        return self.observations[-1].timestamp

    @property
    def frames(self) -> list[int]:
        return [o.frame_index for o in self.observations]

    @property
    def peak_area_px(self) -> int:
        return max(o.area_px for o in self.observations)

    @property
    def peak_area_msh(self) -> float | None:
        vals = [o.area_msh for o in self.observations if o.area_msh is not None]
        return max(vals) if vals else None

    @property
    def length_px(self) -> float | None:
        vals = [o.length_px for o in self.observations if o.length_px is not None]
        return vals[-1] if vals else None

    @property
    def peak_rel_intensity(self) -> float | None:
        vals = [o.rel_intensity for o in self.observations if o.rel_intensity is not None]
        return max(vals) if vals else None


@dataclass
class FlareReport:
    id: int
    start: datetime
    peak: datetime
    end: datetime
    importance: str
    lat_deg: float | None = None
    lon_deg: float | None = None
    area_msh: float | None = None
    rel_intensity: float | None = None

    def __post_init__(self):
        if not self.start <= self.peak <= self.end:
            raise ValueError("flare report needs start <= peak <= end")

    def to_record(self) -> dict:
        return _compact(
            {
                "type": "flare",
                "id": self.id,
                "start": format_timestamp(self.start),
                "peak": format_timestamp(self.peak),
                "end": format_timestamp(self.end),
                "importance": self.importance,
                "lat_deg": _round(self.lat_deg),
                "lon_deg": _round(self.lon_deg),
                "area_msh": _round(self.area_msh),
                "rel_intensity": _round(self.rel_intensity),
            }
        )


@dataclass
class EruptionReport:
    id: int
    disappearance: datetime
    last_seen: datetime
    lat_deg: float | None = None
    lon_deg: float | None = None
    length_px: float | None = None

    def to_record(self) -> dict:
        return _compact(
            {
                "type": "filament_eruption",
                "id": self.id,
                "start": format_timestamp(self.disappearance),
                "lat_deg": _round(self.lat_deg),
                "lon_deg": _round(self.lon_deg),
                "length_px": _round(self.length_px),
            }
        )


def _round(x):
    return None if x is None else round(float(x), 6)


def _compact(d: dict) -> dict:
    return {k: v for k, v in d.items() if v is not None}


def report_from_record(rec: dict):
    """Inverse of ``to_record`` for the event NDJSON schema."""
    kind = rec.get("type")
    if kind == "flare":
        return FlareReport(
            id=int(rec["id"]),
            start=parse_timestamp(rec["start"]),
            peak=parse_timestamp(rec.get("peak", rec["start"])),
            end=parse_timestamp(rec["end"]),
            importance=str(rec["importance"]),
            lat_deg=rec.get("lat_deg"),
            lon_deg=rec.get("lon_deg"),
            area_msh=rec.get("area_msh"),
            rel_intensity=rec.get("rel_intensity"),
        )
    if kind == "filament_eruption":
        t = parse_timestamp(rec["start"])
        return EruptionReport(
            id=int(rec["id"]),
            disappearance=t,
            last_seen=t,
            lat_deg=rec.get("lat_deg"),
            lon_deg=rec.get("lon_deg"),
            length_px=rec.get("length_px"),
        )
    raise ValueError(f"unknown event type {kind!r}")


def classify_flare(track: EventTrack, geom: DiskGeometry, b0: float = 0.0) -> FlareReport:
    """Importance from the peak foreshortening-corrected area; peak time from the brightest frame."""
    if not track.observations:
        raise ValueError("flare track has no observations")
    areas = []
    for o in track.observations:
        areas.append(corrected_area_msh(o.area_px, geom, *o.centroid) if o.radial < 1.0 else 0.0)
    peak_area = max(areas)
    brightness = [o.mean_intensity if o.mean_intensity is not None else -math.inf for o in track.observations]
    peak_obs = track.observations[int(np.argmax(brightness))]
    try:
        lat, lon = pixel_to_heliographic(geom, peak_obs.centroid, b0)
    except OffDisk as exc:
        raise OffDiskCentroid(str(exc)) from exc
    return FlareReport(
        id=track.id,
        start=track.first_seen,
        peak=peak_obs.timestamp,
        end=track.last_seen,
        importance=importance_class(peak_area / MSH_PER_SQ_DEG),
        lat_deg=lat,
        lon_deg=lon,
        area_msh=peak_area,
        rel_intensity=peak_obs.rel_intensity,
    )


def detect_eruptions(
    tracks: Iterable[EventTrack],
    now: datetime,
    window: float = 900.0,
    min_frames: int = 3,
    limb_radial: float | None = 0.95,
) -> list[EruptionReport]:
    """Active filament tracks unseen for ``window`` seconds become eruptions.

    Tracks that were last seen beyond ``limb_radial`` (rotating off the disk)
    or that lived fewer than ``min_frames`` frames end without a report.
    """
    reports = []
    for tr in tracks:
        if tr.status != "active" or tr.cls != Label.FILAMENT:
            continue
        if (now - tr.last_seen).total_seconds() < window:
            continue
        last = tr.observations[-1]
        if len(tr.observations) < min_frames or (limb_radial is not None and last.radial > limb_radial):
            tr.status = "ended"
            continue
        tr.status = "erupted"
        reports.append(EruptionReport(tr.id, now, tr.last_seen, last.lat_deg, last.lon_deg, tr.length_px))
    return reports


# ---------------------------------------------------------------------------
# sequential tracking store


@dataclass
class EventsConfig:
    group_dist_filament: float = 25.0
    group_dist_flare: float = 150.0
    vote_window: int = 5
    sunspot_border_px: float = 20.0
    compactness_max: float = 0.6
    min_area: int = 10
    eruption_window_s: float = 900.0
    eruption_min_frames: int = 3
    limb_guard: float | None = 0.95
    bright_threshold: float = 0.5
    bright_dilate_px: int = 5
    min_report_importance: str = "1"
    b0_deg: float = 0.0


class EventTracker:
    """Frame-ordered tracking state for filaments, flares and sunspots.

    ``update`` consumes one segmented frame and returns the reports that became
    final with it; ``finish`` closes whatever is still open at the end.
    """

    TRACKED = (Label.FILAMENT, Label.FLARE)

    def __init__(self, config: EventsConfig | None = None):
        self.config = config or EventsConfig()
        self.tracks: dict[int, EventTrack] = {}
        self.history: dict[int, deque] = {c: deque(maxlen=self.config.vote_window) for c in self.TRACKED}
        self.next_id = 1
        self.retired: set[int] = set()
        self.geom: DiskGeometry | None = None
        self.last_groups: dict[int, dict[int, ComponentGroup]] = {}

    def _threshold(self, cls: int) -> float:
        return self.config.group_dist_filament if cls == Label.FILAMENT else self.config.group_dist_flare

    def bright_mask(self, labels: np.ndarray, bandpassed: FrameBuffer | None) -> np.ndarray:
        bright = labels == Label.FLARE
        if bandpassed is not None:
            bright |= bandpassed.data > self.config.bright_threshold
        if self.config.bright_dilate_px > 0 and bright.any():
            bright = ndimage.binary_dilation(bright, structure=_EIGHT, iterations=self.config.bright_dilate_px)
        return bright

    def update(self, label_map, frame: FrameBuffer, geom: DiskGeometry, bandpassed: FrameBuffer | None = None) -> list:
        """Track one frame. ``frame`` is the normalised, registered, pre-bandpass image."""
        cfg = self.config
        self.geom = geom
        labels = label_map.labels
        ts = label_map.timestamp if label_map.timestamp is not None else frame.timestamp
        radial = geom.radial_map(labels.shape)
        on_disk = radial < 1.0
        disk_mean = float(frame.data[on_disk].mean()) if on_disk.any() else float("nan")

        sunspots = extract_components(label_map, Label.SUNSPOT, cfg.min_area)
        per_class: dict[int, list[ComponentGroup]] = {}
        for cls in self.TRACKED:
            comps = extract_components(label_map, cls, cfg.min_area)
            groups = group_components(comps, cls, self._threshold(cls))
            if cls == Label.FILAMENT:
                groups = filter_false_filaments(
                    groups, sunspots, self.bright_mask(labels, bandpassed), geom, cfg.sunspot_border_px, cfg.compactness_max
                )
            per_class[cls] = groups

        self.last_groups = {}
        for cls, groups in per_class.items():
            ids, self.next_id = track_ids(groups, self.history[cls], self.next_id, self.retired)
            id_map = np.zeros(labels.shape, dtype=np.int64)
            self.last_groups[cls] = {}
            for tid, g in zip(ids, groups):
                id_map[g.rows, g.cols] = tid
                self.last_groups[cls][tid] = g
                tr = self.tracks.get(tid)
                if tr is None:
                    tr = self.tracks[tid] = EventTrack(tid, cls)
                tr.observations.append(self._observe(g, cls, label_map.frame_index, ts, frame, geom, disk_mean))
            self.history[cls].append(id_map)

        reports: list = []
        # flares that can no longer collect votes are over
        alive = {int(i) for m in self.history[Label.FLARE] for i in np.unique(m) if i}
        for tr in self.tracks.values():
            if tr.cls == Label.FLARE and tr.status == "active" and tr.id not in alive:
                reports.extend(self._close_flare(tr))
        eruptions = detect_eruptions(
            self.tracks.values(), ts, cfg.eruption_window_s, cfg.eruption_min_frames, cfg.limb_guard
        )
        for tr in self.tracks.values():
            if tr.status != "active":
                self.retired.add(tr.id)
        return reports + eruptions

    def finish(self) -> list:
        reports: list = []
        for tr in self.tracks.values():
            if tr.cls == Label.FLARE and tr.status == "active":
                reports.extend(self._close_flare(tr))
        return reports

    def _close_flare(self, tr: EventTrack) -> list:
        tr.status = "ended"
        self.retired.add(tr.id)
        if self.geom is None:
            return []
        try:
            rep = classify_flare(tr, self.geom, self.config.b0_deg)
        except OffDiskCentroid:
            log.info("flare %d peaked off the disk; not reported", tr.id)
            return []
        if importance_rank(rep.importance) < importance_rank(self.config.min_report_importance):
            return []
        return [rep]

    def _observe(self, g: ComponentGroup, cls, frame_index, ts, frame, geom, disk_mean) -> Observation:
        cx, cy = g.centroid
        rho = geom.radial_of(cx, cy)
        mean_int = float(frame.data[g.rows, g.cols].mean())
        obs = Observation(frame_index, ts, g.area, (cx, cy), rho, mean_intensity=mean_int)
        if disk_mean and math.isfinite(disk_mean):
            obs.rel_intensity = mean_int / disk_mean
        if rho < 1.0:
            obs.area_msh = corrected_area_msh(g.area, geom, cx, cy)
            obs.lat_deg, obs.lon_deg = pixel_to_heliographic(geom, (cx, cy), self.config.b0_deg)
        if cls == Label.FILAMENT:
            obs.length_px = group_length(g)
        return obs
