"""Synthetic H-alpha sequences with pixel-exact ground truth.

A scenario describes a limb-darkened disk with optional drift, moving cloud
attenuation, Gaussian noise and a list of objects (filaments, flares, sunspots
and plages). Object positions are pixel offsets (x right, y down) from the
disk centre and move with the disk. Frames are quantised to 12 bits.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Any

import numpy as np

from .classmodel import Label
from .errors import InvalidScenario
from .events import MSH_PER_SQ_DEG, corrected_area_msh, importance_class
from .evaluation import ReferenceEvent, write_reference_csv
from .imgio import (
    DiskGeometry,
    FrameBuffer,
    SequenceManifest,
    format_timestamp,
    parse_timestamp,
    pixel_to_heliographic,
    stamped_name,
    write_manifest,
    write_pgm,
)

try:  # Python 3.11+
    import tomllib
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

log = logging.getLogger(__name__)

MAX_COUNT = 4095
FLARE_BRIGHTNESS_FLOOR = 0.3


@dataclass
class FilamentSpec:
    points: list[tuple[float, float]]
    width: float = 4.0
    contrast: float = 0.10
    appear: int = 0
    disappear: int | None = None
    erupt: int | None = None
    drift: tuple[float, float] = (0.0, 0.0)

    def alive(self, k: int) -> bool:
        end = self.erupt if self.erupt is not None else self.disappear
        return k >= self.appear and (end is None or k < end)

    def offset(self, k: int) -> tuple[float, float]:
        return self.drift[0] * (k - self.appear), self.drift[1] * (k - self.appear)


@dataclass
class FlareSpec:
    center: tuple[float, float]
    onset: int
    rise: int = 5
    decay: int = 20
    peak_contrast: float = 0.4
    # ribbons as [dx, dy, semi_major, semi_minor, angle_deg] relative to ``center``
    ribbons: list[tuple[float, float, float, float, float]] = field(default_factory=lambda: [(0.0, 0.0, 6.0, 3.0, 0.0)])

    @property
    def frames(self) -> range:
        return range(self.onset, self.onset + self.rise + self.decay)

    @property
    def peak_frame(self) -> int:
        return self.onset + self.rise - 1


@dataclass
class SunspotSpec:
    center: tuple[float, float]
    radius: float = 8.0
    contrast: float = 0.6


@dataclass
class PlageSpec:
    center: tuple[float, float]
    radius: float = 25.0
    brightness: float = 0.12


@dataclass
class CloudSpec:
    count: int = 0
    strength: float = 0.25
    sigma_px: float = 120.0
    speed: float = 2.0


@dataclass
class Scenario:
    seed: int = 0
    width: int = 512
    height: int = 512
    frames: int = 60
    cadence_s: float = 30.0
    start: datetime = field(default_factory=lambda: datetime(2012, 7, 1, 8, 0, 0, tzinfo=timezone.utc))
    intensity: float = 3000.0
    sky: float = 60.0
    noise_sigma: float = 15.0
    limb_darkening: float = 0.85
    disk_center: tuple[float, float] = (256.0, 256.0)
    disk_radius: float = 240.0
    disk_drift: tuple[float, float] = (0.0, 0.0)
    clouds: CloudSpec = field(default_factory=CloudSpec)
    filaments: list[FilamentSpec] = field(default_factory=list)
    flares: list[FlareSpec] = field(default_factory=list)
    sunspots: list[SunspotSpec] = field(default_factory=list)
    plages: list[PlageSpec] = field(default_factory=list)

    def timestamp(self, k: int) -> datetime:
        return self.start + timedelta(seconds=self.cadence_s * k)

    def geometry(self, k: int) -> DiskGeometry:
        cx, cy = self.disk_center
        return DiskGeometry(cx + self.disk_drift[0] * k, cy + self.disk_drift[1] * k, self.disk_radius)

    def validate(self) -> None:
        if self.width < 16 or self.height < 16 or self.frames < 0 or self.cadence_s <= 0:
            raise InvalidScenario("frame size, count or cadence out of range")
        if not 0 <= self.limb_darkening < 1:
            raise InvalidScenario("limb darkening must lie in [0, 1)")
        if self.noise_sigma < 0 or self.intensity <= 0:
            raise InvalidScenario("noise and intensity must be non-negative / positive")
        for k in range(max(self.frames, 1)):
            g = self.geometry(k)
            if g.center_x - g.radius < 0 or g.center_y - g.radius < 0 or g.center_x + g.radius > self.width or g.center_y + g.radius > self.height:
                raise InvalidScenario(f"disk leaves the frame at frame {k}")
        r = self.disk_radius

        def inside(dx, dy, margin=0.0, what="object", k=0):
            if math.hypot(dx, dy) + margin >= r:
                raise InvalidScenario(f"{what} at offset ({dx:.1f}, {dy:.1f}) is off the disk at frame {k}")

        for f in self.filaments:
            if len(f.points) < 2:
                raise InvalidScenario("a filament needs at least two points")
            for k in range(self.frames):
                if f.alive(k):
                    ox, oy = f.offset(k)
                    for x, y in f.points:
                        inside(x + ox, y + oy, f.width / 2, "filament", k)
        for fl in self.flares:
            if fl.rise < 1 or fl.decay < 1:
                raise InvalidScenario("flare rise and decay must be >= 1 frame")
            for dx, dy, a, b, _ in fl.ribbons:
                inside(fl.center[0] + dx, fl.center[1] + dy, max(a, b), "flare")
        for s in self.sunspots:
            inside(*s.center, s.radius, "sunspot")
        for p in self.plages:
            inside(*p.center, 0.0, "plage")


# ---------------------------------------------------------------------------
# scenario files


def _pair(v) -> tuple[float, float]:
    if not isinstance(v, (list, tuple)) or len(v) != 2:
        raise InvalidScenario(f"expected a pair, got {v!r}")
    return float(v[0]), float(v[1])


def scenario_from_dict(d: dict[str, Any]) -> Scenario:
    try:
        disk = d.get("disk", {})
        clouds = d.get("clouds", {})
        sc = Scenario(
            seed=int(d.get("seed", 0)),
            width=int(d.get("width", 512)),
            height=int(d.get("height", 512)),
            frames=int(d.get("frames", 60)),
            cadence_s=float(d.get("cadence_s", 30.0)),
            start=parse_timestamp(str(d.get("start", "2012-07-01T08:00:00Z"))),
            intensity=float(d.get("intensity", 3000.0)),
            sky=float(d.get("sky", 60.0)),
            noise_sigma=float(d.get("noise_sigma", 15.0)),
            limb_darkening=float(d.get("limb_darkening", 0.85)),
            disk_center=_pair(disk.get("center", (d.get("width", 512) / 2, d.get("height", 512) / 2))),
            disk_radius=float(disk.get("radius", 240.0)),
            disk_drift=_pair(disk.get("drift", (0.0, 0.0))),
            clouds=CloudSpec(
                count=int(clouds.get("count", 0)),
                strength=float(clouds.get("strength", 0.25)),
                sigma_px=float(clouds.get("sigma_px", 120.0)),
                speed=float(clouds.get("speed", 2.0)),
            ),
            filaments=[
                FilamentSpec(
                    points=[_pair(p) for p in f["points"]],
                    width=float(f.get("width", 4.0)),
                    contrast=float(f.get("contrast", 0.10)),
                    appear=int(f.get("appear", 0)),
                    disappear=None if f.get("disappear") is None else int(f["disappear"]),
                    erupt=None if f.get("erupt") is None else int(f["erupt"]),
                    drift=_pair(f.get("drift", (0.0, 0.0))),
                )
                for f in d.get("filaments", [])
            ],
            flares=[
                FlareSpec(
                    center=_pair(f["center"]),
                    onset=int(f["onset"]),
                    rise=int(f.get("rise", 5)),
                    decay=int(f.get("decay", 20)),
                    peak_contrast=float(f.get("peak_contrast", 0.4)),
                    ribbons=[tuple(float(v) for v in r) for r in f.get("ribbons", [(0, 0, 6, 3, 0)])],
                )
                for f in d.get("flares", [])
            ],
            sunspots=[
                SunspotSpec(_pair(s["center"]), float(s.get("radius", 8.0)), float(s.get("contrast", 0.6)))
                for s in d.get("sunspots", [])
            ],
            plages=[
                PlageSpec(_pair(p["center"]), float(p.get("radius", 25.0)), float(p.get("brightness", 0.12)))
                for p in d.get("plages", [])
            ],
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, InvalidScenario):
            raise
        raise InvalidScenario(f"bad scenario: {exc}") from exc
    for rb in (r for f in sc.flares for r in f.ribbons):
        if len(rb) != 5:
            raise InvalidScenario("flare ribbons are [dx, dy, semi_major, semi_minor, angle_deg]")
    sc.validate()
    return sc


def load_scenario(path: str | Path) -> Scenario:
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise InvalidScenario(f"{path}: {exc}") from exc
    return scenario_from_dict(data)


def demo_scenario_path() -> Path:
    return Path(__file__).parent / "data" / "demo.toml"


def random_scenario(
    seed: int,
    frames: int = 8,
    n_filaments: int = 5,
    n_flares: int = 6,
    n_sunspots: int = 4,
    n_plages: int = 4,
    clouds: int = 3,
    max_radial: float = 0.85,
    **overrides,
) -> Scenario:
    """Scene with objects scattered over the disk, meant for training class models.

    Objects keep apart from each other so ground-truth labels do not collide.
    Every sunspot sits in a plage, extra plages stand on their own, and flare
    onsets are spread so the frames show flares at different stages.
    """
    rng = np.random.default_rng(seed)
    sc = Scenario(seed=seed, frames=frames, clouds=CloudSpec(count=clouds), **overrides)
    r_max = sc.disk_radius * max_radial
    taken: list[tuple[float, float, float]] = []

    def place(size: float) -> tuple[float, float]:
        for _ in range(1000):
            # uniform in radius, so limb positions are as common as central ones
            rad = r_max * math.sqrt(rng.uniform(0.0, 1.0)) if rng.uniform() < 0.5 else rng.uniform(0.0, r_max)
            ang = rng.uniform(0, 2 * math.pi)
            x, y = rad * math.cos(ang), rad * math.sin(ang)
            if math.hypot(x, y) + size >= sc.disk_radius * 0.97:
                continue
            if all(math.hypot(x - a, y - b) > size + s + 12 for a, b, s in taken):
                taken.append((x, y, size))
                return x, y
        raise InvalidScenario("could not place all objects; reduce the object count")

    for _ in range(n_filaments):
        length = float(rng.uniform(40, 100))
        cx, cy = place(length / 2 + 5)
        ang = rng.uniform(0, math.pi)
        bend = rng.uniform(-0.25, 0.25) * length
        dx, dy = math.cos(ang) * length / 2, math.sin(ang) * length / 2
        pts = [(cx - dx, cy - dy), (cx - dy * bend / length, cy + dx * bend / length), (cx + dx, cy + dy)]
        sc.filaments.append(
            FilamentSpec(pts, float(rng.uniform(3.5, 6)), float(rng.uniform(0.08, 0.12)))
        )
    for _ in range(n_sunspots):
        radius = float(rng.uniform(5, 11))
        cx, cy = place(radius + 30)
        sc.sunspots.append(SunspotSpec((cx, cy), radius, float(rng.uniform(0.45, 0.7))))
        sc.plages.append(PlageSpec((cx, cy), float(rng.uniform(25, 40)), float(rng.uniform(0.06, 0.15))))
    for _ in range(n_flares):
        # minor axes stay above the width the fine TV-L1 scale removes, even at the
        # smallest area fraction, so every labelled flare pixel is visible in the bandpass
        a, b = float(rng.uniform(6, 10)), float(rng.uniform(3.5, 5))
        cx, cy = place(2 * a + 6)
        ang = float(rng.uniform(0, 180))
        if rng.uniform() < 0.35:
            sep = b + float(rng.uniform(3, 6))
            nx, ny = -math.sin(math.radians(ang)) * sep, math.cos(math.radians(ang)) * sep
            ribbons = [(nx, ny, a, b, ang), (-nx, -ny, a, b, ang)]
        else:
            ribbons = [(0.0, 0.0, a, b, ang)]
        rise, decay = int(rng.integers(2, 6)), int(rng.integers(4, 12))
        onset = int(rng.integers(-rise - decay + 2, max(frames - 1, 1)))
        sc.flares.append(FlareSpec((cx, cy), onset, rise, decay, float(rng.uniform(0.25, 0.45)), ribbons))
    for _ in range(n_plages):
        # free-standing plages widen the bright tail of the background class; they
        # may overlap other objects, so they take no room in the placement
        radius = float(rng.uniform(12, 40))
        rad, ang = rng.uniform(0.0, r_max), rng.uniform(0, 2 * math.pi)
        cx, cy = rad * math.cos(ang), rad * math.sin(ang)
        sc.plages.append(PlageSpec((cx, cy), radius, float(rng.uniform(0.08, 0.25))))
    sc.validate()
    return sc


# ---------------------------------------------------------------------------
# rendering


def flare_profile(s: int, rise: int, decay: int) -> tuple[float, float]:
    """(area fraction, brightness fraction) ``s`` frames after onset; zeros outside the lifetime."""
    if s < 0 or s >= rise + decay:
        return 0.0, 0.0
    if s < rise:
        e = (s + 1) / rise
    else:
        e = 1.0 - (s - rise + 1) / (decay + 1)
    return 0.5 + 0.5 * e, FLARE_BRIGHTNESS_FLOOR + (1.0 - FLARE_BRIGHTNESS_FLOOR) * e


def _polyline_distance(xx: np.ndarray, yy: np.ndarray, pts: np.ndarray) -> np.ndarray:
    best = np.full(xx.shape, np.inf)
    for (x0, y0), (x1, y1) in zip(pts[:-1], pts[1:]):
        vx, vy = x1 - x0, y1 - y0
        L2 = vx * vx + vy * vy
        t = np.clip(((xx - x0) * vx + (yy - y0) * vy) / L2, 0.0, 1.0) if L2 > 0 else np.zeros_like(xx)
        d = np.hypot(xx - (x0 + t * vx), yy - (y0 + t * vy))
        np.minimum(best, d, out=best)
    return best


def _ellipse(xx, yy, cx, cy, a, b, angle_deg) -> np.ndarray:
    th = math.radians(angle_deg)
    c, s = math.cos(th), math.sin(th)
    u = (xx - cx) * c + (yy - cy) * s
    v = -(xx - cx) * s + (yy - cy) * c
    return (u / a) ** 2 + (v / b) ** 2 <= 1.0


@dataclass
class GroundTruth:
    labels: list[np.ndarray]
    events: dict


@dataclass
class _CloudBlob:
    x: float
    y: float
    vx: float
    vy: float
    amp: float


def _cloud_blobs(sc: Scenario, rng: np.random.Generator) -> list[_CloudBlob]:
    blobs = []
    for _ in range(sc.clouds.count):
        ang = rng.uniform(0, 2 * math.pi)
        blobs.append(
            _CloudBlob(
                rng.uniform(0, sc.width),
                rng.uniform(0, sc.height),
                sc.clouds.speed * math.cos(ang),
                sc.clouds.speed * math.sin(ang),
                sc.clouds.strength * rng.uniform(0.5, 1.0),
            )
        )
    return blobs


def render_frame(sc: Scenario, k: int, blobs: list[_CloudBlob], rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """One quantised frame and its label map."""
    h, w = sc.height, sc.width
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    g = sc.geometry(k)
    rel_x, rel_y = xx - g.center_x, yy - g.center_y
    rho2 = (rel_x**2 + rel_y**2) / g.radius**2
    disk = rho2 < 1.0
    mu = np.sqrt(np.clip(1.0 - rho2, 0.0, 1.0))
    img = np.where(disk, sc.intensity * (1.0 - sc.limb_darkening * (1.0 - mu)), 0.0)
    labels = np.full((h, w), Label.BACKGROUND, dtype=np.uint8)

    for p in sc.plages:
        d2 = (rel_x - p.center[0]) ** 2 + (rel_y - p.center[1]) ** 2
        img *= 1.0 + p.brightness * np.exp(-0.5 * d2 / p.radius**2) * disk

    fil_mask = np.zeros((h, w), dtype=bool)
    for f in sc.filaments:
        if not f.alive(k):
            continue
        ox, oy = f.offset(k)
        pts = np.asarray(f.points) + (ox, oy)
        m = (_polyline_distance(rel_x, rel_y, pts) <= f.width / 2) & disk
        img[m] *= 1.0 - f.contrast
        fil_mask |= m

    spot_mask = np.zeros((h, w), dtype=bool)
    for s in sc.sunspots:
        m = ((rel_x - s.center[0]) ** 2 + (rel_y - s.center[1]) ** 2 <= s.radius**2) & disk
        img[m] *= 1.0 - s.contrast
        spot_mask |= m

    flare_mask = np.zeros((h, w), dtype=bool)
    for fl in sc.flares:
        area_frac, bright = flare_profile(k - fl.onset, fl.rise, fl.decay)
        if area_frac == 0:
            continue
        scale = math.sqrt(area_frac)
        m = np.zeros((h, w), dtype=bool)
        for dx, dy, a, b, ang in fl.ribbons:
            m |= _ellipse(rel_x, rel_y, fl.center[0] + dx, fl.center[1] + dy, a * scale, b * scale, ang)
        m &= disk
        # flares brighten relative to the undisturbed disk so they stay bright over filaments
        local = sc.intensity * (1.0 - sc.limb_darkening * (1.0 - mu[m]))
        img[m] = np.maximum(img[m], local) + fl.peak_contrast * bright * sc.intensity
        flare_mask |= m

    labels[fil_mask] = Label.FILAMENT
    labels[spot_mask] = Label.SUNSPOT
    labels[flare_mask] = Label.FLARE

    if blobs:
        att = np.ones((h, w))
        for b in blobs:
            bx, by = b.x + b.vx * k, b.y + b.vy * k
            att -= b.amp * np.exp(-0.5 * ((xx - bx) ** 2 + (yy - by) ** 2) / sc.clouds.sigma_px**2)
        img *= np.clip(att, 0.05, 1.0)
    img += sc.sky
    if sc.noise_sigma > 0:
        img += rng.normal(0.0, sc.noise_sigma, size=img.shape)
    return np.clip(np.rint(img), 0, MAX_COUNT).astype(np.uint16), labels


def _event_log(sc: Scenario, labels: list[np.ndarray]) -> dict:
    flares = []
    for i, fl in enumerate(sc.flares):
        # only the part of the flare that falls inside the sequence is observable
        frames = [k for k in fl.frames if 0 <= k < sc.frames]
        if not frames:
            continue
        areas = {k: int(np.count_nonzero(labels[k] == Label.FLARE)) for k in frames}
        peak = min(max(fl.peak_frame, frames[0]), frames[-1])
        g = sc.geometry(peak)
        cx, cy = g.center_x + fl.center[0], g.center_y + fl.center[1]
        max_area = max(areas.values())
        msh = corrected_area_msh(max_area, g, cx, cy)
        lat, lon = pixel_to_heliographic(g, (cx, cy))
        flares.append(
            {
                "id": i,
                "start_frame": frames[0],
                "peak_frame": peak,
                "end_frame": frames[-1],
                "start": format_timestamp(sc.timestamp(frames[0])),
                "peak": format_timestamp(sc.timestamp(peak)),
                "end": format_timestamp(sc.timestamp(frames[-1])),
                "peak_area_px": max_area,
                "area_msh": msh,
                "importance": importance_class(msh / MSH_PER_SQ_DEG),
                "lat_deg": lat,
                "lon_deg": lon,
            }
        )
    eruptions = []
    for i, f in enumerate(sc.filaments):
        if f.erupt is None or f.erupt >= sc.frames or f.erupt <= f.appear:
            continue
        g = sc.geometry(f.erupt - 1)
        ox, oy = f.offset(f.erupt - 1)
        pts = np.asarray(f.points) + (ox, oy)
        cx, cy = g.center_x + pts[:, 0].mean(), g.center_y + pts[:, 1].mean()
        lat, lon = pixel_to_heliographic(g, (cx, cy))
        eruptions.append(
            {
                "id": i,
                "frame": f.erupt,
                "last_seen_frame": f.erupt - 1,
                "timestamp": format_timestamp(sc.timestamp(f.erupt)),
                "lat_deg": lat,
                "lon_deg": lon,
            }
        )
    return {
        "frames": [format_timestamp(sc.timestamp(k)) for k in range(sc.frames)],
        "flares": flares,
        "eruptions": eruptions,
    }


def generate_sequence(sc: Scenario) -> tuple[list[FrameBuffer], GroundTruth]:
    """Frames plus per-frame label maps and the true event log; the seed fixes everything."""
    sc.validate()
    root = np.random.SeedSequence(sc.seed)
    cloud_seq, frame_seq = root.spawn(2)
    blobs = _cloud_blobs(sc, np.random.default_rng(cloud_seq))
    frames, labels = [], []
    for k, seq in enumerate(frame_seq.spawn(sc.frames)):
        data, lab = render_frame(sc, k, blobs, np.random.default_rng(seq))
        frames.append(FrameBuffer(data.astype(np.float64), sc.timestamp(k), k))
        labels.append(lab)
    return frames, GroundTruth(labels, _event_log(sc, labels))


def reference_events(events: dict) -> list[ReferenceEvent]:
    """Ground-truth event log as reference-catalogue rows."""
    out = []
    for f in events["flares"]:
        out.append(
            ReferenceEvent("flare", parse_timestamp(f["start"]), parse_timestamp(f["end"]), f["importance"], f["lat_deg"], f["lon_deg"])
        )
    for e in events["eruptions"]:
        t = parse_timestamp(e["timestamp"])
        out.append(ReferenceEvent("filament_eruption", t, t, None, e["lat_deg"], e["lon_deg"]))
    return out


@dataclass
class SynthOutput:
    root: Path
    frame_paths: list[Path]
    mask_paths: list[Path]
    manifest: Path
    events: Path
    reference: Path


def write_sequence(sc: Scenario, out_dir: str | Path, prefix: str = "synth") -> SynthOutput:
    """Write frames/ and masks/ as PGM plus manifest.txt, events.json and reference.csv."""
    out = Path(out_dir)
    (out / "frames").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    frames, truth = generate_sequence(sc)
    frame_paths, mask_paths = [], []
    for fr, lab in zip(frames, truth.labels):
        fp = out / "frames" / stamped_name(prefix, fr.timestamp, ".pgm")
        mp = out / "masks" / stamped_name(prefix, fr.timestamp, ".pgm")
        write_pgm(fp, fr.data.astype(np.uint16), maxval=MAX_COUNT)
        write_pgm(mp, lab, maxval=255)
        frame_paths.append(fp)
        mask_paths.append(mp)
    manifest = out / "manifest.txt"
    write_manifest(manifest, SequenceManifest([(p, f.timestamp) for p, f in zip(frame_paths, frames)], sc.cadence_s))
    events = out / "events.json"
    events.write_text(json.dumps(truth.events, indent=2, sort_keys=True) + "\n")
    reference = out / "reference.csv"
    write_reference_csv(reference, reference_events(truth.events))
    return SynthOutput(out, frame_paths, mask_paths, manifest, events, reference)


def scenario_summary(sc: Scenario) -> dict:
    d = asdict(sc)
    d["start"] = format_timestamp(sc.start)
    return d
