"""Frame containers, image file I/O, solar disk fitting and heliographic coordinates.

Supported on-disk formats:

* FITS, primary HDU only, BITPIX 16 or -32, NAXIS = 2
* binary PGM (P5), 8 or 16 bit, big-endian samples
* the native ``.hef`` cache: ``b"HEF1"``, u32 width, u32 height, i64 unix
  microseconds, then width*height little-endian float32 samples
"""

from __future__ import annotations

import math
import re
import struct
import warnings
from dataclasses import dataclass, replace
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
from scipy import ndimage

from .errors import (
    CorruptHeader,
    DiskNotFound,
    MissingTimestamp,
    NonFinite,
    OffDisk,
    UnsupportedFormat,
)

EPOCH = datetime(1970, 1, 1, tzinfo=timezone.utc)
FITS_SUFFIXES = {".fits", ".fit", ".fts"}
PGM_SUFFIXES = {".pgm"}
CACHE_SUFFIXES = {".hef"}
CACHE_MAGIC = b"HEF1"
_CACHE_HEADER = struct.Struct("<4sIIq")
_NAME_STAMP = re.compile(r"_(\d{8})_(\d{6})\.[^/\\]+$")


@dataclass(frozen=True, eq=False)
class FrameBuffer:
    """Single-channel image with acquisition time and position in the sequence.

    ``data`` is stored as a read-only float64 array of shape (height, width).
    """

    data: np.ndarray
    timestamp: datetime
    frame_index: int = 0

    def __post_init__(self):
        arr = np.array(self.data, dtype=np.float64, copy=True)
        if arr.ndim != 2 or arr.shape[0] == 0 or arr.shape[1] == 0:
            raise ValueError(f"frame data must be a non-empty 2D array, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise NonFinite("frame contains NaN or Inf")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)
        ts = self.timestamp
        if ts.tzinfo is None:
            ts = ts.replace(tzinfo=timezone.utc)
        object.__setattr__(self, "timestamp", ts.astimezone(timezone.utc))

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def with_data(self, data: np.ndarray) -> "FrameBuffer":
        """Same timestamp and index, new pixels."""
        return replace(self, data=data)


@dataclass(frozen=True)
class DiskGeometry:
    center_x: float
    center_y: float
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("disk radius must be positive")

    def radial_map(self, shape: tuple[int, int]) -> np.ndarray:
        """Distance of every pixel centre from the disk centre, in disk radii."""
        yy, xx = np.indices(shape, dtype=np.float64)
        return np.hypot(xx - self.center_x, yy - self.center_y) / self.radius

    def radial_of(self, x: float, y: float) -> float:
        return math.hypot(x - self.center_x, y - self.center_y) / self.radius

    def check_in_frame(self, shape: tuple[int, int]) -> None:
        h, w = shape
        if not (-w <= self.center_x <= 2 * w and -h <= self.center_y <= 2 * h):
            raise ValueError("disk centre lies too far outside the frame")


@dataclass(frozen=True)
class SequenceManifest:
    """Ordered frame paths with their timestamps."""

    entries: tuple[tuple[Path, datetime], ...]
    cadence_hint: float | None = None

    def __post_init__(self):
        entries = tuple((Path(p), _as_utc(t)) for p, t in self.entries)
        for (_, a), (_, b) in zip(entries, entries[1:]):
            if not b > a:
                raise ValueError(f"manifest timestamps must be strictly increasing ({a} -> {b})")
        object.__setattr__(self, "entries", entries)

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self) -> Iterator[tuple[Path, datetime]]:
        return iter(self.entries)


def _as_utc(ts: datetime) -> datetime:
    if ts.tzinfo is None:
        return ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


def format_timestamp(ts: datetime) -> str:
    """RFC 3339 UTC with a trailing ``Z``."""
    ts = _as_utc(ts)
    if ts.microsecond:
        return ts.strftime("%Y-%m-%dT%H:%M:%S.%fZ")
    return ts.strftime("%Y-%m-%dT%H:%M:%SZ")


def parse_timestamp(text: str) -> datetime:
    text = text.strip()
    if text.endswith("Z") or text.endswith("z"):
        text = text[:-1] + "+00:00"
    return _as_utc(datetime.fromisoformat(text))


def timestamp_from_name(path: str | Path) -> datetime:
    m = _NAME_STAMP.search(Path(path).name)
    if m is None:
        raise MissingTimestamp(f"no *_YYYYMMDD_HHMMSS.* stamp in file name {Path(path).name!r}")
    try:
        return datetime.strptime(m.group(1) + m.group(2), "%Y%m%d%H%M%S").replace(tzinfo=timezone.utc)
    except ValueError as exc:
        raise MissingTimestamp(f"invalid stamp in file name {Path(path).name!r}") from exc


def stamped_name(prefix: str, ts: datetime, suffix: str) -> str:
    return f"{prefix}_{_as_utc(ts).strftime('%Y%m%d_%H%M%S')}{suffix}"


# ---------------------------------------------------------------------------
# readers


def load_frame(path: str | Path, index: int = 0, timestamp: datetime | None = None) -> FrameBuffer:
    """Read a FITS, PGM or native cache file without rescaling its values.

    ``timestamp`` (e.g. from a manifest) wins over DATE-OBS and the file name.
    """
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix in FITS_SUFFIXES:
        data, stamp = _read_fits(path)
    elif suffix in PGM_SUFFIXES:
        data = read_pgm(path)
        stamp = None
    elif suffix in CACHE_SUFFIXES:
        frame = read_cache(path, index)
        return frame if timestamp is None else FrameBuffer(frame.data, timestamp, index)
    else:
        raise UnsupportedFormat(f"unsupported image format: {path.name}")
    if timestamp is not None:
        stamp = timestamp
    elif stamp is None:
        stamp = timestamp_from_name(path)
    return FrameBuffer(data.astype(np.float64), stamp, index)


def _read_fits(path: Path) -> tuple[np.ndarray, datetime | None]:
    from astropy.io import fits

    try:
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            with fits.open(path, memmap=False) as hdul:
                hdu = hdul[0]
                header = hdu.header
                if header.get("NAXIS") != 2:
                    raise UnsupportedFormat(f"{path.name}: expected NAXIS=2, got {header.get('NAXIS')}")
                if header.get("BITPIX") not in (16, -32):
                    raise UnsupportedFormat(f"{path.name}: BITPIX {header.get('BITPIX')} not supported")
                nbytes = abs(header["BITPIX"]) // 8 * header["NAXIS1"] * header["NAXIS2"]
                if hdu.fileinfo()["datLoc"] + nbytes > path.stat().st_size:
                    raise CorruptHeader(f"{path.name}: data segment truncated")
                data = np.array(hdu.data, dtype=np.float64)
                date_obs = header.get("DATE-OBS")
    except (UnsupportedFormat, CorruptHeader):
        raise
    except Exception as exc:  # astropy raises a zoo of OSError/VerifyError/warnings
        raise CorruptHeader(f"{path.name}: {exc}") from exc
    stamp = None
    if date_obs:
        try:
            stamp = parse_timestamp(str(date_obs))
        except ValueError as exc:
            raise CorruptHeader(f"{path.name}: unparseable DATE-OBS {date_obs!r}") from exc
    return data, stamp


def read_pgm(path: str | Path) -> np.ndarray:
    """Binary P5 greymap; 16-bit samples are big-endian."""
    raw = Path(path).read_bytes()
    if not raw.startswith(b"P5"):
        raise UnsupportedFormat(f"{Path(path).name}: not a binary PGM")
    fields = []
    pos = 2
    while len(fields) < 3:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if pos < len(raw) and raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise CorruptHeader(f"{Path(path).name}: truncated PGM header")
        fields.append(raw[start:pos])
    pos += 1  # single whitespace after maxval
    try:
        width, height, maxval = (int(x) for x in fields)
    except ValueError as exc:
        raise CorruptHeader(f"{Path(path).name}: bad PGM header") from exc
    if width <= 0 or height <= 0 or not 0 < maxval < 65536:
        raise CorruptHeader(f"{Path(path).name}: bad PGM dimensions or maxval")
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    need = width * height * dtype.itemsize
    payload = raw[pos : pos + need]
    if len(payload) != need:
        raise CorruptHeader(f"{Path(path).name}: expected {need} payload bytes, found {len(payload)}")
    return np.frombuffer(payload, dtype=dtype).reshape(height, width).astype(np.float64)


def read_cache(path: str | Path, index: int = 0) -> FrameBuffer:
    raw = Path(path).read_bytes()
    if len(raw) < _CACHE_HEADER.size:
        raise CorruptHeader(f"{Path(path).name}: short cache header")
    magic, width, height, micros = _CACHE_HEADER.unpack_from(raw)
    if magic != CACHE_MAGIC:
        raise UnsupportedFormat(f"{Path(path).name}: bad cache magic {magic!r}")
    need = width * height * 4
    payload = raw[_CACHE_HEADER.size : _CACHE_HEADER.size + need]
    if len(payload) != need or width == 0 or height == 0:
        raise CorruptHeader(f"{Path(path).name}: truncated cache payload")
    data = np.frombuffer(payload, dtype="<f4").reshape(height, width)
    return FrameBuffer(data, EPOCH + timedelta(microseconds=micros), index)


# ---------------------------------------------------------------------------
# writers


def write_pgm(path: str | Path, data: np.ndarray, maxval: int = 65535) -> None:
    arr = np.asarray(data)
    if arr.ndim != 2:
        raise ValueError("PGM data must be 2D")
    if maxval > 255:
        payload = np.clip(np.rint(arr), 0, maxval).astype(">u2").tobytes()
    else:
        payload = np.clip(np.rint(arr), 0, maxval).astype("u1").tobytes()
    header = f"P5\n{arr.shape[1]} {arr.shape[0]}\n{maxval}\n".encode("ascii")
    Path(path).write_bytes(header + payload)


def write_fits(path: str | Path, frame: FrameBuffer, bitpix: int = 16) -> None:
    from astropy.io import fits

    if bitpix == 16:
        hdu = fits.PrimaryHDU(np.clip(np.rint(frame.data), -32768, 32767).astype(np.int16))
    elif bitpix == -32:
        hdu = fits.PrimaryHDU(frame.data.astype(np.float32))
    else:
        raise UnsupportedFormat(f"BITPIX {bitpix} not supported")
    hdu.header["DATE-OBS"] = _as_utc(frame.timestamp).strftime("%Y-%m-%dT%H:%M:%S.%f")
    hdu.writeto(path, overwrite=True)


def write_cache(path: str | Path, frame: FrameBuffer) -> None:
    """Values are stored as float32, so only float32-representable frames round-trip exactly."""
    delta = _as_utc(frame.timestamp) - EPOCH
    micros = (delta.days * 86400 + delta.seconds) * 1_000_000 + delta.microseconds
    header = _CACHE_HEADER.pack(CACHE_MAGIC, frame.width, frame.height, micros)
    Path(path).write_bytes(header + frame.data.astype("<f4").tobytes())


# ---------------------------------------------------------------------------
# manifests


def read_manifest(path: str | Path) -> SequenceManifest:
    """Parse a manifest: one ``path [timestamp]`` per line, ``# cadence: <s>`` optional.

    Relative paths resolve against the manifest's directory. Lines without a
    timestamp take it from the ``*_YYYYMMDD_HHMMSS.*`` file name pattern.
    """
    path = Path(path)
    base = path.parent
    cadence = None
    entries = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            m = re.match(r"#\s*cadence\s*[:=]\s*([0-9.eE+-]+)", line)
            if m:
                cadence = float(m.group(1))
            continue
        parts = line.split()
        frame_path = Path(parts[0])
        if not frame_path.is_absolute():
            frame_path = base / frame_path
        if len(parts) > 1:
            try:
                stamp = parse_timestamp(parts[1])
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: bad timestamp {parts[1]!r}") from exc
        else:
            stamp = timestamp_from_name(frame_path)
        entries.append((frame_path, stamp))
    return SequenceManifest(tuple(entries), cadence)


def write_manifest(path: str | Path, manifest: SequenceManifest) -> None:
    path = Path(path)
    lines = []
    if manifest.cadence_hint is not None:
        lines.append(f"# cadence: {manifest.cadence_hint:g}")
    for frame_path, stamp in manifest:
        try:
            shown = frame_path.relative_to(path.parent)
        except ValueError:
            shown = frame_path
        lines.append(f"{shown} {format_timestamp(stamp)}")
    path.write_text("\n".join(lines) + "\n")


def manifest_from_paths(paths: Sequence[str | Path]) -> SequenceManifest:
    """Manifest built from file-name stamps, sorted by time."""
    items = sorted(((Path(p), timestamp_from_name(p)) for p in paths), key=lambda e: e[1])
    return SequenceManifest(tuple(items))


# ---------------------------------------------------------------------------
# disk geometry


def estimate_disk(frame: FrameBuffer, n_rays: int = 720, min_points: int = 32, max_rms: float = 5.0) -> DiskGeometry:
    """Fit the solar limb with a circle.

    A level halfway between the 10th and 90th intensity percentiles locates the
    limb region on each radial scanline; the edge point is then placed at the
    steepest intensity drop between that crossing and the sky level. Points go
    through an algebraic (Kasa) fit followed by one geometric Gauss-Newton pass.
    """
    img = frame.data
    h, w = img.shape
    lo, hi = np.percentile(img, [10.0, 90.0])
    if not hi > lo:
        raise DiskNotFound("no intensity contrast between disk and sky")
    mid = 0.5 * (lo + hi)
    sky = lo + 0.1 * (hi - lo)
    bright = img > mid
    if bright.sum() < 16:
        raise DiskNotFound("too few bright pixels")
    cy0, cx0 = ndimage.center_of_mass(bright)

    step = 0.5
    radii = np.arange(0.0, math.hypot(h, w), step)
    angles = np.linspace(0.0, 2.0 * np.pi, n_rays, endpoint=False)
    xs = cx0 + np.cos(angles)[:, None] * radii[None, :]
    ys = cy0 + np.sin(angles)[:, None] * radii[None, :]
    inside = (xs >= 0) & (xs <= w - 1) & (ys >= 0) & (ys <= h - 1)
    prof = ndimage.map_coordinates(img, [ys.ravel(), xs.ravel()], order=1, mode="nearest").reshape(xs.shape)

    pts = []
    for k in range(n_rays):
        valid = inside[k]
        n = int(np.argmin(valid)) if not valid.all() else valid.size
        if n < 4:
            continue
        p = prof[k, :n]
        above = p > mid
        cross = np.nonzero(above[:-1] & ~above[1:])[0]
        if cross.size == 0:
            continue
        c = int(cross[-1])
        below_sky = np.nonzero(p[c:] < sky)[0]
        if below_sky.size == 0:
            continue  # ray leaves the frame before reaching sky
        s = c + int(below_sky[0])
        stop = min(s + 4, n - 1)
        drop = p[c:stop] - p[c + 1 : stop + 1]
        if drop.size == 0:
            continue
        i = int(np.argmax(drop))
        offset = 0.0
        if 0 < i < drop.size - 1:
            denom = drop[i - 1] - 2.0 * drop[i] + drop[i + 1]
            if denom < 0:
                offset = 0.5 * (drop[i - 1] - drop[i + 1]) / denom
        r_edge = radii[c + i] + step * (0.5 + offset)
        pts.append((cx0 + r_edge * math.cos(angles[k]), cy0 + r_edge * math.sin(angles[k])))

    if len(pts) < min_points:
        raise DiskNotFound(f"only {len(pts)} limb points found")
    pts = np.asarray(pts)
    cx, cy, r = _kasa_fit(pts)
    resid = np.hypot(pts[:, 0] - cx, pts[:, 1] - cy) - r
    cut = max(3.0, 3.0 * 1.4826 * np.median(np.abs(resid - np.median(resid))))
    keep = np.abs(resid) <= cut
    if keep.sum() >= min_points:
        pts = pts[keep]
        cx, cy, r = _kasa_fit(pts)
    cx, cy, r = _geometric_step(pts, cx, cy, r)
    resid = np.hypot(pts[:, 0] - cx, pts[:, 1] - cy) - r
    rms = float(np.sqrt(np.mean(resid**2)))
    if not np.isfinite(rms) or rms > max_rms:
        raise DiskNotFound(f"limb fit residual {rms:.2f} px exceeds {max_rms} px")
    if not 0 < r <= math.hypot(h, w):
        raise DiskNotFound(f"implausible disk radius {r:.1f}")
    return DiskGeometry(float(cx), float(cy), float(r))


def _kasa_fit(pts: np.ndarray) -> tuple[float, float, float]:
    x, y = pts[:, 0], pts[:, 1]
    a = np.column_stack([x, y, np.ones_like(x)])
    b = -(x * x + y * y)
    (d, e, f), *_ = np.linalg.lstsq(a, b, rcond=None)
    cx, cy = -d / 2.0, -e / 2.0
    r2 = cx * cx + cy * cy - f
    if r2 <= 0:
        raise DiskNotFound("degenerate circle fit")
    return cx, cy, math.sqrt(r2)


def _geometric_step(pts: np.ndarray, cx: float, cy: float, r: float) -> tuple[float, float, float]:
    dx, dy = pts[:, 0] - cx, pts[:, 1] - cy
    dist = np.hypot(dx, dy)
    dist = np.where(dist == 0, 1e-12, dist)
    resid = dist - r
    jac = np.column_stack([-dx / dist, -dy / dist, -np.ones_like(dist)])
    delta, *_ = np.linalg.lstsq(jac, -resid, rcond=None)
    return cx + delta[0], cy + delta[1], r + delta[2]


# ---------------------------------------------------------------------------
# heliographic coordinates


def pixel_to_heliographic(geom: DiskGeometry, px: tuple[float, float], b0: float = 0.0) -> tuple[float, float]:
    """Orthographic de-projection of pixel ``(x, y)`` to (latitude, longitude) in degrees.

    Image rows grow southwards; the solar P angle is taken as zero.
    """
    x = (px[0] - geom.center_x) / geom.radius
    y = (geom.center_y - px[1]) / geom.radius
    rho2 = x * x + y * y
    if rho2 >= 1.0:
        raise OffDisk(f"pixel {px} lies outside the disk")
    z = math.sqrt(1.0 - rho2)
    b = math.radians(b0)
    sin_lat = y * math.cos(b) + z * math.sin(b)
    lat = math.degrees(math.asin(max(-1.0, min(1.0, sin_lat))))
    lon = math.degrees(math.atan2(x, z * math.cos(b) - y * math.sin(b)))
    return lat, lon


def heliographic_to_pixel(geom: DiskGeometry, lat: float, lon: float, b0: float = 0.0) -> tuple[float, float]:
    la, lo, b = math.radians(lat), math.radians(lon), math.radians(b0)
    sx = math.cos(la) * math.sin(lo)
    sy = math.sin(la)
    sz = math.cos(la) * math.cos(lo)
    y = sy * math.cos(b) - sz * math.sin(b)
    return geom.center_x + geom.radius * sx, geom.center_y - geom.radius * y


def great_circle_deg(lat1: float, lon1: float, lat2: float, lon2: float) -> float:
    p1, p2 = math.radians(lat1), math.radians(lat2)
    dl = math.radians(lon2 - lon1)
    a = math.sin((p2 - p1) / 2) ** 2 + math.cos(p1) * math.cos(p2) * math.sin(dl / 2) ** 2
    return math.degrees(2 * math.asin(min(1.0, math.sqrt(a))))
