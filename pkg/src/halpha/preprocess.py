"""Intensity normalisation, translational registration and the structural bandpass."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import DegenerateFrame, SingularStructureTensor
from .imgio import FrameBuffer
from .varsolve import Tvl1Problem, Tvl1State, solve_tvl1

MAX_CONDITION = 1e8
WARP_ITERATIONS = 3


@dataclass(frozen=True)
class DisplacementVector:
    """Translation (u1 along x, u2 along y) in pixels."""

    u1: float
    u2: float

    def __post_init__(self):
        if not (math.isfinite(self.u1) and math.isfinite(self.u2)):
            raise ValueError("displacement must be finite")

    @property
    def magnitude(self) -> float:
        return math.hypot(self.u1, self.u2)

    def __add__(self, other: "DisplacementVector") -> "DisplacementVector":
        return DisplacementVector(self.u1 + other.u1, self.u2 + other.u2)

    def __neg__(self) -> "DisplacementVector":
        return DisplacementVector(-self.u1, -self.u2)


@dataclass(frozen=True)
class BandpassParams:
    lambda1: float = 0.9
    lambda2: float = 0.1
    max_iters: int = 2000
    tol: float = 1e-5

    def __post_init__(self):
        if not self.lambda1 > self.lambda2 > 0:
            raise ValueError("bandpass needs lambda1 > lambda2 > 0")

    @property
    def passband(self) -> tuple[float, float]:
        """Radii (px) of disk-like structures that survive the filter."""
        return 2.0 / self.lambda1, 2.0 / self.lambda2


def normalize(frame: FrameBuffer) -> FrameBuffer:
    """Zero mean, unit (population) standard deviation over the whole frame."""
    data = frame.data
    mu = data.mean()
    sigma = data.std()
    if not sigma > 0 or np.ptp(data) == 0:
        raise DegenerateFrame("cannot normalise a constant frame")
    out = (data - mu) / sigma
    # second pass removes the rounding left by the first
    out = (out - out.mean()) / out.std()
    return frame.with_data(out)


# ---------------------------------------------------------------------------
# registration


def gradient_magnitude(img: np.ndarray) -> np.ndarray:
    gy, gx = np.gradient(img)
    return np.hypot(gx, gy)


_GAUSS5 = np.exp(-0.5 * np.arange(-2, 3) ** 2)
_GAUSS5 /= _GAUSS5.sum()


def gaussian_pyramid(img: np.ndarray, levels: int) -> list[np.ndarray]:
    """Level 0 is the input; each further level is a 5x5 (sigma 1) blur decimated by 2."""
    pyr = [img]
    for _ in range(levels - 1):
        prev = pyr[-1]
        if min(prev.shape) < 16:
            break
        blurred = ndimage.correlate1d(prev, _GAUSS5, axis=0, mode="nearest")
        blurred = ndimage.correlate1d(blurred, _GAUSS5, axis=1, mode="nearest")
        pyr.append(blurred[::2, ::2])
    return pyr


def _shift_array(img: np.ndarray, dx: float, dy: float) -> np.ndarray:
    if dx == 0 and dy == 0:
        return img
    return ndimage.shift(img, (dy, dx), order=1, mode="nearest")


def register_translation(reference: FrameBuffer, moving: FrameBuffer, levels: int = 5) -> DisplacementVector:
    """Displacement ``d`` such that ``apply_shift(moving, d)`` lines up with ``reference``.

    Lucas-Kanade least squares on the gradient-magnitude images, coarse to fine,
    with a fixed number of warp-and-refine passes per pyramid level.
    """
    if reference.shape != moving.shape:
        raise ValueError("frames must have the same size")
    g_pyr = gaussian_pyramid(gradient_magnitude(reference.data), levels)
    f_pyr = gaussian_pyramid(gradient_magnitude(moving.data), levels)
    dx = dy = 0.0
    for level in range(len(g_pyr) - 1, -1, -1):
        g, f = g_pyr[level], f_pyr[level]
        scale = 2.0**level
        m = 2 if min(g.shape) > 8 else 0
        inner = (slice(m, g.shape[0] - m or None), slice(m, g.shape[1] - m or None))
        for _ in range(WARP_ITERATIONS):
            warped = _shift_array(f, dx / scale, dy / scale)
            wy, wx = np.gradient(warped)
            wx, wy, diff = wx[inner], wy[inner], (warped - g)[inner]
            tensor = np.array([[np.sum(wx * wx), np.sum(wx * wy)], [np.sum(wx * wy), np.sum(wy * wy)]])
            rhs = np.array([np.sum(wx * diff), np.sum(wy * diff)])
            eig = np.linalg.eigvalsh(tensor)
            if eig[-1] <= 0 or eig[0] <= 0 or eig[-1] / eig[0] > MAX_CONDITION:
                raise SingularStructureTensor(f"structure tensor is singular at pyramid level {level}")
            step = np.linalg.solve(tensor, rhs)
            dx += step[0] * scale
            dy += step[1] * scale
    d = DisplacementVector(float(dx), float(dy))
    if d.magnitude >= reference.width:
        raise SingularStructureTensor("registration diverged")
    return d


def apply_shift(frame: FrameBuffer, d: DisplacementVector) -> FrameBuffer:
    """Translate the frame content by ``d`` with bilinear resampling and replicated borders."""
    if d.u1 == 0 and d.u2 == 0:
        return frame
    return frame.with_data(_shift_array(frame.data, d.u1, d.u2))


# ---------------------------------------------------------------------------
# structural bandpass


@dataclass
class BandpassResult:
    frame: FrameBuffer
    fine: Tvl1State
    coarse: Tvl1State


def structural_bandpass_solve(
    frame: FrameBuffer,
    params: BandpassParams = BandpassParams(),
    warm: BandpassResult | None = None,
) -> BandpassResult:
    """Difference of the TV-L1 solutions at ``lambda1`` and ``lambda2``, plus solver state.

    ``warm`` seeds both solves with a previous frame's primal and dual state.
    Within a fixed iteration budget this starts each frame closer to the
    solution of a slowly changing sequence.
    """
    fine = solve_tvl1(
        Tvl1Problem(frame, params.lambda1, params.max_iters, tol=params.tol, warm_start=warm.fine if warm else None)
    )
    coarse = solve_tvl1(
        Tvl1Problem(frame, params.lambda2, params.max_iters, tol=params.tol, warm_start=warm.coarse if warm else None)
    )
    out = frame.with_data(fine.frame.data - coarse.frame.data)
    return BandpassResult(out, fine.state, coarse.state)


def structural_bandpass(frame: FrameBuffer, params: BandpassParams = BandpassParams()) -> FrameBuffer:
    return structural_bandpass_solve(frame, params).frame
