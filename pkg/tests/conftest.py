from __future__ import annotations

from datetime import datetime, timezone

import numpy as np
import pytest

from halpha.imgio import FrameBuffer

T0 = datetime(2012, 7, 1, 8, 0, 0, tzinfo=timezone.utc)


def frame(data, index=0, ts=T0) -> FrameBuffer:
    return FrameBuffer(np.asarray(data, dtype=np.float64), ts, index)


def limb_disk(shape, cx, cy, r, u=0.85, level=3000.0, sky=60.0) -> np.ndarray:
    """Limb-darkened disk written independently of the generator."""
    yy, xx = np.indices(shape, dtype=np.float64)
    rho2 = ((xx - cx) ** 2 + (yy - cy) ** 2) / r**2
    mu = np.sqrt(np.clip(1.0 - rho2, 0.0, 1.0))
    return np.where(rho2 < 1.0, level * (1.0 - u * (1.0 - mu)), 0.0) + sky


def binary_disk(shape, r, contrast=1.0, center=None) -> np.ndarray:
    h, w = shape
    cy, cx = center if center is not None else ((h - 1) / 2, (w - 1) / 2)
    yy, xx = np.indices(shape, dtype=np.float64)
    return np.where((xx - cx) ** 2 + (yy - cy) ** 2 <= r * r, contrast, 0.0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one line per acceptance criterion, printed at the end of the run
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def record_criterion(number: int, passed: bool, detail: str) -> bool:
    ACCEPTANCE[number] = (bool(passed), detail)
    return bool(passed)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
