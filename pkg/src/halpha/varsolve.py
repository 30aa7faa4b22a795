"""First-order primal-dual solvers: TV-L1 denoising and the relaxed Potts model.

Both solvers use steps tau = sigma = 1/sqrt(8) (the squared norm of the
forward-difference gradient is below 8), evaluate the primal energy every
``check_interval`` iterations, stop once its relative change drops below
``tol``, and return the lowest-energy checkpoint iterate. The Potts solver
additionally rejects checkpoints whose energy rose and retries that stretch
with halved steps, so its recorded energies never increase.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import DimensionMismatch, NonFinite
from .imgio import FrameBuffer

STEP = 1.0 / math.sqrt(8.0)
_MONOTONE_SLACK = 1e-9
_MAX_HALVINGS = 12


@dataclass
class SolveInfo:
    iterations: int
    energies: list[float]
    converged: bool


@dataclass
class Tvl1State:
    u: np.ndarray
    px: np.ndarray
    py: np.ndarray


@dataclass(frozen=True)
class Tvl1Problem:
    observation: FrameBuffer
    lam: float
    max_iters: int = 2000
    check_interval: int = 50
    tol: float = 1e-5
    warm_start: Tvl1State | None = None

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be non-negative")
        if self.max_iters < 1 or self.check_interval < 1:
            raise ValueError("max_iters and check_interval must be >= 1")
        if not self.tol > 0:
            raise ValueError("tol must be positive")


@dataclass
class Tvl1Result:
    frame: FrameBuffer
    state: Tvl1State
    info: SolveInfo


def tvl1_energy(u: FrameBuffer | np.ndarray, f: FrameBuffer | np.ndarray, lam: float) -> float:
    """Discrete TV(u) + lam * sum |u - f| with the solver's gradient."""
    u = _pixels(u)
    f = _pixels(f)
    if u.shape != f.shape:
        raise DimensionMismatch(f"shapes differ: {u.shape} vs {f.shape}")
    return float(_kernels.tvl1_energy_kernel(u, f, float(lam)))


def solve_tvl1(problem: Tvl1Problem) -> Tvl1Result:
    f = np.ascontiguousarray(problem.observation.data, dtype=np.float64)
    lam = float(problem.lam)
    if problem.warm_start is not None and problem.warm_start.u.shape == f.shape:
        u = problem.warm_start.u.astype(np.float64, copy=True)
        px = problem.warm_start.px.astype(np.float64, copy=True)
        py = problem.warm_start.py.astype(np.float64, copy=True)
    else:
        u = f.copy()
        px = np.zeros_like(f)
        py = np.zeros_like(f)
    ubar = u.copy()

    e_obs = tvl1_energy(f, f, lam)
    energy = tvl1_energy(u, f, lam)
    if e_obs <= energy:
        best, best_state, best_e = f.copy(), (px.copy(), py.copy()), e_obs
    else:
        best, best_state, best_e = u.copy(), (px.copy(), py.copy()), energy
    energies = [energy]
    done = 0
    converged = False
    while done < problem.max_iters:
        n = min(problem.check_interval, problem.max_iters - done)
        _kernels.tvl1_iterate(f, u, ubar, px, py, lam, STEP, STEP, n)
        done += n
        energy = tvl1_energy(u, f, lam)
        if not math.isfinite(energy):
            raise NonFinite(f"TV-L1 iterate became non-finite after {done} iterations")
        if energy <= best_e:
            best, best_state, best_e = u.copy(), (px.copy(), py.copy()), energy
        prev = energies[-1]
        energies.append(energy)
        if abs(prev - energy) <= problem.tol * max(abs(prev), 1e-12):
            converged = True
            break
    state = Tvl1State(best, best_state[0], best_state[1])
    return Tvl1Result(problem.observation.with_data(best), state, SolveInfo(done, energies, converged))


def tvl1_denoise(problem: Tvl1Problem) -> FrameBuffer:
    return solve_tvl1(problem).frame


# ---------------------------------------------------------------------------
# relaxed Potts


@dataclass
class PottsState:
    u: np.ndarray
    xx: np.ndarray
    xy: np.ndarray


@dataclass(frozen=True)
class PottsProblem:
    """Minimal partition problem: 0.5 * sum Per(region_k) + lam * sum_k integral costs_k."""

    costs: np.ndarray
    lam: float
    max_iters: int = 1500
    check_interval: int = 50
    tol: float = 1e-5
    warm_start: PottsState | None = None

    def __post_init__(self):
        costs = np.ascontiguousarray(getattr(self.costs, "planes", self.costs), dtype=np.float64)
        if costs.ndim != 3 or costs.shape[0] < 2:
            raise ValueError("costs must have shape (K, H, W) with K >= 2")
        if not np.all(np.isfinite(costs)):
            raise NonFinite("Potts costs must be finite")
        if self.max_iters < 1 or self.check_interval < 1 or not self.tol > 0:
            raise ValueError("invalid solver settings")
        object.__setattr__(self, "costs", costs)


@dataclass
class RelaxedLabeling:
    planes: np.ndarray
    info: SolveInfo | None = None
    state: PottsState | None = None

    def __post_init__(self):
        s = self.planes.sum(axis=0)
        if np.max(np.abs(s - 1.0)) > 1e-4:
            raise ValueError("relaxed labeling violates the simplex constraint")
        if self.planes.min() < -1e-6 or self.planes.max() > 1 + 1e-6:
            raise ValueError("relaxed labeling values outside [0, 1]")

    @property
    def num_classes(self) -> int:
        return self.planes.shape[0]


def potts_energy(u: np.ndarray, costs: np.ndarray, lam: float) -> float:
    """Relaxed Potts energy of soft planes ``u`` (K, H, W); one-hot planes give the hard energy."""
    u = np.ascontiguousarray(u, dtype=np.float64)
    costs = np.ascontiguousarray(getattr(costs, "planes", costs), dtype=np.float64)
    if u.shape != costs.shape:
        raise DimensionMismatch(f"shapes differ: {u.shape} vs {costs.shape}")
    return float(_kernels.potts_energy_kernel(u, costs, float(lam)))


def labels_energy(labels: np.ndarray, costs: np.ndarray, lam: float) -> float:
    costs = getattr(costs, "planes", costs)
    return potts_energy(one_hot(labels, costs.shape[0]), costs, lam)


def one_hot(labels: np.ndarray, k: int) -> np.ndarray:
    labels = np.asarray(labels)
    return (labels[None, :, :] == np.arange(k)[:, None, None]).astype(np.float64)


def potts_relax(problem: PottsProblem) -> RelaxedLabeling:
    costs = problem.costs
    lam = float(problem.lam)
    k = costs.shape[0]
    ws = problem.warm_start
    if ws is not None and ws.u.shape == costs.shape:
        u = ws.u.astype(np.float64, copy=True)
        xx = ws.xx.astype(np.float64, copy=True)
        xy = ws.xy.astype(np.float64, copy=True)
    else:
        u = np.full(costs.shape, 1.0 / k)
        xx = np.zeros_like(costs)
        xy = np.zeros_like(costs)
    ubar = u.copy()

    # Checkpoints whose energy rose are rejected: the solver rewinds to the last
    # accepted state and retries the interval with halved steps.
    energy = potts_energy(u, costs, lam)
    energies = [energy]
    saved = (u.copy(), ubar.copy(), xx.copy(), xy.copy())
    step = STEP
    done = 0
    converged = False
    while done < problem.max_iters:
        n = min(problem.check_interval, problem.max_iters - done)
        _kernels.potts_iterate(costs, u, ubar, xx, xy, lam, step, step, 0.5, n)
        done += n
        energy = potts_energy(u, costs, lam)
        if not math.isfinite(energy):
            raise NonFinite(f"Potts iterate became non-finite after {done} iterations")
        prev = energies[-1]
        if energy > prev + _MONOTONE_SLACK * abs(prev):
            u[...], ubar[...], xx[...], xy[...] = saved
            step *= 0.5
            if step < STEP / 2**_MAX_HALVINGS:
                converged = True
                break
            continue
        saved = (u.copy(), ubar.copy(), xx.copy(), xy.copy())
        energies.append(energy)
        if prev - energy <= problem.tol * max(abs(prev), 1e-12):
            converged = True
            break
    planes = np.clip(saved[0], 0.0, 1.0)
    return RelaxedLabeling(planes, SolveInfo(done, energies, converged), PottsState(saved[0], saved[2], saved[3]))


def round_labeling(relaxed: RelaxedLabeling | np.ndarray) -> np.ndarray:
    """Pointwise argmax over the class planes; ties go to the lowest class index."""
    planes = getattr(relaxed, "planes", relaxed)
    return np.argmax(planes, axis=0).astype(np.uint8)


def _pixels(x) -> np.ndarray:
    return np.ascontiguousarray(getattr(x, "data", x), dtype=np.float64)
