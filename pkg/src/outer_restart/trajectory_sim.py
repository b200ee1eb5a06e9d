"""Residual trajectories under outer HB/NAG dynamics with momentum restarts.

Two simulators live here.  The mode simulator evolves each eigen-mode's
``(x, m)`` pair through its 2x2 transition; the full quadratic simulator runs
actual inner gradient descent on ``0.5 x^T H x`` for every worker and feeds
the averaged displacement to a vector outer optimizer.  The latter exists to
check the former.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from .mode_dynamics import (
    InnerConfig,
    Kind,
    OuterHyperparams,
    check_sigma,
    effective_sigma,
    hb_entries,
    nag_entries,
)

__all__ = [
    "Spectrum",
    "Block",
    "NoRestart",
    "GlobalRestart",
    "PerModeRestart",
    "BlockwiseRestart",
    "SoftRestart",
    "RestartSchedule",
    "Trajectory",
    "QuadraticProblem",
    "simulate_modes",
    "simulate_blocks",
    "simulate_full_quadratic",
    "evolve_modes",
    "write_trajectory_csv",
    "trajectory_csv",
    "SIX_MODE_SIGMAS",
    "THREE_BLOCK_RANGES",
]

SIX_MODE_SIGMAS = (0.95, 0.85, 0.75, 0.60, 0.45, 0.30)
THREE_BLOCK_RANGES = ((0.92, 1.00), (0.55, 0.65), (0.18, 0.26))


@dataclass(frozen=True)
class Spectrum:
    """Effective-progress values with nonnegative weights (residual energy)."""

    sigmas: Tuple[float, ...]
    weights: Tuple[float, ...]
    origin: str = "direct"

    def __post_init__(self):
        sig = tuple(check_sigma(float(s)) for s in self.sigmas)
        w = tuple(float(v) for v in self.weights)
        if not sig:
            raise ValueError("spectrum needs at least one mode")
        if len(w) != len(sig):
            raise ValueError(f"{len(sig)} sigmas but {len(w)} weights")
        if any(not math.isfinite(v) or v < 0 for v in w) or sum(w) <= 0:
            raise ValueError("weights must be finite, nonnegative, with positive sum")
        object.__setattr__(self, "sigmas", sig)
        object.__setattr__(self, "weights", w)

    @classmethod
    def direct(cls, sigmas, weights=None) -> "Spectrum":
        sigmas = tuple(sigmas)
        if weights is None:
            weights = (1.0,) * len(sigmas)
        return cls(sigmas, tuple(weights), "direct")

    @classmethod
    def from_eigenvalues(cls, inner: InnerConfig, eigenvalues, weights=None) -> "Spectrum":
        sigmas = tuple(effective_sigma(inner, float(lam)) for lam in eigenvalues)
        if weights is None:
            weights = (1.0,) * len(sigmas)
        return cls(sigmas, tuple(weights), "derived")

    def __len__(self):
        return len(self.sigmas)

    @property
    def mean_sigma(self) -> float:
        w = np.asarray(self.weights)
        return float(np.dot(w, self.sigmas) / w.sum())


@dataclass(frozen=True)
class Block:
    label: str
    spectrum: Spectrum
    hyper: Optional[OuterHyperparams] = None
    period: Optional[int] = None


@dataclass(frozen=True)
class NoRestart:
    pass


@dataclass(frozen=True)
class GlobalRestart:
    period: int

    def __post_init__(self):
        _check_period(self.period)


@dataclass(frozen=True)
class PerModeRestart:
    periods: Tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "periods", tuple(int(k) for k in self.periods))
        for k in self.periods:
            _check_period(k)


@dataclass(frozen=True)
class BlockwiseRestart:
    """One period per block; ``None`` takes each block's own ``period``."""

    periods: Optional[Tuple[int, ...]] = None

    def __post_init__(self):
        if self.periods is not None:
            object.__setattr__(self, "periods", tuple(int(k) for k in self.periods))
            for k in self.periods:
                _check_period(k)


@dataclass(frozen=True)
class SoftRestart:
    """Every ``period`` rounds rewrite ``m <- retain * m + inject * g``."""

    period: int
    retain: float
    inject: float

    def __post_init__(self):
        _check_period(self.period)
        if not (math.isfinite(self.retain) and math.isfinite(self.inject)):
            raise ValueError("soft restart coefficients must be finite")


RestartSchedule = Union[NoRestart, GlobalRestart, PerModeRestart, BlockwiseRestart, SoftRestart]


def _check_period(k):
    if int(k) != k or k < 1:
        raise ValueError(f"restart periods must be integers >= 1, got {k}")


@dataclass
class Trajectory:
    """Per-round records, ``t = 0 .. len-1``.

    ``x`` and ``m`` have shape ``(rounds + 1, n)``; ``m`` is recorded after any
    restart rewrite, i.e. the buffer the next round starts with.
    """

    x: np.ndarray
    m: np.ndarray
    loss: np.ndarray
    restarted: np.ndarray
    diverged_at: Optional[int] = None
    horizon: int = 0

    @property
    def rounds(self) -> np.ndarray:
        return np.arange(len(self.loss))

    @property
    def diverged(self) -> bool:
        return self.diverged_at is not None

    @property
    def final_loss(self) -> float:
        if self.diverged:
            return math.inf
        return float(self.loss[-1])

    @property
    def restarted_at(self) -> List[int]:
        return [int(t) for t in np.flatnonzero(self.restarted.any(axis=1))]


def _weighted_loss(x: np.ndarray, weights: np.ndarray) -> np.ndarray:
    # Fixed left-to-right order over modes keeps results independent of batching.
    total = 0.5 * weights[..., 0] * x[..., 0] * x[..., 0]
    for j in range(1, x.shape[-1]):
        total = total + 0.5 * weights[..., j] * x[..., j] * x[..., j]
    return total


def evolve_modes(sigma, nu, beta, kind, periods=None, soft=None, x0=None, horizon=0):
    """Vectorised mode dynamics over arbitrary leading batch dimensions.

    All array arguments broadcast to a common shape ``(..., n)``.  ``periods``
    holds a restart period per mode (0 = never).  ``soft`` is ``None`` for hard
    restarts or ``(retain, inject)``.  Returns ``x, m, restarted`` stacked over
    rounds; non-finite values are left to propagate and must be detected by
    the caller.
    """
    kind = Kind.parse(kind)
    entries = hb_entries if kind is Kind.HB else nag_entries
    sigma, nu, beta = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (sigma, nu, beta)))
    shape = sigma.shape
    a11, a12, a21, a22 = (np.broadcast_to(np.asarray(e, dtype=float), shape) for e in entries(sigma, nu, beta))
    if periods is None:
        periods = np.zeros(shape, dtype=np.int64)
    periods = np.broadcast_to(np.asarray(periods, dtype=np.int64), shape)
    x = np.array(np.broadcast_to(1.0 if x0 is None else np.asarray(x0, dtype=float), shape))
    m = np.zeros(shape)
    xs = np.empty((horizon + 1,) + shape)
    ms = np.empty((horizon + 1,) + shape)
    fired = np.zeros((horizon + 1,) + shape, dtype=bool)
    xs[0], ms[0] = x, m
    active = periods > 0
    safe_periods = np.where(active, periods, 1)
    with np.errstate(over="ignore", invalid="ignore"):
        for t in range(1, horizon + 1):
            g = sigma * x
            x, m = a11 * x + a12 * m, a21 * x + a22 * m
            fire = active & (t % safe_periods == 0)
            if fire.any():
                if soft is None:
                    m = np.where(fire, 0.0, m)
                else:
                    retain, inject = soft
                    # "+ 0.0" maps -0.0 to +0.0 so (0, 0) coincides bitwise with a hard reset.
                    m = np.where(fire, retain * m + inject * g + 0.0, m)
            xs[t], ms[t], fired[t] = x, m, fire
    return xs, ms, fired


def _first_nonfinite(xs: np.ndarray, ms: np.ndarray) -> Optional[int]:
    bad = ~(np.isfinite(xs).all(axis=tuple(range(1, xs.ndim))) & np.isfinite(ms).all(axis=tuple(range(1, ms.ndim))))
    idx = np.flatnonzero(bad)
    return int(idx[0]) if idx.size else None


def _make_trajectory(xs, ms, fired, loss, horizon) -> Trajectory:
    bad = _first_nonfinite(xs, ms)
    bad_loss = np.flatnonzero(~np.isfinite(loss))
    if bad_loss.size and (bad is None or bad_loss[0] < bad):
        bad = int(bad_loss[0])
    end = len(loss) if bad is None else bad
    return Trajectory(
        x=xs[:end].copy(),
        m=ms[:end].copy(),
        loss=loss[:end].copy(),
        restarted=fired[:end].copy(),
        diverged_at=bad,
        horizon=horizon,
    )


def _schedule_arrays(sched: RestartSchedule, n: int, block_sizes=None, blocks=None):
    """Per-mode period array and soft coefficients for a schedule."""
    if isinstance(sched, NoRestart):
        return np.zeros(n, dtype=np.int64), None
    if isinstance(sched, GlobalRestart):
        return np.full(n, sched.period, dtype=np.int64), None
    if isinstance(sched, SoftRestart):
        return np.full(n, sched.period, dtype=np.int64), (sched.retain, sched.inject)
    if isinstance(sched, PerModeRestart):
        if len(sched.periods) != n:
            raise ValueError(f"per-mode schedule has {len(sched.periods)} periods for {n} modes")
        return np.asarray(sched.periods, dtype=np.int64), None
    if isinstance(sched, BlockwiseRestart):
        if block_sizes is None:
            raise ValueError("blockwise restarts need a block structure; use simulate_blocks")
        periods = sched.periods
        if periods is None:
            periods = tuple(b.period for b in blocks)
            if any(p is None for p in periods):
                raise ValueError("blockwise schedule without periods requires every block to set one")
        if len(periods) != len(block_sizes):
            raise ValueError(f"blockwise schedule has {len(periods)} periods for {len(block_sizes)} blocks")
        for p in periods:
            _check_period(p)
        return np.repeat(np.asarray(periods, dtype=np.int64), block_sizes), None
    raise TypeError(f"unknown restart schedule {sched!r}")


def simulate_modes(
    spec: Spectrum,
    h: OuterHyperparams,
    kind,
    sched: RestartSchedule = NoRestart(),
    horizon: int = 0,
    x0=None,
) -> Trajectory:
    """Evolve every mode of ``spec`` from ``(x0_j, 0)`` for ``horizon`` rounds.

    Restarts fire after the outer update of rounds ``K, 2K, ...``.  The loss is
    ``0.5 * sum_j w_j x_j**2``.
    """
    if horizon < 0:
        raise ValueError("horizon must be >= 0")
    n = len(spec)
    periods, soft = _schedule_arrays(sched, n)
    sigma = np.asarray(spec.sigmas)
    x0 = np.ones(n) if x0 is None else np.asarray(x0, dtype=float)
    if x0.shape != (n,):
        raise ValueError(f"x0 must have {n} entries")
    xs, ms, fired = evolve_modes(sigma, h.nu, h.beta, kind, periods, soft, x0, horizon)
    with np.errstate(over="ignore", invalid="ignore"):
        loss = _weighted_loss(xs, np.asarray(spec.weights))
    return _make_trajectory(xs, ms, fired, loss, horizon)


def simulate_blocks(
    blocks: Sequence[Block],
    kind,
    sched: RestartSchedule,
    horizon: int,
    hyper: Optional[OuterHyperparams] = None,
    x0=None,
) -> Trajectory:
    """Blocks evolve independently under their own hyperparameters and period.

    Modes are laid out block after block in the output arrays.  ``hyper`` is
    the default for blocks that do not set their own.
    """
    if horizon < 0:
        raise ValueError("horizon must be >= 0")
    if not blocks:
        raise ValueError("at least one block is required")
    sizes = [len(b.spectrum) for b in blocks]
    sigma, nu, beta, weights = [], [], [], []
    for b in blocks:
        hb = b.hyper or hyper
        if hb is None:
            raise ValueError(f"block {b.label!r} has no hyperparameters and no default was given")
        sigma.extend(b.spectrum.sigmas)
        weights.extend(b.spectrum.weights)
        nu.extend([hb.nu] * len(b.spectrum))
        beta.extend([hb.beta] * len(b.spectrum))
    n = len(sigma)
    periods, soft = _schedule_arrays(sched, n, sizes, blocks)
    x0 = np.ones(n) if x0 is None else np.asarray(x0, dtype=float)
    xs, ms, fired = evolve_modes(np.asarray(sigma), np.asarray(nu), np.asarray(beta), kind, periods, soft, x0, horizon)
    with np.errstate(over="ignore", invalid="ignore"):
        loss = _weighted_loss(xs, np.asarray(weights))
    return _make_trajectory(xs, ms, fired, loss, horizon)


@dataclass
class QuadraticProblem:
    """``0.5 x^T H x`` shared by ``workers`` workers, optionally with per-worker curvature."""

    H: np.ndarray
    x0: np.ndarray
    workers: int = 1
    worker_H: Optional[List[np.ndarray]] = field(default=None)

    def __post_init__(self):
        self.H = np.asarray(self.H, dtype=float)
        self.x0 = np.asarray(self.x0, dtype=float)
        n = self.H.shape[0]
        if self.H.ndim != 2 or self.H.shape != (n, n):
            raise ValueError("H must be a square matrix")
        if self.x0.shape != (n,):
            raise ValueError(f"x0 must have length {n}")
        if self.workers < 1:
            raise ValueError("need at least one worker")
        _check_psd(self.H, "H")
        if self.worker_H is not None:
            self.worker_H = [np.asarray(Hw, dtype=float) for Hw in self.worker_H]
            if len(self.worker_H) != self.workers:
                raise ValueError(f"{len(self.worker_H)} worker matrices for {self.workers} workers")
            for i, Hw in enumerate(self.worker_H):
                if Hw.shape != (n, n):
                    raise ValueError(f"worker {i} matrix has wrong shape")
                _check_psd(Hw, f"H_{i}")

    def curvatures(self) -> List[np.ndarray]:
        return self.worker_H if self.worker_H is not None else [self.H] * self.workers


def _check_psd(H, name):
    scale = np.linalg.norm(H)
    if np.linalg.norm(H - H.T) > 1e-12 * scale:
        raise ValueError(f"{name} is not symmetric")
    if np.linalg.eigvalsh(H).min() < -1e-10:
        raise ValueError(f"{name} is not positive semidefinite")


def simulate_full_quadratic(
    p: QuadraticProblem,
    inner: InnerConfig,
    h: OuterHyperparams,
    kind,
    sched: RestartSchedule = NoRestart(),
    rounds: int = 0,
) -> Trajectory:
    """DiLoCo-style simulation in parameter space.

    Each round, every worker runs ``inner.steps`` gradient steps from the
    shared iterate; the mean displacement is the pseudo-gradient for the outer
    HB/NAG update.  Only schedules that need no eigenbasis (none, global,
    soft) are supported.
    """
    kind = Kind.parse(kind)
    if rounds < 0:
        raise ValueError("rounds must be >= 0")
    for i, Hw in enumerate(p.curvatures()):
        lam_max = float(np.linalg.eigvalsh(Hw).max())
        if inner.eta * lam_max > 1.0 + 1e-12:
            raise ValueError(f"eta * lambda_max = {inner.eta * lam_max} > 1 for worker {i}")
    if isinstance(sched, (PerModeRestart, BlockwiseRestart)):
        raise ValueError("per-mode and blockwise restarts are undefined without an eigenbasis")
    period, soft = 0, None
    if isinstance(sched, GlobalRestart):
        period = sched.period
    elif isinstance(sched, SoftRestart):
        period, soft = sched.period, (sched.retain, sched.inject)

    n = p.H.shape[0]
    nu, beta = h.nu, h.beta
    steppers = [np.eye(n) - inner.eta * Hw for Hw in p.curvatures()]
    x = p.x0.copy()
    m = np.zeros(n)
    xs = np.empty((rounds + 1, n))
    ms = np.empty((rounds + 1, n))
    fired = np.zeros((rounds + 1, n), dtype=bool)
    xs[0], ms[0] = x, m
    with np.errstate(over="ignore", invalid="ignore"):
        for t in range(1, rounds + 1):
            g = np.zeros(n)
            for A in steppers:  # fixed worker order
                local = x
                for _ in range(inner.steps):
                    local = A @ local
                g = g + (x - local)
            g = g / p.workers
            m_new = beta * m + (1.0 - beta) * g
            if kind is Kind.HB:
                x = x - nu * m_new
            else:
                x = x - nu * ((1.0 + beta) * m_new - beta * m)
            m = m_new
            if period and t % period == 0:
                m = np.zeros(n) if soft is None else soft[0] * m + soft[1] * g + 0.0
                fired[t] = True
            xs[t], ms[t] = x, m
        loss = 0.5 * np.einsum("ti,ij,tj->t", xs, p.H, xs)
    return _make_trajectory(xs, ms, fired, loss, rounds)


TRAJECTORY_COLUMNS = ("round", "mode_or_dim", "x", "m", "loss", "restarted")


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def write_trajectory_csv(traj: Trajectory, fh) -> int:
    """Write one row per (round, mode); returns the number of data rows."""
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(TRAJECTORY_COLUMNS)
    rows = 0
    for t in range(len(traj.loss)):
        for j in range(traj.x.shape[1]):
            w.writerow((t, j, _fmt(traj.x[t, j]), _fmt(traj.m[t, j]), _fmt(traj.loss[t]), int(traj.restarted[t, j])))
            rows += 1
    return rows


def trajectory_csv(traj: Trajectory) -> str:
    buf = io.StringIO()
    write_trajectory_csv(traj, buf)
    return buf.getvalue()
