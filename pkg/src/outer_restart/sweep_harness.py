"""Grid sweeps over outer hyperparameters and restart periods.

Every cell is the clipped ``log10`` final loss of one deterministic
simulation.  Cells for one (kind, schedule, K) are evaluated as a single
batched call; each batch row is computed independently so cell values do not
depend on grid order or batch composition.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .mode_dynamics import Kind, OuterHyperparams
from .trajectory_sim import (
    SIX_MODE_SIGMAS,
    Block,
    Spectrum,
    _weighted_loss,
    evolve_modes,
)

__all__ = [
    "SweepConfig",
    "SweepResult",
    "CellKey",
    "run_sweep",
    "robustness_metric",
    "clip_log_loss",
    "default_sweep_config",
    "DEFAULT_BETA_GRID",
    "DEFAULT_NU_GRID",
    "DEFAULT_K_GRID",
    "SWEEP_COLUMNS",
]

DEFAULT_BETA_GRID = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.85, 0.9, 0.95, 0.99)
DEFAULT_NU_GRID = tuple(round(0.1 * i, 1) for i in range(1, 16))
DEFAULT_K_GRID = (2, 3, 4, 5, 6, 7, 8, 10, 12, 16, 20, 24, 32)
DEFAULT_CLIP = (-12.0, 2.0)

NONE = "none"
BEST = "best"
SCHEDULES = ("global", "soft")

SWEEP_COLUMNS = ("kind", "schedule", "K", "beta_out", "nu", "clipped_log10_loss")

# (kind, schedule, K, beta, nu); K is 0 for the no-restart schedule.
CellKey = Tuple[str, str, int, float, float]


@dataclass(frozen=True)
class SweepConfig:
    beta_grid: Tuple[float, ...] = DEFAULT_BETA_GRID
    nu_grid: Tuple[float, ...] = DEFAULT_NU_GRID
    k_grid: Tuple[int, ...] = DEFAULT_K_GRID
    kinds: Tuple[str, ...] = ("HB", "NAG")
    spectrum: Optional[Spectrum] = None
    blocks: Optional[Tuple[Block, ...]] = None
    horizon: int = 80
    loss_clip: Tuple[float, float] = DEFAULT_CLIP
    schedule: str = "global"
    retain: float = 0.0
    inject: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "beta_grid", tuple(float(b) for b in self.beta_grid))
        object.__setattr__(self, "nu_grid", tuple(float(v) for v in self.nu_grid))
        object.__setattr__(self, "k_grid", tuple(int(k) for k in self.k_grid))
        object.__setattr__(self, "kinds", tuple(Kind.parse(k).value for k in self.kinds))
        object.__setattr__(self, "loss_clip", tuple(float(c) for c in self.loss_clip))
        if not (self.beta_grid and self.nu_grid and self.kinds):
            raise ValueError("beta, nu and kind grids must be nonempty")
        for b in self.beta_grid:
            OuterHyperparams(1.0, b)
        for v in self.nu_grid:
            OuterHyperparams(v, 0.0)
        if any(k < 1 for k in self.k_grid):
            raise ValueError("restart periods must be >= 1")
        lo, hi = self.loss_clip
        if not lo < hi:
            raise ValueError("loss clip requires lo < hi")
        if (self.spectrum is None) == (self.blocks is None):
            raise ValueError("exactly one of spectrum or blocks must be given")
        if self.horizon < 0:
            raise ValueError("horizon must be >= 0")
        if self.schedule not in SCHEDULES:
            raise ValueError(f"unknown sweep schedule {self.schedule!r}; expected one of {SCHEDULES}")

    def modes(self) -> Tuple[np.ndarray, np.ndarray]:
        if self.spectrum is not None:
            return np.asarray(self.spectrum.sigmas), np.asarray(self.spectrum.weights)
        sig, w = [], []
        for b in self.blocks:
            sig.extend(b.spectrum.sigmas)
            w.extend(b.spectrum.weights)
        return np.asarray(sig), np.asarray(w)


def default_sweep_config(**overrides) -> SweepConfig:
    """Toy robustness sweep on the six-mode spectrum, beta_out x nu grid."""
    params = dict(spectrum=Spectrum.direct(SIX_MODE_SIGMAS))
    params.update(overrides)
    return SweepConfig(**params)


def clip_log_loss(loss, lo: float, hi: float):
    """``log10`` of the loss clipped to ``[lo, hi]``; non-finite losses map to ``hi``."""
    loss = np.asarray(loss, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        val = np.where(np.isfinite(loss), np.log10(np.where(np.isfinite(loss), loss, 1.0)), hi)
        val = np.where(np.isnan(val), hi, val)
    out = np.clip(val, lo, hi)
    return float(out) if out.ndim == 0 else out


@dataclass
class SweepResult:
    cells: Dict[CellKey, float]
    config: SweepConfig
    metadata: Dict[str, object] = field(default_factory=dict)

    def rows(self) -> List[Tuple]:
        return [key + (self.cells[key],) for key in sorted(self.cells)]

    def best_restart(self) -> Dict[Tuple[str, float, float], Tuple[float, int]]:
        """Min over restart periods per (kind, beta, nu): ``(value, K)``; ties go to smaller K."""
        best: Dict[Tuple[str, float, float], Tuple[float, int]] = {}
        for (kind, sched, k, beta, nu), v in sorted(self.cells.items()):
            if sched == NONE:
                continue
            key = (kind, beta, nu)
            if key not in best or v < best[key][0]:
                best[key] = (v, k)
        return best

    def to_csv(self) -> str:
        buf = io.StringIO()
        self.write_csv(buf)
        return buf.getvalue()

    def write_csv(self, fh) -> int:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_COLUMNS)
        n = 0
        for kind, sched, k, beta, nu, v in self.rows():
            w.writerow((kind, sched, "" if sched == NONE else k, repr(beta), repr(nu), format(v, ".17g")))
            n += 1
        return n


def _batch(cfg: SweepConfig, kind: str, periods: int, soft) -> np.ndarray:
    sig, w = cfg.modes()
    betas = np.asarray(cfg.beta_grid)[:, None, None]
    nus = np.asarray(cfg.nu_grid)[None, :, None]
    if cfg.blocks is not None and any(b.hyper is not None for b in cfg.blocks):
        raise ValueError("sweeps override per-block hyperparameters; leave Block.hyper unset")
    xs, ms, _ = evolve_modes(sig[None, None, :], nus, betas, kind, periods, soft, None, cfg.horizon)
    final = xs[-1]
    with np.errstate(over="ignore", invalid="ignore"):
        loss = _weighted_loss(final, np.broadcast_to(w, final.shape))
        finite = np.isfinite(xs).all(axis=(0, 3)) & np.isfinite(ms).all(axis=(0, 3))
    return np.where(finite, loss, np.inf)


def run_sweep(cfg: SweepConfig) -> SweepResult:
    lo, hi = cfg.loss_clip
    cells: Dict[CellKey, float] = {}
    soft = (cfg.retain, cfg.inject) if cfg.schedule == "soft" else None
    runs = [(NONE, 0)] + [(cfg.schedule, k) for k in cfg.k_grid]
    for kind in cfg.kinds:
        for sched, k in runs:
            loss = _batch(cfg, kind, k, soft if sched != NONE else None)
            vals = clip_log_loss(loss, lo, hi)
            for i, beta in enumerate(cfg.beta_grid):
                for j, nu in enumerate(cfg.nu_grid):
                    key = (kind, sched, k, beta, nu)
                    if key in cells:
                        raise ValueError(f"duplicate grid point {key}")
                    cells[key] = float(vals[i, j])
    meta = {"deterministic": True, "cells": len(cells)}
    return SweepResult(cells, cfg, meta)


def robustness_metric(res: SweepResult, threshold: float) -> Dict[Tuple[str, str], float]:
    """Fraction of cells with value <= threshold, per (kind, schedule).

    Schedules reported: ``none``, ``<schedule>:K`` for each period, and
    ``best`` for the per-(beta, nu) minimum over periods.
    """
    lo, hi = res.config.loss_clip
    if not lo <= threshold <= hi:
        raise ValueError(f"threshold {threshold} outside clip range [{lo}, {hi}]")
    groups: Dict[Tuple[str, str], List[float]] = {}
    for (kind, sched, k, _b, _n), v in res.cells.items():
        label = NONE if sched == NONE else f"{sched}:{k}"
        groups.setdefault((kind, label), []).append(v)
    for (kind, _b, _n), (v, _k) in res.best_restart().items():
        groups.setdefault((kind, BEST), []).append(v)
    return {key: sum(v <= threshold for v in vals) / len(vals) for key, vals in sorted(groups.items())}
