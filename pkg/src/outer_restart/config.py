"""JSON experiment and sweep configurations.

Experiment config::

    {
      "model": {"spectrum": {"sigmas": [0.95], "weights": [1.0]}},
      "optimizer": {"kind": "HB", "nu": 1.0, "beta_out": 0.9},
      "schedule": {"variant": "global", "period": 5},
      "horizon": 80,
      "output": "trajectory.csv"
    }

The model section holds exactly one of ``spectrum`` (``sigmas`` or
``eigenvalues`` + ``eta`` + ``steps``), ``blocks`` (list of
``{label, sigmas, weights?, nu?, beta_out?, period?}``) or ``quadratic``
(``{matrix: <csv path>, x0, workers?, worker_matrices?, eta, steps}``).
Schedule variants: ``none``, ``global`` (period), ``per_mode`` (periods),
``blockwise`` (periods, optional), ``soft`` (period, retain, inject).
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from .mode_dynamics import InnerConfig, Kind, OuterHyperparams
from .sweep_harness import (
    DEFAULT_BETA_GRID,
    DEFAULT_CLIP,
    DEFAULT_K_GRID,
    DEFAULT_NU_GRID,
    SweepConfig,
)
from .trajectory_sim import (
    SIX_MODE_SIGMAS,
    Block,
    BlockwiseRestart,
    GlobalRestart,
    NoRestart,
    PerModeRestart,
    QuadraticProblem,
    SoftRestart,
    Spectrum,
)

VARIANTS = ("none", "global", "per_mode", "blockwise", "soft")
MODEL_TYPES = ("spectrum", "blocks", "quadratic")


class ConfigError(ValueError):
    def __init__(self, where: str, message: str):
        self.where = where
        super().__init__(f"{where}: {message}" if where else message)


def _get(d: dict, key: str, where: str, kind=None, default=Ellipsis):
    if not isinstance(d, dict):
        raise ConfigError(where, "expected an object")
    if key not in d:
        if default is Ellipsis:
            raise ConfigError(f"{where}.{key}" if where else key, "missing required field")
        return default
    v = d[key]
    path = f"{where}.{key}" if where else key
    if kind is float:
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
            raise ConfigError(path, f"expected a finite number, got {v!r}")
        return float(v)
    if kind is int:
        if isinstance(v, bool) or not isinstance(v, int):
            raise ConfigError(path, f"expected an integer, got {v!r}")
        return v
    if kind is str:
        if not isinstance(v, str):
            raise ConfigError(path, f"expected a string, got {v!r}")
        return v
    if kind is list:
        if not isinstance(v, list):
            raise ConfigError(path, f"expected a list, got {v!r}")
        return v
    return v


def _floats(v, path) -> List[float]:
    if not isinstance(v, list) or not v:
        raise ConfigError(path, "expected a nonempty list of numbers")
    out = []
    for i, x in enumerate(v):
        if isinstance(x, bool) or not isinstance(x, (int, float)) or not math.isfinite(x):
            raise ConfigError(f"{path}[{i}]", f"expected a finite number, got {x!r}")
        out.append(float(x))
    return out


def _ints(v, path) -> List[int]:
    if not isinstance(v, list) or not v:
        raise ConfigError(path, "expected a nonempty list of integers")
    for i, x in enumerate(v):
        if isinstance(x, bool) or not isinstance(x, int):
            raise ConfigError(f"{path}[{i}]", f"expected an integer, got {x!r}")
    return list(v)


def _no_extra(d: dict, allowed, where):
    extra = sorted(set(d) - set(allowed))
    if extra:
        raise ConfigError(where, f"unknown field(s) {extra}")


def _wrap(where, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(where, str(exc)) from None


def load_json(path) -> Any:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(str(path), f"cannot read config: {exc.strerror}") from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}", exc.msg) from None


def read_matrix_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    try:
        M = np.array([[float(c) for c in r] for r in rows])
    except ValueError as exc:
        raise ConfigError(str(path), f"bad matrix entry: {exc}") from None
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ConfigError(str(path), f"matrix must be n x n, got shape {M.shape}")
    return M


# --- model section --------------------------------------------------------


def _parse_spectrum(d, where) -> Dict[str, Any]:
    _no_extra(d, ("sigmas", "eigenvalues", "eta", "steps", "weights", "x0"), where)
    out: Dict[str, Any] = {}
    if ("sigmas" in d) == ("eigenvalues" in d):
        raise ConfigError(where, "give exactly one of 'sigmas' or 'eigenvalues'")
    if "sigmas" in d:
        out["sigmas"] = _floats(d["sigmas"], f"{where}.sigmas")
    else:
        out["eigenvalues"] = _floats(d["eigenvalues"], f"{where}.eigenvalues")
        out["eta"] = _get(d, "eta", where, float)
        out["steps"] = _get(d, "steps", where, int)
    n = len(out.get("sigmas") or out["eigenvalues"])
    out["weights"] = _floats(d["weights"], f"{where}.weights") if "weights" in d else [1.0] * n
    out["x0"] = _floats(d["x0"], f"{where}.x0") if "x0" in d else [1.0] * n
    for key in ("weights", "x0"):
        if len(out[key]) != n:
            raise ConfigError(f"{where}.{key}", f"expected {n} entries, got {len(out[key])}")
    return out


def _parse_blocks(v, where) -> List[Dict[str, Any]]:
    if not isinstance(v, list) or not v:
        raise ConfigError(where, "expected a nonempty list of blocks")
    blocks = []
    for i, b in enumerate(v):
        bw = f"{where}[{i}]"
        if not isinstance(b, dict):
            raise ConfigError(bw, "expected an object")
        _no_extra(b, ("label", "sigmas", "weights", "nu", "beta_out", "period"), bw)
        sig = _floats(_get(b, "sigmas", bw), f"{bw}.sigmas")
        blk = {
            "label": _get(b, "label", bw, str, default=f"block{i}"),
            "sigmas": sig,
            "weights": _floats(b["weights"], f"{bw}.weights") if "weights" in b else [1.0] * len(sig),
            "nu": _get(b, "nu", bw, float, default=None),
            "beta_out": _get(b, "beta_out", bw, float, default=None),
            "period": _get(b, "period", bw, int, default=None),
        }
        if len(blk["weights"]) != len(sig):
            raise ConfigError(f"{bw}.weights", f"expected {len(sig)} entries")
        if (blk["nu"] is None) != (blk["beta_out"] is None):
            raise ConfigError(bw, "per-block hyperparameters need both 'nu' and 'beta_out'")
        blocks.append(blk)
    return blocks


def _parse_quadratic(d, where, base: Path) -> Dict[str, Any]:
    _no_extra(d, ("matrix", "x0", "workers", "worker_matrices", "eta", "steps"), where)
    out = {
        "matrix": _get(d, "matrix", where, str),
        "x0": _floats(_get(d, "x0", where), f"{where}.x0"),
        "workers": _get(d, "workers", where, int, default=1),
        "eta": _get(d, "eta", where, float),
        "steps": _get(d, "steps", where, int),
    }
    wm = _get(d, "worker_matrices", where, list, default=None)
    if wm is not None:
        if not all(isinstance(p, str) for p in wm):
            raise ConfigError(f"{where}.worker_matrices", "expected a list of CSV paths")
    out["worker_matrices"] = wm
    return out


def _parse_model(d, base: Path) -> Tuple[str, Any]:
    if not isinstance(d, dict):
        raise ConfigError("model", "expected an object")
    present = [k for k in MODEL_TYPES if k in d]
    _no_extra(d, MODEL_TYPES, "model")
    if len(present) != 1:
        raise ConfigError("model", f"exactly one of {MODEL_TYPES} is required, got {present}")
    kind = present[0]
    if kind == "spectrum":
        return kind, _parse_spectrum(d[kind], "model.spectrum")
    if kind == "blocks":
        return kind, _parse_blocks(d[kind], "model.blocks")
    return kind, _parse_quadratic(d[kind], "model.quadratic", base)


def _parse_schedule(d, where="schedule") -> Dict[str, Any]:
    if not isinstance(d, dict):
        raise ConfigError(where, "expected an object")
    variant = _get(d, "variant", where, str)
    if variant not in VARIANTS:
        raise ConfigError(f"{where}.variant", f"unknown schedule variant {variant!r}; expected one of {VARIANTS}")
    allowed = {
        "none": (),
        "global": ("period",),
        "per_mode": ("periods",),
        "blockwise": ("periods",),
        "soft": ("period", "retain", "inject"),
    }[variant]
    _no_extra(d, ("variant",) + allowed, where)
    out: Dict[str, Any] = {"variant": variant}
    if variant in ("global", "soft"):
        out["period"] = _get(d, "period", where, int)
        if out["period"] < 1:
            raise ConfigError(f"{where}.period", "must be >= 1")
    if variant == "soft":
        out["retain"] = _get(d, "retain", where, float)
        out["inject"] = _get(d, "inject", where, float)
    if variant == "per_mode":
        out["periods"] = _ints(_get(d, "periods", where), f"{where}.periods")
    if variant == "blockwise":
        p = d.get("periods")
        out["periods"] = None if p is None else _ints(p, f"{where}.periods")
    for key in ("periods",):
        for i, k in enumerate(out.get(key) or ()):
            if k < 1:
                raise ConfigError(f"{where}.{key}[{i}]", "must be >= 1")
    return out


def build_schedule(s: Dict[str, Any]):
    v = s["variant"]
    if v == "none":
        return NoRestart()
    if v == "global":
        return GlobalRestart(s["period"])
    if v == "soft":
        return SoftRestart(s["period"], s["retain"], s["inject"])
    if v == "per_mode":
        return PerModeRestart(tuple(s["periods"]))
    return BlockwiseRestart(None if s["periods"] is None else tuple(s["periods"]))


@dataclass
class ExperimentConfig:
    model_type: str
    model: Any
    kind: str
    nu: float
    beta_out: float
    schedule: Dict[str, Any]
    horizon: int
    output: Optional[str] = None
    base_dir: Path = field(default=Path("."), compare=False, repr=False)

    @classmethod
    def from_dict(cls, d: Any, base_dir=".") -> "ExperimentConfig":
        if not isinstance(d, dict):
            raise ConfigError("", "top level must be a JSON object")
        _no_extra(d, ("model", "optimizer", "schedule", "horizon", "output"), "")
        base = Path(base_dir)
        model_type, model = _parse_model(_get(d, "model", ""), base)
        opt = _get(d, "optimizer", "")
        if not isinstance(opt, dict):
            raise ConfigError("optimizer", "expected an object")
        _no_extra(opt, ("kind", "nu", "beta_out"), "optimizer")
        kind = _wrap("optimizer.kind", Kind.parse, _get(opt, "kind", "optimizer", str)).value
        nu = _get(opt, "nu", "optimizer", float)
        beta = _get(opt, "beta_out", "optimizer", float)
        _wrap("optimizer", OuterHyperparams, nu, beta)
        schedule = _parse_schedule(_get(d, "schedule", "", default={"variant": "none"}))
        horizon = _get(d, "horizon", "", int)
        if horizon < 0:
            raise ConfigError("horizon", "must be >= 0")
        output = _get(d, "output", "", str, default=None)
        if schedule["variant"] == "blockwise" and model_type != "blocks":
            raise ConfigError("schedule.variant", "blockwise restarts need a 'blocks' model")
        if model_type == "quadratic" and schedule["variant"] in ("per_mode", "blockwise"):
            raise ConfigError("schedule.variant", "quadratic models support none/global/soft only")
        cfg = cls(model_type, model, kind, nu, beta, schedule, horizon, output, base)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        return cls.from_dict(load_json(path), path.parent)

    def to_dict(self) -> Dict[str, Any]:
        if self.model_type == "spectrum":
            model = {k: v for k, v in self.model.items()}
        elif self.model_type == "blocks":
            model = [{k: v for k, v in b.items() if v is not None} for b in self.model]
        else:
            model = {k: v for k, v in self.model.items() if v is not None}
        sched = {k: v for k, v in self.schedule.items() if v is not None}
        d = {
            "model": {self.model_type: model},
            "optimizer": {"kind": self.kind, "nu": self.nu, "beta_out": self.beta_out},
            "schedule": sched,
            "horizon": self.horizon,
        }
        if self.output is not None:
            d["output"] = self.output
        return d

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @property
    def hyper(self) -> OuterHyperparams:
        return OuterHyperparams(self.nu, self.beta_out)

    def spectrum(self) -> Spectrum:
        m = self.model
        if "sigmas" in m:
            return Spectrum.direct(m["sigmas"], m["weights"])
        return Spectrum.from_eigenvalues(InnerConfig(m["eta"], m["steps"]), m["eigenvalues"], m["weights"])

    def blocks(self) -> List[Block]:
        out = []
        for b in self.model:
            hyper = None if b["nu"] is None else OuterHyperparams(b["nu"], b["beta_out"])
            out.append(Block(b["label"], Spectrum.direct(b["sigmas"], b["weights"]), hyper, b["period"]))
        return out

    def quadratic(self) -> Tuple[QuadraticProblem, InnerConfig]:
        m = self.model
        H = read_matrix_csv(self.base_dir / m["matrix"])
        wm = None
        if m.get("worker_matrices"):
            wm = [read_matrix_csv(self.base_dir / p) for p in m["worker_matrices"]]
        return QuadraticProblem(H, np.asarray(m["x0"]), m["workers"], wm), InnerConfig(m["eta"], m["steps"])

    def build_schedule(self):
        return build_schedule(self.schedule)

    def validate(self):
        """Construct the domain objects once so bad values surface as ConfigError."""
        where = f"model.{self.model_type}"
        if self.model_type == "spectrum":
            spec = _wrap(where, self.spectrum)
            n = len(spec)
        elif self.model_type == "blocks":
            blocks = _wrap(where, self.blocks)
            n = sum(len(b.spectrum) for b in blocks)
            if self.schedule["variant"] == "blockwise":
                periods = self.schedule["periods"]
                if periods is None and any(b.period is None for b in blocks):
                    raise ConfigError("schedule.periods", "omitted, so every block needs a 'period'")
                if periods is not None and len(periods) != len(blocks):
                    raise ConfigError("schedule.periods", f"expected {len(blocks)} entries")
        else:
            if not (self.base_dir / self.model["matrix"]).exists():
                raise ConfigError(f"{where}.matrix", f"file not found: {self.model['matrix']}")
            p, _inner = _wrap(where, self.quadratic)
            n = p.H.shape[0]
        if self.schedule["variant"] == "per_mode" and len(self.schedule["periods"]) != n:
            raise ConfigError("schedule.periods", f"expected {n} entries, one per mode")
        _wrap("schedule", self.build_schedule)


# --- sweep config ---------------------------------------------------------


def sweep_config_from_dict(d: Any) -> Tuple[SweepConfig, Optional[str]]:
    if not isinstance(d, dict):
        raise ConfigError("", "top level must be a JSON object")
    _no_extra(
        d, ("beta_grid", "nu_grid", "k_grid", "kinds", "model", "horizon", "loss_clip", "schedule", "output"), ""
    )
    kwargs: Dict[str, Any] = {}
    kwargs["beta_grid"] = tuple(_floats(d["beta_grid"], "beta_grid")) if "beta_grid" in d else DEFAULT_BETA_GRID
    kwargs["nu_grid"] = tuple(_floats(d["nu_grid"], "nu_grid")) if "nu_grid" in d else DEFAULT_NU_GRID
    kwargs["k_grid"] = tuple(_ints(d["k_grid"], "k_grid")) if "k_grid" in d else DEFAULT_K_GRID
    kinds = _get(d, "kinds", "", list, default=["HB", "NAG"])
    kwargs["kinds"] = tuple(_wrap(f"kinds[{i}]", Kind.parse, k).value for i, k in enumerate(kinds))
    kwargs["horizon"] = _get(d, "horizon", "", int, default=80)
    clip = _floats(d["loss_clip"], "loss_clip") if "loss_clip" in d else list(DEFAULT_CLIP)
    if len(clip) != 2:
        raise ConfigError("loss_clip", "expected [lo, hi]")
    kwargs["loss_clip"] = tuple(clip)
    model = d.get("model", {"spectrum": {"sigmas": list(SIX_MODE_SIGMAS)}})
    model_type, parsed = _parse_model(model, Path("."))
    if model_type == "spectrum":
        if "sigmas" not in parsed:
            raise ConfigError("model.spectrum", "sweeps need explicit 'sigmas'")
        kwargs["spectrum"] = _wrap("model.spectrum", Spectrum.direct, parsed["sigmas"], parsed["weights"])
    elif model_type == "blocks":
        blocks = []
        for i, b in enumerate(parsed):
            if b["nu"] is not None:
                raise ConfigError(f"model.blocks[{i}]", "sweeps set nu/beta_out from the grid; drop per-block values")
            blocks.append(Block(b["label"], _wrap(f"model.blocks[{i}]", Spectrum.direct, b["sigmas"], b["weights"])))
        kwargs["blocks"] = tuple(blocks)
    else:
        raise ConfigError("model", "sweeps support 'spectrum' or 'blocks' models")
    sched = _get(d, "schedule", "", default={"variant": "global"})
    if not isinstance(sched, dict):
        raise ConfigError("schedule", "expected an object")
    variant = _get(sched, "variant", "schedule", str)
    if variant not in ("global", "soft"):
        raise ConfigError("schedule.variant", f"unknown sweep schedule variant {variant!r}; expected 'global' or 'soft'")
    _no_extra(sched, ("variant", "retain", "inject"), "schedule")
    kwargs["schedule"] = variant
    if variant == "soft":
        kwargs["retain"] = _get(sched, "retain", "schedule", float)
        kwargs["inject"] = _get(sched, "inject", "schedule", float)
    output = _get(d, "output", "", str, default=None)
    return _wrap("", SweepConfig, **kwargs), output


def load_sweep_config(path) -> Tuple[SweepConfig, Optional[str]]:
    return sweep_config_from_dict(load_json(path))
