"""Restart contraction factors and restart-period selection.

Starting a restart cycle from ``(x0, 0)``, ``K`` outer rounds map the residual
to ``chi_K * x0`` where ``chi_K = [T**K]_{11}``.  Cayley-Hamilton gives the
three-term recurrence ``chi_K = tr(T) chi_{K-1} - det(T) chi_{K-2}``, valid in
every spectral regime; it is the canonical evaluation used throughout.
"""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np

from .mode_dynamics import (
    Kind,
    OuterHyperparams,
    RegimeError,
    SpectralParams,
    Transition2x2,
    spectral_params,
    transition,
)

__all__ = [
    "Source",
    "RestartFactorSeries",
    "PeriodRecommendation",
    "LowMomentumWarning",
    "CANCELLATION_FLOOR",
    "chi_recurrence",
    "chi_closed_form",
    "closed_form_series",
    "bracket",
    "rate_r_k",
    "rate_r_inf",
    "envelope_rate",
    "crossover",
    "phase_estimates",
    "oracle_period",
    "blockwise_objective",
    "blockwise_oracle_period",
    "heuristic_period_raw",
    "heuristic_period",
]

# |chi_K| below this counts as exact cancellation (infinite rate).
CANCELLATION_FLOOR = 1e-300

DEFAULT_K_MIN = 1
DEFAULT_K_MAX = 64
PHASE_ORDERS = (0, 1, 2)


class Source(str, enum.Enum):
    RECURRENCE = "Recurrence"
    CLOSED_FORM = "ClosedForm"


class LowMomentumWarning(UserWarning):
    """The high-momentum period heuristic is used with beta < 0.9."""


@dataclass(frozen=True)
class RestartFactorSeries:
    chis: np.ndarray
    source: Source
    transition_kind: Optional[Kind]

    def __getitem__(self, k):
        return self.chis[k]

    def __len__(self):
        return len(self.chis)


_SPLITTER = 134217729.0  # 2**27 + 1


def _two_sum(a, b):
    s = a + b
    bb = s - a
    return s, (a - (s - bb)) + (b - bb)


def _split(a):
    c = _SPLITTER * a
    hi = c - (c - a)
    return hi, a - hi


def _two_prod(a, b):
    p = a * b
    ah, al = _split(a)
    bh, bl = _split(b)
    return p, ((ah * bh - p) + ah * bl + al * bh) + al * bl


def _dd_mul(xh, xl, yh, yl):
    p, e = _two_prod(xh, yh)
    e += xh * yl + xl * yh
    return _two_sum(p, e)


def _dd_add(xh, xl, yh, yl):
    s, e = _two_sum(xh, yh)
    e += xl + yl
    return _two_sum(s, e)


def _plain_recurrence(tr, det, a11, k_max):
    chis = np.empty(k_max + 1)
    chis[0] = 1.0
    if k_max >= 1:
        chis[1] = a11
    prev2, prev1 = 1.0, a11
    for k in range(2, k_max + 1):
        cur = tr * prev1 - det * prev2
        chis[k] = cur
        prev2, prev1 = prev1, cur
    return chis


def chi_recurrence(t: Transition2x2, k_max: int, compensated: bool = True) -> RestartFactorSeries:
    """chi_0 .. chi_{k_max} for transition ``t`` via the trace/det recurrence.

    The default evaluation carries trace, determinant and the iterates in
    double-double arithmetic; slowly rotating modes (beta near 1, small
    sigma) otherwise lose several digits by K = 200.
    """
    if k_max < 0:
        raise ValueError("k_max must be >= 0")
    if not compensated:
        return RestartFactorSeries(_plain_recurrence(t.trace, t.det, t.a11, k_max), Source.RECURRENCE, t.kind)
    tr_h, tr_l = _two_sum(t.a11, t.a22)
    d1h, d1l = _two_prod(t.a11, t.a22)
    d2h, d2l = _two_prod(t.a12, t.a21)
    det_h, det_l = _dd_add(d1h, d1l, -d2h, -d2l)
    chis = np.empty(k_max + 1)
    chis[0] = 1.0
    if k_max >= 1:
        chis[1] = t.a11
    p2h, p2l = 1.0, 0.0
    p1h, p1l = t.a11, 0.0
    for k in range(2, k_max + 1):
        uh, ul = _dd_mul(tr_h, tr_l, p1h, p1l)
        vh, vl = _dd_mul(det_h, det_l, p2h, p2l)
        ch, cl = _dd_add(uh, ul, -vh, -vl)
        if not math.isfinite(ch):
            # Splitting overflows near 1e300; finish in plain arithmetic.
            tr, det = t.trace, t.det
            for j in range(k, k_max + 1):
                chis[j] = tr * chis[j - 1] - det * chis[j - 2]
            break
        chis[k] = ch
        p2h, p2l, p1h, p1l = p1h, p1l, ch, cl
    return RestartFactorSeries(chis, Source.RECURRENCE, t.kind)


def _require_complex(sp: SpectralParams):
    if not sp.is_complex:
        raise RegimeError(f"closed form needs the complex regime, got {sp.regime.value}")


def bracket(sp: SpectralParams, k: int) -> float:
    """Projection term ``cos(K phi) + C sin(K phi)`` of the closed form."""
    _require_complex(sp)
    return math.cos(k * sp.phi) + sp.C * math.sin(k * sp.phi)


def chi_closed_form(sp: SpectralParams, k: int) -> float:
    _require_complex(sp)
    return sp.rho**k * bracket(sp, k)


def closed_form_series(sp: SpectralParams, k_max: int) -> RestartFactorSeries:
    ks = np.arange(k_max + 1)
    chis = sp.rho**ks * (np.cos(ks * sp.phi) + sp.C * np.sin(ks * sp.phi))
    return RestartFactorSeries(chis, Source.CLOSED_FORM, None)


def _rate_from_chi(chi: float, k: int) -> float:
    a = abs(chi)
    if a < CANCELLATION_FLOOR:
        return math.inf
    return -math.log(a) / k


def rate_r_k(t: Transition2x2, k: int) -> float:
    """Average per-round contraction rate of a K-period restart, ``-log|chi_K| / K``.

    Exact cancellation is reported as ``math.inf``.
    """
    if k < 1:
        raise ValueError("restart period must be >= 1")
    return _rate_from_chi(chi_recurrence(t, k).chis[k], k)


def rate_r_inf(h: OuterHyperparams) -> float:
    """Non-restarted HB damping rate ``-0.5 log beta`` (``inf`` at beta = 0)."""
    if h.beta == 0.0:
        return math.inf
    return -0.5 * math.log(h.beta)


def envelope_rate(t: Transition2x2) -> float:
    """``-log rho`` for a generic transition (HB gives ``rate_r_inf``)."""
    sp = spectral_params(t)
    if sp.rho == 0.0:
        return math.inf
    return -math.log(sp.rho)


def crossover(t: Transition2x2, k: int) -> bool:
    """True iff a K-period restart beats the non-restarted envelope: ``|chi_K| < rho**K``."""
    sp = spectral_params(t)
    _require_complex(sp)
    chi = chi_recurrence(t, k).chis[k]
    return abs(chi) < sp.rho**k


def phase_estimates(sp: SpectralParams, orders: Sequence[int] = PHASE_ORDERS) -> Tuple[int, ...]:
    """Cancellation periods ``round((theta + pi/2 + l pi) / phi)``, at least 1."""
    _require_complex(sp)
    return tuple(
        max(1, math.floor((sp.theta + math.pi / 2 + ell * math.pi) / sp.phi + 0.5)) for ell in orders
    )


@dataclass(frozen=True)
class PeriodRecommendation:
    k_star: int
    objective: float
    admissible_range: Tuple[int, int]
    k_phase: Tuple[int, ...] = ()
    criterion: str = "factor"
    scan: np.ndarray = field(default=None, repr=False, compare=False)


def _check_range(k_min, k_max):
    if not (1 <= k_min <= k_max):
        raise ValueError(f"admissible range must satisfy 1 <= k_min <= k_max, got [{k_min}, {k_max}]")


def _argmin_first(values: np.ndarray) -> int:
    # np.argmin returns the first occurrence, i.e. ties go to the smaller K.
    return int(np.argmin(values))


def _select(objective: np.ndarray, ks: np.ndarray, criterion: str) -> int:
    if criterion == "factor":
        return _argmin_first(objective)
    if criterion == "rate":
        # Maximise -log(objective)/K, i.e. minimise log(objective)/K.
        with np.errstate(divide="ignore"):
            per_round = np.log(np.maximum(objective, 0.0)) / ks
        return _argmin_first(per_round)
    raise ValueError(f"unknown selection criterion {criterion!r}; use 'factor' or 'rate'")


def oracle_period(
    t: Transition2x2,
    k_min: int = DEFAULT_K_MIN,
    k_max: int = DEFAULT_K_MAX,
    criterion: str = "factor",
) -> PeriodRecommendation:
    """Restart period minimising ``|chi_K|`` over ``[k_min, k_max]``.

    With ``criterion="rate"`` the per-round rate ``-log|chi_K|/K`` is maximised
    instead, which is what matters over a horizon much longer than one cycle.
    Phase estimates are attached when ``t`` is in the complex regime.
    """
    _check_range(k_min, k_max)
    chis = chi_recurrence(t, k_max).chis
    ks = np.arange(k_min, k_max + 1)
    objective = np.abs(chis[k_min:])
    idx = _select(objective, ks, criterion)
    try:
        sp = spectral_params(t)
        k_phase = phase_estimates(sp) if sp.is_complex else ()
    except RegimeError:
        k_phase = ()
    return PeriodRecommendation(
        k_star=int(ks[idx]),
        objective=float(objective[idx]),
        admissible_range=(k_min, k_max),
        k_phase=k_phase,
        criterion=criterion,
        scan=objective,
    )


def blockwise_objective(sigmas, weights, h: OuterHyperparams, kind, k_max: int) -> np.ndarray:
    """``sum_j w_j chi_K(sigma_j)**2`` for K = 0..k_max."""
    sigmas = np.asarray(sigmas, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if sigmas.size == 0:
        raise ValueError("empty spectrum")
    if sigmas.shape != weights.shape:
        raise ValueError("sigmas and weights must have the same length")
    if np.any(weights < 0) or not np.any(weights > 0):
        raise ValueError("weights must be nonnegative and not all zero")
    total = np.zeros(k_max + 1)
    for s, w in zip(sigmas, weights):
        if w == 0.0:
            continue
        chis = chi_recurrence(transition(float(s), h, kind), k_max).chis
        total += w * chis * chis
    return total


def blockwise_oracle_period(
    spectrum,
    h: OuterHyperparams,
    kind=Kind.HB,
    k_min: int = DEFAULT_K_MIN,
    k_max: int = DEFAULT_K_MAX,
    criterion: str = "factor",
) -> PeriodRecommendation:
    """One restart period for a group of modes: argmin of the weighted squared factors.

    ``spectrum`` is anything with ``sigmas`` and ``weights`` sequences.
    Phase estimates are those of the weight-averaged sigma.
    """
    _check_range(k_min, k_max)
    sigmas = np.asarray(spectrum.sigmas, dtype=float)
    weights = np.asarray(spectrum.weights, dtype=float)
    total = blockwise_objective(sigmas, weights, h, kind, k_max)
    ks = np.arange(k_min, k_max + 1)
    objective = total[k_min:]
    idx = _select(objective, ks, criterion)
    sigma_bar = float(np.dot(weights, sigmas) / weights.sum())
    k_phase: Tuple[int, ...] = ()
    try:
        sp = spectral_params(transition(sigma_bar, h, kind))
        if sp.is_complex:
            k_phase = phase_estimates(sp)
    except (RegimeError, ValueError):
        pass
    return PeriodRecommendation(
        k_star=int(ks[idx]),
        objective=float(objective[idx]),
        admissible_range=(k_min, k_max),
        k_phase=k_phase,
        criterion=criterion,
        scan=objective,
    )


def heuristic_period_raw(sigma_bar: float, h: OuterHyperparams) -> float:
    """``pi / (2 sqrt(nu * sigma_bar * (1 - beta)))`` before rounding."""
    if sigma_bar < 0:
        raise ValueError("sigma_bar must be nonnegative")
    denom = math.sqrt(h.nu * sigma_bar * (1.0 - h.beta))
    if denom == 0.0:
        return math.inf
    return math.pi / (2.0 * denom)


def heuristic_period(sigma_bar: float, h: OuterHyperparams):
    """High-momentum estimate of the first cancellation period.

    Returns an int >= 1, or ``math.inf`` when ``sigma_bar == 0`` (nothing
    rotates, so no cancellation exists).  Warns when ``beta < 0.9`` since the
    small-angle expansion behind it is then loose.
    """
    if h.beta < 0.9:
        warnings.warn(
            f"period heuristic assumes beta close to 1; got beta={h.beta}",
            LowMomentumWarning,
            stacklevel=2,
        )
    raw = heuristic_period_raw(sigma_bar, h)
    if math.isinf(raw):
        return math.inf
    return max(1, math.floor(raw + 0.5))
