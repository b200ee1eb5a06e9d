"""Self-check suite: each numerical path against an independent oracle."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, List

import numpy as np

from .mode_dynamics import (
    InnerConfig,
    Kind,
    OuterHyperparams,
    Regime,
    Transition2x2,
    complex_regime_interval,
    spectral_params,
    transition,
    transition_hb,
)
from .restart_analysis import RestartFactorSeries, Source, chi_recurrence, closed_form_series
from .trajectory_sim import GlobalRestart, NoRestart, QuadraticProblem, Spectrum, simulate_full_quadratic, simulate_modes

SIGMA_GRID = tuple(round(0.05 * i, 2) for i in range(1, 21))
BETA_GRID = (0.5, 0.7, 0.9, 0.95, 0.99)
NU_GRID = (0.1, 0.5, 1.0, 1.5)
K_MAX = 200


@dataclass
class CheckResult:
    name: str
    passed: bool
    max_residual: float
    tolerance: float
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] {self.name}: max residual {self.max_residual:.3e} (tol {self.tolerance:.1e}){' ' + self.detail if self.detail else ''}"


ChiFn = Callable[[Transition2x2, int], RestartFactorSeries]


def _faulty_chi(t: Transition2x2, k_max: int) -> RestartFactorSeries:
    # Seeded fault: wrong sign on the determinant term.
    chis = np.empty(k_max + 1)
    chis[0] = 1.0
    if k_max >= 1:
        chis[1] = t.a11
    for k in range(2, k_max + 1):
        chis[k] = t.trace * chis[k - 1] + t.det * chis[k - 2]
    return RestartFactorSeries(chis, Source.RECURRENCE, t.kind)


def matrix_power_chis(t: Transition2x2, k_max: int) -> np.ndarray:
    """[T^K]_{11} by repeated 2x2 multiplication."""
    out = np.empty(k_max + 1)
    p = Transition2x2.identity()
    out[0] = 1.0
    for k in range(1, k_max + 1):
        p = p.matmul(t)
        out[k] = p.a11
    return out


def envelope_scale(t: Transition2x2, k_max: int) -> np.ndarray:
    """Spectral radius ** K; the natural size of the K-th power's entries."""
    sp = spectral_params(t)
    return sp.rho ** np.arange(k_max + 1)


def grid_transitions(kinds=(Kind.HB, Kind.NAG)):
    for kind in kinds:
        for s in SIGMA_GRID:
            for b in BETA_GRID:
                for nu in NU_GRID:
                    yield kind, s, b, nu, transition(s, OuterHyperparams(nu, b), kind)


def check_matrix_power(chi_fn: ChiFn = chi_recurrence, tol: float = 1e-12) -> CheckResult:
    worst = 0.0
    for *_, t in grid_transitions():
        rec = chi_fn(t, K_MAX).chis
        pw = matrix_power_chis(t, K_MAX)
        scale = np.maximum(np.abs(pw), envelope_scale(t, K_MAX))
        worst = max(worst, float(np.max(np.abs(rec - pw) / scale)))
    return CheckResult("recurrence vs matrix power", worst <= tol, worst, tol)


def check_closed_form(chi_fn: ChiFn = chi_recurrence, tol: float = 1e-10) -> CheckResult:
    worst = 0.0
    cells = 0
    for *_, t in grid_transitions():
        sp = spectral_params(t)
        if not sp.is_complex:
            continue
        cells += 1
        rec = chi_fn(t, K_MAX).chis
        cf = closed_form_series(sp, K_MAX).chis
        scale = np.maximum(np.abs(rec), envelope_scale(t, K_MAX))
        worst = max(worst, float(np.max(np.abs(rec - cf) / scale)))
    return CheckResult("recurrence vs closed form", worst <= tol, worst, tol, f"({cells} complex cells)")


def check_determinants() -> CheckResult:
    worst = 0.0
    for kind, s, b, nu, t in grid_transitions():
        expected = b if kind is Kind.HB else b * (1.0 - (1.0 - b) * nu * s)
        worst = max(worst, abs(t.det - expected) / math.ulp(expected))
    return CheckResult("determinant identities (ulp)", worst <= 8, worst, 8)


def check_regime_endpoints(tol: float = 1e-10) -> CheckResult:
    worst = 0.0
    ok = True
    for b in BETA_GRID:
        for nu in NU_GRID:
            h = OuterHyperparams(nu, b)
            iv = complex_regime_interval(h)
            for s in (iv.lo, iv.hi):
                t = transition_hb(s, h, synthetic=True)
                res = abs(t.trace**2 - 4 * t.det) / max(t.trace**2, 4 * t.det)
                worst = max(worst, res)
                ok &= spectral_params(t).regime is Regime.CRITICAL
    return CheckResult("complex-regime endpoints critical", ok and worst <= tol, worst, tol)


def random_psd(n: int, rng: np.random.Generator, lam_max: float = 1.0) -> np.ndarray:
    q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    lam = rng.uniform(0.0, lam_max, n)
    H = (q * lam) @ q.T
    return 0.5 * (H + H.T)


def mode_equivalence_residual(H, x0, inner, h, kind, sched, rounds) -> float:
    """Max per-coordinate deviation between full and eigenbasis simulations.

    Each coordinate's deviation is scaled by that coordinate's largest
    magnitude along the reference trajectory.
    """
    full = simulate_full_quadratic(QuadraticProblem(H, x0), inner, h, kind, sched, rounds)
    lam, U = np.linalg.eigh(H)
    lam = np.clip(lam, 0.0, None)
    spec = Spectrum.from_eigenvalues(inner, lam)
    modes = simulate_modes(spec, h, kind, sched, rounds, x0=U.T @ x0)
    worst = 0.0
    for arr_full, arr_mode in ((full.x, modes.x), (full.m, modes.m)):
        rotated = arr_full @ U
        scale = np.max(np.abs(arr_mode), axis=0)
        scale = np.where(scale > 0, scale, 1.0)
        worst = max(worst, float(np.max(np.abs(rotated - arr_mode) / scale)))
    return worst


def check_mode_equivalence(tol: float = 1e-8, seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for steps in (4, 16):
        H = random_psd(8, rng, lam_max=2.0)
        eta = 1.0 / float(np.linalg.eigvalsh(H).max())
        x0 = rng.standard_normal(8)
        inner = InnerConfig(eta * 0.5, steps)
        for kind in (Kind.HB, Kind.NAG):
            for sched in (NoRestart(), GlobalRestart(5)):
                worst = max(worst, mode_equivalence_residual(H, x0, inner, OuterHyperparams(1.0, 0.9), kind, sched, 50))
    return CheckResult("full quadratic vs mode decomposition", worst <= tol, worst, tol)


def check_restart_composition(chi_fn: ChiFn = chi_recurrence, tol: float = 1e-10) -> CheckResult:
    worst = 0.0
    for s in (0.3, 0.6, 0.95):
        h = OuterHyperparams(1.0, 0.9)
        for K in (3, 5, 8):
            n = 400 // K
            traj = simulate_modes(Spectrum.direct([s]), h, Kind.HB, GlobalRestart(K), n * K)
            chi = chi_fn(transition_hb(s, h), K).chis[K]
            for c in range(1, n + 1):
                ref = chi**c
                got = traj.x[c * K, 0]
                scale = max(abs(ref), abs(transition_hb(s, h).det) ** (c * K / 2))
                worst = max(worst, abs(got - ref) / scale)
    return CheckResult("restart-cycle composition x_{nK} = chi_K^n x_0", worst <= tol, worst, tol)


def run_validation(inject_fault: bool = False) -> List[CheckResult]:
    chi_fn: ChiFn = _faulty_chi if inject_fault else chi_recurrence
    return [
        check_matrix_power(chi_fn),
        check_closed_form(chi_fn),
        check_determinants(),
        check_regime_endpoints(),
        check_mode_equivalence(),
        check_restart_composition(chi_fn),
    ]
