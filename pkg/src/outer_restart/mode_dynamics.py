"""Scalar-mode model of a two-phase optimizer.

Each residual eigencoordinate ``x`` is paired with its outer momentum buffer
``m``.  One communication round maps ``(x, m)`` linearly through a 2x2
transition whose entries depend on the effective progress ``sigma`` made by
the inner loop and on the outer hyperparameters ``(nu, beta)``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional, Tuple

__all__ = [
    "Kind",
    "Regime",
    "InnerConfig",
    "OuterHyperparams",
    "ModeState",
    "Transition2x2",
    "SpectralParams",
    "RegimeInterval",
    "DivergenceError",
    "OvershootRegimeError",
    "RegimeError",
    "effective_sigma",
    "check_sigma",
    "transition",
    "transition_hb",
    "transition_nag",
    "step",
    "spectral_params",
    "complex_regime_interval",
    "discriminant_tolerance",
]


class Kind(str, enum.Enum):
    HB = "HB"
    NAG = "NAG"

    @classmethod
    def parse(cls, value) -> "Kind":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).upper())
        except ValueError:
            raise ValueError(f"unknown optimizer kind {value!r}; expected HB or NAG") from None


class Regime(str, enum.Enum):
    COMPLEX = "ComplexConjugate"
    REAL = "RealDistinct"
    CRITICAL = "Critical"


class DivergenceError(ArithmeticError):
    """A state update produced a non-finite value."""


class RegimeError(ValueError):
    """An operation that needs a particular spectral regime got another one."""


class OvershootRegimeError(RegimeError):
    """det(T) <= 0: the NAG step overshoots, ``(1 - beta) * nu * sigma >= 1``."""


@dataclass(frozen=True)
class InnerConfig:
    eta: float
    steps: int

    def __post_init__(self):
        if not (self.eta > 0 and math.isfinite(self.eta)):
            raise ValueError(f"inner step size must be positive and finite, got {self.eta}")
        if int(self.steps) != self.steps or self.steps < 1:
            raise ValueError(f"inner steps per round must be a positive integer, got {self.steps}")


@dataclass(frozen=True)
class OuterHyperparams:
    nu: float
    beta: float

    def __post_init__(self):
        if not (self.nu > 0 and math.isfinite(self.nu)):
            raise ValueError(f"outer learning rate must be positive, got {self.nu}")
        if not (0.0 <= self.beta < 1.0):
            raise ValueError(f"outer momentum must lie in [0, 1), got {self.beta}")


@dataclass(frozen=True)
class ModeState:
    x: float
    m: float = 0.0

    @property
    def finite(self) -> bool:
        return math.isfinite(self.x) and math.isfinite(self.m)


def effective_sigma(inner: InnerConfig, lam: float) -> float:
    """Fraction of a mode's residual removed by one inner phase.

    ``sigma = 1 - (1 - eta * lam) ** S``.  Requires ``lam >= 0`` and
    ``eta * lam <= 1`` up to rounding.
    """
    if lam < 0 or not math.isfinite(lam):
        raise ValueError(f"kernel eigenvalue must be finite and nonnegative, got {lam}")
    contraction = 1.0 - inner.eta * lam
    if contraction < -1e-12:
        raise ValueError(
            f"eta * lambda = {inner.eta * lam} exceeds 1; inner gradient descent does not contract"
        )
    # eta = 1 / lambda_max computed in floating point can land an ulp past 1.
    contraction = max(contraction, 0.0)
    return 1.0 - contraction ** int(inner.steps)


def check_sigma(sigma: float, synthetic: bool = False) -> float:
    """Validate an effective-progress value.

    Values above 1 cannot come from a real inner loop but are useful when
    probing regime boundaries; they are only accepted with ``synthetic=True``.
    """
    if not math.isfinite(sigma) or sigma < 0.0:
        raise ValueError(f"effective progress must be finite and >= 0, got {sigma}")
    if sigma > 1.0 and not synthetic:
        raise ValueError(f"effective progress {sigma} > 1 is only allowed for synthetic boundary analysis")
    return float(sigma)


# Entry formulas are shared with the vectorised simulator so both produce
# bit-identical numbers.
def hb_entries(sigma, nu, beta):
    return (1.0 - nu * (1.0 - beta) * sigma, -nu * beta, (1.0 - beta) * sigma, beta)


def nag_entries(sigma, nu, beta):
    return (
        1.0 - nu * (1.0 - beta * beta) * sigma,
        -nu * beta * beta,
        (1.0 - beta) * sigma,
        beta,
    )


@dataclass(frozen=True)
class Transition2x2:
    a11: float
    a12: float
    a21: float
    a22: float
    kind: Optional[Kind] = None

    @property
    def trace(self) -> float:
        return self.a11 + self.a22

    @property
    def det(self) -> float:
        # Exact products then one rounding; near the overshoot boundary the two
        # terms nearly cancel and the naive difference loses most digits.
        return float(Fraction(self.a11) * Fraction(self.a22) - Fraction(self.a12) * Fraction(self.a21))

    def as_tuple(self) -> Tuple[float, float, float, float]:
        return (self.a11, self.a12, self.a21, self.a22)

    def matmul(self, other: "Transition2x2") -> "Transition2x2":
        return Transition2x2(
            self.a11 * other.a11 + self.a12 * other.a21,
            self.a11 * other.a12 + self.a12 * other.a22,
            self.a21 * other.a11 + self.a22 * other.a21,
            self.a21 * other.a12 + self.a22 * other.a22,
            self.kind,
        )

    @classmethod
    def identity(cls) -> "Transition2x2":
        return cls(1.0, 0.0, 0.0, 1.0)


def transition_hb(sigma: float, h: OuterHyperparams, synthetic: bool = False) -> Transition2x2:
    """Heavy-ball (EMA) outer transition; its determinant is ``beta`` for every sigma."""
    sigma = check_sigma(sigma, synthetic)
    return Transition2x2(*hb_entries(sigma, h.nu, h.beta), kind=Kind.HB)


def transition_nag(sigma: float, h: OuterHyperparams, synthetic: bool = False) -> Transition2x2:
    """Nesterov outer transition; ``det = beta * (1 - (1 - beta) * nu * sigma)``."""
    sigma = check_sigma(sigma, synthetic)
    return Transition2x2(*nag_entries(sigma, h.nu, h.beta), kind=Kind.NAG)


def transition(sigma: float, h: OuterHyperparams, kind, synthetic: bool = False) -> Transition2x2:
    kind = Kind.parse(kind)
    if kind is Kind.HB:
        return transition_hb(sigma, h, synthetic)
    return transition_nag(sigma, h, synthetic)


def step(state: ModeState, t: Transition2x2) -> ModeState:
    """Advance one outer round: ``z' = T z``."""
    if not state.finite:
        raise DivergenceError(f"cannot step from non-finite state {state}")
    new = ModeState(t.a11 * state.x + t.a12 * state.m, t.a21 * state.x + t.a22 * state.m)
    if not new.finite:
        raise DivergenceError(f"outer round produced non-finite state {new}")
    return new


def discriminant_tolerance(trace: float) -> float:
    return 1e-12 * max(1.0, trace * trace)


@dataclass(frozen=True)
class SpectralParams:
    """Eigen-structure of a 2x2 transition.

    In the complex regime the eigenvalues are ``rho * exp(+-i phi)`` and the
    (1,1) entry of ``T**K`` is ``rho**K (cos K phi + C sin K phi)``.  In the
    real and critical regimes only ``eig1``/``eig2`` are meaningful.
    """

    regime: Regime
    trace: float
    det: float
    rho: float
    phi: Optional[float] = None
    C: Optional[float] = None
    theta: Optional[float] = None
    eig1: Optional[float] = None
    eig2: Optional[float] = None

    @property
    def is_complex(self) -> bool:
        return self.regime is Regime.COMPLEX

    @property
    def eigenvalues(self) -> Tuple[complex, complex]:
        if self.is_complex:
            w = self.rho * complex(math.cos(self.phi), math.sin(self.phi))
            return (w, w.conjugate())
        return (complex(self.eig1), complex(self.eig2))


def spectral_params(t: Transition2x2) -> SpectralParams:
    tr, det = t.trace, t.det
    # beta = 0 collapses the outer step to plain GD; det = 0 is legitimate there.
    if det <= 0.0 and not (det == 0.0 and t.a22 == 0.0):
        raise OvershootRegimeError(
            f"transition determinant {det!r} <= 0 (overshoot regime); no envelope/phase decomposition"
        )
    disc = tr * tr - 4.0 * det
    tol = discriminant_tolerance(tr)
    if abs(disc) <= tol:
        half = 0.5 * tr
        return SpectralParams(Regime.CRITICAL, tr, det, rho=math.sqrt(det), eig1=half, eig2=half)
    if disc > 0.0:
        root = math.sqrt(disc)
        # Avoid cancellation: compute the larger-magnitude root first.
        big = 0.5 * (tr + math.copysign(root, tr))
        small = det / big if big != 0.0 else 0.0
        e1, e2 = (big, small) if abs(big) >= abs(small) else (small, big)
        return SpectralParams(Regime.REAL, tr, det, rho=max(abs(e1), abs(e2)), eig1=e1, eig2=e2)
    rho = math.sqrt(det)
    imag2 = math.sqrt(-disc)  # 2 * rho * sin(phi)
    phi = math.atan2(imag2, tr)
    C = (t.a11 - t.a22) / imag2
    return SpectralParams(Regime.COMPLEX, tr, det, rho=rho, phi=phi, C=C, theta=math.atan(C))


@dataclass(frozen=True)
class RegimeInterval:
    lo: float
    hi: float
    degenerate: bool = False

    def contains(self, sigma: float) -> bool:
        return self.lo < sigma < self.hi


def complex_regime_interval(h: OuterHyperparams) -> RegimeInterval:
    """Open sigma-interval on which the HB transition has complex eigenvalues."""
    if h.beta == 0.0:
        v = 1.0 / h.nu
        return RegimeInterval(v, v, degenerate=True)
    s = math.sqrt(h.beta)
    return RegimeInterval((1.0 - s) / (h.nu * (1.0 + s)), (1.0 + s) / (h.nu * (1.0 - s)))
