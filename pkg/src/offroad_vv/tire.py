"""Two-piece cubic tire friction curve.

Segment 0 runs from the origin anchor to the extremum, segment 1 from the
extremum to the asymptote. Each segment is a cubic Hermite interpolant:

* ``f0(S0) = F0``, ``f0'(S0) = initial_slope``, ``f0(Se) = Fe``, ``f0'(Se) = 0``
* ``f1(Se) = Fe``, ``f1'(Se) = 0``, ``f1(Sa) = Fa``, ``f1'(Sa) = 0``

Evaluation stays in normalised Hermite form so that anchor values are hit
bit-exactly; :attr:`FrictionSpline.segment_coeffs` expands the same cubics into
global monomial coefficients ``a*S**3 + b*S**2 + c*S + d``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import ConfigurationError


@dataclass(frozen=True)
class FrictionSpline:
    origin: tuple[float, float] = (0.0, 0.0)
    extremum: tuple[float, float] = (0.1, 1.0)
    asymptote: tuple[float, float] = (1.0, 0.75)
    initial_slope: float | None = None

    def __post_init__(self):
        s0, f0 = self.origin
        se, fe = self.extremum
        sa, fa = self.asymptote
        if not (s0 < se < sa):
            raise ConfigurationError(f"spline slips must satisfy S0 < Se < Sa, got {s0}, {se}, {sa}")
        if fe < fa:
            raise ConfigurationError(f"extremum force {fe} below asymptote force {fa}")
        if self.initial_slope is None:
            object.__setattr__(self, "initial_slope", 1.5 * (fe - f0) / (se - s0))

    def _segment(self, k: int):
        if k == 0:
            (s_lo, f_lo), (s_hi, f_hi) = self.origin, self.extremum
            m_lo = self.initial_slope
        else:
            (s_lo, f_lo), (s_hi, f_hi) = self.extremum, self.asymptote
            m_lo = 0.0
        return s_lo, s_hi, f_lo, f_hi, m_lo, 0.0

    def _hermite(self, k: int, s: float) -> tuple[float, float]:
        s_lo, s_hi, p0, p1, m0, m1 = self._segment(k)
        h = s_hi - s_lo
        t = (s - s_lo) / h
        t2 = t * t
        t3 = t2 * t
        value = (
            (2 * t3 - 3 * t2 + 1) * p0
            + (t3 - 2 * t2 + t) * h * m0
            + (-2 * t3 + 3 * t2) * p1
            + (t3 - t2) * h * m1
        )
        deriv = (
            (6 * t2 - 6 * t) * p0
            + (3 * t2 - 4 * t + 1) * h * m0
            + (-6 * t2 + 6 * t) * p1
            + (3 * t2 - 2 * t) * h * m1
        ) / h
        return value, deriv

    def segment(self, k: int, s: float) -> float:
        """Evaluate cubic ``f_k`` at ``s`` (no range clamping)."""
        return self._hermite(k, s)[0]

    def segment_derivative(self, k: int, s: float) -> float:
        return self._hermite(k, s)[1]

    def __call__(self, slip: float) -> float:
        return self.evaluate(slip)[0]

    def evaluate(self, slip: float) -> tuple[float, float]:
        """Friction coefficient and its slope d(mu)/dS at a signed slip value."""
        sign = -1.0 if slip < 0 else 1.0
        s = abs(slip)
        s0, f0 = self.origin
        if s <= s0:
            return sign * f0, 0.0
        if s < self.extremum[0]:
            v, d = self._hermite(0, s)
        elif s < self.asymptote[0]:
            v, d = self._hermite(1, s)
        else:
            return sign * self.asymptote[1], 0.0
        return sign * v, d

    @property
    def segment_coeffs(self) -> tuple[tuple[float, float, float, float], ...]:
        """Global monomial coefficients ``(a_k, b_k, c_k, d_k)`` for both segments."""
        out = []
        for k in (0, 1):
            s_lo, s_hi, p0, p1, m0, m1 = self._segment(k)
            h = s_hi - s_lo
            # cubic in local u = S - s_lo
            c3 = (2 * p0 - 2 * p1) / h**3 + (m0 + m1) / h**2
            c2 = (-3 * p0 + 3 * p1) / h**2 - (2 * m0 + m1) / h
            c1 = m0
            c0 = p0
            # shift u = S - s_lo back to S
            a = c3
            b = c2 - 3 * c3 * s_lo
            c = c1 - 2 * c2 * s_lo + 3 * c3 * s_lo**2
            d = c0 - c1 * s_lo + c2 * s_lo**2 - c3 * s_lo**3
            out.append((a, b, c, d))
        return tuple(out)


def tire_force(slip: float, spline: FrictionSpline, normal_load: float) -> float:
    """Tire force [N] for a signed slip, saturating at the asymptote beyond ``Sa``."""
    if normal_load < 0:
        raise ValueError("normal load must be non-negative")
    if not math.isfinite(slip):
        raise ValueError("slip must be finite")
    return spline(slip) * normal_load
