"""Closed-form approximations for first-passage probabilities.

Inverse Gaussian and ladder-excess distributions, one-term Edgeworth
expansions, the zero-drift bridge and joint formulas, the drift-corrected
joint formula, Lorden's overshoot bound and Wald-identity residuals.

Probability outputs are clamped to [0, 1]; pass ``clamp=False`` to see raw
asymptotic values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.stats import norm


@dataclass(frozen=True)
class ZeroDriftParams:
    """Inputs of the zero-drift formulas: standardized level b, conditioning
    point s (bridge) or cutoff c (joint), horizon m, ladder constants."""
    b: float
    s_or_c: float
    m: float
    rho_plus: float = 0.0
    kappa: float = 0.0

    def __post_init__(self):
        if self.m <= 0:
            raise ValueError(f"m must be > 0, got {self.m}")
        if self.b < 0:
            raise ValueError(f"b must be >= 0, got {self.b}")
        if self.rho_plus < 0:
            raise ValueError(f"rho_plus must be >= 0, got {self.rho_plus}")


@dataclass(frozen=True)
class CorrectedParams:
    """Inputs of the drift-corrected joint formula."""
    b: float
    c: float
    m: float
    delta_gap: float
    rho_plus: float = 0.0
    kappa: float = 0.0
    r_factor: float = 1.0
    j: int = 0

    def __post_init__(self):
        if self.c > self.b:
            raise ValueError(f"c must be <= b, got c={self.c}, b={self.b}")
        if self.delta_gap < 0:
            raise ValueError(f"delta_gap must be >= 0, got {self.delta_gap}")
        if self.r_factor <= 0:
            raise ValueError(f"r_factor must be > 0, got {self.r_factor}")
        if self.j not in (0, 1):
            raise ValueError(f"j must be 0 or 1, got {self.j}")


def _clamp(p: float, clamp: bool) -> float:
    return min(max(p, 0.0), 1.0) if clamp else p


def inverse_gaussian_cdf(t: float, mu: float, b: float) -> float:
    """P{Brownian motion with drift mu crosses level b by time t}.

    Standard closed form 1 - Phi((b - mu t)/sqrt(t)) + e^{2 mu b} Phi((-b - mu t)/sqrt(t)).
    """
    if b <= 0:
        raise ValueError(f"b must be > 0, got {b}")
    if t < 0:
        raise ValueError(f"t must be >= 0, got {t}")
    if t == 0:
        return 0.0
    if math.isinf(t):
        return 1.0 if mu >= 0 else min(math.exp(2 * mu * b), 1.0)
    rt = math.sqrt(t)
    # log-space second term avoids overflow of e^{2 mu b} for large mu b
    second = math.exp(2 * mu * b + norm.logcdf((-b - mu * t) / rt))
    p = norm.sf((b - mu * t) / rt) + second
    return min(max(p, 0.0), 1.0)


def _law_expected_min(law, s: float):
    """(E min(s, X), E X) for the positive-support parametric families, or
    None when ``law`` is not such a law."""
    from .laws import PointMass, ShiftedExponential, TwoPoint
    if isinstance(law, PointMass):
        if law.value <= 0:
            raise ValueError("ladder law must have positive support")
        return min(s, law.value), law.value
    if isinstance(law, ShiftedExponential):
        if law.shift < 0:
            raise ValueError("ladder law must have positive support")
        if s <= law.shift:
            num = s
        else:
            num = law.shift + (1.0 - math.exp(-law.rate * (s - law.shift))) / law.rate
        return num, law.shift + 1.0 / law.rate
    if isinstance(law, TwoPoint):
        if min(law.v1, law.v2) <= 0:
            raise ValueError("ladder law must have positive support")
        num = law.p1 * min(s, law.v1) + (1 - law.p1) * min(s, law.v2)
        return num, law.moment(1)
    return None


def ladder_excess_cdf(ladder, s: float) -> float:
    """Stationary-excess (integrated tail) CDF of the ladder height at s.

    ``ladder`` is one of: a parametric law from :mod:`ruinwalk.laws` with
    positive support, an array-like of positive ladder-height samples, or an
    object with a ``samples_s`` attribute holding them.  In every case
    H(s) = E min(s, X) / E X; the empirical version is exact (piecewise
    linear in s).
    """
    if s < 0:
        raise ValueError(f"s must be >= 0, got {s}")
    closed = _law_expected_min(ladder, s)
    if closed is not None:
        num, mean = closed
        if mean <= 0:
            raise ValueError("ladder law must have positive mean")
        return float(num / mean)
    x = getattr(ladder, "samples_s", ladder)
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        raise ValueError("empty ladder sample set")
    total = x.sum()
    if total <= 0:
        raise ValueError("ladder heights must have positive mean")
    return float(np.minimum(s, x).sum() / total)


def edgeworth_cdf(s: float, n: int, kappa: float, kappa_nu: float = 0.0,
                  clamp: bool = True) -> float:
    """One-term Edgeworth CDF correction:
    Phi(s) + phi(s) [ (kappa/6)(1 - s^2) + kappa_nu ] / sqrt(n)."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    q1 = (kappa / 6.0) * (1.0 - s * s) + kappa_nu
    return _clamp(norm.cdf(s) + norm.pdf(s) * q1 / math.sqrt(n), clamp)


def edgeworth_density(s: float, n: int, kappa: float) -> float:
    """One-term Edgeworth density: phi(s) (1 + kappa (s^3 - 3 s)/(6 sqrt(n))),
    floored at zero."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    val = norm.pdf(s) * (1.0 + kappa * (s ** 3 - 3.0 * s) / (6.0 * math.sqrt(n)))
    return max(val, 0.0)


def bridge_crossing_approx(params: ZeroDriftParams, clamp: bool = True) -> float:
    """Conditional crossing probability given S_m = s for the zero-drift walk:
    exp{-2 (b + rho)(b + rho - s - kappa/3) / (m + kappa s / 3)}."""
    b, s, m = params.b, params.s_or_c, params.m
    rho, kappa = params.rho_plus, params.kappa
    if s >= b:
        raise ValueError(f"bridge formula needs s < b, got s={s}, b={b}")
    m_eff = m + kappa * s / 3.0
    if m_eff <= 0:
        raise ValueError(f"effective horizon m + kappa*s/3 = {m_eff:g} <= 0")
    e = -2.0 * (b + rho) * (b + rho - s - kappa / 3.0) / m_eff
    return _clamp(math.exp(min(e, 0.0) if clamp else e), clamp)


def joint_ruin_approx(params: ZeroDriftParams, clamp: bool = True) -> float:
    """P{tau < m, S_m < c} for the zero-drift walk:
    Phi((c + kappa/3 - 2(b + rho)) / sqrt(m + kappa c / 3))."""
    b, c, m = params.b, params.s_or_c, params.m
    rho, kappa = params.rho_plus, params.kappa
    if c > b:
        raise ValueError(f"joint formula needs c <= b, got c={c}, b={b}")
    m_eff = m + kappa * c / 3.0
    if m_eff <= 0:
        raise ValueError(f"effective horizon m + kappa*c/3 = {m_eff:g} <= 0")
    return _clamp(norm.cdf((c + kappa / 3.0 - 2.0 * (b + rho)) / math.sqrt(m_eff)),
                  clamp)


def corrected_joint_approx(params: CorrectedParams, clamp: bool = True) -> float:
    """Drift-corrected joint probability under the tilted start j:
    r_factor * exp[-(-1)^j Delta (b + rho)]
             * Phi( (c + kappa/3 - 2(b + rho)) / sqrt(m_eff)
                    + (-1)^j Delta sqrt(m_eff) / 2 )."""
    b, c, m, j = params.b, params.c, params.m, params.j
    rho, kappa, delta = params.rho_plus, params.kappa, params.delta_gap
    sgn = -1.0 if j == 1 else 1.0      # (-1)^j
    m_eff = m + kappa * c / 3.0
    if m_eff <= 0:
        raise ValueError(f"effective horizon m + kappa*c/3 = {m_eff:g} <= 0")
    root = math.sqrt(m_eff)
    arg = (c + kappa / 3.0 - 2.0 * (b + rho)) / root + 0.5 * sgn * delta * root
    val = params.r_factor * math.exp(-sgn * delta * (b + rho)) * norm.cdf(arg)
    return _clamp(val, clamp)


def lorden_bound(e_xi_plus_sq: float, e_xi: float) -> float:
    """Upper bound E (xi^+)^2 / E xi for the stationary mean overshoot,
    uniform in the level b."""
    if e_xi <= 0:
        raise ValueError(f"mean increment must be > 0, got {e_xi}")
    if e_xi_plus_sq < 0:
        raise ValueError(f"E (xi^+)^2 must be >= 0, got {e_xi_plus_sq}")
    return e_xi_plus_sq / e_xi


@dataclass(frozen=True)
class WaldResidual:
    residual: float
    std_error: float
    n: int


def wald_residual(mu: float, delta: Optional[np.ndarray],
                  s_values: Sequence[float], t_values: Sequence[int],
                  x_start, x_stop) -> WaldResidual:
    """Sample mean of S_T - mu T + Delta(X_T) - Delta(X_0) over stopped
    records; near zero when the first Wald identity holds.

    ``delta`` is the Poisson-equation solution of (I - P) Delta = f - mu
    (the :func:`ruinwalk.solve_poisson` output), under which
    S_n - n mu + Delta(X_n) is the martingale being stopped.  Pass None for
    single-state walks (Delta identically zero).  ``x_start``/``x_stop`` are
    the per-record initial and stopping states.
    """
    s = np.asarray(s_values, dtype=float)
    t = np.asarray(t_values, dtype=float)
    if s.shape != t.shape or s.size == 0:
        raise ValueError("s_values and t_values must be equal-length, nonempty")
    if delta is None:
        corr = np.zeros_like(s)
    else:
        delta = np.asarray(delta, dtype=float)
        x0 = np.asarray(x_start, dtype=np.int64)
        xT = np.asarray(x_stop, dtype=np.int64)
        if (x0 < 0).any() or (x0 >= delta.size).any() \
                or (xT < 0).any() or (xT >= delta.size).any():
            raise ValueError("stopped state outside the index set of delta")
        corr = delta[xT] - delta[x0]
    vals = s - mu * t + corr
    resid = float(vals.mean())
    se = float(vals.std(ddof=1) / math.sqrt(vals.size)) if vals.size > 1 else 0.0
    return WaldResidual(residual=resid, std_error=se, n=int(vals.size))
