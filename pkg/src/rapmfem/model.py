"""Market parameters, derived constants, coordinate transforms and the
closed-form values used for initial data and linear-limit validation.

The pricing model has two phases: a nonlinear one driven by transaction
costs and a risk premium, active up to a switching time t*, and the
classical lognormal phase between t* and expiry.  Everything here is a
pure function of immutable inputs and safe to share across threads.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateSwitch, ExistenceViolation, NonpositiveSpot

_SQRT1_2 = 1.0 / math.sqrt(2.0)
_erf_vec = np.vectorize(math.erf, otypes=[float])


def std_normal_cdf(z):
    """Standard normal CDF, accurate to machine precision via erf.

    Accepts scalars or arrays; returns a float for scalar input.
    """
    z = np.asarray(z, dtype=float)
    out = 0.5 * (1.0 + _erf_vec(z * _SQRT1_2))
    if out.ndim == 0:
        return float(out)
    return out


@dataclass(frozen=True)
class RapmParams:
    """Market and model parameters for a European call.

    r: risk-free rate (1/year), sigma: volatility (1/sqrt(year)),
    strike: K, expiry: T (years), risk_premium: C >= 0, txn_cost: M >= 0.

    Construction enforces the two existence conditions of the nonlinear
    phase: (A) C < sigma^2 * M * T and (B) C * M < pi/8.
    """

    r: float
    sigma: float
    strike: float
    expiry: float
    risk_premium: float
    txn_cost: float

    def __post_init__(self):
        if self.r <= 0:
            raise ValueError("r must be positive")
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if self.strike <= 0:
            raise ValueError("strike must be positive")
        if self.expiry <= 0:
            raise ValueError("expiry must be positive")
        if self.risk_premium < 0:
            raise ValueError("risk_premium must be nonnegative")
        if self.txn_cost < 0:
            raise ValueError("txn_cost must be nonnegative")
        _check_existence(self)


def _check_existence(p):
    bound_a = p.sigma ** 2 * p.txn_cost * p.expiry
    if p.risk_premium >= bound_a:
        raise ExistenceViolation(
            "A",
            f"existence condition A violated: risk_premium = {p.risk_premium} "
            f"must be < sigma^2 * txn_cost * expiry = {bound_a}",
        )
    if p.risk_premium * p.txn_cost >= math.pi / 8.0:
        raise ExistenceViolation(
            "B",
            f"existence condition B violated: risk_premium * txn_cost = "
            f"{p.risk_premium * p.txn_cost} must be < pi/8 = {math.pi / 8.0}",
        )


@dataclass(frozen=True)
class DerivedConstants:
    """Constants derived from RapmParams.

    t_star: last portfolio-adjustment time before expiry.
    tau_star: t_star in the scaled time variable.
    tau_max: scaled time corresponding to valuation date t = 0.
    d_coeff: convection coefficient 2r/sigma^2.
    c_r: strength of the nonlinear volatility enhancement.
    """

    t_star: float
    tau_star: float
    tau_max: float
    d_coeff: float
    c_r: float


@dataclass(frozen=True)
class TruncatedDomain:
    """Symmetric log-moneyness interval [-R, R] used for computation."""

    radius: float

    def __post_init__(self):
        if not (self.radius > 0 and math.isfinite(self.radius)):
            raise ValueError("radius must be positive and finite")

    @property
    def x_left(self):
        return -self.radius

    @property
    def x_right(self):
        return self.radius


def derive_constants(p: RapmParams) -> DerivedConstants:
    """Switching time, scaled-time span and nonlinearity strength.

    t* = T - C/(M sigma^2), tau* = C/(2M), tau_max = sigma^2 T / 2,
    d_coeff = 2r/sigma^2, c_r = 3 * cbrt(C^2 M / (2 pi)).
    """
    _check_existence(p)
    c, m = p.risk_premium, p.txn_cost
    t_star = p.expiry - c / (m * p.sigma ** 2) if c > 0 else p.expiry
    tau_star = c / (2.0 * m) if c > 0 else 0.0
    tau_max = 0.5 * p.sigma ** 2 * p.expiry
    d_coeff = 2.0 * p.r / p.sigma ** 2
    c_r = 3.0 * float(np.cbrt(c * c * m / (2.0 * math.pi)))
    return DerivedConstants(t_star, tau_star, tau_max, d_coeff, c_r)


def to_transformed(S, t, V, p: RapmParams):
    """Map (spot, time, price) to log-moneyness coordinates.

    x = ln(S/K), tau = sigma^2 (T - t) / 2, u = exp(-x) V / K.
    """
    S = np.asarray(S, dtype=float)
    if np.any(S <= 0):
        raise NonpositiveSpot("spot must be positive for the log-moneyness map")
    x = np.log(S / p.strike)
    tau = 0.5 * p.sigma ** 2 * (p.expiry - np.asarray(t, dtype=float))
    u = np.exp(-x) * np.asarray(V, dtype=float) / p.strike
    if x.ndim == 0:
        return float(x), float(tau), float(u)
    return x, tau, u


def from_transformed(x, tau, u, p: RapmParams):
    """Inverse of to_transformed: S = K e^x, t = T - 2 tau / sigma^2, V = K e^x u."""
    x = np.asarray(x, dtype=float)
    S = p.strike * np.exp(x)
    t = p.expiry - 2.0 * np.asarray(tau, dtype=float) / p.sigma ** 2
    V = p.strike * np.exp(x) * np.asarray(u, dtype=float)
    if x.ndim == 0:
        return float(S), float(t), float(V)
    return S, t, V


def switching_profile(x, p: RapmParams):
    """Scaled call value at the switching time, the initial data of the
    nonlinear phase: u = Phi(d1) - exp(-(D tau* + x)) Phi(d2) with
    d1 = (x + (D+1) tau*) / sqrt(2 tau*) and d2 = d1 - sqrt(2 tau*).
    """
    dc = derive_constants(p)
    if dc.tau_star <= 0:
        raise DegenerateSwitch(
            "tau* = 0 (zero risk premium); use transformed_payoff instead"
        )
    x = np.asarray(x, dtype=float)
    root = math.sqrt(2.0 * dc.tau_star)
    d1 = (x + (dc.d_coeff + 1.0) * dc.tau_star) / root
    d2 = d1 - root
    u = std_normal_cdf(d1) - np.exp(-(dc.d_coeff * dc.tau_star + x)) * std_normal_cdf(d2)
    if u.ndim == 0:
        return float(u)
    return u


def transformed_payoff(x, tau, d_coeff):
    """Call payoff in scaled variables, max(1 - exp(-D tau - x), 0).

    At tau = 0 this is exp(-x) * max(e^x - 1, 0); for tau > 0 it matches
    the far-field behavior used on the right boundary.
    """
    x = np.asarray(x, dtype=float)
    u = np.maximum(1.0 - np.exp(-d_coeff * tau - x), 0.0)
    if u.ndim == 0:
        return float(u)
    return u


def bs_call_price(S, t, p: RapmParams):
    """Classical lognormal call value; at t = expiry returns the payoff."""
    S = np.asarray(S, dtype=float)
    ttm = p.expiry - t
    if ttm <= 0:
        out = np.maximum(S - p.strike, 0.0)
        return float(out) if out.ndim == 0 else out
    vol = p.sigma * math.sqrt(ttm)
    with np.errstate(divide="ignore"):
        d1 = (np.log(S / p.strike) + (p.r + 0.5 * p.sigma ** 2) * ttm) / vol
    d2 = d1 - vol
    disc = math.exp(-p.r * ttm)
    out = np.where(
        S > 0,
        S * std_normal_cdf(d1) - p.strike * disc * std_normal_cdf(d2),
        0.0,
    )
    if out.ndim == 0:
        return float(out)
    return out
