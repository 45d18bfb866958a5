"""Densities, moments and samplers for the tilting-power / beta family.

All functions accept scalars or numpy arrays and broadcast.  Densities are
evaluated in log space and exponentiated at the end.
"""
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import gammaln, xlog1py, xlogy


class DomainError(ValueError):
    """Raised when an argument lies outside a function's domain."""


@dataclass(frozen=True)
class TiltingPowerParams:
    nu: float

    def __post_init__(self):
        if not np.isfinite(self.nu):
            raise DomainError("nu must be finite")


@dataclass(frozen=True)
class BetaParamsAlt:
    """Beta law in mean/precision form."""

    mu: float
    phi: float

    def __post_init__(self):
        if not 0.0 < self.mu < 1.0:
            raise DomainError(f"mu must lie in (0, 1), got {self.mu}")
        if not self.phi > 0.0:
            raise DomainError(f"phi must be positive, got {self.phi}")

    @property
    def alpha(self):
        return self.mu * self.phi

    @property
    def beta(self):
        return (1.0 - self.mu) * self.phi

    @classmethod
    def from_shapes(cls, alpha, beta):
        return cls(alpha / (alpha + beta), alpha + beta)


@dataclass(frozen=True)
class MixtureParams:
    beta: BetaParamsAlt
    tilt: TiltingPowerParams
    theta: float
    zeta: Optional[float] = None

    def __post_init__(self):
        if not 0.0 < self.theta < 1.0:
            raise DomainError(f"theta must lie in (0, 1), got {self.theta}")
        if self.zeta is not None and not 0.0 < self.zeta < 1.0:
            raise DomainError(f"zeta must lie in (0, 1), got {self.zeta}")


def _check_unit(y, closed=True):
    y = np.asarray(y, dtype=float)
    ok = (y >= 0.0) & (y <= 1.0) if closed else (y > 0.0) & (y < 1.0)
    if not np.all(ok):
        raise DomainError("y outside the unit interval")
    return y


def _check_nu(nu):
    nu = np.asarray(nu, dtype=float)
    if not np.all(np.isfinite(nu)):
        raise DomainError("nu must be finite")
    return nu


def _heaviside(nu):
    # 1(0) = 1
    return np.where(nu >= 0.0, 1.0, 0.0)


def tilting_power_logpdf(y, nu):
    y = _check_unit(y)
    nu = _check_nu(nu)
    k = np.abs(nu)
    # branch by the sign of nu; the two formulas differ at y = 1(nu)
    first = np.broadcast_to(_heaviside(nu) == 1.0, np.broadcast(y, nu).shape)
    base = np.where(first, xlogy(k, y), xlog1py(k, -y))
    return np.log1p(k) + base


def tilting_power_pdf(y, nu):
    """Density ``(|nu|+1) y^|nu|`` for nu >= 0 and ``(|nu|+1) (1-y)^|nu|`` otherwise."""
    return np.exp(tilting_power_logpdf(y, nu))


def tilting_power_mean(nu):
    nu = _check_nu(nu)
    return (nu * _heaviside(nu) + 1.0) / (np.abs(nu) + 2.0)


def tilting_power_var(nu):
    nu = _check_nu(nu)
    k = np.abs(nu)
    return (k + 1.0) / ((k + 3.0) * (k + 2.0) ** 2)


def nu_from_mean(mu_t):
    """Invert :func:`tilting_power_mean`.

    Uses ``(2 mu - 1) / (1/2 - |mu - 1/2|)``, the algebraic inverse of the
    mean formula on both sides of 1/2.
    """
    mu_t = np.asarray(mu_t, dtype=float)
    if not np.all((mu_t > 0.0) & (mu_t < 1.0)):
        raise DomainError("mu_T must lie in the open interval (0, 1)")
    return (2.0 * mu_t - 1.0) / (0.5 - np.abs(mu_t - 0.5))


def nu_from_logit(eta):
    """``nu_from_mean(expit(eta))`` computed without forming the mean.

    Equals ``exp(eta) - 1`` for eta >= 0 and ``1 - exp(-eta)`` otherwise,
    so ``log(|nu| + 1) == |eta|``.
    """
    eta = np.asarray(eta, dtype=float)
    return np.sign(eta) * np.expm1(np.abs(eta))


def beta_logpdf_alt(y, mu, phi, endpoint_indicators=False):
    y = np.asarray(y, dtype=float)
    mu = np.asarray(mu, dtype=float)
    phi = np.asarray(phi, dtype=float)
    if np.any((mu <= 0.0) | (mu >= 1.0)) or np.any(phi <= 0.0):
        raise DomainError("beta parameters require 0 < mu < 1 and phi > 0")
    _check_unit(y)
    a = mu * phi
    b = (1.0 - mu) * phi
    ya = np.where(endpoint_indicators, (y == 0.0).astype(float), 0.0)
    yb = np.where(endpoint_indicators, (y == 1.0).astype(float), 0.0)
    ea = a - 1.0 + ya
    eb = b - 1.0 + yb
    # phi* makes the endpoint exponent exactly zero in theory; absorb roundoff
    ea = np.where((y == 0.0) & (np.abs(ea) < 1e-12), 0.0, ea)
    eb = np.where((y == 1.0) & (np.abs(eb) < 1e-12), 0.0, eb)
    with np.errstate(divide="ignore", invalid="ignore"):
        val = (gammaln(phi) - gammaln(a) - gammaln(b)
               + xlogy(ea, y) + xlog1py(eb, -y))
    return val


def beta_pdf_alt(y, p, endpoint_indicators=False):
    """Beta density in (mu, phi) form.

    With ``endpoint_indicators`` the exponents are raised by one at the
    matching endpoint so the density is exactly zero at y = 0 and y = 1.
    Without them, endpoints are evaluated with the convention 0**0 = 1.
    """
    if not endpoint_indicators:
        y = _check_unit(y)
    return np.exp(beta_logpdf_alt(y, p.mu, p.phi, endpoint_indicators))


def mixture_pdf(y, p):
    """Tilting-power / beta mixture density.

    The beta component carries endpoint indicators, so endpoint mass comes
    from the tilting component alone.  With ``zeta`` the endpoint weight
    ``1 - theta`` is split as ``(1-theta)(1-zeta)`` at 0 and
    ``(1-theta) zeta`` at 1.
    """
    y = _check_unit(y)
    f1 = tilting_power_pdf(y, p.tilt.nu)
    f2 = beta_pdf_alt(y, p.beta, endpoint_indicators=True)
    w1 = np.full(np.shape(y), 1.0 - p.theta)
    if p.zeta is not None:
        w1 = np.where(y == 0.0, w1 * (1.0 - p.zeta), w1)
        w1 = np.where(y == 1.0, w1 * p.zeta, w1)
    return w1 * f1 + p.theta * f2


def mixture_mean(p):
    return (1.0 - p.theta) * tilting_power_mean(p.tilt.nu) + p.theta * p.beta.mu


def _check_mu(mu):
    mu = np.asarray(mu, dtype=float)
    if not np.all((mu > 0.0) & (mu < 1.0)):
        raise DomainError("mu must lie in the open interval (0, 1)")
    return mu


def power_pdf(y, mu):
    """Beta(mu/(1-mu), 1) density; finite and non-zero at y = 1."""
    mu = _check_mu(mu)
    y = _check_unit(y)
    k = mu / (1.0 - mu)
    with np.errstate(divide="ignore"):
        return k * np.exp(xlogy(k - 1.0, y))


def reflected_power_pdf(y, mu):
    """Beta(1, (1-mu)/mu) density; finite and non-zero at y = 0."""
    mu = _check_mu(mu)
    y = _check_unit(y)
    k = (1.0 - mu) / mu
    with np.errstate(divide="ignore"):
        return k * np.exp(xlog1py(k - 1.0, -y))


def phi_star(y, mu, phi):
    """Endpoint-dependent precision: phi inside, 1/mu at 0, 1/(1-mu) at 1."""
    y = np.asarray(y, dtype=float)
    mu = np.asarray(mu, dtype=float)
    phi = np.asarray(phi, dtype=float)
    out = np.where(y == 0.0, 1.0 / mu, phi)
    return np.where(y == 1.0, 1.0 / (1.0 - mu), out)


def tilting_power_cdf(y, nu):
    y = _check_unit(y)
    nu = _check_nu(nu)
    k = np.abs(nu) + 1.0
    return np.where(nu >= 0.0, y ** k, 1.0 - (1.0 - y) ** k)


def tilting_power_sample(nu, u):
    """Inverse-CDF draw from the tilting power law for uniform deviate ``u``."""
    nu = _check_nu(nu)
    u = np.asarray(u, dtype=float)
    k = np.abs(nu) + 1.0
    return np.where(nu >= 0.0, u ** (1.0 / k), 1.0 - (1.0 - u) ** (1.0 / k))
