"""Row-wise log-likelihood kernels shared by the ML and MCMC engines.

Every kernel has a numpy implementation (``*_np``) and, when numba is
available, a compiled twin (``*_nb``).  The public names dispatch to the
compiled twin unless ``UNITREG_DISABLE_NUMBA`` is set.

Row classes are coded ``0`` for y == 0, ``1`` for y == 1 and ``2`` for
interior rows.  Mean and mixing-weight linear predictors are on the logit
scale.
"""
import math

import numpy as np
from scipy.special import gammaln

from ._accel import HAVE_NUMBA, njit

CLS_ZERO = 0
CLS_ONE = 1
CLS_INTERIOR = 2


def _expit_pair_np(eta):
    # mu and 1 - mu without cancellation
    mu = 0.5 * (1.0 + np.tanh(0.5 * eta))
    omu = 0.5 * (1.0 - np.tanh(0.5 * eta))
    return mu, omu


def log_expit_np(eta):
    """log(1 / (1 + exp(-eta))) without overflow."""
    return -np.logaddexp(0.0, -eta)


def endpoint_beta_rows_np(cls, logy, log1my, eta, phi):
    """Per-row log density of the endpoint-heterogeneous beta law.

    Interior rows use Beta(mu*phi, (1-mu)*phi); rows at 0 and 1 use the
    phi* precision, which under the logit link reduces to -eta and +eta.
    """
    out = np.empty(eta.shape[0])
    zero = cls == CLS_ZERO
    one = cls == CLS_ONE
    mid = cls == CLS_INTERIOR
    out[zero] = -eta[zero]
    out[one] = eta[one]
    if mid.any():
        mu, omu = _expit_pair_np(eta[mid])
        ph = phi[mid]
        a = mu * ph
        b = omu * ph
        out[mid] = (gammaln(ph) - gammaln(a) - gammaln(b)
                    + (a - 1.0) * logy[mid] + (b - 1.0) * log1my[mid])
    return out


def semimixture_rows_np(cls, eta_theta, zeta_logit, use_zeta):
    """Per-row log mixing weight of the known-membership semimixture."""
    out = np.empty(eta_theta.shape[0])
    mid = cls == CLS_INTERIOR
    out[mid] = log_expit_np(eta_theta[mid])
    end = ~mid
    out[end] = log_expit_np(-eta_theta[end])
    if use_zeta:
        out[cls == CLS_ONE] += log_expit_np(np.array(zeta_logit))
        out[cls == CLS_ZERO] += log_expit_np(-np.array(zeta_logit))
    return out


def segment_sum_np(values, index, n):
    return np.bincount(index, weights=values, minlength=n)


def panel_rows_np(cls, logy, log1my, eta, phi, eta_theta, use_theta, capped, log_u):
    """Per-row log density for the random-intercept panel sampler.

    ``phi`` and ``log_u`` are scalars.  Endpoint rows with ``capped`` set
    contribute ``min(+-eta, log_u)``.  With ``use_theta`` the known-membership
    mixing weight is added.
    """
    out = endpoint_beta_rows_np(cls, logy, log1my, eta, np.full(eta.shape[0], phi))
    end = (cls != CLS_INTERIOR) & capped
    out[end] = np.minimum(out[end], log_u)
    if use_theta:
        mid = cls == CLS_INTERIOR
        out += np.where(mid, log_expit_np(eta_theta), log_expit_np(-eta_theta))
    return out


def _endpoint_beta_rows_loop(cls, logy, log1my, eta, phi):
    n = eta.shape[0]
    out = np.empty(n)
    for i in range(n):
        c = cls[i]
        e = eta[i]
        if c == 0:
            out[i] = -e
        elif c == 1:
            out[i] = e
        else:
            t = math.tanh(0.5 * e)
            mu = 0.5 * (1.0 + t)
            omu = 0.5 * (1.0 - t)
            ph = phi[i]
            a = mu * ph
            b = omu * ph
            if a <= 0.0 or b <= 0.0:
                out[i] = -np.inf
            else:
                out[i] = (math.lgamma(ph) - math.lgamma(a) - math.lgamma(b)
                          + (a - 1.0) * logy[i] + (b - 1.0) * log1my[i])
    return out


def _log_expit_scalar(x):
    if x >= 0.0:
        return -math.log1p(math.exp(-x))
    return x - math.log1p(math.exp(x))


def _semimixture_rows_loop(cls, eta_theta, zeta_logit, use_zeta):
    n = eta_theta.shape[0]
    out = np.empty(n)
    lz1 = 0.0
    lz0 = 0.0
    if use_zeta:
        lz1 = _log_expit_scalar(zeta_logit)
        lz0 = _log_expit_scalar(-zeta_logit)
    for i in range(n):
        c = cls[i]
        if c == 2:
            out[i] = _log_expit_scalar(eta_theta[i])
        elif c == 1:
            out[i] = _log_expit_scalar(-eta_theta[i]) + lz1
        else:
            out[i] = _log_expit_scalar(-eta_theta[i]) + lz0
    return out


def _segment_sum_loop(values, index, n):
    out = np.zeros(n)
    for i in range(values.shape[0]):
        out[index[i]] += values[i]
    return out


def _panel_rows_loop(cls, logy, log1my, eta, phi, eta_theta, use_theta, capped, log_u):
    n = eta.shape[0]
    out = np.empty(n)
    lg_phi = math.lgamma(phi)
    for i in range(n):
        c = cls[i]
        e = eta[i]
        if c == 2:
            t = math.tanh(0.5 * e)
            a = 0.5 * (1.0 + t) * phi
            b = 0.5 * (1.0 - t) * phi
            if a <= 0.0 or b <= 0.0:
                v = -np.inf
            else:
                v = (lg_phi - math.lgamma(a) - math.lgamma(b)
                     + (a - 1.0) * logy[i] + (b - 1.0) * log1my[i])
            if use_theta:
                v += _log_expit_scalar(eta_theta[i])
        else:
            v = e if c == 1 else -e
            if capped[i] and v > log_u:
                v = log_u
            if use_theta:
                v += _log_expit_scalar(-eta_theta[i])
        out[i] = v
    return out


if HAVE_NUMBA:
    _log_expit_scalar = njit(_log_expit_scalar)
    endpoint_beta_rows_nb = njit(_endpoint_beta_rows_loop)
    semimixture_rows_nb = njit(_semimixture_rows_loop)
    segment_sum_nb = njit(_segment_sum_loop)
    panel_rows_nb = njit(_panel_rows_loop)
    endpoint_beta_rows = endpoint_beta_rows_nb
    panel_rows = panel_rows_nb
    semimixture_rows = semimixture_rows_nb
    segment_sum = segment_sum_nb
else:
    endpoint_beta_rows_nb = semimixture_rows_nb = segment_sum_nb = panel_rows_nb = None
    endpoint_beta_rows = endpoint_beta_rows_np
    panel_rows = panel_rows_np
    semimixture_rows = semimixture_rows_np
    segment_sum = segment_sum_np
