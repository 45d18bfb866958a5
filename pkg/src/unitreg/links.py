"""Link functions between linear predictors and constrained parameters."""
from enum import Enum

import numpy as np
from scipy.special import expit, logit

from .distributions import DomainError


class LinkKind(str, Enum):
    LOGIT = "logit"
    LOG = "log"
    IDENTITY = "identity"


def apply_inverse(link, eta):
    """Map a linear predictor to the parameter scale."""
    link = LinkKind(link)
    eta = np.asarray(eta, dtype=float)
    if link is LinkKind.LOGIT:
        return expit(eta)
    if link is LinkKind.LOG:
        return np.exp(eta)
    return eta


def apply_forward(link, value):
    """Map a parameter to the linear-predictor scale (the link itself)."""
    link = LinkKind(link)
    value = np.asarray(value, dtype=float)
    if link is LinkKind.LOGIT:
        if np.any((value <= 0.0) | (value >= 1.0)):
            raise DomainError("logit link needs values in (0, 1)")
        return logit(value)
    if link is LinkKind.LOG:
        if np.any(value <= 0.0):
            raise DomainError("log link needs positive values")
        return np.log(value)
    return value


def linear_predictor(coeffs, row):
    """``b0 + sum_j b_j x_j`` for a row (or matrix of rows) including the unity column."""
    coeffs = np.asarray(coeffs, dtype=float)
    row = np.asarray(row, dtype=float)
    if row.shape[-1] != coeffs.shape[0]:
        raise ValueError(f"dimension mismatch: {row.shape[-1]} predictors vs "
                         f"{coeffs.shape[0]} coefficients")
    return row @ coeffs
