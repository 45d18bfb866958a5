"""Residuals and plot-ready exports."""
import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import expit

from .distributions import phi_star


@dataclass
class ResidualReport:
    y: np.ndarray
    mu: np.ndarray
    phi_star: np.ndarray
    r: np.ndarray

    @property
    def summary(self):
        r = self.r[np.isfinite(self.r)]
        return {"n": int(self.r.size), "mean": float(r.mean()), "sd": float(r.std(ddof=1)) if r.size > 1 else 0.0,
                "max_abs": float(np.abs(r).max())}

    def write_csv(self, path):
        _write(path, ["y", "mu_hat", "phi_star", "residual"],
               [self.y, self.mu, self.phi_star, self.r])


def residuals_from_arrays(y, mu, phi):
    """Standardised residual with the endpoint-adjusted precision."""
    y = np.asarray(y, dtype=float)
    mu = np.asarray(mu, dtype=float)
    ps = phi_star(y, mu, phi)
    r = (y - mu) / np.sqrt(mu * (1.0 - mu) / (ps + 1.0))
    return ResidualReport(y, mu, ps, r)


def _model(fit, data):
    from .likelihoods import make_model
    model = getattr(fit, "model", None)
    if model is not None and (data is None or model.data is data):
        return model
    return make_model(fit.spec, data)


def standardized_residuals(fit, data=None):
    model = _model(fit, data)
    x = fit.estimates
    etas = model.predictors(x)
    return residuals_from_arrays(model.y, expit(etas["b"]), np.exp(etas["d"]))


def export_pred_vs_obs(fit, data=None, path="pred_vs_obs.csv"):
    model = _model(fit, data)
    eta = model.predictors(fit.estimates)["b"]
    is_end = ((model.y == 0.0) | (model.y == 1.0)).astype(int)
    _write(path, ["y", "eta_hat", "mu_hat", "is_endpoint"], [model.y, eta, expit(eta), is_end])
    return Path(path)


def export_mu_theta_scatter(fit, data=None, path="mu_theta.csv"):
    model = _model(fit, data)
    etas = model.predictors(fit.estimates)
    if "a" not in etas:
        raise ValueError("fit has no theta submodel")
    _write(path, ["eta_mu", "eta_theta"], [etas["b"], etas["a"]])
    return Path(path)


def _write(path, header, cols):
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in zip(*cols):
            w.writerow([format(float(v), ".17g") if not isinstance(v, (int, np.integer)) else str(v)
                        for v in row])
