"""Maximum-likelihood fitting, standard errors and classical tests."""
import hashlib
import logging
import re
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import stats
from scipy.special import logit

from .data_io import DataError, detect_separation
from .likelihoods import ModelSpec, make_model

log = logging.getLogger(__name__)

# |eta| beyond this on a logit scale puts the mean within 2e-9 of a boundary
UNBOUNDED_ETA = 20.0


class ConvergenceError(RuntimeError):
    pass


class ConvergenceWarning(UserWarning):
    pass


@dataclass
class FitOptions:
    max_iter: int = 500
    gtol: float = 1e-6
    ftol: float = 1e-10
    gradient: str = "analytic"  # or "numeric"
    polish: bool = True
    start: Optional[np.ndarray] = None
    two_stage: bool = True


@dataclass
class OptimResult:
    x: np.ndarray
    fun: float
    grad: np.ndarray
    iterations: int
    converged: bool
    message: str
    last_step: float = 0.0


def numeric_gradient(f, x, h=1e-6):
    """Central-difference gradient with step ``h * max(1, |x_i|)``."""
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for i in range(len(x)):
        hi = h * max(1.0, abs(x[i]))
        e = np.zeros_like(x)
        e[i] = hi
        g[i] = (f(x + e) - f(x - e)) / (2.0 * hi)
    return g


def observed_information(loglik_fn, params):
    """Negative Hessian by central differences of the log-likelihood."""
    x = np.asarray(params, dtype=float)
    p = len(x)
    h = np.maximum(1e-5, 1e-5 * np.abs(x))
    f0 = loglik_fn(x)
    H = np.empty((p, p))
    for i in range(p):
        ei = np.zeros(p)
        ei[i] = h[i]
        H[i, i] = (loglik_fn(x + ei) - 2.0 * f0 + loglik_fn(x - ei)) / h[i] ** 2
        for j in range(i + 1, p):
            ej = np.zeros(p)
            ej[j] = h[j]
            H[i, j] = H[j, i] = (loglik_fn(x + ei + ej) - loglik_fn(x + ei - ej)
                                 - loglik_fn(x - ei + ej) + loglik_fn(x - ei - ej)) / (4 * h[i] * h[j])
    return -H


def covariance_from_information(info, names=None):
    """Invert an information matrix, naming the parameters if it is singular."""
    try:
        L = np.linalg.cholesky(info)
    except np.linalg.LinAlgError:
        w, v = np.linalg.eigh(info)
        bad = np.flatnonzero(np.abs(v[:, np.argmin(w)]) > 0.3)
        who = [names[i] for i in bad] if names is not None else bad.tolist()
        raise np.linalg.LinAlgError(f"information matrix is not positive definite; "
                                    f"offending parameters: {who}") from None
    Linv = np.linalg.inv(L)
    return Linv.T @ Linv


def maximize(f, grad, x0, hess=None, max_iter=500, gtol=1e-6, ftol=1e-10, max_step=10.0):
    """BFGS ascent with Armijo backtracking.

    Stops when the gradient max-norm drops below ``gtol`` or the relative
    change in ``f`` falls below ``ftol``.  Non-finite function values are
    treated as infeasible and trigger backtracking.
    """
    x = np.array(x0, dtype=float)
    fx = f(x)
    if not np.isfinite(fx):
        raise ConvergenceError("log-likelihood is not finite at the starting values")
    g = grad(x)
    n = len(x)
    Hinv = _initial_inverse(hess, x, g, n)
    step_len = 0.0
    for it in range(1, max_iter + 1):
        if np.max(np.abs(g)) < gtol:
            return OptimResult(x, fx, g, it - 1, True, "gradient tolerance reached", step_len)
        p = Hinv @ g
        slope = g @ p
        if not slope > 0:
            Hinv = np.eye(n) / max(1.0, np.max(np.abs(g)))
            p = Hinv @ g
            slope = g @ p
        norm = np.max(np.abs(p))
        if norm > max_step:
            p *= max_step / norm
            slope = g @ p
        t = 1.0
        for _ in range(60):
            x_new = x + t * p
            f_new = f(x_new)
            if np.isfinite(f_new) and f_new >= fx + 1e-4 * t * slope:
                break
            t *= 0.5
        else:
            return OptimResult(x, fx, g, it, False, "line search failed", step_len)
        g_new = grad(x_new)
        s = x_new - x
        yv = g - g_new  # gradient change of the minimised function -f
        step_len = float(np.max(np.abs(s)))
        rel = abs(f_new - fx) / max(1.0, abs(fx))
        x, fx, g = x_new, f_new, g_new
        if rel < ftol:
            return OptimResult(x, fx, g, it, True, "relative log-likelihood change below tolerance",
                               step_len)
        sy = s @ yv
        if sy > 1e-12 * np.sqrt((s @ s) * (yv @ yv)):
            rho = 1.0 / sy
            I = np.eye(n)
            Hinv = (I - rho * np.outer(s, yv)) @ Hinv @ (I - rho * np.outer(yv, s)) + rho * np.outer(s, s)
    return OptimResult(x, fx, g, max_iter, False, "did not converge within iteration cap", step_len)


def _initial_inverse(hess, x, g, n):
    if hess is not None:
        H = -hess(x)
        if np.all(np.isfinite(H)):
            try:
                return covariance_from_information(H)
            except np.linalg.LinAlgError:
                pass
    return np.eye(n) / max(1.0, np.max(np.abs(g)))


def newton_polish(f, grad, hess, x, max_iter=25):
    """Newton steps from a near-optimum while the Hessian is negative definite."""
    fx = f(x)
    g = grad(x)
    for _ in range(max_iter):
        H = hess(x)
        try:
            L = np.linalg.cholesky(-H)
        except np.linalg.LinAlgError:
            break
        step = np.linalg.solve(L.T, np.linalg.solve(L, g))
        t = 1.0
        while t > 1e-4:
            x_new = x + t * step
            f_new = f(x_new)
            if np.isfinite(f_new) and f_new >= fx - 1e-12 * max(1.0, abs(fx)):
                break
            t *= 0.5
        else:
            break
        g_new = grad(x_new)
        done = np.max(np.abs(step * t)) < 1e-13 * max(1.0, np.max(np.abs(x)))
        if np.max(np.abs(g_new)) > np.max(np.abs(g)) and f_new <= fx:
            break
        x, fx, g = x_new, f_new, g_new
        if done or np.max(np.abs(g)) < 1e-11 * max(1.0, abs(fx)):
            break
    return x, fx, g


@dataclass
class FitResult:
    spec: ModelSpec
    names: tuple
    labels: tuple
    estimates: np.ndarray
    se: np.ndarray
    z: np.ndarray
    cov: Optional[np.ndarray]
    loglik: float
    aic: float
    k: int
    N: int
    converged: bool
    grad_norm: float
    iterations: int
    message: str
    hessian_pd: bool
    theorem3: Optional[object] = None
    unbounded: list = field(default_factory=list)
    separation: Optional[object] = None
    data_key: str = ""
    model: Optional[object] = field(default=None, repr=False)
    stage1: Optional["FitResult"] = field(default=None, repr=False)

    def param(self, name):
        return self.estimates[self.names.index(name)]

    def as_dict(self):
        rows = []
        for i, name in enumerate(self.names):
            rows.append({"name": name, "label": self.labels[i],
                         "estimate": float(self.estimates[i]),
                         "se": _f(self.se[i]), "z": _f(self.z[i])})
        out = {
            "model": self.spec.as_dict(),
            "N": self.N,
            "parameters": rows,
            "loglik": self.loglik, "aic": self.aic, "k": self.k,
            "converged": self.converged, "grad_norm": self.grad_norm,
            "iterations": self.iterations, "message": self.message,
            "hessian_pd": self.hessian_pd,
            "unbounded": self.unbounded,
            "cov": None if self.cov is None else self.cov.tolist(),
            "data_key": self.data_key,
        }
        if self.theorem3 is not None:
            out["theorem3"] = self.theorem3.as_dict()
        if self.separation is not None:
            out["separation"] = {k: v.as_dict() for k, v in self.separation.items()}
        return out

    @classmethod
    def from_dict(cls, d):
        """Rebuild the summary fields of a fit from :meth:`as_dict` output."""
        names = tuple(r["name"] for r in d["parameters"])
        est = np.array([r["estimate"] for r in d["parameters"]])
        se = np.array([np.nan if r["se"] is None else r["se"] for r in d["parameters"]])
        z = np.array([np.nan if r["z"] is None else r["z"] for r in d["parameters"]])
        cov = None if d.get("cov") is None else np.array(d["cov"])
        return cls(ModelSpec.from_dict(d["model"]), names,
                   tuple(r["label"] for r in d["parameters"]), est, se, z, cov,
                   d["loglik"], d["aic"], d["k"], d["N"], d["converged"], d["grad_norm"],
                   d["iterations"], d["message"], d["hessian_pd"],
                   unbounded=d.get("unbounded", []), data_key=d.get("data_key", ""))


def _f(v):
    return None if not np.isfinite(v) else float(v)


def aic(fit_or_k, loglik=None):
    """``2k - 2 loglik``; accepts a fit or ``(k, loglik)``."""
    if loglik is None:
        return 2.0 * fit_or_k.k - 2.0 * fit_or_k.loglik
    return 2.0 * fit_or_k - 2.0 * loglik


def data_key(data):
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(data.y).tobytes())
    h.update(np.ascontiguousarray(data.X_plus).tobytes())
    return h.hexdigest()[:16]


def _classic_start(model):
    """Regression of logit(y) on X for b, moment estimate for log(phi)."""
    rows = model.interior_rows
    y = model.y[rows]
    Xb = model.X["b"][rows]
    z = logit(y)
    b, *_ = np.linalg.lstsq(Xb, z, rcond=None)
    mu = 1.0 / (1.0 + np.exp(-(Xb @ b)))
    dof = max(len(y) - Xb.shape[1], 1)
    sigma2 = np.sum((z - Xb @ b) ** 2) / dof * (mu * (1 - mu)) ** 2
    phi = np.mean(mu * (1 - mu) / np.maximum(sigma2, 1e-12)) - 1.0
    d = np.zeros(model.X["d"].shape[1])
    d[0] = np.log(max(phi, 1.5))
    return b, d


def _check_degenerate(spec, data):
    part = data.partition
    if part.n_beta == 0:
        if part.n1 == 0:
            raise DataError("no interior observations (all y == 0)")
        if part.n0 == 0:
            raise DataError("no interior observations (all y == 1)")
        raise DataError("no interior observations (endpoints only)")


def _stage1(spec, data, opts):
    cspec = ModelSpec("classic", spec.mean, spec.precision)
    cmodel = make_model(cspec, data)
    b, d = _classic_start(cmodel)
    x0 = np.concatenate([b, d])
    return _optimize(cmodel, x0, opts, data)


def _start_from_stage1(model, stage1):
    lay = model.layout
    x = np.zeros(lay.size)
    part = model.data.partition
    x[lay["b"]] = stage1.estimates[: lay["b"].stop - lay["b"].start]
    nb = lay["b"].stop - lay["b"].start
    x[lay["d"]] = stage1.estimates[nb:]
    if "c" in lay:
        c = np.zeros(lay["c"].stop - lay["c"].start)
        if model.spec.tilt is None:
            c[:] = x[lay["b"]]
        c = _feasible_tilt(model, c)
        x[lay["c"]] = c
    if "a" in lay:
        x[lay["a"].start] = logit(np.clip(part.n_beta / part.N, 1e-6, 1 - 1e-6))
    if "zeta" in lay:
        tot = part.n0 + part.n1
        x[lay["zeta"].start] = 0.0 if tot == 0 else logit(np.clip(part.n1 / tot, 0.02, 0.98))
    for key, n_end in (("z0", part.n0), ("z1", part.n1)):
        if key in lay:
            x[lay[key].start] = logit(np.clip(n_end / part.N, 1e-6, 1 - 1e-6))
    return x


def _feasible_tilt(model, c):
    # endpoint rows need the tilt to lean toward their endpoint
    eta = model.X["c"] @ c
    ok_one = np.all(eta[model.cls == 1] >= 0)
    ok_zero = np.all(eta[model.cls == 0] <= 0)
    if ok_one and ok_zero:
        return c
    c = np.zeros_like(c)
    part = model.data.partition
    if part.n1 and not part.n0:
        c[0] = 0.5
    elif part.n0 and not part.n1:
        c[0] = -0.5
    return c


def _optimize(model, x0, opts, data):
    f = model.loglik
    if opts.gradient == "numeric":
        grad = lambda x: numeric_gradient(f, x)  # noqa: E731
    else:
        grad = model.gradient
    hess = model.hessian
    res = maximize(f, grad, x0, hess=hess, max_iter=opts.max_iter, gtol=opts.gtol, ftol=opts.ftol)
    x, fx, g = res.x, res.fun, res.grad
    if opts.polish and res.converged:
        x, fx, g = newton_polish(f, grad, hess, x)
    return _finish(model, x, fx, g, res, data)


def _finish(model, x, fx, g, res, data):
    lay = model.layout
    H = model.hessian(x)
    info = -H
    hessian_pd = True
    cov = None
    try:
        cov = covariance_from_information(info, lay.names)
        se = np.sqrt(np.diag(cov))
    except np.linalg.LinAlgError as exc:
        hessian_pd = False
        se = np.full(lay.size, np.nan)
        warnings.warn(f"Hessian not negative definite at optimum: {exc}", ConvergenceWarning,
                      stacklevel=3)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(se > 0, x / se, np.nan)
    unbounded = _unbounded_blocks(model, x)
    converged = res.converged and not unbounded
    message = res.message
    if unbounded:
        message += "; unbounded direction in " + ", ".join(unbounded)
    k = lay.size
    return FitResult(model.spec, lay.names, lay.labels, x, se, z, cov, float(fx),
                     aic(k, fx), k, model.N, converged, float(np.max(np.abs(g))),
                     res.iterations, message, hessian_pd, theorem3=model.flags,
                     unbounded=unbounded, data_key=data_key(data), model=model)


def _unbounded_blocks(model, x):
    out = []
    etas = model.predictors(x)
    for key in ("b", "c", "a", "z0", "z1"):
        if key in etas and np.any(np.abs(etas[key]) > UNBOUNDED_ETA):
            s = model.layout[key]
            worst = s.start + int(np.argmax(np.abs(x[s])))
            out.append(model.layout.names[worst])
    return out


def fit(spec, data, options=None, flags=None, grouping=None):
    """Two-stage maximum-likelihood fit.

    Stage 1 fits classic beta regression to the interior observations;
    stage 2 starts the requested model from those estimates.
    """
    opts = options or FitOptions()
    _check_degenerate(spec, data)
    model = make_model(spec, data, flags=flags, grouping=grouping)
    if spec.kind in ("model3", "model4") and model.flags is None:
        model.flags = _global_flags(data)
    if model.flags is not None and spec.kind in ("model3", "model4"):
        fl = model.flags
        if fl.global_q:
            warnings.warn("n_beta < |n0 - n1| for the whole sample: the mean parameters "
                          "may have no maximum", ConvergenceWarning, stacklevel=2)

    stage1 = None
    if opts.start is not None:
        x0 = np.asarray(opts.start, dtype=float)
    elif spec.kind == "classic":
        b, d = _classic_start(model)
        x0 = np.concatenate([b, d])
    else:
        stage1 = _stage1(spec, data, opts)
        x0 = _start_from_stage1(model, stage1) if opts.two_stage else np.zeros(model.layout.size)
    result = _optimize(model, x0, opts, data)
    result.stage1 = stage1
    sep = _separation_reports(model)
    if sep:
        result.separation = sep
        bad = [k for k, r in sep.items() if r.status in ("complete", "quasicomplete")]
        if bad:
            result.message += "; data separation in " + ", ".join(bad)
    if not result.converged:
        warnings.warn(f"fit did not converge: {result.message}", ConvergenceWarning, stacklevel=2)
    return result


def _global_flags(data):
    from .likelihoods import check_theorem3
    return check_theorem3(data)


def _separation_reports(model):
    out = {}
    cls = model.cls
    if model.spec.kind == "augmented":
        for key, code in (("z0", 0), ("z1", 1)):
            if key in model.X:
                out[key] = detect_separation((cls == code).astype(int), model.X[key])
    elif "a" in model.X and model.X["a"].shape[1] > 1:
        out["a"] = detect_separation((cls == 2).astype(int), model.X["a"])
    return out


# ---------------------------------------------------------------------------
# Tests


@dataclass
class TestResult:
    chi2: float
    df: int
    p: float

    def as_dict(self):
        return {"chi2": self.chi2, "df": self.df, "p": self.p}


def wald_test(fit, R, r=None):
    """Wald statistic for the linear restriction ``R theta = r``."""
    R = np.atleast_2d(np.asarray(R, dtype=float))
    r = np.zeros(R.shape[0]) if r is None else np.asarray(r, dtype=float)
    if np.linalg.matrix_rank(R) < R.shape[0]:
        raise ValueError("restriction matrix is rank deficient")
    if fit.cov is None:
        raise ValueError("fit has no covariance matrix")
    diff = R @ fit.estimates - r
    V = R @ fit.cov @ R.T
    chi2 = float(diff @ np.linalg.solve(V, diff))
    df = R.shape[0]
    return TestResult(chi2, df, float(stats.chi2.sf(chi2, df)))


_TERM = re.compile(r"\s*([+-]?)\s*(?:(\d+(?:\.\d*)?(?:[eE][+-]?\d+)?)\s*\*?\s*)?([A-Za-z_][\w]*)?\s*")


def parse_restrictions(text, names):
    """Parse ``"b1=-d1,b2=0.5"`` into ``(R, r)`` over the named parameters."""
    rows, rhs = [], []
    for part in filter(None, (p.strip() for p in text.split(","))):
        if part.count("=") != 1:
            raise ValueError(f"malformed restriction '{part}'")
        lhs, right = part.split("=")
        row = np.zeros(len(names))
        const = 0.0
        for side, sgn in ((lhs, 1.0), (right, -1.0)):
            side = side.strip()
            if not side:
                raise ValueError(f"malformed restriction '{part}'")
            for coef, name, s in _terms(side, part):
                if name is None:
                    const -= sgn * s * coef
                elif name not in names:
                    raise ValueError(f"unknown parameter '{name}' in '{part}'")
                else:
                    row[names.index(name)] += sgn * s * coef
        rows.append(row)
        rhs.append(const)
    if not rows:
        raise ValueError("no restrictions given")
    return np.array(rows), np.array(rhs)


def _terms(expr, whole):
    pos = 0
    expr = expr.replace(" ", "")
    first = True
    while pos < len(expr):
        m = _TERM.match(expr, pos)
        if not m or m.end() == pos or (not first and not m.group(1)):
            raise ValueError(f"malformed restriction '{whole}'")
        sign, num, name = m.groups()
        if num is None and name is None:
            raise ValueError(f"malformed restriction '{whole}'")
        yield (float(num) if num else 1.0), name, (-1.0 if sign == "-" else 1.0)
        pos = m.end()
        first = False


def lr_test(fit_restricted, fit_full):
    """Likelihood-ratio test of nested fits on the same data."""
    if fit_restricted.data_key and fit_full.data_key and fit_restricted.data_key != fit_full.data_key:
        raise ValueError("fits use different data")
    if fit_restricted.N != fit_full.N:
        raise ValueError("fits use different numbers of observations")
    if not set(fit_restricted.names) <= set(fit_full.names) or fit_restricted.k > fit_full.k:
        raise ValueError("models are not nested")
    chi2 = max(2.0 * (fit_full.loglik - fit_restricted.loglik), 0.0)
    df = fit_full.k - fit_restricted.k
    p = 1.0 if df == 0 or chi2 == 0.0 else float(stats.chi2.sf(chi2, df))
    return TestResult(chi2, df, p)
