"""Log-likelihoods for the classic, augmented and mixture-family models.

A :class:`Model` binds a :class:`ModelSpec` to a :class:`~unitreg.data_io.Dataset`
and exposes the log-likelihood of a flat parameter vector together with its
analytic gradient and Hessian.  Each model is written as a sum of row terms
``l_i(eta_1i, ..., eta_Ki)`` over linear predictors ``eta_k = X_k theta_k``;
row derivatives with respect to the predictors are assembled into the full
gradient and Hessian by :meth:`Model.gradient` and :meth:`Model.hessian`.

Parameter blocks (flat-vector order):

``b``     mean of the beta component (logit link)
``c``     mean of the tilting component, Model 1 only (logit link)
``d``     precision phi (log link)
``a``     mixing weight theta (logit link)
``zeta``  share of endpoint weight placed at y = 1 (logit), Model 2 option
``z0``/``z1``  binary logits of the augmented model
"""
import logging
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import digamma, expit, gammaln, polygamma, xlog1py, xlogy

from . import kernels
from .data_io import Dataset, DataError, endpoint_mask_matrix
from .kernels import CLS_INTERIOR, CLS_ONE, CLS_ZERO

log = logging.getLogger(__name__)

MODEL_KINDS = ("classic", "augmented", "model1", "model2", "model3", "model4")
BLOCK_ORDER = ("b", "c", "d", "a", "zeta", "z0", "z1")
BOUND_KINDS = ("phi_minus_1", "phi")

# Returned by likelihood evaluations that overflow or leave the support.
INFEASIBLE = -np.inf


@dataclass(frozen=True)
class ModelSpec:
    """Which model to fit and which predictors enter each submodel.

    Predictor lists name dataset columns; every submodel gets an intercept.
    ``theta`` lists the predictors of the mixing weight (Model 1/2) or of
    the endpoint logits (augmented model); ``None`` means intercept only.
    ``tilt`` defaults to the mean predictors.
    """

    kind: str
    mean: tuple = ()
    precision: tuple = ()
    tilt: Optional[tuple] = None
    theta: Optional[tuple] = None
    zeta: bool = False
    mask_mean: bool = False
    endpoint_density: str = "phi_star"
    bound_kind: str = "phi_minus_1"
    group: Optional[str] = None

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ValueError(f"unknown model kind '{self.kind}'")
        if self.bound_kind not in BOUND_KINDS:
            raise ValueError(f"unknown bound kind '{self.bound_kind}'")
        if self.endpoint_density not in ("phi_star", "tilting"):
            raise ValueError(f"unknown endpoint density '{self.endpoint_density}'")
        for name in ("mean", "precision", "tilt", "theta"):
            val = getattr(self, name)
            if val is not None and not isinstance(val, tuple):
                object.__setattr__(self, name, tuple(val))

    def as_dict(self):
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.__dict__.items()}

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: (tuple(v) if isinstance(v, list) else v) for k, v in d.items()})


@dataclass(frozen=True)
class ParamLayout:
    """Named, non-overlapping slices of the flat parameter vector."""

    blocks: dict  # key -> slice
    names: tuple  # coefficient names, e.g. "b0", "d1", "zeta"
    labels: tuple  # human-readable labels naming the predictor

    @property
    def size(self):
        return len(self.names)

    def __getitem__(self, key):
        return self.blocks[key]

    def __contains__(self, key):
        return key in self.blocks

    def split(self, params):
        return {k: params[s] for k, s in self.blocks.items()}

    def index(self, name):
        return self.names.index(name)


@dataclass
class Theorem3Flags:
    """Per-group estimability flags: q = 1 when n_beta < |n0 - n1|."""

    groups: np.ndarray
    n0: np.ndarray
    n1: np.ndarray
    n_beta: np.ndarray
    q: np.ndarray
    row_group: np.ndarray  # group index of each row
    global_counts: tuple
    global_q: int

    @property
    def row_q(self):
        return self.q[self.row_group]

    @property
    def flagged_groups(self):
        return [g for g, q in zip(self.groups, self.q) if q]

    def as_dict(self):
        return {
            "groups": [str(g) for g in self.groups],
            "n0": self.n0.tolist(), "n1": self.n1.tolist(), "n_beta": self.n_beta.tolist(),
            "q": self.q.tolist(),
            "flagged": [str(g) for g in self.flagged_groups],
            "global": {"n0": self.global_counts[0], "n1": self.global_counts[1],
                       "n_beta": self.global_counts[2], "q": self.global_q},
        }


def check_theorem3(data, grouping=None, continuous_slopes=False):
    """Flag groups whose mean parameter may lack a maximum.

    ``grouping`` maps each row to the group-mean parameter it informs
    (e.g. a random-intercept unit).  Without it one global group is used.
    """
    y = np.asarray(data.y if isinstance(data, Dataset) else data, dtype=float)
    if grouping is None:
        grouping = np.zeros(len(y), dtype=int)
    grouping = np.asarray(grouping)
    groups, row_group = np.unique(grouping, return_inverse=True)
    G = len(groups)
    n0 = np.bincount(row_group, weights=(y == 0.0), minlength=G).astype(int)
    n1 = np.bincount(row_group, weights=(y == 1.0), minlength=G).astype(int)
    nb = np.bincount(row_group, weights=((y > 0.0) & (y < 1.0)), minlength=G).astype(int)
    q = (nb < np.abs(n0 - n1)).astype(int)
    g0, g1, gb = int((y == 0.0).sum()), int((y == 1.0).sum()), int(((y > 0) & (y < 1)).sum())
    if continuous_slopes:
        warnings.warn("no estimability check exists for continuous slopes; "
                      "only the whole-sample count is reported", stacklevel=2)
    return Theorem3Flags(groups, n0, n1, nb, q, row_group, (g0, g1, gb), int(gb < abs(g0 - g1)))


def theorem2_objective(mu, phi, n0, n_beta):
    """Normalising-constant part of the one-endpoint log-likelihood."""
    mu = np.asarray(mu, dtype=float)
    phi = np.asarray(phi, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        return (n_beta * (gammaln(phi) - gammaln(mu * phi) - gammaln(phi - mu * phi))
                + n0 * (np.log1p(-mu) - np.log(mu)))


def endpoint_loglik(mu, n0, n1):
    """Log-likelihood of n0 zeros and n1 ones under a scalar mean."""
    mu = np.asarray(mu, dtype=float)
    return n0 * (np.log1p(-mu) - np.log(mu)) + n1 * (np.log(mu) - np.log1p(-mu))


def endpoint_loglik_rows(mu, y):
    """Four-sum endpoint contribution for per-row means."""
    mu = np.asarray(mu, dtype=float)
    y = np.asarray(y, dtype=float)
    z, o = y == 0.0, y == 1.0
    return (np.log1p(-mu[z]).sum() - np.log1p(-mu[o]).sum()
            + np.log(mu[o]).sum() - np.log(mu[z]).sum())


def endpoint_score(mu, n0, n1):
    return n0 / (mu * mu - mu) + n1 / (mu - mu * mu)


def endpoint_hessian(mu, n0, n1):
    a = 1.0 / (mu * mu)
    b = 1.0 / ((1.0 - mu) ** 2)
    return n0 * (a - b) + n1 * (b - a)


# ---------------------------------------------------------------------------
# Row terms


class _Rows:
    """Per-row log-likelihood and derivatives with respect to predictors."""

    __slots__ = ("ll", "g", "h")

    def __init__(self, n):
        self.ll = np.zeros(n)
        self.g = {}
        self.h = {}

    def add_g(self, key, values):
        self.g[key] = self.g.get(key, 0.0) + values

    def add_h(self, k1, k2, values):
        if BLOCK_ORDER.index(k1) > BLOCK_ORDER.index(k2):
            k1, k2 = k2, k1
        self.h[(k1, k2)] = self.h.get((k1, k2), 0.0) + values


def _beta_rows(model, eta, zeta_lin, rows, order, out):
    """Interior beta log density with derivatives in (eta_mu, log phi)."""
    mu = expit(eta[rows])
    omu = expit(-eta[rows])
    phi = np.exp(zeta_lin[rows])
    a, b = mu * phi, omu * phi
    logy, log1my = model.logy[rows], model.log1my[rows]
    out.ll[rows] += (gammaln(phi) - gammaln(a) - gammaln(b)
                     + (a - 1.0) * logy + (b - 1.0) * log1my)
    if order < 1:
        return
    psa, psb, psp = digamma(a), digamma(b), digamma(phi)
    resid = (logy - log1my) - (psa - psb)
    l_mu = phi * resid
    l_phi = mu * resid + psp - psb + log1my
    m1 = mu * omu
    g_eta = np.zeros(model.N)
    g_zeta = np.zeros(model.N)
    g_eta[rows] = l_mu * m1
    g_zeta[rows] = l_phi * phi
    out.add_g("b", g_eta)
    out.add_g("d", g_zeta)
    if order < 2:
        return
    ta, tb, tp = polygamma(1, a), polygamma(1, b), polygamma(1, phi)
    l_mumu = -phi * phi * (ta + tb)
    l_muphi = resid - phi * (mu * ta - omu * tb)
    l_phiphi = tp - mu * mu * ta - omu * omu * tb
    h_ee = np.zeros(model.N)
    h_ez = np.zeros(model.N)
    h_zz = np.zeros(model.N)
    h_ee[rows] = l_mumu * m1 * m1 + l_mu * m1 * (omu - mu)
    h_ez[rows] = l_muphi * m1 * phi
    h_zz[rows] = l_phiphi * phi * phi + l_phi * phi
    out.add_h("b", "b", h_ee)
    out.add_h("b", "d", h_ez)
    out.add_h("d", "d", h_zz)


def _endpoint_rows(model, eta, zeta_lin, order, out, cap=None, tilting=False):
    """Endpoint rows under phi*: log density -eta at 0 and +eta at 1.

    ``cap`` applies the Model 4 bound on flagged rows, either as the
    min-form (``"min"``) or by clipping the predictor (``"clip"``).
    ``tilting`` evaluates the tilting-power density instead, which is zero
    when the sign of eta disagrees with the endpoint.
    """
    n = model.N
    sign = np.zeros(n)
    sign[model.cls == CLS_ZERO] = -1.0
    sign[model.cls == CLS_ONE] = 1.0
    end = sign != 0.0
    val = sign * eta
    g = sign.copy()
    if tilting:
        bad = end & (val < 0.0)
        val = np.where(bad, -np.inf, val)
    if cap is not None and model.row_q is not None:
        flagged = end & (model.row_q == 1)
        phi = np.exp(zeta_lin)
        U = phi - 1.0 if model.spec.bound_kind == "phi_minus_1" else phi
        with np.errstate(divide="ignore", invalid="ignore"):
            logU = np.where(U > 0.0, np.log(np.where(U > 0.0, U, 1.0)), -np.inf)
        if cap == "min":
            hit = flagged & (val > logU)
            capped = np.where(hit, logU, val)
        else:
            clipped = np.clip(eta, -logU, logU)
            capped = np.where(flagged, sign * clipped, val)
            hit = flagged & (clipped != eta)
        val = np.where(flagged, capped, val)
        g = np.where(hit, 0.0, g)
        if order >= 1:
            if model.spec.bound_kind == "phi_minus_1":
                with np.errstate(divide="ignore", invalid="ignore"):
                    dz = np.where(hit, phi / (phi - 1.0), 0.0)
                    dzz = np.where(hit, -phi / (phi - 1.0) ** 2, 0.0)
            else:
                dz = np.where(hit, 1.0, 0.0)
                dzz = np.zeros(n)
            if cap == "clip":
                # clipped at -log U on the other side carries the opposite sign
                low = hit & (np.sign(eta) * sign < 0)
                dz = np.where(low, -dz, dz)
                dzz = np.where(low, -dzz, dzz)
            out.add_g("d", dz)
            if order >= 2:
                out.add_h("d", "d", dzz)
    out.ll += np.where(end, val, 0.0)
    if order >= 1:
        out.add_g("b", np.where(end, g, 0.0))


def _mixing_rows(model, eta_a, zeta_logit, order, out):
    """log(theta) for interior rows, log(1 - theta) (times zeta split) for endpoints."""
    mid = model.cls == CLS_INTERIOR
    out.ll += kernels.semimixture_rows(model.cls, eta_a, float(zeta_logit),
                                       bool(model.spec.zeta))
    if order < 1:
        return
    th = expit(eta_a)
    out.add_g("a", np.where(mid, 1.0 - th, -th))
    if order >= 2:
        out.add_h("a", "a", -th * (1.0 - th))
    if model.spec.zeta:
        ze = expit(zeta_logit)
        one = model.cls == CLS_ONE
        zero = model.cls == CLS_ZERO
        out.add_g("zeta", np.where(one, 1.0 - ze, np.where(zero, -ze, 0.0)))
        if order >= 2:
            out.add_h("zeta", "zeta", np.where(one | zero, -ze * (1.0 - ze), 0.0))


def _bernoulli_rows(key, z, eta, order, out):
    out.ll += z * eta - np.logaddexp(0.0, eta)
    if order < 1:
        return
    p = expit(eta)
    out.add_g(key, z - p)
    if order >= 2:
        out.add_h(key, key, -p * (1.0 - p))


def _tilt_log_density(model, eta_c):
    """log f1(y | nu(eta_c)) with its first two derivatives in eta_c."""
    pos = eta_c >= 0.0
    k = np.abs(eta_c)
    em1 = np.expm1(k)
    y = model.y
    with np.errstate(divide="ignore", invalid="ignore"):
        L = k + np.where(pos, xlogy(em1, y), xlog1py(em1, -y))
        ly = np.where(pos, model.logy_raw, model.log1my_raw)
        ely = np.where(np.isfinite(ly), np.exp(k) * ly, 0.0)
    d1 = np.where(pos, 1.0, -1.0) * (1.0 + ely)
    d2 = ely
    return L, d1, d2


def _model1_rows(model, p, etas, order):
    """Full two-component mixture; f2 vanishes at the endpoints."""
    out = _Rows(model.N)
    eta_b, eta_c, zl, eta_a = etas["b"], etas["c"], etas["d"], etas["a"]
    beta = _Rows(model.N)
    mid = model.cls == CLS_INTERIOR
    rows = np.flatnonzero(mid)
    _beta_rows(model, eta_b, zl, rows, order, beta)
    L2 = np.where(mid, beta.ll, -np.inf)
    L1, t1, t2 = _tilt_log_density(model, eta_c)
    log_th = -np.logaddexp(0.0, -eta_a)
    log_1mth = -np.logaddexp(0.0, eta_a)
    A = log_1mth + L1
    B = log_th + L2
    ll = np.logaddexp(A, B)
    out.ll = ll
    if order < 1:
        return out
    with np.errstate(invalid="ignore"):
        w = np.where(np.isfinite(ll), np.exp(B - ll), 0.0)
    th = expit(eta_a)
    # first derivatives of A and B per block
    zero = np.zeros(model.N)
    dA = {"a": -th, "c": t1, "b": zero, "d": zero}
    dB = {"a": 1.0 - th, "c": zero, "b": beta.g.get("b", zero), "d": beta.g.get("d", zero)}
    for k in ("b", "c", "d", "a"):
        out.add_g(k, (1.0 - w) * dA[k] + w * dB[k])
    if order < 2:
        return out
    hA = {("a", "a"): -th * (1.0 - th), ("c", "c"): t2}
    hB = {("a", "a"): -th * (1.0 - th)}
    hB.update(beta.h)
    keys = ("b", "c", "d", "a")
    for i, k1 in enumerate(keys):
        for k2 in keys[i:]:
            pair = (k1, k2) if BLOCK_ORDER.index(k1) <= BLOCK_ORDER.index(k2) else (k2, k1)
            val = ((1.0 - w) * hA.get(pair, zero) + w * hB.get(pair, zero)
                   + w * (1.0 - w) * (dB[k1] - dA[k1]) * (dB[k2] - dA[k2]))
            out.add_h(pair[0], pair[1], val)
    return out


class Model:
    """A model specification bound to a dataset."""

    def __init__(self, spec, data, flags=None, grouping=None):
        self.spec = spec
        self.data = data
        kind = spec.kind
        part = data.partition
        if part.n_beta == 0:
            raise DataError("no interior observations")
        if kind == "classic" and part.n_beta != data.N:
            raise DataError("classic beta regression needs interior observations only")
        self.N = data.N
        self.y = data.y
        self.cls = data.row_class
        mid = self.cls == CLS_INTERIOR
        with np.errstate(divide="ignore"):
            self.logy_raw = np.log(self.y)
            self.log1my_raw = np.log1p(-self.y)
        self.logy = np.where(mid, self.logy_raw, 0.0)
        self.log1my = np.where(mid, self.log1my_raw, 0.0)
        self.interior_rows = np.flatnonzero(mid)

        X = {}
        X["b"] = data.design(spec.mean)
        if spec.mask_mean:
            X["b"] = endpoint_mask_matrix(data)[1][:, [0] + data.column_index(spec.mean)]
        X["d"] = data.design(spec.precision)
        if kind == "model1":
            X["c"] = data.design(spec.mean if spec.tilt is None else spec.tilt)
        if kind in ("model1", "model2"):
            X["a"] = data.design(spec.theta or ())
        if kind == "augmented":
            for key, present in (("z0", part.n0 > 0), ("z1", part.n1 > 0)):
                if present:
                    X[key] = data.design(spec.theta or ())
        self.X = X

        blocks, names, labels = {}, [], []
        pos = 0
        for key in BLOCK_ORDER:
            if key == "zeta":
                if kind == "model2" and spec.zeta:
                    blocks["zeta"] = slice(pos, pos + 1)
                    names.append("zeta")
                    labels.append("logit(zeta)")
                    pos += 1
                continue
            if key not in X:
                continue
            cols = self._block_columns(key)
            k = X[key].shape[1]
            blocks[key] = slice(pos, pos + k)
            prefix = key + "_" if key in ("z0", "z1") else key
            for j in range(k):
                names.append(f"{prefix}{j}")
                labels.append(f"{prefix}{j} ({cols[j]})")
            pos += k
        self.layout = ParamLayout(blocks, tuple(names), tuple(labels))

        self.row_q = None
        self.flags = flags
        if kind == "model4":
            if flags is None:
                if grouping is None:
                    grouping = self._default_grouping()
                flags = check_theorem3(data, grouping)
            self.flags = flags
            self.row_q = flags.row_q

    def _block_columns(self, key):
        s = self.spec
        names = {"b": s.mean, "d": s.precision,
                 "c": s.mean if s.tilt is None else s.tilt,
                 "a": s.theta or (), "z0": s.theta or (), "z1": s.theta or ()}[key]
        return ["(Intercept)", *names]

    def _default_grouping(self):
        if self.spec.group in (None, "unit"):
            if self.data.unit_id is not None:
                return self.data.unit_id
            return None
        return self.data.X_plus[:, self.data.column_index([self.spec.group])[0]]

    # -- evaluation --------------------------------------------------------

    def predictors(self, params):
        params = np.asarray(params, dtype=float)
        etas = {k: X @ params[self.layout[k]] for k, X in self.X.items()}
        if "zeta" in self.layout:
            etas["zeta"] = params[self.layout["zeta"]][0]
        return etas

    def rows(self, params, order=0, cap="min"):
        etas = self.predictors(params)
        kind = self.spec.kind
        if kind == "model1":
            return _model1_rows(self, params, etas, order)
        out = _Rows(self.N)
        if kind == "classic" or kind == "augmented":
            _beta_rows(self, etas["b"], etas["d"], self.interior_rows, order, out)
            for key in ("z0", "z1"):
                if key in etas:
                    z = (self.cls == (CLS_ZERO if key == "z0" else CLS_ONE)).astype(float)
                    _bernoulli_rows(key, z, etas[key], order, out)
            return out
        if order == 0 and self.spec.endpoint_density == "phi_star" and kind != "model4":
            out.ll = kernels.endpoint_beta_rows(self.cls, self.logy, self.log1my,
                                                etas["b"], np.exp(etas["d"]))
        else:
            _beta_rows(self, etas["b"], etas["d"], self.interior_rows, order, out)
            _endpoint_rows(self, etas["b"], etas["d"], order, out,
                           cap=cap if kind == "model4" else None,
                           tilting=self.spec.endpoint_density == "tilting")
        if kind == "model2":
            _mixing_rows(self, etas["a"], etas.get("zeta", 0.0), order, out)
        return out

    def loglik(self, params, cap="min"):
        with np.errstate(all="ignore"):
            val = float(np.sum(self.rows(params, 0, cap=cap).ll))
        return val if np.isfinite(val) else INFEASIBLE

    def loglik_rows(self, params):
        with np.errstate(all="ignore"):
            return self.rows(params, 0).ll

    def gradient(self, params):
        with np.errstate(all="ignore"):
            r = self.rows(params, 1)
        grad = np.zeros(self.layout.size)
        for key, gk in r.g.items():
            if key == "zeta":
                grad[self.layout["zeta"]] = np.sum(gk)
            elif key in self.X:
                grad[self.layout[key]] += self.X[key].T @ np.broadcast_to(gk, (self.N,))
        return grad

    def hessian(self, params):
        with np.errstate(all="ignore"):
            r = self.rows(params, 2)
        p = self.layout.size
        H = np.zeros((p, p))
        for (k1, k2), hv in r.h.items():
            hv = np.broadcast_to(hv, (self.N,))
            X1 = np.ones((self.N, 1)) if k1 == "zeta" else self.X.get(k1)
            X2 = np.ones((self.N, 1)) if k2 == "zeta" else self.X.get(k2)
            if X1 is None or X2 is None:
                continue
            blk = X1.T @ (X2 * hv[:, None])
            s1, s2 = self.layout[k1], self.layout[k2]
            H[s1, s2] += blk
            if k1 != k2:
                H[s2, s1] += blk.T
        return H

    # -- helpers used by fitting and diagnostics ---------------------------

    def mean_fitted(self, params):
        """Fitted conditional mean of y for each row."""
        etas = self.predictors(params)
        mu = expit(etas["b"])
        if self.spec.kind == "model1":
            th = expit(etas["a"])
            mu_t = expit(etas["c"])
            return th * mu + (1.0 - th) * mu_t
        return mu

    def precision_fitted(self, params):
        return np.exp(self.predictors(params)["d"])


def make_model(spec, data, **kw):
    """Build a :class:`Model`; classic fits use the interior rows only."""
    if spec.kind == "classic" and data.partition.n_beta != data.N:
        data = data.subset(data.partition.idx_beta)
    return Model(spec, data, **kw)


def loglik_classic(model, params):
    return model.loglik(params)


def loglik_augmented(model, params):
    return model.loglik(params)


def loglik_model1(model, params):
    return model.loglik(params)


def loglik_model2(model, params):
    return model.loglik(params)


def loglik_model3(model, params):
    return model.loglik(params)


def loglik_model4(model, params, form="min"):
    """Model 4 log-likelihood; ``form="clip"`` evaluates the constrained Model 3 version."""
    return model.loglik(params, cap=form)
