"""Random-intercept panel models estimated by adaptive Metropolis sampling.

The linear predictor for row ``t`` of unit ``i`` is

    eta = x' b_slopes + iota_i

where the unit intercept ``iota_i`` depends on the centering variant:

    none  iota_i = b0 + m_i,   m_i ~ N(0, sigma_m)
    HC1   iota_i = m_i,        m_i ~ N(b0, sigma_m)
    HC2   iota_i = c + m_i,    m_i ~ N(b0', sigma_m),  b0 = c + b0'

Units flagged by the estimability check can be bounded.  With the default
``min`` form their endpoint rows contribute ``min(+-eta, log U)``; with the
``clip`` form ``iota_i`` is clipped to ``[-log U, log U]`` before entering the
predictor.  In both forms each retained draw records the cap distance
``iota - clip(iota)`` and whether ``|iota| > log U``.
"""
import logging
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import expit, logsumexp

from . import kernels
from ._accel import backend
from .data_io import DataError
from .likelihoods import ModelSpec, check_theorem3
from .simulate import RNG_ALGORITHM, make_rng

log = logging.getLogger(__name__)

_LOG_2PI = math.log(2.0 * math.pi)


class ChainError(RuntimeError):
    pass


@dataclass
class PriorConfig:
    coef_scale: float = 0.04
    coef_scale_kind: str = "precision"  # precision | variance | sd
    phi_lower: float = 3.0
    phi_upper: float = 150.0
    sigma_rate: float = 1.0

    def __post_init__(self):
        if self.coef_scale_kind not in ("precision", "variance", "sd"):
            raise ValueError("coef_scale_kind must be precision, variance or sd")
        if not self.coef_scale > 0:
            raise ValueError("coefficient prior scale must be positive")
        if not 0 < self.phi_lower < self.phi_upper:
            raise ValueError("need 0 < phi_lower < phi_upper")
        if not self.sigma_rate > 0:
            raise ValueError("exponential rate must be positive")

    @property
    def coef_sd(self):
        if self.coef_scale_kind == "precision":
            return 1.0 / math.sqrt(self.coef_scale)
        if self.coef_scale_kind == "variance":
            return math.sqrt(self.coef_scale)
        return self.coef_scale


@dataclass
class CenteringVariant:
    kind: str = "none"  # none | hc1 | hc2
    c: Optional[float] = None

    def __post_init__(self):
        self.kind = self.kind.lower()
        if self.kind not in ("none", "hc1", "hc2"):
            raise ValueError(f"unknown centering variant '{self.kind}'")
        if self.kind == "hc2" and (self.c is None or not np.isfinite(self.c)):
            raise ValueError("HC2 needs a finite constant c")


@dataclass
class BoundConfig:
    enabled: bool = False
    kind: str = "phi_minus_1"  # or "phi"
    form: str = "min"  # or "clip"
    groups: Optional[tuple] = None  # unit labels; default: units flagged by the data

    def __post_init__(self):
        if self.kind not in ("phi_minus_1", "phi"):
            raise ValueError(f"unknown bound kind '{self.kind}'")
        if self.form not in ("min", "clip"):
            raise ValueError(f"unknown bound form '{self.form}'")


def _norm_logpdf(x, loc, sd):
    z = (x - loc) / sd
    return -0.5 * z * z - math.log(sd) - 0.5 * _LOG_2PI


class PanelModel:
    """Posterior of the random-intercept model on a fixed dataset."""

    def __init__(self, spec, data, priors=None, centering=None, bounds=None):
        if spec.kind not in ("model2", "model3", "model4"):
            raise ValueError("panel sampling supports model2, model3 and model4")
        if data.unit_id is None:
            raise DataError("panel model needs unit identifiers")
        self.spec = spec
        self.priors = priors or PriorConfig()
        self.centering = centering or CenteringVariant()
        if bounds is None:
            bounds = BoundConfig(enabled=spec.kind == "model4", kind=spec.bound_kind)
        self.bounds = bounds
        self.data = data
        self.y = data.y
        self.N = data.N
        self.cls = data.row_class
        mid = self.cls == kernels.CLS_INTERIOR
        with np.errstate(divide="ignore"):
            self.logy = np.where(mid, np.log(np.where(mid, self.y, 0.5)), 0.0)
            self.log1my = np.where(mid, np.log1p(-np.where(mid, self.y, 0.5)), 0.0)
        self.units, self.unit_idx = np.unique(data.unit_id, return_inverse=True)
        self.unit_idx = self.unit_idx.astype(np.int64)
        self.G = len(self.units)
        X = data.design(spec.mean)
        self.Xs = np.ascontiguousarray(X[:, 1:])
        self.use_theta = spec.kind == "model2"
        self.Xa = data.design(spec.theta or ()) if self.use_theta else None

        self.flags = check_theorem3(data, data.unit_id)
        flagged = np.zeros(self.G, dtype=bool)
        if bounds.enabled:
            groups = bounds.groups if bounds.groups is not None else self.flags.flagged_groups
            labels = [str(u) for u in self.units]
            for g in groups:
                if str(g) not in labels:
                    raise DataError(f"unknown unit '{g}' in bound groups")
                flagged[labels.index(str(g))] = True
        self.flagged = flagged
        self.flag_idx = np.flatnonzero(flagged)
        self.row_capped = flagged[self.unit_idx] & (bounds.form == "min")
        self.clip = bounds.enabled and bounds.form == "clip"

        p = X.shape[1]
        q = self.Xa.shape[1] if self.use_theta else 0
        self.p, self.q = p, q
        self.i_b = np.arange(p)
        self.i_phi = p
        self.i_a = np.arange(p + 1, p + 1 + q)
        self.i_m = np.arange(p + 1 + q, p + 1 + q + self.G)
        self.i_sigma = p + 1 + q + self.G
        self.size = self.i_sigma + 1
        b0 = "b0_shift" if self.centering.kind == "hc2" else "b0"
        names = [b0] + [f"b{j}" for j in range(1, p)] + ["d0"]
        names += [f"a{j}" for j in range(q)]
        names += [f"m[{u}]" for u in self.units] + ["log_sigma_m"]
        self.names = tuple(names)

    # -- pieces of the posterior -----------------------------------------

    def log_u(self, log_phi):
        phi = math.exp(log_phi)
        U = phi - 1.0 if self.bounds.kind == "phi_minus_1" else phi
        return math.log(U) if U > 0 else -math.inf

    def unit_intercepts(self, state):
        m = state[self.i_m]
        kind = self.centering.kind
        if kind == "none":
            return state[0] + m
        if kind == "hc1":
            return m.copy()
        return self.centering.c + m

    def effective_intercepts(self, state, iota=None):
        iota = self.unit_intercepts(state) if iota is None else iota
        if not self.clip:
            return iota
        lu = self.log_u(state[self.i_phi])
        return np.where(self.flagged, np.clip(iota, -lu, lu), iota)

    def eta(self, state):
        slopes = self.Xs @ state[self.i_b[1:]] if self.p > 1 else np.zeros(self.N)
        return slopes + self.effective_intercepts(state)[self.unit_idx]

    def rows(self, state, eta=None):
        eta = self.eta(state) if eta is None else eta
        eta_t = self.Xa @ state[self.i_a] if self.use_theta else np.zeros(1)
        return kernels.panel_rows(self.cls, self.logy, self.log1my, eta,
                                  math.exp(state[self.i_phi]), eta_t, self.use_theta,
                                  self.row_capped, self.log_u(state[self.i_phi]))

    def re_loc(self, state):
        return 0.0 if self.centering.kind == "none" else state[0]

    def prior_terms(self, state):
        pr = self.priors
        sd = pr.coef_sd
        out = {}
        out["b"] = float(sum(_norm_logpdf(state[j], 0.0, sd) for j in self.i_b))
        out["a"] = float(sum(_norm_logpdf(state[j], 0.0, sd) for j in self.i_a))
        lp = state[self.i_phi]
        phi = math.exp(lp)
        out["phi"] = lp if pr.phi_lower <= phi <= pr.phi_upper else -math.inf
        ls = state[self.i_sigma]
        sigma = math.exp(ls)
        out["sigma_m"] = math.log(pr.sigma_rate) - pr.sigma_rate * sigma + ls
        m = state[self.i_m]
        z = (m - self.re_loc(state)) / sigma
        out["m"] = float(np.sum(-0.5 * z * z) - self.G * (ls + 0.5 * _LOG_2PI))
        return out

    def log_posterior(self, state):
        return float(np.sum(self.rows(state))) + sum(self.prior_terms(state).values())

    def initial_state(self):
        from .likelihoods import make_model  # noqa: F401  (import cycle guard)
        from . import mle
        state = np.zeros(self.size)
        pr = self.priors
        b = np.zeros(self.p)
        log_phi = math.log(min(max(10.0, pr.phi_lower * 1.5), pr.phi_upper * 0.9))
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                st = mle.fit(ModelSpec("classic", self.spec.mean), self.data)
            b = st.estimates[: self.p]
            log_phi = float(np.clip(st.estimates[self.p], math.log(pr.phi_lower) + 1e-6,
                                    math.log(pr.phi_upper) - 1e-6))
        except (DataError, ArithmeticError, np.linalg.LinAlgError, RuntimeError) as exc:
            log.info("classic start failed (%s); using zeros", exc)
        state[self.i_b] = b
        state[self.i_phi] = log_phi
        if self.use_theta:
            part = self.data.partition
            state[self.i_a[0]] = math.log(max(part.n_beta, 0.5) / max(part.N - part.n_beta, 0.5))
        kind = self.centering.kind
        if kind == "hc1":
            state[self.i_m] = b[0]
        elif kind == "hc2":
            state[0] = b[0] - self.centering.c
            state[self.i_m] = state[0]
        state[self.i_sigma] = math.log(0.5)
        return state

    def check_init(self, state):
        ll = self.rows(state)
        if not np.all(np.isfinite(ll)):
            bad = np.flatnonzero(~np.isfinite(ll))[:5]
            raise ChainError(f"non-finite log-likelihood at initial values (rows {bad.tolist()})")
        for name, v in self.prior_terms(state).items():
            if not np.isfinite(v):
                raise ChainError(f"non-finite log prior at initial values (term '{name}')")


# ---------------------------------------------------------------------------
# Fit measures


def dic(loglik_per_draw, loglik_at_mean):
    """Deviance information criterion from total log-likelihood draws."""
    ll = np.asarray(loglik_per_draw, dtype=float)
    dbar = -2.0 * float(np.mean(ll))
    p_d = dbar + 2.0 * float(loglik_at_mean)
    return {"dic": dbar + p_d, "p_d": p_d}


def waic(pointwise):
    """WAIC from an (draws x observations) matrix of log densities."""
    ll = np.atleast_2d(np.asarray(pointwise, dtype=float))
    S = ll.shape[0]
    lppd = float(np.sum(logsumexp(ll, axis=0) - math.log(S)))
    p_w = float(np.sum(np.var(ll, axis=0, ddof=1))) if S > 1 else 0.0
    return {"waic": -2.0 * (lppd - p_w), "p_w": p_w, "lppd": lppd}


def ess(trace):
    """Effective sample size with Geyer's initial monotone positive sequence."""
    x = np.asarray(trace, dtype=float)
    n = x.size
    if n < 100:
        raise ValueError("ESS needs a trace of at least 100 draws")
    x = x - x.mean()
    var = float(np.dot(x, x)) / n
    if var <= 0.0 or not np.isfinite(var):
        warnings.warn("constant trace: effective sample size undefined, reported as 0",
                      RuntimeWarning, stacklevel=2)
        return 0.0
    nfft = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(x, nfft)
    acov = np.fft.irfft(f * np.conjugate(f), nfft)[:n] / n
    rho = acov / acov[0]
    tau = -1.0
    prev = np.inf
    for k in range(0, n - 1, 2):
        pair = rho[k] + rho[k + 1]
        if pair <= 0.0:
            break
        pair = min(pair, prev)
        tau += 2.0 * pair
        prev = pair
    return float(min(n / tau, n))


def mse_predictions(y, mu_hat):
    """Mean squared difference between outcomes and fitted means."""
    y = np.asarray(y, dtype=float)
    return float(np.mean((y - np.asarray(mu_hat, dtype=float)) ** 2))


def exceedance_probability(iota, log_u):
    """Share of draws in which ``|iota| > log U``; arrays are (draws x units)."""
    iota = np.asarray(iota, dtype=float)
    log_u = np.asarray(log_u, dtype=float)
    if log_u.ndim == 1 and iota.ndim == 2:
        log_u = log_u[:, None]
    return np.mean(np.abs(iota) > log_u, axis=0)


def replay_log_u(phi, kind="phi_minus_1", extra=0.0):
    """log U for recorded phi draws with the bound raised by ``extra``."""
    phi = np.asarray(phi, dtype=float)
    U = (phi - 1.0 if kind == "phi_minus_1" else phi) + extra
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(U > 0, np.log(np.where(U > 0, U, 1.0)), -np.inf)


# ---------------------------------------------------------------------------
# Results


@dataclass
class _Accumulators:
    n: int
    ll_total: np.ndarray  # per retained draw
    lse: np.ndarray  # running logsumexp of pointwise log density
    mean_ll: np.ndarray
    m2_ll: np.ndarray
    mu_sum: np.ndarray

    @classmethod
    def empty(cls, N, n_iter):
        return cls(0, np.empty(n_iter), np.full(N, -np.inf), np.zeros(N), np.zeros(N), np.zeros(N))

    def push(self, ll, mu):
        k = self.n
        self.ll_total[k] = ll.sum()
        np.logaddexp(self.lse, ll, out=self.lse)
        self.n = k + 1
        delta = ll - self.mean_ll
        self.mean_ll += delta / self.n
        self.m2_ll += delta * (ll - self.mean_ll)
        self.mu_sum += mu

    @staticmethod
    def merge(accs):
        out = _Accumulators(0, np.concatenate([a.ll_total[: a.n] for a in accs]),
                            np.full_like(accs[0].lse, -np.inf), np.zeros_like(accs[0].lse),
                            np.zeros_like(accs[0].lse), np.zeros_like(accs[0].lse))
        for a in accs:
            n = out.n + a.n
            delta = a.mean_ll - out.mean_ll
            out.m2_ll = out.m2_ll + a.m2_ll + delta * delta * out.n * a.n / n
            out.mean_ll = out.mean_ll + delta * a.n / n
            out.lse = np.logaddexp(out.lse, a.lse)
            out.mu_sum = out.mu_sum + a.mu_sum
            out.n = n
        return out

    def waic(self):
        lppd = float(np.sum(self.lse - math.log(self.n)))
        p_w = float(np.sum(self.m2_ll / (self.n - 1))) if self.n > 1 else 0.0
        return {"waic": -2.0 * (lppd - p_w), "p_w": p_w, "lppd": lppd}


@dataclass
class ChainResult:
    names: tuple
    draws: np.ndarray
    acceptance: dict
    ess: dict
    dic: float
    p_d: float
    waic: float
    p_w: float
    mse: float
    delta_m: dict
    pi_u: dict
    centering: CenteringVariant
    seed: object
    backend: str
    iota: np.ndarray = field(repr=False, default=None)  # draws x flagged units
    bounded_units: tuple = ()
    n_warmup: int = 0
    n_chains: int = 1
    accum: Optional[_Accumulators] = field(repr=False, default=None)
    model: Optional[PanelModel] = field(repr=False, default=None)

    def column(self, name):
        return self.draws[:, self.names.index(name)]

    def posterior_mean(self, name):
        return float(self.column(name).mean())

    def summary(self):
        rows = {}
        for j, name in enumerate(self.names):
            col = self.draws[:, j]
            e = self.ess.get(name, float("nan"))
            sd = float(col.std(ddof=1))
            rows[name] = {"mean": float(col.mean()), "sd": sd,
                          "q025": float(np.quantile(col, 0.025)),
                          "q975": float(np.quantile(col, 0.975)),
                          "ess": e, "mcse": sd / math.sqrt(e) if e > 0 else None}
        out = {"parameters": rows, "dic": self.dic, "p_d": self.p_d, "waic": self.waic,
               "p_w": self.p_w, "mse": self.mse, "delta_m": self.delta_m, "pi_u": self.pi_u,
               "acceptance": self.acceptance,
               "centering": {"kind": self.centering.kind, "c": self.centering.c},
               "seed": self.seed, "rng": RNG_ALGORITHM, "backend": self.backend,
               "n_draws": int(self.draws.shape[0]), "n_warmup": self.n_warmup,
               "n_chains": self.n_chains}
        if self.centering.kind == "hc2":
            out["b0_reconstruction"] = {"c": self.centering.c,
                                        "b0_shift_mean": rows["b0_shift"]["mean"],
                                        "b0_mean": rows["b0"]["mean"]}
        flagged = [u for u, v in self.pi_u.items() if v["p"] > 0.05]
        if flagged:
            out["pi_u_concern"] = flagged
        return out

    def write_draws(self, path):
        header = ",".join(self.names)
        np.savetxt(path, self.draws, delimiter=",", header=header, comments="", fmt="%.17g")


# ---------------------------------------------------------------------------
# Sampler


class _Scales:
    """Per-coordinate proposal scales with batch adaptation during warm-up."""

    def __init__(self, n, init, batch=50):
        self.log_scale = np.full(n, math.log(init))
        self.acc = np.zeros(n)
        self.tries = np.zeros(n)
        self.total_acc = np.zeros(n)
        self.total_tries = np.zeros(n)
        self.batch = batch
        self.k = 0

    def record(self, idx, accepted):
        self.acc[idx] += accepted
        self.tries[idx] += 1

    def adapt(self):
        self.k += 1
        step = min(0.5, 2.0 / math.sqrt(self.k))
        rate = np.divide(self.acc, self.tries, out=np.full_like(self.acc, 0.4),
                         where=self.tries > 0)
        self.log_scale = np.where(rate < 0.3, self.log_scale - step,
                                  np.where(rate > 0.5, self.log_scale + step, self.log_scale))
        self.acc[:] = 0
        self.tries[:] = 0

    def freeze(self):
        self.acc[:] = 0
        self.tries[:] = 0


def run_chain(spec, data, priors=None, centering=None, bounds=None, seed=0,
              n_warmup=5000, n_iter=20000, thin=1, init=None):
    """Run one adaptive componentwise random-walk Metropolis chain."""
    model = PanelModel(spec, data, priors, centering, bounds)
    return _run(model, seed, n_warmup, n_iter, thin, init)


def _run(model, seed, n_warmup, n_iter, thin=1, init=None):
    if n_iter < 1 or n_warmup < 0 or thin < 1:
        raise ValueError("invalid chain length")
    rng = make_rng(seed)
    state = model.initial_state() if init is None else np.array(init, dtype=float)
    model.check_init(state)
    hc = model.centering.kind != "none"
    lik_coords = [j for j in model.i_b if not (hc and j == 0)] + [model.i_phi] + list(model.i_a)
    prior_only = ([0] if hc else []) + [model.i_sigma]
    fixed = lik_coords + prior_only
    sc_fixed = _Scales(model.size, 0.1)
    sc_re = _Scales(model.G, 0.5)

    rows = model.rows(state)
    ll = float(rows.sum())
    priors = model.prior_terms(state)
    n_keep = n_iter // thin
    draws = np.empty((n_keep, model.size + (1 if model.centering.kind == "hc2" else 0)))
    acc = _Accumulators.empty(model.N, n_keep)
    n_flag = len(model.flag_idx)
    iota_draws = np.empty((n_keep, n_flag))
    logu_draws = np.empty(n_keep)
    unit = model.unit_idx
    sd_coef = model.priors.coef_sd
    total = n_warmup + n_iter
    keep = 0

    for it in range(total):
        # fixed effects, one coordinate at a time
        for j in fixed:
            prop = state.copy()
            prop[j] += math.exp(sc_fixed.log_scale[j]) * rng.standard_normal()
            new_priors = model.prior_terms(prop)
            lp_new = sum(new_priors.values())
            if not np.isfinite(lp_new):
                sc_fixed.record(j, 0)
                continue
            if j in lik_coords:
                new_rows = model.rows(prop)
                ll_new = float(new_rows.sum())
            else:
                new_rows, ll_new = rows, ll
            log_r = ll_new + lp_new - ll - sum(priors.values())
            if np.isfinite(log_r) and math.log(rng.random()) < log_r:
                state, rows, ll, priors = prop, new_rows, ll_new, new_priors
                sc_fixed.record(j, 1)
            else:
                sc_fixed.record(j, 0)

        # random effects: units are conditionally independent, update as a block
        m = state[model.i_m]
        m_prop = m + np.exp(sc_re.log_scale) * rng.standard_normal(model.G)
        prop = state.copy()
        prop[model.i_m] = m_prop
        new_rows = model.rows(prop)
        d_ll = kernels.segment_sum(new_rows - rows, unit, model.G)
        sigma = math.exp(state[model.i_sigma])
        loc = model.re_loc(state)
        d_prior = -0.5 * (((m_prop - loc) / sigma) ** 2 - ((m - loc) / sigma) ** 2)
        log_r = d_ll + d_prior
        u = rng.random(model.G)
        with np.errstate(invalid="ignore"):
            accept = np.log(u) < np.where(np.isfinite(log_r), log_r, -np.inf)
        if accept.any():
            state[model.i_m] = np.where(accept, m_prop, m)
            rows = np.where(accept[unit], new_rows, rows)
            ll = float(rows.sum())
            priors = model.prior_terms(state)
        sc_re.acc += accept
        sc_re.tries += 1

        if it < n_warmup:
            if (it + 1) % sc_fixed.batch == 0:
                sc_fixed.adapt()
                sc_re.adapt()
            if it + 1 == n_warmup:
                sc_fixed.freeze()
                sc_re.freeze()
            continue
        if (it - n_warmup) % thin:
            continue
        row = draws[keep]
        row[: model.size] = state
        if model.centering.kind == "hc2":
            row[-1] = model.centering.c + state[0]
        eta = model.eta(state)
        acc.push(rows, expit(eta))
        if n_flag:
            iota_draws[keep] = model.unit_intercepts(state)[model.flag_idx]
            logu_draws[keep] = model.log_u(state[model.i_phi])
        keep += 1

    names = list(model.names)
    if model.centering.kind == "hc2":
        names.append("b0")
    names = tuple(names)
    acceptance = {}
    for j in fixed:
        rate = sc_fixed.acc[j] / max(sc_fixed.tries[j], 1)
        acceptance[model.names[j]] = float(rate)
    re_rate = sc_re.acc / max(n_iter, 1)
    for g, u in enumerate(model.units):
        acceptance[f"m[{u}]"] = float(re_rate[g])
    dead = [k for k, v in acceptance.items() if v == 0.0]
    if dead:
        raise ChainError(f"zero acceptance after warm-up for {', '.join(dead[:5])}")
    return _assemble(model, names, draws, acceptance, acc, iota_draws, logu_draws,
                     seed, n_warmup, 1)


def _assemble(model, names, draws, acceptance, acc, iota_draws, logu_draws, seed,
              n_warmup, n_chains, ess_by_chain=None):
    if ess_by_chain is None:
        ess_vals = {}
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            for j, name in enumerate(names):
                ess_vals[name] = ess(draws[:, j]) if draws.shape[0] >= 100 else float("nan")
    else:
        ess_vals = ess_by_chain
    mean_state = draws[:, : model.size].mean(axis=0)
    ll_mean = float(np.sum(model.rows(mean_state)))
    d = dic(acc.ll_total[: acc.n], ll_mean)
    w = acc.waic()
    mse = mse_predictions(model.y, acc.mu_sum / acc.n)
    delta_m, pi_u = {}, {}
    units = tuple(str(model.units[g]) for g in model.flag_idx)
    for k, u in enumerate(units):
        io = iota_draws[:, k]
        lu = logu_draws
        capped = np.clip(io, -lu, lu)
        dm = io - capped
        ind = (np.abs(io) > lu).astype(float)
        delta_m[u] = {"mean": float(dm.mean()), "q025": float(np.quantile(dm, 0.025)),
                      "q975": float(np.quantile(dm, 0.975))}
        p = float(ind.mean())
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            e = ess(ind) if ind.size >= 100 else float(ind.size)
        half = 1.96 * math.sqrt(p * (1 - p) / e) if e > 0 else 0.0
        pi_u[u] = {"p": p, "lo": max(0.0, p - half), "hi": min(1.0, p + half)}
    return ChainResult(names, draws, acceptance, ess_vals, d["dic"], d["p_d"], w["waic"],
                       w["p_w"], mse, delta_m, pi_u, model.centering, seed, backend(),
                       iota_draws, units, n_warmup, n_chains, acc, model)


def _chain_worker(args):
    model, seed, n_warmup, n_iter, thin = args
    return _run(model, seed, n_warmup, n_iter, thin)


def run_chains(spec, data, priors=None, centering=None, bounds=None, seed=0, chains=1,
               n_warmup=5000, n_iter=20000, thin=1, parallel=True):
    """Run independent chains (in separate processes when ``parallel``) and merge them.

    Chain ``k`` uses the ``k``-th child of ``numpy.random.SeedSequence(seed)``.
    """
    model = PanelModel(spec, data, priors, centering, bounds)
    if chains == 1:
        return _run(model, seed, n_warmup, n_iter, thin)
    seeds = [int(s.generate_state(1, np.uint64)[0]) for s in np.random.SeedSequence(seed).spawn(chains)]
    jobs = [(model, s, n_warmup, n_iter, thin) for s in seeds]
    if parallel:
        try:
            with ProcessPoolExecutor(max_workers=chains) as ex:
                results = list(ex.map(_chain_worker, jobs))
        except (OSError, RuntimeError) as exc:  # pragma: no cover - platform dependent
            log.warning("parallel chains unavailable (%s); running sequentially", exc)
            results = [_chain_worker(j) for j in jobs]
    else:
        results = [_chain_worker(j) for j in jobs]
    return merge_chains(results, seed)


def merge_chains(results, seed=None):
    first = results[0]
    model = first.model
    draws = np.concatenate([r.draws for r in results])
    acc = _Accumulators.merge([r.accum for r in results])
    iota = np.concatenate([r.iota for r in results])
    logu = np.concatenate([replay_log_u(np.exp(r.column("d0")), model.bounds.kind) for r in results])
    ess_sum = {n: float(sum(r.ess[n] for r in results)) for n in first.names}
    acceptance = {k: float(np.mean([r.acceptance[k] for r in results])) for k in first.acceptance}
    out = _assemble(model, first.names, draws, acceptance, acc, iota, logu,
                    seed if seed is not None else [r.seed for r in results],
                    first.n_warmup, len(results), ess_by_chain=ess_sum)
    return out
