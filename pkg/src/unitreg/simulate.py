"""Seeded data generators and brute-force oracles."""
import json
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy import integrate
from scipy.special import expit

from .data_io import Dataset, write_csv
from .distributions import nu_from_logit, tilting_power_sample
from .likelihoods import check_theorem3

RNG_ALGORITHM = "numpy.random.Philox"


def make_rng(seed):
    return np.random.Generator(np.random.Philox(seed))


@dataclass
class EndpointMechanism:
    """How exact 0/1 values arise.

    ``none``      continuous draws only
    ``rounding``  draws within ``resolution`` of an endpoint are snapped to it
    ``explicit``  each row is an endpoint with probability p0 + p1, split p0:p1
    ``theta``     rows are endpoints with probability 1 - theta_i (split by zeta)
    """

    kind: str = "none"
    resolution: float = 0.0
    p0: float = 0.0
    p1: float = 0.0
    zeta: Optional[float] = None

    def __post_init__(self):
        if self.kind not in ("none", "rounding", "explicit", "theta"):
            raise ValueError(f"unknown endpoint mechanism '{self.kind}'")
        if self.kind == "rounding" and not self.resolution > 0:
            raise ValueError("rounding needs a positive resolution")
        for name in ("p0", "p1"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.p0 + self.p1 > 1.0:
            raise ValueError("p0 + p1 exceeds 1")
        if self.zeta is not None and not 0.0 <= self.zeta <= 1.0:
            raise ValueError("zeta must lie in [0, 1]")


@dataclass
class GenConfig:
    """Truth and design for a synthetic cross-section.

    Coefficient vectors include the intercept.  ``b`` drives the beta mean,
    ``d`` the log precision (intercept only unless longer), ``a`` the mixing
    weight and ``c`` the tilting mean of Model 1.  ``nu`` is used by the
    tilting-only generator.
    """

    kind: str = "model3"
    N: int = 1000
    b: tuple = (0.5, 0.5, -0.5)
    d: tuple = (2.5,)
    a: Optional[tuple] = None
    c: Optional[tuple] = None
    nu: float = 0.0
    predictors: str = "normal"  # or "uniform"
    endpoints: EndpointMechanism = field(default_factory=EndpointMechanism)
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("classic", "model1", "model2", "model3", "model4", "tilting"):
            raise ValueError(f"cannot simulate model kind '{self.kind}'")
        if self.N < 1:
            raise ValueError("N must be positive")
        if self.predictors not in ("normal", "uniform"):
            raise ValueError("predictors must be 'normal' or 'uniform'")
        if self.kind == "model2" and self.endpoints.kind == "theta" and self.a is None:
            raise ValueError("theta-driven endpoints need coefficients a")
        if self.kind == "model1" and (self.a is None or self.c is None):
            raise ValueError("model1 needs coefficients a and c")
        if len(self.d) > len(self.b):
            raise ValueError("precision predictors must be a subset of mean predictors")
        self.b, self.d = tuple(self.b), tuple(self.d)
        if self.a is not None:
            self.a = tuple(self.a)
        if self.c is not None:
            self.c = tuple(self.c)

    @property
    def n_predictors(self):
        return max(len(self.b), len(self.a or ()), len(self.c or ())) - 1

    def as_dict(self):
        out = asdict(self)
        out["rng"] = RNG_ALGORITHM
        return out


@dataclass
class Simulated:
    data: Dataset
    truth: dict
    mu: np.ndarray
    membership: np.ndarray  # 0/1/2 as generated, before any rounding


def _predictors(cfg, rng, n):
    J = cfg.n_predictors
    if cfg.predictors == "normal":
        return rng.standard_normal((n, J))
    return rng.uniform(-1.0, 1.0, (n, J))


def _lin(coefs, Xp):
    coefs = np.asarray(coefs, dtype=float)
    return Xp[:, : len(coefs)] @ coefs


def _draw(cfg, rng, Xp, offset=0.0):
    """Outcomes for design ``Xp`` (intercept included); ``offset`` shifts the mean predictor."""
    n = Xp.shape[0]
    eta = _lin(cfg.b, Xp) + offset
    mu = expit(eta)
    phi = np.exp(_lin(cfg.d, Xp))
    u_member = rng.random(n)
    u_side = rng.random(n)
    interior = rng.beta(mu * phi, (1.0 - mu) * phi)
    member = np.full(n, 2)
    ep = cfg.endpoints
    if cfg.kind == "tilting":
        y = tilting_power_sample(np.full(n, cfg.nu), rng.random(n))
        mu = np.full(n, (cfg.nu * (cfg.nu >= 0) + 1.0) / (abs(cfg.nu) + 2.0))
    elif cfg.kind == "model1":
        th = expit(_lin(cfg.a, Xp))
        tilt = tilting_power_sample(nu_from_logit(_lin(cfg.c, Xp)), rng.random(n))
        use_tilt = u_member >= th
        y = np.where(use_tilt, tilt, interior)
        member = np.where(use_tilt, 3, 2)
    else:
        y = interior
        if ep.kind == "explicit":
            is_end = u_member < ep.p0 + ep.p1
            tot = ep.p0 + ep.p1
            one = u_side * tot < ep.p1
            member = np.where(is_end, np.where(one, 1, 0), 2)
        elif ep.kind == "theta":
            th = expit(_lin(cfg.a, Xp))
            is_end = u_member >= th
            z = 0.5 if ep.zeta is None else ep.zeta
            member = np.where(is_end, np.where(u_side < z, 1, 0), 2)
        y = np.where(member == 0, 0.0, np.where(member == 1, 1.0, y))
    # beta draws can underflow to exact endpoints; keep them interior
    tiny = np.finfo(float).eps
    y = np.where(member >= 2, np.clip(y, tiny, 1.0 - tiny), y)
    if ep.kind == "rounding":
        y = np.where(y < ep.resolution, 0.0, np.where(y > 1.0 - ep.resolution, 1.0, y))
    return y, mu, member


def gen_cross_section(cfg: GenConfig) -> Simulated:
    rng = make_rng(cfg.seed)
    X = _predictors(cfg, rng, cfg.N)
    Xp = np.column_stack([np.ones(cfg.N), X])
    y, mu, member = _draw(cfg, rng, Xp)
    data = Dataset.from_arrays(y, X)
    part = data.partition
    truth = {"config": cfg.as_dict(), "counts": part.as_dict()}
    if cfg.endpoints.kind == "explicit":
        truth["expected_endpoints"] = cfg.N * (cfg.endpoints.p0 + cfg.endpoints.p1)
    return Simulated(data, truth, mu, member)


def gen_panel(cfg: GenConfig, units, obs_per_unit, sigma_m, forced_units=0,
              forced_value=1.0, forced_share=0.875, max_redraws=100) -> Simulated:
    """Random-intercept panel: row mean ``expit(x'b + m_unit)``.

    The first ``forced_units`` units get ``ceil(forced_share * T)`` rows set to
    ``forced_value`` and the rest interior, so that exactly those units
    violate the estimability condition.  Other units are redrawn until they
    satisfy it.
    """
    if units < 1 or obs_per_unit < 1:
        raise ValueError("need at least one unit and one observation per unit")
    if sigma_m < 0:
        raise ValueError("sigma_m must be non-negative")
    if forced_units > units:
        raise ValueError("more forced units than units")
    if forced_value not in (0.0, 1.0):
        raise ValueError("forced_value must be 0 or 1")
    T = obs_per_unit
    n_forced = int(np.ceil(forced_share * T))
    if forced_units and n_forced <= T - n_forced:
        raise ValueError("forced_share must exceed one half to violate the condition")
    rng = make_rng(cfg.seed)
    m = sigma_m * rng.standard_normal(units)
    N = units * T
    X = _predictors(cfg, rng, N)
    Xp = np.column_stack([np.ones(N), X])
    unit = np.repeat(np.arange(units), T)
    time = np.tile(np.arange(T), units)
    y = np.empty(N)
    mu = np.empty(N)
    member = np.empty(N, dtype=int)
    for i in range(units):
        rows = slice(i * T, (i + 1) * T)
        for _ in range(max_redraws):
            yi, mui, mi = _draw(cfg, rng, Xp[rows], offset=m[i])
            if i < forced_units:
                yi = np.where(np.arange(T) < n_forced, forced_value, np.clip(yi, 1e-6, 1 - 1e-6))
                mi = np.where(np.arange(T) < n_forced, int(forced_value), 2)
                break
            nb = np.sum((yi > 0) & (yi < 1))
            if nb >= abs(np.sum(yi == 0) - np.sum(yi == 1)):
                break
        else:
            raise RuntimeError(f"could not draw a compliant unit {i}; endpoint rate too high")
        y[rows], mu[rows], member[rows] = yi, mui, mi
    data = Dataset.from_arrays(y, X, unit_id=unit.astype(str), time_id=time)
    truth = {"config": cfg.as_dict(), "units": units, "obs_per_unit": T, "sigma_m": sigma_m,
             "random_effects": m.tolist(), "forced_units": [str(u) for u in range(forced_units)],
             "counts": data.partition.as_dict()}
    return Simulated(data, truth, mu, member)


def write_simulated(sim: Simulated, path):
    """Write the dataset CSV and a ``.truth.json`` sidecar next to it."""
    path = Path(path)
    write_csv(sim.data, path)
    side = path.with_suffix(".truth.json")
    side.write_text(json.dumps(sim.truth, indent=2, sort_keys=True))
    return path, side


def quadrature_moment(pdf, k, lower=0.0, upper=1.0, points=None):
    """``integral of y**k * pdf(y)`` over [lower, upper] with absolute tolerance 1e-10."""
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            val, err = integrate.quad(lambda t: t ** k * float(pdf(t)), lower, upper,
                                      epsabs=1e-10, epsrel=1e-12, limit=200, points=points)
        except integrate.IntegrationWarning as exc:
            raise ArithmeticError(f"quadrature did not converge: {exc}") from None
    return val


@dataclass
class GridResult:
    argmax: np.ndarray
    value: float
    n_points: int


def grid_mle_oracle(fn, box, resolution, max_points=50_000_000, chunk=2_000_000):
    """Exhaustive grid maximisation of a vectorised function.

    ``box`` is a sequence of ``(lower, upper)`` pairs (at most three) and
    ``fn`` is called with one array per coordinate.  The grid includes both
    box edges.  Non-finite values are ignored.
    """
    box = [tuple(map(float, b)) for b in box]
    if not 1 <= len(box) <= 3:
        raise ValueError("grid oracle handles one to three parameters")
    res = np.broadcast_to(np.asarray(resolution, dtype=float), (len(box),))
    axes = []
    for (lo, hi), r in zip(box, res):
        if not hi > lo or not r > 0:
            raise ValueError("invalid box or resolution")
        n = int(np.floor((hi - lo) / r + 1e-9)) + 1
        axes.append(lo + r * np.arange(n))
    total = int(np.prod([len(a) for a in axes]))
    if total > max_points:
        raise ValueError(f"grid of {total} points exceeds the cap of {max_points}")
    shape = tuple(len(a) for a in axes)
    best_val, best_idx = -np.inf, None
    for start in range(0, total, chunk):
        flat = np.arange(start, min(start + chunk, total))
        idx = np.unravel_index(flat, shape)
        with np.errstate(all="ignore"):
            vals = np.asarray(fn(*[a[i] for a, i in zip(axes, idx)]), dtype=float)
        vals = np.where(np.isfinite(vals), vals, -np.inf)
        j = int(np.argmax(vals))
        if vals[j] > best_val:
            best_val, best_idx = float(vals[j]), flat[j]
    if best_idx is None:
        raise ArithmeticError("function is non-finite on the whole grid")
    point = np.array([a[i] for a, i in zip(axes, np.unravel_index(best_idx, shape))])
    return GridResult(point, best_val, total)
