"""Acceptance criteria, one test per criterion.

Each test records a PASS/FAIL line that pytest prints in its terminal
summary under "acceptance criteria".
"""
import time
import warnings

import numpy as np
import pytest
from scipy import integrate, stats
from scipy.special import expit, logit

from conftest import make_101, record_acceptance, single_endpoint_data
from unitreg.bayes import BoundConfig, CenteringVariant, dic, ess, run_chain, waic
from unitreg.data_io import Dataset
from unitreg.distributions import (BetaParamsAlt, beta_pdf_alt, nu_from_mean, phi_star, power_pdf,
                                   reflected_power_pdf, tilting_power_mean, tilting_power_pdf,
                                   tilting_power_var)
from unitreg.likelihoods import (ModelSpec, endpoint_hessian, endpoint_loglik, endpoint_score,
                                 loglik_model3, loglik_model4, make_model, theorem2_objective)
from unitreg.mle import ConvergenceWarning, fit, maximize, numeric_gradient, wald_test
from unitreg.simulate import EndpointMechanism, GenConfig, gen_cross_section, gen_panel, grid_mle_oracle

X3 = ("x1", "x2", "x3")


def _record(number, ok, detail):
    record_acceptance(number, bool(ok), detail)
    return bool(ok)


def test_criterion_01_theorem2_optimum():
    target = np.array([0.247, 3.319])
    t0 = time.perf_counter()

    def f(v):
        return float(theorem2_objective(expit(v[0]), np.exp(v[1]), 1, 1))

    with np.errstate(all="ignore"), warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)  # the ascent runs off to phi -> inf
        qn = maximize(f, lambda v: numeric_gradient(f, v), np.array([0.0, 0.0]), max_iter=500)
    qn_point = np.array([expit(qn.x[0]), np.exp(qn.x[1])])
    grid = grid_mle_oracle(lambda m, p: theorem2_objective(m, p, 1, 1),
                           [(0.05, 0.95), (0.5, 10.0)], 0.001)
    elapsed = time.perf_counter() - t0
    qn_ok = qn.converged and np.all(np.abs(qn_point - target) <= 0.001)
    grid_ok = np.all(np.abs(grid.argmax - target) <= 0.001)
    ok = _record(1, qn_ok and grid_ok and elapsed < 5.0,
                 f"quasi-Newton -> mu={qn_point[0]:.3f}, phi={qn_point[1]:.4g} "
                 f"(converged={qn.converged}); grid argmax -> mu={grid.argmax[0]:.3f}, "
                 f"phi={grid.argmax[1]:.3f}; target (0.247, 3.319); {elapsed:.1f}s")
    assert ok


def test_criterion_02_theta_intercept_identity():
    got = []
    for seed, n_pred in ((0, 3), (1, 1), (2, 2), (3, 3), (4, 0)):
        d = make_101(seed, ones=4, n_pred=n_pred)
        f = fit(ModelSpec("model2", tuple(d.columns[1:])), d)
        got.append(f.param("a0"))
    err = np.max(np.abs(np.array(got) - 3.1884))
    ok = _record(2, err <= 5e-4,
                 f"logit(theta_hat) over 5 datasets in [{min(got):.5f}, {max(got):.5f}], "
                 f"max |err| {err:.2e} (analytic log(97/4) = {np.log(97 / 4):.5f})")
    assert ok


def _replication(seed):
    d = single_endpoint_data(seed)
    aug = fit(ModelSpec("augmented", X3, theta=X3), d)
    m2 = fit(ModelSpec("model2", X3, theta=X3, mask_mean=True), d)
    nb = 5  # b0..b3, d0
    b_err = np.max(np.abs(aug.estimates[:nb] - m2.estimates[:nb]))
    z = [aug.names.index(f"z1_{j}") for j in range(4)]
    a = [m2.names.index(f"a{j}") for j in range(4)]
    d_err = np.max(np.abs(aug.estimates[z] + m2.estimates[a]))
    aic_err = abs(aug.aic - m2.aic)
    wald_err = 0.0
    for slopes_aug, slopes_m2 in ((["b1", "b2", "b3"], ["b1", "b2", "b3"]),
                                  (["z1_1", "z1_2", "z1_3"], ["a1", "a2", "a3"])):
        Ra = np.eye(len(aug.names))[[aug.names.index(n) for n in slopes_aug]]
        Rm = np.eye(len(m2.names))[[m2.names.index(n) for n in slopes_m2]]
        wald_err = max(wald_err, abs(wald_test(aug, Ra).chi2 - wald_test(m2, Rm).chi2))
    return b_err, d_err, aic_err, wald_err, aug.converged and m2.converged


def test_criterion_03_replication_identity():
    rows = np.array([_replication(s) for s in range(20)])
    worst = rows[:, :4].max(axis=0)
    ok = _record(3, np.all(worst <= 1e-6) and rows[:, 4].all(),
                 f"20 seeds, N=200: max |b diff| {worst[0]:.1e}, max |d + (-a)| {worst[1]:.1e}, "
                 f"max |AIC diff| {worst[2]:.1e}, max |Wald diff| {worst[3]:.1e}")
    assert ok


def test_criterion_04_model2_equals_model3():
    worst = 0.0
    for s in range(20):
        d = single_endpoint_data(s)
        m2 = fit(ModelSpec("model2", X3), d)
        m3 = fit(ModelSpec("model3", X3), d)
        worst = max(worst, np.max(np.abs(m2.estimates[:5] - m3.estimates[:5])))
    ok = _record(4, worst <= 1e-6, f"20 seeds: max |b, log(phi) diff| {worst:.1e}")
    assert ok


def test_criterion_05_cancellation():
    mus = np.linspace(0.01, 0.99, 97)
    vals = [endpoint_loglik(mu, n, n) for mu in mus for n in (0, 1, 3, 25, 1000)]
    ok = _record(5, all(v == 0.0 for v in vals),
                 f"{len(vals)} (mu, n0=n1) pairs on a 97-point grid, all exactly 0")
    assert ok


def _quad(f):
    return integrate.quad(f, 0, 1, epsabs=1e-12, epsrel=1e-10, limit=400)[0]


def test_criterion_06_distribution_suite():
    errs = []
    for nu in (-5, -1, -0.3, 0, 0.3, 1, 5):
        m = tilting_power_mean(nu)
        errs += [abs(_quad(lambda y: tilting_power_pdf(y, nu)) - 1),
                 abs(_quad(lambda y: y * tilting_power_pdf(y, nu)) - m),
                 abs(_quad(lambda y: (y - m) ** 2 * tilting_power_pdf(y, nu)) - tilting_power_var(nu))]
    for mu in (0.1, 0.25, 0.5, 0.75, 0.9):
        errs += [abs(_quad(lambda y: power_pdf(y, mu)) - 1),
                 abs(_quad(lambda y: reflected_power_pdf(y, mu)) - 1),
                 abs(_quad(lambda y: y * power_pdf(y, mu)) - mu),
                 abs(_quad(lambda y: y * reflected_power_pdf(y, mu)) - mu)]
    quad_err = max(errs)
    end_err = 0.0
    for mu in np.linspace(0.05, 0.95, 19):
        at0 = beta_pdf_alt(0.0, BetaParamsAlt(mu, phi_star(0.0, mu, 10.0)))
        at1 = beta_pdf_alt(1.0, BetaParamsAlt(mu, phi_star(1.0, mu, 10.0)))
        end_err = max(end_err, abs(at0 - reflected_power_pdf(0.0, mu)), abs(at1 - power_pdf(1.0, mu)))
    nus = np.linspace(-50, 50, 1001)
    rt_err = max(abs(nu_from_mean(tilting_power_mean(v)) - v) / max(1, abs(v)) for v in nus)
    ok = _record(6, quad_err <= 1e-8 and end_err <= 1e-12 and rt_err <= 1e-10,
                 f"quadrature max err {quad_err:.1e}; phi* endpoint err {end_err:.1e}; "
                 f"nu round-trip rel err {rt_err:.1e}")
    assert ok


def test_criterion_07_derivatives():
    rel = 0.0
    for mu in np.linspace(0.05, 0.95, 19):
        for n0, n1 in ((3, 0), (0, 4), (2, 5), (7, 7)):
            h = 1e-6
            fd_s = (endpoint_loglik(mu + h, n0, n1) - endpoint_loglik(mu - h, n0, n1)) / (2 * h)
            fd_h = (endpoint_score(mu + h, n0, n1) - endpoint_score(mu - h, n0, n1)) / (2 * h)
            s, H = endpoint_score(mu, n0, n1), endpoint_hessian(mu, n0, n1)
            for exact, fd in ((s, fd_s), (H, fd_h)):
                scale = max(abs(exact), 1.0)
                rel = max(rel, abs(exact - fd) / scale)
    r = np.random.default_rng(0)
    y = r.beta(3, 2, 80)
    y[:4], y[4:10] = 0.0, 1.0
    d = Dataset.from_arrays(y, r.normal(size=(80, 2)))
    step_gap = 0.0
    for spec in (ModelSpec("classic", ("x1",)), ModelSpec("augmented", ("x1",), theta=("x2",)),
                 ModelSpec("model1", ("x1",)), ModelSpec("model2", ("x1",), theta=("x2",)),
                 ModelSpec("model3", ("x1", "x2")), ModelSpec("model4", ("x1", "x2"))):
        dd = Dataset.from_arrays(np.where(y == 0, 0.2, y), d.X_plus[:, 1:]) if spec.kind == "model1" else d
        m = make_model(spec, dd)
        x = r.normal(0, 0.3, m.layout.size)
        x[m.layout["d"]] += 2.0
        g1, g2 = numeric_gradient(m.loglik, x, 1e-5), numeric_gradient(m.loglik, x, 1e-6)
        step_gap = max(step_gap, np.max(np.abs(g1 - g2) / np.maximum(np.abs(g1), 1.0)))
    ok = _record(7, rel < 1e-6 and step_gap <= 1e-4,
                 f"endpoint score/Hessian max rel err vs finite differences {rel:.1e}; "
                 f"full-model gradients at steps 1e-5 vs 1e-6 differ by {step_gap:.1e}")
    assert ok


def _model4_regime():
    """Six groups of eight rows; group 0 has seven ones and one interior value."""
    r = np.random.default_rng(42)
    unit = np.repeat(np.arange(6), 8)
    y = r.beta(5, 3, 48)
    y[:7] = 1.0
    D = (unit[:, None] == np.arange(5)[None, :]).astype(float)
    names = [f"g{j}" for j in range(5)]
    return Dataset.from_arrays(y, D, names, unit_id=unit.astype(str)), tuple(names)


def test_criterion_08_model4_equivalence():
    # constraints satisfied: no group violates the estimability condition
    r = np.random.default_rng(1)
    y = r.beta(4, 3, 48)
    y[[0, 9, 20]] = 1.0
    y[[5, 30]] = 0.0
    unit = np.repeat(np.arange(6), 8).astype(str)
    d_ok = Dataset.from_arrays(y, r.normal(size=(48, 2)), unit_id=unit)
    m4 = make_model(ModelSpec("model4", ("x1", "x2")), d_ok)
    m3 = make_model(ModelSpec("model3", ("x1", "x2")), d_ok)
    assert not m4.flags.flagged_groups
    gap = 0.0
    for _ in range(50):
        x = r.normal(0, 1, m4.layout.size)
        x[m4.layout["d"]] += 2.0
        gap = max(gap, abs(loglik_model4(m4, x) - loglik_model3(m3, x)))

    d, names = _model4_regime()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        f3 = fit(ModelSpec("model3", names), d)
        f4 = fit(ModelSpec("model4", names), d)
    m3_bad = (not f3.converged) or bool(f3.unbounded)
    m4_good = f4.converged and np.all(np.isfinite(f4.estimates)) and not f4.unbounded
    phi = np.exp(f4.param("d0"))
    eta0 = f4.param("b0") + f4.param("b1")
    ok = _record(8, gap <= 1e-12 and m3_bad and m4_good,
                 f"unflagged data: max |Model 4 - Model 3| {gap:.1e}; flagged regime: Model 3 "
                 f"converged={f3.converged}, unbounded={list(f3.unbounded)}, b1={f3.param('b1'):.3g}; "
                 f"Model 4 converged={f4.converged}, group-0 eta {eta0:.4f} vs log(phi-1) "
                 f"{np.log(phi - 1):.4f}")
    assert ok


def test_criterion_09_parameter_recovery():
    t0 = time.perf_counter()
    truth = np.array([0.5, 0.5, -0.5, 2.5])
    covered = np.zeros(4)
    all_in = 0
    for rep in range(100):
        cfg = GenConfig("model3", N=2000, b=tuple(truth[:3]), d=(truth[3],), seed=1000 + rep,
                        endpoints=EndpointMechanism("explicit", p0=0.025, p1=0.025))
        d = gen_cross_section(cfg).data
        f = fit(ModelSpec("model3", ("x1", "x2")), d)
        inside = np.abs(f.estimates - truth) <= 3 * f.se
        covered += inside
        all_in += inside.all()
    elapsed = time.perf_counter() - t0
    ok = _record(9, covered.min() >= 95 and elapsed < 60,
                 f"per-coefficient 3-SE coverage {covered.astype(int).tolist()} of 100, "
                 f"all jointly {all_in}/100; {elapsed:.1f}s")
    assert ok


def _toy_oracles():
    rng = np.random.default_rng(5)
    y = rng.normal(1.0, 1.0, 40)
    theta = rng.normal(y.mean(), 1 / np.sqrt(40), 100_000)
    ll = stats.norm.logpdf(y[None, :10], theta[:2000, None], 1.0)
    full = -20 * np.log(2 * np.pi) - 0.5 * (np.sum(y ** 2) - 2 * theta * y.sum() + 40 * theta ** 2)
    p_d = dic(full, stats.norm.logpdf(y, theta.mean(), 1).sum())["p_d"]
    lppd = sum(np.log(np.mean(np.exp(ll[:, i]))) for i in range(10))
    w_ok = abs(waic(ll)["lppd"] - lppd) < 1e-9
    x = np.empty(10_000)
    x[0] = 0.0
    e = rng.normal(size=10_000)
    for t in range(1, 10_000):
        x[t] = 0.9 * x[t - 1] + e[t]
    ar = ess(x)
    return abs(p_d - 1) < 0.05 and w_ok and abs(ar / 526.3 - 1) < 0.3, p_d, ar


def test_criterion_10_bayes_suite():
    t0 = time.perf_counter()
    sim = gen_panel(GenConfig("classic", b=(1.0, 0.5), d=(3.0,), seed=77), 50, 8, 0.7)
    d = sim.data
    spec = ModelSpec("model3", ("x1",))
    kw = dict(n_warmup=5000, n_iter=20000)
    none = run_chain(spec, d, seed=1, **kw)
    hc1 = run_chain(spec, d, centering=CenteringVariant("hc1"), seed=2, **kw)
    hc2 = run_chain(spec, d, centering=CenteringVariant("hc2", 3.0), seed=3, **kw)
    bounded = run_chain(spec, d, bounds=BoundConfig(enabled=True, groups=("0", "1", "2")),
                        seed=4, **kw)
    # 2-sd intervals cover about 95% of the time, so one panel can miss by chance;
    # coverage is counted over five consecutive panel seeds
    truth = {"b0": 1.0, "b1": 0.5}
    misses = []
    for k in truth:
        if abs(none.posterior_mean(k) - truth[k]) > 2 * none.column(k).std():
            misses.append(f"77:{k}")
    for seed in range(78, 82):
        extra = gen_panel(GenConfig("classic", b=(1.0, 0.5), d=(3.0,), seed=seed), 50, 8, 0.7).data
        rr = run_chain(spec, extra, seed=seed, **kw)
        misses += [f"{seed}:{k}" for k, v in truth.items()
                   if abs(rr.posterior_mean(k) - v) > 2 * rr.column(k).std()]
    within = len(misses) <= 2

    def mcse(r, k):
        return r.column(k).std() / np.sqrt(max(r.ess[k], 1.0))

    agree = True
    for k in ("b0", "log_sigma_m"):
        gap = abs(none.posterior_mean(k) - hc1.posterior_mean(k))
        agree &= gap <= 3 * np.hypot(mcse(none, k), mcse(hc1, k))
    ks = stats.ks_2samp(hc1.column("b0"), hc2.column("b0")).statistic
    recon = np.allclose(hc2.column("b0"), 3.0 + hc2.column("b0_shift"), rtol=0, atol=1e-15)
    no_bind = all(v["p"] == 0.0 for v in bounded.pi_u.values()) and all(
        v["mean"] == 0.0 for v in bounded.delta_m.values())
    toys, p_d, ar = _toy_oracles()
    elapsed = time.perf_counter() - t0
    ok = _record(10, within and agree and ks < 0.05 and recon and no_bind and toys and elapsed < 600,
                 f"b within 2 posterior sd in {10 - len(misses)}/10 checks over 5 panels "
                 f"(misses {misses or 'none'}); none vs HC1 b0/sigma within 3 MCSE: {bool(agree)}; "
                 f"HC1 vs HC2 b0 KS {ks:.3f}; HC2 reconstruction exact: {recon}; "
                 f"non-binding bounds pi_U=delta_m=0: {no_bind}; toy p_d {p_d:.3f}, "
                 f"AR(1) ESS {ar:.0f} vs 526; {elapsed:.0f}s for 8 chains of 25,000 iterations")
    assert ok


def _separated(seed):
    """About 100 rows with a few ones at the largest x1 values, as in employment-style data."""
    r = np.random.default_rng(seed)
    X = r.normal(size=(100, 3))
    mu = expit(1.5 + 0.3 * X[:, 0] - 0.2 * X[:, 1])
    y = r.beta(mu * 20, (1 - mu) * 20)
    y[np.argsort(X[:, 0])[-4:]] = 1.0
    return Dataset.from_arrays(y, X)


def test_criterion_11_separation():
    detected, finite, worst_z, worst_m3 = 0, 0, 0.0, 0.0
    for seed in range(10):
        d = _separated(seed)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ConvergenceWarning)
            aug = fit(ModelSpec("augmented", X3, theta=X3), d)
            m3 = fit(ModelSpec("model3", X3), d)
        detected += aug.separation["z1"].status == "complete" and "separation" in aug.message
        finite += (m3.converged and not m3.unbounded and np.all(np.isfinite(m3.estimates))
                   and np.all(np.isfinite(m3.se)))
        worst_z = max(worst_z, np.max(np.abs([aug.param(f"z1_{j}") for j in range(4)])))
        worst_m3 = max(worst_m3, np.max(np.abs(m3.estimates)))
    ok = _record(11, detected == 10 and finite == 10,
                 f"10 datasets (N=100, 4 ones at the top x1 values): augmented fit reports complete "
                 f"separation in {detected}/10 (largest |z1 coef| {worst_z:.0f}); Model 3 converges "
                 f"with finite estimates and SEs in {finite}/10 (largest |estimate| {worst_m3:.2f})")
    assert ok
