import warnings

import numpy as np
import pytest
from scipy import stats
from scipy.special import polygamma

from conftest import make_101, single_endpoint_data
from unitreg.data_io import DataError, Dataset
from unitreg.likelihoods import ModelSpec
from unitreg.mle import (ConvergenceWarning, FitOptions, FitResult, aic, covariance_from_information,
                         fit, lr_test, numeric_gradient, observed_information, parse_restrictions,
                         wald_test)

X3 = ("x1", "x2", "x3")


def test_aic_examples():
    assert aic(0, 0.0) == 0.0
    assert aic(5, 117.44) == pytest.approx(-224.88)


@pytest.mark.parametrize("chi2,df,p", [(3.10, 3, 0.376), (4.98, 3, 0.1734)])
def test_chi2_tail_examples(chi2, df, p):
    assert stats.chi2.sf(chi2, df) == pytest.approx(p, abs=5e-4)


def test_observed_information_quadratic():
    v = np.array([0.5, 2.0, 7.0])
    info = observed_information(lambda t: -0.5 * np.sum(t ** 2 / v), np.zeros(3))
    np.testing.assert_allclose(info, np.diag(1 / v), atol=1e-8)


def test_observed_information_scalar_beta_trigamma():
    r = np.random.default_rng(2)
    y = r.beta(3.0, 5.0, 400)
    d = Dataset.from_arrays(y)
    f = fit(ModelSpec("classic"), d)
    assert f.converged
    mu = 1 / (1 + np.exp(-f.estimates[0]))
    phi = np.exp(f.estimates[1])
    a, b = mu * phi, (1 - mu) * phi
    # expected information in (logit mu, log phi) coordinates
    t1, ta, tb = polygamma(1, phi), polygamma(1, a), polygamma(1, b)
    dmu = mu * (1 - mu)
    i_mm = phi ** 2 * (ta + tb) * dmu ** 2
    i_mp = phi * (mu * ta - (1 - mu) * tb) * dmu * phi
    i_pp = (mu ** 2 * ta + (1 - mu) ** 2 * tb - t1) * phi ** 2
    expected = y.size * np.array([[i_mm, i_mp], [i_mp, i_pp]])
    info = observed_information(f.model.loglik, f.estimates)
    # at the MLE the observed and expected information coincide for this exponential family
    np.testing.assert_allclose(info, expected, rtol=1e-4)


def test_covariance_singular_names_parameters():
    info = np.array([[1.0, 1.0], [1.0, 1.0]])
    with pytest.raises(np.linalg.LinAlgError, match="b1"):
        covariance_from_information(info, ["b0", "b1"])


def test_theta_intercept_identity():
    d = make_101(0, ones=4)
    f = fit(ModelSpec("model2", X3), d)
    assert f.converged
    assert f.param("a0") == pytest.approx(3.1884, abs=5e-4)
    assert f.param("a0") == pytest.approx(np.log(97 / 4), abs=1e-6)


def test_fit_result_invariants():
    d = single_endpoint_data(3)
    f = fit(ModelSpec("model3", X3), d)
    assert f.aic == pytest.approx(2 * f.k - 2 * f.loglik)
    pos = f.se > 0
    np.testing.assert_allclose(f.z[pos], f.estimates[pos] / f.se[pos])
    assert np.all(f.se > 0) and f.hessian_pd
    back = FitResult.from_dict(f.as_dict())
    np.testing.assert_array_equal(back.estimates, f.estimates)
    assert back.names == f.names


def test_analytic_and_numeric_gradients_agree():
    d = single_endpoint_data(4)
    a = fit(ModelSpec("model3", X3), d)
    n = fit(ModelSpec("model3", X3), d, FitOptions(gradient="numeric"))
    np.testing.assert_allclose(a.estimates, n.estimates, atol=1e-6)


def test_numeric_gradient_step_consistency():
    d = single_endpoint_data(5)
    f = fit(ModelSpec("model2", X3, theta=X3), d)
    x = f.estimates + 0.05
    g1 = numeric_gradient(f.model.loglik, x, 1e-5)
    g2 = numeric_gradient(f.model.loglik, x, 1e-6)
    np.testing.assert_allclose(g1, g2, rtol=1e-4, atol=1e-4)


def test_order_and_start_invariance():
    d = single_endpoint_data(6)
    spec = ModelSpec("model3", X3)
    base = fit(spec, d)
    perm = np.random.default_rng(0).permutation(d.N)
    shuffled = Dataset.from_arrays(d.y[perm], d.X_plus[perm, 1:], list(X3))
    np.testing.assert_allclose(fit(spec, shuffled).estimates, base.estimates, atol=1e-6)
    start = base.stage1
    assert start is not None
    jitter = np.random.default_rng(1).normal(0, 0.01, base.estimates.size)
    moved = fit(spec, d, FitOptions(start=base.estimates + jitter))
    np.testing.assert_allclose(moved.estimates, base.estimates, atol=1e-6)


def test_replication_identity_single_seed():
    d = single_endpoint_data(7)
    aug = fit(ModelSpec("augmented", X3, theta=X3), d)
    m2 = fit(ModelSpec("model2", X3, theta=X3, mask_mean=True), d)
    np.testing.assert_allclose(m2.estimates[:5], aug.estimates[:5], atol=1e-6)
    z1 = [aug.names.index(f"z1_{j}") for j in range(4)]
    a = [m2.names.index(f"a{j}") for j in range(4)]
    np.testing.assert_allclose(aug.estimates[z1], -m2.estimates[a], atol=1e-6)
    assert aug.aic == pytest.approx(m2.aic, abs=1e-6)


def test_wald_examples():
    d = single_endpoint_data(8)
    f = fit(ModelSpec("model3", X3), d)
    R, r = parse_restrictions("b3=0", f.names)
    t = wald_test(f, R, r)
    i = f.names.index("b3")
    assert t.df == 1 and t.chi2 == pytest.approx(f.z[i] ** 2)
    with pytest.raises(ValueError, match="rank"):
        wald_test(f, np.vstack([R, R]))


def test_parse_restrictions():
    names = ["b0", "b1", "b2", "d1"]
    R, r = parse_restrictions("b1=-d1, b2 = 0.5", names)
    np.testing.assert_array_equal(R, [[0, 1, 0, 1], [0, 0, 1, 0]])
    np.testing.assert_array_equal(r, [0, 0.5])
    R, r = parse_restrictions("2*b1 - b2 = 1", names)
    np.testing.assert_array_equal(R, [[0, 2, -1, 0]])
    for bad in ("b1", "b1==2", "zz=1", "b1=", ""):
        with pytest.raises(ValueError):
            parse_restrictions(bad, names)


def test_lr_identical_and_nested():
    d = single_endpoint_data(9)
    full = fit(ModelSpec("model3", X3), d)
    t = lr_test(full, full)
    assert (t.chi2, t.df, t.p) == (0.0, 0, 1.0)
    small = fit(ModelSpec("model3", ("x1", "x2")), d)
    t = lr_test(small, full)
    assert t.df == 1 and t.chi2 >= 0
    with pytest.raises(ValueError, match="nested"):
        lr_test(full, small)
    other = fit(ModelSpec("model3", X3), single_endpoint_data(10))
    with pytest.raises(ValueError):
        lr_test(small, other)


@pytest.mark.slow
def test_lr_null_distribution():
    chis = []
    for s in range(60):
        r = np.random.default_rng(100 + s)
        X = r.normal(size=(300, 2))
        mu = 1 / (1 + np.exp(-(0.4 + 0.5 * X[:, 0])))
        y = r.beta(mu * 15, (1 - mu) * 15)
        d = Dataset.from_arrays(y, X)
        chis.append(lr_test(fit(ModelSpec("classic", ("x1",)), d),
                            fit(ModelSpec("classic", ("x1", "x2")), d)).chi2)
    assert stats.kstest(chis, stats.chi2(1).cdf).pvalue > 0.01


def test_degenerate_refusals():
    for y in (np.zeros(10), np.ones(10), np.r_[np.zeros(5), np.ones(5)]):
        with pytest.raises(DataError, match="no interior"):
            fit(ModelSpec("model3"), Dataset.from_arrays(y))


def test_global_theorem3_violation_is_reported():
    r = np.random.default_rng(11)
    y = np.r_[np.ones(30), r.beta(5, 2, 5)]
    d = Dataset.from_arrays(y, r.normal(size=(35, 1)))
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        f = fit(ModelSpec("model3", ("x1",)), d)
    assert f.theorem3 is not None and f.theorem3.global_q
    assert any(issubclass(x.category, ConvergenceWarning) for x in w)
    assert (not f.converged) or f.unbounded
