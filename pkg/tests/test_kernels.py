import os
import subprocess
import sys

import numpy as np
import pytest

from unitreg import kernels

IMPLS = {"loop": None, "numba": None}


def _case(seed, n=500):
    r = np.random.default_rng(seed)
    cls = r.choice([0, 1, 2], n, p=[0.1, 0.15, 0.75]).astype(np.int64)
    y = np.where(cls == 0, 0.0, np.where(cls == 1, 1.0, r.uniform(0.01, 0.99, n)))
    with np.errstate(divide="ignore"):
        logy, log1my = np.log(y), np.log1p(-y)
    eta = r.normal(0, 2, n)
    phi = r.uniform(2, 40, n)
    return cls, logy, log1my, eta, phi, r


def _variants(name):
    out = [getattr(kernels, f"_{name}_loop")]
    nb = getattr(kernels, f"{name}_nb")
    if nb is not None:
        out.append(nb)
    return out


@pytest.mark.parametrize("seed", range(3))
def test_endpoint_rows_parity(seed):
    cls, logy, log1my, eta, phi, _ = _case(seed)
    ref = kernels.endpoint_beta_rows_np(cls, logy, log1my, eta, phi)
    for f in _variants("endpoint_beta_rows"):
        np.testing.assert_allclose(f(cls, logy, log1my, eta, phi), ref, rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("use_zeta", [False, True])
def test_semimixture_parity(use_zeta):
    cls, *_, r = _case(4)
    et = r.normal(0, 3, cls.size)
    ref = kernels.semimixture_rows_np(cls, et, 0.3, use_zeta)
    for f in _variants("semimixture_rows"):
        np.testing.assert_allclose(f(cls, et, 0.3, use_zeta), ref, rtol=1e-12, atol=1e-12)


def test_segment_sum_parity():
    r = np.random.default_rng(5)
    v = r.normal(size=1000)
    idx = r.integers(0, 37, 1000)
    ref = kernels.segment_sum_np(v, idx, 40)
    for f in _variants("segment_sum"):
        np.testing.assert_allclose(f(v, idx, 40), ref, rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("use_theta", [False, True])
def test_panel_rows_parity(use_theta):
    cls, logy, log1my, eta, _, r = _case(6)
    et = r.normal(0, 2, cls.size)
    capped = r.random(cls.size) < 0.5
    log_u = np.log(6.0)
    ref = kernels.panel_rows_np(cls, logy, log1my, eta, 7.0, et, use_theta, capped, log_u)
    for f in _variants("panel_rows"):
        np.testing.assert_allclose(f(cls, logy, log1my, eta, 7.0, et, use_theta, capped, log_u),
                                   ref, rtol=1e-12, atol=1e-12)
    end = cls != 2
    assert np.all(ref[end & capped] <= log_u + (np.abs(ref).max() if use_theta else 0))


def test_env_flag_selects_numpy():
    env = dict(os.environ, UNITREG_DISABLE_NUMBA="1")
    code = "import unitreg, unitreg.kernels as k; print(unitreg.backend(), k.panel_rows is k.panel_rows_np)"
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True)
    assert out.stdout.split() == ["numpy", "True"]
