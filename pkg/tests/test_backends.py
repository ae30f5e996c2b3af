"""The numba kernels and the numpy fallback must agree to float noise."""

import subprocess
import sys

import numpy as np
import pytest

from cbpsdid import _kernels_np
from cbpsdid import backend

try:
    from cbpsdid import _kernels_nb

    HAS_NUMBA = True
except ImportError:
    HAS_NUMBA = False

from test_numopt import random_instance

needs_numba = pytest.mark.skipif(not HAS_NUMBA, reason="numba not installed")


@needs_numba
class TestKernelAgreement:
    def test_logistic_terms(self):
        rng = np.random.default_rng(1)
        for seed in range(5):
            x, _, d = random_instance(300, 4, seed=seed)
            beta = rng.normal(scale=0.7, size=4)
            nll_a, g_a, h_a, mx_a, nc_a = _kernels_np.logistic_terms(x, d, beta)
            nll_b, g_b, h_b, mx_b, nc_b = _kernels_nb.logistic_terms(x, d, beta)
            assert nll_a == pytest.approx(nll_b, rel=1e-12)
            np.testing.assert_allclose(g_a, g_b, rtol=1e-11, atol=1e-13)
            np.testing.assert_allclose(h_a, h_b, rtol=1e-11, atol=1e-13)
            assert mx_a == pytest.approx(mx_b, rel=1e-13)
            assert nc_a == nc_b

    def test_logistic_nll(self):
        rng = np.random.default_rng(2)
        x, _, d = random_instance(300, 4, seed=9)
        for _ in range(5):
            beta = rng.normal(scale=2.0, size=4)
            nll_a, mx_a = _kernels_np.logistic_nll(x, d, beta)
            nll_b, mx_b = _kernels_nb.logistic_nll(x, d, beta)
            assert nll_a == pytest.approx(nll_b, rel=1e-12)
            assert mx_a == pytest.approx(mx_b, rel=1e-13)

    def test_balance_terms(self):
        rng = np.random.default_rng(3)
        for seed in range(5):
            x, _, d = random_instance(300, 4, seed=seed + 50)
            beta = rng.normal(scale=0.7, size=4)
            g_a, j_a, mx_a, nc_a = _kernels_np.balance_terms(x, d, beta)
            g_b, j_b, mx_b, nc_b = _kernels_nb.balance_terms(x, d, beta)
            np.testing.assert_allclose(g_a, g_b, rtol=1e-11, atol=1e-13)
            np.testing.assert_allclose(j_a, j_b, rtol=1e-11, atol=1e-13)
            assert nc_a == nc_b

    def test_clamp_counting_matches(self):
        x = np.column_stack([np.ones(4), np.array([0.0, 10.0, -40.0, 45.0])])
        d = np.array([0.0, 1.0, 0.0, 1.0])
        beta = np.array([0.0, 1.0])
        *_, nc_np = _kernels_np.logistic_terms(x, d, beta)
        *_, nc_nb = _kernels_nb.logistic_terms(x, d, beta)
        assert nc_np == nc_nb == 2


class TestSolverUnderNumpyBackend:
    def test_solvers_agree_across_backends(self, monkeypatch):
        from cbpsdid import cbps_solve, logistic_mle

        x, _, d = random_instance(250, 3, seed=77)
        ml_default = logistic_mle(x, d)
        cbps_default = cbps_solve(x, d)
        monkeypatch.setattr(backend, "_kernels", _kernels_np)
        monkeypatch.setattr(backend, "_name", "numpy")
        ml_np = logistic_mle(x, d)
        cbps_np = cbps_solve(x, d)
        np.testing.assert_allclose(ml_np.beta, ml_default.beta, atol=1e-10)
        np.testing.assert_allclose(cbps_np.beta, cbps_default.beta, atol=1e-10)


class TestEnvFlag:
    @pytest.mark.parametrize("flag,expected", [("numpy", "numpy"), ("auto", None)])
    def test_env_var_selects_backend(self, flag, expected):
        code = (
            "import cbpsdid; print(cbpsdid.backend_name())"
        )
        proc = subprocess.run(
            [sys.executable, "-c", code],
            capture_output=True, text=True,
            env={"CBPSDID_BACKEND": flag, "PATH": "/usr/bin:/bin"},
        )
        assert proc.returncode == 0, proc.stderr
        name = proc.stdout.strip()
        if expected is None:
            assert name in ("numba", "numpy")
        else:
            assert name == expected

    def test_bad_value_raises(self):
        proc = subprocess.run(
            [sys.executable, "-c", "import cbpsdid.backend as b; b.kernels()"],
            capture_output=True, text=True,
            env={"CBPSDID_BACKEND": "fortran", "PATH": "/usr/bin:/bin"},
        )
        assert proc.returncode != 0
        assert "CBPSDID_BACKEND" in proc.stderr
