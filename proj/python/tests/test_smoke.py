# SPDX-License-Identifier: Apache-2.0
import numpy as np
import pytest

import diplab

SMALL = """
[experiment]
name = py-small
signals = 1
seed = 5

[signal]
kind = square-wave
length = 16
period = 4

[noise]
kind = gaussian
sigma = 0.1

[network]
family = dip-cnn-1d
depth = 2
channels = 4
bias = false

[runs]
iterations = 25
lr = 1e-2

[run:vanilla]
method = vanilla
"""


def test_operator_adjoint_identity():
    rng = np.random.default_rng(0)
    op = diplab.LinearOperator.gaussian_cs(12, 20, 3)
    assert op.shape == (12, 20)
    x = rng.standard_normal(20)
    w = rng.standard_normal(12)
    assert np.dot(op.apply(x), w) == pytest.approx(np.dot(x, op.adjoint(w)), rel=1e-12)
    np.testing.assert_allclose(op.apply(x), op.matrix @ x, rtol=1e-13)


def test_dft_rows_are_orthonormal():
    op = diplab.LinearOperator.subsampled_dft(16, [0, 1, 3, 8])
    a = op.matrix
    np.testing.assert_allclose(a @ a.T, np.eye(a.shape[0]), atol=1e-12)


def test_signal_and_psnr():
    x = diplab.make_signal("square-wave", length=32, seed=1, period=4)
    assert x.shape == (1, 32)
    assert 0.0 <= x.min() and x.max() <= 1.0
    noisy = x + 0.1
    assert diplab.psnr(noisy, x, 1.0) == pytest.approx(20.0, abs=1e-9)


def test_wmv_of_constant_window_is_zero():
    x = np.ones((1, 8))
    assert diplab.wmv([x, x, x]) == 0.0
    det = diplab.WmvDetector(window=2, patience=1, eps_rel=0.0)
    det.observe(x)
    stop, _ = det.observe(x)
    assert det.observations == 2
    assert det.last_wmv == 0.0
    assert isinstance(stop, bool)


def test_filter_matches_closed_form_for_identity():
    rng = np.random.default_rng(1)
    b = rng.standard_normal((6, 6))
    model = diplab.NtkModel.from_kernel(b @ b.T + np.eye(6))
    op = diplab.LinearOperator.identity(6)
    y = rng.standard_normal(6)
    eta = 0.5 * diplab.step_limit(model, op)
    res = diplab.filter_iterate(model, op, y, eta, 10)
    step = np.eye(6) - eta * model.kernel
    expected = (np.eye(6) - np.linalg.matrix_power(step, 10)) @ y
    np.testing.assert_allclose(res["iterates"][:, -1], expected, atol=1e-10)
    assert res["step_ok"]


def test_network_ntk_is_psd():
    model = diplab.network_ntk(SMALL, recentre=True)
    assert model.size == 16
    assert model.eigenvalues.min() > -1e-8 * model.eigenvalues.max()
    np.testing.assert_allclose(model.kernel, model.kernel.T, atol=1e-10)


def test_classify_recovery_identity_full_rank_kernel():
    model = diplab.NtkModel.from_kernel(np.eye(5))
    rep = diplab.classify_recovery(model, diplab.LinearOperator.identity(5), np.arange(5.0))
    assert not rep["kernel_singular"]
    assert np.linalg.norm(rep["exact_error"]) < 1e-10


def test_small_init_flow_approaches_nuclear_oracle():
    p = diplab.planted_instance(6, 4, 2, 18)
    oracle, _ = diplab.nuclear_oracle(p.meas, p.y)
    flow = diplab.gradient_flow(p.meas.measurements, p.y, diplab.scaled_init(6, 6, 1e-3, 19))
    rel = np.linalg.norm(flow["x"] - oracle) / np.linalg.norm(oracle)
    assert rel < 1e-2
    assert diplab.kkt_check(p.meas, p.y, flow["x"])["pass"]


def test_run_experiment_is_reproducible(tmp_path):
    a = diplab.run_experiment(SMALL, str(tmp_path / "a"))
    b = diplab.run_experiment(SMALL, str(tmp_path / "b"))
    assert len(a) == 1
    np.testing.assert_array_equal(a[0]["psnr"], b[0]["psnr"])
    assert (tmp_path / "a" / "vanilla_s0.csv").read_bytes() == (tmp_path / "b" / "vanilla_s0.csv").read_bytes()
    back = diplab.read_curves_csv(a[0]["csv"])
    np.testing.assert_array_equal(back["loss"], a[0]["loss"])
    c = diplab.run_experiment(SMALL, None, {"experiment.seed": "6"})
    assert not np.array_equal(c[0]["psnr"], a[0]["psnr"])


def test_errors_carry_kind():
    with pytest.raises(diplab.DiplabError) as e:
        diplab.resolve_config(SMALL, {"noise.nope": "1"})
    assert e.value.kind == "config"
    with pytest.raises(diplab.DiplabError) as e:
        diplab.LinearOperator.identity(3).apply(np.ones(4))
    assert e.value.kind == "shape"


def test_desk_configs_resolve():
    text = diplab.peak_variance_config(100)
    assert "[run:" in text
    assert diplab.resolve_config(text) == text
    assert "oes" in diplab.method_comparison_config(100)
