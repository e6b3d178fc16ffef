import numpy as np
import pytest

import uemkit


def test_synth_scene_is_bounded_and_deterministic():
    a = uemkit.synth_scene(3, 16, 16, 8)
    b = uemkit.synth_scene(3, 16, 16, 8)
    assert a.shape == (8, 16, 16)
    assert a.min() >= 0.0 and a.max() <= 1.0
    np.testing.assert_array_equal(a, b)


def test_encode_wem_matches_numpy_weighted_sum():
    wl = uemkit.uniform_wavelengths(8)
    r = uemkit.default_response(wl)
    cube = uemkit.synth_scene(1, 8, 8, 8)
    rgb = uemkit.encode_wem(cube, r)
    dl = wl[1] - wl[0]
    expected = np.einsum("cl,lhw->chw", r, cube) * dl
    np.testing.assert_allclose(rgb, expected, rtol=1e-12, atol=1e-12)


def test_encode_aem_pem_shapes():
    cube = uemkit.synth_scene(2, 8, 8, 4)
    r = uemkit.default_response(uemkit.uniform_wavelengths(4))
    assert uemkit.encode_aem(cube, np.ones((4, 8, 8)), False, r).shape == (3, 8, 8)
    assert uemkit.encode_aem(cube, np.ones((8, 8)), True, r).shape == (3, 8, 8)
    psf = np.zeros((4, 3, 3))
    psf[:, 1, 1] = 1.0
    np.testing.assert_allclose(uemkit.encode_pem(cube, psf, r), uemkit.encode_wem(cube, r), atol=1e-12)


def test_height_to_psf_sums_to_one_per_band():
    opt = dict(grid_n=64, psf_window=5, downsample=4, radial_samples=8)
    h = uemkit.radial_to_2d(np.linspace(0, 1.0, 8), **opt)
    assert h.shape == (64, 64)
    psf = uemkit.height_to_psf(h, uemkit.uniform_wavelengths(3), **opt)
    assert psf.shape == (3, 5, 5)
    np.testing.assert_allclose(psf.sum(axis=(1, 2)), 1.0, atol=1e-12)
    assert (psf >= 0).all()


def test_unknown_optics_key_is_rejected():
    with pytest.raises(Exception):
        uemkit.radial_to_2d(np.zeros(8), bogus=1)


def test_metrics_identity():
    x = uemkit.synth_scene(4, 8, 8, 4)
    assert uemkit.psnr(x, x) == pytest.approx(99.0)
    assert uemkit.sam(x, x) == pytest.approx(0.0, abs=1e-6)
    assert uemkit.ergas(x, x) == pytest.approx(0.0)


def test_nn_baseline_shape():
    wl = uemkit.uniform_wavelengths(8)
    r = uemkit.default_response(wl)
    rgb = uemkit.encode_wem(uemkit.synth_scene(5, 8, 8, 8), r)
    assert uemkit.nn_baseline(rgb, r).shape == (8, 8, 8)


def test_train_reduces_loss_and_returns_params():
    out = uemkit.train({
        "encoder.variant": "wem-i",
        "train.epochs": 3,
        "train.synth_train": 4,
        "train.synth_val": 2,
        "train.synth_size": 8,
        "optics.bands": 4,
        "train.batch_size": 2,
    })
    assert len(out["train_loss"]) == 3
    assert all(np.isfinite(out["train_loss"]))
    assert len(out["val"]) == 3
    assert out["params"]["encoder.response"].shape == (3, 4)


def test_run_cli_usage_error():
    code, _, _ = uemkit.run_cli(["no-such-command"])
    assert code == 1
