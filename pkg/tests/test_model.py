import math

import numpy as np
import pytest

from spgen import autodiff as ad
from spgen.autodiff import Tape, Tensor
from spgen.model import (
    Decoded,
    ModelConfig,
    ModelParams,
    PriorMapBank,
    binarize,
    decode,
    encode,
    init_params,
    merge,
    predict_scanpath,
    render_prior_maps,
    sample_noise,
    select_fixations,
    soft_argmax,
)
from spgen.training import scanpath_loss


@pytest.fixture(scope="module")
def params():
    return init_params(ModelConfig(), seed=0)


@pytest.fixture(scope="module")
def image():
    return np.random.default_rng(1).uniform(0, 1, (3, 64, 64)).astype(np.float32)


# prior maps -------------------------------------------------------------------


def test_prior_peak_value():
    bank = PriorMapBank.from_values([[0.5, 0.25]], [[0.1, 0.2]])
    m = render_prior_maps(bank, 8, 8).data[0]
    assert m[2, 4] == pytest.approx(1 / (2 * math.pi * 0.1 * 0.2), rel=1e-5)


def test_prior_symmetry_on_grid():
    bank = PriorMapBank.from_values([[0.5, 0.5]], [[0.15, 0.3]])
    m = render_prior_maps(bank, 16, 16).data[0]
    d = 3
    assert m[8, 8 + d] == pytest.approx(m[8, 8 - d], rel=1e-6)
    assert m[8 + d, 8] == pytest.approx(m[8 - d, 8], rel=1e-6)


def test_prior_quadrature_integrates_to_one():
    bank = PriorMapBank.from_values([[0.5, 0.5]], [[0.05, 0.05]])
    m = render_prior_maps(bank, 64, 64).data[0].astype(np.float64)
    assert abs(m.sum() / 64 ** 2 - 1) < 0.02


def test_prior_argmax_nearest_grid_point_and_positive():
    rng = np.random.default_rng(2)
    mu = rng.uniform(0.05, 0.9, (10, 2))
    bank = PriorMapBank.from_values(mu, rng.uniform(0.05, 0.4, (10, 2)))
    maps = render_prior_maps(bank, 8, 12).data
    assert np.all(maps > 0)
    for k, m in enumerate(maps):
        j, i = np.unravel_index(np.argmax(m), m.shape)
        assert i == int(np.argmin(np.abs(np.arange(12) / 12 - bank.mu[k, 0])))
        assert j == int(np.argmin(np.abs(np.arange(8) / 8 - bank.mu[k, 1])))


def test_prior_sigma_always_positive():
    bank = PriorMapBank(Tensor(np.zeros((2, 2), np.float32)), Tensor(np.array([[-30.0, -5.0], [0.0, 4.0]], np.float32)))
    assert np.all(bank.sigma > 0)


def test_prior_gradient_fd():
    rng = np.random.default_rng(3)

    def op(mu_raw, sigma_raw):
        return render_prior_maps(PriorMapBank(mu_raw, sigma_raw), 5, 6)

    err = ad.finite_difference_check(op, [rng.normal(0, 0.5, (3, 2)), rng.normal(-1.5, 0.3, (3, 2))])
    assert err < 1e-3


def test_prior_grid_error():
    with pytest.raises(ValueError):
        render_prior_maps(PriorMapBank.from_values([[0.5, 0.5]], [[0.1, 0.1]]), 0, 4)


# encoder / merge ----------------------------------------------------------------------


def test_encode_shape_and_determinism(params, image):
    a = encode(image, params).data
    assert a.shape == (64, 8, 8)
    assert a.tobytes() == encode(image, params).data.tobytes()
    assert np.all(np.isfinite(encode(np.zeros_like(image), params).data))


def test_encode_with_zero_weights_propagates_biases():
    p = init_params(ModelConfig(), 0).copy()
    rng = np.random.default_rng(4)
    for k, t in p.group("enc.").items():
        t.data = np.zeros_like(t.data) if not k.endswith("_b") else rng.uniform(0, 1, t.shape).astype(np.float32)
    out = encode(np.full((3, 64, 64), 0.5, np.float32), p).data
    expected = np.maximum(p["enc.3.pw_b"].data, 0)
    np.testing.assert_allclose(out, np.broadcast_to(expected[:, None, None], out.shape), rtol=1e-6)


def test_encode_rejects_indivisible(params):
    with pytest.raises(ValueError, match="divisible"):
        encode(np.zeros((3, 60, 64), np.float32), params)


def test_merge_channels_and_non_negative(params, image):
    feats = encode(image, params)
    priors = render_prior_maps(params.priors, 8, 8)
    assert params["merge.0.w"].shape[1] == 64 + 16
    out = merge(feats, priors, params).data
    assert out.shape == (20, 8, 8)
    assert np.all(out >= 0)
    with pytest.raises(ValueError, match="spatial"):
        merge(feats, render_prior_maps(params.priors, 4, 4), params)


# soft-argmax / selector --------------------------------------------------------------------


def test_soft_argmax_peak():
    m = np.zeros((1, 6, 8), np.float32)
    m[0, 4, 3] = 10.0
    xy = soft_argmax(Tensor(m), 100.0).data[0]
    assert xy[0] == pytest.approx(3 / 8, abs=1e-3)
    assert xy[1] == pytest.approx(4 / 6, abs=1e-3)


def test_soft_argmax_uniform_and_shift():
    xy = soft_argmax(Tensor(np.zeros((1, 6, 8), np.float32)), 25.0).data[0]
    np.testing.assert_allclose(xy, [7 / 16, 5 / 12], rtol=1e-6)
    m = np.random.default_rng(5).standard_normal((2, 5, 5)).astype(np.float32)
    np.testing.assert_allclose(soft_argmax(Tensor(m + 3.0), 2.0).data, soft_argmax(Tensor(m), 2.0).data, atol=1e-6)


def test_soft_argmax_gradient_fd():
    m = np.random.default_rng(6).standard_normal((2, 4, 5))
    assert ad.finite_difference_check(lambda t: soft_argmax(t, 2.5), [m]) < 1e-3


def test_binarize_examples():
    assert binarize(np.array([0.9, 0.1, 0.5])).tolist() == [True, False, False]
    assert binarize(np.full(5, 0.5)).tolist() == [True, False, False, False, False]
    rows = binarize(np.array([[0.2, 0.2], [0.1, 0.9]]))
    assert rows.tolist() == [[True, False], [False, True]]


def test_select_fixations_ranges(params, image):
    merged = merge(encode(image, params), render_prior_maps(params.priors, 8, 8), params)
    v, mask = select_fixations(merged, params)
    assert v.shape == (20,)
    assert np.all((v.data > 0) & (v.data < 1))
    assert 1 <= mask.sum() <= 20


def test_decoded_lengths_follow_mask():
    coords = Tensor(np.random.default_rng(7).uniform(0, 1, (1, 20, 2)).astype(np.float32))
    v = Tensor(np.full((1, 20), 0.5, np.float32))
    full = Decoded(coords, v, np.ones((1, 20), bool)).scanpaths()[0]
    assert len(full) == 20
    mask = np.zeros((1, 20), bool)
    mask[0, [1, 3, 4, 8, 10, 15, 19]] = True
    seven = Decoded(coords, v, mask).scanpaths()[0]
    assert len(seven) == 7
    assert seven.channels == (1, 3, 4, 8, 10, 15, 19)
    np.testing.assert_allclose(seven.fixations, coords.data[0, mask[0]])


def test_decode_coordinates_in_unit_square(params):
    lat = np.random.default_rng(8).standard_normal((5, 64, 8, 8)).astype(np.float32) * 3
    for sp in decode(lat, params):
        assert 1 <= len(sp) <= 20
        assert np.all((sp.fixations >= 0) & (sp.fixations <= 1))


# stochastic inference ------------------------------------------------------------------------


def test_temperature_zero_ignores_seed(params, image):
    a = predict_scanpath(image, params, rng=1, temperature=0.0)
    b = predict_scanpath(image, params, rng=999, temperature=0.0, noise_kind="gaussian")
    assert a.fixations.tobytes() == b.fixations.tobytes()


def test_samples_and_length_bound(params, image):
    paths = predict_scanpath(image, params, rng=0, temperature=2.0, n_samples=6)
    assert len(paths) == 6
    assert all(1 <= len(p) <= 20 for p in paths)


def test_dispersion_grows_with_temperature(params, image):
    def dispersion(t):
        paths = predict_scanpath(image, params, rng=3, temperature=t, n_samples=30)
        firsts = np.array([p.fixations[0] for p in paths])
        return float(np.mean(np.linalg.norm(firsts[:, None] - firsts[None], axis=-1)))

    assert dispersion(0.0) == 0.0
    assert dispersion(10.0) >= dispersion(0.0)


def test_negative_temperature_rejected(params, image):
    with pytest.raises(ValueError):
        predict_scanpath(image, params, temperature=-0.1)
    with pytest.raises(ValueError):
        predict_scanpath(image, params, temperature=1.0, noise_kind="laplace")


def test_noise_distributions():
    rng = np.random.default_rng(9)
    u = sample_noise(rng, (20000,), "uniform")
    assert u.min() >= -1 and u.max() <= 1 and abs(u.mean()) < 0.02
    g = sample_noise(rng, (20000,), "gaussian")
    assert abs(g.mean()) < 0.03 and abs(g.std() - 1) < 0.03


# parameters ---------------------------------------------------------------------------


def test_every_group_receives_gradient(params, image):
    p = params.copy()
    with Tape():
        feats = encode(image[None], p)
        from spgen.model import decode_batch
        dec = decode_batch(feats, p)
        pred = ad.take(ad.reshape(dec.coords, (-1, 2)), np.flatnonzero(dec.mask[0]))
        gt = np.array([[0.3, 0.4], [0.6, 0.7], [0.2, 0.8]])
        ad.backward(scanpath_loss(pred, gt))
    for prefix in ("enc.", "prior.", "merge.", "sel."):
        assert max(np.abs(t.grad).max() for t in p.group(prefix).values() if t.grad is not None) > 0, prefix


def test_init_deterministic_and_named(params):
    again = init_params(ModelConfig(), seed=0)
    assert list(again) == list(params)
    assert all(again[k].data.tobytes() == params[k].data.tobytes() for k in params)
    assert {"enc.0.dw", "prior.mu_raw", "merge.7.w", "sel.mlp3b.w", "dom.fc2.w"} <= set(params)
    assert not np.array_equal(init_params(ModelConfig(), seed=1)["enc.0.pw"].data, params["enc.0.pw"].data)


def test_params_checkpoint_round_trip(tmp_path, params):
    cfg = ModelConfig(beta=10.0, noise="gaussian")
    p = init_params(cfg, 3)
    p.save(tmp_path / "m.spgn", {"seed": 3})
    back = ModelParams.load(tmp_path / "m.spgn")
    assert back.config == cfg
    assert all(back[k].data.tobytes() == p[k].data.tobytes() for k in p)


def test_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(beta=0)
    with pytest.raises(ValueError):
        ModelConfig(temperature=-1)
    with pytest.raises(ValueError):
        ModelConfig(height=60)
    cfg = ModelConfig()
    assert cfg.k_max == 20 and cfg.total_stride == 8 and cfg.latent_shape == (64, 8, 8)
    assert ModelConfig.from_dict(cfg.to_dict()) == cfg
