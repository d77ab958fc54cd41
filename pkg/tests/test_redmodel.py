import numpy as np
import pytest

from redeeg import autodiff as ad
from redeeg.redmodel import ModelConfig, REDNetwork


def tiny_cwt(**kw):
    base = dict(variant="cwt", T=64, T_B=100, f_min=5.0, f_max=30.0, n_scales=4, n_filters=2,
                lstm_units=3, hidden_units=3)
    base.update(kw)
    return ModelConfig(**base)


@pytest.mark.parametrize("variant", ["time", "cwt"])
def test_default_output_shape_and_simplex(variant):
    cfg = ModelConfig(variant=variant)
    net = REDNetwork(cfg, seed=0)
    x = np.random.default_rng(0).standard_normal((1, cfg.input_length))
    with ad.no_grad():
        p = net.forward(x).data
    assert p.shape == (1, 500, 2)
    assert np.max(np.abs(p.sum(-1) - 1.0)) <= 1e-12
    assert np.all(p >= 0)


def test_input_length_includes_border():
    assert ModelConfig(variant="cwt").input_length == 4000 + 2 * 1000
    assert ModelConfig().input_length == 4000


def test_wrong_length_message():
    net = REDNetwork(ModelConfig(T=64, n_filters=2, lstm_units=2, hidden_units=2))
    with pytest.raises(ValueError, match="expected segments of 64 samples"):
        net.forward(np.zeros((1, 72)))


@pytest.mark.parametrize("kw", [dict(variant="x"), dict(T=63), dict(C=2), dict(pooling="min"),
                                dict(drop_rate_1=1.0), dict(lstm_units=0)])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        ModelConfig(**kw)


def test_cwt_border_too_small():
    with pytest.raises(ValueError, match="insufficient"):
        tiny_cwt(T_B=50)


def test_defaults_per_variant():
    assert ModelConfig().n_filters == 64
    assert ModelConfig(variant="cwt").n_filters == 32


def test_seeded_init_and_inference_determinism():
    cfg = ModelConfig(T=64, n_filters=2, lstm_units=3, hidden_units=3)
    a, b = REDNetwork(cfg, seed=3), REDNetwork(cfg, seed=3)
    x = np.random.default_rng(1).standard_normal((2, 64))
    assert np.array_equal(a.predict_proba(x), b.predict_proba(x))
    assert not np.array_equal(a.predict_proba(x), REDNetwork(cfg, seed=4).predict_proba(x))


def test_beta_parameter():
    net = REDNetwork(tiny_cwt())
    assert net.beta == pytest.approx(0.5)
    assert "cwt/log_beta" in net.params
    assert REDNetwork(ModelConfig(T=64, n_filters=2)).beta is None


def test_log_beta_gradient_matches_finite_difference():
    cfg = tiny_cwt()
    net = REDNetwork(cfg, seed=0)
    rng = np.random.default_rng(0)
    x = rng.standard_normal((2, cfg.input_length))
    y = rng.integers(0, 2, (2, cfg.output_length))
    lb = net.params["cwt/log_beta"]

    def loss():
        return ad.cross_entropy(net.forward(x, training=False), y)

    for p in net.parameters():
        p.grad = None
    loss().backward()
    g = float(np.asarray(lb.grad).ravel()[0])
    h = 1e-5
    base = lb.data.copy()
    vals = []
    for sgn in (1, -1):
        lb.data = base + sgn * h
        with ad.no_grad():
            vals.append(float(loss().data))
    lb.data = base
    fd = (vals[0] - vals[1]) / (2 * h)
    assert g == pytest.approx(fd, rel=1e-5, abs=1e-9)


def test_save_load_roundtrip(tmp_path):
    cfg = tiny_cwt()
    net = REDNetwork(cfg, seed=2)
    net.save(tmp_path / "m", meta={"tag": "x"})
    other, meta = REDNetwork.load(tmp_path / "m")
    assert meta["tag"] == "x" and other.config == cfg
    x = np.random.default_rng(3).standard_normal((1, cfg.input_length))
    assert np.array_equal(net.predict_proba(x), other.predict_proba(x))


def test_training_mode_needs_rng():
    net = REDNetwork(ModelConfig(T=64, n_filters=2, lstm_units=2, hidden_units=2))
    with pytest.raises(ValueError, match="rng"):
        net.forward(np.zeros((1, 64)), training=True)


def test_max_pooling_variant():
    cfg = ModelConfig(T=64, n_filters=2, lstm_units=2, hidden_units=2, pooling="max")
    p = REDNetwork(cfg).predict_proba(np.random.default_rng(0).standard_normal((3, 64)))
    assert p.shape == (3, 8)
