import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.signal import correlate

from boostmatch.errors import ConfigurationError, ContractError, DimensionError
from boostmatch.model import (
    FenConfig,
    MatchModel,
    SdnConfig,
    fen_forward,
    hinge_loss,
    pair_score,
    predict_label,
    signed_labels,
    squared_hinge_grad,
    squared_hinge_loss,
    symmetric_pair_loss,
)
from boostmatch.tensor_core import Tensor, take
from gradcheck import numerical_gradient, relative_error

TINY_FEN = FenConfig(input_size=16, conv_layers=2, base_kernels=4, feature_dim=8)
TINY_SDN = SdnConfig(hidden_sizes=(8, 4))


def tiny_model(seed=0, dtype=np.float64):
    return MatchModel(TINY_FEN, TINY_SDN, seed=seed, dtype=dtype)


# ------------------------------------------------------------------ configs


def test_paper_geometry():
    fc = FenConfig.paper()
    assert fc.channels() == [16, 32, 64, 128, 256, 512, 1024]
    assert fc.final_spatial == 2
    assert SdnConfig.paper().hidden_sizes == (1024, 512, 256)


def test_desk_geometry():
    fc = FenConfig()
    assert (fc.input_size, fc.conv_layers, fc.feature_dim) == (64, 5, 256)
    assert fc.final_spatial == 2 and fc.channels()[-1] == 256
    assert fc.flat_dim == 2 * 2 * 256


@pytest.mark.parametrize("size,layers", [(64, 6), (32, 5), (48, 5)])
def test_fen_config_rejects_degenerate_pooling(size, layers):
    with pytest.raises(ConfigurationError):
        FenConfig(input_size=size, conv_layers=layers)


def test_paper_trace_shapes():
    # spatial halving per layer, without building the 13M-parameter model
    fc = FenConfig.paper()
    sizes = [fc.input_size // 2 ** i for i in range(fc.conv_layers + 1)]
    assert sizes == [256, 128, 64, 32, 16, 8, 4, 2]


def test_desk_forward_shape_and_range():
    model = MatchModel(seed=1)
    rng = np.random.default_rng(0)
    f = fen_forward(model, rng.random((64, 64)))
    assert f.shape == (256,)
    assert np.all(np.abs(f) <= 1.0)


def test_sdn_input_width_is_twice_feature_dim():
    model = tiny_model()
    assert model.params["sdn.fc0.weight"].shape == (8, 16)
    assert model.params["sdn.head.weight"].shape == (1, 4)


def test_wrong_input_size_raises():
    model = tiny_model()
    with pytest.raises(DimensionError):
        fen_forward(model, np.zeros((17, 16)))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.1, 1e4))
def test_features_bounded_for_arbitrary_inputs(seed, scale):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((3, 1, 16, 16)) * scale
    f = tiny_model(seed % 7).features(x).data
    assert np.all(np.abs(f) <= 1.0)


def test_eval_mode_is_deterministic():
    model = tiny_model()
    img = np.random.default_rng(3).random((16, 16))
    assert np.array_equal(fen_forward(model, img), fen_forward(model, img))


# ------------------------------------------------------------------ symmetry


def test_pair_score_symmetry_100_draws():
    rng = np.random.default_rng(11)
    worst = 0.0
    for draw in range(100):
        model = tiny_model(seed=draw, dtype=np.float32)
        q, t = rng.random((2, 16, 16))
        worst = max(worst, abs(pair_score(q, t, model) - pair_score(t, q, model)))
    assert worst <= 1e-6


def test_zero_sdn_returns_head_bias():
    model = tiny_model()
    for name, p in model.params.items():
        if name.startswith("sdn."):
            p.data = np.zeros_like(p.data)
    model.params["sdn.head.bias"].data = np.array([0.375])
    img = np.random.default_rng(0).random((16, 16))
    assert pair_score(img, img, model) == 0.375


def _leaky(x, slope=0.01):
    return np.where(x > 0, x, slope * x)


def reference_score(model, q, t):
    """Recompute the symmetric score from raw layer formulas (eval mode)."""
    p = {k: v.data.astype(np.float64) for k, v in model.params.items()}

    def fen(img):
        x = img[None].astype(np.float64)
        for i in range(model.fen_config.conv_layers):
            w, b = p[f"fen.conv{i}.weight"], p[f"fen.conv{i}.bias"]
            padded = np.pad(x, ((0, 0), (1, 1), (1, 1)))
            y = np.stack([
                sum(correlate(padded[c], w[o, c], mode="valid") for c in range(x.shape[0])) + b[o]
                for o in range(w.shape[0])
            ])
            st = model.bn_states[i]
            y = (y - st.running_mean[:, None, None]) / np.sqrt(st.running_var[:, None, None] + 1e-5)
            y = y * p[f"fen.bn{i}.gamma"][:, None, None] + p[f"fen.bn{i}.beta"][:, None, None]
            y = _leaky(y)
            c, h, wd = y.shape
            x = y.reshape(c, h // 2, 2, wd // 2, 2).max(axis=(2, 4))
        return np.tanh(p["fen.fc.weight"] @ x.ravel() + p["fen.fc.bias"])

    def sdn(v):
        n = len(model.sdn_config.hidden_sizes)
        for i in range(n):
            v = p[f"sdn.fc{i}.weight"] @ v + p[f"sdn.fc{i}.bias"]
            if i < n - 1:
                v = np.tanh(v)
        return float((p["sdn.head.weight"] @ v + p["sdn.head.bias"])[0])

    fq, ft = fen(q), fen(t)
    return (sdn(np.concatenate([fq, ft])) + sdn(np.concatenate([ft, fq]))) / 2


@pytest.mark.parametrize("seed", range(5))
def test_score_matches_reimplementation(seed):
    model = tiny_model(seed)
    rng = np.random.default_rng(100 + seed)
    for st in model.bn_states:  # non-trivial running statistics
        st.running_mean = rng.standard_normal(st.running_mean.shape)
        st.running_var = rng.random(st.running_var.shape) + 0.5
    q, t = rng.random((2, 16, 16))
    assert pair_score(q, t, model) == pytest.approx(reference_score(model, q, t), abs=1e-10)


def test_model_gradient_matches_finite_differences():
    model = tiny_model(seed=2)
    rng = np.random.default_rng(5)
    images = rng.random((4, 1, 16, 16))
    labels = np.array([1.0, -1.0, 1.0])
    qi, ti = np.array([0, 1, 2]), np.array([1, 2, 3])

    def loss_value():
        feats = model.features(images, train=True)
        a, b = model.both_orders(take(feats, qi), take(feats, ti))
        return symmetric_pair_loss(a, b, labels)

    loss = loss_value()
    model.params.zero_grad()
    loss.backward()
    for name in ("sdn.head.weight", "sdn.fc0.weight", "fen.fc.weight", "fen.conv0.weight", "fen.bn1.gamma"):
        param = model.params[name]
        analytic = param.grad.copy()

        def f(x, param=param):
            saved = param.data
            param.data = x
            out = float(loss_value().data)
            param.data = saved
            return out

        numeric = numerical_gradient(f, param.data.copy(), h=1e-5)
        assert relative_error(analytic, numeric) < 1e-4, name


# ------------------------------------------------------------------ loss


@pytest.mark.parametrize(
    "score,label,expected",
    [(1.0, 1, 0.0), (0.0, 1, 0.25), (-2.0, 1, 2.25), (-1.0, -1, 0.0), (0.5, -1, 0.5625)],
)
def test_squared_hinge_examples(score, label, expected):
    assert squared_hinge_loss(score, label, delta=2.0) == expected


def test_squared_hinge_gradient_example():
    assert squared_hinge_grad(-2.0, 1, delta=2.0) == -1.5
    s = Tensor(np.array([-2.0]), requires_grad=True)
    squared_hinge_loss(s, [1], delta=2.0).backward()
    assert s.grad[0] == -1.5


def test_squared_hinge_rejects_bad_labels():
    with pytest.raises(ContractError):
        squared_hinge_loss(0.3, 0)
    with pytest.raises(ContractError):
        squared_hinge_loss(0.3, 1, delta=0.0)


@settings(max_examples=200)
@given(st.floats(-10, 10), st.sampled_from([1, -1]), st.floats(0.1, 10))
def test_loss_zero_iff_margin_satisfied(score, label, delta):
    loss = squared_hinge_loss(score, label, delta)
    assert loss >= 0
    assert (loss == 0) == (label * score >= 1)


def test_loss_gradient_finite_differences_20_instances():
    rng = np.random.default_rng(0)
    checked = 0
    h = 1e-6
    while checked < 20:
        scores = rng.uniform(-3, 3, size=5)
        labels = rng.choice([-1.0, 1.0], size=5)
        if np.any(np.abs(1 - labels * scores) <= 1e-4):
            continue
        delta = rng.uniform(0.5, 4)
        t = Tensor(scores.copy(), requires_grad=True)
        squared_hinge_loss(t, labels, delta).backward()
        numeric = numerical_gradient(lambda x: float(np.mean(squared_hinge_loss(x, labels, delta))), scores, h=h)
        assert relative_error(t.grad, numeric) < 1e-4
        checked += 1


def test_plain_hinge_diagnostic():
    assert hinge_loss(0.0, 1) == 1.0
    assert hinge_loss(2.0, 1) == 0.0


def test_signed_labels():
    np.testing.assert_array_equal(signed_labels([0, 1, 1, 0]), [-1, 1, 1, -1])
    with pytest.raises(ContractError):
        signed_labels([2])


@pytest.mark.parametrize("score,expected", [(0.7, 1), (-0.7, -1), (0.0, -1), (1e-300, 1)])
def test_predict_label(score, expected):
    assert predict_label(score) == expected
