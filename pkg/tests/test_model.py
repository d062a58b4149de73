import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from urbanlrp.errors import ArchitectureError
from urbanlrp.nn import (BatchNorm, Conv2D, Dense, Dropout, MaxPool, argmax_label, backward, build_dense_model,
                         build_model, validate_canonical)
from urbanlrp.nn.layers import softmax
from urbanlrp.rng import Xoshiro256


@pytest.fixture(scope="module")
def canonical():
    return build_model(seed=0)


def test_canonical_architecture(canonical):
    assert validate_canonical(canonical)
    convs = [l for l in canonical.layers if isinstance(l, Conv2D)]
    assert [c.out_channels for c in convs] == [32, 32, 64, 64, 128]
    assert all(c.kernel == 3 and c.stride == 1 and c.padding == "same" for c in convs)
    pooled = [canonical.shapes[i + 1] for i, l in enumerate(canonical.layers) if isinstance(l, MaxPool)]
    assert [s[0] for s in pooled] == [110, 55, 27, 13, 6]
    assert pooled[-1] == (6, 6, 128)
    assert [l.units for l in canonical.layers if isinstance(l, Dense)] == [512, 512, 10]
    assert [l.rate for l in canonical.layers if isinstance(l, Dropout)] == [0.4, 0.4]


def test_he_uniform_init_bounds_and_zero_biases(canonical):
    for layer in canonical.layers:
        if isinstance(layer, (Conv2D, Dense)):
            limit = np.sqrt(6 / layer.fan_in)
            W = layer.params["W"]
            assert np.abs(W).max() <= limit
            assert np.abs(W).max() > 0.9 * limit
            assert np.all(layer.params["b"] == 0)
        if isinstance(layer, BatchNorm):
            assert np.all(layer.params["gamma"] == 1) and np.all(layer.params["beta"] == 0)


def test_build_is_deterministic():
    a, b = build_model(3, input_size=32, channels=(4, 8), dense_units=8), build_model(3, input_size=32, channels=(4, 8), dense_units=8)
    for (_, _, x), (_, _, y) in zip(a.state(), b.state()):
        assert np.array_equal(x, y)


def test_validate_rejects_reduced_model():
    with pytest.raises(ArchitectureError):
        validate_canonical(build_model(0, input_size=64, channels=(8, 8, 16), dense_units=16, n_classes=4))


def test_forward_shape_and_normalization(canonical, rng):
    p = canonical.forward(rng.uniform(0, 1, (220, 220, 3)))
    assert p.shape == (1, 10)
    assert abs(p.sum() - 1) < 1e-6 and np.all(p >= 0)


def test_forward_shape_mismatch(canonical):
    with pytest.raises(ArchitectureError):
        canonical.forward(np.zeros((1, 64, 64, 3)))


@pytest.mark.xfail(strict=True, reason="He-uniform init gives logits with std ~1.3 at 220x220, so some "
                                       "probabilities leave [0.02, 0.3]; see decisions ledger")
def test_fresh_model_near_uniform():
    probs = []
    for seed in range(10):
        model = build_model(seed)
        x = np.random.default_rng(seed).uniform(0, 1, (1, 220, 220, 3))
        probs.append(model.forward(x))
    probs = np.concatenate(probs)
    assert np.all((probs >= 0.02) & (probs <= 0.3))


def test_zero_dense_stub_is_exactly_uniform():
    model = build_dense_model((4, 4, 3), hidden=(), n_classes=10)
    for layer in model.layers:
        for k in layer.params:
            layer.params[k][...] = 0
    assert np.array_equal(model.forward(np.zeros((4, 4, 3))), np.full((1, 10), 0.1, dtype=np.float32))


def test_argmax_ties_to_lowest_id():
    assert argmax_label(np.full(10, 0.1)) == 0
    assert argmax_label(np.array([0.1, 0.4, 0.4, 0.1])) == 1


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-30, 30), min_size=2, max_size=12), st.randoms(use_true_random=False))
def test_softmax_sums_to_one_and_permutes(z, r):
    z = np.array(z)
    p = softmax(z)
    assert abs(p.sum() - 1) < 1e-6
    perm = list(range(z.size))
    r.shuffle(perm)
    np.testing.assert_allclose(softmax(z[perm]), p[perm], rtol=1e-12, atol=1e-15)


def _dense_stub(seed=0):
    return build_dense_model((3, 3, 1), hidden=(5,), n_classes=4, seed=seed).astype(np.float64)


def test_backward_perfect_prediction(rng):
    model = _dense_stub()
    last = model.layers[-2]
    last.params["b"] = np.array([0.0, 800.0, 0.0, 0.0])
    model.train()
    grads, loss = backward(model, rng.uniform(0, 1, (3, 3, 1)), 1, 1.0)
    assert loss == 0.0
    assert np.all(grads[(len(model.layers) - 2, "b")] == 0)
    assert np.all(grads[(len(model.layers) - 2, "W")] == 0)


def test_backward_weight_scales_loss_and_gradients(rng):
    model = _dense_stub()
    x = rng.uniform(0, 1, (3, 3, 1))
    g1, l1 = backward(model, x, 2, 1.0)
    g1 = {k: v.copy() for k, v in g1.items()}
    g2, l2 = backward(model, x, 2, 2.0)
    assert l2 == pytest.approx(2 * l1, rel=1e-12)
    for k in g1:
        np.testing.assert_allclose(g2[k], 2 * g1[k], rtol=1e-12, atol=0)


def test_batchnorm_inference_matches_train_with_batch_stats(rng):
    bn = BatchNorm(3)
    for k in bn.params:
        bn.params[k] = bn.params[k].astype(np.float64)
    bn.params["gamma"] = rng.uniform(0.5, 2, 3)
    bn.params["beta"] = rng.normal(size=3)
    x = rng.normal(2.0, 3.0, size=(5, 4, 4, 3))
    train_out = bn.forward(x, train=True)
    bn.params["running_mean"] = x.mean(axis=(0, 1, 2))
    bn.params["running_var"] = x.var(axis=(0, 1, 2))
    np.testing.assert_allclose(bn.forward(x, train=False), train_out, atol=1e-6)


@pytest.mark.parametrize("rate", [0.1, 0.4, 0.7])
def test_dropout_statistics(rate):
    layer = Dropout(rate)
    layer.rng = Xoshiro256(42)
    x = np.ones((1, 10_000))
    out = layer.forward(x, train=True)
    zero_frac = np.mean(out == 0)
    assert abs(zero_frac - rate) <= 0.02
    np.testing.assert_allclose(out[out != 0], 1 / (1 - rate))
    assert layer.forward(x, train=False) is x


def test_maxpool_routes_to_argmax(rng):
    pool = MaxPool(2, 2)
    x = rng.normal(size=(2, 6, 7, 3))
    pool.forward(x)
    d = rng.normal(size=(2, 3, 3, 3))
    dx = pool.backward(d)
    assert dx.sum() == pytest.approx(d.sum())
    assert np.count_nonzero(dx) == d.size
    assert np.all(dx[:, :, 6, :] == 0)
    chosen = np.argwhere(dx != 0)
    for n, i, j, c in chosen:
        win = x[n, 2 * (i // 2):2 * (i // 2) + 2, 2 * (j // 2):2 * (j // 2) + 2, c]
        assert x[n, i, j, c] == win.max()
