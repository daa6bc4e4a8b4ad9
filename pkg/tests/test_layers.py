import numpy as np
import pytest

from ipost.layers import (
    LayerSpec,
    NetworkGraph,
    build_ipost_cnn,
    conv,
    dense,
    dropout,
    dropout_forward,
    init_params,
    layer_backward,
    layer_forward,
    maxpool,
    softmax,
)
from ipost.tensor import ShapeError

from conftest import numerical_grad, rel_error


def test_softmax_examples():
    np.testing.assert_allclose(softmax([0.0, 0.0]), [0.5, 0.5])
    # direct evaluation of exp(x_i) / sum(exp(x))
    x = np.array([1.0, 2.0, 3.0])
    oracle = np.exp(x) / np.exp(x).sum()
    np.testing.assert_allclose(oracle, [0.09003, 0.24473, 0.66524], atol=5e-6)
    np.testing.assert_allclose(softmax(x), oracle, rtol=1e-12)
    np.testing.assert_allclose(softmax(x + 1000.0), softmax(x), rtol=1e-12)
    with pytest.raises(ShapeError):
        softmax(np.array([]))


def test_softmax_random_properties(rng):
    z = rng.normal(scale=20, size=(1000, 7))
    s = softmax(z)
    assert np.all(s > 0)
    np.testing.assert_allclose(s.sum(axis=1), 1.0, atol=1e-6)
    c = rng.normal(scale=50, size=(1000, 1))
    np.testing.assert_allclose(softmax(z + c), s, atol=1e-12)


def test_dropout_modes(rng):
    x = rng.normal(size=(4, 5))
    y, mask = dropout_forward(x, 0.0, seed=1, mode="train")
    np.testing.assert_array_equal(y, x)
    y, mask = dropout_forward(x, 0.7, seed=1, mode="eval")
    np.testing.assert_array_equal(y, x)
    assert mask.all()
    with pytest.raises(ValueError):
        dropout_forward(x, 1.0)


def test_dropout_keep_fraction():
    # Monte-Carlo count: kept fraction of 10^4 units at rate 0.5
    x = np.ones(10_000)
    y, mask = dropout_forward(x, 0.5, seed=42, mode="train")
    assert abs(mask.mean() - 0.5) < 0.02
    np.testing.assert_array_equal(y[mask == 1], 2.0)
    np.testing.assert_array_equal(y[mask == 0], 0.0)


def test_simple_layer_forwards(rng):
    out, _ = layer_forward(LayerSpec("relu"), {}, -np.abs(rng.normal(size=(2, 3))) - 0.1)
    assert not out.any()
    x = np.arange(8.0).reshape(1, 2, 2, 2)
    out, _ = layer_forward(LayerSpec("flatten"), {}, x)
    np.testing.assert_array_equal(out, [np.arange(8.0)])
    d = dense(3, 3)
    out, _ = layer_forward(d, {"W": np.eye(3), "b": np.zeros(3)}, np.array([[1.0, -2.0, 3.0]]))
    np.testing.assert_array_equal(out, [[1.0, -2.0, 3.0]])


def test_relu_backward_example():
    x = np.array([[-1.0, 2.0]])
    _, cache = layer_forward(LayerSpec("relu"), {}, x)
    g, _ = layer_backward(LayerSpec("relu"), {}, cache, np.ones((1, 2)))
    np.testing.assert_array_equal(g, [[0.0, 1.0]])


def test_maxpool_backward_example():
    x = np.array([[[[1.0, 2.0], [3.0, 4.0]]]])
    spec = maxpool(2, 2)
    _, cache = layer_forward(spec, {}, x)
    g, _ = layer_backward(spec, {}, cache, np.array([[[[2.5]]]]))
    np.testing.assert_array_equal(g, [[[[0, 0], [0, 2.5]]]])


def test_missing_cache():
    with pytest.raises(ValueError):
        layer_backward(LayerSpec("relu"), {}, None, np.ones(2))


def _check_layer(spec, x, rng, params=None, seed=0):
    """Compare layer_backward against central differences of <forward, R>."""
    params = params if params is not None else init_params(spec, rng)
    out, cache = layer_forward(spec, params, x, mode="train", seed=seed)
    r = rng.normal(size=out.shape)

    def f():
        return float(np.sum(layer_forward(spec, params, x, mode="train", seed=seed)[0] * r))

    gx, pg = layer_backward(spec, params, cache, r)
    errs = [rel_error(gx, numerical_grad(f, x))]
    for name, arr in params.items():
        errs.append(rel_error(pg[name], numerical_grad(f, arr)))
    return max(errs)


LAYER_CASES = {
    "conv": (conv(2, 3, 3, 1), (2, 2, 6, 5)),
    "conv_stride2": (conv(2, 2, 3, 2), (2, 2, 7, 7)),
    "maxpool": (maxpool(2, 2), (2, 2, 6, 6)),
    "relu": (LayerSpec("relu"), (3, 7)),
    "flatten": (LayerSpec("flatten"), (2, 2, 3, 3)),
    "dense": (dense(4, 3), (5, 4)),
    "dropout": (dropout(0.4), (3, 8)),
    "softmax": (LayerSpec("softmax"), (4, 5)),
    "l2norm": (LayerSpec("l2norm"), (4, 6)),
}


@pytest.mark.parametrize("name", sorted(LAYER_CASES))
def test_layer_gradients(name, rng):
    spec, shape = LAYER_CASES[name]
    worst = 0.0
    for trial in range(5):
        x = rng.normal(size=shape)
        if name == "relu":
            x[np.abs(x) < 1e-2] = 0.5  # keep away from the kink
        if name == "maxpool":
            # distinct values spaced 0.1 apart so eps cannot flip an argmax
            x = rng.permutation(x.size).reshape(shape) * 0.1
        worst = max(worst, _check_layer(spec, x, rng, seed=trial))
    assert worst < 1e-3


def test_dense_gradient_example(rng):
    # random 4 -> 3 dense layer against finite differences, eps 1e-3
    assert _check_layer(dense(4, 3), rng.normal(size=(1, 4)), rng) < 1e-3


def test_build_ipost_cnn_structure():
    net = build_ipost_cnn((1, 32, 32), 2, seed=0)
    kinds = [s.kind for s in net.layers]
    assert kinds[:9] == ["conv", "relu", "maxpool"] * 3
    assert kinds.count("conv") == 3 and kinds.count("maxpool") == 3
    assert kinds[9:] == ["flatten", "dropout", "dense", "relu", "dense", "softmax"]
    out = net.predict(np.random.default_rng(0).random((1, 32, 32)))
    assert out.shape == (2,)
    assert abs(out.sum() - 1) < 1e-9


def test_embedding_head_is_unit_norm(rng):
    net = build_ipost_cnn((1, 24, 24), embedding_dim=8, seed=3)
    assert net.layers[-1].kind == "l2norm"
    e = net.predict(rng.random((10, 1, 24, 24)))
    np.testing.assert_allclose(np.linalg.norm(e, axis=1), 1.0, atol=1e-9)


def test_parameter_count_matches_closed_form():
    net = build_ipost_cnn((3, 40, 36), 5, filters=(4, 6, 10), hidden=20, seed=0)
    # independent traversal: track spatial size by hand
    c, h, w = 3, 40, 36
    total = 0
    for f in (4, 6, 10):
        total += f * c * 3 * 3 + f
        h, w = (h - 2) // 2, (w - 2) // 2
        c = f
    flat = c * h * w
    total += flat * 20 + 20 + 20 * 5 + 5
    assert net.parameter_count() == total


def test_input_too_small():
    with pytest.raises(ShapeError):
        build_ipost_cnn((1, 12, 12), 2)


def test_shape_mismatch_names_layer():
    net = build_ipost_cnn((1, 32, 32), 2)
    with pytest.raises(ShapeError, match="layer 0"):
        net.forward(np.zeros((1, 30, 30)))
    bad = [dict(p) for p in net.params]
    bad[0] = {"W": np.zeros((8, 1, 2, 2)), "b": np.zeros(8)}
    with pytest.raises(ShapeError, match="layer 0"):
        NetworkGraph(net.layers, bad, (1, 32, 32))


def test_full_network_gradient(rng):
    net = build_ipost_cnn((1, 22, 22), 3, filters=(2, 3, 4), hidden=6, dropout_rate=0.3, seed=5)
    x = rng.random((2, 1, 22, 22))
    r = rng.normal(size=(2, 3))

    def f():
        return float(np.sum(net.forward(x, seed=9, mode="train")[0] * r))

    _, caches = net.forward(x, seed=9, mode="train")
    _, grads = net.backward(caches, r)
    params = net.parameters()
    assert [g.shape for g in grads] == [p.shape for p in params]
    for p, g in zip(params, grads):
        assert rel_error(g, numerical_grad(f, p, eps=1e-5)) < 1e-3


def test_eval_deterministic_and_dropout_free(rng):
    net = build_ipost_cnn((1, 32, 32), 2, dropout_rate=0.9, seed=1)
    x = rng.random((3, 1, 32, 32))
    a = net.forward(x, seed=1, mode="eval")[0]
    b = net.forward(x, seed=2, mode="eval")[0]
    assert a.tobytes() == b.tobytes()
    train = net.forward(x, seed=1, mode="train")[0]
    assert not np.allclose(train, a)


def test_forward_touches_each_layer_once(monkeypatch, rng):
    import ipost.layers as L

    seen = []
    original = L.layer_forward

    def spy(spec, params, x, mode="eval", seed=0):
        seen.append(spec)
        return original(spec, params, x, mode, seed)

    monkeypatch.setattr(L, "layer_forward", spy)
    net = build_ipost_cnn((1, 32, 32), 2)
    net.forward(rng.random((1, 32, 32)))
    assert seen == net.layers


def test_layer_spec_tokens_roundtrip():
    for spec in (conv(3, 8, 3, 2), maxpool(3, 1), dense(10, 4), dropout(0.25), LayerSpec("softmax")):
        tokens = [spec.kind] + [str(v) for v in spec.hyperparams()]
        assert LayerSpec.from_tokens(tokens) == spec
    with pytest.raises(ValueError):
        LayerSpec("bogus")
    with pytest.raises(ValueError):
        dropout(1.0)


def test_full_network_gradient_12x12(rng):
    # three 3x3 blocks need 22 px; on 12x12 the stack only fits with 1x1 kernels
    net = build_ipost_cnn((1, 12, 12), 2, filters=(2, 3, 3), kernel=1, hidden=5, dropout_rate=0.0, seed=8)
    x = rng.random((1, 12, 12))
    r = rng.normal(size=2)

    def f():
        return float(np.sum(net.forward(x, mode="train")[0] * r))

    _, caches = net.forward(x, mode="train")
    _, grads = net.backward(caches, r)
    for p, g in zip(net.parameters(), grads):
        assert g.shape == p.shape
        assert rel_error(g, numerical_grad(f, p, eps=1e-5)) < 1e-3
