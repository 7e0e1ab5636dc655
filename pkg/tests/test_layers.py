import numpy as np
import numpy.testing as npt
import pytest

from modalign import layers as Lyr
from modalign.errors import ShapeMismatch

import oracles

# gradient checks run in float64 so finite differences are trustworthy


def _check_layer_grads(layer, x, training=True, rng_seed=0, step=1e-5, rtol=1e-4):
    """Backprop vs central differences, for the input and every parameter."""
    cot_rng = np.random.default_rng(99)

    def run(inp):
        rng = np.random.default_rng(rng_seed)  # fixed dropout mask per call
        return layer.forward(inp, training=training, rng=rng)

    y = run(x)
    cot = cot_rng.normal(size=y.shape)

    def loss_of_input(inp):
        return float(np.sum(run(inp) * cot))

    run(x)
    dx = layer.backward(cot)
    oracles.assert_grads_close(dx, oracles.fd_grad(loss_of_input, x, step), rtol=rtol)

    for name, p in layer.params().items():
        def loss_of_param(val, name=name, p=p):
            orig = p.copy()
            p[...] = val
            out = loss_of_input(x)
            p[...] = orig
            return out

        run(x)
        layer.backward(cot)
        analytic = layer.grads()[name]
        numeric = oracles.fd_grad(loss_of_param, p.copy(), step)
        oracles.assert_grads_close(analytic, numeric, rtol=rtol)


def test_conv_forward_matches_direct_convolution():
    rng = np.random.default_rng(0)
    conv = Lyr.Conv2D(2, 3, rng, dtype=np.float64)
    x = rng.normal(size=(2, 5, 5, 2))
    y = conv.forward(x)
    # direct triple loop with zero padding
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    for n in (0, 1):
        for i in (0, 2, 4):
            for j in (1, 3):
                ref = conv.bias.copy()
                for ki in range(3):
                    for kj in range(3):
                        ref = ref + xp[n, i + ki, j + kj] @ conv.kernel[ki, kj]
                npt.assert_allclose(y[n, i, j], ref, atol=1e-12)


def test_conv_gradients():
    rng = np.random.default_rng(1)
    conv = Lyr.Conv2D(2, 4, rng, dtype=np.float64)
    _check_layer_grads(conv, rng.normal(size=(2, 6, 6, 2)))


def test_conv_rejects_wrong_channels():
    conv = Lyr.Conv2D(3, 4, np.random.default_rng(0))
    with pytest.raises(ShapeMismatch):
        conv.forward(np.zeros((1, 4, 4, 2), dtype=np.float32))


def test_batchnorm_train_normalizes_and_tracks_running_stats():
    rng = np.random.default_rng(2)
    bn = Lyr.BatchNorm(3, dtype=np.float64, momentum=0.5)
    x = rng.normal(loc=4.0, scale=2.0, size=(4, 5, 5, 3))
    y = bn.forward(x, training=True)
    npt.assert_allclose(y.mean(axis=(0, 1, 2)), 0.0, atol=1e-10)
    npt.assert_allclose(y.std(axis=(0, 1, 2)), 1.0, atol=1e-3)
    npt.assert_allclose(bn.running_mean, 0.5 * x.mean(axis=(0, 1, 2)), atol=1e-12)


def test_batchnorm_eval_uses_running_stats():
    bn = Lyr.BatchNorm(2, dtype=np.float64)
    bn.running_mean = np.array([1.0, -1.0])
    bn.running_var = np.array([4.0, 0.25])
    x = np.ones((1, 2, 2, 2))
    y = bn.forward(x, training=False)
    npt.assert_allclose(y[0, 0, 0], [(1 - 1) / np.sqrt(4 + 1e-5), (1 + 1) / np.sqrt(0.25 + 1e-5)],
                        atol=1e-9)


def test_batchnorm_gradients_train_and_eval():
    rng = np.random.default_rng(3)
    bn = Lyr.BatchNorm(3, dtype=np.float64)
    _check_layer_grads(bn, rng.normal(size=(3, 4, 4, 3)), training=True)
    bn2 = Lyr.BatchNorm(3, dtype=np.float64)
    bn2.running_mean = rng.normal(size=3)
    bn2.running_var = rng.uniform(0.5, 2.0, size=3)
    _check_layer_grads(bn2, rng.normal(size=(3, 4, 4, 3)), training=False)


def test_relu_and_gradient():
    relu = Lyr.ReLU()
    x = np.array([[-1.0, 0.5], [2.0, -3.0]])
    npt.assert_array_equal(relu.forward(x), [[0, 0.5], [2.0, 0]])
    npt.assert_array_equal(relu.backward(np.ones_like(x)), [[0, 1], [1, 0]])


def test_maxpool_even_input_and_gradient():
    rng = np.random.default_rng(4)
    pool = Lyr.MaxPool2x2()
    x = rng.normal(size=(2, 6, 6, 2))
    y = pool.forward(x)
    assert y.shape == (2, 3, 3, 2)
    npt.assert_allclose(y[0, 0, 0, 0], x[0, :2, :2, 0].max())
    _check_layer_grads(pool, x)


def test_maxpool_odd_input_pads_same():
    rng = np.random.default_rng(5)
    pool = Lyr.MaxPool2x2()
    x = rng.normal(size=(1, 3, 3, 1))
    y = pool.forward(x)
    assert y.shape == (1, 2, 2, 1)
    npt.assert_allclose(y[0, 1, 1, 0], x[0, 2, 2, 0])  # lone corner survives
    _check_layer_grads(pool, x)


def test_dense_gradients_and_shape_check():
    rng = np.random.default_rng(6)
    dense = Lyr.Dense(5, 3, rng, dtype=np.float64)
    _check_layer_grads(dense, rng.normal(size=(4, 5)))
    with pytest.raises(ShapeMismatch):
        dense.forward(np.zeros((4, 6)))


def test_dropout_eval_identity_train_scales():
    drop = Lyr.Dropout(0.5)
    x = np.ones((4, 100))
    npt.assert_array_equal(drop.forward(x, training=False), x)
    y = drop.forward(x, training=True, rng=np.random.default_rng(0))
    kept = y != 0
    npt.assert_allclose(y[kept], 2.0)  # inverted scaling
    assert 0.3 < kept.mean() < 0.7
    _check_layer_grads(Lyr.Dropout(0.3), np.random.default_rng(7).normal(size=(3, 8)))


def test_residual_block_gradients_and_identity_path():
    rng = np.random.default_rng(8)
    block = Lyr.ResidualBlock(3, rng, dtype=np.float64)
    x = rng.normal(size=(2, 5, 5, 3))
    _check_layer_grads(block, x)


def test_sequential_roundtrip_params_set_get():
    rng = np.random.default_rng(9)
    seq = Lyr.Sequential(
        [
            ("conv", Lyr.Conv2D(2, 3, rng, dtype=np.float64)),
            ("bn", Lyr.BatchNorm(3, dtype=np.float64)),
            ("relu", Lyr.ReLU()),
        ]
    )
    snap = {k: v.copy() for k, v in {**seq.params(), **seq.state()}.items()}
    for v in seq.params().values():
        v += 1.0
    seq.set_params(snap)
    for k, v in seq.params().items():
        npt.assert_array_equal(v, snap[k])
    _check_layer_grads(seq, rng.normal(size=(2, 4, 4, 2)))


def test_adam_zero_grad_fresh_state_keeps_params():
    from modalign.trainer import AdamState, adam_step

    p = np.array([1.0, 2.0])
    state = AdamState()
    adam_step({"p": p}, {"p": np.zeros(2)}, state, lr=0.1)
    npt.assert_array_equal(p, [1.0, 2.0])
