import numpy as np
import pytest

import gradcheck_cases as cases
from gazefatigue.nn.gradcheck import relative_error
from gazefatigue.nn.layers import (BatchNorm1d, Conv1d, GlobalAvgPool1d, Linear, MaxPool1d,
                                   MaxPoolSame1d, ReLU, same_padding, softmax)


@pytest.mark.parametrize("name", sorted(cases.LAYER_CASES))
def test_layer_gradients(name):
    assert cases.run_layer_cases(name, n=cases.N_INSTANCES) <= cases.TOL


def test_softmax_bce_gradient():
    assert cases.run_loss_cases() <= cases.TOL


def _naive_conv(x, w, b, d, left):
    B, cin, L = x.shape
    cout, _, k = w.shape
    out = np.zeros((B, cout, L))
    for bi in range(B):
        for o in range(cout):
            for t in range(L):
                s = b[o] if b is not None else 0.0
                for c in range(cin):
                    for j in range(k):
                        src = t - left + j * d
                        if 0 <= src < L:
                            s += w[o, c, j] * x[bi, c, src]
                out[bi, o, t] = s
    return out


@pytest.mark.parametrize("k, d", [(1, 1), (2, 1), (3, 2), (8, 1), (5, 4), (4, 3)])
def test_conv_matches_loop(k, d, rng):
    layer = Conv1d(3, 2, k, rng, dilation=d)
    x = rng.normal(size=(2, 3, 17))
    left, right = same_padding(k, d)
    assert left + right == (k - 1) * d and right - left in (0, 1)
    ref = _naive_conv(x, layer.params["weight"], layer.params["bias"], d, left)
    assert np.allclose(layer.forward(x), ref, atol=1e-12)


def test_conv_large_input_uses_same_result(rng, monkeypatch):
    layer = Conv1d(4, 3, 5, rng, dilation=2)
    x = rng.normal(size=(3, 4, 50))
    a = layer.forward(x)
    monkeypatch.setattr(Conv1d, "IM2COL_LIMIT", 0)
    assert np.allclose(layer.forward(x), a, atol=1e-12)


def test_conv_integer_padding_length(rng):
    layer = Conv1d(2, 2, 3, rng, padding=1)
    assert layer.forward(rng.normal(size=(1, 2, 10))).shape == (1, 2, 10)
    layer = Conv1d(2, 2, 3, rng, padding=0)
    assert layer.forward(rng.normal(size=(1, 2, 10))).shape == (1, 2, 8)


def test_maxpool_floor():
    x = np.arange(11.0).reshape(1, 1, 11)
    assert MaxPool1d(2).forward(x).tolist() == [[[1, 3, 5, 7, 9]]]
    assert MaxPool1d(4).forward(x).shape == (1, 1, 2)


def test_maxpool_same_keeps_length():
    x = np.array([[[1.0, 5.0, 2.0, 0.0, 3.0]]])
    assert MaxPoolSame1d(3).forward(x).tolist() == [[[5, 5, 5, 3, 3]]]


def test_batchnorm_eval_independent_of_batch(rng):
    bn = BatchNorm1d(3)
    for _ in range(5):
        bn.forward(rng.normal(1, 2, (8, 3, 6)), train=True)
    x = rng.normal(size=(6, 3, 6))
    full = bn.forward(x, train=False)
    part = bn.forward(x[2:4], train=False)
    assert np.array_equal(full[2:4], part)


def test_batchnorm_running_stats():
    bn = BatchNorm1d(1, momentum=0.1)
    x = np.array([[1.0], [3.0]])
    bn.forward(x, train=True)
    assert bn.buffers["running_mean"][0] == pytest.approx(0.2)
    # unbiased batch variance is 2
    assert bn.buffers["running_var"][0] == pytest.approx(0.9 + 0.2)


def test_gap_and_linear_shapes(rng):
    x = rng.normal(size=(4, 5, 9))
    assert np.allclose(GlobalAvgPool1d().forward(x), x.mean(axis=2))
    assert Linear(5, 3, rng).forward(x.mean(axis=2)).shape == (4, 3)


def test_relu_masks():
    assert ReLU().forward(np.array([-1.0, 0.0, 2.0])).tolist() == [0, 0, 2]


def test_softmax_stable():
    p = softmax(np.array([[1000.0, 0.0], [0.0, 0.0]]))
    assert np.allclose(p, [[1, 0], [0.5, 0.5]]) and np.isfinite(p).all()


def test_relative_error_floor():
    assert relative_error(np.zeros(3), np.full(3, 1e-11)) < 1e-5
    assert relative_error(np.ones(3), np.ones(3) * 1.001) == pytest.approx(1e-3, rel=1e-2)
