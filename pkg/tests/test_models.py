import json

import numpy as np
import pytest

import param_oracle
from gazefatigue.errors import InvalidSpec, NonFiniteInput, ShapeMismatch
from gazefatigue.nn import checkpoint
from gazefatigue.nn.gradcheck import check_model
from gazefatigue.nn.layers import Conv1d, Linear
from gazefatigue.nn.models import (ModelKind, ModelSpec, build_ekyt, build_fcn, build_inception,
                                   build_mcdcnn, build_model, build_tcn, build_tlenet, forward,
                                   mcdcnn_flat_width, tlenet_flat_width)

LENGTHS = (1250, 2500, 3750, 5000)


@pytest.mark.parametrize("kind", [k.value for k in ModelKind])
@pytest.mark.parametrize("L", LENGTHS)
def test_parameter_count_matches_oracle(kind, L):
    assert build_model(ModelSpec(kind, L)).n_parameters() == param_oracle.COUNTS[kind](L)


def test_oracle_spot_values():
    # a few counts worked by hand
    assert param_oracle.fcn(1250) == (4 * 128 * 8 + 128 + 256 + 128 * 256 * 5 + 256 + 512
                                      + 256 * 128 * 3 + 128 + 256 + 128 * 2 + 2)
    assert param_oracle.tcn(1250) == 4 * 64 * 3 + 64 + 64 * 128 * 3 + 128 + 128 * 256 * 3 + 256 + 514
    assert param_oracle.tlenet(1250) - param_oracle.tlenet(2500) == -20 * (312 - 156) * 500


def test_ekyt_widths():
    m = build_ekyt(ModelSpec("EKYT", 2500))
    x = np.random.default_rng(0).normal(size=(2, 4, 2500))
    dense = m.net.children["dense"]
    assert dense.out_channels == 260
    assert dense.forward(x[:, :, :64]).shape == (2, 260, 64)
    convs = [layer.children["conv"] for layer in dense.children.values()]
    assert [c.in_channels for c in convs] == [4 + 32 * i for i in range(8)]
    assert [c.dilation for c in convs] == [1, 2, 4, 8, 16, 32, 64, 64]
    assert m.net.children["embed"].params["weight"].shape[::-1] in [(260, 128), (128, 260)]
    assert m.net.children["fc"].params["weight"].size == 256


def test_fcn_layers():
    m = build_fcn(ModelSpec("FCN", 1250))
    convs = [(c.out_channels, c.kernel_size) for _, c in m.net.children.items() if isinstance(c, Conv1d)]
    assert convs == [(128, 8), (256, 5), (128, 3)]


def test_tcn_widths():
    m = build_tcn(ModelSpec("TCN", 1250))
    widths = [c.out_channels for c in m.net.children.values() if isinstance(c, Conv1d)]
    assert widths == [64, 128, 256]
    assert m.logits(np.zeros((1, 4, 1250))).shape == (1, 2)


def test_inception_structure():
    m = build_inception(ModelSpec("INCEPTION", 1250))
    blocks = [c for n, c in m.net.children.items() if n.startswith("block")]
    assert len(blocks) == 6
    assert all(b.out_channels == 128 for b in blocks)
    # residual adds after blocks 3 and 6
    assert [i + 1 for i in m.net.shortcut_after] == [3, 6]
    assert [b.children["conv_k8"].kernel_size for b in blocks[:1]] == [8]


def test_mcdcnn_and_tlenet_widths():
    spec = ModelSpec("MCDCNN", 1250)
    assert mcdcnn_flat_width(spec) == 4 * 8 * 312 == 9984
    m = build_mcdcnn(spec)
    assert m.net.children["hidden"].params["weight"].size == 9984 * 732
    spec = ModelSpec("TLENET", 1250)
    assert tlenet_flat_width(spec) == 20 * 156 == 3120
    m = build_tlenet(spec)
    assert (m.net.children["conv0"].out_channels, m.net.children["conv1"].out_channels) == (5, 20)
    hidden = m.net.children["hidden"]
    assert isinstance(hidden, Linear) and hidden.params["bias"].size == 500


@pytest.mark.parametrize("kind", [k.value for k in ModelKind])
def test_same_seed_same_parameters(kind):
    a = build_model(ModelSpec(kind, 64, seed=7))
    b = build_model(ModelSpec(kind, 64, seed=7))
    c = build_model(ModelSpec(kind, 64, seed=8))
    for name, p in a.parameters().items():
        assert np.array_equal(p, b.parameters()[name])
    assert any(not np.array_equal(p, c.parameters()[n]) for n, p in a.parameters().items())


@pytest.mark.parametrize("kind", [k.value for k in ModelKind])
def test_full_model_gradient(kind):
    rng = np.random.default_rng(11)
    model = build_model(ModelSpec(kind, 16, seed=1))
    batch = rng.normal(size=(3, 4, 16))
    errs = check_model(model, batch, np.array([0, 1, 1]), rng)
    assert max(errs.values()) <= 1e-4, {k: v for k, v in errs.items() if v > 1e-4}


@pytest.mark.parametrize("kind", [k.value for k in ModelKind])
def test_eval_output_independent_of_batch(kind):
    rng = np.random.default_rng(2)
    model = build_model(ModelSpec(kind, 32))
    model.train()
    model.logits(rng.normal(size=(5, 4, 32)))   # move running stats
    model.eval()
    x = rng.normal(size=(6, 4, 32))
    assert np.allclose(forward(model, x)[1:3], forward(model, x[1:3]), atol=1e-12)
    p = forward(model, x)
    assert np.allclose(p.sum(axis=1), 1.0)


def test_input_validation():
    m = build_model(ModelSpec("TCN", 32))
    with pytest.raises(ShapeMismatch):
        m.logits(np.zeros((1, 3, 32)))
    with pytest.raises(ShapeMismatch):
        m.logits(np.zeros((1, 4, 33)))
    bad = np.zeros((1, 4, 32))
    bad[0, 0, 0] = np.nan
    with pytest.raises(NonFiniteInput):
        m.logits(bad)


def test_invalid_specs():
    with pytest.raises(InvalidSpec):
        build_ekyt(ModelSpec("FCN", 100))
    with pytest.raises(InvalidSpec):
        build_model(ModelSpec("EKYT", 100, in_channels=3))
    with pytest.raises(InvalidSpec):
        build_model(ModelSpec("TLENET", 4))
    with pytest.raises(InvalidSpec):
        build_model(ModelSpec("FCN", 100, n_classes=3))


@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_checkpoint_round_trip(tmp_path, dtype):
    rng = np.random.default_rng(0)
    model = build_model(ModelSpec("INCEPTION", 24, seed=3), dtype=dtype)
    model.train()
    model.logits(rng.normal(size=(4, 4, 24)))
    model.eval()
    path = tmp_path / "m.ckpt.json"
    checkpoint.save(model, path, config_hash="h1")
    back = checkpoint.load(path)
    assert back.spec == model.spec and back.dtype == model.dtype
    for name, p in model.parameters().items():
        q = back.parameters()[name]
        assert q.dtype == p.dtype and q.tobytes() == p.tobytes()
    for name, b in model.buffers().items():
        assert back.buffers()[name].tobytes() == b.tobytes()
    x = rng.normal(size=(2, 4, 24))
    assert np.array_equal(forward(model, x), forward(back, x))
    assert json.loads(path.read_text())["config_hash"] == "h1"
    checkpoint.save(back, tmp_path / "again.json", config_hash="h1")
    assert (tmp_path / "again.json").read_bytes() == path.read_bytes()


def test_float32_model_runs():
    m = build_model(ModelSpec("FCN", 64), dtype=np.float32)
    assert forward(m, np.zeros((2, 4, 64))).dtype == np.float32
