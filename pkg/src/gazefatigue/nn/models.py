"""The six time-series classifiers used for fatigue detection.

All builders take a :class:`ModelSpec` and return a :class:`Model` whose
network emits two logits; :func:`forward` turns them into class
probabilities.  Parameter initialization is driven entirely by
``spec.seed``.
"""
from __future__ import annotations

import enum
import json
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from gazefatigue.errors import (InvalidSpec, NonFiniteGradient, NonFiniteInput,
                                ShapeMismatch)
from gazefatigue.nn.layers import (BatchNorm1d, Conv1d, Flatten, GlobalAvgPool1d,
                                   Linear, MaxPool1d, MaxPoolSame1d, Module, ReLU,
                                   Sequential, softmax)
from gazefatigue.nn.loss import softmax_bce


class ModelKind(str, enum.Enum):
    EKYT = "EKYT"
    FCN = "FCN"
    TCN = "TCN"
    INCEPTION = "INCEPTION"
    MCDCNN = "MCDCNN"
    TLENET = "TLENET"


DEFAULT_HPARAMS: dict[ModelKind, dict] = {
    ModelKind.EKYT: {"depth": 8, "growth": 32, "kernel": 3,
                     "dilations": [1, 2, 4, 8, 16, 32, 64, 64], "embedding": 128},
    ModelKind.FCN: {"filters": [128, 256, 128], "kernels": [8, 5, 3]},
    ModelKind.TCN: {"filters": [64, 128, 256], "kernel": 3, "padding": 1},
    ModelKind.INCEPTION: {"depth": 6, "filters": 32, "kernels": [8, 4, 2],
                          "bottleneck": 32, "use_bottleneck": True,
                          "use_residual": True, "residual_every": 3},
    ModelKind.MCDCNN: {"filters": 8, "kernel": 5, "pool": 2, "hidden": 732},
    ModelKind.TLENET: {"filters": [5, 20], "kernel": 5, "pools": [2, 4], "hidden": 500},
}


@dataclass(frozen=True)
class ModelSpec:
    kind: ModelKind
    input_len: int
    in_channels: int = 4
    n_classes: int = 2
    seed: int = 0
    hparams: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "kind", ModelKind(self.kind))
        merged = {**DEFAULT_HPARAMS[self.kind], **self.hparams}
        object.__setattr__(self, "hparams", merged)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["kind"] = self.kind.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(**d)

    def __hash__(self):
        return hash(json.dumps(self.to_dict(), sort_keys=True))


class DenseBlock(Module):
    """Densely connected conv stack: layer i sees the input plus all earlier outputs.

    Each layer is conv -> ReLU -> batch norm.
    """

    def __init__(self, in_channels, growth, kernel, dilations, rng):
        super().__init__()
        self.in_channels = in_channels
        self.growth = growth
        self.out_channels = in_channels + growth * len(dilations)
        for i, d in enumerate(dilations):
            self.add(f"layer{i}", Sequential(
                ("conv", Conv1d(in_channels + i * growth, growth, kernel, rng, dilation=d)),
                ("relu", ReLU()),
                ("bn", BatchNorm1d(growth))))

    def forward(self, x, train=False):
        b, _, n = x.shape
        buf = np.empty((b, self.out_channels, n), dtype=x.dtype)
        buf[:, :self.in_channels] = x
        width = self.in_channels
        for layer in self.children.values():
            buf[:, width:width + self.growth] = layer.forward(buf[:, :width], train)
            width += self.growth
        return buf

    def backward(self, dout):
        dbuf = dout.copy()
        layers = list(self.children.values())
        for i in reversed(range(len(layers))):
            width = self.in_channels + i * self.growth
            dbuf[:, :width] += layers[i].backward(dbuf[:, width:width + self.growth])
        return dbuf[:, :self.in_channels]


class InceptionBlock(Module):
    def __init__(self, in_channels, filters, kernels, bottleneck, use_bottleneck, rng):
        super().__init__()
        self.use_bottleneck = use_bottleneck and in_channels > 1
        branch_in = in_channels
        if self.use_bottleneck:
            self.add("bottleneck", Conv1d(in_channels, bottleneck, 1, rng, bias=False))
            branch_in = bottleneck
        self.branches = [self.add(f"conv_k{k}", Conv1d(branch_in, filters, k, rng, bias=False))
                         for k in kernels]
        self.pool = MaxPoolSame1d(3)
        self.add("pool_conv", Conv1d(in_channels, filters, 1, rng, bias=False))
        self.out_channels = filters * (len(kernels) + 1)
        self.add("bn", BatchNorm1d(self.out_channels))
        self.relu = ReLU()

    def forward(self, x, train=False):
        z = self.children["bottleneck"].forward(x, train) if self.use_bottleneck else x
        outs = [conv.forward(z, train) for conv in self.branches]
        outs.append(self.children["pool_conv"].forward(self.pool.forward(x, train), train))
        h = self.children["bn"].forward(np.concatenate(outs, axis=1), train)
        return self.relu.forward(h, train)

    def backward(self, dout):
        d = self.children["bn"].backward(self.relu.backward(dout))
        parts = np.split(d, len(self.branches) + 1, axis=1)
        dz = sum(conv.backward(p) for conv, p in zip(self.branches, parts[:-1]))
        dx = self.pool.backward(self.children["pool_conv"].backward(parts[-1]))
        if self.use_bottleneck:
            dx = dx + self.children["bottleneck"].backward(dz)
        else:
            dx = dx + dz
        return dx


class InceptionNet(Module):
    def __init__(self, spec: ModelSpec, rng):
        super().__init__()
        hp = spec.hparams
        width = spec.in_channels
        self.depth = hp["depth"]
        self.every = hp["residual_every"] if hp["use_residual"] else 0
        res_width = width
        self.shortcut_after: list[int] = []
        for i in range(self.depth):
            block = self.add(f"block{i}", InceptionBlock(width, hp["filters"], hp["kernels"],
                                                         hp["bottleneck"], hp["use_bottleneck"], rng))
            width = block.out_channels
            if self.every and i % self.every == self.every - 1:
                self.add(f"shortcut{i}", Sequential(
                    ("conv", Conv1d(res_width, width, 1, rng, bias=False)),
                    ("bn", BatchNorm1d(width))))
                self.shortcut_after.append(i)
                res_width = width
        self.gap = GlobalAvgPool1d()
        self.add("fc", Linear(width, spec.n_classes, rng))

    def forward(self, x, train=False):
        res = h = x
        self._res_masks = {}
        for i in range(self.depth):
            h = self.children[f"block{i}"].forward(h, train)
            if i in self.shortcut_after:
                s = h + self.children[f"shortcut{i}"].forward(res, train)
                mask = s > 0
                h = res = s * mask
                self._res_masks[i] = mask
        return self.children["fc"].forward(self.gap.forward(h, train), train)

    def backward(self, dout):
        d = self.gap.backward(self.children["fc"].backward(dout))
        d_res = None  # gradient flowing into the current residual source
        for i in reversed(range(self.depth)):
            if i in self.shortcut_after:
                if d_res is not None:
                    d = d + d_res
                d = d * self._res_masks[i]
                d_res = self.children[f"shortcut{i}"].backward(d)
            d = self.children[f"block{i}"].backward(d)
        if d_res is not None:
            d = d + d_res
        self._res_masks = None
        return d


class ChannelBranches(Module):
    """Independent sub-network per input channel, outputs flattened and concatenated."""

    def __init__(self, n_channels, make_branch: Callable[[], Module]):
        super().__init__()
        for c in range(n_channels):
            self.add(f"ch{c}", make_branch())

    def forward(self, x, train=False):
        outs = [branch.forward(x[:, c:c + 1], train) for c, branch in enumerate(self.children.values())]
        self._widths = [o.shape[1] for o in outs]
        return np.concatenate(outs, axis=1)

    def backward(self, dout):
        cuts = np.cumsum(self._widths)[:-1]
        parts = np.split(dout, cuts, axis=1)
        return np.concatenate([branch.backward(p) for branch, p in zip(self.children.values(), parts)],
                              axis=1)


def _check_spec(spec: ModelSpec, min_len: int = 1) -> None:
    if spec.n_classes != 2:
        raise InvalidSpec("only binary classification is supported")
    if spec.in_channels < 1:
        raise InvalidSpec("in_channels must be positive")
    if spec.input_len < min_len:
        raise InvalidSpec(f"{spec.kind.value} needs input_len >= {min_len}, got {spec.input_len}")


def _ekyt(spec, rng):
    hp = spec.hparams
    if spec.in_channels != 4:
        raise InvalidSpec("EKYT expects four input channels")
    if len(hp["dilations"]) != hp["depth"]:
        raise InvalidSpec("one dilation per dense layer is required")
    block = DenseBlock(spec.in_channels, hp["growth"], hp["kernel"], hp["dilations"], rng)
    return Sequential(
        ("dense", block),
        ("gap", GlobalAvgPool1d()),
        ("embed", Linear(block.out_channels, hp["embedding"], rng)),
        ("head_bn", BatchNorm1d(hp["embedding"])),
        ("head_relu", ReLU()),
        ("fc", Linear(hp["embedding"], spec.n_classes, rng)),
    )


def _fcn(spec, rng):
    hp = spec.hparams
    layers = []
    width = spec.in_channels
    for i, (f, k) in enumerate(zip(hp["filters"], hp["kernels"])):
        layers += [(f"conv{i}", Conv1d(width, f, k, rng)), (f"bn{i}", BatchNorm1d(f)),
                   (f"relu{i}", ReLU())]
        width = f
    layers += [("gap", GlobalAvgPool1d()), ("fc", Linear(width, spec.n_classes, rng))]
    return Sequential(*layers)


def _tcn(spec, rng):
    hp = spec.hparams
    layers = []
    width = spec.in_channels
    for i, f in enumerate(hp["filters"]):
        layers += [(f"conv{i}", Conv1d(width, f, hp["kernel"], rng, padding=hp["padding"])),
                   (f"relu{i}", ReLU())]
        width = f
    layers += [("gap", GlobalAvgPool1d()), ("fc", Linear(width, spec.n_classes, rng))]
    return Sequential(*layers)


def mcdcnn_flat_width(spec: ModelSpec) -> int:
    hp = spec.hparams
    n = spec.input_len // hp["pool"] // hp["pool"]
    return spec.in_channels * hp["filters"] * n


def _mcdcnn(spec, rng):
    hp = spec.hparams
    f, k, p = hp["filters"], hp["kernel"], hp["pool"]

    def branch():
        return Sequential(("conv0", Conv1d(1, f, k, rng)), ("relu0", ReLU()), ("pool0", MaxPool1d(p)),
                          ("conv1", Conv1d(f, f, k, rng)), ("relu1", ReLU()), ("pool1", MaxPool1d(p)),
                          ("flat", Flatten()))

    return Sequential(
        ("branches", ChannelBranches(spec.in_channels, branch)),
        ("hidden", Linear(mcdcnn_flat_width(spec), hp["hidden"], rng)),
        ("relu", ReLU()),
        ("fc", Linear(hp["hidden"], spec.n_classes, rng)),
    )


def tlenet_flat_width(spec: ModelSpec) -> int:
    hp = spec.hparams
    n = spec.input_len
    for p in hp["pools"]:
        n //= p
    return hp["filters"][-1] * n


def _tlenet(spec, rng):
    hp = spec.hparams
    (f0, f1), (p0, p1), k = hp["filters"], hp["pools"], hp["kernel"]
    return Sequential(
        ("conv0", Conv1d(spec.in_channels, f0, k, rng)), ("relu0", ReLU()), ("pool0", MaxPool1d(p0)),
        ("conv1", Conv1d(f0, f1, k, rng)), ("relu1", ReLU()), ("pool1", MaxPool1d(p1)),
        ("flat", Flatten()),
        ("hidden", Linear(tlenet_flat_width(spec), hp["hidden"], rng)),
        ("relu", ReLU()),
        ("fc", Linear(hp["hidden"], spec.n_classes, rng)),
    )


_MIN_LEN = {ModelKind.EKYT: 1, ModelKind.FCN: 1, ModelKind.TCN: 1, ModelKind.INCEPTION: 1,
            ModelKind.MCDCNN: 4, ModelKind.TLENET: 8}
_BUILDERS = {ModelKind.EKYT: _ekyt, ModelKind.FCN: _fcn, ModelKind.TCN: _tcn,
             ModelKind.INCEPTION: InceptionNet, ModelKind.MCDCNN: _mcdcnn,
             ModelKind.TLENET: _tlenet}


class Model:
    """A realized network plus its spec and TRAIN/EVAL mode."""

    def __init__(self, spec: ModelSpec, net: Module, dtype=np.float64):
        self.spec = spec
        self.net = net
        self.mode = "EVAL"
        self.dtype = np.dtype(dtype)
        if self.dtype != np.float64:
            net.astype(self.dtype)

    def train(self) -> "Model":
        self.mode = "TRAIN"
        return self

    def eval(self) -> "Model":
        self.mode = "EVAL"
        return self

    def parameters(self) -> dict[str, np.ndarray]:
        return dict(self.net.named_parameters())

    def gradients(self) -> dict[str, np.ndarray]:
        return dict(self.net.named_grads())

    def buffers(self) -> dict[str, np.ndarray]:
        return dict(self.net.named_buffers())

    def n_parameters(self) -> int:
        return sum(p.size for _, p in self.net.named_parameters())

    def check_input(self, batch: np.ndarray) -> np.ndarray:
        batch = np.asarray(batch)
        expected = (self.spec.in_channels, self.spec.input_len)
        if batch.ndim != 3 or batch.shape[1:] != expected:
            raise ShapeMismatch(f"expected B x {expected[0]} x {expected[1]}, got {batch.shape}")
        if not np.all(np.isfinite(batch)):
            raise NonFiniteInput("batch contains NaN or inf")
        return batch.astype(self.dtype, copy=False)

    def logits(self, batch: np.ndarray) -> np.ndarray:
        return self.net.forward(self.check_input(batch), train=self.mode == "TRAIN")


def build_model(spec: ModelSpec, dtype=np.float64) -> Model:
    _check_spec(spec, _MIN_LEN[spec.kind])
    rng = np.random.default_rng(spec.seed)
    return Model(spec, _BUILDERS[spec.kind](spec, rng), dtype=dtype)


def build_ekyt(spec: ModelSpec, dtype=np.float64) -> Model:
    return build_model(_expect(spec, ModelKind.EKYT), dtype)


def build_fcn(spec: ModelSpec, dtype=np.float64) -> Model:
    return build_model(_expect(spec, ModelKind.FCN), dtype)


def build_tcn(spec: ModelSpec, dtype=np.float64) -> Model:
    return build_model(_expect(spec, ModelKind.TCN), dtype)


def build_inception(spec: ModelSpec, dtype=np.float64) -> Model:
    return build_model(_expect(spec, ModelKind.INCEPTION), dtype)


def build_mcdcnn(spec: ModelSpec, dtype=np.float64) -> Model:
    return build_model(_expect(spec, ModelKind.MCDCNN), dtype)


def build_tlenet(spec: ModelSpec, dtype=np.float64) -> Model:
    return build_model(_expect(spec, ModelKind.TLENET), dtype)


def _expect(spec: ModelSpec, kind: ModelKind) -> ModelSpec:
    if spec.kind != kind:
        raise InvalidSpec(f"spec is for {spec.kind.value}, not {kind.value}")
    return spec


def forward(model: Model, batch: np.ndarray) -> np.ndarray:
    """Class probabilities, B x 2; column 1 is the fatigue class."""
    return softmax(model.logits(batch))


def loss_and_grads(model: Model, batch: np.ndarray, labels, loss_scale: float = 1.0):
    """One TRAIN-mode forward/backward pass; returns (loss, gradients by name)."""
    mode = model.mode
    model.train()
    try:
        model.net.zero_grad()
        logits = model.logits(batch)
        loss, dlogits = softmax_bce(logits, labels)
        model.net.backward(dlogits * loss_scale)
    finally:
        model.mode = mode
    grads = model.gradients()
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(f"non-finite gradient in {name}")
    return loss * loss_scale, grads


def backward(model: Model, batch: np.ndarray, labels, loss_scale: float = 1.0) -> dict[str, np.ndarray]:
    """Gradients of ``loss_scale`` times the batch BCE loss for every parameter."""
    return loss_and_grads(model, batch, labels, loss_scale)[1]
