"""Training protocol: user-level split, mini-batch optimization, evaluation metrics."""
from __future__ import annotations

import enum
import logging
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from gazefatigue.errors import (EmptyTestSet, EmptyTrainingSet, NonFiniteLoss,
                                TooFewParticipants)
from gazefatigue.nn.loss import bce_loss  # noqa: F401  (re-exported)
from gazefatigue.nn.models import Model, forward, loss_and_grads
from gazefatigue.preprocess import Window, stack_windows

log = logging.getLogger(__name__)


class OptimizerKind(str, enum.Enum):
    ADAM = "ADAM"
    SGD_MOMENTUM = "SGD_MOMENTUM"


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    batch_size: int = 64
    learning_rate: float = 1e-3
    optimizer: OptimizerKind = OptimizerKind.ADAM
    momentum: float = 0.9
    seed: int = 0
    split_fraction: float = 0.8
    stratify: bool = True
    shuffle: bool = True
    dtype: str = "float32"

    def __post_init__(self):
        object.__setattr__(self, "optimizer", OptimizerKind(self.optimizer))
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not 0.0 < self.split_fraction < 1.0:
            raise ValueError("split_fraction must lie strictly between 0 and 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["optimizer"] = self.optimizer.value
        return d


def split_users(participants: Sequence[str], labels: Sequence[bool], fraction: float = 0.8,
                seed: int = 0, stratify: bool = True) -> tuple[list[str], list[str]]:
    """Partition participant ids into disjoint (train, test) lists.

    With ``stratify`` each class is split separately, rounding its train share
    to the nearest integer while keeping at least one participant of the
    class on each side.
    """
    if len(participants) != len(labels):
        raise ValueError("participants and labels differ in length")
    if len(set(participants)) != len(participants):
        raise ValueError("participant ids must be unique")
    rng = np.random.default_rng(seed)
    pairs = sorted(zip(map(str, participants), map(bool, labels)))
    if stratify:
        groups = [[p for p, l in pairs if l == cls] for cls in (False, True)]
        for cls, members in zip((False, True), groups):
            if len(members) < 2:
                raise TooFewParticipants(f"class {cls} has {len(members)} participant(s); need 2")
    else:
        if len(pairs) < 2:
            raise TooFewParticipants("need at least 2 participants")
        groups = [[p for p, _ in pairs]]
    train, test = [], []
    for members in groups:
        order = rng.permutation(len(members))
        n_train = min(max(int(round(fraction * len(members))), 1), len(members) - 1)
        train += [members[i] for i in order[:n_train]]
        test += [members[i] for i in order[n_train:]]
    return sorted(train), sorted(test)


class Adam:
    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        c1 = 1 - self.beta1 ** self.t
        c2 = 1 - self.beta2 ** self.t
        for name, p in params.items():
            g = grads[name]
            if name not in self.m:
                self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            p -= (self.lr / c1) * m / (np.sqrt(v / c2) + self.eps)


class SGDMomentum:
    def __init__(self, lr=1e-2, momentum=0.9):
        self.lr, self.momentum = lr, momentum
        self.velocity: dict[str, np.ndarray] = {}

    def step(self, params, grads):
        for name, p in params.items():
            vel = self.velocity.setdefault(name, np.zeros_like(p))
            vel *= self.momentum
            vel -= self.lr * grads[name]
            p += vel


def make_optimizer(cfg: TrainConfig):
    if cfg.optimizer == OptimizerKind.ADAM:
        return Adam(cfg.learning_rate)
    return SGDMomentum(cfg.learning_rate, cfg.momentum)


def _as_arrays(windows) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(windows, tuple):
        return np.asarray(windows[0]), np.asarray(windows[1])
    if len(windows) == 0:
        return np.zeros((0, 0, 0)), np.zeros(0, dtype=int)
    lengths = {(w.duration_s, w.data.shape) for w in windows}
    if len(lengths) > 1:
        raise ValueError("training windows must share one duration and channel layout")
    return stack_windows(windows)


def train(model: Model, train_windows, cfg: TrainConfig,
          callback=None) -> tuple[Model, list[float]]:
    """Run ``cfg.epochs`` epochs of mini-batch descent on the mean batch BCE.

    ``train_windows`` is a sequence of :class:`Window` or an ``(X, y)`` pair.
    Returns the model (updated in place, left in EVAL mode) and the per-epoch
    mean training loss.  ``callback(epoch, loss)`` is called after each epoch.
    """
    x, y = _as_arrays(train_windows)
    if len(x) == 0:
        raise EmptyTrainingSet("no training windows")
    x = x.astype(model.dtype, copy=False)
    rng = np.random.default_rng(cfg.seed)
    opt = make_optimizer(cfg)
    params = model.parameters()
    curve = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(x)) if cfg.shuffle else np.arange(len(x))
        total = 0.0
        for start in range(0, len(x), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            loss, grads = loss_and_grads(model, x[idx], y[idx])
            if not np.isfinite(loss):
                raise NonFiniteLoss(f"epoch {epoch}: loss is {loss}")
            opt.step(params, grads)
            total += loss * len(idx)
        curve.append(total / len(x))
        if callback is not None:
            callback(epoch, curve[-1])
    model.eval()
    return model, curve


def predict_proba(model: Model, x: np.ndarray, batch_size: int = 64) -> np.ndarray:
    """Fatigue-class probability for every row, in EVAL mode."""
    mode = model.mode
    model.eval()
    try:
        out = [forward(model, x[i:i + batch_size])[:, 1] for i in range(0, len(x), batch_size)]
    finally:
        model.mode = mode
    return np.concatenate(out).astype(float) if out else np.zeros(0)


def roc_curve(scores, labels) -> list[tuple[float, float]]:
    """(fpr, tpr) points from (0, 0) to (1, 1), one per distinct score threshold.

    Tied scores move both rates in a single step, so the trapezoid area under
    these points equals the Mann-Whitney probability with ties counted 1/2.
    """
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels).astype(bool)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        return []
    order = np.argsort(-scores, kind="mergesort")
    s, l = scores[order], labels[order]
    last_of_group = np.r_[np.flatnonzero(np.diff(s) != 0), len(s) - 1]
    tp = np.cumsum(l)[last_of_group]
    fp = np.cumsum(~l)[last_of_group]
    fpr = np.r_[0.0, fp / n_neg]
    tpr = np.r_[0.0, tp / n_pos]
    return list(zip(fpr.tolist(), tpr.tolist()))


def auc_trapezoid(points) -> float:
    if not points:
        return float("nan")
    fpr, tpr = np.array(points).T
    return float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))


@dataclass
class EvalResult:
    task: str
    model: str
    duration_s: int
    accuracy: float
    auc: float
    roc_points: list
    n_test_windows: int
    n_test_participants: int
    seed: int = 0
    config_hash: str = ""
    participant_accuracy: float = float("nan")
    loss_curve: list = field(default_factory=list)
    train_accuracy: float = float("nan")
    train_participants: list = field(default_factory=list)
    test_participants: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EvalResult":
        d = dict(d)
        d["roc_points"] = [tuple(p) for p in d.get("roc_points", [])]
        return cls(**d)


def accuracy(probs1: np.ndarray, labels) -> float:
    """Fraction of rows whose argmax class matches; p1 > 0.5 picks the fatigue class."""
    pred = (np.asarray(probs1) > 0.5).astype(int)
    return float(np.mean(pred == np.asarray(labels).astype(int)))


def participant_vote_accuracy(probs1, labels, participants) -> float:
    """Accuracy after averaging window probabilities within each participant."""
    probs1 = np.asarray(probs1)
    labels = np.asarray(labels).astype(int)
    participants = np.asarray(participants)
    hits = []
    for pid in np.unique(participants):
        sel = participants == pid
        hits.append(int(probs1[sel].mean() > 0.5) == labels[sel][0])
    return float(np.mean(hits)) if hits else float("nan")


def evaluate(model: Model, test_windows: Sequence[Window], *, seed: int = 0,
             config_hash: str = "") -> EvalResult:
    """Window-level accuracy plus ROC/AUC over the fatigue-class probability."""
    if len(test_windows) == 0:
        raise EmptyTestSet("no test windows")
    x, y = stack_windows(test_windows)
    p1 = predict_proba(model, x)
    return evaluate_scores(p1, y, [w.participant_id for w in test_windows],
                           task=test_windows[0].task.value, model=model.spec.kind.value,
                           duration_s=test_windows[0].duration_s, seed=seed,
                           config_hash=config_hash)


def evaluate_scores(scores, labels, participants, *, task="", model="", duration_s=0,
                    seed=0, config_hash="") -> EvalResult:
    scores = np.asarray(scores, dtype=float)
    if len(scores) == 0:
        raise EmptyTestSet("no test scores")
    points = roc_curve(scores, labels)
    return EvalResult(
        task=task, model=model, duration_s=int(duration_s),
        accuracy=accuracy(scores, labels), auc=auc_trapezoid(points), roc_points=points,
        n_test_windows=len(scores), n_test_participants=len(set(participants)),
        seed=seed, config_hash=config_hash,
        participant_accuracy=participant_vote_accuracy(scores, labels, participants),
        test_participants=sorted(set(map(str, participants))))
