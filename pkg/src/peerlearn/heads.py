"""Per-task linear classifier over the frozen feature space.

A head is one fully-connected layer: c output neurons, each connected to
all D features, no lateral connections.  Heads can be row-normalized by a
p-norm, cherry-picked and concatenated across tasks, or initialized from
similar old classes.

Wire layout (little-endian): task_id u32, c u32, D u32, norm tag u8,
c x D f32 weights row-major, c f32 biases.  Norm tags: 0 = none,
1 = infinity norm, 2 = 2-norm, 3 = 1-norm.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DimMismatch,
    MissingClassSamples,
    MixedNormModes,
    ZeroNormRow,
)
from .numkit import RngStream

_NORM_TAGS = {None: 0, np.inf: 1, 2.0: 2, 1.0: 3}
_TAG_NORMS = {v: k for k, v in _NORM_TAGS.items()}


@dataclass
class Head:
    task_id: int
    weights: np.ndarray  # (c, D)
    bias: np.ndarray  # (c,)
    norm_p: float | None = None

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weights.ndim != 2 or self.bias.ndim != 1:
            raise DimMismatch("weights must be (c, D), bias (c,)")
        if self.weights.shape[0] != self.bias.shape[0]:
            raise DimMismatch("bias length != number of classes")
        if self.weights.shape[0] < 1:
            raise ValueError("a head needs at least one output")
        if not (np.all(np.isfinite(self.weights)) and np.all(np.isfinite(self.bias))):
            raise ValueError("head parameters must be finite")

    @property
    def num_classes(self) -> int:
        return int(self.weights.shape[0])

    @property
    def dim(self) -> int:
        return int(self.weights.shape[1])


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    lr: float = 0.01
    batch_size: int = 32
    momentum: float = 0.9
    l2: float = 0.0
    seed: int = 0
    normalize_p: float | None = None  # project rows onto unit p-norm each step

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.lr <= 0:
            raise ValueError("lr must be > 0")


@dataclass
class TrainHistory:
    epoch_loss: list[float] = field(default_factory=list)
    eval_accuracy: list[float] = field(default_factory=list)


def scores(head: Head, x: np.ndarray) -> np.ndarray:
    """Pre-softmax scores W @ x + bias for one vector or a batch."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != head.dim:
        raise DimMismatch(f"input dim {x.shape[-1]} != head dim {head.dim}")
    return x @ head.weights.T + head.bias


def predict(head: Head, x: np.ndarray) -> np.ndarray:
    return scores(head, x)


def accuracy(head: Head, x: np.ndarray, labels: np.ndarray) -> float:
    if len(labels) == 0:
        return 0.0
    pred = np.argmax(scores(head, x), axis=1)
    return float(np.mean(pred == np.asarray(labels)))


def softmax_loss_and_grad(
    w: np.ndarray, b: np.ndarray, x: np.ndarray, y: np.ndarray, l2: float = 0.0
):
    """Mean cross-entropy over the batch and its exact gradients."""
    z = x @ w.T + b
    z = z - z.max(axis=1, keepdims=True)
    expz = np.exp(z)
    p = expz / expz.sum(axis=1, keepdims=True)
    n = x.shape[0]
    nll = -np.log(p[np.arange(n), y] + 1e-300)
    loss = float(np.mean(nll)) + 0.5 * l2 * float(np.sum(w * w))
    g = p
    g[np.arange(n), y] -= 1.0
    g /= n
    dw = g.T @ x + l2 * w
    db = g.sum(axis=0)
    return loss, dw, db


def _project_rows(w: np.ndarray, b: np.ndarray, p: float) -> None:
    norms = np.linalg.norm(w, ord=p, axis=1)
    norms[norms == 0.0] = 1.0
    w /= norms[:, None]
    b /= norms


def train_head_with_history(
    split,
    cfg: TrainConfig,
    task_id: int = 0,
    num_classes: int | None = None,
    init: Head | None = None,
    eval_split=None,
) -> tuple[Head, TrainHistory]:
    """Minibatch SGD with momentum on the softmax cross-entropy."""
    x, y = split.x, split.labels
    n, dim = x.shape
    c = int(num_classes) if num_classes is not None else int(y.max()) + 1 if n else 0
    if c < 2:
        raise ValueError("training needs at least 2 classes")
    present = np.unique(y)
    missing = sorted(set(range(c)) - set(present.tolist()))
    if missing:
        raise MissingClassSamples(f"no samples for classes {missing}")
    if init is not None:
        if init.dim != dim or init.num_classes != c:
            raise DimMismatch("init head shape does not match the task")
        w = init.weights.copy()
        b = init.bias.copy()
    else:
        rng = RngStream(cfg.seed).derive(0x4EAD, task_id)
        w = rng.normals(c * dim).reshape(c, dim) / np.sqrt(dim)
        b = np.zeros(c)
    if cfg.normalize_p is not None:
        _project_rows(w, b, cfg.normalize_p)

    vel_w = np.zeros_like(w)
    vel_b = np.zeros_like(b)
    order_rng = RngStream(cfg.seed).derive(0x5A0FFE, task_id)
    batch = min(cfg.batch_size, n)
    history = TrainHistory()

    def record_eval():
        if eval_split is not None:
            history.eval_accuracy.append(
                accuracy(Head(task_id, w.copy(), b.copy()), eval_split.x, eval_split.labels)
            )

    record_eval()  # epoch 0: the initialization itself
    for _ in range(cfg.epochs):
        perm = order_rng.permutation(n)
        for start in range(0, n, batch):
            idx = perm[start : start + batch]
            _, dw, db = softmax_loss_and_grad(w, b, x[idx], y[idx], cfg.l2)
            vel_w = cfg.momentum * vel_w - cfg.lr * dw
            vel_b = cfg.momentum * vel_b - cfg.lr * db
            w += vel_w
            b += vel_b
            if cfg.normalize_p is not None:
                _project_rows(w, b, cfg.normalize_p)
        loss, _, _ = softmax_loss_and_grad(w, b, x, y, cfg.l2)
        history.epoch_loss.append(loss)
        record_eval()
    return Head(task_id, w, b, cfg.normalize_p), history


def train_head(
    split,
    cfg: TrainConfig,
    task_id: int = 0,
    num_classes: int | None = None,
    init: Head | None = None,
) -> Head:
    head, _ = train_head_with_history(split, cfg, task_id, num_classes, init)
    return head


def normalize_rows(head: Head, p: float = np.inf) -> Head:
    """Divide each weight row (and its bias) by the row's p-norm."""
    norms = np.linalg.norm(head.weights, ord=p, axis=1)
    if np.any(norms < 1e-12):
        raise ZeroNormRow(f"rows {np.where(norms < 1e-12)[0].tolist()} have zero norm")
    return Head(head.task_id, head.weights / norms[:, None], head.bias / norms, p)


def concat_heads(
    selected: list[tuple[Head, list[int]]], task_id: int = 0
) -> Head:
    """New head whose rows are the selected source rows, in order."""
    if not selected:
        raise ValueError("nothing to concatenate")
    dim = selected[0][0].dim
    norm_p = selected[0][0].norm_p
    rows, biases = [], []
    for head, class_indices in selected:
        if head.dim != dim:
            raise DimMismatch("source heads disagree on feature dim")
        if head.norm_p is None or head.norm_p != norm_p:
            raise MixedNormModes("all sources must share one p-normalization")
        for ci in class_indices:
            rows.append(head.weights[ci])
            biases.append(head.bias[ci])
    if not rows:
        raise ValueError("no classes selected")
    return Head(task_id, np.stack(rows), np.array(biases), norm_p)


def transfer_init(
    task_id: int,
    new_classes: list[str],
    old_heads: list[Head],
    registry,
    sims,
    threshold: float,
    dim: int,
    seed: int = 0,
) -> Head:
    """Initialize a new head from the most similar old class rows.

    A new class row copies the infinity-normalized row of the best-scoring
    old class when that score is >= threshold (ties broken by lowest
    (task_id, class index)); otherwise it falls back to seeded random
    initialization scaled by 1/sqrt(D).
    """
    rng = RngStream(seed).derive(0x7A45, task_id)
    normalized = {h.task_id: normalize_rows(h, np.inf) for h in old_heads}
    w = np.zeros((len(new_classes), dim))
    b = np.zeros(len(new_classes))
    for new_idx in range(len(new_classes)):
        gi = registry.global_index(task_id, new_idx)
        best = None  # (score, old_task, old_idx)
        for old in old_heads:
            for old_idx in range(old.num_classes):
                gj = registry.global_index(old.task_id, old_idx)
                s = sims.similarity(gi, gj)
                if best is None or s > best[0] + 1e-15 or (
                    abs(s - best[0]) <= 1e-15 and (old.task_id, old_idx) < best[1:]
                ):
                    best = (s, old.task_id, old_idx)
        if best is not None and best[0] >= threshold:
            src = normalized[best[1]]
            w[new_idx] = src.weights[best[2]]
            b[new_idx] = src.bias[best[2]]
        else:
            w[new_idx] = rng.normals(dim) / np.sqrt(dim)
            b[new_idx] = 0.0
    return Head(task_id, w, b, None)


def head_to_bytes(head: Head) -> bytes:
    tag = _NORM_TAGS.get(head.norm_p)
    if tag is None:
        raise ValueError(f"no wire tag for norm order {head.norm_p}")
    out = struct.pack("<IIIB", head.task_id, head.num_classes, head.dim, tag)
    out += head.weights.astype("<f4").tobytes()
    out += head.bias.astype("<f4").tobytes()
    return out


def head_from_bytes(buf: bytes) -> Head:
    task_id, c, dim, tag = struct.unpack_from("<IIIB", buf, 0)
    offset = 13
    w = np.frombuffer(buf, dtype="<f4", count=c * dim, offset=offset).reshape(c, dim)
    offset += 4 * c * dim
    b = np.frombuffer(buf, dtype="<f4", count=c, offset=offset)
    return Head(task_id, w.astype(np.float64), b.astype(np.float64), _TAG_NORMS[tag])


def head_wire_size(c: int, dim: int) -> int:
    return 13 + 4 * c * dim + 4 * c
