"""Frozen toy backbone with per-neuron beneficial biases.

Layers compute ``y = frozen_affine(x) + b + B`` where ``b`` is the frozen
bias and ``B`` is the learnable beneficial bias: one value per output
channel for 3x3 valid convolutions, one per unit for fully-connected
layers.  Every layer but the last is followed by ReLU.  Training updates
only the B vectors and the task head; gradients flow through the frozen
weights.

Weight file layout (little-endian): magic "TBB1", input c/h/w u32 x3,
layer count u32, then per layer: kind u8 (0 = fc, 1 = conv), in u32,
out u32, f32 weights (fc: out x in; conv: out x in x 3 x 3), f32 biases.
Beneficial biases serialize as the plain concatenation of N f32 values.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptySelection, MissingClassSamples, ShapeMismatch
from .heads import Head
from .numkit import RngStream

KERNEL = 3


@dataclass
class ConvLayer:
    kernels: np.ndarray  # (c_out, c_in, 3, 3), frozen
    bias: np.ndarray  # (c_out,), frozen

    @property
    def out_units(self) -> int:
        return int(self.kernels.shape[0])


@dataclass
class FcLayer:
    weights: np.ndarray  # (out, in), frozen
    bias: np.ndarray  # (out,), frozen

    @property
    def out_units(self) -> int:
        return int(self.weights.shape[0])


@dataclass
class ToyBackbone:
    input_shape: tuple[int, int, int]  # (channels, height, width); (d, 1, 1) for flat
    layers: list = field(default_factory=list)

    @property
    def embed_dim(self) -> int:
        return self.layers[-1].out_units

    @property
    def input_dim(self) -> int:
        c, h, w = self.input_shape
        return c * h * w

    @property
    def bias_count(self) -> int:
        """Total beneficial-bias parameters: one per output unit/channel."""
        return sum(layer.out_units for layer in self.layers)

    @property
    def weight_count(self) -> int:
        return sum(
            int(np.prod(l.kernels.shape)) if isinstance(l, ConvLayer) else int(np.prod(l.weights.shape))
            for l in self.layers
        )

    def weights_checksum(self) -> bytes:
        import hashlib

        h = hashlib.sha256()
        for layer in self.layers:
            if isinstance(layer, ConvLayer):
                h.update(layer.kernels.tobytes())
            else:
                h.update(layer.weights.tobytes())
            h.update(layer.bias.tobytes())
        return h.digest()


def make_backbone(
    input_shape: tuple[int, int, int] = (1, 10, 10),
    conv_channels: tuple[int, ...] = (8, 16),
    fc_widths: tuple[int, ...] = (128, 64),
    seed: int = 0,
) -> ToyBackbone:
    """Seeded random frozen backbone; He-style scaling keeps ReLUs alive."""
    rng = RngStream(seed).derive(0xBACC)
    layers: list = []
    c, h, w = input_shape
    for c_out in conv_channels:
        fan_in = c * KERNEL * KERNEL
        k = rng.normals(c_out * fan_in).reshape(c_out, c, KERNEL, KERNEL)
        layers.append(ConvLayer(k * np.sqrt(2.0 / fan_in), np.zeros(c_out)))
        c, h, w = c_out, h - KERNEL + 1, w - KERNEL + 1
        if h < 1 or w < 1:
            raise ShapeMismatch("input too small for the conv stack")
    flat = c * h * w
    for width in fc_widths:
        m = rng.normals(width * flat).reshape(width, flat)
        layers.append(FcLayer(m * np.sqrt(2.0 / flat), np.zeros(width)))
        flat = width
    return ToyBackbone(input_shape, layers)


@dataclass
class BeneficialBias:
    """One additive bias per backbone output unit/channel, per task."""

    per_layer: list[np.ndarray]

    @classmethod
    def zeros(cls, backbone: ToyBackbone) -> "BeneficialBias":
        return cls([np.zeros(layer.out_units) for layer in backbone.layers])

    @classmethod
    def from_flat(cls, backbone: ToyBackbone, flat: np.ndarray) -> "BeneficialBias":
        out, offset = [], 0
        for layer in backbone.layers:
            out.append(np.asarray(flat[offset : offset + layer.out_units], dtype=np.float64))
            offset += layer.out_units
        if offset != len(flat):
            raise ShapeMismatch(f"expected {offset} bias values, got {len(flat)}")
        return cls(out)

    def flat(self) -> np.ndarray:
        return np.concatenate(self.per_layer)

    @property
    def total(self) -> int:
        return sum(len(v) for v in self.per_layer)

    def to_bytes(self) -> bytes:
        return self.flat().astype("<f4").tobytes()


def _im2col(x: np.ndarray) -> np.ndarray:
    n, c, h, w = x.shape
    oh, ow = h - KERNEL + 1, w - KERNEL + 1
    cols = np.empty((n, c * KERNEL * KERNEL, oh * ow))
    row = 0
    for ci in range(c):
        for di in range(KERNEL):
            for dj in range(KERNEL):
                cols[:, row, :] = x[:, ci, di : di + oh, dj : dj + ow].reshape(n, -1)
                row += 1
    return cols


def _col2im(dcols: np.ndarray, shape: tuple[int, int, int, int]) -> np.ndarray:
    n, c, h, w = shape
    oh, ow = h - KERNEL + 1, w - KERNEL + 1
    dx = np.zeros(shape)
    row = 0
    for ci in range(c):
        for di in range(KERNEL):
            for dj in range(KERNEL):
                dx[:, ci, di : di + oh, dj : dj + ow] += dcols[:, row, :].reshape(n, oh, ow)
                row += 1
    return dx


def forward_batch(backbone: ToyBackbone, bb: BeneficialBias | None, x: np.ndarray):
    """(embeddings, per-layer activations, cache) for a batch of inputs.

    ``x`` is (n, input_dim) flat or (n, c, h, w); activations are the
    post-ReLU layer outputs (final layer linear) so Head2Toe can tap them.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    n = x.shape[0]
    c, h, w = backbone.input_shape
    if x.ndim == 2:
        if x.shape[1] != backbone.input_dim:
            raise ShapeMismatch(f"input dim {x.shape[1]} != {backbone.input_dim}")
        cur = x.reshape(n, c, h, w)
    else:
        if x.shape[1:] != (c, h, w):
            raise ShapeMismatch(f"input shape {x.shape[1:]} != {(c, h, w)}")
        cur = x
    biases = bb.per_layer if bb is not None else [None] * len(backbone.layers)
    activations, cache = [], []
    flat = None
    for li, layer in enumerate(backbone.layers):
        last = li == len(backbone.layers) - 1
        if isinstance(layer, ConvLayer):
            cols = _im2col(cur)
            co = layer.out_units
            z = np.einsum("ok,nkp->nop", layer.kernels.reshape(co, -1), cols)
            z += layer.bias[None, :, None]
            if biases[li] is not None:
                z += biases[li][None, :, None]
            oh, ow = cur.shape[2] - KERNEL + 1, cur.shape[3] - KERNEL + 1
            z = z.reshape(n, co, oh, ow)
            out = z if last else np.maximum(z, 0.0)
            cache.append(("conv", cur.shape, z))
            cur = out
            activations.append(out)
        else:
            if flat is None:
                flat = cur.reshape(n, -1)
            z = flat @ layer.weights.T + layer.bias
            if biases[li] is not None:
                z = z + biases[li]
            out = z if last else np.maximum(z, 0.0)
            cache.append(("fc", flat.shape, z))
            flat = out
            activations.append(out)
    if flat is None:  # conv-only stack: the embedding is the flattened map
        flat = cur.reshape(n, -1)
    return flat, activations, cache


def forward(backbone: ToyBackbone, bb: BeneficialBias | None, x: np.ndarray):
    """Single-input forward: (embedding, per-layer activations)."""
    embed, activations, _ = forward_batch(backbone, bb, np.atleast_2d(x))
    return embed[0], [a[0] for a in activations]


def bias_gradients(
    backbone: ToyBackbone, cache, d_embed: np.ndarray
) -> list[np.ndarray]:
    """dLoss/dB per layer, backpropagated through the frozen weights."""
    grads: list[np.ndarray | None] = [None] * len(backbone.layers)
    d_out = d_embed
    for li in range(len(backbone.layers) - 1, -1, -1):
        layer = backbone.layers[li]
        kind, in_shape, z = cache[li]
        last = li == len(backbone.layers) - 1
        if kind == "fc":
            dz = d_out if last else d_out * (z > 0.0)
            grads[li] = dz.sum(axis=0)
            d_out = dz @ layer.weights
            if li > 0 and cache[li - 1][0] == "conv":
                prev_z = cache[li - 1][2]
                d_out = d_out.reshape(prev_z.shape)
        else:
            dz = d_out if last else d_out * (z > 0.0)
            grads[li] = dz.sum(axis=(0, 2, 3))
            n, co = dz.shape[0], dz.shape[1]
            dz_flat = dz.reshape(n, co, -1)
            dcols = np.einsum("ok,nop->nkp", layer.kernels.reshape(co, -1), dz_flat)
            d_out = _col2im(dcols, in_shape)
    return grads


def bb_loss_and_grads(
    backbone: ToyBackbone,
    bb: BeneficialBias,
    head_w: np.ndarray,
    head_b: np.ndarray,
    x: np.ndarray,
    y: np.ndarray,
):
    """Joint cross-entropy loss and exact gradients for B and the head."""
    from .heads import softmax_loss_and_grad

    embed, _, cache = forward_batch(backbone, bb, x)
    loss, dw, db = softmax_loss_and_grad(head_w, head_b, embed, y)
    n = x.shape[0]
    z = embed @ head_w.T + head_b
    z = z - z.max(axis=1, keepdims=True)
    p = np.exp(z)
    p /= p.sum(axis=1, keepdims=True)
    p[np.arange(n), y] -= 1.0
    d_embed = (p / n) @ head_w
    d_bias = bias_gradients(backbone, cache, d_embed)
    return loss, d_bias, dw, db


@dataclass(frozen=True)
class BbTrainConfig:
    epochs: int = 20
    lr: float = 0.05
    batch_size: int = 32
    momentum: float = 0.9
    seed: int = 0


def train_bb(
    backbone: ToyBackbone, ds, cfg: BbTrainConfig, task_id: int | None = None
) -> tuple[BeneficialBias, Head]:
    """Train beneficial biases plus a head; backbone weights stay frozen."""
    task_id = ds.task_id if task_id is None else task_id
    split = ds.split("train")
    x, y = split.x, split.labels
    n = x.shape[0]
    c = ds.num_classes
    if c < 2:
        raise ValueError("training needs at least 2 classes")
    missing = sorted(set(range(c)) - set(np.unique(y).tolist()))
    if missing:
        raise MissingClassSamples(f"no samples for classes {missing}")
    rng = RngStream(cfg.seed).derive(0xBB, task_id)
    head_w = rng.normals(c * backbone.embed_dim).reshape(c, backbone.embed_dim)
    head_w /= np.sqrt(backbone.embed_dim)
    head_b = np.zeros(c)
    bb = BeneficialBias.zeros(backbone)
    vel_bias = [np.zeros_like(v) for v in bb.per_layer]
    vel_w = np.zeros_like(head_w)
    vel_b = np.zeros_like(head_b)
    order_rng = RngStream(cfg.seed).derive(0xBB5F, task_id)
    batch = min(cfg.batch_size, n)
    for _ in range(cfg.epochs):
        perm = order_rng.permutation(n)
        for start in range(0, n, batch):
            idx = perm[start : start + batch]
            _, d_bias, dw, db = bb_loss_and_grads(
                backbone, bb, head_w, head_b, x[idx], y[idx]
            )
            for li in range(len(bb.per_layer)):
                vel_bias[li] = cfg.momentum * vel_bias[li] - cfg.lr * d_bias[li]
                bb.per_layer[li] += vel_bias[li]
            vel_w = cfg.momentum * vel_w - cfg.lr * dw
            vel_b = cfg.momentum * vel_b - cfg.lr * db
            head_w += vel_w
            head_b += vel_b
    return bb, Head(task_id, head_w, head_b)


def head2toe_select(bb: BeneficialBias, fraction: float) -> list[int]:
    """Indices of the ceil(fraction * N) largest |B|, ties to lower index."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError("fraction must be in (0, 1]")
    flat = np.abs(bb.flat())
    count = int(np.ceil(fraction * len(flat)))
    order = sorted(range(len(flat)), key=lambda i: (-flat[i], i))
    return sorted(order[:count])


def h2t_features(
    backbone: ToyBackbone, bb: BeneficialBias, selected: list[int], x: np.ndarray
) -> np.ndarray:
    """Selected pooled activations concatenated with the final outputs.

    Conv maps are spatially average-pooled to one scalar per channel, so
    the pooled vector has exactly one entry per beneficial bias.
    """
    embed, activations, _ = forward_batch(backbone, bb, x)
    pooled = []
    for act in activations:
        if act.ndim == 4:
            pooled.append(act.mean(axis=(2, 3)))
        else:
            pooled.append(act)
    stacked = np.concatenate(pooled, axis=1)
    return np.concatenate([stacked[:, selected], embed], axis=1)


@dataclass
class H2tHead:
    selected: list[int]
    head: Head


def train_head2toe(
    backbone: ToyBackbone,
    bb: BeneficialBias,
    selected: list[int],
    ds,
    epochs: int = 100,
    lr: float = 0.001,
    batch_size: int = 32,
    seed: int = 0,
    loss_trace: list | None = None,
) -> H2tHead:
    """Adam-trained linear classifier over the Head2Toe feature vector."""
    if not selected:
        raise EmptySelection("head2toe needs at least one selected feature")
    split = ds.split("train")
    feats = h2t_features(backbone, bb, selected, split.x)
    y = split.labels
    n, dim = feats.shape
    c = ds.num_classes
    rng = RngStream(seed).derive(0x8273, ds.task_id)
    w = rng.normals(c * dim).reshape(c, dim) / np.sqrt(dim)
    b = np.zeros(c)
    m_w, v_w = np.zeros_like(w), np.zeros_like(w)
    m_b, v_b = np.zeros_like(b), np.zeros_like(b)
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    step = 0
    order_rng = RngStream(seed).derive(0x8274, ds.task_id)
    batch = min(batch_size, n)
    from .heads import softmax_loss_and_grad

    for _ in range(epochs):
        perm = order_rng.permutation(n)
        for start in range(0, n, batch):
            idx = perm[start : start + batch]
            loss, dw, db = softmax_loss_and_grad(w, b, feats[idx], y[idx])
            if loss_trace is not None:
                loss_trace.append(loss)
            step += 1
            m_w = beta1 * m_w + (1 - beta1) * dw
            v_w = beta2 * v_w + (1 - beta2) * dw * dw
            m_b = beta1 * m_b + (1 - beta1) * db
            v_b = beta2 * v_b + (1 - beta2) * db * db
            corr1 = 1 - beta1**step
            corr2 = 1 - beta2**step
            w -= lr * (m_w / corr1) / (np.sqrt(v_w / corr2) + eps)
            b -= lr * (m_b / corr1) / (np.sqrt(v_b / corr2) + eps)
    return H2tHead(list(selected), Head(ds.task_id, w, b))


def h2t_accuracy(backbone, bb, h2t: H2tHead, x, labels) -> float:
    feats = h2t_features(backbone, bb, h2t.selected, x)
    pred = np.argmax(feats @ h2t.head.weights.T + h2t.head.bias, axis=1)
    return float(np.mean(pred == labels))


def save_backbone(backbone: ToyBackbone, path) -> None:
    with open(path, "wb") as fh:
        fh.write(b"TBB1")
        fh.write(struct.pack("<IIII", *backbone.input_shape, len(backbone.layers)))
        for layer in backbone.layers:
            if isinstance(layer, ConvLayer):
                c_out, c_in = layer.kernels.shape[0], layer.kernels.shape[1]
                fh.write(struct.pack("<BII", 1, c_in, c_out))
                fh.write(layer.kernels.astype("<f4").tobytes())
            else:
                out_dim, in_dim = layer.weights.shape
                fh.write(struct.pack("<BII", 0, in_dim, out_dim))
                fh.write(layer.weights.astype("<f4").tobytes())
            fh.write(layer.bias.astype("<f4").tobytes())


def load_backbone(path) -> ToyBackbone:
    from .errors import BadMagic

    with open(path, "rb") as fh:
        if fh.read(4) != b"TBB1":
            raise BadMagic(f"{path}: not a backbone file")
        c, h, w, n_layers = struct.unpack("<IIII", fh.read(16))
        layers: list = []
        for _ in range(n_layers):
            kind, in_dim, out_dim = struct.unpack("<BII", fh.read(9))
            if kind == 1:
                count = out_dim * in_dim * KERNEL * KERNEL
                k = np.frombuffer(fh.read(4 * count), dtype="<f4")
                k = k.reshape(out_dim, in_dim, KERNEL, KERNEL).astype(np.float64)
                bias = np.frombuffer(fh.read(4 * out_dim), dtype="<f4").astype(np.float64)
                layers.append(ConvLayer(k, bias))
            else:
                m = np.frombuffer(fh.read(4 * out_dim * in_dim), dtype="<f4")
                bias = np.frombuffer(fh.read(4 * out_dim), dtype="<f4").astype(np.float64)
                layers.append(FcLayer(m.reshape(out_dim, in_dim).astype(np.float64), bias))
    return ToyBackbone((c, h, w), layers)
