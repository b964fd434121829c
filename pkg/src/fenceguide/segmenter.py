"""Desk-scale fence segmenter trained with L1 + directional connectivity loss.

Three zero-padded 3x3 convolutions (C_in -> 8 -> 8 -> 1) with ReLU, ReLU,
sigmoid. ``C_in`` is 1 for image-only input and 2 for image + guidance mask.
Backpropagation is written out by hand; convolutions use im2col + matmul.
"""
from __future__ import annotations

import csv
import io
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dcl import dcl_and_gradient
from .evaluate import aggregate, confusion, prf
from .imagecore import load_image, load_mask

log = logging.getLogger(__name__)

HIDDEN = 8
LAYER_NAMES = ("w1", "b1", "w2", "b2", "w3", "b3")
MAGIC = b"FGSM"
FORMAT_VERSION = 1


class TrainingError(RuntimeError):
    pass


class ChannelMismatchError(ValueError):
    pass


@dataclass
class SegModel:
    c_in: int
    params: dict

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params.values())

    def copy(self) -> "SegModel":
        return SegModel(self.c_in, {k: v.copy() for k, v in self.params.items()})

    def flat(self) -> np.ndarray:
        return np.concatenate([self.params[k].ravel() for k in LAYER_NAMES])


def layer_shapes(c_in: int) -> dict:
    return {
        "w1": (HIDDEN, c_in, 3, 3), "b1": (HIDDEN,),
        "w2": (HIDDEN, HIDDEN, 3, 3), "b2": (HIDDEN,),
        "w3": (1, HIDDEN, 3, 3), "b3": (1,),
    }


def init_model(c_in: int, seed: int) -> SegModel:
    """He-uniform weights, U(-sqrt(6/fan_in), sqrt(6/fan_in)) with fan_in = 9 * in_channels; zero biases."""
    if c_in not in (1, 2):
        raise ValueError("c_in must be 1 or 2")
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in layer_shapes(c_in).items():
        if name.startswith("b"):
            params[name] = np.zeros(shape)
        else:
            bound = np.sqrt(6.0 / (shape[1] * 9))
            params[name] = rng.uniform(-bound, bound, size=shape)
    return SegModel(c_in, params)


# ---------------------------------------------------------------------------
# layers

def _im2col(x: np.ndarray) -> np.ndarray:
    n, c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    cols = np.empty((c, 3, 3, n, h, w))
    for i in range(3):
        for j in range(3):
            cols[:, i, j] = xp[:, :, i:i + h, j:j + w].transpose(1, 0, 2, 3)
    return cols.reshape(c * 9, n * h * w)


def conv_forward(x, w, b):
    """3x3 cross-correlation with zero padding. x: (N, C, H, W), w: (O, C, 3, 3)."""
    n, _, h, wd = x.shape
    cols = _im2col(x)
    out = w.reshape(w.shape[0], -1) @ cols
    out = out.reshape(w.shape[0], n, h, wd).transpose(1, 0, 2, 3) + b[None, :, None, None]
    return out, cols


def conv_backward(dout, x_shape, w, cols):
    n, c, h, wd = x_shape
    o = w.shape[0]
    d = dout.transpose(1, 0, 2, 3).reshape(o, -1)
    dw = (d @ cols.T).reshape(w.shape)
    db = d.sum(axis=1)
    dcols = (w.reshape(o, -1).T @ d).reshape(c, 3, 3, n, h, wd)
    dxp = np.zeros((n, c, h + 2, wd + 2))
    for i in range(3):
        for j in range(3):
            dxp[:, :, i:i + h, j:j + wd] += dcols[:, i, j].transpose(1, 0, 2, 3)
    return dxp[:, :, 1:-1, 1:-1], dw, db


def sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _as_batch(model: SegModel, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 3:
        x = x[None]
    if x.ndim != 4:
        raise ValueError("input must be (C, H, W) or (N, C, H, W)")
    if x.shape[1] != model.c_in:
        raise ChannelMismatchError(f"model expects {model.c_in} channels, got {x.shape[1]}")
    if x.shape[2] < 3 or x.shape[3] < 3:
        raise ValueError("spatial size must be at least 3x3")
    return x


def _forward_cache(model: SegModel, x):
    p = model.params
    z1, c1 = conv_forward(x, p["w1"], p["b1"])
    a1 = np.maximum(z1, 0.0)
    z2, c2 = conv_forward(a1, p["w2"], p["b2"])
    a2 = np.maximum(z2, 0.0)
    z3, c3 = conv_forward(a2, p["w3"], p["b3"])
    y = sigmoid(z3)
    return y, (x, z1, c1, a1, z2, c2, a2, c3)


def forward(model: SegModel, x) -> np.ndarray:
    """Soft mask in (0, 1). ``(C, H, W)`` gives ``(H, W)``; ``(N, C, H, W)`` gives ``(N, H, W)``."""
    single = np.ndim(x) == 3
    y, _ = _forward_cache(model, _as_batch(model, x))
    y = y[:, 0]
    return y[0] if single else y


@dataclass
class TrainConfig:
    learning_rate: float = 0.0002
    batch_size: int = 32
    epochs: int = 30
    lambda_dcl: float = 0.1
    lambda_l1: float = 1.0
    seed: int = 7
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    patch_size: int = 64
    threshold: float = 0.5

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.lambda_dcl < 0 or self.lambda_l1 < 0:
            raise ValueError("loss weights must be >= 0")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")


@dataclass
class LossBreakdown:
    l1: float
    dcl: float
    total: float


def loss_and_grads(model: SegModel, x, gt, cfg: TrainConfig):
    """Weighted L1 + DCL over a batch and the gradient of every parameter.

    The L1 term is the mean absolute error over all pixels of the batch;
    the DCL term is the mean of the per-image DCL values.
    """
    x = _as_batch(model, x)
    gt = np.asarray(gt, dtype=np.float64).reshape(x.shape[0], x.shape[2], x.shape[3])
    y, (x, z1, c1, a1, z2, c2, a2, c3) = _forward_cache(model, x)
    ys = y[:, 0]
    n = ys.shape[0]

    diff = ys - gt
    l1 = float(np.abs(diff).mean())
    dy = cfg.lambda_l1 * np.sign(diff) / diff.size

    dcl_vals = []
    for k in range(n):
        value, grad = dcl_and_gradient(ys[k])
        dcl_vals.append(value)
        dy[k] += cfg.lambda_dcl * grad / n
    dcl_term = float(np.mean(dcl_vals))
    total = cfg.lambda_l1 * l1 + cfg.lambda_dcl * dcl_term

    p = model.params
    dz3 = (dy * ys * (1.0 - ys))[:, None]
    da2, dw3, db3 = conv_backward(dz3, a2.shape, p["w3"], c3)
    dz2 = da2 * (z2 > 0)
    da1, dw2, db2 = conv_backward(dz2, a1.shape, p["w2"], c2)
    dz1 = da1 * (z1 > 0)
    _, dw1, db1 = conv_backward(dz1, x.shape, p["w1"], c1)
    grads = {"w1": dw1, "b1": db1, "w2": dw2, "b2": db2, "w3": dw3, "b3": db3}
    return LossBreakdown(l1=l1, dcl=dcl_term, total=total), grads


class Adam:
    def __init__(self, params: dict, cfg: TrainConfig):
        self.cfg = cfg
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict, grads: dict) -> None:
        c = self.cfg
        self.t += 1
        corr1 = 1.0 - c.beta1 ** self.t
        corr2 = 1.0 - c.beta2 ** self.t
        for k in LAYER_NAMES:
            g = grads[k]
            self.m[k] = c.beta1 * self.m[k] + (1.0 - c.beta1) * g
            self.v[k] = c.beta2 * self.v[k] + (1.0 - c.beta2) * g * g
            params[k] -= c.learning_rate * (self.m[k] / corr1) / (np.sqrt(self.v[k] / corr2) + c.eps)


# ---------------------------------------------------------------------------
# data

def make_input(image, fm=None, c_in: int = 2) -> np.ndarray:
    """Stack the [0,1]-scaled image and, for 2-channel models, the guidance mask."""
    img = np.asarray(image, dtype=np.float64) / 255.0
    if c_in == 1:
        return img[None]
    if fm is None:
        raise ChannelMismatchError("a 2-channel model needs a guidance mask")
    fm = np.asarray(fm, dtype=np.float64)
    if fm.shape != img.shape:
        raise ValueError("image and guidance mask differ in size")
    return np.stack([img, fm])


def load_split(manifest, split: str, c_in: int):
    """Inputs and ground truth for one split; the right view is the model image."""
    xs, gts, names = [], [], []
    for rec in manifest.split(split):
        img = load_image(manifest.path(rec, "right_path"))
        fm = load_mask(manifest.path(rec, "fm_path")) if c_in == 2 else None
        xs.append(make_input(img, fm, c_in))
        gts.append(load_mask(manifest.path(rec, "gt_mask_path")).astype(np.float64))
        names.append(Path(rec["right_path"]).name)
    return xs, gts, names


def _random_patches(xs, gts, idx, size, rng):
    bx, bg = [], []
    for i in idx:
        x, g = xs[i], gts[i]
        h, w = g.shape
        ph, pw = min(size, h), min(size, w)
        r = int(rng.integers(0, h - ph + 1))
        c = int(rng.integers(0, w - pw + 1))
        bx.append(x[:, r:r + ph, c:c + pw])
        bg.append(g[r:r + ph, c:c + pw])
    return np.stack(bx), np.stack(bg)


def evaluate_model(model: SegModel, xs, gts, threshold: float = 0.5):
    per_image = []
    for x, g in zip(xs, gts):
        pred = (forward(model, x) > threshold).astype(np.uint8)
        per_image.append(prf(confusion(pred, g.astype(np.uint8))))
    return aggregate(per_image)


@dataclass
class TrainHistory:
    rows: list = field(default_factory=list)

    COLUMNS = ("epoch", "loss", "l1", "dcl", "val_precision", "val_recall", "val_f_measure")

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.COLUMNS)
        for row in self.rows:
            w.writerow([row["epoch"]] + [f"{row[k]:.10g}" for k in self.COLUMNS[1:]])
        return buf.getvalue()


def train(manifest, cfg: TrainConfig, c_in: int = 2, checkpoint_dir=None, model=None):
    """Adam training on random patches of the train split; validates on the test split each epoch."""
    xs, gts, _ = load_split(manifest, "train", c_in)
    if not xs:
        raise TrainingError("manifest has no training records")
    val_xs, val_gts, _ = load_split(manifest, "test", c_in)
    return train_arrays(xs, gts, cfg, c_in, val_xs, val_gts, checkpoint_dir, model)


def train_arrays(xs, gts, cfg: TrainConfig, c_in: int, val_xs=(), val_gts=(),
                 checkpoint_dir=None, model=None):
    if not len(xs):
        raise TrainingError("no training samples")
    model = model.copy() if model is not None else init_model(c_in, cfg.seed)
    opt = Adam(model.params, cfg)
    rng = np.random.default_rng([cfg.seed, 1])
    batch = min(cfg.batch_size, len(xs))
    history = TrainHistory()
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(xs))
        sums = np.zeros(3)
        steps = 0
        for start in range(0, len(order), batch):
            idx = order[start:start + batch]
            bx, bg = _random_patches(xs, gts, idx, cfg.patch_size, rng)
            loss, grads = loss_and_grads(model, bx, bg, cfg)
            if not np.isfinite(loss.total):
                raise TrainingError(f"non-finite loss at epoch {epoch}, step {steps}: {loss}")
            opt.step(model.params, grads)
            sums += (loss.total, loss.l1, loss.dcl)
            steps += 1
        mean = sums / steps
        if len(val_xs):
            s = evaluate_model(model, val_xs, val_gts, cfg.threshold)
            vp, vr, vf = s.mean
        else:
            vp = vr = vf = float("nan")
        row = {"epoch": epoch, "loss": mean[0], "l1": mean[1], "dcl": mean[2],
               "val_precision": vp, "val_recall": vr, "val_f_measure": vf}
        history.rows.append(row)
        log.info("epoch=%d loss=%.6f l1=%.6f dcl=%.6f val_f=%.4f", epoch, *mean, vf)
        if checkpoint_dir is not None:
            save_model(model, Path(checkpoint_dir) / f"checkpoint_{epoch:03d}.bin")
    return model, history


def predict(model: SegModel, image, fm=None, threshold: float = 0.5) -> np.ndarray:
    """Binary fence mask: sigmoid output strictly above ``threshold``."""
    if model.c_in == 2 and fm is None:
        raise ChannelMismatchError("this model needs a guidance mask (--fm)")
    x = make_input(image, fm, model.c_in)
    return (forward(model, x) > threshold).astype(np.uint8)


# ---------------------------------------------------------------------------
# serialization

def dumps_model(model: SegModel) -> bytes:
    shapes = layer_shapes(model.c_in)
    head = [MAGIC, struct.pack("<III", FORMAT_VERSION, model.c_in, len(LAYER_NAMES))]
    for name in LAYER_NAMES:
        dims = shapes[name] + (1,) * (4 - len(shapes[name]))
        head.append(struct.pack("<4I", *dims))
    body = model.flat().astype("<f8").tobytes()
    return b"".join(head) + body


def loads_model(data: bytes) -> SegModel:
    if data[:4] != MAGIC:
        raise ValueError("not a fenceguide model file")
    version, c_in, n_layers = struct.unpack_from("<III", data, 4)
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported model format version {version}")
    if n_layers != len(LAYER_NAMES) or c_in not in (1, 2):
        raise ValueError("corrupt model header")
    shapes = layer_shapes(c_in)
    off = 16
    for name in LAYER_NAMES:
        dims = struct.unpack_from("<4I", data, off)
        off += 16
        expect = shapes[name] + (1,) * (4 - len(shapes[name]))
        if dims != expect:
            raise ValueError(f"layer {name}: shape {dims} != {expect}")
    flat = np.frombuffer(data, dtype="<f8", offset=off)
    total = sum(int(np.prod(s)) for s in shapes.values())
    if flat.size != total:
        raise ValueError("model file truncated or padded")
    params, pos = {}, 0
    for name in LAYER_NAMES:
        size = int(np.prod(shapes[name]))
        params[name] = flat[pos:pos + size].astype(np.float64).reshape(shapes[name])
        pos += size
    return SegModel(c_in, params)


def save_model(model: SegModel, path) -> None:
    Path(path).write_bytes(dumps_model(model))


def load_model(path) -> SegModel:
    return loads_model(Path(path).read_bytes())
