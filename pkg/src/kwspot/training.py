"""Cross-entropy training with Adam, per-epoch learning-rate decay,
early stopping on validation accuracy, and binary checkpoints."""

from __future__ import annotations

import struct
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import audio_io, dsp
from .autodiff import Tensor, backward
from .errors import CheckpointError, ConfigError, DataError
from .models import Model, ModelConfig, build_model, model_forward

CHECKPOINT_MAGIC = b"KWSA"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    max_epochs: int = 40
    batch_size: int = 64
    base_lr: float = 1e-3
    lr_decay: float = 0.97
    patience: int = 10
    seed: int = 0
    metric: str = "val_accuracy"

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError("batch_size must be at least 1")
        if not self.patience < self.max_epochs:
            raise ConfigError("patience must be smaller than max_epochs")
        if self.metric != "val_accuracy":
            raise ConfigError(f"unsupported metric {self.metric!r}")


@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8


def init_adam(params: dict) -> AdamState:
    return AdamState(
        m={k: np.zeros_like(p.data) for k, p in params.items()},
        v={k: np.zeros_like(p.data) for k, p in params.items()},
    )


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    train_acc: float
    val_loss: float
    val_acc: float
    lr: float
    wall_time: float


@dataclass
class TrainHistory:
    records: list = field(default_factory=list)
    best_epoch: int = 0


def cross_entropy_loss(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood via the log-sum-exp stable form."""
    labels = np.asarray(labels)
    n, c = logits.shape
    if labels.min(initial=0) < 0 or labels.max(initial=-1) >= c:
        raise DataError(f"labels outside [0, {c})")
    row_max = logits.data.max(axis=1, keepdims=True)  # constant shift
    lse = (logits - row_max).exp().sum(axis=1).log() + Tensor(row_max.reshape(-1))
    onehot = np.zeros((n, c))
    onehot[np.arange(n), labels] = 1.0
    picked = (logits * Tensor(onehot)).sum(axis=1)
    return (lse - picked).mean()


def adam_step(params: dict, state: AdamState, lr: float):
    """One Adam update in place; missing gradients are treated as zero."""
    state.t += 1
    b1, b2, eps = state.beta1, state.beta2, state.epsilon
    bias1 = 1.0 - b1 ** state.t
    bias2 = 1.0 - b2 ** state.t
    for name, p in params.items():
        g = p.grad if p.grad is not None else 0.0
        state.m[name] = b1 * state.m[name] + (1.0 - b1) * g
        state.v[name] = b2 * state.v[name] + (1.0 - b2) * (g * g)
        m_hat = state.m[name] / bias1
        v_hat = state.v[name] / bias2
        p.data -= lr * m_hat / (np.sqrt(v_hat) + eps)


def lr_schedule(epoch: int, config: TrainConfig) -> float:
    """Multiplicative decay; epoch is 0-based."""
    return config.base_lr * config.lr_decay ** epoch


def _accuracy(logits: np.ndarray, labels: np.ndarray) -> float:
    return float((logits.argmax(axis=1) == labels).mean())


def evaluate_arrays(model: Model, x: np.ndarray, y: np.ndarray, batch_size: int = 64):
    """(mean loss, accuracy) of a frozen model over a feature array."""
    saved = model.mode
    model.set_mode("infer")
    total_loss, correct = 0.0, 0
    try:
        for start in range(0, len(x), batch_size):
            xb, yb = x[start:start + batch_size], y[start:start + batch_size]
            logits = model_forward(model, xb)
            total_loss += cross_entropy_loss(logits, yb).item() * len(xb)
            correct += int((logits.data.argmax(axis=1) == yb).sum())
    finally:
        model.set_mode(saved)
    return total_loss / len(x), correct / len(x)


def train_epoch(model: Model, train_data, opt_state: AdamState, config: TrainConfig,
                epoch: int):
    """One pass over (x, y) with a seeded shuffle; epoch is 1-based."""
    x, y = train_data
    rng = np.random.default_rng([config.seed, epoch])
    order = rng.permutation(len(x))
    lr = lr_schedule(epoch - 1, config)
    model.set_mode("train")
    total_loss, correct = 0.0, 0
    for batch_idx, start in enumerate(range(0, len(x), config.batch_size)):
        idx = order[start:start + config.batch_size]
        xb, yb = x[idx], y[idx]
        drop_rng = np.random.default_rng([config.seed, epoch, batch_idx])
        logits = model_forward(model, xb, rng=drop_rng)
        loss = cross_entropy_loss(logits, yb)
        for p in model.params.values():
            p.zero_grad()
        backward(loss)
        adam_step(model.params, opt_state, lr)
        total_loss += loss.item() * len(xb)
        correct += int((logits.data.argmax(axis=1) == yb).sum())
    return total_loss / len(x), correct / len(x)


def fit(model: Model, train_data, val_data, config: TrainConfig, val_metric=None):
    """Train with early stopping on validation accuracy.

    Stops once (epoch - best_epoch) >= patience; restores and returns the
    best snapshot. val_metric, if given, replaces the validation pass with
    a callable epoch -> accuracy (used by the early-stopping contract test).
    """
    if len(train_data[0]) == 0 or (val_metric is None and len(val_data[0]) == 0):
        raise DataError("train and validation splits must be non-empty")
    opt_state = init_adam(model.params)
    history = TrainHistory()
    best_acc = -1.0
    best_snap = model.snapshot()
    for epoch in range(1, config.max_epochs + 1):
        t0 = time.perf_counter()
        train_loss, train_acc = train_epoch(model, train_data, opt_state, config, epoch)
        if val_metric is not None:
            val_loss, val_acc = 0.0, float(val_metric(epoch))
        else:
            val_loss, val_acc = evaluate_arrays(model, *val_data, config.batch_size)
        history.records.append(EpochRecord(
            epoch=epoch, train_loss=train_loss, train_acc=train_acc,
            val_loss=val_loss, val_acc=val_acc, lr=lr_schedule(epoch - 1, config),
            wall_time=time.perf_counter() - t0,
        ))
        if val_acc > best_acc:  # strict improvement; ties do not reset patience
            best_acc = val_acc
            history.best_epoch = epoch
            best_snap = model.snapshot()
        if epoch - history.best_epoch >= config.patience:
            break
    model.restore(best_snap)
    return model, history


def write_metrics_csv(history: TrainHistory, path):
    lines = ["epoch,train_loss,train_acc,val_loss,val_acc,lr,seconds"]
    for r in history.records:
        lines.append(
            f"{r.epoch},{r.train_loss:.6f},{r.train_acc:.6f},"
            f"{r.val_loss:.6f},{r.val_acc:.6f},{r.lr:.8g},{r.wall_time:.3f}"
        )
    Path(path).write_text("\n".join(lines) + "\n")


def featurize_index(index, dsp_config, kind: str = "log_mel"):
    """Extract features for every entry: (N x T x D array, label indices)."""
    xs, ys = [], []
    for entry in index.entries:
        clip = audio_io.load_clip(entry)
        xs.append(dsp.mfcc_pipeline(clip, dsp_config, kind).values)
        ys.append(index.class_index(entry[1]))
    return np.stack(xs), np.asarray(ys, dtype=np.int64)


# ---- checkpoint format ------------------------------------------------
# magic "KWSA" | u32 version | u32 metadata length | metadata (key=value
# lines, UTF-8) | per parameter: u32 name length | name | u32 rank |
# rank * u32 dims | raw little-endian float64 values


def _model_metadata(model: Model, train_config: TrainConfig | None, labels) -> str:
    cfg = model.config
    lines = [
        f"arch={cfg.arch}",
        f"n_classes={cfg.n_classes}",
        f"input_shape={cfg.input_shape[0]},{cfg.input_shape[1]}",
        f"conv_channels={','.join(str(c) for c in cfg.resolved_channels())}",
        f"lstm_hidden={cfg.lstm_hidden}",
        f"dense_hidden={cfg.dense_hidden}",
        f"dropout_rate={cfg.dropout_rate!r}",
        f"seed={cfg.seed}",
    ]
    if labels is not None:
        lines.append(f"labels={','.join(labels)}")
    if train_config is not None:
        lines += [
            f"train.max_epochs={train_config.max_epochs}",
            f"train.batch_size={train_config.batch_size}",
            f"train.base_lr={train_config.base_lr!r}",
            f"train.lr_decay={train_config.lr_decay!r}",
            f"train.patience={train_config.patience}",
            f"train.seed={train_config.seed}",
        ]
    return "\n".join(lines)


def _iter_arrays(model: Model):
    for name, p in model.params.items():
        yield name, p.data
    for name, s in model.bn_stats.items():
        yield f"{name}_running_mean", s.mean
        yield f"{name}_running_var", s.var


def save_checkpoint(model: Model, path, train_config: TrainConfig | None = None,
                    labels=None, history: TrainHistory | None = None):
    """Serialize parameters and running statistics; history is not part of
    the wire format and is persisted separately via write_metrics_csv."""
    blob = bytearray()
    blob += CHECKPOINT_MAGIC
    blob += struct.pack("<I", CHECKPOINT_VERSION)
    meta = _model_metadata(model, train_config, labels).encode("utf-8")
    blob += struct.pack("<I", len(meta)) + meta
    for name, arr in _iter_arrays(model):
        encoded = name.encode("utf-8")
        blob += struct.pack("<I", len(encoded)) + encoded
        blob += struct.pack("<I", arr.ndim)
        blob += struct.pack(f"<{arr.ndim}I", *arr.shape)
        blob += arr.astype("<f8").tobytes()
    Path(path).write_bytes(bytes(blob))


class _Reader:
    def __init__(self, raw: bytes):
        self.raw = raw
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.raw):
            raise CheckpointError("truncated checkpoint file")
        out = self.raw[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def load_checkpoint(path):
    """Returns (model, metadata dict). Rejects bad magic, version and
    truncation with CheckpointError."""
    reader = _Reader(Path(path).read_bytes())
    if reader.take(4) != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: bad magic bytes")
    version = reader.u32()
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    meta_raw = reader.take(reader.u32()).decode("utf-8")
    meta = {}
    for line in meta_raw.splitlines():
        key, _, value = line.partition("=")
        meta[key] = value
    try:
        config = ModelConfig(
            arch=meta["arch"],
            n_classes=int(meta["n_classes"]),
            input_shape=tuple(int(v) for v in meta["input_shape"].split(",")),
            conv_channels=tuple(int(v) for v in meta["conv_channels"].split(",")),
            lstm_hidden=int(meta["lstm_hidden"]),
            dense_hidden=int(meta["dense_hidden"]),
            dropout_rate=float(meta["dropout_rate"]),
            seed=int(meta["seed"]),
        )
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"{path}: invalid metadata ({exc})") from exc
    model = build_model(config)
    expected = dict(_iter_arrays(model))
    while reader.pos < len(reader.raw):
        name = reader.take(reader.u32()).decode("utf-8")
        rank = reader.u32()
        shape = struct.unpack(f"<{rank}I", reader.take(4 * rank))
        count = int(np.prod(shape)) if rank else 1
        values = np.frombuffer(reader.take(8 * count), dtype="<f8").reshape(shape)
        if name not in expected:
            raise CheckpointError(f"{path}: unknown parameter {name!r}")
        if expected[name].shape != values.shape:
            raise CheckpointError(
                f"{path}: parameter {name!r} has shape {values.shape}, "
                f"expected {expected[name].shape}"
            )
        expected[name][...] = values
    model.set_mode("infer")
    return model, meta
