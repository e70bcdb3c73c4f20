"""Small 1D convolutional classifier with analytic gradients.

Schemes 1 and 2 use a single branch: a ReLU conv stack over the chunk,
flattened into fully connected layers ending in three logits. Scheme 3
adds a second input, the video's frame count, which passes through its
own fully connected layer and is concatenated with the conv branch's
penultimate activations before the head layers.

All parameters live in one flat float64 vector; per-layer arrays are
views into it, which keeps the optimizer and checkpoints trivial.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from viewprox import CLASSES
from viewprox.errors import MissingDuration, NonFiniteLoss, ShapeMismatch

FORMAT_VERSION = "viewprox-model/1"
N_CLASSES = len(CLASSES)


def conv_output_length(length: int, kernel: int, stride: int) -> int:
    return (length - kernel) // stride + 1


@dataclass
class SchemeConfig:
    scheme: int = 2
    conv_layers: list = field(default_factory=lambda: [(16, 7, 2), (32, 5, 2), (64, 3, 2)])
    fc_layers: list = field(default_factory=lambda: [(640, 32), (32, 3)])
    duration_fc: tuple | None = None
    head_layers: list = field(default_factory=list)
    input_length: int = 100
    # Frame counts are divided by this before the duration layer.
    duration_scale: float = 2400.0
    seed: int = 0
    learning_rate: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 100
    early_stop_patience: int = 10

    @classmethod
    def default(cls, scheme: int = 2, **overrides) -> "SchemeConfig":
        if scheme not in (1, 2, 3):
            raise ValueError(f"scheme must be 1, 2 or 3, got {scheme!r}")
        cfg = replace(cls(scheme=scheme), **overrides)
        if "fc_layers" not in overrides:
            flat = cfg.flatten_width()
            if scheme == 3:
                cfg.fc_layers = [(flat, 32)]
            else:
                cfg.fc_layers = [(flat, 32), (32, 3)]
        if scheme == 3:
            if "duration_fc" not in overrides:
                cfg.duration_fc = (1, 8)
            if "head_layers" not in overrides:
                cfg.head_layers = [(cfg.fc_layers[-1][1] + cfg.duration_fc[1], 16), (16, 3)]
        cfg.validate()
        return cfg

    def __post_init__(self) -> None:
        self.conv_layers = [tuple(int(v) for v in c) for c in self.conv_layers]
        self.fc_layers = [tuple(int(v) for v in f) for f in self.fc_layers]
        self.head_layers = [tuple(int(v) for v in f) for f in self.head_layers]
        if self.duration_fc is not None:
            self.duration_fc = tuple(int(v) for v in self.duration_fc)

    def flatten_width(self) -> int:
        channels, length = 1, self.input_length
        for out_ch, kernel, stride in self.conv_layers:
            length = conv_output_length(length, kernel, stride)
            channels = out_ch
        return channels * length

    def validate(self) -> None:
        if self.scheme not in (1, 2, 3):
            raise ShapeMismatch(f"scheme must be 1, 2 or 3, got {self.scheme!r}")
        if (self.scheme == 3) != (self.duration_fc is not None):
            raise ShapeMismatch("duration_fc is required for scheme 3 and only for scheme 3")
        channels, length = 1, self.input_length
        for out_ch, kernel, stride in self.conv_layers:
            length = conv_output_length(length, kernel, stride)
            if length < 1 or kernel < 1 or stride < 1 or out_ch < 1:
                raise ShapeMismatch(f"conv layer {(out_ch, kernel, stride)} does not fit")
            channels = out_ch
        width = channels * length
        if not self.fc_layers:
            raise ShapeMismatch("need at least one fully connected layer")
        for fin, fout in self.fc_layers:
            if fin != width:
                raise ShapeMismatch(f"fc layer expects {fin} inputs, previous layer gives {width}")
            width = fout
        if self.scheme == 3:
            if self.duration_fc[0] != 1:
                raise ShapeMismatch("duration layer takes a single input")
            width += self.duration_fc[1]
            if not self.head_layers:
                raise ShapeMismatch("scheme 3 needs head layers after the concatenation")
            for fin, fout in self.head_layers:
                if fin != width:
                    raise ShapeMismatch(f"head layer expects {fin} inputs, previous layer gives {width}")
                width = fout
        elif self.head_layers:
            raise ShapeMismatch("head layers are only used by scheme 3")
        if width != N_CLASSES:
            raise ShapeMismatch(f"network ends in {width} outputs, expected {N_CLASSES}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["conv_layers"] = [list(c) for c in self.conv_layers]
        d["fc_layers"] = [list(c) for c in self.fc_layers]
        d["head_layers"] = [list(c) for c in self.head_layers]
        d["duration_fc"] = None if self.duration_fc is None else list(self.duration_fc)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SchemeConfig":
        cfg = cls(**d)
        cfg.validate()
        return cfg

    def param_shapes(self) -> list[tuple[str, tuple[int, ...]]]:
        shapes = []
        in_ch = 1
        for i, (out_ch, kernel, _) in enumerate(self.conv_layers):
            shapes += [(f"conv{i}.W", (out_ch, in_ch, kernel)), (f"conv{i}.b", (out_ch,))]
            in_ch = out_ch
        for i, (fin, fout) in enumerate(self.fc_layers):
            shapes += [(f"fc{i}.W", (fout, fin)), (f"fc{i}.b", (fout,))]
        if self.scheme == 3:
            fin, fout = self.duration_fc
            shapes += [("dur.W", (fout, fin)), ("dur.b", (fout,))]
            for i, (fin, fout) in enumerate(self.head_layers):
                shapes += [(f"head{i}.W", (fout, fin)), (f"head{i}.b", (fout,))]
        return shapes


class SchemeModel:
    def __init__(self, config: SchemeConfig, params: np.ndarray | None = None):
        config.validate()
        self.config = config
        self.class_order = CLASSES
        shapes = config.param_shapes()
        size = sum(math.prod(s) for _, s in shapes)
        self.params = np.zeros(size) if params is None else np.array(params, dtype=float)
        if self.params.shape != (size,):
            raise ShapeMismatch(f"expected {size} parameters, got {self.params.shape}")
        self.layout: dict[str, tuple[int, tuple[int, ...]]] = {}
        offset = 0
        for name, shape in shapes:
            self.layout[name] = (offset, shape)
            offset += math.prod(shape)

    def view(self, name: str, flat: np.ndarray | None = None) -> np.ndarray:
        flat = self.params if flat is None else flat
        offset, shape = self.layout[name]
        return flat[offset : offset + math.prod(shape)].reshape(shape)

    @property
    def size(self) -> int:
        return len(self.params)


def init_model(config: SchemeConfig) -> SchemeModel:
    """He-style uniform initialization from the config seed; biases start at zero."""
    model = SchemeModel(config)
    rng = np.random.default_rng(config.seed)
    for name, (_, shape) in model.layout.items():
        if name.endswith(".W"):
            fan_in = math.prod(shape[1:])
            bound = math.sqrt(6.0 / fan_in)
            model.view(name)[...] = rng.uniform(-bound, bound, size=shape)
    return model


@dataclass
class Prediction:
    logits: np.ndarray
    probabilities: np.ndarray

    @property
    def label(self) -> str:
        return CLASSES[int(np.argmax(self.probabilities))]


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


# Layer primitives. Conv activations are (batch, channels, length).


def _conv_forward(h, W, b, stride):
    out_ch, in_ch, kernel = W.shape
    cols = sliding_window_view(h, kernel, axis=2)[:, :, ::stride, :]  # B, Cin, Lout, k
    B, _, Lout, _ = cols.shape
    cols = cols.transpose(0, 2, 1, 3).reshape(B * Lout, in_ch * kernel)
    out = cols @ W.reshape(out_ch, -1).T + b
    return out.reshape(B, Lout, out_ch).transpose(0, 2, 1), cols


def _conv_backward(dout, cols, W, stride, in_length):
    out_ch, in_ch, kernel = W.shape
    B, _, Lout = dout.shape
    d2 = dout.transpose(0, 2, 1).reshape(B * Lout, out_ch)
    dW = (d2.T @ cols).reshape(W.shape)
    db = d2.sum(axis=0)
    dcols = (d2 @ W.reshape(out_ch, -1)).reshape(B, Lout, in_ch, kernel)
    dh = np.zeros((B, in_ch, in_length))
    span = stride * (Lout - 1) + 1
    for j in range(kernel):
        dh[:, :, j : j + span : stride] += dcols[:, :, :, j].transpose(0, 2, 1)
    return dh, dW, db


def _check_inputs(model: SchemeModel, X, durations):
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != model.config.input_length:
        raise ShapeMismatch(f"expected (batch, {model.config.input_length}) input, got {X.shape}")
    if model.config.scheme == 3:
        if durations is None:
            raise MissingDuration("scheme 3 needs the video frame count")
        durations = np.asarray(durations, dtype=float).reshape(-1)
        if durations.shape != (len(X),):
            raise ShapeMismatch("one duration per chunk required")
    elif durations is not None:
        raise ShapeMismatch(f"scheme {model.config.scheme} takes no duration input")
    return X, durations


def forward_batch(model: SchemeModel, X, durations=None, params=None, keep_cache: bool = False):
    """Logits for a batch of chunks; optionally the activations for backprop."""
    X, durations = _check_inputs(model, X, durations)
    cfg = model.config
    v = lambda name: model.view(name, params)  # noqa: E731
    cache: dict = {"conv": [], "fc": [], "head": []}
    h = X[:, None, :]
    for i, (_, _, stride) in enumerate(cfg.conv_layers):
        z, cols = _conv_forward(h, v(f"conv{i}.W"), v(f"conv{i}.b"), stride)
        cache["conv"].append((cols, h.shape[2], z > 0))
        h = np.maximum(z, 0.0)
    conv_shape = h.shape
    a = h.reshape(len(X), -1)
    n_fc = len(cfg.fc_layers)
    for i in range(n_fc):
        z = a @ v(f"fc{i}.W").T + v(f"fc{i}.b")
        last = cfg.scheme != 3 and i == n_fc - 1
        cache["fc"].append((a, None if last else z > 0))
        a = z if last else np.maximum(z, 0.0)
    if cfg.scheme == 3:
        d = (durations / cfg.duration_scale)[:, None]
        zd = d @ v("dur.W").T + v("dur.b")
        cache["dur"] = (d, zd > 0)
        a = np.concatenate([a, np.maximum(zd, 0.0)], axis=1)
        n_head = len(cfg.head_layers)
        for i in range(n_head):
            z = a @ v(f"head{i}.W").T + v(f"head{i}.b")
            last = i == n_head - 1
            cache["head"].append((a, None if last else z > 0))
            a = z if last else np.maximum(z, 0.0)
    cache["conv_shape"] = conv_shape
    return (a, cache) if keep_cache else a


def forward(model: SchemeModel, chunk, duration=None) -> Prediction:
    chunk = np.asarray(chunk, dtype=float)
    if chunk.shape != (model.config.input_length,):
        raise ShapeMismatch(f"chunk must have {model.config.input_length} samples, got {chunk.shape}")
    logits = forward_batch(model, chunk[None], None if duration is None else [duration])[0]
    return Prediction(logits, softmax(logits))


def predict_proba(model: SchemeModel, X, durations=None) -> np.ndarray:
    return softmax(forward_batch(model, X, durations))


def _labels_to_index(labels) -> np.ndarray:
    out = []
    for y in labels:
        if isinstance(y, str):
            out.append(CLASSES.index(y))
        else:
            out.append(int(y))
    idx = np.array(out, dtype=int)
    if np.any((idx < 0) | (idx >= N_CLASSES)):
        raise ValueError("label out of range")
    return idx


def loss(predictions, labels) -> float:
    """Mean cross-entropy. Accepts a (B, 3) logit array or a list of Predictions."""
    if len(predictions) == 0:
        raise ValueError("empty batch")
    if isinstance(predictions[0], Prediction):
        logits = np.stack([p.logits for p in predictions])
    else:
        logits = np.asarray(predictions, dtype=float)
    y = _labels_to_index(labels)
    if len(y) != len(logits):
        raise ShapeMismatch("one label per prediction required")
    return float(-log_softmax(logits)[np.arange(len(y)), y].mean())


def backward(model: SchemeModel, X, labels, durations=None, params=None) -> tuple[float, np.ndarray]:
    """Mean cross-entropy and its exact gradient w.r.t. the flat parameter vector."""
    logits, cache = forward_batch(model, X, durations, params=params, keep_cache=True)
    y = _labels_to_index(labels)
    if len(y) != len(logits):
        raise ShapeMismatch("one label per chunk required")
    cfg = model.config
    B = len(y)
    logp = log_softmax(logits)
    value = float(-logp[np.arange(B), y].mean())
    grad = np.zeros(model.size)
    g = lambda name: model.view(name, grad)  # noqa: E731
    v = lambda name: model.view(name, params)  # noqa: E731

    delta = np.exp(logp)
    delta[np.arange(B), y] -= 1.0
    delta /= B

    def dense_back(prefix, layers_cache, delta):
        for i in reversed(range(len(layers_cache))):
            a_in, mask = layers_cache[i]
            if mask is not None:
                delta = delta * mask
            g(f"{prefix}{i}.W")[...] = delta.T @ a_in
            g(f"{prefix}{i}.b")[...] = delta.sum(axis=0)
            delta = delta @ v(f"{prefix}{i}.W")
        return delta

    if cfg.scheme == 3:
        delta = dense_back("head", cache["head"], delta)
        n_conv_feat = cfg.fc_layers[-1][1]
        delta, ddur = delta[:, :n_conv_feat], delta[:, n_conv_feat:]
        d, mask = cache["dur"]
        ddur = ddur * mask
        g("dur.W")[...] = ddur.T @ d
        g("dur.b")[...] = ddur.sum(axis=0)
    delta = dense_back("fc", cache["fc"], delta)
    dh = delta.reshape(cache["conv_shape"])
    for i in reversed(range(len(cfg.conv_layers))):
        cols, in_length, mask = cache["conv"][i]
        stride = cfg.conv_layers[i][2]
        dh, dW, db = _conv_backward(dh * mask, cols, v(f"conv{i}.W"), stride, in_length)
        g(f"conv{i}.W")[...] = dW
        g(f"conv{i}.b")[...] = db
    return value, grad


@dataclass
class ChunkData:
    X: np.ndarray
    y: np.ndarray
    durations: np.ndarray | None = None
    subjects: list | None = None

    def __post_init__(self) -> None:
        self.X = np.asarray(self.X, dtype=float)
        self.y = _labels_to_index(self.y)
        if len(self.X) != len(self.y):
            raise ShapeMismatch("X and y differ in length")
        if self.durations is not None:
            self.durations = np.asarray(self.durations, dtype=float)

    def __len__(self) -> int:
        return len(self.y)

    def durations_or_none(self, scheme: int, idx=slice(None)):
        if scheme != 3:
            return None
        if self.durations is None:
            raise MissingDuration("scheme 3 data needs durations")
        return self.durations[idx]


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    val_loss: float
    val_accuracy: float


def evaluate(model: SchemeModel, data: ChunkData) -> tuple[float, float]:
    logits = forward_batch(model, data.X, data.durations_or_none(model.config.scheme))
    return loss(logits, data.y), float((logits.argmax(axis=1) == data.y).mean())


def train(config: SchemeConfig, train_data: ChunkData, val_data: ChunkData) -> tuple[SchemeModel, list[EpochLog]]:
    """Adam on mini-batches, keeping the parameters with the best validation loss."""
    config.validate()
    if len(train_data) == 0 or len(val_data) == 0:
        raise ValueError("training and validation sets must be nonempty")
    if len(np.unique(train_data.y)) < 2:
        raise ValueError("training labels cover fewer than two classes")
    model = init_model(config)
    rng = np.random.default_rng(config.seed + 1)
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    m = np.zeros(model.size)
    s = np.zeros(model.size)
    step = 0
    best_loss, best_params, stale = math.inf, model.params.copy(), 0
    log: list[EpochLog] = []
    n = len(train_data)
    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            value, grad = backward(
                model, train_data.X[idx], train_data.y[idx], train_data.durations_or_none(config.scheme, idx)
            )
            if not math.isfinite(value) or not np.all(np.isfinite(grad)):
                raise NonFiniteLoss(f"non-finite loss at epoch {epoch}, step {step}")
            step += 1
            m = beta1 * m + (1 - beta1) * grad
            s = beta2 * s + (1 - beta2) * grad * grad
            m_hat = m / (1 - beta1**step)
            s_hat = s / (1 - beta2**step)
            model.params -= config.learning_rate * m_hat / (np.sqrt(s_hat) + eps)
            total += value * len(idx)
        val_loss, val_acc = evaluate(model, val_data)
        if not math.isfinite(val_loss):
            raise NonFiniteLoss(f"non-finite validation loss at epoch {epoch}")
        log.append(EpochLog(epoch, total / n, val_loss, val_acc))
        if val_loss < best_loss:
            best_loss, best_params, stale = val_loss, model.params.copy(), 0
        else:
            stale += 1
            if stale >= config.early_stop_patience:
                break
    model.params = best_params
    return model, log


def model_json(model: SchemeModel, run_config: dict | None = None) -> str:
    doc = {"format": FORMAT_VERSION, "config": model.config.to_dict(), "parameters": model.params.tolist()}
    if run_config is not None:
        doc["run_config"] = run_config
    return json.dumps(doc)


def save_model(path: str | Path, model: SchemeModel, run_config: dict | None = None) -> None:
    Path(path).write_text(model_json(model, run_config))


def load_model(path: str | Path) -> SchemeModel:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported model format {doc.get('format')!r}")
    return SchemeModel(SchemeConfig.from_dict(doc["config"]), np.array(doc["parameters"], dtype=float))
