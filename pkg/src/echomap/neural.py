"""From-scratch stacked LSTM classifier: forward, backpropagation through time, dropout, Adam.

Two recurrent layers (the second emits only its final hidden state), a tanh
dense layer, and a 4-logit softmax head. All math is double-precision numpy
so gradients can be checked against central finite differences. Gate order
along the stacked weight axis is input, forget, candidate, output.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .seqdata import NormParams, SequenceDataset

FORMAT_TAG = "echomap-lstm/1"


class TrainingDiverged(RuntimeError):
    """Raised when a non-finite loss or gradient is detected during training."""


@dataclass
class ModelConfig:
    layer1_units: int = 64
    layer2_units: int = 32
    dense_units: int = 16
    dropout_rates: tuple[float, float, float] = (0.3, 0.3, 0.2)
    classes: int = 4
    input_dim: int = 1
    seq_len: int = 20
    learning_rate: float = 0.001
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 64
    epochs: int = 50
    clip_norm: float = 5.0
    seed: int = 0

    def __post_init__(self):
        if self.classes != 4:
            raise ValueError("classifier is fixed at 4 defect classes")
        if min(self.layer1_units, self.layer2_units, self.dense_units) <= 0:
            raise ValueError("unit counts must be positive")
        for r in self.dropout_rates:
            if not 0.0 <= r < 1.0:
                raise ValueError(f"dropout rate {r} outside [0, 1)")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["dropout_rates"] = list(self.dropout_rates)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["dropout_rates"] = tuple(d["dropout_rates"])
        return cls(**d)


@dataclass
class TrainHistory:
    entries: list[dict] = field(default_factory=list)  # per epoch: loss/accuracy
    wall_time_s: float = 0.0


@dataclass
class LstmModel:
    config: ModelConfig
    params: dict[str, np.ndarray]
    norm: NormParams | None = None


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - np.max(logits, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def init_params(config: ModelConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Uniform +-1/sqrt(fan_in) input weights, scaled-uniform recurrent weights, forget bias 1."""

    def uniform(rows, cols, fan_in):
        lim = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-lim, lim, size=(rows, cols))

    def lstm_layer(d_in, units):
        b = np.zeros(4 * units)
        b[units : 2 * units] = 1.0  # forget gate bias aids early gradient flow
        return uniform(d_in, 4 * units, d_in), uniform(units, 4 * units, units), b

    p: dict[str, np.ndarray] = {}
    p["lstm1.wx"], p["lstm1.wh"], p["lstm1.b"] = lstm_layer(config.input_dim, config.layer1_units)
    p["lstm2.wx"], p["lstm2.wh"], p["lstm2.b"] = lstm_layer(config.layer1_units, config.layer2_units)
    p["dense.w"] = uniform(config.layer2_units, config.dense_units, config.layer2_units)
    p["dense.b"] = np.zeros(config.dense_units)
    p["head.w"] = uniform(config.dense_units, config.classes, config.dense_units)
    p["head.b"] = np.zeros(config.classes)
    return p


def new_model(config: ModelConfig) -> LstmModel:
    rng = np.random.default_rng([config.seed, 0])
    return LstmModel(config=config, params=init_params(config, rng))


def lstm_cell_forward(x, h, c, wx, wh, b):
    """One LSTM step: returns (h', c') for input x and previous state (h, c)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    h = np.atleast_2d(np.asarray(h, dtype=float))
    c = np.atleast_2d(np.asarray(c, dtype=float))
    units = wh.shape[0]
    if x.shape[1] != wx.shape[0] or h.shape[1] != units or c.shape[1] != units:
        raise ValueError("state/input shapes do not match the cell weights")
    z = x @ wx + h @ wh + b
    i = sigmoid(z[:, :units])
    f = sigmoid(z[:, units : 2 * units])
    g = np.tanh(z[:, 2 * units : 3 * units])
    o = sigmoid(z[:, 3 * units :])
    c_new = f * c + i * g
    h_new = o * np.tanh(c_new)
    return h_new.squeeze(), c_new.squeeze()


def _layer_forward(x_seq: np.ndarray, wx, wh, b):
    batch, steps, _ = x_seq.shape
    units = wh.shape[0]
    h = np.zeros((batch, units))
    c = np.zeros((batch, units))
    cache = {"x": x_seq, "wx": wx, "wh": wh, "i": [], "f": [], "g": [], "o": [],
             "c_prev": [], "tanh_c": [], "h_prev": []}
    h_seq = np.empty((batch, steps, units))
    for t in range(steps):
        z = x_seq[:, t, :] @ wx + h @ wh + b
        i = sigmoid(z[:, :units])
        f = sigmoid(z[:, units : 2 * units])
        g = np.tanh(z[:, 2 * units : 3 * units])
        o = sigmoid(z[:, 3 * units :])
        cache["h_prev"].append(h)
        cache["c_prev"].append(c)
        c = f * c + i * g
        tanh_c = np.tanh(c)
        h = o * tanh_c
        for key, val in (("i", i), ("f", f), ("g", g), ("o", o), ("tanh_c", tanh_c)):
            cache[key].append(val)
        h_seq[:, t, :] = h
    return h_seq, cache


def _layer_backward(cache, dh_seq: np.ndarray):
    x_seq, wx, wh = cache["x"], cache["wx"], cache["wh"]
    batch, steps, _ = x_seq.shape
    units = wh.shape[0]
    dwx = np.zeros_like(wx)
    dwh = np.zeros_like(wh)
    db = np.zeros(4 * units)
    dx_seq = np.zeros_like(x_seq)
    dh_next = np.zeros((batch, units))
    dc_next = np.zeros((batch, units))
    for t in reversed(range(steps)):
        i, f, g, o = cache["i"][t], cache["f"][t], cache["g"][t], cache["o"][t]
        tanh_c = cache["tanh_c"][t]
        dh = dh_seq[:, t, :] + dh_next
        do = dh * tanh_c
        dc = dc_next + dh * o * (1.0 - tanh_c**2)
        di = dc * g
        dg = dc * i
        df = dc * cache["c_prev"][t]
        dz = np.hstack([
            di * i * (1.0 - i),
            df * f * (1.0 - f),
            dg * (1.0 - g**2),
            do * o * (1.0 - o),
        ])
        dwx += x_seq[:, t, :].T @ dz
        dwh += cache["h_prev"][t].T @ dz
        db += dz.sum(axis=0)
        dx_seq[:, t, :] = dz @ wx.T
        dh_next = dz @ wh.T
        dc_next = dc * f
    return {"wx": dwx, "wh": dwh, "b": db}, dx_seq


def _dropout_mask(rng: np.random.Generator, shape, rate: float) -> np.ndarray | None:
    if rate <= 0.0:
        return None
    return (rng.random(shape) >= rate) / (1.0 - rate)


def forward_batch(params, config: ModelConfig, x: np.ndarray, train: bool = False,
                  rng: np.random.Generator | None = None):
    """Class probabilities for a (batch, seq_len, input_dim) array, plus the BPTT cache."""
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite values in input sequences")
    if train and any(r > 0 for r in config.dropout_rates) and rng is None:
        raise ValueError("train-mode forward with dropout needs an RNG")
    r1, r2, r3 = config.dropout_rates if train else (0.0, 0.0, 0.0)

    h1_seq, cache1 = _layer_forward(x, params["lstm1.wx"], params["lstm1.wh"], params["lstm1.b"])
    m1 = _dropout_mask(rng, h1_seq.shape, r1)
    h1_drop = h1_seq if m1 is None else h1_seq * m1

    h2_seq, cache2 = _layer_forward(h1_drop, params["lstm2.wx"], params["lstm2.wh"], params["lstm2.b"])
    h2 = h2_seq[:, -1, :]
    m2 = _dropout_mask(rng, h2.shape, r2)
    h2_drop = h2 if m2 is None else h2 * m2

    a = np.tanh(h2_drop @ params["dense.w"] + params["dense.b"])
    m3 = _dropout_mask(rng, a.shape, r3)
    a_drop = a if m3 is None else a * m3

    logits = a_drop @ params["head.w"] + params["head.b"]
    probs = softmax(logits)
    cache = {"cache1": cache1, "cache2": cache2, "m1": m1, "m2": m2, "m3": m3,
             "h1_drop": h1_drop, "h2_drop": h2_drop, "a": a, "a_drop": a_drop, "probs": probs}
    return probs, cache


def forward(model: LstmModel, seq, mode: str = "infer", rng: np.random.Generator | None = None) -> np.ndarray:
    """Probabilities for a single sequence; train mode applies inverted dropout."""
    if mode not in ("train", "infer"):
        raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
    x = np.asarray(seq, dtype=float).reshape(1, -1, model.config.input_dim)
    probs, _ = forward_batch(model.params, model.config, x, train=(mode == "train"), rng=rng)
    return probs[0]


def loss(probs: np.ndarray, label: int) -> float:
    """Sparse categorical cross-entropy with probability clamping at 1e-12."""
    p = max(float(np.asarray(probs).reshape(-1)[label]), 1e-12)
    return -np.log(p)


def batch_loss(probs: np.ndarray, labels: np.ndarray) -> float:
    p = np.clip(probs[np.arange(len(labels)), labels], 1e-12, None)
    return float(-np.log(p).mean())


def backward(params, config: ModelConfig, cache, labels: np.ndarray) -> dict[str, np.ndarray]:
    """Gradients of the mean cross-entropy over the cached batch, for every parameter."""
    probs = cache["probs"]
    batch = len(labels)
    dlogits = probs.copy()
    dlogits[np.arange(batch), labels] -= 1.0
    dlogits /= batch

    grads: dict[str, np.ndarray] = {}
    grads["head.w"] = cache["a_drop"].T @ dlogits
    grads["head.b"] = dlogits.sum(axis=0)
    da = dlogits @ params["head.w"].T
    if cache["m3"] is not None:
        da = da * cache["m3"]
    dpre = da * (1.0 - cache["a"] ** 2)
    grads["dense.w"] = cache["h2_drop"].T @ dpre
    grads["dense.b"] = dpre.sum(axis=0)
    dh2 = dpre @ params["dense.w"].T
    if cache["m2"] is not None:
        dh2 = dh2 * cache["m2"]

    steps = cache["cache2"]["x"].shape[1]
    dh2_seq = np.zeros((batch, steps, config.layer2_units))
    dh2_seq[:, -1, :] = dh2
    g2, dh1 = _layer_backward(cache["cache2"], dh2_seq)
    if cache["m1"] is not None:
        dh1 = dh1 * cache["m1"]
    g1, _ = _layer_backward(cache["cache1"], dh1)

    for name, g in (("lstm1", g1), ("lstm2", g2)):
        grads[f"{name}.wx"] = g["wx"]
        grads[f"{name}.wh"] = g["wh"]
        grads[f"{name}.b"] = g["b"]
    return grads


def global_norm(grads: dict[str, np.ndarray]) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))


def clip_gradients(grads: dict[str, np.ndarray], max_norm: float) -> dict[str, np.ndarray]:
    norm = global_norm(grads)
    if norm > max_norm > 0:
        scale = max_norm / norm
        return {k: g * scale for k, g in grads.items()}
    return grads


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]

    @classmethod
    def zeros_like(cls, params) -> "AdamState":
        return cls(m={k: np.zeros_like(p) for k, p in params.items()},
                   v={k: np.zeros_like(p) for k, p in params.items()})


def adam_step(params, grads, state: AdamState, config: ModelConfig, t: int):
    """Bias-corrected Adam update (t counts from 1); returns updated params in place."""
    if t < 1:
        raise ValueError("Adam step count starts at 1")
    b1, b2, eps, lr = config.adam_beta1, config.adam_beta2, config.adam_eps, config.learning_rate
    for k, g in grads.items():
        state.m[k] = b1 * state.m[k] + (1 - b1) * g
        state.v[k] = b2 * state.v[k] + (1 - b2) * g * g
        m_hat = state.m[k] / (1 - b1**t)
        v_hat = state.v[k] / (1 - b2**t)
        params[k] = params[k] - lr * m_hat / (np.sqrt(v_hat) + eps)
    return params


def evaluate(model: LstmModel, x: np.ndarray, labels: np.ndarray,
             batch_size: int = 256) -> tuple[float, float]:
    """(mean loss, accuracy) in inference mode."""
    losses, correct = [], 0
    for start in range(0, len(labels), batch_size):
        xb = x[start : start + batch_size]
        yb = labels[start : start + batch_size]
        probs, _ = forward_batch(model.params, model.config, xb, train=False)
        losses.append(batch_loss(probs, yb) * len(yb))
        correct += int((probs.argmax(axis=1) == yb).sum())
    return float(np.sum(losses) / len(labels)), correct / len(labels)


def train(model: LstmModel, ds: SequenceDataset, config: ModelConfig | None = None):
    """Mini-batch Adam training on the dataset's train split; deterministic for a fixed seed.

    History entry 0 holds the pre-training evaluation. Non-finite losses or
    gradients abort with a diagnostic rather than silently continuing.
    """
    config = config or model.config
    if ds.split is None:
        raise ValueError("dataset must carry a train/test split")
    if ds.norm is None:
        raise ValueError("dataset must be normalized before training")
    model.norm = ds.norm

    train_ds = ds.subset("train")
    test_ds = ds.subset("test")
    x_train, y_train = train_ds.values_array(), train_ds.labels_array()
    x_test, y_test = test_ds.values_array(), test_ds.labels_array()

    shuffle_rng = np.random.default_rng([config.seed, 2])
    dropout_rng = np.random.default_rng([config.seed, 1])
    state = AdamState.zeros_like(model.params)
    history = TrainHistory()
    t0 = time.perf_counter()

    def record(epoch):
        tr_loss, tr_acc = evaluate(model, x_train, y_train)
        entry = {"epoch": epoch, "train_loss": tr_loss, "train_acc": tr_acc}
        if len(y_test):
            _, te_acc = evaluate(model, x_test, y_test)
            entry["test_acc"] = te_acc
        history.entries.append(entry)

    record(0)
    step = 0
    for epoch in range(1, config.epochs + 1):
        order = shuffle_rng.permutation(len(y_train))
        for start in range(0, len(order), config.batch_size):
            idx = order[start : start + config.batch_size]
            probs, cache = forward_batch(model.params, config, x_train[idx], train=True, rng=dropout_rng)
            cur_loss = batch_loss(probs, y_train[idx])
            if not np.isfinite(cur_loss):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch}, step {step}: loss={cur_loss}; "
                    f"learning rate {config.learning_rate} is likely too high or gradients exploded"
                )
            grads = backward(model.params, config, cache, y_train[idx])
            norm = global_norm(grads)
            if not np.isfinite(norm):
                raise TrainingDiverged(
                    f"non-finite gradients at epoch {epoch}, step {step} (norm={norm}); "
                    f"learning rate {config.learning_rate} is likely too high or gradients exploded"
                )
            grads = clip_gradients(grads, config.clip_norm)
            step += 1
            adam_step(model.params, grads, state, config, step)
        record(epoch)
    history.wall_time_s = time.perf_counter() - t0
    return model, history


def predict(model: LstmModel, ds: SequenceDataset, batch_size: int = 256):
    """(labels, confidences) for a dataset normalized with this model's parameters."""
    if ds.norm is None:
        raise ValueError("dataset is not normalized; predict requires model-matched normalization")
    if model.norm is not None and ds.norm.fingerprint != model.norm.fingerprint:
        raise ValueError(
            f"normalization fingerprint mismatch: dataset {ds.norm.fingerprint} vs model "
            f"{model.norm.fingerprint}; normalize inputs with the stored model parameters"
        )
    x = ds.values_array()
    labels = np.empty(len(ds.sequences), dtype=int)
    confidence = np.empty(len(ds.sequences))
    for start in range(0, len(labels), batch_size):
        probs, _ = forward_batch(model.params, model.config, x[start : start + batch_size], train=False)
        labels[start : start + batch_size] = probs.argmax(axis=1)
        confidence[start : start + batch_size] = probs.max(axis=1)
    return labels, confidence


def predict_raw_values(model: LstmModel, raw_sequences: np.ndarray, batch_size: int = 256):
    """Predict on raw (unnormalized) kHz sequences using the model's stored normalization."""
    if model.norm is None:
        raise ValueError("model carries no normalization parameters")
    x = (np.asarray(raw_sequences, dtype=float) - model.norm.mean) / model.norm.std
    x = x[:, :, None]
    labels = np.empty(len(x), dtype=int)
    confidence = np.empty(len(x))
    for start in range(0, len(x), batch_size):
        probs, _ = forward_batch(model.params, model.config, x[start : start + batch_size], train=False)
        labels[start : start + batch_size] = probs.argmax(axis=1)
        confidence[start : start + batch_size] = probs.max(axis=1)
    return labels, confidence


# ---------------------------------------------------------------------------
# Versioned JSON serialization (config + flat parameter arrays + normalization).
# ---------------------------------------------------------------------------


def save_model(model: LstmModel, path: str | Path):
    doc = {
        "format": FORMAT_TAG,
        "config": model.config.to_dict(),
        "params": {k: v.tolist() for k, v in sorted(model.params.items())},
        "normalization": None if model.norm is None else {
            "mean": model.norm.mean,
            "std": model.norm.std,
            "fingerprint": model.norm.fingerprint,
            "degenerate": model.norm.degenerate,
        },
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True) + "\n")


def load_model(path: str | Path) -> LstmModel:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != FORMAT_TAG:
        raise ValueError(f"unsupported model format {doc.get('format')!r}")
    norm = doc.get("normalization")
    return LstmModel(
        config=ModelConfig.from_dict(doc["config"]),
        params={k: np.array(v, dtype=float) for k, v in doc["params"].items()},
        norm=None if norm is None else NormParams(
            mean=norm["mean"], std=norm["std"], fingerprint=norm["fingerprint"],
            degenerate=norm.get("degenerate", False),
        ),
    )


def history_to_json(history: TrainHistory) -> dict:
    # Wall time intentionally omitted so persisted artifacts stay byte-reproducible.
    return {"entries": history.entries}
