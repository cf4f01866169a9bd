"""KERN network: embedding fusion, LSTM encoder, autoregressive LSTM decoder, losses."""
import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import NamedTuple, Optional

import numpy as np

from . import numcore as nc
from .errors import ConfigError, DataFormatError, ValidationError

LAMBDA_GRID = (0.0001, 0.0002, 0.001, 0.002, 0.01, 0.02)
CHECKPOINT_MAGIC = b"TRENDKERN-CHECKPOINT 1\n"


@dataclass(frozen=True)
class KernConfig:
    input_len: int = 52
    output_len: int = 26
    ext_kg: bool = True
    int_kg: bool = True
    triplet_lambda: float = 0.002
    sample_range: int = 500
    feat_size: int = 10
    rnn_hidden_size: int = 50
    margin: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.input_len < 1 or self.output_len < 1:
            raise ConfigError("input_len and output_len must be >= 1")
        if self.feat_size < 1 or self.rnn_hidden_size < 1:
            raise ConfigError("feat_size and rnn_hidden_size must be >= 1")
        if self.triplet_lambda < 0:
            raise ConfigError(f"triplet_lambda must be >= 0, got {self.triplet_lambda}")
        if not self.margin > 0:
            raise ConfigError(f"margin must be > 0, got {self.margin}")
        if self.sample_range < 1:
            raise ConfigError(f"sample_range must be >= 1, got {self.sample_range}")

    @property
    def input_dim(self):
        return 1 + (3 if self.ext_kg else 2) * self.feat_size


class KernParams:
    """Named weight tensors plus the vocab sizes they were built for."""

    def __init__(self, tensors, element_vocab, group_vocab, category_vocab=None):
        self.tensors = dict(tensors)
        self.element_vocab = element_vocab
        self.group_vocab = group_vocab
        self.category_vocab = category_vocab

    @property
    def ext_kg(self):
        return "parent_emb" in self.tensors

    def __getitem__(self, name):
        return self.tensors[name]

    def names(self):
        return list(self.tensors)

    def values(self):
        return list(self.tensors.values())

    def copy(self):
        return KernParams(
            {k: nc.Tensor(t.data.copy(), requires_grad=True, name=k) for k, t in self.tensors.items()},
            self.element_vocab, self.group_vocab, self.category_vocab,
        )


def param_shapes(config, element_vocab, group_vocab, category_vocab=None):
    F, H, D = config.feat_size, config.rnn_hidden_size, config.input_dim
    shapes = {"element_emb": (element_vocab, F), "group_emb": (group_vocab, F)}
    if config.ext_kg:
        if not category_vocab:
            raise ConfigError("external knowledge needs a category vocabulary size")
        shapes["parent_emb"] = (category_vocab, F)
    for side in ("enc", "dec"):
        shapes[f"{side}_wx"] = (D, 4 * H)
        shapes[f"{side}_wh"] = (H, 4 * H)
        shapes[f"{side}_b"] = (4 * H,)
    shapes["out_w"] = (H, 1)
    shapes["out_b"] = (1,)
    return shapes


def init_params(config, element_vocab, group_vocab, category_vocab=None, seed=None):
    """Glorot-uniform matrices; zero biases except LSTM forget gates at 1.0."""
    if element_vocab < 1 or group_vocab < 1:
        raise ConfigError("vocab sizes must be >= 1")
    rng = np.random.default_rng(config.seed if seed is None else seed)
    H = config.rnn_hidden_size
    tensors = {}
    for name, shape in param_shapes(config, element_vocab, group_vocab, category_vocab).items():
        if len(shape) == 2:
            bound = np.sqrt(6.0 / (shape[0] + shape[1]))
            data = rng.uniform(-bound, bound, shape)
        else:
            data = np.zeros(shape)
            if name.endswith("_b") and name != "out_b":
                data[H:2 * H] = 1.0
        tensors[name] = nc.Tensor(data, requires_grad=True, name=name)
    return KernParams(tensors, element_vocab, group_vocab, category_vocab if config.ext_kg else None)


# ------------------------------------------------------------------ forward


@dataclass
class Features:
    element_ids: np.ndarray
    group_ids: np.ndarray
    parent_ids: Optional[np.ndarray] = None

    def __len__(self):
        return len(self.element_ids)

    def take(self, idx):
        return Features(
            self.element_ids[idx], self.group_ids[idx],
            None if self.parent_ids is None else self.parent_ids[idx],
        )

    @staticmethod
    def stack(parts):
        parents = [p.parent_ids for p in parts]
        return Features(
            np.concatenate([p.element_ids for p in parts]),
            np.concatenate([p.group_ids for p in parts]),
            None if any(x is None for x in parents) else np.concatenate(parents),
        )


class EncodedState(NamedTuple):
    h: nc.Tensor
    c: nc.Tensor


def embed(params, feats):
    """Static per-sample feature vector: element, group (and parent) embeddings."""
    parts = [nc.embedding(params["element_emb"], feats.element_ids),
             nc.embedding(params["group_emb"], feats.group_ids)]
    if params.ext_kg:
        if feats.parent_ids is None:
            raise ConfigError("model has a parent embedding but features carry no parent ids")
        parts.append(nc.embedding(params["parent_emb"], feats.parent_ids))
    return nc.concat(parts)


def _static_projection(params, side, static):
    # [value_t | static] @ wx splits into value_t @ wx[0] + static @ wx[1:]
    wx = params[f"{side}_wx"]
    w_value = nc.slice(wx, 0, 1, axis=0)
    fixed = nc.add(nc.matmul(static, nc.slice(wx, 1, None, axis=0)), params[f"{side}_b"])
    return w_value, fixed


def _step(params, side, w_value, fixed, value, h, c):
    return nc.lstm_step(value, w_value, fixed, h, params[f"{side}_wh"], c)


def encode(params, inputs, feats, static=None):
    """Run the encoder over ``inputs`` (B, T); returns the final (h, c)."""
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.ndim != 2 or inputs.shape[0] != len(feats):
        raise ValidationError(f"encode: inputs {inputs.shape} for {len(feats)} feature rows")
    B = inputs.shape[0]
    H = params["enc_wh"].shape[0]
    if static is None:
        static = embed(params, feats)
    w_value, fixed = _static_projection(params, "enc", static)
    h = nc.Tensor(np.zeros((B, H)))
    c = nc.Tensor(np.zeros((B, H)))
    for t in range(inputs.shape[1]):
        h, c = _step(params, "enc", w_value, fixed, inputs[:, t:t + 1], h, c)
    return EncodedState(h, c)


def decode(params, state, last_value, feats, output_len, static=None):
    """Autoregressive decoder; each step feeds back its own previous prediction."""
    if static is None:
        static = embed(params, feats)
    w_value, fixed = _static_projection(params, "dec", static)
    value = np.asarray(last_value, dtype=np.float64).reshape(-1, 1)
    h, c = state
    preds = []
    for _ in range(output_len):
        h, c = _step(params, "dec", w_value, fixed, value, h, c)
        value = nc.add(nc.matmul(h, params["out_w"]), params["out_b"])
        preds.append(value)
    return nc.concat(preds)


def forward(params, inputs, feats, output_len):
    """Forecast tensor (B, output_len) plus the encoder state."""
    static = embed(params, feats)
    state = encode(params, inputs, feats, static)
    return decode(params, state, np.asarray(inputs)[:, -1], feats, output_len, static), state


def predict(params, inputs, feats, output_len, chunk=1024):
    """Tape-free forecasts as a numpy array, evaluated in fixed-size chunks."""
    inputs = np.asarray(inputs, dtype=np.float64)
    out = np.empty((inputs.shape[0], output_len))
    for lo in range(0, inputs.shape[0], chunk):
        idx = np.arange(lo, min(lo + chunk, inputs.shape[0]))
        out[idx] = forward(params, inputs[idx], feats.take(idx), output_len)[0].data
    return out


# ------------------------------------------------------------------ losses


def regression_loss(forecast, target):
    """Mean absolute error over every horizon step of every sample."""
    target = nc.Tensor(target) if not isinstance(target, nc.Tensor) else target
    if forecast.shape != target.shape:
        raise ValidationError(f"regression_loss: forecast {forecast.shape} vs target {target.shape}")
    return nc.mean(nc.abs(nc.sub(forecast, target)))


def triplet_loss(h_k, h_p, h_q, margin):
    """Hinge on l2-normalized hidden vectors, averaged over triplets."""
    k, p, q = nc.l2_normalize(h_k), nc.l2_normalize(h_p), nc.l2_normalize(h_q)
    gap = nc.sub(nc.euclidean_distance(k, p), nc.euclidean_distance(k, q))
    return nc.mean(nc.relu(nc.add(gap, margin)))


@dataclass
class Batch:
    inputs: np.ndarray
    targets: np.ndarray
    feats: Features


@dataclass
class TripletBatch:
    """Positive and negative windows aligned row-by-row with a Batch's anchors."""

    pos_inputs: np.ndarray
    pos_feats: Features
    neg_inputs: np.ndarray
    neg_feats: Features


def total_loss(batch, params, config, triplets=None, parts=None):
    """Regression loss, plus ``triplet_lambda`` times the triplet loss when int_kg.

    ``parts``, if a dict, receives the separate loss values.
    """
    if params.ext_kg != config.ext_kg:
        raise ConfigError("params and config disagree on external knowledge")
    B = len(batch.inputs)
    if config.int_kg:
        if triplets is None or len(triplets.pos_inputs) == 0:
            raise ConfigError("internal knowledge enabled but no triplets supplied")
        if len(triplets.pos_inputs) != B or len(triplets.neg_inputs) != B:
            raise ValidationError("triplet batch must align with the anchor batch")
        # one encoder pass over anchors, positives and negatives together
        feats = Features.stack([batch.feats, triplets.pos_feats, triplets.neg_feats])
        inputs = np.concatenate([batch.inputs, triplets.pos_inputs, triplets.neg_inputs])
        static = embed(params, feats)
        state = encode(params, inputs, feats, static)
        anchor_state = EncodedState(nc.slice(state.h, 0, B, axis=0), nc.slice(state.c, 0, B, axis=0))
        anchor_static = nc.slice(static, 0, B, axis=0)
        forecast = decode(params, anchor_state, batch.inputs[:, -1], batch.feats,
                          batch.targets.shape[1], anchor_static)
        reg = regression_loss(forecast, batch.targets)
        trip = triplet_loss(anchor_state.h, nc.slice(state.h, B, 2 * B, axis=0),
                            nc.slice(state.h, 2 * B, 3 * B, axis=0), config.margin)
        total = nc.add(reg, nc.mul(trip, config.triplet_lambda))
    else:
        forecast, _ = forward(params, batch.inputs, batch.feats, batch.targets.shape[1])
        reg = regression_loss(forecast, batch.targets)
        trip = None
        total = reg
    if parts is not None:
        parts["regression"] = reg.item()
        parts["triplet"] = None if trip is None else trip.item()
    return total


def model_gradcheck_problem(config, seed=0):
    """Tiny batch of two anchors with triplets, for finite-difference checking.

    Returns parameter names, their arrays, and ``fn(*tensors) -> total_loss``.
    """
    rng = np.random.default_rng(seed + 1)
    params = init_params(config, element_vocab=3, group_vocab=2, category_vocab=2, seed=seed)
    # move off Glorot scale so every gate sees a non-trivial operating point
    for t in params.values():
        t.data += rng.normal(0.0, 0.3, t.shape)

    def feats(e, g):
        e = np.array(e)
        return Features(e, np.array(g), e % 2 if config.ext_kg else None)

    batch = Batch(rng.uniform(0.1, 0.9, (2, config.input_len)),
                  rng.uniform(0.1, 0.9, (2, config.output_len)), feats([0, 1], [0, 1]))
    triplets = TripletBatch(rng.uniform(0.1, 0.9, (2, config.input_len)), feats([2, 0], [1, 1]),
                            rng.uniform(0.1, 0.9, (2, config.input_len)), feats([1, 2], [0, 0]))
    names = params.names()
    vocab = (params.element_vocab, params.group_vocab, params.category_vocab)

    def fn(*tensors):
        p = KernParams(dict(zip(names, tensors)), *vocab)
        return total_loss(batch, p, config, triplets if config.int_kg else None)

    return names, [t.data.copy() for t in params.values()], fn


# -------------------------------------------------------------- checkpoint


def save_checkpoint(path, params, config, meta=None):
    """Deterministic binary checkpoint: magic line, JSON header line, raw float64 data."""
    header = {
        "config": asdict(config),
        "vocab": {"element": params.element_vocab, "group": params.group_vocab,
                  "category": params.category_vocab},
        "meta": meta or {},
        "tensors": [{"name": k, "shape": list(t.shape)} for k, t in params.tensors.items()],
    }
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        for t in params.values():
            fh.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())


def load_checkpoint(path):
    """Returns ``(params, config, meta)``."""
    raw = Path(path).read_bytes()
    if not raw.startswith(CHECKPOINT_MAGIC):
        raise DataFormatError(f"{path}: not a trendkern checkpoint")
    end = raw.index(b"\n", len(CHECKPOINT_MAGIC))
    header = json.loads(raw[len(CHECKPOINT_MAGIC):end])
    offset = end + 1
    tensors = {}
    for spec in header["tensors"]:
        n = int(np.prod(spec["shape"], dtype=np.int64))
        data = np.frombuffer(raw, dtype="<f8", count=n, offset=offset).astype(np.float64)
        offset += 8 * n
        tensors[spec["name"]] = nc.Tensor(data.reshape(spec["shape"]), requires_grad=True, name=spec["name"])
    if offset != len(raw):
        raise DataFormatError(f"{path}: {len(raw) - offset} trailing bytes")
    config = KernConfig(**header["config"])
    v = header["vocab"]
    return KernParams(tensors, v["element"], v["group"], v["category"]), config, header["meta"]
