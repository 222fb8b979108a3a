"""Score-based classifiers: logistic regression and small ReLU networks.

Models are trained in the clear with plain numpy and evaluated three ways:

* float scores for training and reporting (the logistic sigmoid never
  leaves this path; thresholds live in pre-sigmoid margin space, which is
  equivalent because the sigmoid is monotone);
* exact fixed-point integer scores (`QuantizedModel`), the canonical
  prediction path shared with the protocol;
* inside the authenticated circuit (`circuit_margin_batch`), which mirrors
  the fixed-point path operation by operation so opened circuit scores
  equal the clear fixed-point scores as identical field elements.

Fixed-point layout: fractional_bits = 16, integer_bits = 8 by default, so
every quantized weight, score, and threshold is a signed 24-bit integer.
Multiplication accumulates at 32 fractional bits and floor-shifts back by
16 once per dot product; the circuit proves that shift with a
prover-supplied quotient/remainder pair.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from . import mimc
from .authvalue import AuthVec, Session
from .encoding import MODEL_MAGIC
from .errors import ConfigError
from .field import to_field_array
from .gadgets import bit_decompose, slice_row, trunc_floor


@dataclass(frozen=True)
class FixedPointConfig:
    fractional_bits: int = 16
    integer_bits: int = 8

    @property
    def scale(self) -> int:
        return 1 << self.fractional_bits

    @property
    def magnitude_bound(self) -> int:
        # signed values live in (-2^(i+f-1), 2^(i+f-1))
        return 1 << (self.integer_bits + self.fractional_bits - 1)


DEFAULT_FPC = FixedPointConfig()
SCORE_BITS = DEFAULT_FPC.integer_bits + DEFAULT_FPC.fractional_bits  # 24
SCORE_OFFSET = 1 << (SCORE_BITS - 1)


def quantize(x, fpc: FixedPointConfig = DEFAULT_FPC) -> np.ndarray:
    """round(x * 2^f), ties away from zero, as int64."""
    q = np.floor(np.asarray(x, dtype=np.float64) * fpc.scale + 0.5).astype(np.int64)
    if np.abs(q).max(initial=0) >= fpc.magnitude_bound:
        raise ConfigError("value does not fit the fixed-point range")
    return q


def quantize_features(X: np.ndarray, fpc: FixedPointConfig = DEFAULT_FPC) -> np.ndarray:
    """Quantize [0,1]-normalized features to [0, 2^f]."""
    X = np.asarray(X, dtype=np.float64)
    if X.min(initial=0.0) < -1e-9 or X.max(initial=0.0) > 1.0 + 1e-9:
        raise ConfigError("features must be normalized into [0, 1]")
    return np.floor(X * fpc.scale + 0.5).astype(np.int64)


# ----- float models ----------------------------------------------------------

@dataclass
class LogReg:
    weights: np.ndarray
    bias: float

    @property
    def n_features(self) -> int:
        return int(self.weights.shape[0])

    def margin_batch(self, X: np.ndarray) -> np.ndarray:
        return X @ self.weights + self.bias

    def score_batch(self, X: np.ndarray) -> np.ndarray:
        # pre-sigmoid margin; monotone in P[positive]
        return self.margin_batch(X)


@dataclass
class Ffnn:
    """Fully connected ReLU net; the last layer is linear with one or two
    outputs (two outputs score as out[1] - out[0])."""

    layers: list[tuple[np.ndarray, np.ndarray]]

    @property
    def n_features(self) -> int:
        return int(self.layers[0][0].shape[1])

    def score_batch(self, X: np.ndarray) -> np.ndarray:
        h = np.asarray(X, dtype=np.float64)
        for i, (W, b) in enumerate(self.layers):
            z = h @ W.T + b
            h = np.maximum(z, 0.0) if i < len(self.layers) - 1 else z
        if h.shape[1] == 1:
            return h[:, 0]
        return h[:, 1] - h[:, 0]


ScoreModel = LogReg | Ffnn


def sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.5
    epochs: int = 400
    seed: int = 0
    init_scale: float = 0.1
    l2: float = 1e-4


def _check_training_inputs(X, y):
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    if X.shape[0] == 0:
        raise ValueError("empty dataset")
    if not np.isin(y, (0, 1)).all():
        raise ValueError("labels must be binary")
    return X, y.astype(np.float64)


def train_logreg(X, y, config: TrainConfig = TrainConfig()) -> LogReg:
    """Full-batch gradient descent on the logistic loss; deterministic per seed."""
    X, y = _check_training_inputs(X, y)
    rng = np.random.default_rng(config.seed)
    w = rng.normal(0.0, config.init_scale, X.shape[1])
    b = 0.0
    n = X.shape[0]
    for _ in range(config.epochs):
        p = sigmoid(X @ w + b)
        g = p - y
        w -= config.learning_rate * (X.T @ g / n + config.l2 * w)
        b -= config.learning_rate * float(g.mean())
    if not np.isfinite(w).all() or not np.isfinite(b):
        raise ValueError("training diverged")
    return LogReg(weights=w, bias=b)


def train_ffnn(X, y, hidden=(8,), config: TrainConfig = TrainConfig()) -> Ffnn:
    """Small MLP trained with full-batch gradient descent on the logistic
    loss of the two-output margin."""
    X, y = _check_training_inputs(X, y)
    rng = np.random.default_rng(config.seed)
    sizes = [X.shape[1], *hidden, 2]
    layers = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        W = rng.normal(0.0, config.init_scale / np.sqrt(fan_in), (fan_out, fan_in))
        layers.append([W, np.zeros(fan_out)])
    n = X.shape[0]
    for _ in range(config.epochs):
        acts = [X]
        zs = []
        h = X
        for i, (W, b) in enumerate(layers):
            z = h @ W.T + b
            zs.append(z)
            h = np.maximum(z, 0.0) if i < len(layers) - 1 else z
            acts.append(h)
        margin = h[:, 1] - h[:, 0]
        g_margin = (sigmoid(margin) - y) / n
        g = np.stack([-g_margin, g_margin], axis=1)
        for i in reversed(range(len(layers))):
            W, b = layers[i]
            gW = g.T @ acts[i] + config.l2 * W
            gb = g.sum(axis=0)
            if i > 0:
                g = (g @ W) * (zs[i - 1] > 0)
            W -= config.learning_rate * gW
            b -= config.learning_rate * gb
    return Ffnn(layers=[(W.copy(), b.copy()) for W, b in layers])


# ----- exact fixed-point evaluation ------------------------------------------

def _acc_bits(fan_in: int, operand_bits: int) -> int:
    # |sum of (fan_in + 1) products| < (fan_in + 1) * 2^(operand_bits + 23)
    return operand_bits + SCORE_BITS - 1 + int(fan_in + 1).bit_length() + 1


@dataclass
class QuantizedModel:
    """Integer twin of a ScoreModel; all evaluation is exact int64."""

    kind: str                       # "logreg" | "ffnn"
    layers: list[tuple[np.ndarray, np.ndarray]]  # int64 (W_fp, b_fp)
    fpc: FixedPointConfig

    @property
    def n_features(self) -> int:
        return int(self.layers[0][0].shape[1])

    @property
    def shape(self) -> list[int]:
        return [self.n_features] + [int(W.shape[0]) for W, _ in self.layers]

    def param_elements(self) -> np.ndarray:
        flat = [np.concatenate([W.ravel(), b]) for W, b in self.layers]
        return to_field_array(np.concatenate(flat))

    def score_fp_batch(self, Xq: np.ndarray) -> np.ndarray:
        f = self.fpc.fractional_bits
        h = np.asarray(Xq, dtype=np.int64)
        bound = self.fpc.magnitude_bound
        for i, (W, b) in enumerate(self.layers):
            acc = h @ W.T + (b.astype(np.int64) << f)
            z = acc >> f  # arithmetic shift: floor division by 2^f
            if np.abs(z).max(initial=0) >= bound:
                raise ConfigError("fixed-point overflow in evaluation")
            h = np.maximum(z, 0) if i < len(self.layers) - 1 else z
        if h.shape[1] == 1:
            scores = h[:, 0]
        else:
            scores = h[:, 1] - h[:, 0]
        if np.abs(scores).max(initial=0) >= bound:
            raise ConfigError("fixed-point overflow in score")
        return scores


def quantize_model(model: ScoreModel, fpc: FixedPointConfig = DEFAULT_FPC) -> QuantizedModel:
    if isinstance(model, LogReg):
        layers = [(quantize(model.weights, fpc).reshape(1, -1),
                   quantize([model.bias], fpc))]
        return QuantizedModel(kind="logreg", layers=layers, fpc=fpc)
    layers = [(quantize(W, fpc), quantize(b, fpc)) for W, b in model.layers]
    return QuantizedModel(kind="ffnn", layers=layers, fpc=fpc)


@dataclass
class ThresholdedModel:
    """A quantized score model plus one fixed-point threshold per group.

    predict = 1 iff score_fp >= t_group; ties score == t are positive.
    The model ignores the public randomness r (deterministic scoring), but
    r is threaded through the protocol interfaces and transcripts.
    """

    qmodel: QuantizedModel
    thresholds: dict[int, int]

    def predict_fp_batch(self, Xq: np.ndarray, groups: np.ndarray,
                         r=None) -> np.ndarray:
        scores = self.qmodel.score_fp_batch(Xq)
        t = np.array([self.thresholds[int(g)] for g in np.asarray(groups)],
                     dtype=np.int64)
        return (scores >= t).astype(np.int8)

    def threshold_elements(self) -> np.ndarray:
        codes = sorted(self.thresholds)
        return to_field_array(np.array([self.thresholds[c] for c in codes],
                                       dtype=np.int64))


# ----- serialization ----------------------------------------------------------

def model_digest_elements(tm: ThresholdedModel) -> list[int]:
    """Canonical element sequence bound by the model digest: a public
    header digest followed by every parameter and threshold."""
    qm = tm.qmodel
    header = [1 if qm.kind == "logreg" else 2, qm.fpc.fractional_bits,
              qm.fpc.integer_bits, len(qm.shape), *qm.shape, len(tm.thresholds)]
    h_pub = mimc.hash_elements(header)
    return [h_pub, *qm.param_elements().tolist(), *tm.threshold_elements().tolist()]


def model_digest(tm: ThresholdedModel) -> int:
    return mimc.tree_hash(model_digest_elements(tm))


def model_to_bytes(tm: ThresholdedModel) -> bytes:
    qm = tm.qmodel
    out = [MODEL_MAGIC, struct.pack("<BBB", 1 if qm.kind == "logreg" else 2,
                                    qm.fpc.fractional_bits, qm.fpc.integer_bits)]
    out.append(struct.pack("<I", len(qm.layers)))
    for W, b in qm.layers:
        out.append(struct.pack("<II", *W.shape))
        out.append(W.astype("<i8").tobytes())
        out.append(b.astype("<i8").tobytes())
    codes = sorted(tm.thresholds)
    out.append(struct.pack("<I", len(codes)))
    for c in codes:
        out.append(struct.pack("<Iq", c, tm.thresholds[c]))
    return b"".join(out)


def model_from_bytes(data: bytes) -> ThresholdedModel:
    if data[:8] != MODEL_MAGIC:
        raise ConfigError("bad model magic")
    kind_code, frac, intb = struct.unpack_from("<BBB", data, 8)
    fpc = FixedPointConfig(fractional_bits=frac, integer_bits=intb)
    off = 11
    (n_layers,) = struct.unpack_from("<I", data, off)
    off += 4
    layers = []
    for _ in range(n_layers):
        rows, cols = struct.unpack_from("<II", data, off)
        off += 8
        W = np.frombuffer(data, dtype="<i8", count=rows * cols,
                          offset=off).reshape(rows, cols).astype(np.int64)
        off += 8 * rows * cols
        b = np.frombuffer(data, dtype="<i8", count=rows, offset=off).astype(np.int64)
        off += 8 * rows
        layers.append((W, b))
    (n_thresh,) = struct.unpack_from("<I", data, off)
    off += 4
    thresholds = {}
    for _ in range(n_thresh):
        c, t = struct.unpack_from("<Iq", data, off)
        off += 12
        thresholds[c] = t
    kind = "logreg" if kind_code == 1 else "ffnn"
    return ThresholdedModel(qmodel=QuantizedModel(kind=kind, layers=layers, fpc=fpc),
                            thresholds=thresholds)


def model_to_json(tm: ThresholdedModel) -> str:
    qm = tm.qmodel
    return json.dumps({
        "kind": qm.kind,
        "fixed_point": {"fractional_bits": qm.fpc.fractional_bits,
                        "integer_bits": qm.fpc.integer_bits},
        "layers": [{"weights": W.tolist(), "bias": b.tolist()} for W, b in qm.layers],
        "thresholds": {str(k): int(v) for k, v in sorted(tm.thresholds.items())},
        "digest": f"{model_digest(tm):016x}",
    }, indent=2, sort_keys=True)


def score(model: ScoreModel, q, r=None) -> float:
    """Real-valued score of one query; deterministic models ignore r."""
    return float(model.score_batch(np.asarray(q, dtype=np.float64).reshape(1, -1))[0])


def quantized_score(model: ScoreModel, q, fpc: FixedPointConfig = DEFAULT_FPC,
                    r=None) -> int:
    """Fixed-point score of one query as a field element, computed natively
    in fixed point (matches the circuit path exactly)."""
    from .field import to_field
    qm = quantize_model(model, fpc)
    Xq = quantize_features(np.asarray(q, dtype=np.float64).reshape(1, -1), fpc)
    return to_field(int(qm.score_fp_batch(Xq)[0]))


# ----- circuit evaluation -----------------------------------------------------

def relu_circuit(session: Session, h: AuthVec) -> AuthVec:
    """max(h, 0) for signed 24-bit plaintexts, via the sign bit of h + 2^24."""
    shifted = session.add_const(h, 1 << SCORE_BITS)
    bits = bit_decompose(session, shifted, SCORE_BITS + 1)
    nonneg = slice_row(bits, SCORE_BITS, h.n)
    return session.mul(nonneg, h)


def circuit_margin_batch(session: Session, qmodel_shape: list[int], kind: str,
                         params: AuthVec, q_cols: list[AuthVec],
                         fpc: FixedPointConfig = DEFAULT_FPC) -> AuthVec:
    """Authenticated fixed-point score, bit-exact with score_fp_batch.

    `params` holds the committed parameters in canonical order;
    `q_cols[k]` holds feature k for every lane of the batch.
    """
    f = fpc.fractional_bits
    n = q_cols[0].n
    sizes = qmodel_shape
    h_cols = q_cols
    operand_bits = f + 1  # features start in [0, 2^f]
    p_off = 0

    def param(i: int) -> AuthVec:
        return AuthVec(session, params.vals[i:i + 1], params.macs[i:i + 1],
                       params.keys[i:i + 1])

    for layer_idx in range(len(sizes) - 1):
        fan_in, fan_out = sizes[layer_idx], sizes[layer_idx + 1]
        last = layer_idx == len(sizes) - 2
        in_bits = _acc_bits(fan_in, operand_bits)
        z_cols = []
        w_base = p_off
        b_base = p_off + fan_out * fan_in
        for j in range(fan_out):
            acc = None
            for k in range(fan_in):
                term = session.mul(session.broadcast(param(w_base + j * fan_in + k), n),
                                   h_cols[k])
                acc = term if acc is None else session.add(acc, term)
            bias = session.scalar_mul(1 << f, param(b_base + j))
            acc = session.add(acc, session.broadcast(bias, n))
            z = trunc_floor(session, acc, in_bits, f)
            z_cols.append(z)
        p_off = b_base + fan_out
        h_cols = z_cols if last else [relu_circuit(session, z) for z in z_cols]
        operand_bits = SCORE_BITS  # signed 24-bit activations from here on
    if len(h_cols) == 1:
        return h_cols[0]
    return session.sub(h_cols[1], h_cols[0])
