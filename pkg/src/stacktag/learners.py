"""From-scratch one-vs-rest learners on numpy: logistic and squared-hinge
linear models and a dropout MLP, trained in float64 and serialized as
float32.

All gradients are hand-derived and checked against central finite
differences (``finite_diff_check``). Model files are a 4-byte little-endian
header length, a canonical JSON header describing parameter blocks, then
the raw float32 blocks in declared order, so a write/read/write cycle is
byte-identical.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import CorruptionError, DivergenceError, FormatError, ValidationError

MODEL_MAGIC = b"MMLM"
MODEL_VERSION = 1

LINEAR_LOSSES = ("logistic", "squared_hinge")
OPTIMIZERS = ("sgd", "adam")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    epochs: int = 30
    batch_size: int = 64
    l2: float = 0.0
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    divergence_threshold: float = 1e8

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValidationError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.epochs < 1:
            raise ValidationError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValidationError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.l2 < 0:
            raise ValidationError(f"l2 must be >= 0, got {self.l2}")
        if self.optimizer not in OPTIMIZERS:
            raise ValidationError(f"unknown optimizer {self.optimizer!r}")


def softplus(x: np.ndarray) -> np.ndarray:
    # log(1 + exp(x)) without overflow for large |x|
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def glorot_uniform(rng: np.random.Generator, fan_out: int, fan_in: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_out, fan_in))


def apply_inverted_dropout(
    x: np.ndarray, rate: float, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Zero a Bernoulli(rate) mask of units and scale survivors by 1/(1-rate).

    Returns (dropped activations, mask) so the same mask can scale the
    backward pass. rate == 0 returns the input untouched with an all-ones
    mask; expectation of the output equals the input for any rate < 1.
    """
    if not 0.0 <= rate < 1.0:
        raise ValidationError(f"dropout rate must lie in [0, 1), got {rate}")
    if rate == 0.0:
        return x, np.ones_like(x)
    keep = rng.random(x.shape) >= rate
    scale = 1.0 / (1.0 - rate)
    mask = keep * scale
    return x * mask, mask


# ---------------------------------------------------------------------------
# models


@dataclass
class LinearModel:
    """One-vs-rest linear scorer: scores = X @ W.T + b, one row of W per tag."""

    weights: np.ndarray  # (tags, dim)
    bias: np.ndarray  # (tags,)
    loss_kind: str
    loss_history: list[float] = field(default_factory=list)

    def __post_init__(self):
        if self.loss_kind not in LINEAR_LOSSES:
            raise ValidationError(f"unknown loss {self.loss_kind!r}")
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[0],):
            raise ValidationError("weights must be (tags, dim) with a bias per tag")

    @property
    def dim(self) -> int:
        return self.weights.shape[1]

    @property
    def tag_count(self) -> int:
        return self.weights.shape[0]

    def scores(self, x: np.ndarray) -> np.ndarray:
        x = _check_input(x, self.dim)
        return x @ self.weights.T + self.bias

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        return sigmoid(self.scores(x))

    def parameter_blocks(self) -> list[tuple[str, np.ndarray]]:
        return [("weights", self.weights), ("bias", self.bias)]

    def header_extra(self) -> dict:
        return {"loss": self.loss_kind}


@dataclass
class MlpModel:
    """Fully connected relu net with sigmoid tag outputs and inverted dropout.

    ``dropout_rates[i]`` applies to the output of hidden layer i during
    training; evaluation never drops. ``mask_seed`` fixes the mask stream so
    a training run is reproducible.
    """

    weights: list[np.ndarray]  # each (out, in)
    biases: list[np.ndarray]  # each (out,)
    dropout_rates: list[float]
    mask_seed: int = 0
    loss_history: list[float] = field(default_factory=list)

    def __post_init__(self):
        if len(self.weights) != len(self.biases):
            raise ValidationError("one bias vector per weight matrix")
        if len(self.dropout_rates) != max(len(self.weights) - 1, 0):
            raise ValidationError("one dropout rate per hidden layer")
        self.weights = [np.asarray(w, dtype=np.float64) for w in self.weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in self.biases]
        for w, b in zip(self.weights, self.biases):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ValidationError("each layer needs (out, in) weights and (out,) bias")
        for wa, wb in zip(self.weights, self.weights[1:]):
            if wb.shape[1] != wa.shape[0]:
                raise ValidationError("consecutive layer shapes do not chain")
        for r in self.dropout_rates:
            if not 0.0 <= r < 1.0:
                raise ValidationError(f"dropout rate must lie in [0, 1), got {r}")

    @property
    def dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def tag_count(self) -> int:
        return self.weights[-1].shape[0]

    def forward(
        self, x: np.ndarray, train: bool = False, rng: np.random.Generator | None = None
    ) -> tuple[np.ndarray, list]:
        """Scores plus the per-layer cache needed for backward."""
        x = _check_input(x, self.dim)
        if train and rng is None:
            raise ValidationError("training-mode forward needs an rng for dropout masks")
        cache = []
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w.T + b
            if i == last:
                cache.append((h, z, None))
                return z, cache
            a = np.maximum(z, 0.0)
            if train and self.dropout_rates[i] > 0.0:
                a, mask = apply_inverted_dropout(a, self.dropout_rates[i], rng)
            else:
                mask = None
            cache.append((h, z, mask))
            h = a
        raise AssertionError("unreachable")

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        scores, _ = self.forward(x, train=False)
        return sigmoid(scores)

    def backward(self, cache: list, dscores: np.ndarray) -> tuple[list, list, np.ndarray]:
        """Gradients for all layers given d(loss)/d(scores); also dL/dx."""
        grads_w = [None] * len(self.weights)
        grads_b = [None] * len(self.weights)
        delta = dscores
        for i in range(len(self.weights) - 1, -1, -1):
            h_in, z, mask = cache[i]
            grads_w[i] = delta.T @ h_in
            grads_b[i] = delta.sum(axis=0)
            if i == 0:
                return grads_w, grads_b, delta @ self.weights[i]
            dh = delta @ self.weights[i]
            _, z_prev, mask_prev = cache[i - 1]
            if mask_prev is not None:
                dh = dh * mask_prev
            delta = dh * (z_prev > 0.0)
        raise AssertionError("unreachable")

    def parameter_blocks(self) -> list[tuple[str, np.ndarray]]:
        blocks = []
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            blocks.append((f"w{i}", w))
            blocks.append((f"b{i}", b))
        return blocks

    def header_extra(self) -> dict:
        return {"dropout": list(self.dropout_rates), "mask_seed": int(self.mask_seed)}


def _check_input(x: np.ndarray, dim: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValidationError(f"inputs must be 2-D, got shape {x.shape}")
    if x.shape[1] != dim:
        raise ValidationError(f"model expects {dim} features, got {x.shape[1]}")
    return x


# ---------------------------------------------------------------------------
# losses


def _bce_loss_and_dscores(scores: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    # mean over samples and tags of softplus(s) - s*y
    n, t = scores.shape
    loss = float((softplus(scores) - scores * y).sum() / (n * t))
    dscores = (sigmoid(scores) - y) / (n * t)
    return loss, dscores


def _squared_hinge_loss_and_dscores(scores: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    ypm = 2.0 * y - 1.0
    margin = np.maximum(0.0, 1.0 - ypm * scores)
    n, t = scores.shape
    loss = float((margin**2).sum() / (n * t))
    dscores = (-2.0 * ypm * margin) / (n * t)
    return loss, dscores


def linear_loss_and_grads(
    model: LinearModel, x: np.ndarray, y: np.ndarray, l2: float = 0.0
) -> tuple[float, dict[str, np.ndarray]]:
    scores = model.scores(x)
    if model.loss_kind == "logistic":
        loss, dscores = _bce_loss_and_dscores(scores, y)
    else:
        loss, dscores = _squared_hinge_loss_and_dscores(scores, y)
    gw = dscores.T @ x
    gb = dscores.sum(axis=0)
    if l2 > 0.0:
        loss += l2 * float((model.weights**2).sum())
        gw = gw + 2.0 * l2 * model.weights
    return loss, {"weights": gw, "bias": gb}


def mlp_loss_and_grads(
    model: MlpModel,
    x: np.ndarray,
    y: np.ndarray,
    l2: float = 0.0,
    train: bool = False,
    rng: np.random.Generator | None = None,
) -> tuple[float, dict[str, np.ndarray]]:
    scores, cache = model.forward(x, train=train, rng=rng)
    loss, dscores = _bce_loss_and_dscores(scores, y)
    gw, gb, _ = model.backward(cache, dscores)
    grads = {}
    for i in range(len(model.weights)):
        if l2 > 0.0:
            loss += l2 * float((model.weights[i] ** 2).sum())
            gw[i] = gw[i] + 2.0 * l2 * model.weights[i]
        grads[f"w{i}"] = gw[i]
        grads[f"b{i}"] = gb[i]
    return loss, grads


# ---------------------------------------------------------------------------
# optimizers


class _Sgd:
    def __init__(self, params: dict[str, np.ndarray], lr: float):
        self.params = params
        self.lr = lr

    def step(self, grads: dict[str, np.ndarray]) -> None:
        for name, g in grads.items():
            self.params[name] -= self.lr * g


class _Adam:
    def __init__(self, params: dict[str, np.ndarray], lr: float, beta1: float, beta2: float, eps: float):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        b1t = 1.0 - self.beta1**self.t
        b2t = 1.0 - self.beta2**self.t
        for name, g in grads.items():
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            self.params[name] -= self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)


def _make_optimizer(cfg: TrainConfig, params: dict[str, np.ndarray]):
    if cfg.optimizer == "sgd":
        return _Sgd(params, cfg.learning_rate)
    return _Adam(params, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps)


# ---------------------------------------------------------------------------
# training loops


def _as_multihot(y: np.ndarray | Sequence[frozenset], tags: int, n: int) -> np.ndarray:
    if isinstance(y, np.ndarray):
        y = np.asarray(y, dtype=np.float64)
        if y.shape != (n, tags):
            raise ValidationError(f"targets must be ({n}, {tags}), got {y.shape}")
        return y
    if len(y) != n:
        raise ValidationError(f"{len(y)} target rows for {n} samples")
    out = np.zeros((n, tags), dtype=np.float64)
    for i, pos in enumerate(y):
        for p in pos:
            if not 0 <= p < tags:
                raise ValidationError(f"tag id {p} outside 0..{tags - 1}")
            out[i, p] = 1.0
    return out


def _run_epochs(
    params: dict[str, np.ndarray],
    batch_step: Callable[[np.ndarray], dict[str, np.ndarray]],
    full_loss: Callable[[], float],
    n: int,
    cfg: TrainConfig,
    shuffle_rng: np.random.Generator,
) -> list[float]:
    opt = _make_optimizer(cfg, params)
    history = []
    for epoch in range(cfg.epochs):
        order = shuffle_rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            grads = batch_step(idx)
            opt.step(grads)
        loss = full_loss()
        if not np.isfinite(loss) or loss > cfg.divergence_threshold:
            raise DivergenceError(f"training diverged at epoch {epoch}: loss {loss}", epoch)
        history.append(loss)
    return history


def train_linear(
    x: np.ndarray,
    y: np.ndarray | Sequence[frozenset],
    tags: int,
    loss_kind: str = "logistic",
    cfg: TrainConfig = TrainConfig(),
    seed: int = 0,
) -> LinearModel:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValidationError(f"inputs must be 2-D, got shape {x.shape}")
    n, d = x.shape
    if n == 0:
        raise ValidationError("cannot train on an empty input")
    yh = _as_multihot(y, tags, n)
    rng = np.random.default_rng(seed)
    model = LinearModel(np.zeros((tags, d)), np.zeros(tags), loss_kind)
    params = {"weights": model.weights, "bias": model.bias}

    def batch_step(idx):
        _, grads = linear_loss_and_grads(model, x[idx], yh[idx], cfg.l2)
        return grads

    def full_loss():
        loss, _ = linear_loss_and_grads(model, x, yh, cfg.l2)
        return loss

    model.loss_history = _run_epochs(params, batch_step, full_loss, n, cfg, rng)
    return model


def build_mlp(
    dim: int,
    hidden: Sequence[int],
    tags: int,
    dropout: float | Sequence[float] = 0.0,
    seed: int = 0,
) -> MlpModel:
    sizes = [dim, *hidden, tags]
    if any(s < 1 for s in sizes):
        raise ValidationError(f"layer sizes must be >= 1, got {sizes}")
    if isinstance(dropout, (int, float)):
        rates = [float(dropout)] * len(hidden)
    else:
        rates = [float(r) for r in dropout]
        if len(rates) != len(hidden):
            raise ValidationError("one dropout rate per hidden layer")
    init_rng = np.random.default_rng(seed)
    weights = []
    biases = []
    for fan_in, fan_out in zip(sizes, sizes[1:]):
        weights.append(glorot_uniform(init_rng, fan_out, fan_in))
        biases.append(np.zeros(fan_out))
    return MlpModel(weights, biases, rates, mask_seed=seed)


def train_mlp(
    x: np.ndarray,
    y: np.ndarray | Sequence[frozenset],
    tags: int,
    hidden: Sequence[int] = (64,),
    dropout: float | Sequence[float] = 0.0,
    cfg: TrainConfig = TrainConfig(),
    seed: int = 0,
) -> MlpModel:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValidationError(f"inputs must be 2-D, got shape {x.shape}")
    n, d = x.shape
    if n == 0:
        raise ValidationError("cannot train on an empty input")
    yh = _as_multihot(y, tags, n)
    model = build_mlp(d, hidden, tags, dropout, seed)
    shuffle_rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
    mask_rng = np.random.default_rng(np.random.SeedSequence([seed, 2]))
    params = {}
    for name, block in model.parameter_blocks():
        params[name] = block

    def batch_step(idx):
        _, grads = mlp_loss_and_grads(model, x[idx], yh[idx], cfg.l2, train=True, rng=mask_rng)
        return grads

    def full_loss():
        loss, _ = mlp_loss_and_grads(model, x, yh, cfg.l2, train=False)
        return loss

    model.loss_history = _run_epochs(params, batch_step, full_loss, n, cfg, shuffle_rng)
    return model


def predict_proba(model, x: np.ndarray) -> np.ndarray:
    """Per-tag probabilities from any trained model in this module."""
    if not hasattr(model, "predict_proba"):
        raise ValidationError(f"object of type {type(model).__name__} cannot predict")
    return model.predict_proba(x)


# ---------------------------------------------------------------------------
# gradient checking


@dataclass
class GradientReport:
    max_rel_error: float
    per_block: dict[str, float]

    @property
    def ok(self) -> bool:
        return self.max_rel_error < 1e-4


def finite_diff_check(
    loss_fn: Callable[[], tuple[float, dict[str, np.ndarray]]],
    params: dict[str, np.ndarray],
    epsilon: float = 1e-5,
    max_entries_per_block: int | None = None,
    rng: np.random.Generator | None = None,
) -> GradientReport:
    """Compare analytic gradients to central finite differences.

    ``loss_fn`` must be deterministic (fix any dropout masks before
    calling). Relative error per entry is |analytic - numeric| divided by
    max(|analytic|, |numeric|, 1e-12).
    """
    _, analytic = loss_fn()
    per_block = {}
    for name, block in params.items():
        grad = np.asarray(analytic[name])
        if grad.shape != block.shape:
            raise ValidationError(f"gradient shape mismatch for block {name!r}")
        indices = np.arange(block.size)
        if max_entries_per_block is not None and block.size > max_entries_per_block:
            pick_rng = rng if rng is not None else np.random.default_rng(0)
            indices = pick_rng.choice(block.size, size=max_entries_per_block, replace=False)
        worst = 0.0
        for flat_index in indices:
            where = np.unravel_index(flat_index, block.shape)
            keep = block[where]
            block[where] = keep + epsilon
            up, _ = loss_fn()
            block[where] = keep - epsilon
            down, _ = loss_fn()
            block[where] = keep
            numeric = (up - down) / (2.0 * epsilon)
            a = float(grad[where])
            denom = max(abs(a), abs(numeric), 1e-12)
            worst = max(worst, abs(a - numeric) / denom)
        per_block[name] = worst
    return GradientReport(max(per_block.values(), default=0.0), per_block)


# ---------------------------------------------------------------------------
# serialization: header-described float32 blocks


def _canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()


def save_model(model, path) -> None:
    blocks = model.parameter_blocks()
    header = {
        "format": MODEL_MAGIC.decode(),
        "version": MODEL_VERSION,
        "kind": "linear" if isinstance(model, LinearModel) else "mlp",
        "blocks": [{"name": n, "shape": list(b.shape)} for n, b in blocks],
    }
    header.update(model.header_extra())
    raw = _canonical_json(header)
    with open(path, "wb") as fh:
        fh.write(struct.pack("<I", len(raw)))
        fh.write(raw)
        for _, block in blocks:
            fh.write(np.ascontiguousarray(block, dtype="<f4").tobytes())


def load_model(path):
    blob = Path(path).read_bytes()
    if len(blob) < 4:
        raise CorruptionError(f"{path}: shorter than a header length field")
    (hlen,) = struct.unpack_from("<I", blob, 0)
    if len(blob) < 4 + hlen:
        raise CorruptionError(f"{path}: truncated header")
    try:
        header = json.loads(blob[4 : 4 + hlen])
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid header JSON ({exc})") from exc
    if header.get("format") != MODEL_MAGIC.decode():
        raise FormatError(f"{path}: not a model file")
    if header.get("version") != MODEL_VERSION:
        raise FormatError(f"{path}: unsupported model version {header.get('version')!r}")
    offset = 4 + hlen
    arrays = {}
    for spec_block in header["blocks"]:
        shape = tuple(spec_block["shape"])
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * 4
        if offset + nbytes > len(blob):
            raise CorruptionError(f"{path}: truncated block {spec_block['name']!r}")
        arr = np.frombuffer(blob[offset : offset + nbytes], dtype="<f4").reshape(shape)
        arrays[spec_block["name"]] = arr.astype(np.float64)
        offset += nbytes
    if offset != len(blob):
        raise CorruptionError(f"{path}: {len(blob) - offset} trailing bytes")
    if header["kind"] == "linear":
        return LinearModel(arrays["weights"], arrays["bias"], header["loss"])
    if header["kind"] == "mlp":
        layer_count = sum(1 for b in header["blocks"] if b["name"].startswith("w"))
        weights = [arrays[f"w{i}"] for i in range(layer_count)]
        biases = [arrays[f"b{i}"] for i in range(layer_count)]
        return MlpModel(weights, biases, list(header["dropout"]), int(header["mask_seed"]))
    raise FormatError(f"{path}: unknown model kind {header['kind']!r}")
