"""Convolutional autoencoder whose encoder weights are the modulation patterns.

Training runs in two phases. Phase 1 fits encoder and decoder end to end on
clean measurements. Phase 2 freezes the decoder, re-initializes the encoder
and retrains it with detector noise, the pattern regularizers and clamping.
"""

from __future__ import annotations

import contextlib
import csv
import enum
import hashlib
import logging
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from spikit.imaging import BasisKind, BasisSet, MeasurementVector
from spikit.neural import layers as L
from spikit.neural.model import Sequential, load_checkpoint, save_checkpoint
from spikit.neural.optim import Adam
from spikit.neural.regularizers import binary_regularizer, ortho_regularizer

log = logging.getLogger(__name__)

ENCODER = 0  # layer index of the pattern layer
CLAMP = (-1.0, 1.0)


class Variant(str, enum.Enum):
    B = "B"
    BO = "BO"
    NB = "NB"
    NBO = "NBO"


@dataclass(frozen=True)
class DcanConfig:
    side: int = 64
    pattern_count: int = 256
    variant: Variant = Variant.NB
    binary_weight: float = 1.0
    ortho_weight: float = 10.0
    train_eta: float = 1e-4
    epochs_phase1: int = 15
    epochs_phase2: int = 15
    batch_size: int = 32
    learning_rate: float = 1e-3
    # Adam moves a weight by at most about lr per step, so a short phase 2 needs a
    # larger rate for a Glorot-scale encoder to reach the +-1 clamp
    phase2_learning_rate: float = 1e-2
    # (kh, kw, filters) per ReLU conv; a linear 1x1 projection to one channel follows
    conv_layers: tuple = ((9, 9, 64), (1, 1, 64), (5, 5, 32))
    decoder_seed: int = 0
    encoder_seed: int = 1
    shuffle_seed: int = 2
    noise_seed: int = 3
    deterministic: bool = False

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        object.__setattr__(self, "conv_layers", tuple(tuple(int(v) for v in c) for c in self.conv_layers))
        if self.side < 2 or self.pattern_count < 1:
            raise ValueError("need side >= 2 and pattern_count >= 1")
        for w in (self.binary_weight, self.ortho_weight, self.train_eta):
            if not (np.isfinite(w) and w >= 0):
                raise ValueError("regularizer weights and train_eta must be finite and >= 0")
        if (min(self.epochs_phase1, self.epochs_phase2) < 0 or self.batch_size < 1
                or min(self.learning_rate, self.phase2_learning_rate) <= 0):
            raise ValueError("bad training schedule")
        if any(len(c) != 3 or min(c) < 1 for c in self.conv_layers):
            raise ValueError("conv_layers entries must be positive (kh, kw, filters) triplets")

    @property
    def alpha(self) -> float:
        return self.pattern_count / self.side**2

    def active_weights(self) -> tuple[float, float]:
        """``(lambda_b, lambda_o)`` actually applied in phase 2 for this variant."""
        lb = self.binary_weight if self.variant in (Variant.B, Variant.BO) else 0.0
        lo = self.ortho_weight if self.variant in (Variant.BO, Variant.NBO) else 0.0
        return lb, lo


def build(config: DcanConfig) -> Sequential:
    N, P = config.side, config.pattern_count
    enc_rng = np.random.default_rng(config.encoder_seed)
    dec_rng = np.random.default_rng(config.decoder_seed)
    layers: list[L.Layer] = [
        L.Dense(N * N, P, use_bias=False, rng=enc_rng),
        L.Dense(P, N * N, rng=dec_rng),
        L.BatchNorm(N * N),
        L.Reshape((N, N, 1)),
    ]
    channels = 1
    for kh, kw, filters in config.conv_layers:
        layers.append(L.Conv2D(kh, kw, channels, filters, "relu", rng=dec_rng))
        channels = filters
    layers.append(L.Conv2D(1, 1, channels, 1, "linear", rng=dec_rng))
    return Sequential(layers, (N * N,))


def reinit_encoder(model: Sequential, seed: int) -> None:
    enc = model.layers[ENCODER]
    rng = np.random.default_rng(seed)
    enc.params["W"] = L.glorot_uniform(rng, enc.params["W"].shape, enc.in_dim, enc.out_dim, np.float32)
    model.bump()


def decoder_checksum(model: Sequential) -> str:
    h = hashlib.sha256()
    for name, layer, _, arr in model.named_params():
        if layer is not model.layers[ENCODER]:
            h.update(name.encode())
            h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()


@dataclass
class HistoryRow:
    phase: int
    epoch: int
    mse: float
    omega_binary: float
    omega_ortho: float


class TrainingDiverged(FloatingPointError):
    def __init__(self, message: str, history: list):
        super().__init__(message)
        self.history = history


@dataclass
class TrainedDcan:
    model: Sequential
    config: DcanConfig
    history: list = field(default_factory=list)
    last_decode_ms: float | None = None

    @property
    def encoder_weights(self) -> np.ndarray:
        """Patterns as a ``P x N^2`` float32 matrix."""
        return self.model.layers[ENCODER].params["W"].T

    def save(self, path) -> None:
        extra = {"config": _config_dict(self.config), "history": [asdict(h) for h in self.history]}
        save_checkpoint(path, self.model, extra)

    @classmethod
    def load(cls, path) -> "TrainedDcan":
        model, extra = load_checkpoint(path)
        cfg = extra["config"]
        cfg["conv_layers"] = tuple(tuple(c) for c in cfg["conv_layers"])
        return cls(model, DcanConfig(**cfg), [HistoryRow(**h) for h in extra.get("history", [])])


def _config_dict(cfg: DcanConfig) -> dict:
    d = asdict(cfg)
    d["variant"] = cfg.variant.value
    d["conv_layers"] = [list(c) for c in cfg.conv_layers]
    return d


def _limits(deterministic: bool):
    if not deterministic:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=1)


def _as_batch(images: np.ndarray, N: int) -> np.ndarray:
    images = np.asarray(images)
    if images.ndim != 3 or images.shape[1:] != (N, N):
        raise ValueError(f"expected images of shape (count, {N}, {N}), got {images.shape}")
    if images.shape[0] == 0:
        raise ValueError("training set is empty")
    return images.reshape(images.shape[0], -1).astype(np.float32)


def _run_epochs(model, X, cfg: DcanConfig, phase: int, epochs: int, opt: Adam, history: list,
                noise_sigma: float, weights: tuple[float, float], clamp, shuffle_rng, noise_rng):
    enc = model.layers[ENCODER]
    N = cfg.side
    lb, lo = weights
    train_decoder = phase == 1
    for epoch in range(epochs):
        order = shuffle_rng.permutation(len(X))
        sq_err = 0.0
        for s in range(0, len(X), cfg.batch_size):
            xb = X[order[s : s + cfg.batch_size]]
            y, enc_cache = model.forward(xb, train=True, upto=ENCODER + 1)
            if noise_sigma > 0:
                y = y + noise_rng.normal(0.0, noise_sigma, size=y.shape).astype(np.float32)
            out, dec_cache = model.forward(y, train=True, start=ENCODER + 1)
            diff = out.reshape(len(xb), -1) - xb
            loss = float(np.mean(diff.astype(np.float64) ** 2))
            if not np.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss in phase {phase}, epoch {epoch + 1}", history)
            sq_err += loss * len(xb)
            gout = (2.0 / diff.size) * diff.reshape(out.shape)
            dec_grads, gy = model.backward(dec_cache, gout, need_input_grad=True)
            _, enc_grads = enc.backward(enc_cache.layer_caches[0][1], gy)
            gW = enc_grads["W"]
            if lb > 0:
                gW = gW + (lb * binary_regularizer(enc.params["W"])[1]).astype(np.float32)
            if lo > 0:
                gW = gW + (lo * ortho_regularizer(enc.params["W"].T)[1].T).astype(np.float32)
            grads = {"0.W": gW}
            params = {"0.W": enc.params["W"]}
            if train_decoder:
                for i, g in dec_grads.items():
                    for name, arr in g.items():
                        grads[f"{i}.{name}"] = arr
                        params[f"{i}.{name}"] = model.layers[i].params[name]
            opt.step(params, grads)
            if clamp is not None:
                np.clip(enc.params["W"], clamp[0], clamp[1], out=enc.params["W"])
            model.bump()
        W = enc.params["W"]
        history.append(HistoryRow(phase, epoch + 1, sq_err / len(X),
                                  binary_regularizer(W, grad=False)[0],
                                  ortho_regularizer(W.T, grad=False)[0]))
        log.info("phase %d epoch %d mse %.5f", phase, epoch + 1, history[-1].mse)


def train_phase1(model: Sequential, images, config: DcanConfig, history: list | None = None) -> list:
    """End-to-end MSE training on clean measurements. Returns the history list."""
    history = [] if history is None else history
    X = _as_batch(images, config.side)
    opt = Adam(lr=config.learning_rate)
    with _limits(config.deterministic):
        _run_epochs(model, X, config, 1, config.epochs_phase1, opt, history, 0.0, (0.0, 0.0), None,
                    np.random.default_rng(config.shuffle_seed), np.random.default_rng(config.noise_seed))
    return history


def train_phase2(model: Sequential, images, config: DcanConfig, history: list | None = None) -> TrainedDcan:
    """Retrain a fresh encoder against the frozen decoder.

    Decoder parameters are made read-only for the duration, so any write
    raises. Batch norm keeps normalizing with batch statistics and re-estimates
    its running statistics for the new encoder's measurement scale.
    """
    history = [] if history is None else history
    X = _as_batch(images, config.side)
    reinit_encoder(model, config.encoder_seed + 7919)
    frozen = [arr for _, layer, _, arr in model.named_params() if layer is not model.layers[ENCODER]]
    for layer in model.layers[ENCODER + 1 :]:
        layer.trainable = False
    for arr in frozen:
        arr.flags.writeable = False
    opt = Adam(lr=config.phase2_learning_rate)
    sigma = config.train_eta * config.side**2
    try:
        with _limits(config.deterministic):
            _run_epochs(model, X, config, 2, config.epochs_phase2, opt, history, sigma, config.active_weights(),
                        CLAMP, np.random.default_rng(config.shuffle_seed + 1), np.random.default_rng(config.noise_seed))
    finally:
        for arr in frozen:
            arr.flags.writeable = True
    return TrainedDcan(model, config, history)


def train(images, config: DcanConfig, phase1_model: Sequential | None = None) -> TrainedDcan:
    """Both phases. Pass ``phase1_model`` to reuse a decoder trained earlier (it is copied)."""
    if phase1_model is None:
        model = build(config)
        history = train_phase1(model, images, config)
    else:
        model = copy_model(phase1_model)
        history = []
    return train_phase2(model, images, config, history)


def copy_model(model: Sequential) -> Sequential:
    clone = Sequential([_clone_layer(l) for l in model.layers], model.input_shape)
    return clone


def _clone_layer(layer: L.Layer) -> L.Layer:
    import copy

    new = copy.copy(layer)
    new.params = {k: v.copy() for k, v in layer.params.items()}
    new.buffers = {k: v.copy() for k, v in layer.buffers.items()}
    return new


def extract_basis(trained: TrainedDcan) -> BasisSet:
    W = trained.encoder_weights.astype(np.float64)
    lo, hi = float(W.min()), float(W.max())
    vr = CLAMP if CLAMP[0] <= lo and hi <= CLAMP[1] else (lo, hi)
    return BasisSet(W, trained.config.side, BasisKind.LEARNED, vr)


def encode(trained: TrainedDcan, images) -> np.ndarray:
    X = _as_batch(images, trained.config.side)
    return trained.model.forward(X, train=False, upto=ENCODER + 1)[0]


def decode_batch(trained: TrainedDcan, Y: np.ndarray, batch_size: int = 64) -> np.ndarray:
    P, N = trained.config.pattern_count, trained.config.side
    Y = np.asarray(Y, dtype=np.float32)
    if Y.ndim != 2 or Y.shape[1] != P:
        raise ValueError(f"expected measurements of shape (count, {P}), got {Y.shape}")
    outs = [trained.model.forward(Y[s : s + batch_size], train=False, start=ENCODER + 1)[0]
            for s in range(0, len(Y), batch_size)]
    return np.clip(np.concatenate(outs).reshape(-1, N, N).astype(np.float64), 0.0, 1.0)


def decode(trained: TrainedDcan, y: MeasurementVector) -> np.ndarray:
    """Decoder-only inference on one measurement vector; clamps to [0, 1]."""
    P = trained.config.pattern_count
    if len(y) != P:
        raise ValueError(f"decoder expects {P} measurements, got {len(y)}")
    t0 = time.perf_counter()
    img = decode_batch(trained, y.values[None, :])[0]
    trained.last_decode_ms = (time.perf_counter() - t0) * 1e3
    return img


def write_history(path, history) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["phase", "epoch", "mse", "omega_binary", "omega_ortho"])
        for h in history:
            w.writerow([h.phase, h.epoch, f"{h.mse:.9g}", f"{h.omega_binary:.9g}", f"{h.omega_ortho:.9g}"])


def with_variant(config: DcanConfig, variant) -> DcanConfig:
    return replace(config, variant=Variant(variant))
