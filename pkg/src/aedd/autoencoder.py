"""Dense autoencoder trained from scratch with backpropagation and Adagrad.

Hidden layers use tanh; the embedding layer and the decoder output layer are
affine with no nonlinearity.  The loss is the mean squared reconstruction
error plus a Frobenius-norm weight penalty.  Training is full-batch and
deterministic for a given seed.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    InvalidParameterError,
    ModelFormatError,
    ShapeMismatchError,
    TrainingDivergedError,
)
from .phase import MaterialDataset, StandardizationStats, compute_standardization

MODEL_FORMAT = "aedd-autoencoder"
MODEL_VERSION = 1


@dataclass(frozen=True)
class Architecture:
    """Encoder layer sizes (input d, hidden ..., embedding p).

    The decoder mirrors the encoder.  An embedding as wide as the input
    (p = d) is allowed; it performs no compression but is useful for
    identity-map models in testing.
    """

    layer_sizes: tuple[int, ...]

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        if len(sizes) < 2:
            raise InvalidParameterError("architecture needs at least input and embedding sizes")
        if any(s < 1 for s in sizes):
            raise InvalidParameterError(f"layer sizes must be >= 1, got {sizes}")
        if sizes[-1] > sizes[0]:
            raise InvalidParameterError(
                f"embedding dimension {sizes[-1]} exceeds input dimension {sizes[0]}"
            )
        object.__setattr__(self, "layer_sizes", sizes)

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def embedding_dim(self) -> int:
        return self.layer_sizes[-1]

    @property
    def decoder_sizes(self) -> tuple[int, ...]:
        return tuple(reversed(self.layer_sizes))

    def layer_pairs(self):
        """(n_in, n_out) for every layer, encoder first then decoder."""
        enc = list(zip(self.layer_sizes[:-1], self.layer_sizes[1:]))
        dec = list(zip(self.decoder_sizes[:-1], self.decoder_sizes[1:]))
        return enc, dec


@dataclass
class NetworkParameters:
    """Weight/bias pairs for encoder and decoder layers."""

    encoder: list[tuple[np.ndarray, np.ndarray]]
    decoder: list[tuple[np.ndarray, np.ndarray]]

    def validate_against(self, arch: Architecture) -> None:
        enc, dec = arch.layer_pairs()
        for name, layers, pairs in (("encoder", self.encoder, enc), ("decoder", self.decoder, dec)):
            if len(layers) != len(pairs):
                raise ShapeMismatchError(f"{name} has {len(layers)} layers, expected {len(pairs)}")
            for i, ((w, b), (n_in, n_out)) in enumerate(zip(layers, pairs)):
                if w.shape != (n_out, n_in) or b.shape != (n_out,):
                    raise ShapeMismatchError(
                        f"{name} layer {i}: weights {w.shape}, bias {b.shape}, "
                        f"expected ({n_out}, {n_in}) and ({n_out},)"
                    )
                if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                    raise InvalidParameterError(f"{name} layer {i} has non-finite entries")

    def arrays(self):
        for w, b in self.encoder:
            yield w
            yield b
        for w, b in self.decoder:
            yield w
            yield b

    def n_parameters(self) -> int:
        return sum(a.size for a in self.arrays())

    def copy(self) -> "NetworkParameters":
        return NetworkParameters(
            [(w.copy(), b.copy()) for w, b in self.encoder],
            [(w.copy(), b.copy()) for w, b in self.decoder],
        )

    def zeros_like(self) -> "NetworkParameters":
        return NetworkParameters(
            [(np.zeros_like(w), np.zeros_like(b)) for w, b in self.encoder],
            [(np.zeros_like(w), np.zeros_like(b)) for w, b in self.decoder],
        )


def init_params(arch: Architecture, seed: int) -> NetworkParameters:
    """Fan-balanced uniform weights, zero biases, deterministic per seed."""
    rng = np.random.default_rng(seed)
    enc_pairs, dec_pairs = arch.layer_pairs()

    def make(pairs):
        layers = []
        for n_in, n_out in pairs:
            r = np.sqrt(6.0 / (n_in + n_out))
            layers.append((rng.uniform(-r, r, (n_out, n_in)), np.zeros(n_out)))
        return layers

    return NetworkParameters(make(enc_pairs), make(dec_pairs))


def _check_input(x: np.ndarray, dim: int, what: str) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != dim:
        raise ShapeMismatchError(f"{what} has {x.shape[-1]} components, expected {dim}")
    return x


def encode(params: NetworkParameters, z_std) -> np.ndarray:
    """Encoder forward pass on standardized coordinates (batched)."""
    x = _check_input(z_std, params.encoder[0][0].shape[1], "encoder input")
    last = len(params.encoder) - 1
    for i, (w, b) in enumerate(params.encoder):
        x = x @ w.T + b
        if i < last:
            x = np.tanh(x)
    return x


def decode(params: NetworkParameters, z_emb) -> np.ndarray:
    """Decoder forward pass back to standardized coordinates (batched)."""
    x = _check_input(z_emb, params.decoder[0][0].shape[1], "decoder input")
    last = len(params.decoder) - 1
    for i, (w, b) in enumerate(params.decoder):
        x = x @ w.T + b
        if i < last:
            x = np.tanh(x)
    return x


def reconstruct(params: NetworkParameters, z_std) -> np.ndarray:
    return decode(params, encode(params, z_std))


def loss(params: NetworkParameters, dataset_std: np.ndarray, beta: float) -> float:
    """Mean squared reconstruction error plus Frobenius weight penalty."""
    if beta < 0:
        raise InvalidParameterError("beta must be non-negative")
    z = np.atleast_2d(np.asarray(dataset_std, dtype=float))
    err = reconstruct(params, z) - z
    data_term = float(np.sum(err * err)) / z.shape[0]
    reg = sum(float(np.sum(w * w)) for w, _ in params.encoder)
    reg += sum(float(np.sum(w * w)) for w, _ in params.decoder)
    return data_term + beta * reg


def _forward_cached(params: NetworkParameters, z: np.ndarray):
    """Forward pass keeping layer outputs for backpropagation.

    Returns (output, cache) where cache holds, per layer, the layer input
    and a flag for whether tanh was applied to its output.
    """
    cache = []
    x = z
    for group, layers in (("enc", params.encoder), ("dec", params.decoder)):
        last = len(layers) - 1
        for i, (w, b) in enumerate(layers):
            pre = x @ w.T + b
            activated = i < last
            out = np.tanh(pre) if activated else pre
            cache.append((x, out, activated, group, i))
            x = out
    return x, cache


def loss_and_gradient(params: NetworkParameters, batch_std: np.ndarray, beta: float):
    """Loss on the batch and its exact gradient in parameter shape."""
    z = np.atleast_2d(np.asarray(batch_std, dtype=float))
    m = z.shape[0]
    out, cache = _forward_cached(params, z)
    err = out - z
    data_term = float(np.sum(err * err)) / m

    grad = params.zeros_like()
    delta = 2.0 * err / m
    for x_in, x_out, activated, group, i in reversed(cache):
        if activated:
            delta = delta * (1.0 - x_out * x_out)
        layers = params.encoder if group == "enc" else params.decoder
        g_layers = grad.encoder if group == "enc" else grad.decoder
        w, _ = layers[i]
        gw, gb = g_layers[i]
        gw += delta.T @ x_in
        gb += delta.sum(axis=0)
        delta = delta @ w

    reg = 0.0
    for layers, g_layers in ((params.encoder, grad.encoder), (params.decoder, grad.decoder)):
        for (w, _), (gw, _) in zip(layers, g_layers):
            reg += float(np.sum(w * w))
            gw += 2.0 * beta * w
    return data_term + beta * reg, grad


def loss_gradient(params: NetworkParameters, batch_std: np.ndarray, beta: float) -> NetworkParameters:
    return loss_and_gradient(params, batch_std, beta)[1]


@dataclass(frozen=True)
class TrainingConfig:
    beta: float = 1e-5
    learning_rate: float = 0.1
    epochs: int = 2000
    seed: int = 0
    adagrad_eps: float = 1e-10


@dataclass(frozen=True)
class TrainingRecord:
    final_loss: float
    final_reconstruction_error: float
    epochs: int
    seed: int


def fit_autoencoder(data_std: np.ndarray, arch: Architecture, config: TrainingConfig):
    """Full-batch Adagrad on standardized data; returns (params, record)."""
    z = np.atleast_2d(np.asarray(data_std, dtype=float))
    if z.shape[1] != arch.input_dim:
        raise ShapeMismatchError(
            f"data has {z.shape[1]} components but architecture expects {arch.input_dim}"
        )
    params = init_params(arch, config.seed)
    accum = params.zeros_like()
    lr, eps = config.learning_rate, config.adagrad_eps
    # overflow here is diagnosed by the divergence guard, not by warnings
    with np.errstate(over="ignore", invalid="ignore"):
        for epoch in range(config.epochs):
            value, grad = loss_and_gradient(params, z, config.beta)
            if not np.isfinite(value):
                raise TrainingDivergedError(epoch, value)
            for theta, g, acc in zip(params.arrays(), grad.arrays(), accum.arrays()):
                acc += g * g
                theta -= lr * g / (np.sqrt(acc) + eps)
        final = loss(params, z, config.beta)
        if not np.isfinite(final):
            raise TrainingDivergedError(config.epochs, final)
        recon = loss(params, z, 0.0)
    return params, TrainingRecord(final, recon, config.epochs, config.seed)


@dataclass(frozen=True)
class TrainedAutoencoder:
    """Trained network bound to the standardization of its training set."""

    params: NetworkParameters
    stats: StandardizationStats
    architecture: Architecture
    record: TrainingRecord

    def __post_init__(self):
        self.params.validate_against(self.architecture)
        if self.stats.dim != self.architecture.input_dim:
            raise ShapeMismatchError(
                f"standardization has {self.stats.dim} components, "
                f"architecture expects {self.architecture.input_dim}"
            )

    @property
    def embedding_dim(self) -> int:
        return self.architecture.embedding_dim

    def encode_values(self, values) -> np.ndarray:
        """Raw phase vectors (…, d) -> embeddings (…, p)."""
        return encode(self.params, self.stats.apply(values))

    def decode_values(self, embeddings) -> np.ndarray:
        """Embeddings (…, p) -> raw phase vectors (…, d)."""
        return self.stats.invert(decode(self.params, embeddings))

    def reconstruct_values(self, values) -> np.ndarray:
        return self.decode_values(self.encode_values(values))


def train(dataset: MaterialDataset, arch: Architecture, config: TrainingConfig) -> TrainedAutoencoder:
    """Standardize the dataset and fit the autoencoder on it."""
    stats = compute_standardization(dataset)
    if arch.input_dim != stats.dim:
        raise ShapeMismatchError(
            f"architecture input {arch.input_dim} does not match phase dimension {stats.dim}"
        )
    params, record = fit_autoencoder(stats.apply(dataset.values), arch, config)
    return TrainedAutoencoder(params, stats, arch, record)


def evaluate_test_loss(model: TrainedAutoencoder, test: MaterialDataset) -> float:
    """Mean reconstruction error on the model's standardized coordinates."""
    if len(test) == 0:
        raise InvalidParameterError("test dataset is empty")
    z = model.stats.apply(test.values)
    err = reconstruct(model.params, z) - z
    return float(np.sum(err * err)) / z.shape[0]


def _layers_to_json(layers):
    return [{"weights": w.tolist(), "bias": b.tolist()} for w, b in layers]


def _layers_from_json(obj, name):
    try:
        return [
            (np.asarray(layer["weights"], dtype=float), np.asarray(layer["bias"], dtype=float))
            for layer in obj
        ]
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"malformed {name} layer data: {exc}") from None


def save_model(model: TrainedAutoencoder, path) -> None:
    """Write the self-describing single-file model (JSON, full precision)."""
    doc = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "layer_sizes": list(model.architecture.layer_sizes),
        "standardization": {
            "mean": model.stats.mean.tolist(),
            "std": model.stats.std.tolist(),
        },
        "encoder": _layers_to_json(model.params.encoder),
        "decoder": _layers_to_json(model.params.decoder),
        "training": {
            "final_loss": model.record.final_loss,
            "final_reconstruction_error": model.record.final_reconstruction_error,
            "epochs": model.record.epochs,
            "seed": model.record.seed,
        },
    }
    Path(path).write_text(json.dumps(doc, indent=1), encoding="utf-8")


def load_model(path) -> TrainedAutoencoder:
    """Read a model file, validating format, version, and shapes."""
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"{path}: truncated or malformed model file: {exc}") from None
    if not isinstance(doc, dict) or doc.get("format") != MODEL_FORMAT:
        raise ModelFormatError(f"{path}: not a {MODEL_FORMAT} file")
    if doc.get("version") != MODEL_VERSION:
        raise ModelFormatError(f"{path}: unsupported version {doc.get('version')}")
    try:
        arch = Architecture(tuple(doc["layer_sizes"]))
        stats = StandardizationStats(
            np.asarray(doc["standardization"]["mean"], dtype=float),
            np.asarray(doc["standardization"]["std"], dtype=float),
        )
        params = NetworkParameters(
            _layers_from_json(doc["encoder"], "encoder"),
            _layers_from_json(doc["decoder"], "decoder"),
        )
        training = doc["training"]
        record = TrainingRecord(
            float(training["final_loss"]),
            float(training.get("final_reconstruction_error", training["final_loss"])),
            int(training["epochs"]),
            int(training["seed"]),
        )
    except (KeyError, TypeError, InvalidParameterError) as exc:
        raise ModelFormatError(f"{path}: incomplete model file: {exc}") from None
    try:
        return TrainedAutoencoder(params, stats, arch, record)
    except (ShapeMismatchError, InvalidParameterError) as exc:
        raise ModelFormatError(f"{path}: inconsistent model file: {exc}") from None
