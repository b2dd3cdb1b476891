"""Fully connected feedforward regressor trained with backpropagation + Adam.

Hand-rolled on numpy in double precision: ReLU hidden layers, a single linear
output neuron, MSE loss, He-normal initialization, and seeded epoch shuffling.
Feature/target standardization is captured at training time and applied
transparently by `predict`, so callers always work in raw units (meters in,
dBm out).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .dataset import NormStats, SplitSets, apply_norm, fit_norm

__all__ = [
    "MLP_PRESETS",
    "MlpConfig",
    "MlpModel",
    "AdamState",
    "ModelFormatError",
    "ModelVersionError",
    "MODEL_FORMAT_VERSION",
    "init",
    "forward",
    "loss_and_gradients",
    "adam_step",
    "train",
    "predict",
    "save_model",
    "load_model",
]

# Hidden-layer widths selectable by name on the command line.
MLP_PRESETS = {
    "mlp32x128": (32, 128),
    "mlp64x256": (64, 256),
}

MODEL_FORMAT_VERSION = 1


class ModelFormatError(ValueError):
    """The file is not a well-formed model document."""


class ModelVersionError(ValueError):
    """The file's format version is not supported."""


def _rng(seed: int, key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(key,)))


@dataclass(frozen=True)
class MlpConfig:
    """Architecture and optimizer settings for one training run."""

    input_dim: int
    hidden: tuple[int, ...] = MLP_PRESETS["mlp32x128"]
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    epochs: int = 2000
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.input_dim < 1:
            raise ValueError(f"input_dim must be >= 1, got {self.input_dim}")
        if not self.hidden or any(h < 1 for h in self.hidden):
            raise ValueError(f"hidden widths must be positive, got {self.hidden}")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("beta1/beta2 must lie in [0, 1)")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    @property
    def layer_dims(self) -> tuple[int, ...]:
        return (self.input_dim, *self.hidden, 1)

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "hidden": list(self.hidden),
            "learning_rate": self.learning_rate,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "epsilon": self.epsilon,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MlpConfig":
        return cls(
            input_dim=d["input_dim"],
            hidden=tuple(d["hidden"]),
            learning_rate=d["learning_rate"],
            beta1=d["beta1"],
            beta2=d["beta2"],
            epsilon=d["epsilon"],
            epochs=d["epochs"],
            batch_size=d["batch_size"],
            seed=d["seed"],
        )


@dataclass
class MlpModel:
    """Weights/biases plus the normalization captured when they were fit."""

    config: MlpConfig
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    norm: NormStats | None = None
    training_log: list[dict] = field(default_factory=list)

    def __post_init__(self):
        dims = self.config.layer_dims
        if len(self.weights) != len(dims) - 1 or len(self.biases) != len(dims) - 1:
            raise ValueError("layer count does not match the config")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (dims[i], dims[i + 1]) or b.shape != (dims[i + 1],):
                raise ValueError(
                    f"layer {i} shapes {w.shape}/{b.shape} do not chain {dims[i]}->{dims[i+1]}"
                )

    @property
    def params(self) -> list[np.ndarray]:
        return self.weights + self.biases


def init(config: MlpConfig) -> MlpModel:
    """He-normal weights (std sqrt(2/fan_in)), zero biases, seeded."""
    rng = _rng(config.seed, 0)
    dims = config.layer_dims
    weights = [
        rng.normal(0.0, np.sqrt(2.0 / dims[i]), size=(dims[i], dims[i + 1]))
        for i in range(len(dims) - 1)
    ]
    biases = [np.zeros(dims[i + 1]) for i in range(len(dims) - 1)]
    return MlpModel(config=config, weights=weights, biases=biases)


# ---------------------------------------------------------------------------
# Forward / backward
# ---------------------------------------------------------------------------

def _forward_cached(model: MlpModel, x: np.ndarray):
    """Returns per-layer pre-activations and activations for backprop."""
    zs, acts = [], [x]
    a = x
    last = len(model.weights) - 1
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = a @ w + b
        zs.append(z)
        a = z if i == last else np.maximum(z, 0.0)
        acts.append(a)
    return zs, acts


def forward(model: MlpModel, features):
    """Network output in the normalized target domain. 1D in, float out."""
    x = np.asarray(features, dtype=np.float64)
    scalar = x.ndim == 1
    if scalar:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != model.config.input_dim:
        raise ValueError(
            f"expected {model.config.input_dim} features, got shape {x.shape}"
        )
    _, acts = _forward_cached(model, x)
    out = acts[-1][:, 0]
    return float(out[0]) if scalar else out


def loss_and_gradients(model: MlpModel, features: np.ndarray, targets: np.ndarray):
    """MSE over the batch and its gradients w.r.t. every weight and bias."""
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64).reshape(-1, 1)
    if x.shape[0] == 0:
        raise ValueError("batch must be non-empty")
    n = x.shape[0]
    zs, acts = _forward_cached(model, x)
    resid = acts[-1] - y
    loss = float(np.mean(resid ** 2))

    grads_w = [np.empty_like(w) for w in model.weights]
    grads_b = [np.empty_like(b) for b in model.biases]
    delta = 2.0 * resid / n
    for i in range(len(model.weights) - 1, -1, -1):
        grads_w[i] = acts[i].T @ delta
        grads_b[i] = delta.sum(axis=0)
        if i > 0:
            # ReLU subgradient: strictly positive pre-activations pass, 0 at 0
            delta = (delta @ model.weights[i].T) * (zs[i - 1] > 0.0)
    return loss, grads_w, grads_b


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    """First/second moment accumulators, one pair per parameter array."""

    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0

    @classmethod
    def for_params(cls, params: list[np.ndarray]) -> "AdamState":
        return cls(m=[np.zeros_like(p) for p in params], v=[np.zeros_like(p) for p in params])


def adam_step(state: AdamState, params: list[np.ndarray], grads: list[np.ndarray], config: MlpConfig) -> None:
    """One bias-corrected Adam update, applied to the parameters in place."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("parameter/gradient/state lengths differ")
    state.t += 1
    b1, b2 = config.beta1, config.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= config.learning_rate * (m / c1) / (np.sqrt(v / c2) + config.epsilon)


# ---------------------------------------------------------------------------
# Training and prediction
# ---------------------------------------------------------------------------

def train(config: MlpConfig, splits: SplitSets) -> MlpModel:
    """Fixed-epoch minibatch training; the validation set is logged, not used.

    Normalization is fit on the training split only. Every epoch reshuffles
    with the seeded generator and walks all minibatches including the final
    short one; there is no early stopping.
    """
    if len(splits.train) == 0:
        raise ValueError("training set is empty")
    if splits.train.n_features != config.input_dim:
        raise ValueError(
            f"config expects {config.input_dim} features, training set has {splits.train.n_features}"
        )
    stats = fit_norm(splits.train)
    x_tr, y_tr = apply_norm(stats, splits.train.features, splits.train.rss_dbm)
    have_val = len(splits.validation) > 0
    if have_val:
        x_va, y_va = apply_norm(stats, splits.validation.features, splits.validation.rss_dbm)

    model = init(config)
    model.norm = stats
    state = AdamState.for_params(model.params)
    shuffle = _rng(config.seed, 1)
    n = len(x_tr)
    bs = config.batch_size
    for epoch in range(config.epochs):
        perm = shuffle.permutation(n)
        for lo in range(0, n, bs):
            idx = perm[lo : lo + bs]
            _, gw, gb = loss_and_gradients(model, x_tr[idx], y_tr[idx])
            adam_step(state, model.params, gw + gb, config)
        train_mse = float(np.mean((forward(model, x_tr) - y_tr) ** 2))
        val_mse = float(np.mean((forward(model, x_va) - y_va) ** 2)) if have_val else float("nan")
        model.training_log.append({"epoch": epoch, "train_mse": train_mse, "val_mse": val_mse})
    return model


def predict(model: MlpModel, features):
    """RSS prediction in dBm from raw features; scalar for a single row."""
    x = np.asarray(features, dtype=np.float64)
    scalar = x.ndim == 1
    if model.norm is not None:
        x = apply_norm(model.norm, x)
    out = forward(model, x)
    if model.norm is not None:
        out = out * model.norm.target_std + model.norm.target_mean
    return float(out) if scalar else out


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

def save_model(model: MlpModel, path) -> None:
    doc = {
        "format_version": MODEL_FORMAT_VERSION,
        "kind": "mlp",
        "config": model.config.to_dict(),
        "norm": model.norm.to_dict() if model.norm is not None else None,
        "weights": [w.tolist() for w in model.weights],
        "biases": [b.tolist() for b in model.biases],
        "training_log": model.training_log,
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, sort_keys=True)
        f.write("\n")


def load_model(path) -> MlpModel:
    try:
        with open(path, "r", encoding="utf-8") as f:
            doc = json.load(f)
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise ModelFormatError(f"{path} is not a valid model file: {e}") from e
    if not isinstance(doc, dict) or "format_version" not in doc:
        raise ModelFormatError(f"{path} is missing the format header")
    if doc["format_version"] != MODEL_FORMAT_VERSION:
        raise ModelVersionError(
            f"{path} has format version {doc['format_version']}, expected {MODEL_FORMAT_VERSION}"
        )
    if doc.get("kind") != "mlp":
        raise ModelFormatError(f"{path} holds a {doc.get('kind')!r} model, not an MLP")
    try:
        config = MlpConfig.from_dict(doc["config"])
        weights = [np.asarray(w, dtype=np.float64) for w in doc["weights"]]
        biases = [np.asarray(b, dtype=np.float64) for b in doc["biases"]]
        norm = NormStats.from_dict(doc["norm"]) if doc["norm"] is not None else None
        log = list(doc.get("training_log", []))
        return MlpModel(config=config, weights=weights, biases=biases, norm=norm, training_log=log)
    except (KeyError, TypeError, ValueError) as e:
        if isinstance(e, (ModelFormatError, ModelVersionError)):
            raise
        raise ModelFormatError(f"{path} is malformed: {e}") from e
