"""Monotone-value networks (MVNNs).

A network maps a 0/1 bundle row through hidden layers
``h_s = min(t, max(0, W_s h_{s-1} + b_s))`` and a linear, bias-free output
layer.  With ``W_s >= 0`` and ``b_s <= 0`` the result is monotone under
bundle inclusion and exactly zero on the empty bundle.  Outputs are
multiplied by a stored target scale ``scale`` (see :mod:`mtmlca.training`).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .bundles import Bundle, mask_matrix
from .errors import ConfigError

FORMAT = "mtmlca.mvnn"
VERSION = 1


def bounded_relu(z, t: float):
    """``min(t, max(0, z))``, elementwise."""
    if t <= 0:
        raise ValueError("t must be positive")
    out = np.minimum(t, np.maximum(0.0, z))
    return float(out) if np.ndim(out) == 0 else out


@dataclass
class IdEmbedding:
    """Nonpositive per-bidder embedding appended at hidden layer ``layer`` (1-based)."""

    values: np.ndarray
    layer: int = 1

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64).ravel()
        if self.values.size < 1:
            raise ConfigError("embedding dimension must be >= 1")
        if np.any(self.values > 0):
            raise ConfigError("embedding entries must be <= 0")

    @property
    def dim(self) -> int:
        return self.values.size


@dataclass
class MvnnParams:
    """Weights ``W_1..W_K`` (shape out x in) and biases ``b_1..b_{K-1}``."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    t: float = 1.0
    scale: float = 1.0
    id_dim: int = 0
    id_layer: int | None = None
    _shapes: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        self.weights = [np.asarray(w, dtype=np.float64) for w in self.weights]
        self.biases = [np.asarray(b, dtype=np.float64).ravel() for b in self.biases]
        if len(self.weights) < 1 or len(self.biases) != len(self.weights) - 1:
            raise ConfigError("need K weight matrices and K-1 bias vectors")
        if self.t <= 0:
            raise ConfigError("t must be positive")
        if self.scale <= 0:
            raise ConfigError("scale must be positive")
        for s, w in enumerate(self.weights):
            if w.ndim != 2:
                raise ConfigError(f"weight {s + 1} is not a matrix")
            if s > 0 and w.shape[1] != self.weights[s - 1].shape[0]:
                raise ConfigError(f"weight {s + 1} input width does not chain")
            if s < len(self.biases) and self.biases[s].shape[0] != w.shape[0]:
                raise ConfigError(f"bias {s + 1} length does not match its layer")
        if self.weights[-1].shape[0] != 1:
            raise ConfigError("output layer must have width 1")

    @property
    def K(self) -> int:
        return len(self.weights)

    @property
    def m(self) -> int:
        return self.weights[0].shape[1]

    @property
    def embedding(self) -> IdEmbedding | None:
        if not self.id_dim:
            return None
        return IdEmbedding(self.biases[self.id_layer - 1][-self.id_dim:].copy(), self.id_layer)

    def satisfies_constraints(self) -> bool:
        return all(np.all(w >= 0) for w in self.weights) and all(
            np.all(b <= 0) for b in self.biases
        )

    def raw(self, X) -> np.ndarray:
        """Network output without the target scale, one value per row."""
        h = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if h.shape[1] != self.m:
            raise ValueError(f"bundle length {h.shape[1]} != input width {self.m}")
        for w, b in zip(self.weights[:-1], self.biases):
            h = np.minimum(self.t, np.maximum(0.0, h @ w.T + b))
        return (h @ self.weights[-1].T)[:, 0]

    def predict(self, X) -> np.ndarray:
        return self.scale * self.raw(X)

    __call__ = predict

    def output_bound(self) -> float:
        return self.scale * float(self.weights[-1].sum()) * self.t

    def copy(self) -> MvnnParams:
        return MvnnParams(
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.t,
            self.scale,
            self.id_dim,
            self.id_layer,
        )

    # serialization

    def to_dict(self) -> dict:
        return {
            "format": FORMAT,
            "version": VERSION,
            "t": self.t,
            "scale": self.scale,
            "weights": [{"shape": list(w.shape), "data": w.ravel().tolist()} for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
            "embedding": None
            if not self.id_dim
            else {"dim": self.id_dim, "layer": self.id_layer},
        }

    @classmethod
    def from_dict(cls, doc: dict) -> MvnnParams:
        if doc.get("format") != FORMAT or doc.get("version") != VERSION:
            raise ConfigError("not a version-1 MVNN document")
        weights = [np.array(w["data"], dtype=np.float64).reshape(w["shape"]) for w in doc["weights"]]
        emb = doc.get("embedding")
        return cls(
            weights,
            [np.array(b, dtype=np.float64) for b in doc["biases"]],
            t=float(doc["t"]),
            scale=float(doc["scale"]),
            id_dim=0 if emb is None else int(emb["dim"]),
            id_layer=None if emb is None else int(emb["layer"]),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> MvnnParams:
        return cls.from_dict(json.loads(text))


def new_mvnn(m: int, hidden, t: float, rng: np.random.Generator, scale: float = 1.0) -> MvnnParams:
    """Fresh network; weights ~ U[0, 1/fan_in], biases ~ U[-0.1, 0]."""
    hidden = list(hidden)
    if not hidden:
        raise ConfigError("architecture needs at least one hidden layer")
    if m < 1 or min(hidden) < 1:
        raise ConfigError("layer widths must be >= 1")
    if t <= 0:
        raise ConfigError("t must be positive")
    widths = [m, *hidden, 1]
    weights, biases = [], []
    for s in range(len(widths) - 1):
        fan_in, fan_out = widths[s], widths[s + 1]
        weights.append(rng.uniform(0.0, 1.0 / fan_in, size=(fan_out, fan_in)))
        if s < len(widths) - 2:
            biases.append(-rng.uniform(0.0, 0.1, size=fan_out))
    return MvnnParams(weights, biases, t=t, scale=scale)


def forward(params: MvnnParams, bundle) -> float:
    """Scaled value of a single bundle (Bundle, mask or 0/1 vector)."""
    if isinstance(bundle, Bundle):
        if bundle.m != params.m:
            raise ValueError(f"bundle length {bundle.m} != input width {params.m}")
        x = bundle.to_array()
    elif isinstance(bundle, (int, np.integer)):
        x = mask_matrix([int(bundle)], params.m)[0]
    else:
        x = np.asarray(bundle, dtype=np.float64).ravel()
    return float(params.predict(x[None, :])[0])


def new_embedding(dim: int, layer: int, rng: np.random.Generator) -> IdEmbedding:
    return IdEmbedding(-rng.uniform(0.0, 0.1, size=dim), layer)


def inject_id(
    params: MvnnParams, embedding: IdEmbedding, rng: np.random.Generator | None = None
) -> MvnnParams:
    """Append ``embedding.dim`` units to hidden layer ``embedding.layer``.

    The new units get zero input weights and biases equal to the embedding.
    The next layer gains matching input columns, drawn from
    U[0, 1/fan_in] when ``rng`` is given and zero otherwise.
    """
    j = embedding.layer
    if params.id_dim:
        raise ConfigError("network already carries an ID embedding")
    if not 1 <= j <= params.K - 1:
        raise ConfigError(f"injection layer {j} outside hidden layers 1..{params.K - 1}")
    d = embedding.dim
    out = params.copy()
    w = out.weights[j - 1]
    out.weights[j - 1] = np.vstack([w, np.zeros((d, w.shape[1]))])
    out.biases[j - 1] = np.concatenate([out.biases[j - 1], embedding.values])
    nxt = out.weights[j]
    fan_in = nxt.shape[1] + d
    cols = (
        rng.uniform(0.0, 1.0 / fan_in, size=(nxt.shape[0], d))
        if rng is not None
        else np.zeros((nxt.shape[0], d))
    )
    out.weights[j] = np.hstack([nxt, cols])
    out.id_dim = d
    out.id_layer = j
    return out
