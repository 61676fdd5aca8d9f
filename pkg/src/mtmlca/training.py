"""Joint fitting of per-bidder MVNNs with soft parameter sharing.

The objective for a fit group ``I`` is

    sum_i sum_k (raw_i(x_ik) - y_ik / scale)**2
        + lam * sum_{i, j in I} sum_{s in S} ||W_i^s - W_j^s||_F**2

where the pair sum runs over ordered pairs and ``scale`` is the largest
reported value in the group.  Optimization is full-batch gradient descent
followed by projection onto ``W >= 0``, ``b <= 0`` after each step.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from .bundles import mask_matrix
from .errors import ConfigError, TrainingError
from .mvnn import MvnnParams, inject_id, new_embedding, new_mvnn

log = logging.getLogger(__name__)

SHARING_MODES = ("none", "front", "rear", "explicit")


@dataclass(frozen=True)
class TrainConfig:
    hidden: tuple[int, ...] = (16, 16)
    t: float = 1.0
    lr: float = 0.01
    epochs: int = 512
    lam: float = 1e-10
    sharing: str = "none"
    shared: tuple[int, ...] = ()
    inject_id: bool = False
    id_dim: int = 4
    id_layer: int = 1

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(w) for w in self.hidden))
        object.__setattr__(self, "shared", tuple(int(s) for s in self.shared))
        if not self.hidden or min(self.hidden) < 1:
            raise ConfigError("hidden widths must be a nonempty list of positive ints")
        if self.t <= 0:
            raise ConfigError("t must be positive")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.lam < 0:
            raise ConfigError("lam must be nonnegative")
        if self.sharing not in SHARING_MODES:
            raise ConfigError(f"sharing must be one of {SHARING_MODES}")
        K = self.K
        if any(not 1 <= s <= K for s in self.shared):
            raise ConfigError(f"shared layers must lie in 1..{K}")
        if self.inject_id:
            if self.id_dim < 1:
                raise ConfigError("id_dim must be >= 1")
            if not 1 <= self.id_layer <= K - 1:
                raise ConfigError(f"id_layer must lie in 1..{K - 1}")

    @property
    def K(self) -> int:
        return len(self.hidden) + 1

    def shared_layers(self) -> tuple[int, ...]:
        """Shared weight-matrix indices (1-based)."""
        K = self.K
        if self.sharing == "none":
            return ()
        if self.sharing == "front":
            return tuple(range(1, K // 2 + 1))
        if self.sharing == "rear":
            return tuple(range(K // 2, K + 1))
        return tuple(sorted(set(self.shared)))


METHODS = ("baseline", "mt-f", "mt-r")


def method_config(method: str, base: TrainConfig | None = None, **overrides) -> TrainConfig:
    """Training configuration for an auction method.

    ``baseline`` fits without sharing or ID injection; ``mt-f``/``mt-r`` share
    the front/rear weight matrices and inject IDs.  Keyword overrides are
    applied last.
    """
    base = base or TrainConfig()
    if method == "baseline":
        cfg = replace(base, lam=0.0, sharing="none", shared=(), inject_id=False)
    elif method == "mt-f":
        cfg = replace(base, sharing="front", inject_id=True)
    elif method == "mt-r":
        cfg = replace(base, sharing="rear", inject_id=True)
    else:
        raise ConfigError(f"unknown method {method!r}; expected one of {METHODS}")
    return replace(cfg, **overrides) if overrides else cfg


@dataclass
class FitGroup:
    """Bidders fitted jointly: one model and one report set per member."""

    bidders: tuple[int, ...]
    models: list[MvnnParams]
    X: list[np.ndarray]
    y: list[np.ndarray]
    scale: float

    def __post_init__(self):
        self.bidders = tuple(self.bidders)
        if not (len(self.bidders) == len(self.models) == len(self.X) == len(self.y)):
            raise ValueError("fit group members are inconsistent")
        if self.scale <= 0:
            raise ValueError("scale must be positive")

    def copy(self) -> FitGroup:
        return FitGroup(self.bidders, [p.copy() for p in self.models], self.X, self.y, self.scale)


def group_scale(values: Sequence[float]) -> float:
    top = max(values, default=0.0)
    return float(top) if top > 0 else 1.0


def build_fit_group(
    bidders: Sequence[int],
    reports: Mapping[int, Mapping[int, float]],
    m: int,
    config: TrainConfig,
    key: Sequence[int],
    scale: float | None = None,
) -> FitGroup:
    """Fresh models for ``bidders`` on their reports (``mask -> value`` maps).

    Bidder ``i`` initializes from substream ``(*key, i, 0)`` and draws its ID
    embedding from ``(*key, i, 1)``, so turning injection on never changes
    the base weights.
    """
    bidders = tuple(bidders)
    if not bidders:
        raise ValueError("fit group needs at least one bidder")
    X, y = [], []
    for i in bidders:
        pairs = sorted(reports[i].items())
        if not pairs:
            raise ValueError(f"bidder {i} has no reports")
        X.append(mask_matrix([mk for mk, _ in pairs], m))
        y.append(np.array([v for _, v in pairs], dtype=np.float64))
    if scale is None:
        scale = group_scale([float(v.max()) for v in y])
    models = []
    for i in bidders:
        p = new_mvnn(m, config.hidden, config.t, np.random.default_rng([*key, i, 0]), scale=scale)
        if config.inject_id:
            rng = np.random.default_rng([*key, i, 1])
            p = inject_id(p, new_embedding(config.id_dim, config.id_layer, rng), rng)
        models.append(p)
    return FitGroup(bidders, models, X, y, scale)


def sharing_penalty(models: Sequence[MvnnParams], shared: Sequence[int]) -> float:
    """Sum over ordered model pairs of squared Frobenius gaps on shared layers.

    Uses ``sum_{i,j} ||W_i - W_j||^2 = 2n sum_i ||W_i - mean||^2``.
    """
    total = 0.0
    n = len(models)
    for s in shared:
        mats = [p.weights[s - 1] for p in models]
        for w in mats[1:]:
            if w.shape != mats[0].shape:
                raise ValueError(f"shared layer {s} has mismatched shapes")
        stack = np.stack(mats)
        total += 2.0 * n * float(np.sum((stack - stack.mean(axis=0)) ** 2))
    return total


def _check_group(group: FitGroup):
    for i, y in zip(group.bidders, group.y):
        if y.size == 0:
            raise ValueError(f"bidder {i} has an empty report set")
    shapes = [[w.shape for w in p.weights] for p in group.models]
    if any(sh != shapes[0] for sh in shapes[1:]):
        raise ValueError("all models in a fit group must share one architecture")


class _Stack:
    """Group parameters stacked along a leading member axis.

    Members with equal report counts are evaluated together with batched
    matmuls; numpy evaluates those slice by slice, so each member's
    arithmetic is identical to fitting it alone.
    """

    def __init__(self, group: FitGroup):
        p0 = group.models[0]
        self.t = p0.t
        self.K = p0.K
        self.W = [np.stack([p.weights[s] for p in group.models]) for s in range(self.K)]
        self.b = [np.stack([p.biases[s] for p in group.models]) for s in range(self.K - 1)]
        self.buckets = []
        by_rows: dict[int, list[int]] = {}
        for k, X in enumerate(group.X):
            by_rows.setdefault(X.shape[0], []).append(k)
        n = len(group.models)
        for rows in sorted(by_rows):
            idx = by_rows[rows]
            whole = idx == list(range(n))
            X = np.stack([group.X[k] for k in idx])
            target = np.stack([group.y[k] / group.scale for k in idx])
            self.buckets.append((None if whole else np.array(idx), X, target))

    def loss_grads(self, want_grads: bool = True):
        t, K = self.t, self.K
        gW = [np.empty_like(w) for w in self.W] if want_grads else None
        gb = [np.empty_like(b) for b in self.b] if want_grads else None
        loss = 0.0
        for idx, X, target in self.buckets:
            W = self.W if idx is None else [w[idx] for w in self.W]
            b = self.b if idx is None else [v[idx] for v in self.b]
            acts, pre = [X], []
            h = X
            for s in range(K - 1):
                z = h @ W[s].transpose(0, 2, 1) + b[s][:, None, :]
                pre.append(z)
                h = np.minimum(t, np.maximum(0.0, z))
                acts.append(h)
            resid = (h @ W[-1].transpose(0, 2, 1))[:, :, 0] - target
            loss += float(np.sum(resid * resid))
            if not want_grads:
                continue
            d = (2.0 * resid)[:, :, None]
            gw = [None] * K
            gbb = [None] * (K - 1)
            gw[-1] = d.transpose(0, 2, 1) @ acts[-1]
            dh = d @ W[-1]
            for s in range(K - 2, -1, -1):
                z = pre[s]
                dz = dh * ((z > 0) & (z < t))
                gw[s] = dz.transpose(0, 2, 1) @ acts[s]
                gbb[s] = dz.sum(axis=1)
                if s:
                    dh = dz @ W[s]
            sel = slice(None) if idx is None else idx
            for s in range(K):
                gW[s][sel] = gw[s]
            for s in range(K - 1):
                gb[s][sel] = gbb[s]
        return loss, gW, gb

    def add_sharing(self, loss, gW, lam, shared):
        n = self.W[0].shape[0]
        for s in shared:
            w = self.W[s - 1]
            dev = w - w.mean(axis=0)
            loss += lam * 2.0 * n * float(np.sum(dev * dev))
            if gW is not None:
                gW[s - 1] = gW[s - 1] + 4.0 * lam * (n * w - w.sum(axis=0))
        return loss

    def step(self, gW, gb, lr):
        self.W = [np.maximum(w - lr * g, 0.0) for w, g in zip(self.W, gW)]
        self.b = [np.minimum(v - lr * g, 0.0) for v, g in zip(self.b, gb)]

    def write_back(self, models: list[MvnnParams]):
        for k, p in enumerate(models):
            p.weights = [w[k].copy() for w in self.W]
            p.biases = [v[k].copy() for v in self.b]


def _evaluate(stack: _Stack, config: TrainConfig, want_grads: bool):
    loss, gW, gb = stack.loss_grads(want_grads)
    shared = config.shared_layers()
    if config.lam and shared:
        loss = stack.add_sharing(loss, gW, config.lam, shared)
    return loss, gW, gb


def total_loss(group: FitGroup, config: TrainConfig) -> float:
    """Regression loss on scaled targets plus ``lam`` times the sharing penalty."""
    _check_group(group)
    return _evaluate(_Stack(group), config, False)[0]


def loss_gradients(group: FitGroup, config: TrainConfig):
    """Total loss and per-member ``(weight grads, bias grads)``."""
    _check_group(group)
    loss, gW, gb = _evaluate(_Stack(group), config, True)
    grads = [([g[k] for g in gW], [g[k] for g in gb]) for k in range(len(group.models))]
    return loss, grads


@dataclass
class FitResult:
    models: list[MvnnParams]
    initial_loss: float
    final_loss: float
    epochs: int
    bidders: tuple[int, ...] = field(default=())

    def diagnostics(self) -> dict:
        return {
            "bidders": list(self.bidders),
            "initial_loss": self.initial_loss,
            "final_loss": self.final_loss,
            "epochs": self.epochs,
        }


def mt_fit(group: FitGroup, config: TrainConfig) -> FitResult:
    """Projected full-batch gradient descent on :func:`total_loss`.

    All members update simultaneously.  The input group is left untouched.
    Full-batch descent draws no randomness; all randomness lives in the
    initialization done by :func:`build_fit_group`.
    """
    _check_group(group)
    stack = _Stack(group)
    lr = config.lr
    initial = None
    # overflow shows up as a non-finite loss, which is reported below
    with np.errstate(over="ignore", invalid="ignore"):
        for epoch in range(config.epochs):
            loss, gW, gb = _evaluate(stack, config, True)
            if not np.isfinite(loss):
                raise TrainingError(f"loss became non-finite at epoch {epoch}", epoch=epoch)
            if initial is None:
                initial = loss
            stack.step(gW, gb, lr)
        final = _evaluate(stack, config, False)[0]
    if not np.isfinite(final):
        raise TrainingError(f"loss became non-finite at epoch {config.epochs}", epoch=config.epochs)
    models = [p.copy() for p in group.models]
    stack.write_back(models)
    log.debug("fit %s: loss %.6g -> %.6g", group.bidders, initial, final)
    return FitResult(models, initial, final, config.epochs, group.bidders)


def finite_difference_gradient(
    group: FitGroup, config: TrainConfig, coordinate: tuple, h: float = 1e-4
) -> float:
    """Central difference of :func:`total_loss` along one raw parameter.

    ``coordinate`` is ``(member, "W" | "b", layer, index)`` with a 1-based
    layer and a numpy index tuple.  No projection is applied.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    member, kind, layer, index = coordinate

    def shifted(delta):
        g = group.copy()
        arr = (g.models[member].weights if kind == "W" else g.models[member].biases)[layer - 1]
        arr[index] += delta
        return total_loss(g, config)

    return (shifted(h) - shifted(-h)) / (2.0 * h)
