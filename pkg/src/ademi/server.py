"""Edge server: multi-view inference on uploaded latents, plus raw-data baselines."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from . import nn
from .dfs import max_normalize
from .encoder import FEATURES, LatentVector, build_head, build_trunk, dequantize
from .errors import DomainError


def concat_latents(views: Mapping[int, LatentVector] | Mapping[int, np.ndarray],
                   device_ids=None) -> np.ndarray:
    """Dequantized latents joined along the last axis in device-id order.

    ``device_ids`` lists the devices that must be present; arrival order of
    ``views`` does not matter.
    """
    ids = sorted(views) if device_ids is None else sorted(device_ids)
    missing = [k for k in ids if k not in views]
    if missing:
        raise DomainError(f"missing latents for devices {missing}")
    parts = []
    for k in ids:
        v = views[k]
        parts.append(dequantize(v) if isinstance(v, LatentVector) else np.asarray(v, float))
    lead = {p.shape[:-1] for p in parts}
    if len(lead) != 1:
        raise DomainError(f"views disagree on batch shape: {sorted(lead)}")
    return np.concatenate(parts, axis=-1)


@dataclass
class MultiViewBatch:
    latents: dict  # device_id -> LatentVector with a leading batch axis
    labels: np.ndarray

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        for k, z in self.latents.items():
            if z.values.shape[0] != self.labels.shape[0]:
                raise DomainError(f"device {k}: {z.values.shape[0]} latents for "
                                  f"{self.labels.shape[0]} labels")

    @property
    def widths(self):
        return [self.latents[k].dim for k in sorted(self.latents)]

    def inputs(self, device_ids=None):
        return concat_latents(self.latents, device_ids)


class ServerModel:
    """Joint decoder psi: (sum of d_k) -> 64 -> 6."""

    def __init__(self, input_width: int, seed: int = 0):
        self.input_width = input_width
        self.psi = nn.ParamStore(seed)
        self.head = build_head(self.psi, "server", input_width)

    def logits(self, Z):
        Z = np.asarray(Z, dtype=float)
        if Z.ndim != 2 or Z.shape[1] != self.input_width:
            raise DomainError(f"server expects width {self.input_width}, got {Z.shape}")
        return self.head.forward(Z)


def server_loss(model: ServerModel, Z, y):
    logits = model.logits(Z)
    loss, g = nn.softmax_cross_entropy(logits, y)
    model.head.backward(g)
    return loss, logits


def predict(model: ServerModel, Z) -> np.ndarray:
    Z = np.asarray(Z, dtype=float)
    single = Z.ndim == 1
    p = nn.softmax(model.logits(Z[None] if single else Z))
    return p[0] if single else p


@dataclass
class TrainResult:
    model: object
    curve: list = field(default_factory=list)


def _fit(model, stores, loss_fn, inputs, y, cfg: nn.TrainConfig, rng):
    n = y.shape[0]
    step = 0
    curve = []
    for epoch in range(1, cfg.epochs + 1):
        total, correct = 0.0, 0
        for idx in nn.minibatches(n, cfg.batch_size, rng):
            for s in stores:
                s.zero_grad()
            loss, logits = loss_fn(model, inputs(idx), y[idx])
            step += 1
            for s in stores:
                nn.optimizer_step(s, cfg, step)
            total += loss * idx.size
            correct += int(np.sum(logits.argmax(axis=1) == y[idx]))
        curve.append((epoch, total / n, correct / n))
    return curve


def train_server(Z, y, cfg: nn.TrainConfig) -> TrainResult:
    """Fit psi on uploaded (dequantized, concatenated) latents only."""
    Z = np.asarray(Z, dtype=float)
    y = np.asarray(y, dtype=np.int64)
    if Z.ndim != 2 or Z.shape[0] == 0 or Z.shape[0] != y.shape[0]:
        raise DomainError("need a non-empty (n, width) latent matrix with n labels")
    init_ss, train_ss = np.random.SeedSequence(cfg.seed).spawn(2)
    model = ServerModel(Z.shape[1], int(init_ss.generate_state(1)[0]))
    rng = np.random.default_rng(train_ss)
    curve = _fit(model, [model.psi], server_loss, lambda idx: Z[idx], y, cfg, rng)
    return TrainResult(model, curve)


class BaselineModel:
    """Raw-spectrogram classifier: one trunk per view, fused at 256 features."""

    def __init__(self, n_views: int, input_hw, seed: int = 0):
        self.n_views, self.input_hw = n_views, tuple(input_hw)
        self.store = nn.ParamStore(seed)
        self.trunks = [build_trunk(self.store, self.input_hw, prefix=f"view{v}") for v in range(n_views)]
        self.head = build_head(self.store, "fusion", FEATURES * n_views)

    def logits(self, X):
        """X: (V, B, H, W) max-normalized spectrograms."""
        X = np.asarray(X, dtype=float)
        if X.ndim != 4 or X.shape[0] != self.n_views or X.shape[2:] != self.input_hw:
            raise DomainError(f"baseline expects ({self.n_views}, B, *{self.input_hw}), got {X.shape}")
        feats = [t.forward(X[v][:, None]) for v, t in enumerate(self.trunks)]
        return self.head.forward(np.concatenate(feats, axis=1))

    def backward(self, g_logits):
        g = self.head.backward(g_logits)
        for v, t in enumerate(self.trunks):
            t.backward(g[:, v * FEATURES:(v + 1) * FEATURES])


def baseline_loss(model: BaselineModel, X, y):
    logits = model.logits(X)
    loss, g = nn.softmax_cross_entropy(logits, y)
    model.backward(g)
    return loss, logits


def _select_views(X, mode, view):
    X = np.asarray(X)
    if X.ndim == 3:
        X = X[None]
    if mode == "single_view":
        if view is None or not 0 <= view < X.shape[0]:
            raise DomainError(f"single_view needs a view index in 0..{X.shape[0] - 1}")
        return X[view:view + 1]
    if mode == "multi_view":
        return X
    raise DomainError(f"unknown baseline mode {mode!r}")


def train_baseline(X, y, mode: str, cfg: nn.TrainConfig, view: int | None = None) -> TrainResult:
    """X: (K, n, S_T, S_F) raw spectrogram power for all devices."""
    Xs = _select_views(X, mode, view)
    Xs = np.stack([max_normalize(x) for x in Xs])
    y = np.asarray(y, dtype=np.int64)
    if Xs.shape[1] == 0 or Xs.shape[1] != y.shape[0]:
        raise DomainError("need a non-empty training set with one label per sample")
    init_ss, train_ss = np.random.SeedSequence(cfg.seed).spawn(2)
    model = BaselineModel(Xs.shape[0], Xs.shape[2:], int(init_ss.generate_state(1)[0]))
    model.mode, model.view = mode, view
    rng = np.random.default_rng(train_ss)
    curve = _fit(model, [model.store], baseline_loss, lambda idx: Xs[:, idx], y, cfg, rng)
    return TrainResult(model, curve)


def predict_baseline(model: BaselineModel, X, batch_size: int = 256) -> np.ndarray:
    Xs = _select_views(X, model.mode, model.view)
    Xs = np.stack([max_normalize(x) for x in Xs])
    out = [nn.softmax(model.logits(Xs[:, s:s + batch_size]))
           for s in range(0, Xs.shape[1], batch_size)]
    return np.concatenate(out, axis=0)
