"""Device side: Gaussian variational encoder, uniform quantizer, local decoder.

Training follows the on-device procedure: each minibatch draws one fresh
noise vector per sample, reparameterizes, quantizes, and minimizes the
local decoder's cross-entropy w.r.t. encoder and decoder parameters.
Gradients cross the quantizer straight through (identity inside the clip
range, zero outside).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from . import nn
from .dfs import max_normalize
from .errors import DomainError

NUM_CLASSES = 6
FEATURES = 256
SIGMA_FLOOR = 1e-6
PASS_THROUGH_BITS = 32


@dataclass(frozen=True)
class QuantizerSpec:
    bits: int = 64
    clip: float = 3.0

    def __post_init__(self):
        if self.bits < 1:
            raise DomainError("quantizer needs at least one bit")
        if self.clip <= 0:
            raise DomainError("clip must be positive")

    @property
    def pass_through(self) -> bool:
        return self.bits >= PASS_THROUGH_BITS

    @property
    def levels(self) -> int:
        return 2 ** self.bits

    @property
    def step(self) -> float:
        return 2 * self.clip / self.levels


@dataclass(frozen=True)
class LatentVector:
    """Quantized latent(s); a leading batch axis is allowed.

    ``indices`` is None in pass-through mode. Bit cost is d * bits per sample.
    """
    values: np.ndarray
    indices: np.ndarray | None
    spec: QuantizerSpec

    @property
    def dim(self) -> int:
        return self.values.shape[-1]

    @property
    def bits(self) -> int:
        return self.dim * self.spec.bits


def quantize(x, spec: QuantizerSpec) -> LatentVector:
    x = np.asarray(x, dtype=float)
    if spec.pass_through:
        return LatentVector(x, None, spec)
    c, step = spec.clip, spec.step
    idx = np.floor((np.clip(x, -c, c - 1e-12) + c) / step).astype(np.int64)
    idx = np.minimum(idx, spec.levels - 1)
    return LatentVector(-c + (idx + 0.5) * step, idx, spec)


def dequantize(z: LatentVector) -> np.ndarray:
    if z.indices is None:
        return z.values
    return -z.spec.clip + (z.indices + 0.5) * z.spec.step


def from_indices(indices, spec: QuantizerSpec) -> LatentVector:
    indices = np.asarray(indices, dtype=np.int64)
    if np.any(indices < 0) or np.any(indices >= spec.levels):
        raise DomainError("quantizer index out of range")
    return LatentVector(-spec.clip + (indices + 0.5) * spec.step, indices, spec)


def ste_mask(x, spec: QuantizerSpec):
    """Straight-through gradient factor, or None when it is identically one."""
    if spec.pass_through:
        return None
    return (np.abs(x) <= spec.clip).astype(float)


def reparameterize(mu, sigma, noise):
    mu, sigma, noise = np.asarray(mu), np.asarray(sigma), np.asarray(noise)
    if mu.shape != sigma.shape or mu.shape != noise.shape:
        raise DomainError("mu, sigma and noise must share a shape")
    return mu + sigma * noise


def build_trunk(store: nn.ParamStore, input_hw, prefix="trunk", filters=8, kernel=5, stride=2):
    """conv(8@5x5, stride 2) -> ReLU -> maxpool 2 -> flatten -> dense 256 -> ReLU."""
    conv = nn.Conv2d(store, f"{prefix}.conv", 1, filters, kernel, stride, input_grad=False)
    ho, wo = conv.output_shape(*input_hw)
    if ho < 2 or wo < 2:
        raise DomainError(f"spectrogram {input_hw} too small for the trunk")
    flat = filters * (ho // 2) * (wo // 2)
    return nn.Sequential(conv, nn.ReLU(), nn.MaxPool2d(2), nn.Flatten(),
                         nn.Dense(store, f"{prefix}.fc", flat, FEATURES), nn.ReLU())


def build_head(store: nn.ParamStore, prefix, n_in, hidden=64, n_out=NUM_CLASSES):
    """n_in -> 64 -> 6 with a ReLU hidden layer."""
    return nn.Sequential(nn.Dense(store, f"{prefix}.fc1", n_in, hidden), nn.ReLU(),
                         nn.Dense(store, f"{prefix}.fc2", hidden, n_out))


class DeviceModel:
    """Encoder (theta: trunk + mean/spread heads) and local decoder (phi)."""

    def __init__(self, input_hw, dim: int, seed: int = 0, zero_heads: bool = False):
        if dim < 1:
            raise DomainError("latent dimension must be >= 1")
        self.input_hw, self.dim = tuple(input_hw), dim
        ss = np.random.SeedSequence(seed).spawn(2)
        self.theta = nn.ParamStore(int(ss[0].generate_state(1)[0]))
        self.phi = nn.ParamStore(int(ss[1].generate_state(1)[0]))
        self.trunk = build_trunk(self.theta, self.input_hw)
        init = "zeros" if zero_heads else "glorot"
        self.mu_head = nn.Dense(self.theta, "enc.mu", FEATURES, dim, init)
        self.spread_head = nn.Dense(self.theta, "enc.spread", FEATURES, dim, init)
        self.decoder = build_head(self.phi, "local", dim)

    @property
    def stores(self):
        return [self.theta, self.phi]

    def _input(self, X):
        X = np.asarray(X, dtype=float)
        if X.ndim == 2:
            X = X[None]
        if X.shape[1:] != self.input_hw:
            raise DomainError(f"expected spectrograms of shape {self.input_hw}, got {X.shape[1:]}")
        return X[:, None]

    def encode_mean_spread(self, X):
        f = self.trunk.forward(self._input(X))
        mu = self.mu_head.forward(f)
        self._spread_raw = self.spread_head.forward(f)
        sigma = nn.softplus(self._spread_raw) + SIGMA_FLOOR
        return mu, sigma

    def backward_mean_spread(self, g_mu, g_sigma):
        g_raw = g_sigma * expit(self._spread_raw)
        g_f = self.mu_head.backward(g_mu) + self.spread_head.backward(g_raw)
        self.trunk.backward(g_f)

    def zero_grad(self):
        self.theta.zero_grad()
        self.phi.zero_grad()


def device_loss(model: DeviceModel, X, y, noise, qspec: QuantizerSpec | None):
    """Mean local cross-entropy on quantized latents; fills theta/phi grads.

    ``qspec=None`` skips quantization entirely. Returns (loss, logits).
    """
    mu, sigma = model.encode_mean_spread(X)
    if noise.shape != mu.shape:
        raise DomainError(f"noise shape {noise.shape} != latent shape {mu.shape}")
    z_tilde = reparameterize(mu, sigma, noise)
    z = z_tilde if qspec is None else quantize(z_tilde, qspec).values
    logits = model.decoder.forward(z)
    loss, g_logits = nn.softmax_cross_entropy(logits, y)
    g_z = model.decoder.backward(g_logits)
    mask = None if qspec is None else ste_mask(z_tilde, qspec)
    g_zt = g_z if mask is None else g_z * mask
    model.backward_mean_spread(g_zt, g_zt * noise)
    return loss, logits


def encode(model: DeviceModel, X, qspec: QuantizerSpec, rng: np.random.Generator | None = None,
           batch_size: int = 256) -> LatentVector:
    """Latents for a set of spectrograms; ``rng=None`` uses zero noise (z~ = mu)."""
    X = max_normalize(X)
    out = []
    for start in range(0, X.shape[0], batch_size):
        mu, sigma = model.encode_mean_spread(X[start:start + batch_size])
        noise = np.zeros_like(mu) if rng is None else rng.standard_normal(mu.shape)
        out.append(reparameterize(mu, sigma, noise))
    return quantize(np.concatenate(out, axis=0), qspec)


def predict_local(model: DeviceModel, X, qspec: QuantizerSpec) -> np.ndarray:
    z = encode(model, X, qspec)
    return nn.softmax(model.decoder.forward(z.values))


@dataclass
class DeviceResult:
    model: DeviceModel
    latents: LatentVector
    curve: list = field(default_factory=list)
    device_id: int = 0


def train_device(X, y, dim: int, cfg: nn.TrainConfig, qspec: QuantizerSpec,
                 device_id: int = 0) -> DeviceResult:
    """Local training with a capacity-derived latent width ``dim``.

    After the final epoch, every training sample is encoded once more with
    fresh noise; those quantized latents are the one-shot upload.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=np.int64)
    if X.shape[0] == 0 or X.shape[0] != y.shape[0]:
        raise DomainError("need a non-empty training set with one label per sample")
    X = max_normalize(X)
    init_ss, train_ss = np.random.SeedSequence(cfg.seed).spawn(2)
    model = DeviceModel(X.shape[1:], dim, int(init_ss.generate_state(1)[0]))
    rng = np.random.default_rng(train_ss)
    step = 0
    curve = []
    for epoch in range(1, cfg.epochs + 1):
        total, correct = 0.0, 0
        for idx in nn.minibatches(X.shape[0], cfg.batch_size, rng):
            noise = rng.standard_normal((idx.size, dim))
            model.zero_grad()
            loss, logits = device_loss(model, X[idx], y[idx], noise, qspec)
            step += 1
            for store in model.stores:
                nn.optimizer_step(store, cfg, step)
            total += loss * idx.size
            correct += int(np.sum(logits.argmax(axis=1) == y[idx]))
        curve.append((epoch, total / X.shape[0], correct / X.shape[0]))
    latents = encode(model, X, qspec, rng)
    return DeviceResult(model, latents, curve, device_id)

