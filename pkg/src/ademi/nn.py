"""Small NumPy neural-network core with hand-written backward passes.

Layers cache what their backward pass needs on ``forward`` and accumulate
parameter gradients into a shared :class:`ParamStore`. Everything runs in
float64. A ParamStore belongs to one training task at a time.
"""
from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field

import numba
import numpy as np
from scipy.special import expit

from .errors import DomainError, NumericalError


def _finite(x, what):
    if not np.all(np.isfinite(x)):
        raise NumericalError(f"non-finite values in {what}")
    return x


class ParamStore:
    """Named parameters plus matching gradient buffers."""

    def __init__(self, seed: int = 0):
        self.init_seed = seed
        self.rng = np.random.default_rng(seed)
        self.params: OrderedDict[str, np.ndarray] = OrderedDict()
        self.grads: OrderedDict[str, np.ndarray] = OrderedDict()
        self.opt_state: dict = {}

    def add(self, name, shape, fan_in=None, fan_out=None, init="glorot"):
        if name in self.params:
            raise DomainError(f"duplicate parameter {name!r}")
        if init == "glorot":
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            value = self.rng.uniform(-limit, limit, size=shape)
        elif init == "zeros":
            value = np.zeros(shape)
        else:
            raise DomainError(f"unknown init {init!r}")
        self.params[name] = value
        self.grads[name] = np.zeros(shape)
        return value

    def __getitem__(self, name):
        return self.params[name]

    def __iter__(self):
        return iter(self.params)

    def zero_grad(self):
        for g in self.grads.values():
            g.fill(0.0)

    def state_dict(self):
        return OrderedDict((k, v.copy()) for k, v in self.params.items())

    def load_state_dict(self, state):
        for k, v in state.items():
            if self.params[k].shape != v.shape:
                raise DomainError(f"shape mismatch for {k}: {v.shape} vs {self.params[k].shape}")
            self.params[k][...] = v

    def num_params(self):
        return sum(v.size for v in self.params.values())


class Layer:
    def forward(self, x):
        raise NotImplementedError

    def backward(self, grad):
        raise NotImplementedError

    def __call__(self, x):
        return self.forward(x)


class Dense(Layer):
    def __init__(self, store: ParamStore, name: str, n_in: int, n_out: int, init="glorot"):
        self.store, self.n_in, self.n_out = store, n_in, n_out
        self.w, self.b = f"{name}.w", f"{name}.b"
        store.add(self.w, (n_in, n_out), n_in, n_out, init)
        store.add(self.b, (n_out,), init="zeros")

    def forward(self, x):
        if x.ndim != 2 or x.shape[1] != self.n_in:
            raise DomainError(f"dense expects (B, {self.n_in}), got {x.shape}")
        self.x = x
        return _finite(x @ self.store[self.w] + self.store[self.b], self.w)

    def backward(self, grad):
        self.store.grads[self.w] += self.x.T @ grad
        self.store.grads[self.b] += grad.sum(axis=0)
        return grad @ self.store[self.w].T


class Conv2d(Layer):
    """Valid (unpadded) 2-D convolution on (B, C, H, W) inputs.

    ``input_grad=False`` skips the input gradient (first layer of a network).
    """

    def __init__(self, store, name, c_in, c_out, kernel, stride=1, input_grad=True):
        self.store, self.c_in, self.c_out, self.k, self.s = store, c_in, c_out, kernel, stride
        self.input_grad = input_grad
        self.w, self.b = f"{name}.w", f"{name}.b"
        store.add(self.w, (c_out, c_in, kernel, kernel), c_in * kernel ** 2, c_out * kernel ** 2)
        store.add(self.b, (c_out,), init="zeros")

    def output_shape(self, h, w):
        return (h - self.k) // self.s + 1, (w - self.k) // self.s + 1

    def _taps(self, ho, wo):
        k, s = self.k, self.s
        for i in range(k):
            for j in range(k):
                yield i, j, (slice(i, i + s * (ho - 1) + 1, s), slice(j, j + s * (wo - 1) + 1, s))

    def forward(self, x):
        if x.ndim != 4 or x.shape[1] != self.c_in:
            raise DomainError(f"conv2d expects (B, {self.c_in}, H, W), got {x.shape}")
        B, C, H, W = x.shape
        if H < self.k or W < self.k:
            raise DomainError(f"input {H}x{W} smaller than kernel {self.k}")
        ho, wo = self.output_shape(H, W)
        # im2col laid out (C, k, k, B, ho, wo) so both products are plain GEMMs
        shape = (C, self.k, self.k, B, ho, wo)
        cols = self._buf if getattr(self, "_buf", None) is not None and self._buf.shape == shape else np.empty(shape)
        self._buf = cols
        xt = x.transpose(1, 0, 2, 3)
        for i, j, (si, sj) in self._taps(ho, wo):
            cols[:, i, j] = xt[:, :, si, sj]
        self.cols = cols.reshape(C * self.k * self.k, B * ho * wo)
        self.in_shape, self.out_hw = x.shape, (ho, wo)
        wmat = self.store[self.w].reshape(self.c_out, -1)
        y = wmat @ self.cols + self.store[self.b][:, None]
        y = np.ascontiguousarray(y.reshape(self.c_out, B, ho, wo).transpose(1, 0, 2, 3))
        return _finite(y, self.w)

    def backward(self, grad):
        B, C, H, W = self.in_shape
        ho, wo = self.out_hw
        g2 = grad.transpose(1, 0, 2, 3).reshape(self.c_out, -1)
        wmat = self.store[self.w].reshape(self.c_out, -1)
        self.store.grads[self.w] += (g2 @ self.cols.T).reshape(self.store[self.w].shape)
        self.store.grads[self.b] += g2.sum(axis=1)
        if not self.input_grad:
            return None
        dcols = (wmat.T @ g2).reshape(C, self.k, self.k, B, ho, wo)
        gx = np.zeros((C, B, H, W))
        for i, j, (si, sj) in self._taps(ho, wo):
            gx[:, :, si, sj] += dcols[:, i, j]
        return gx.transpose(1, 0, 2, 3)


class MaxPool2d(Layer):
    """Non-overlapping max pooling; trailing rows/cols that do not fill a window are dropped.

    Ties route the gradient to the first maximal entry in row-major order.
    """

    def __init__(self, window=2):
        self.p = window

    def _views(self, x, ho, wo):
        p = self.p
        return [x[:, :, di:di + p * (ho - 1) + 1:p, dj:dj + p * (wo - 1) + 1:p]
                for di in range(p) for dj in range(p)]

    def forward(self, x):
        if x.ndim != 4:
            raise DomainError(f"maxpool expects (B, C, H, W), got {x.shape}")
        ho, wo = x.shape[2] // self.p, x.shape[3] // self.p
        if ho == 0 or wo == 0:
            raise DomainError(f"input {x.shape[2]}x{x.shape[3]} smaller than pool window {self.p}")
        views = self._views(x, ho, wo)
        out = views[0].copy()
        for v in views[1:]:
            np.maximum(out, v, out=out)
        self.x, self.out = x, out
        return out

    def backward(self, grad):
        ho, wo = grad.shape[2:]
        gx = np.zeros(self.x.shape)
        taken = np.zeros(grad.shape, dtype=bool)
        for v, g in zip(self._views(self.x, ho, wo), self._views(gx, ho, wo)):
            hit = v == self.out
            hit &= ~taken
            taken |= hit
            np.multiply(grad, hit, out=g)
        return gx


class ReLU(Layer):
    def forward(self, x):
        self.mask = x > 0
        return np.where(self.mask, x, 0.0)

    def backward(self, grad):
        return grad * self.mask


class Softplus(Layer):
    def forward(self, x):
        self.x = x
        return np.logaddexp(0.0, x)

    def backward(self, grad):
        return grad * expit(self.x)


class Flatten(Layer):
    def forward(self, x):
        self.in_shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad):
        return grad.reshape(self.in_shape)


class Sequential(Layer):
    def __init__(self, *layers):
        self.layers = list(layers)

    def forward(self, x):
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, grad):
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad


def relu(x):
    return np.maximum(x, 0.0)


def softplus(x):
    return np.logaddexp(0.0, x)


def flatten(x):
    return x.reshape(x.shape[0], -1)


def maxpool2d(x, window=2):
    return MaxPool2d(window).forward(x)


def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits, labels, num_classes: int = 6):
    """Mean of -log softmax(logits)[label] and its gradient w.r.t. the logits.

    Accepts a single logit vector with an int label, or a (B, C) batch.
    """
    logits = np.asarray(logits, dtype=float)
    single = logits.ndim == 1
    lg = logits[None] if single else logits
    lab = np.atleast_1d(np.asarray(labels))
    if lg.shape[1] != num_classes:
        raise DomainError(f"expected {num_classes} logits, got {lg.shape[1]}")
    if lab.shape[0] != lg.shape[0]:
        raise DomainError("labels and logits disagree on batch size")
    if np.any(lab < 0) or np.any(lab >= num_classes):
        raise DomainError(f"label out of range 0..{num_classes - 1}")
    m = lg.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(lg - m).sum(axis=1))
    rows = np.arange(lg.shape[0])
    loss = float(np.mean(lse - lg[rows, lab]))
    _finite(loss, "cross-entropy loss")
    grad = softmax(lg)
    grad[rows, lab] -= 1.0
    grad /= lg.shape[0]
    return loss, (grad[0] if single else grad)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    epochs: int = 50
    batch_size: int = 64
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0 or self.epochs < 1 or self.batch_size < 1:
            raise DomainError("need learning_rate > 0, epochs >= 1, batch_size >= 1")
        if self.optimizer not in ("adam", "sgd"):
            raise DomainError(f"unknown optimizer {self.optimizer!r}")


def optimizer_step(store: ParamStore, cfg: TrainConfig, step_index: int):
    """Apply one update (``step_index`` counts from 1), then zero the gradients."""
    for name, p in store.params.items():
        g = store.grads[name]
        if cfg.optimizer == "sgd":
            upd = cfg.learning_rate * g
            _finite(upd, f"update of {name}")
            p -= upd
            continue
        if name not in store.opt_state:
            store.opt_state[name] = (np.zeros_like(p), np.zeros_like(p))
        m, v = store.opt_state[name]
        ok = _adam_update(p.reshape(-1), g.reshape(-1), m.reshape(-1), v.reshape(-1),
                          cfg.beta1, cfg.beta2, cfg.learning_rate / (1 - cfg.beta1 ** step_index),
                          1.0 / (1 - cfg.beta2 ** step_index), cfg.eps)
        if not ok:
            raise NumericalError(f"non-finite update of {name}")
    store.zero_grad()
    return store


@numba.njit(cache=True)
def _adam_update(p, g, m, v, beta1, beta2, lr_corr, v_corr, eps):
    # fused single pass; returns False (leaving p untouched) on a non-finite step
    n = p.size
    step = np.empty(n)
    for i in range(n):
        gi = g[i]
        mi = beta1 * m[i] + (1.0 - beta1) * gi
        vi = beta2 * v[i] + (1.0 - beta2) * gi * gi
        m[i] = mi
        v[i] = vi
        step[i] = lr_corr * mi / (np.sqrt(vi * v_corr) + eps)
        if not np.isfinite(step[i]):
            return False
    for i in range(n):
        p[i] -= step[i]
    return True


def minibatches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


@dataclass
class GradCheckReport:
    max_rel_error: float
    per_param: dict = field(default_factory=dict)
    tol: float = 1e-4

    @property
    def ok(self) -> bool:
        return self.max_rel_error <= self.tol


def rel_error(a, b) -> float:
    a, b = np.ravel(a), np.ravel(b)
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-300)
    return float(np.linalg.norm(a - b) / denom)


def grad_check(loss_and_grad, stores, tol=1e-4, h=1e-5, max_entries=None, seed=0):
    """Compare analytic gradients with central differences.

    ``loss_and_grad()`` must zero the gradient buffers, run forward and
    backward, and return the scalar loss. ``max_entries`` caps how many
    coordinates per tensor are probed (chosen at random).
    """
    if isinstance(stores, ParamStore):
        stores = [stores]
    rng = np.random.default_rng(seed)
    loss_and_grad()
    analytic = {(i, n): s.grads[n].copy() for i, s in enumerate(stores) for n in s.params}
    report = {}
    for i, s in enumerate(stores):
        for name, p in s.params.items():
            flat = p.reshape(-1)
            idx = np.arange(flat.size)
            if max_entries is not None and flat.size > max_entries:
                idx = rng.choice(flat.size, max_entries, replace=False)
            numeric = np.empty(idx.size)
            for j, e in enumerate(idx):
                old = flat[e]
                flat[e] = old + h
                up = loss_and_grad()
                flat[e] = old - h
                down = loss_and_grad()
                flat[e] = old
                numeric[j] = (up - down) / (2 * h)
            report[name] = rel_error(analytic[(i, name)].reshape(-1)[idx], numeric)
    loss_and_grad()
    return GradCheckReport(max(report.values()) if report else 0.0, report, tol)
