import numpy as np
import pytest
from hypothesis import given, strategies as st

from ademi import nn
from ademi.errors import DomainError, NumericalError


def input_grad_error(layer, x, rng, h=1e-5):
    """Relative error of backward() against central differences of <r, f(x)>."""
    r = rng.normal(size=layer.forward(x).shape)
    analytic = layer.backward(r)
    num = np.empty(x.size)
    flat = x.reshape(-1)
    for e in range(flat.size):
        old = flat[e]
        flat[e] = old + h
        up = np.sum(r * layer.forward(x))
        flat[e] = old - h
        down = np.sum(r * layer.forward(x))
        flat[e] = old
        num[e] = (up - down) / (2 * h)
    return nn.rel_error(analytic, num)


def param_grad_report(store, layer, x, rng):
    r = rng.normal(size=layer.forward(x).shape)

    def closure():
        store.zero_grad()
        out = layer.forward(x)
        layer.backward(r)
        return float(np.sum(r * out))

    return nn.grad_check(closure, store, max_entries=40)


def test_dense_identity():
    s = nn.ParamStore(0)
    d = nn.Dense(s, "d", 4, 4)
    s["d.w"][...] = np.eye(4)
    x = np.arange(8.0).reshape(2, 4)
    assert np.array_equal(d.forward(x), x)


def test_conv_unit_kernel():
    s = nn.ParamStore(0)
    c = nn.Conv2d(s, "c", 1, 1, 1)
    s["c.w"][...] = 1.0
    x = np.random.default_rng(0).normal(size=(2, 1, 5, 7))
    assert np.allclose(c.forward(x), x)


def test_conv_matches_direct_oracle(rng):
    s = nn.ParamStore(3)
    c = nn.Conv2d(s, "c", 2, 3, 3, stride=2)
    s["c.b"][...] = rng.normal(size=3)
    x = rng.normal(size=(2, 2, 9, 8))
    y = c.forward(x)
    w = s["c.w"]
    ref = np.zeros_like(y)
    for b in range(2):
        for o in range(3):
            for i in range(y.shape[2]):
                for j in range(y.shape[3]):
                    ref[b, o, i, j] = np.sum(w[o] * x[b, :, 2 * i:2 * i + 3, 2 * j:2 * j + 3]) + s["c.b"][o]
    assert np.allclose(y, ref, atol=1e-12)


def test_maxpool_values():
    x = np.arange(16.0).reshape(1, 1, 4, 4)
    assert nn.maxpool2d(x).tolist() == [[[[5.0, 7.0], [13.0, 15.0]]]]
    x5 = np.arange(25.0).reshape(1, 1, 5, 5)
    assert nn.maxpool2d(x5).shape == (1, 1, 2, 2)


def test_maxpool_tie_goes_to_first():
    p = nn.MaxPool2d(2)
    p.forward(np.ones((1, 1, 2, 2)))
    g = p.backward(np.ones((1, 1, 1, 1)))
    assert g.ravel().tolist() == [1.0, 0.0, 0.0, 0.0]


LAYER_CASES = range(10)


@pytest.mark.parametrize("case", LAYER_CASES)
def test_dense_gradients(case):
    rng = np.random.default_rng(case)
    n_in, n_out, B = rng.integers(1, 7, size=3)
    s = nn.ParamStore(case)
    d = nn.Dense(s, "d", n_in, n_out)
    s["d.b"][...] = rng.normal(size=n_out)
    x = rng.normal(size=(B, n_in))
    assert input_grad_error(d, x, rng) <= 1e-4
    assert param_grad_report(s, d, x, rng).max_rel_error <= 1e-4


@pytest.mark.parametrize("case", LAYER_CASES)
def test_conv_gradients(case):
    rng = np.random.default_rng(100 + case)
    c_in, c_out = rng.integers(1, 3, size=2)
    k = int(rng.integers(1, 4))
    stride = int(rng.integers(1, 3))
    H, W = rng.integers(k, k + 5, size=2)
    s = nn.ParamStore(case)
    conv = nn.Conv2d(s, "c", c_in, c_out, k, stride)
    s["c.b"][...] = rng.normal(size=c_out)
    x = rng.normal(size=(2, c_in, H, W))
    assert input_grad_error(conv, x, rng) <= 1e-4
    assert param_grad_report(s, conv, x, rng).max_rel_error <= 1e-4


@pytest.mark.parametrize("case", LAYER_CASES)
def test_pool_relu_softplus_flatten_gradients(case):
    rng = np.random.default_rng(200 + case)
    x = rng.normal(size=(2, 2, int(rng.integers(2, 7)), int(rng.integers(2, 7))))
    # keep inputs away from kinks so central differences are well defined
    x = np.where(np.abs(x) < 1e-3, 0.5, x)
    for layer in (nn.MaxPool2d(2), nn.ReLU(), nn.Softplus(), nn.Flatten()):
        assert input_grad_error(layer, x.copy(), rng) <= 1e-4, type(layer).__name__


def test_shape_errors():
    s = nn.ParamStore(0)
    with pytest.raises(DomainError):
        nn.Dense(s, "d", 3, 2).forward(np.ones((2, 4)))
    with pytest.raises(DomainError):
        nn.Conv2d(s, "c", 1, 1, 3).forward(np.ones((1, 2, 5, 5)))
    with pytest.raises(DomainError):
        nn.Conv2d(s, "c2", 1, 1, 3).forward(np.ones((1, 1, 2, 5)))
    with pytest.raises(DomainError):
        nn.MaxPool2d(2).forward(np.ones((1, 1, 1, 5)))
    with pytest.raises(DomainError):
        s.add("d.w", (1,), 1, 1)


def test_non_finite_forward():
    s = nn.ParamStore(0)
    d = nn.Dense(s, "d", 2, 2)
    with pytest.raises(NumericalError):
        d.forward(np.array([[np.inf, 0.0]]))


def test_forward_has_no_hidden_state(rng):
    s = nn.ParamStore(1)
    net = nn.Sequential(nn.Dense(s, "a", 5, 4), nn.ReLU(), nn.Dense(s, "b", 4, 3))
    x = rng.normal(size=(3, 5))
    assert np.array_equal(net.forward(x), net.forward(x))


def test_glorot_init_bounds_and_determinism():
    a, b = nn.ParamStore(5), nn.ParamStore(5)
    a.add("w", (30, 20), 30, 20)
    b.add("w", (30, 20), 30, 20)
    assert np.array_equal(a["w"], b["w"])
    assert np.max(np.abs(a["w"])) <= np.sqrt(6 / 50)


# ---- cross-entropy

def test_ce_uniform():
    loss, g = nn.softmax_cross_entropy(np.zeros(6), 2)
    assert loss == pytest.approx(np.log(6))
    assert g.shape == (6,)


def test_ce_saturated():
    logits = np.zeros(6)
    logits[4] = 50.0
    loss, _ = nn.softmax_cross_entropy(logits, 4)
    assert loss <= 1e-20


def test_ce_gradient_fd(rng):
    for _ in range(10):
        z = rng.normal(size=(4, 6)) * 3
        y = rng.integers(0, 6, size=4)
        _, g = nn.softmax_cross_entropy(z, y)
        num = np.zeros_like(z)
        h = 1e-6
        for idx in np.ndindex(z.shape):
            zp, zm = z.copy(), z.copy()
            zp[idx] += h
            zm[idx] -= h
            num[idx] = (nn.softmax_cross_entropy(zp, y)[0] - nn.softmax_cross_entropy(zm, y)[0]) / (2 * h)
        assert np.max(np.abs(num - g)) <= 1e-6


def test_ce_label_errors():
    with pytest.raises(DomainError):
        nn.softmax_cross_entropy(np.zeros(6), 6)
    with pytest.raises(DomainError):
        nn.softmax_cross_entropy(np.zeros(5), 0)


@given(st.lists(st.floats(-30, 30), min_size=6, max_size=6), st.floats(-100, 100))
def test_softmax_simplex_and_shift(logits, shift):
    z = np.array(logits)
    p = nn.softmax(z)
    assert abs(p.sum() - 1) <= 1e-12 and np.all(p >= 0)
    assert np.argmax(nn.softmax(z + shift)) == np.argmax(p)


# ---- optimizer

def _store(value, grad):
    s = nn.ParamStore(0)
    s.add("p", (1,), init="zeros")
    s["p"][...] = value
    s.grads["p"][...] = grad
    return s


def test_sgd_step():
    s = _store(1.0, 2.0)
    nn.optimizer_step(s, nn.TrainConfig(learning_rate=0.1, optimizer="sgd"), 1)
    assert s["p"][0] == pytest.approx(0.8)
    assert s.grads["p"][0] == 0.0


def test_adam_first_step_closed_form():
    for g in (3.0, -0.02, 1e3):
        s = _store(0.5, g)
        nn.optimizer_step(s, nn.TrainConfig(learning_rate=1e-3), 1)
        # m_hat = g, v_hat = g^2 -> step = lr * g / (|g| + eps)
        assert s["p"][0] == pytest.approx(0.5 - 1e-3 * g / (abs(g) + 1e-8), rel=1e-12)


def test_adam_matches_reference_trajectory(rng):
    cfg = nn.TrainConfig(learning_rate=1e-2)
    s = _store(0.0, 0.0)
    p, m, v = 0.0, 0.0, 0.0
    for t in range(1, 20):
        g = float(rng.normal())
        s.grads["p"][...] = g
        nn.optimizer_step(s, cfg, t)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        p -= cfg.learning_rate * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
        assert s["p"][0] == pytest.approx(p, rel=1e-12, abs=1e-15)


@pytest.mark.parametrize("opt", ["sgd", "adam"])
def test_zero_gradient_no_change(opt):
    s = _store(0.7, 0.0)
    nn.optimizer_step(s, nn.TrainConfig(optimizer=opt), 1)
    assert s["p"][0] == 0.7


@pytest.mark.parametrize("opt", ["sgd", "adam"])
def test_non_finite_update(opt):
    s = _store(0.7, np.nan)
    with pytest.raises(NumericalError):
        nn.optimizer_step(s, nn.TrainConfig(optimizer=opt), 1)


@pytest.mark.parametrize("kw", [dict(learning_rate=0), dict(epochs=0), dict(batch_size=0), dict(optimizer="rmsprop")])
def test_train_config_invalid(kw):
    with pytest.raises(DomainError):
        nn.TrainConfig(**kw)


def test_minibatches_cover_once(rng):
    batches = list(nn.minibatches(130, 64, rng))
    assert [b.size for b in batches] == [64, 64, 2]
    assert sorted(np.concatenate(batches)) == list(range(130))


# ---- grad_check itself

def test_grad_check_linear_model(rng):
    s = nn.ParamStore(0)
    d = nn.Dense(s, "d", 3, 1)
    x, t = rng.normal(size=(5, 3)), rng.normal(size=(5, 1))

    def closure():
        s.zero_grad()
        out = d.forward(x)
        d.backward(t)
        return float(np.sum(out * t))

    assert nn.grad_check(closure, s).max_rel_error <= 1e-10


def test_grad_check_flags_corrupted_backward(rng):
    s = nn.ParamStore(0)
    d = nn.Dense(s, "d", 3, 2)
    x, r = rng.normal(size=(4, 3)), rng.normal(size=(4, 2))

    def closure():
        s.zero_grad()
        out = d.forward(x)
        d.backward(r)
        s.grads["d.w"] *= 1.5  # wrong on purpose
        return float(np.sum(out * r))

    rep = nn.grad_check(closure, s)
    assert rep.max_rel_error >= 1e-2 and not rep.ok
