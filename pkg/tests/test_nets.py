"""MLP forward/jacobian and spectral normalization against independent
re-evaluations and a brute-force singular-value oracle."""

import numpy as np
import pytest

from kernelnet.diffengine import Tape, backward, jacobian
from kernelnet.nets import Mlp, Param, power_iteration_step, spectral_normalize


def brute_force_sigma_max(w, iters=5000):
    """Independent oracle: power iteration on W^T W run to convergence."""
    w = np.asarray(w)
    x = np.ones(w.shape[1]) / np.sqrt(w.shape[1])
    for _ in range(iters):
        y = w.T @ (w @ x)
        n = np.linalg.norm(y)
        if n == 0:
            return 0.0
        x = y / n
    return float(np.sqrt(x @ (w.T @ (w @ x))))


def test_zero_net_maps_everything_to_zero():
    net = Mlp([3, 4, 2], rng=np.random.default_rng(0))
    for w in net.weights:
        w.value = np.zeros_like(w.value)
    out = net.forward_np(np.random.default_rng(1).standard_normal((5, 3)))
    assert np.array_equal(out, np.zeros((5, 2)))


def test_single_linear_layer():
    net = Mlp([1, 1], rng=np.random.default_rng(0))
    net.weights[0].value = np.array([[2.0]])
    net.biases[0].value = np.array([1.0])
    assert net.forward_np(np.array([3.0]))[0] == 7.0


def test_forward_matches_straight_line_reevaluation():
    rng = np.random.default_rng(2)
    net = Mlp([3, 8, 8, 2], activation="relu", rng=rng)
    x = rng.standard_normal((6, 3))
    # independent straight-line re-evaluation of the same parameters
    h = x
    for i in range(3):
        h = h @ net.weights[i].value.T + net.biases[i].value
        if i < 2:
            h = np.maximum(h, 0.0)
    tape = Tape()
    out = net.forward(tape, x)
    assert np.allclose(out.value, h, rtol=0, atol=1e-14)
    assert np.allclose(net.forward_np(x), h, rtol=0, atol=1e-14)


def test_forward_is_deterministic():
    rng = np.random.default_rng(3)
    net = Mlp([2, 5, 1], activation="tanh", rng=rng)
    x = rng.standard_normal((4, 2))
    a = net.forward_np(x)
    b = net.forward_np(x)
    assert np.array_equal(a, b)


def test_width_mismatch_raises():
    net = Mlp([3, 2], rng=np.random.default_rng(0))
    with pytest.raises(ValueError):
        net.forward(Tape(), np.zeros((2, 4)))


# ---------------------------------------------------------------- spectral sn

def test_identity_matrix_unchanged():
    u = np.array([1.0, 0.0])
    w, u2 = spectral_normalize(np.eye(2), u, sn_scale=1.0)
    assert np.allclose(w, np.eye(2), atol=1e-12)


def test_diagonal_convergence():
    w = np.diag([3.0, 1.0])
    u = np.array([0.6, 0.8])
    for _ in range(10):
        wn, u = spectral_normalize(w, u, sn_scale=1.0)
    assert np.allclose(wn, np.diag([1.0, 1.0 / 3.0]), atol=1e-6)


def test_sn_scale_constant():
    w = np.diag([3.0, 1.0])
    u = np.array([0.6, 0.8])
    for _ in range(30):
        wn, u = spectral_normalize(w, u, sn_scale=0.5)
    assert np.allclose(wn, np.diag([0.5, 1.0 / 6.0]), atol=1e-6)


def test_zero_matrix_passes_through():
    u = np.array([1.0, 0.0])
    w, u2 = spectral_normalize(np.zeros((2, 3)), u)
    assert np.array_equal(w, np.zeros((2, 3)))
    assert np.array_equal(u2, u)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_sigma_estimate_against_brute_force(seed):
    rng = np.random.default_rng(seed)
    w = rng.standard_normal((6, 4))
    sigma_true = brute_force_sigma_max(w)
    u = rng.standard_normal(6)
    u /= np.linalg.norm(u)
    for _ in range(20):
        u, v, sigma = power_iteration_step(w, u)
    assert abs(sigma - sigma_true) / sigma_true <= 1e-4


def test_lipschitz_bound_after_warmup():
    rng = np.random.default_rng(7)
    net = Mlp([3, 16, 16, 1], activation="relu", sn_enabled=True, sn_scale=1.0,
              rng=rng)
    for w in net.weights:  # make raw norms well above 1 so SN has work to do
        w.value = w.value * 5.0
    x = rng.standard_normal((4, 3))
    for _ in range(15):  # warm-up power iterations
        net.forward(Tape(), x)
    # probe每 layer's effective map with random pairs
    for i, w in enumerate(net.weights):
        _, _, sigma = power_iteration_step(w.value, net.sn_u[i])
        w_eff = w.value / sigma
        for _ in range(1000):
            a = rng.standard_normal(w.value.shape[1])
            b = rng.standard_normal(w.value.shape[1])
            num = np.linalg.norm(w_eff @ (a - b))
            den = np.linalg.norm(a - b)
            assert num <= 1.05 * den


def test_sn_forward_gradients_match_fd():
    """Gradient through the normalized weight matches finite differences once
    the power-iteration vectors have converged (they enter as constants, so
    their own W-dependence is second order at stationarity)."""
    rng = np.random.default_rng(4)
    net = Mlp([2, 3, 1], activation="tanh", sn_enabled=True, sn_scale=1.0, rng=rng)
    x = rng.standard_normal((5, 2))
    for _ in range(500):  # converge u for every layer
        net.forward(Tape(), x, update_sn=True)
    u_frozen = [u.copy() for u in net.sn_u]
    w0 = net.weights[0].value

    tape = Tape()
    root = tape.sumsq(net.forward(tape, x, update_sn=True))
    grads = backward(root)
    g = grads[tape.bound(w0).id]

    def value(wflat):
        net.weights[0].value = wflat.reshape(3, 2)
        net.sn_u = [u.copy() for u in u_frozen]
        t = Tape()
        return float(t.sumsq(net.forward(t, x, update_sn=True)).value)

    h = 1e-6
    num = np.zeros(w0.size)
    for i in range(w0.size):
        wp = w0.reshape(-1).copy()
        wp[i] += h
        fp = value(wp)
        wm = w0.reshape(-1).copy()
        wm[i] -= h
        fm = value(wm)
        num[i] = (fp - fm) / (2 * h)
    net.weights[0].value = w0
    net.sn_u = [u.copy() for u in u_frozen]
    assert np.max(np.abs(g.reshape(-1) - num)) / max(np.max(np.abs(num)), 1e-8) < 1e-4


# ------------------------------------------------------------------- jacobian

@pytest.mark.parametrize("activation", ["tanh", "relu"])
def test_mlp_jacobian_node_matches_reverse_sweeps(activation):
    rng = np.random.default_rng(9)
    net = Mlp([3, 6, 6, 2], activation=activation, rng=rng)
    x = rng.standard_normal(3)
    tape = Tape()
    xn = tape.leaf(x)
    out = net.forward(tape, xn)
    jac_sweep = jacobian(out, xn)
    tape2 = Tape()
    jn = net.jacobian_node(tape2, x)
    assert np.allclose(jn.value, jac_sweep, rtol=1e-12, atol=1e-12)


def test_jacobian_node_parameter_gradients_match_fd():
    """d/dparams of sumsq(Jacobian) against finite differences (tanh)."""
    rng = np.random.default_rng(10)
    net = Mlp([2, 5, 2], activation="tanh", rng=rng)
    x = rng.standard_normal(2)

    tape = Tape()
    root = tape.sumsq(net.jacobian_node(tape, x))
    grads = backward(root)
    bound_nodes = {p.name: tape.bound(p.value) for p in net.params()}

    for p in net.params():
        orig = p.value

        def f(flat):
            p.value = flat.reshape(orig.shape)
            t = Tape()
            val = float(t.sumsq(net.jacobian_node(t, x)).value)
            return val

        h = 1e-6
        num = np.zeros(orig.size)
        for i in range(orig.size):
            fp = f(orig.reshape(-1).copy() + h * np.eye(orig.size)[i])
            fm = f(orig.reshape(-1).copy() - h * np.eye(orig.size)[i])
            num[i] = (fp - fm) / (2 * h)
        p.value = orig
        node = bound_nodes[p.name]
        # params that never feed the jacobian (e.g. last-layer bias) have no
        # gradient entry; that means an exact zero
        g = np.zeros(orig.size) if node is None or node.id not in grads \
            else grads[node.id].reshape(-1)
        denom = max(np.max(np.abs(num)), 1e-8)
        assert np.max(np.abs(g - num)) / denom <= 1e-5, p.name


# ----------------------------------------------------------------- checkpoint

def test_checkpoint_roundtrip(tmp_path):
    rng = np.random.default_rng(12)
    net = Mlp([3, 7, 2], activation="tanh", sn_enabled=True, sn_scale=0.5, rng=rng)
    path = tmp_path / "net.ckpt"
    net.save(path)
    other = Mlp.load(path)
    assert other.layer_dims == net.layer_dims
    assert other.activation == "tanh"
    assert other.sn_enabled and other.sn_scale == 0.5
    for a, b in zip(net.params(), other.params()):
        assert np.array_equal(a.value, b.value)
    x = rng.standard_normal((4, 3))
    # sn_u state restarts on load; compare without normalization
    net.sn_enabled = other.sn_enabled = False
    assert np.array_equal(net.forward_np(x), other.forward_np(x))
