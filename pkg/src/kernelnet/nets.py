"""Feed-forward networks with optional spectral normalization.

An Mlp owns its parameters as plain numpy arrays and is re-bound to a fresh
tape on every forward pass (define-by-run). Spectral normalization keeps a
persistent power-iteration vector per layer; one iteration runs per
normalized forward, and the normalized weight W * sn_scale / sigma_hat is
built on the tape so gradients flow through W.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .diffengine import Tape, Node

ACTIVATIONS = ("relu", "tanh", "none")


class Param:
    """Named parameter; .value is replaced (not mutated) by optimizers."""

    __slots__ = ("name", "value")

    def __init__(self, name, value):
        self.name = name
        self.value = np.asarray(value, dtype=np.float64)

    def __repr__(self):
        return f"Param({self.name}, shape={self.value.shape})"


def power_iteration_step(weight, u):
    """One power-iteration update for the largest singular value of weight.

    Returns (u_new, v, sigma_hat). A zero matrix leaves u unchanged and
    reports sigma_hat = 0 (documented: not an error).
    """
    w = np.asarray(weight)
    wu = w.T @ u
    nu = np.linalg.norm(wu)
    if nu == 0.0:
        return u, np.zeros(w.shape[1]), 0.0
    v = wu / nu
    wv = w @ v
    nv = np.linalg.norm(wv)
    if nv == 0.0:
        return u, v, 0.0
    u_new = wv / nv
    sigma = float(u_new @ (w @ v))
    return u_new, v, sigma


def spectral_normalize(weight, u, sn_scale=1.0):
    """One power-iteration step, then weight * sn_scale / sigma_hat.

    Returns (normalized weight, updated u). Zero matrices pass through
    unchanged with u untouched.
    """
    u_new, _, sigma = power_iteration_step(weight, u)
    if sigma == 0.0:
        return np.array(weight, dtype=np.float64), u
    return np.asarray(weight) * (sn_scale / sigma), u_new


class Mlp:
    """Stack of affine layers with a fixed hidden activation, linear output.

    layer_dims = [in, h1, ..., out]. With sn_enabled, every weight matrix is
    spectrally normalized (scaled to sn_scale) before use.
    """

    def __init__(self, layer_dims, activation="relu", sn_enabled=False,
                 sn_scale=1.0, rng=None, output_scale=1.0):
        if len(layer_dims) < 2:
            raise ValueError("layer_dims needs at least input and output dims")
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.layer_dims = [int(d) for d in layer_dims]
        self.activation = activation
        self.sn_enabled = bool(sn_enabled)
        self.sn_scale = float(sn_scale)
        rng = rng or np.random.default_rng()
        self.weights = []
        self.biases = []
        self.sn_u = []
        n_layers = len(layer_dims) - 1
        for i, (fan_in, fan_out) in enumerate(zip(layer_dims[:-1], layer_dims[1:])):
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            w = rng.uniform(-bound, bound, size=(fan_out, fan_in))
            if i == n_layers - 1 and output_scale != 1.0:
                w = w * output_scale
            self.weights.append(Param(f"w{i}", w))
            self.biases.append(Param(f"b{i}", np.zeros(fan_out)))
            u = rng.standard_normal(fan_out)
            self.sn_u.append(u / np.linalg.norm(u))

    @property
    def in_dim(self):
        return self.layer_dims[0]

    @property
    def out_dim(self):
        return self.layer_dims[-1]

    def params(self):
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    # ------------------------------------------------------------- forward

    def _activate(self, tape, x):
        if self.activation == "relu":
            return tape.relu(x)
        if self.activation == "tanh":
            return tape.tanh(x)
        return x

    def _weight_node(self, tape, i, update_sn):
        w = self.weights[i]
        wn = tape.leaf_for(w.value, name=w.name)
        if not self.sn_enabled:
            return wn
        if update_sn:
            u_new, v, sigma = power_iteration_step(w.value, self.sn_u[i])
            self.sn_u[i] = u_new
        else:
            u_new, v, sigma = power_iteration_step(w.value, self.sn_u[i])
        if sigma == 0.0:
            return wn
        # sigma_hat as a tape value so the normalization is differentiable
        # through W; u and v enter as constants (standard practice).
        un = tape.leaf(u_new, name=f"{w.name}.u")
        vn = tape.leaf(v, name=f"{w.name}.v")
        sigma_node = tape.sum(tape.mul(un, tape.matmul(wn, vn)))
        factor = tape.div(tape.leaf(np.asarray(self.sn_scale)), sigma_node)
        return tape.scalar_mul(wn, factor)

    def forward(self, tape, x, update_sn=True):
        """Apply the network; x is a Node or array, (batch, in_dim) or
        (in_dim,). Returns a node of matching arrangement."""
        if not isinstance(x, Node):
            x = tape.leaf(x, name="input")
        vec_in = x.value.ndim == 1
        if vec_in:
            x = tape.reshape(x, (1, x.value.shape[0]))
        if x.value.shape[1] != self.in_dim:
            raise ValueError(
                f"input width {x.value.shape[1]} != first layer dim {self.in_dim}")
        h = x
        last = len(self.weights) - 1
        for i in range(len(self.weights)):
            wn = self._weight_node(tape, i, update_sn)
            bn = tape.leaf_for(self.biases[i].value, name=self.biases[i].name)
            h = tape.addrow(tape.matmul(h, tape.transpose(wn)), bn)
            if i != last:
                h = self._activate(tape, h)
        if vec_in:
            h = tape.reshape(h, (self.out_dim,))
        return h

    def forward_np(self, x):
        """Plain numpy evaluation (no tape, no power-iteration updates)."""
        x = np.asarray(x, dtype=np.float64)
        vec_in = x.ndim == 1
        h = x.reshape(1, -1) if vec_in else x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            wv = w.value
            if self.sn_enabled:
                _, _, sigma = power_iteration_step(wv, self.sn_u[i])
                if sigma != 0.0:
                    wv = wv * (self.sn_scale / sigma)
            h = h @ wv.T + b.value
            if i != last:
                h = np.maximum(h, 0.0) if self.activation == "relu" else (
                    np.tanh(h) if self.activation == "tanh" else h)
        return h.reshape(-1) if vec_in else h

    # ------------------------------------------------------------ jacobian

    def jacobian_node(self, tape, x, update_sn=False):
        """Jacobian d out / d x at a single input, built on the tape so it is
        itself differentiable w.r.t. the parameters (tanh exactly; relu via
        its a.e. piecewise-constant derivative entering as a constant).

        x: Node or array of shape (in_dim,). Returns a node (out_dim, in_dim).
        """
        if not isinstance(x, Node):
            x = tape.leaf(x, name="input")
        if x.value.ndim != 1 or x.value.shape[0] != self.in_dim:
            raise ValueError(f"jacobian_node wants a ({self.in_dim},) input")
        h = x
        jac = None
        last = len(self.weights) - 1
        for i in range(len(self.weights)):
            wn = self._weight_node(tape, i, update_sn)
            jac = wn if jac is None else tape.matmul(wn, jac)
            if i != last:
                pre = tape.add(tape.matmul(wn, h),
                               tape.leaf_for(self.biases[i].value))
                if self.activation == "tanh":
                    a = tape.tanh(pre)
                    dact = tape.sub(tape.leaf(np.ones(a.value.shape)), tape.mul(a, a))
                    h = a
                elif self.activation == "relu":
                    a = tape.relu(pre)
                    dact = tape.leaf((pre.value > 0.0).astype(np.float64))
                    h = a
                else:
                    h = pre
                    continue
                jac = tape.rowscale(jac, dact)
        return jac

    # ---------------------------------------------------------- checkpoints

    def save(self, path):
        """JSON header line, then all weights and biases as raw little-endian
        float64, layer by layer (W row-major, then b)."""
        header = {
            "layer_dims": self.layer_dims,
            "activation": self.activation,
            "sn_enabled": self.sn_enabled,
            "sn_scale": self.sn_scale,
        }
        with open(path, "wb") as fh:
            fh.write((json.dumps(header, sort_keys=True) + "\n").encode("utf-8"))
            for w, b in zip(self.weights, self.biases):
                fh.write(struct.pack(f"<{w.value.size}d", *w.value.reshape(-1)))
                fh.write(struct.pack(f"<{b.value.size}d", *b.value))

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            header = json.loads(fh.readline().decode("utf-8"))
            net = cls(header["layer_dims"], activation=header["activation"],
                      sn_enabled=header["sn_enabled"], sn_scale=header["sn_scale"],
                      rng=np.random.default_rng(0))
            for w, b in zip(net.weights, net.biases):
                raw = fh.read(w.value.size * 8)
                w.value = np.frombuffer(raw, dtype="<f8").reshape(w.value.shape).copy()
                raw = fh.read(b.value.size * 8)
                b.value = np.frombuffer(raw, dtype="<f8").copy()
        return net
