"""Two-layer perceptron standing in for the face backbone.

features = W2 @ act(W1 @ x + b1) + b2, with all parameters packed into one
flat float64 vector so the momentum encoder and the optimizer can treat
them uniformly. Inputs are processed in batches (rows).
"""
from __future__ import annotations

import numpy as np

from ..numerics import DimensionMismatch

ACTIVATIONS = ("tanh", "identity")


class ToyBackbone:
    def __init__(self, input_dim: int, hidden_dim: int, output_dim: int,
                 activation: str = "tanh", params: np.ndarray | None = None):
        if activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")
        self.input_dim = input_dim
        self.hidden_dim = hidden_dim
        self.output_dim = output_dim
        self.activation = activation
        n = self.num_params
        self.params = np.zeros(n) if params is None else np.array(params, dtype=np.float64)
        if self.params.shape != (n,):
            raise DimensionMismatch(f"expected {n} parameters, got {self.params.shape}")

    @property
    def num_params(self) -> int:
        h, i, o = self.hidden_dim, self.input_dim, self.output_dim
        return h * i + h + o * h + o

    @classmethod
    def initialized(cls, input_dim, hidden_dim, output_dim, rng, activation="tanh"):
        """Gaussian weights scaled by 1/sqrt(fan_in), zero biases."""
        net = cls(input_dim, hidden_dim, output_dim, activation)
        w1, _, w2, _ = net.views()
        w1[...] = rng.standard_normal(w1.shape) / np.sqrt(input_dim)
        w2[...] = rng.standard_normal(w2.shape) / np.sqrt(hidden_dim)
        return net

    def views(self, params: np.ndarray | None = None):
        p = self.params if params is None else params
        h, i, o = self.hidden_dim, self.input_dim, self.output_dim
        a = h * i
        b = a + h
        c = b + o * h
        return p[:a].reshape(h, i), p[a:b], p[b:c].reshape(o, h), p[c:]

    def with_params(self, params: np.ndarray) -> "ToyBackbone":
        return ToyBackbone(self.input_dim, self.hidden_dim, self.output_dim,
                           self.activation, params)

    def _act(self, z):
        return np.tanh(z) if self.activation == "tanh" else z

    def forward(self, inputs: np.ndarray, params: np.ndarray | None = None):
        """Return (features, cache). ``params`` overrides the stored ones."""
        x = np.atleast_2d(inputs)
        if x.shape[1] != self.input_dim:
            raise DimensionMismatch(f"input dim {x.shape[1]} != {self.input_dim}")
        w1, b1, w2, b2 = self.views(params)
        hidden = self._act(x @ w1.T + b1)
        out = hidden @ w2.T + b2
        return out, (x, hidden, params)

    def backward(self, cache, upstream: np.ndarray):
        """Return (flat parameter gradient, input gradient)."""
        x, hidden, params = cache
        w1, _, w2, _ = self.views(params)
        g_w2 = upstream.T @ hidden
        g_b2 = upstream.sum(axis=0)
        g_hidden = upstream @ w2
        if self.activation == "tanh":
            g_hidden = g_hidden * (1.0 - hidden * hidden)
        g_w1 = g_hidden.T @ x
        g_b1 = g_hidden.sum(axis=0)
        grad = np.concatenate([g_w1.ravel(), g_b1, g_w2.ravel(), g_b2])
        return grad, g_hidden @ w1


class IdentityBackbone:
    """Features are the inputs themselves; nothing to learn."""

    num_params = 0
    activation = "identity"

    def __init__(self, input_dim: int):
        self.input_dim = input_dim
        self.output_dim = input_dim
        self.params = np.zeros(0)

    def with_params(self, params):
        return self

    def forward(self, inputs, params=None):
        x = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
        if x.shape[1] != self.input_dim:
            raise DimensionMismatch(f"input dim {x.shape[1]} != {self.input_dim}")
        return x.copy(), None

    def backward(self, cache, upstream):
        return np.zeros(0), upstream.copy()


def backbone_forward(backbone, x: np.ndarray) -> np.ndarray:
    feats, _ = backbone.forward(x)
    return feats[0] if np.ndim(x) == 1 else feats


def backbone_backward(backbone, x: np.ndarray, upstream: np.ndarray):
    """Parameter and input gradients for an upstream feature gradient."""
    single = np.ndim(x) == 1
    _, cache = backbone.forward(x)
    grad, g_in = backbone.backward(cache, np.atleast_2d(upstream))
    return grad, (g_in[0] if single else g_in)
