"""Small tanh MLP with a flat parameter-vector layout shared by the GA.

Layout is layer-major: each layer's (out, in) weight matrix row-major,
then its biases. Hidden activations are tanh, the output is linear.
All math is float64.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class NetworkTopology:
    layer_sizes: tuple[int, ...]

    def __post_init__(self):
        if len(self.layer_sizes) < 2:
            raise ValueError("topology needs at least input and output layers")
        if any(s < 1 for s in self.layer_sizes):
            raise ValueError("layer sizes must be positive")
        object.__setattr__(self, "layer_sizes", tuple(int(s) for s in self.layer_sizes))

    def sizes_array(self) -> np.ndarray:
        return np.asarray(self.layer_sizes, dtype=np.int64)


def param_count(topology: NetworkTopology) -> int:
    """Total parameters: sum over layers of (in + 1) * out."""
    sizes = topology.layer_sizes
    return sum((sizes[i] + 1) * sizes[i + 1] for i in range(len(sizes) - 1))


class Network:
    """Feed-forward net; parameters live in per-layer numpy arrays."""

    def __init__(self, topology: NetworkTopology, weights, biases):
        self.topology = topology
        self.weights = [np.asarray(w, dtype=np.float64) for w in weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in biases]
        sizes = topology.layer_sizes
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (sizes[i + 1], sizes[i]) or b.shape != (sizes[i + 1],):
                raise ValueError(f"layer {i} shapes inconsistent with topology")

    @classmethod
    def zeros(cls, topology: NetworkTopology) -> "Network":
        sizes = topology.layer_sizes
        return cls(topology,
                   [np.zeros((sizes[i + 1], sizes[i])) for i in range(len(sizes) - 1)],
                   [np.zeros(sizes[i + 1]) for i in range(len(sizes) - 1)])

    @classmethod
    def random(cls, topology: NetworkTopology, rng: np.random.Generator) -> "Network":
        """Fan-in scaled Gaussian weights, zero biases."""
        sizes = topology.layer_sizes
        weights = [rng.normal(0.0, 1.0 / np.sqrt(sizes[i]), (sizes[i + 1], sizes[i]))
                   for i in range(len(sizes) - 1)]
        biases = [np.zeros(sizes[i + 1]) for i in range(len(sizes) - 1)]
        return cls(topology, weights, biases)

    def copy(self) -> "Network":
        return Network(self.topology, [w.copy() for w in self.weights],
                       [b.copy() for b in self.biases])

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.topology.layer_sizes[0],):
            raise ValueError("input length does not match topology")
        a = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            a = w @ a + b
            if i < last:
                a = np.tanh(a)
        return a

    def forward_batch(self, xs: np.ndarray) -> np.ndarray:
        xs = np.asarray(xs, dtype=np.float64)
        if xs.ndim != 2 or xs.shape[1] != self.topology.layer_sizes[0]:
            raise ValueError("batch shape does not match topology")
        a = xs
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            a = a @ w.T + b
            if i < last:
                a = np.tanh(a)
        return a

    def _backward_layers(self, xs: np.ndarray, out_grads: np.ndarray):
        """Per-layer parameter gradients for a batch (summed over samples)."""
        xs = np.atleast_2d(np.asarray(xs, dtype=np.float64))
        out_grads = np.atleast_2d(np.asarray(out_grads, dtype=np.float64))
        acts = [xs]
        a = xs
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            a = a @ w.T + b
            if i < last:
                a = np.tanh(a)
            acts.append(a)
        if out_grads.shape != acts[-1].shape:
            raise ValueError("output gradient shape mismatch")
        w_grads = [None] * len(self.weights)
        b_grads = [None] * len(self.biases)
        g = out_grads
        for i in range(len(self.weights) - 1, -1, -1):
            w_grads[i] = g.T @ acts[i]
            b_grads[i] = g.sum(axis=0)
            if i > 0:
                g = (g @ self.weights[i]) * (1.0 - acts[i] ** 2)
        return w_grads, b_grads

    def backward(self, x: np.ndarray, out_grad: np.ndarray) -> np.ndarray:
        """Exact reverse-mode gradient w.r.t. all parameters, flattened."""
        w_grads, b_grads = self._backward_layers(x, out_grad)
        return _flatten_arrays(w_grads, b_grads)

    def apply_gradient(self, w_grads, b_grads, scale: float) -> None:
        for w, g in zip(self.weights, w_grads):
            w += scale * g
        for b, g in zip(self.biases, b_grads):
            b += scale * g


def _flatten_arrays(weights, biases) -> np.ndarray:
    parts = []
    for w, b in zip(weights, biases):
        parts.append(np.asarray(w, dtype=np.float64).ravel())
        parts.append(np.asarray(b, dtype=np.float64).ravel())
    return np.concatenate(parts)


def flatten(network: Network) -> np.ndarray:
    """Network parameters as one solution vector."""
    return _flatten_arrays(network.weights, network.biases)


def unflatten(topology: NetworkTopology, theta: np.ndarray) -> Network:
    """Rebuild a network from a solution vector; inverse of flatten."""
    theta = np.asarray(theta, dtype=np.float64)
    expected = param_count(topology)
    if theta.shape != (expected,):
        raise ValueError(f"solution vector length {theta.shape} != {expected}")
    sizes = topology.layer_sizes
    weights, biases = [], []
    off = 0
    for i in range(len(sizes) - 1):
        n_in, n_out = sizes[i], sizes[i + 1]
        weights.append(theta[off:off + n_in * n_out].reshape(n_out, n_in).copy())
        off += n_in * n_out
        biases.append(theta[off:off + n_out].copy())
        off += n_out
    return Network(topology, weights, biases)


def validate_solution_vector(topology: NetworkTopology, theta: np.ndarray) -> None:
    theta = np.asarray(theta)
    if theta.shape != (param_count(topology),):
        raise ValueError("solution vector length mismatch")
    if not np.all(np.isfinite(theta)):
        raise ValueError("solution vector must be finite")
