"""Dense network substrate: matrix product, fully-connected layers, Adam.

Matrices are plain 2-D ``float64`` numpy arrays (batch rows, feature
columns). Layers hold their own gradient buffers; gradients accumulate
across ``backward`` calls until :meth:`DenseLayer.zero_grad` is called.
"""

import numpy as np

from .exceptions import DimensionError, StateError

ACTIVATIONS = ("relu", "tanh", "identity")


def as_matrix(x, name="input"):
    """Return ``x`` as a C-contiguous 2-D float64 array."""
    arr = np.ascontiguousarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {arr.shape}")
    return arr


def matmul(a, b):
    a = as_matrix(a, "left operand")
    b = as_matrix(b, "right operand")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(
            f"cannot multiply {a.shape[0]}x{a.shape[1]} by {b.shape[0]}x{b.shape[1]}"
        )
    return a @ b


def glorot_uniform(rng, n_in, n_out):
    limit = np.sqrt(6.0 / (n_in + n_out))
    return rng.uniform(-limit, limit, size=(n_out, n_in))


class DenseLayer:
    """Fully-connected layer computing ``activation(x @ W.T + b)``.

    ``weights`` has shape (out, in). Call :meth:`forward` with
    ``cache=True`` before :meth:`backward`; inference calls should pass
    ``cache=False`` so a pending backward pass is not disturbed.
    """

    def __init__(self, n_in, n_out, activation="relu", rng=None):
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}; expected one of {ACTIVATIONS}")
        if rng is None:
            rng = np.random.default_rng(0)
        self.activation = activation
        self.weights = glorot_uniform(rng, n_in, n_out)
        self.bias = np.zeros(n_out)
        self.grad_weights = np.zeros_like(self.weights)
        self.grad_bias = np.zeros_like(self.bias)
        self.cached_input = None
        self.cached_preactivation = None
        self._cached_output = None

    @property
    def n_in(self):
        return self.weights.shape[1]

    @property
    def n_out(self):
        return self.weights.shape[0]

    def parameters(self):
        return [self.weights, self.bias]

    def gradients(self):
        return [self.grad_weights, self.grad_bias]

    def zero_grad(self):
        self.grad_weights.fill(0.0)
        self.grad_bias.fill(0.0)

    def forward(self, x, cache=True):
        if x.ndim != 2 or x.shape[1] != self.n_in:
            raise DimensionError(
                f"layer expects (batch, {self.n_in}) input, got {x.shape}"
            )
        z = x @ self.weights.T
        z += self.bias
        if self.activation == "relu":
            out = np.maximum(z, 0.0)
        elif self.activation == "tanh":
            out = np.tanh(z)
        else:
            out = z
        if cache:
            self.cached_input = x
            self.cached_preactivation = z
            self._cached_output = out
        return out

    def backward(self, grad_output, input_grad=True):
        """Accumulate parameter gradients; return the input gradient unless ``input_grad`` is off."""
        if self.cached_input is None:
            raise StateError("backward called before forward")
        if grad_output.shape != self.cached_preactivation.shape:
            raise DimensionError(
                f"upstream gradient shape {grad_output.shape} does not match "
                f"layer output shape {self.cached_preactivation.shape}"
            )
        if self.activation == "relu":
            dz = grad_output * (self.cached_preactivation > 0.0)
        elif self.activation == "tanh":
            dz = grad_output * (1.0 - self._cached_output ** 2)
        else:
            dz = grad_output
        self.grad_weights += dz.T @ self.cached_input
        self.grad_bias += dz.sum(axis=0)
        if input_grad:
            return dz @ self.weights
        return None


class MLP:
    """A stack of dense layers; hidden layers share one activation, the last is linear."""

    def __init__(self, widths, activation="relu", rng=None, final_activation="identity"):
        if len(widths) < 2:
            raise ValueError("an MLP needs at least an input and an output width")
        if rng is None:
            rng = np.random.default_rng(0)
        self.layers = []
        for i, (n_in, n_out) in enumerate(zip(widths[:-1], widths[1:])):
            last = i == len(widths) - 2
            act = final_activation if last else activation
            self.layers.append(DenseLayer(n_in, n_out, act, rng))

    def forward(self, x, cache=True):
        for layer in self.layers:
            x = layer.forward(x, cache=cache)
        return x

    def backward(self, grad_output, input_grad=True):
        g = grad_output
        for i in range(len(self.layers) - 1, -1, -1):
            g = self.layers[i].backward(g, input_grad=input_grad or i > 0)
        return g

    def parameters(self):
        return [p for layer in self.layers for p in layer.parameters()]

    def gradients(self):
        return [g for layer in self.layers for g in layer.gradients()]

    def zero_grad(self):
        for layer in self.layers:
            layer.zero_grad()


class Adam:
    """Adam with bias correction. Updates parameters in place.

    The optimizer keeps one pair of moment buffers per parameter array, in
    the order the parameters were given at construction.
    """

    def __init__(self, params, lr=1e-4, beta1=0.9, beta2=0.999, epsilon=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.step_count = 0
        self.first_moment = [np.zeros_like(p) for p in params]
        self.second_moment = [np.zeros_like(p) for p in params]

    def step(self, params, grads):
        """Apply one update, then zero ``grads``."""
        if len(params) != len(self.first_moment) or len(grads) != len(params):
            raise StateError(
                f"optimizer tracks {len(self.first_moment)} parameters, "
                f"got {len(params)} parameters and {len(grads)} gradients"
            )
        for p, g, m in zip(params, grads, self.first_moment):
            if p.shape != m.shape or g.shape != m.shape:
                raise StateError(
                    f"parameter {p.shape} / gradient {g.shape} do not match moment buffer {m.shape}"
                )
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1 ** t
        c2 = 1.0 - self.beta2 ** t
        for p, g, m, v in zip(params, grads, self.first_moment, self.second_moment):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.epsilon)
            g.fill(0.0)
