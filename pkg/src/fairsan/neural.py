"""Dense feed-forward networks, losses and the Adam optimizer in numpy.

Everything runs in float64. Inputs may be a single vector of shape
``(n_in,)`` or a batch of shape ``(n_samples, n_in)``; outputs follow the
same convention.
"""

import struct

import numpy as np

from .exceptions import TrainingDivergenceError, UsageError

LEAKY_SLOPE = 0.01

ACTIVATIONS = ("identity", "relu", "leaky_relu", "sigmoid")


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def activate(name, z):
    if name == "identity":
        return z.copy()
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "leaky_relu":
        return np.where(z > 0, z, LEAKY_SLOPE * z)
    if name == "sigmoid":
        return _sigmoid(z)
    raise UsageError(f"unknown activation {name!r}")


def activation_derivative(name, z, a):
    """Derivative of the activation at pre-activation ``z`` (output ``a``)."""
    if name == "identity":
        return np.ones_like(z)
    if name == "relu":
        return (z > 0).astype(z.dtype)
    if name == "leaky_relu":
        return np.where(z > 0, 1.0, LEAKY_SLOPE)
    if name == "sigmoid":
        return a * (1.0 - a)
    raise UsageError(f"unknown activation {name!r}")


class DenseLayer:
    """Affine map ``W @ x + b`` followed by an elementwise activation.

    ``weights`` has shape ``(n_out, n_in)``.
    """

    def __init__(self, weights, bias, activation="relu"):
        weights = np.array(weights, dtype=np.float64, ndmin=2)
        bias = np.array(bias, dtype=np.float64).reshape(-1)
        if weights.shape[0] != bias.shape[0]:
            raise UsageError(
                f"bias length {bias.shape[0]} does not match {weights.shape[0]} outputs"
            )
        if activation not in ACTIVATIONS:
            raise UsageError(f"unknown activation {activation!r}")
        self.weights = weights
        self.bias = bias
        self.activation = activation
        self._cache = None

    @classmethod
    def initialize(cls, n_in, n_out, activation, rng):
        bound = 1.0 / np.sqrt(n_in)
        weights = rng.uniform(-bound, bound, size=(n_out, n_in))
        bias = rng.uniform(-bound, bound, size=n_out)
        return cls(weights, bias, activation)

    @property
    def n_in(self):
        return self.weights.shape[1]

    @property
    def n_out(self):
        return self.weights.shape[0]

    def forward(self, x):
        z = x @ self.weights.T + self.bias
        a = activate(self.activation, z)
        self._cache = (x, z, a)
        return a

    def backward(self, grad_out):
        if self._cache is None:
            raise UsageError("backward called before forward")
        x, z, a = self._cache
        delta = grad_out * activation_derivative(self.activation, z, a)
        grad_w = delta.T @ x
        grad_b = delta.sum(axis=0)
        grad_in = delta @ self.weights
        return grad_w, grad_b, grad_in


class Network:
    """A fixed stack of :class:`DenseLayer` objects.

    Parameters
    ----------
    layers : list of DenseLayer
        Consecutive layers must chain (``layers[k].n_out == layers[k+1].n_in``).
    seed : int, optional
        Seed the weights were drawn from, kept for the record.
    """

    def __init__(self, layers, seed=None):
        if not layers:
            raise UsageError("a network needs at least one layer")
        for k in range(len(layers) - 1):
            if layers[k].n_out != layers[k + 1].n_in:
                raise UsageError(
                    f"layer {k} outputs {layers[k].n_out} values but layer {k + 1} "
                    f"expects {layers[k + 1].n_in}"
                )
        self.layers = list(layers)
        self.seed = seed
        self._batched = None

    @classmethod
    def build(cls, widths, hidden_activation="relu", output_activation="leaky_relu", seed=0):
        """Create a randomly initialized network with the given layer widths.

        ``widths = [n_in, h1, ..., n_out]``; weights are uniform in
        ``[-1/sqrt(fan_in), 1/sqrt(fan_in)]``.
        """
        if len(widths) < 2:
            raise UsageError("widths must list at least an input and an output width")
        rng = np.random.default_rng(seed)
        layers = []
        for k in range(len(widths) - 1):
            act = output_activation if k == len(widths) - 2 else hidden_activation
            layers.append(DenseLayer.initialize(widths[k], widths[k + 1], act, rng))
        return cls(layers, seed=seed)

    @property
    def n_in(self):
        return self.layers[0].n_in

    @property
    def n_out(self):
        return self.layers[-1].n_out

    @property
    def widths(self):
        return [self.n_in] + [layer.n_out for layer in self.layers]

    def parameters(self):
        """Parameter arrays in a fixed order: ``W0, b0, W1, b1, ...``."""
        params = []
        for layer in self.layers:
            params.extend((layer.weights, layer.bias))
        return params

    def forward(self, x):
        x = np.asarray(x, dtype=np.float64)
        batched = x.ndim == 2
        if x.ndim not in (1, 2) or x.shape[-1] != self.n_in:
            raise UsageError(f"expected input width {self.n_in}, got shape {x.shape}")
        out = x if batched else x[None, :]
        for layer in self.layers:
            out = layer.forward(out)
        self._batched = batched
        return out if batched else out[0]

    __call__ = forward

    def predict(self, x):
        """Forward pass that leaves the backward cache untouched."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim not in (1, 2) or x.shape[-1] != self.n_in:
            raise UsageError(f"expected input width {self.n_in}, got shape {x.shape}")
        out = x if x.ndim == 2 else x[None, :]
        for layer in self.layers:
            out = activate(layer.activation, out @ layer.weights.T + layer.bias)
        return out if x.ndim == 2 else out[0]

    def backward(self, loss_grad, return_input_grad=False):
        """Backpropagate ``dL/d(output)`` through the cached forward pass.

        Returns a list of gradients aligned with :meth:`parameters`. With
        ``return_input_grad=True`` also returns ``dL/d(input)``. Weights are
        not modified.
        """
        if self._batched is None:
            raise UsageError("backward called before forward")
        grad = np.asarray(loss_grad, dtype=np.float64)
        if not self._batched:
            grad = grad[None, :]
        if grad.shape[-1] != self.n_out:
            raise UsageError(f"loss gradient width {grad.shape[-1]} != output width {self.n_out}")
        grads = []
        for layer in reversed(self.layers):
            grad_w, grad_b, grad = layer.backward(grad)
            grads.append(grad_b)
            grads.append(grad_w)
        grads.reverse()
        if return_input_grad:
            return grads, (grad if self._batched else grad[0])
        return grads

    def copy(self):
        layers = [
            DenseLayer(layer.weights.copy(), layer.bias.copy(), layer.activation)
            for layer in self.layers
        ]
        return Network(layers, seed=self.seed)


class Adam:
    """Adam with bias correction, updating a list of arrays in place."""

    def __init__(self, params, lr=2e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, grads):
        if len(grads) != len(self.params):
            raise UsageError(f"got {len(grads)} gradients for {len(self.params)} parameters")
        for g, p in zip(grads, self.params):
            if g.shape != p.shape:
                raise UsageError(f"gradient shape {g.shape} != parameter shape {p.shape}")
            if not np.all(np.isfinite(g)):
                raise TrainingDivergenceError("non-finite gradient")
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for g, p, m, v in zip(grads, self.params, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
        return self.params


def mse(pred, target):
    pred, target = _pair(pred, target)
    return float(np.mean((pred - target) ** 2))


def mse_grad(pred, target):
    pred, target = _pair(pred, target)
    return 2.0 * (pred - target) / pred.size


def l1_per_attribute(pred, target):
    """Componentwise absolute error ``|pred - target|``."""
    pred, target = _pair(pred, target)
    return np.abs(pred - target)


def _pair(pred, target):
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise UsageError(f"shape mismatch: {pred.shape} vs {target.shape}")
    if pred.size == 0:
        raise UsageError("empty input")
    return pred, target


# Checkpoint format, version 1 (all integers/floats little-endian):
#   magic   8 bytes  b"FSANNET\0"
#   version uint32
#   n_layer uint32
#   seed    int64    (-1 when unknown)
#   slope   float64  LeakyReLU negative slope
#   per layer: n_in uint32, n_out uint32, activation uint8, 3 pad bytes
#   per layer: weights n_out*n_in float64 (row-major), bias n_out float64
#   has_opt uint8; when 1: lr, beta1, beta2, eps float64, t uint64,
#           then every first-moment array followed by every second-moment
#           array, in parameter order.
MAGIC = b"FSANNET\0"
FORMAT_VERSION = 1
_ACT_CODES = {name: code for code, name in enumerate(ACTIVATIONS)}


def network_to_bytes(net, optimizer=None):
    parts = [
        MAGIC,
        struct.pack("<IIqd", FORMAT_VERSION, len(net.layers),
                    -1 if net.seed is None else int(net.seed), LEAKY_SLOPE),
    ]
    for layer in net.layers:
        parts.append(struct.pack("<IIB3x", layer.n_in, layer.n_out, _ACT_CODES[layer.activation]))
    for layer in net.layers:
        parts.append(np.ascontiguousarray(layer.weights, dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(layer.bias, dtype="<f8").tobytes())
    if optimizer is None:
        parts.append(struct.pack("<B", 0))
    else:
        parts.append(struct.pack("<BddddQ", 1, optimizer.lr, optimizer.beta1,
                                 optimizer.beta2, optimizer.eps, optimizer.t))
        for arr in optimizer.m + optimizer.v:
            parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return b"".join(parts)


def network_from_bytes(data):
    """Inverse of :func:`network_to_bytes`; returns ``(network, adam_or_None)``."""
    view = memoryview(data)
    if bytes(view[:8]) != MAGIC:
        raise UsageError("not a network checkpoint (bad magic)")
    pos = 8
    version, n_layers, seed, slope = struct.unpack_from("<IIqd", view, pos)
    pos += struct.calcsize("<IIqd")
    if version != FORMAT_VERSION:
        raise UsageError(f"unsupported checkpoint version {version}")
    if slope != LEAKY_SLOPE:
        raise UsageError(f"checkpoint uses LeakyReLU slope {slope}, expected {LEAKY_SLOPE}")
    shapes = []
    for _ in range(n_layers):
        n_in, n_out, code = struct.unpack_from("<IIB3x", view, pos)
        pos += 12
        shapes.append((n_in, n_out, ACTIVATIONS[code]))

    def take(count):
        nonlocal pos
        arr = np.frombuffer(view, dtype="<f8", count=count, offset=pos).astype(np.float64)
        pos += 8 * count
        return arr

    layers = []
    for n_in, n_out, act in shapes:
        weights = take(n_in * n_out).reshape(n_out, n_in)
        bias = take(n_out)
        layers.append(DenseLayer(weights, bias, act))
    net = Network(layers, seed=None if seed == -1 else seed)
    (has_opt,) = struct.unpack_from("<B", view, pos)
    pos += 1
    optimizer = None
    if has_opt:
        lr, beta1, beta2, eps, t = struct.unpack_from("<ddddQ", view, pos)
        pos += struct.calcsize("<ddddQ")
        optimizer = Adam(net.parameters(), lr=lr, beta1=beta1, beta2=beta2, eps=eps)
        optimizer.t = t
        for arr in optimizer.m + optimizer.v:
            arr[...] = take(arr.size).reshape(arr.shape)
    if pos != len(view):
        raise UsageError("trailing bytes in network checkpoint")
    return net, optimizer


def save_network(path, net, optimizer=None):
    with open(path, "wb") as fh:
        fh.write(network_to_bytes(net, optimizer))


def load_network(path):
    with open(path, "rb") as fh:
        return network_from_bytes(fh.read())
