"""Dense feed-forward networks with hand-rolled reverse-mode gradients.

Two families:

* ``LeakyReluNet`` -- a stack of square linear layers, each followed by a
  leaky-ReLU. Every layer is invertible, so the whole map has an exact
  inverse (used as the ground-truth mixing function and by oracle agents).
* ``MaxoutNet`` -- hidden layers of k parallel affine pieces combined by an
  elementwise max, plus a plain affine output layer (the trainable feature
  extractor).

All parameters are float64 numpy arrays. Forward passes accept a single
vector ``(d,)`` or a batch ``(B, d)``. ``backward`` consumes the cache of the
matching forward call and returns exact gradients for every parameter and
for the input.
"""

from dataclasses import dataclass, field

import numpy as np

from latentbandit.errors import ConfigError, SingularMatrixError

DET_FLOOR = 1e-10
SCHEMA_VERSION = 1


def leaky_relu(a, alpha):
    return np.where(a >= 0.0, a, alpha * a)


def leaky_relu_inverse(y, alpha):
    # the inverse activation has slope 1/alpha on the negative part
    return np.where(y >= 0.0, y, y / alpha)


# ---------------------------------------------------------------------------
# network types


@dataclass
class LeakyReluNet:
    """Stack of (square linear -> leaky-ReLU) layers with slope ``alpha``.

    An empty stack is the identity map.
    """

    weights: list  # list of (d, d) arrays
    biases: list  # list of (d,) arrays
    alpha: float = 0.2
    version: int = 0  # bumped on in-place parameter updates; guards caches

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError(f"alpha must be in (0, 1), got {self.alpha}")
        if len(self.weights) != len(self.biases):
            raise ConfigError("weights and biases must pair up")
        self.weights = [np.asarray(w, dtype=float) for w in self.weights]
        self.biases = [np.asarray(b, dtype=float) for b in self.biases]
        d = self.dim
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (d, d) or b.shape != (d,):
                raise ConfigError(f"layer {i}: expected square ({d},{d}) weights")
            if abs(np.linalg.det(w)) <= DET_FLOOR:
                raise ConfigError(f"layer {i}: weight matrix is singular")

    @property
    def dim(self):
        return self.weights[0].shape[0] if self.weights else 0

    @property
    def n_layers(self):
        return len(self.weights)

    def params(self):
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out


@dataclass
class MaxoutLayer:
    w: np.ndarray  # (pieces, out_dim, in_dim)
    b: np.ndarray  # (pieces, out_dim)


@dataclass
class MaxoutNet:
    """Maxout hidden layers followed by a plain affine output layer."""

    hidden: list  # list of MaxoutLayer
    w_out: np.ndarray  # (out_dim, last_width)
    b_out: np.ndarray  # (out_dim,)
    version: int = 0

    def __post_init__(self):
        self.w_out = np.asarray(self.w_out, dtype=float)
        self.b_out = np.asarray(self.b_out, dtype=float)
        width = None
        for i, layer in enumerate(self.hidden):
            layer.w = np.asarray(layer.w, dtype=float)
            layer.b = np.asarray(layer.b, dtype=float)
            if layer.w.ndim != 3 or layer.w.shape[0] < 2:
                raise ConfigError(f"hidden layer {i}: needs >= 2 affine pieces")
            if layer.b.shape != layer.w.shape[:2]:
                raise ConfigError(f"hidden layer {i}: bias shape mismatch")
            if width is not None and layer.w.shape[2] != width:
                raise ConfigError(f"hidden layer {i}: input width mismatch")
            width = layer.w.shape[1]
        if width is not None and self.w_out.shape[1] != width:
            raise ConfigError("output layer width mismatch")

    @property
    def in_dim(self):
        return self.hidden[0].w.shape[2] if self.hidden else self.w_out.shape[1]

    @property
    def out_dim(self):
        return self.w_out.shape[0]

    @property
    def pieces(self):
        return self.hidden[0].w.shape[0] if self.hidden else 2

    def params(self):
        out = []
        for layer in self.hidden:
            out.extend((layer.w, layer.b))
        out.extend((self.w_out, self.b_out))
        return out


@dataclass
class GradientTape:
    """Per-parameter gradients in ``net.params()`` order, plus input grads."""

    param_grads: list
    input_grad: np.ndarray


@dataclass
class _Cache:
    net_id: int
    version: int
    batched: bool
    layers: list  # per-layer saved activations


def _check_cache(net, cache):
    if cache.net_id != id(net) or cache.version != net.version:
        raise RuntimeError(
            "stale cache: backward must consume the cache of a forward call "
            "on the same, unmodified network"
        )


def _promote(x):
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        return x[None, :], False
    return x, True


# ---------------------------------------------------------------------------
# leaky-ReLU stack


def forward_leaky(net: LeakyReluNet, z):
    """Apply the mixing map: (linear -> leaky-ReLU) for every layer."""
    x, batched = _promote(z)
    if net.n_layers and x.shape[1] != net.dim:
        raise ConfigError(f"input dim {x.shape[1]} != net dim {net.dim}")
    for w, b in zip(net.weights, net.biases):
        x = leaky_relu(x @ w.T + b, net.alpha)
    return x if batched else x[0]


def forward_leaky_cached(net: LeakyReluNet, z):
    x, batched = _promote(z)
    if net.n_layers and x.shape[1] != net.dim:
        raise ConfigError(f"input dim {x.shape[1]} != net dim {net.dim}")
    saved = []
    for w, b in zip(net.weights, net.biases):
        pre = x @ w.T + b
        saved.append((x, pre))
        x = leaky_relu(pre, net.alpha)
    cache = _Cache(id(net), net.version, batched, saved)
    return (x if batched else x[0]), cache


def inverse_leaky(net: LeakyReluNet, x):
    """Invert the mixing map layer by layer (solved linear systems)."""
    y, batched = _promote(x)
    if net.n_layers and y.shape[1] != net.dim:
        raise ConfigError(f"input dim {y.shape[1]} != net dim {net.dim}")
    for w, b in zip(reversed(net.weights), reversed(net.biases)):
        pre = leaky_relu_inverse(y, net.alpha) - b
        try:
            y = np.linalg.solve(w, pre.T).T
        except np.linalg.LinAlgError as exc:
            raise SingularMatrixError(f"mixing layer is singular: {exc}") from exc
    return y if batched else y[0]


def backward_leaky(net: LeakyReluNet, cache, output_gradient):
    _check_cache(net, cache)
    g, _ = _promote(output_gradient)
    grads = []
    for (x, pre), w in zip(reversed(cache.layers), reversed(net.weights)):
        dpre = g * np.where(pre >= 0.0, 1.0, net.alpha)
        dw = dpre.T @ x
        db = dpre.sum(axis=0)
        grads.extend((db, dw))
        g = dpre @ w
    grads.reverse()  # now [dW0, db0, dW1, db1, ...]
    return GradientTape(grads, g if cache.batched else g[0])


# ---------------------------------------------------------------------------
# maxout stack


def forward_maxout(net: MaxoutNet, x):
    """Evaluate the feature extractor; returns (features, cache)."""
    h, batched = _promote(x)
    if h.shape[1] != net.in_dim:
        raise ConfigError(f"input dim {h.shape[1]} != net dim {net.in_dim}")
    saved = []
    for layer in net.hidden:
        pre = np.einsum("koi,bi->bko", layer.w, h) + layer.b[None]
        idx = np.argmax(pre, axis=1)  # (B, out)
        saved.append((h, idx))
        h = np.take_along_axis(pre, idx[:, None, :], axis=1)[:, 0, :]
    saved.append((h, None))
    out = h @ net.w_out.T + net.b_out
    cache = _Cache(id(net), net.version, batched, saved)
    return (out if batched else out[0]), cache


def backward_maxout(net: MaxoutNet, cache, output_gradient):
    _check_cache(net, cache)
    g, _ = _promote(output_gradient)
    x_last, _ = cache.layers[-1]
    dw_out = g.T @ x_last
    db_out = g.sum(axis=0)
    g = g @ net.w_out
    grads = [db_out, dw_out]
    for (x, idx), layer in zip(reversed(cache.layers[:-1]), reversed(net.hidden)):
        k = layer.w.shape[0]
        dpre = np.zeros((g.shape[0], k, g.shape[1]))
        np.put_along_axis(dpre, idx[:, None, :], g[:, None, :], axis=1)
        dw = np.einsum("bko,bi->koi", dpre, x)
        db = dpre.sum(axis=0)
        grads.extend((db, dw))
        g = np.einsum("bko,koi->bi", dpre, layer.w)
    grads.reverse()
    return GradientTape(grads, g if cache.batched else g[0])


def backward(net, cache, output_gradient):
    """Reverse-mode gradients for either network family."""
    if isinstance(net, LeakyReluNet):
        return backward_leaky(net, cache, output_gradient)
    if isinstance(net, MaxoutNet):
        return backward_maxout(net, cache, output_gradient)
    raise TypeError(f"unsupported network type {type(net).__name__}")


# ---------------------------------------------------------------------------
# random constructors


def random_leaky_net(d, n_layers, alpha, rng, scale=None, max_cond=None):
    """Random invertible mixing net; singular draws are rejected.

    With ``max_cond`` set, layers are also resampled until their condition
    number is below it, keeping the inverse problem well posed.
    """
    scale = scale if scale is not None else 1.0 / np.sqrt(d)
    weights, biases = [], []
    for _ in range(n_layers):
        while True:
            w = rng.standard_normal((d, d)) * scale
            if abs(np.linalg.det(w)) <= DET_FLOOR:
                continue
            if max_cond is not None and np.linalg.cond(w) > max_cond:
                continue
            break
        weights.append(w)
        biases.append(np.zeros(d))
    return LeakyReluNet(weights, biases, alpha=alpha)


def random_maxout_net(in_dim, out_dim, n_hidden, width, pieces, rng):
    hidden = []
    fan_in = in_dim
    for _ in range(n_hidden):
        w = rng.standard_normal((pieces, width, fan_in)) / np.sqrt(fan_in)
        hidden.append(MaxoutLayer(w, np.zeros((pieces, width))))
        fan_in = width
    w_out = rng.standard_normal((out_dim, fan_in)) / np.sqrt(fan_in)
    return MaxoutNet(hidden, w_out, np.zeros(out_dim))


# ---------------------------------------------------------------------------
# SGD with momentum and exponential learning-rate decay


@dataclass
class SgdMomentumState:
    """velocity <- m*velocity - lr*(grad + l2*param); param <- param + velocity

    The learning rate follows lr(epoch) = lr0 * decay**(epoch/total_epochs).
    """

    learning_rate: float
    momentum: float = 0.0
    l2: float = 0.0
    decay: float = 0.1
    total_epochs: int = 1
    velocities: list = field(default_factory=list)

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError("learning rate must be > 0")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError("momentum must be in [0, 1)")

    def lr_at(self, epoch):
        return self.learning_rate * self.decay ** (epoch / self.total_epochs)


def sgd_step(params, grads, state: SgdMomentumState, epoch=0):
    """Update ``params`` in place; velocities are lazily initialised."""
    if not state.velocities:
        state.velocities = [np.zeros_like(p) for p in params]
    if len(params) != len(grads) or len(params) != len(state.velocities):
        raise ConfigError("params, grads and velocities must align")
    lr = state.lr_at(epoch)
    for p, g, v in zip(params, grads, state.velocities):
        v *= state.momentum
        v -= lr * (g + state.l2 * p)
        p += v
    return state


def step_network(net, tape: GradientTape, state, epoch=0):
    """Apply one SGD step to a network's parameters and invalidate caches."""
    sgd_step(net.params(), tape.param_grads, state, epoch=epoch)
    net.version += 1
    return state


# ---------------------------------------------------------------------------
# serialization (field names fixed for cross-run reproducibility)


def net_to_dict(net):
    if isinstance(net, LeakyReluNet):
        return {
            "schema_version": SCHEMA_VERSION,
            "family": "leaky_relu",
            "alpha": net.alpha,
            "layers": [
                {"w": w.tolist(), "b": b.tolist()}
                for w, b in zip(net.weights, net.biases)
            ],
        }
    if isinstance(net, MaxoutNet):
        layers = []
        for layer in net.hidden:
            k, out, inner = layer.w.shape
            # pieces are stacked along rows: w is (k*out, in), b is (k*out,)
            layers.append(
                {"w": layer.w.reshape(k * out, inner).tolist(), "b": layer.b.reshape(-1).tolist()}
            )
        layers.append({"w": net.w_out.tolist(), "b": net.b_out.tolist()})
        return {
            "schema_version": SCHEMA_VERSION,
            "family": "maxout",
            "pieces": net.pieces,
            "layers": layers,
        }
    raise TypeError(f"unsupported network type {type(net).__name__}")


def net_from_dict(obj):
    if obj.get("schema_version") != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {obj.get('schema_version')!r}")
    family = obj.get("family")
    if family == "leaky_relu":
        weights = [np.asarray(layer["w"], dtype=float) for layer in obj["layers"]]
        biases = [np.asarray(layer["b"], dtype=float) for layer in obj["layers"]]
        return LeakyReluNet(weights, biases, alpha=float(obj["alpha"]))
    if family == "maxout":
        k = int(obj["pieces"])
        layers = obj["layers"]
        hidden = []
        for layer in layers[:-1]:
            w = np.asarray(layer["w"], dtype=float)
            b = np.asarray(layer["b"], dtype=float)
            if w.shape[0] % k:
                raise ConfigError("maxout layer rows not divisible by pieces")
            out = w.shape[0] // k
            hidden.append(MaxoutLayer(w.reshape(k, out, w.shape[1]), b.reshape(k, out)))
        final = layers[-1]
        return MaxoutNet(
            hidden,
            np.asarray(final["w"], dtype=float),
            np.asarray(final["b"], dtype=float),
        )
    raise ConfigError(f"unknown network family {family!r}")
