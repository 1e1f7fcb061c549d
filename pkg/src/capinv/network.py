"""Dense feed-forward networks with hand-written backpropagation.

All math is double precision numpy; matrix multiplication is the only
array primitive in the hot path. Gradients are assembled layer by layer
from cached activations so finite-difference checks can verify them
coordinate by coordinate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "TrainingError",
    "Mlp",
    "forward",
    "backward",
    "Momentum",
    "Adam",
    "DEFAULT_LEARNING_RATES",
    "make_optimizer",
    "TrainSchedule",
    "minibatch_stream",
    "half_sse_loss",
    "train",
    "save_mlp",
    "load_mlp",
    "write_mlp_block",
    "read_mlp_block",
]


class TrainingError(RuntimeError):
    """Raised when training or an optimizer step meets non-finite numbers."""


_ACTIVATIONS = ("tanh", "linear")


def _activate(name: str, z: np.ndarray) -> np.ndarray:
    if name == "tanh":
        return np.tanh(z)
    return z


def _derivative_from_output(name: str, a: np.ndarray) -> np.ndarray:
    # Both supported activations allow the derivative to be recovered from
    # the activation output itself, which is what the forward cache holds.
    if name == "tanh":
        return 1.0 - a * a
    return np.ones_like(a)


@dataclass
class Mlp:
    """Fully connected network: weights[l] has shape (fan_in, fan_out).

    activations names one function per layer; hidden layers are expected
    to be tanh, output heads are whatever the caller declares (tanh or
    linear).
    """

    weights: list
    biases: list
    activations: tuple

    def __post_init__(self) -> None:
        self.weights = [np.asarray(w, dtype=np.float64) for w in self.weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in self.biases]
        self.activations = tuple(self.activations)
        if not self.weights:
            raise ValueError("network needs at least one layer")
        if len(self.biases) != len(self.weights) or len(self.activations) != len(self.weights):
            raise ValueError("weights, biases and activations must have one entry per layer")
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2:
                raise ValueError(f"layer {l}: weight must be 2-D, got shape {w.shape}")
            if b.shape != (w.shape[1],):
                raise ValueError(f"layer {l}: bias shape {b.shape} does not match fan-out {w.shape[1]}")
            if l > 0 and w.shape[0] != self.weights[l - 1].shape[1]:
                raise ValueError(f"layer {l}: fan-in {w.shape[0]} does not chain with previous fan-out")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValueError(f"layer {l}: non-finite parameters")
        for name in self.activations:
            if name not in _ACTIVATIONS:
                raise ValueError(f"unknown activation {name!r}")

    @property
    def layer_sizes(self) -> tuple:
        return (self.weights[0].shape[0],) + tuple(w.shape[1] for w in self.weights)

    @property
    def parameter_count(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    @classmethod
    def init(cls, layer_sizes, activations, rng) -> "Mlp":
        """Glorot-uniform weights, limit sqrt(6/(fan_in+fan_out)); zero biases."""
        sizes = tuple(int(s) for s in layer_sizes)
        if len(sizes) < 2 or any(s < 1 for s in sizes):
            raise ValueError(f"bad layer sizes {sizes}")
        weights = []
        biases = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        return cls(weights=weights, biases=biases, activations=tuple(activations))


def forward(net: Mlp, batch: np.ndarray) -> list:
    """Run a (rows, fan_in) batch through the net.

    Returns the activation cache [input, layer1, ..., output]; the caller
    keeps it for the matching backward pass.
    """
    a = np.asarray(batch, dtype=np.float64)
    if a.ndim != 2 or a.shape[1] != net.weights[0].shape[0]:
        raise ValueError(f"batch shape {a.shape} does not match input width {net.weights[0].shape[0]}")
    cache = [a]
    for w, b, name in zip(net.weights, net.biases, net.activations):
        a = _activate(name, a @ w + b)
        cache.append(a)
    return cache


def backward(net: Mlp, activations: list, output_gradient: np.ndarray):
    """Backpropagate d(loss)/d(output) through a cached forward pass.

    Returns (weight_grads, bias_grads, input_grad). Gradients sum over the
    batch rows; any mean reduction must already be folded into
    output_gradient. The cache is checked against the net shape so a stale
    cache from another net or batch is rejected.
    """
    sizes = net.layer_sizes
    if len(activations) != len(net.weights) + 1:
        raise ValueError(f"activation cache has {len(activations)} entries, expected {len(net.weights) + 1}")
    rows = activations[0].shape[0]
    for l, a in enumerate(activations):
        if a.shape != (rows, sizes[l]):
            raise ValueError(f"activation {l} has shape {a.shape}, expected {(rows, sizes[l])}")
    grad = np.asarray(output_gradient, dtype=np.float64)
    if grad.shape != activations[-1].shape:
        raise ValueError(f"output gradient shape {grad.shape} does not match output {activations[-1].shape}")

    weight_grads = [None] * len(net.weights)
    bias_grads = [None] * len(net.weights)
    for l in range(len(net.weights) - 1, -1, -1):
        delta = grad * _derivative_from_output(net.activations[l], activations[l + 1])
        weight_grads[l] = activations[l].T @ delta
        bias_grads[l] = delta.sum(axis=0)
        grad = delta @ net.weights[l].T
    return weight_grads, bias_grads, grad


def _check_grads(params, grads) -> None:
    if len(params) != len(grads):
        raise ValueError(f"{len(grads)} gradients for {len(params)} parameters")
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter shape {p.shape}")
        if not np.all(np.isfinite(g)):
            raise TrainingError("non-finite gradient")


class Momentum:
    """Classical momentum: v <- gamma*v - lr*g; p <- p + v."""

    def __init__(self, learning_rate: float, gamma: float = 0.9):
        if learning_rate < 0.0:
            raise ValueError(f"learning rate must be nonnegative, got {learning_rate}")
        if not (0.0 <= gamma < 1.0):
            raise ValueError(f"momentum factor must lie in [0, 1), got {gamma}")
        self.learning_rate = learning_rate
        self.gamma = gamma
        self._velocity = None

    def step(self, params, grads) -> None:
        _check_grads(params, grads)
        if self._velocity is None:
            self._velocity = [np.zeros_like(p) for p in params]
        for p, g, v in zip(params, grads, self._velocity):
            v *= self.gamma
            v -= self.learning_rate * g
            p += v


class Adam:
    """Adam with bias correction (beta1=0.9, beta2=0.999, eps=1e-8)."""

    def __init__(self, learning_rate: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if learning_rate < 0.0:
            raise ValueError(f"learning rate must be nonnegative, got {learning_rate}")
        if not (0.0 <= beta1 < 1.0 and 0.0 <= beta2 < 1.0):
            raise ValueError(f"betas must lie in [0, 1), got {beta1}, {beta2}")
        if eps <= 0.0:
            raise ValueError(f"eps must be positive, got {eps}")
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self._m = None
        self._v = None
        self._t = 0

    def step(self, params, grads) -> None:
        _check_grads(params, grads)
        if self._m is None:
            self._m = [np.zeros_like(p) for p in params]
            self._v = [np.zeros_like(p) for p in params]
        self._t += 1
        c1 = 1.0 - self.beta1 ** self._t
        c2 = 1.0 - self.beta2 ** self._t
        for p, g, m, v in zip(params, grads, self._m, self._v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= self.learning_rate * (m / c1) / (np.sqrt(v / c2) + self.eps)


# Learning rates paired with each optimizer when the caller does not pick one.
DEFAULT_LEARNING_RATES = {"momentum": 1e-5, "adam": 1e-3}


def make_optimizer(name: str, learning_rate: float | None = None):
    if name not in DEFAULT_LEARNING_RATES:
        raise ValueError(f"unknown optimizer {name!r}, expected one of {sorted(DEFAULT_LEARNING_RATES)}")
    lr = DEFAULT_LEARNING_RATES[name] if learning_rate is None else float(learning_rate)
    return Momentum(lr) if name == "momentum" else Adam(lr)


@dataclass(frozen=True)
class TrainSchedule:
    max_iterations: int
    minibatch_size: int
    seed: int = 0

    def __post_init__(self) -> None:
        if self.max_iterations < 0:
            raise ValueError(f"max_iterations must be nonnegative, got {self.max_iterations}")
        if self.minibatch_size < 1:
            raise ValueError(f"minibatch_size must be positive, got {self.minibatch_size}")


def minibatch_stream(n: int, batch_size: int, rng):
    """Yield index minibatches forever: seeded shuffle, reshuffle per epoch.

    Batches are always full; a trailing remainder shorter than batch_size
    triggers the next epoch's reshuffle instead of a short batch.
    """
    if not 1 <= batch_size <= n:
        raise ValueError(f"batch size {batch_size} not in [1, {n}]")
    perm = rng.permutation(n)
    pos = 0
    while True:
        if pos + batch_size > n:
            perm = rng.permutation(n)
            pos = 0
        yield perm[pos : pos + batch_size]
        pos += batch_size


def half_sse_loss(prediction: np.ndarray, target: np.ndarray):
    """Half summed-square error per sample, averaged over the minibatch."""
    diff = prediction - target
    rows = diff.shape[0]
    return 0.5 * float(np.sum(diff * diff)) / rows, diff / rows


def train(net: Mlp, inputs, targets, loss_fn, optimizer, schedule: TrainSchedule, rng=None):
    """Run exactly schedule.max_iterations minibatch steps.

    loss_fn(prediction, target) must return (scalar loss, d loss/d
    prediction). Shuffling draws from rng, or from a fresh generator
    seeded with schedule.seed when rng is None. The net is updated in
    place; returns (net, per-iteration loss array). A non-finite loss
    aborts with TrainingError naming the iteration.
    """
    inputs = np.asarray(inputs, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if inputs.ndim != 2 or len(inputs) == 0:
        raise ValueError("inputs must be a nonempty 2-D array")
    if len(targets) != len(inputs):
        raise ValueError(f"{len(targets)} targets for {len(inputs)} inputs")
    if rng is None:
        rng = np.random.default_rng(schedule.seed)
    params = [*net.weights, *net.biases]
    losses = np.empty(schedule.max_iterations)
    stream = minibatch_stream(len(inputs), schedule.minibatch_size, rng)
    for it in range(schedule.max_iterations):
        idx = next(stream)
        cache = forward(net, inputs[idx])
        loss, out_grad = loss_fn(cache[-1], targets[idx])
        if not np.isfinite(loss):
            raise TrainingError(f"non-finite loss at iteration {it}")
        w_grads, b_grads, _ = backward(net, cache, out_grad)
        optimizer.step(params, [*w_grads, *b_grads])
        losses[it] = loss
    return net, losses


def write_mlp_block(fh, net: Mlp) -> None:
    """Append one network to a text stream: header, then per layer the
    weight rows and the bias row, all floats repr'd for bit-exact reload."""
    sizes = ":".join(str(s) for s in net.layer_sizes)
    acts = ":".join(net.activations)
    fh.write(f"mlp layers={sizes} activations={acts}\n")
    for w, b in zip(net.weights, net.biases):
        fh.write(f"weights {w.shape[0]} {w.shape[1]}\n")
        for row in w:
            fh.write(",".join(repr(float(x)) for x in row) + "\n")
        fh.write(f"biases {b.shape[0]}\n")
        fh.write(",".join(repr(float(x)) for x in b) + "\n")


def read_mlp_block(lines) -> Mlp:
    """Inverse of write_mlp_block; lines is an iterator of text lines."""

    def next_line() -> str:
        try:
            return next(lines).rstrip("\n")
        except StopIteration:
            raise ValueError("truncated network block") from None

    head = next_line()
    if not head.startswith("mlp "):
        raise ValueError(f"expected network header, got {head!r}")
    fields = dict(tok.split("=", 1) for tok in head.split()[1:])
    sizes = [int(s) for s in fields["layers"].split(":")]
    activations = tuple(fields["activations"].split(":"))
    weights = []
    biases = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        tag = next_line()
        if tag != f"weights {fan_in} {fan_out}":
            raise ValueError(f"expected 'weights {fan_in} {fan_out}', got {tag!r}")
        w = np.empty((fan_in, fan_out))
        for i in range(fan_in):
            row = next_line().split(",")
            if len(row) != fan_out:
                raise ValueError(f"weight row {i} has {len(row)} entries, expected {fan_out}")
            w[i] = [float(x) for x in row]
        tag = next_line()
        if tag != f"biases {fan_out}":
            raise ValueError(f"expected 'biases {fan_out}', got {tag!r}")
        row = next_line().split(",")
        if len(row) != fan_out:
            raise ValueError(f"bias row has {len(row)} entries, expected {fan_out}")
        weights.append(w)
        biases.append(np.asarray([float(x) for x in row]))
    return Mlp(weights=weights, biases=biases, activations=activations)


def save_mlp(net: Mlp, path) -> None:
    with open(path, "w", encoding="ascii") as fh:
        write_mlp_block(fh, net)


def load_mlp(path) -> Mlp:
    with open(path, "r", encoding="ascii") as fh:
        return read_mlp_block(iter(fh))
