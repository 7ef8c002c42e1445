"""From-scratch encoder-decoder MLP that inverts beamforming profiles.

Plain numpy throughout: explicit forward/backward passes, leaky-ReLU after
every layer (the last one included), no bias terms, and a hand-rolled Adam
optimizer. Without biases the network is positively homogeneous — scaling the
input scales the output — which is exactly what lets it train on unit-trace
correlation inputs and be rescaled to absolute power afterwards.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import NumericalError
from .simulator import split_indices

_WEIGHTS_MAGIC = b"FTNNWT01"
_WEIGHTS_VERSION = 1


@dataclass(eq=False)
class LayerStack:
    """Bare chain of weight matrices W[k] of shape (out_k, in_k)."""

    layers: list
    leaky_slope: float = 0.01

    def __post_init__(self):
        if not self.layers:
            raise ValueError("need at least one layer")
        if not 0.0 < self.leaky_slope < 1.0:
            raise ValueError(f"leaky slope must lie in (0, 1), got {self.leaky_slope}")
        layers = []
        for k, w in enumerate(self.layers):
            w = np.asarray(w, dtype=np.float64)
            if w.ndim != 2:
                raise ValueError(f"layer {k} is not a matrix")
            if not np.all(np.isfinite(w)):
                raise ValueError(f"layer {k} has non-finite weights")
            if layers and w.shape[1] != layers[-1].shape[0]:
                raise ValueError(f"layer {k} input size {w.shape[1]} does not "
                                 f"match previous output {layers[-1].shape[0]}")
            layers.append(w)
        self.layers = layers

    @property
    def layer_sizes(self):
        return (self.layers[0].shape[1],) + tuple(w.shape[0] for w in self.layers)

    @property
    def n_in(self):
        return self.layers[0].shape[1]

    @property
    def n_out(self):
        return self.layers[-1].shape[0]


class NetworkWeights(LayerStack):
    """Mirror-symmetric 4-layer encoder + 4-layer decoder with a small latent.

    Layer widths run n_z > h1 > h2 > h3 > latent and back up symmetrically;
    the strict taper is validated so the latent layer really is the
    bottleneck.
    """

    def __post_init__(self):
        super().__post_init__()
        sizes = self.layer_sizes
        if len(sizes) != 9:
            raise ValueError(f"expected 8 layers (9 widths), got {len(sizes) - 1}")
        if sizes != sizes[::-1]:
            raise ValueError(f"decoder must mirror the encoder, got widths {sizes}")
        enc = sizes[:5]
        if any(a <= b for a, b in zip(enc, enc[1:])):
            raise ValueError(f"encoder widths must strictly decrease, got {enc}")

    @property
    def latent(self):
        return self.layer_sizes[4]


def default_layer_sizes(n_z=512, latent=5):
    """Stock taper n_z -> 256 -> 64 -> 16 -> latent, mirrored back up.

    Hidden widths are doubled as needed when a large latent outgrows the
    stock taper, and halved when a small grid cannot support it; if no
    strictly decreasing chain remains, pass explicit sizes instead.
    """
    if latent < 1:
        raise ValueError("latent size must be positive")
    widths = [int(n_z), 256, 64, 16, int(latent)]
    for k in range(3, 0, -1):
        widths[k] = max(widths[k], 2 * widths[k + 1])
    for k in range(1, 4):
        widths[k] = min(widths[k], -(-widths[k - 1] // 2))
    if any(a <= b for a, b in zip(widths, widths[1:])):
        raise ValueError(f"no default taper from {n_z} to latent {latent}; "
                         "pass layer_sizes explicitly")
    return tuple(widths) + tuple(widths[-2::-1])


def init_network(layer_sizes=None, seed=0, leaky_slope=0.01):
    """Uniform init scaled for leaky-ReLU signal preservation.

    Entries of W[k] are uniform on +-sqrt(6 / (fan_in * (1 + slope^2))),
    whose variance 2 / (fan_in * (1 + slope^2)) keeps pre-activation second
    moments roughly constant through the leaky-ReLU stack.
    """
    if layer_sizes is None:
        layer_sizes = default_layer_sizes()
    rng = np.random.default_rng(seed)
    layers = []
    for fan_in, fan_out in zip(layer_sizes, layer_sizes[1:]):
        bound = np.sqrt(6.0 / (fan_in * (1.0 + leaky_slope ** 2)))
        layers.append(rng.uniform(-bound, bound, (fan_out, fan_in)))
    return NetworkWeights(layers=layers, leaky_slope=leaky_slope)


@dataclass(eq=False)
class ForwardCache:
    """Per-layer tensors saved by forward() for the backward pass."""

    activations: list  # a_0 = input, ..., a_K = network output; all 2-d
    preacts: list      # u_1 .. u_K
    squeeze: bool      # input arrived 1-d


def _leaky(u, slope):
    return np.where(u > 0, u, slope * u)


def _leaky_prime(u, slope):
    # phi'(0) follows the leaky branch
    return np.where(u > 0, 1.0, slope)


def forward(net, x):
    """Run the stack; returns (output, cache). Accepts one vector or a batch."""
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    a = np.atleast_2d(x)
    if a.shape[1] != net.n_in:
        raise ValueError(f"input width {a.shape[1]} does not match first layer "
                         f"fan-in {net.n_in}")
    activations = [a]
    preacts = []
    for w in net.layers:
        u = activations[-1] @ w.T
        preacts.append(u)
        activations.append(_leaky(u, net.leaky_slope))
    out = activations[-1]
    cache = ForwardCache(activations=activations, preacts=preacts, squeeze=squeeze)
    return (out[0] if squeeze else out), cache


def mse_loss(pred, target):
    """Mean squared error over every entry (batch included in the mean)."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    diff = pred - target
    return float(np.mean(diff * diff))


def backward(net, cache, target):
    """Gradients of mse_loss(forward(net, x), target) w.r.t. every layer."""
    target = np.atleast_2d(np.asarray(target, dtype=np.float64))
    out = cache.activations[-1]
    if target.shape != out.shape:
        raise ValueError(f"target shape {target.shape} does not match output "
                         f"{out.shape}")
    delta = (out - target) * (2.0 / out.size)
    grads = [None] * len(net.layers)
    for k in range(len(net.layers) - 1, -1, -1):
        du = delta * _leaky_prime(cache.preacts[k], net.leaky_slope)
        grads[k] = du.T @ cache.activations[k]
        if k > 0:
            delta = du @ net.layers[k]
    return grads


@dataclass(eq=False)
class AdamState:
    """First/second moment accumulators plus the shared step counter."""

    m: list
    v: list
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def for_network(cls, net, beta1=0.9, beta2=0.999, epsilon=1e-8):
        return cls(m=[np.zeros_like(w) for w in net.layers],
                   v=[np.zeros_like(w) for w in net.layers],
                   beta1=beta1, beta2=beta2, epsilon=epsilon)


def adam_step(net, grads, state, lr):
    """One bias-corrected Adam update, applied to the weights in place."""
    if lr <= 0:
        raise ValueError("learning rate must be positive")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for w, g, m, v in zip(net.layers, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        w -= lr * (m / c1) / (np.sqrt(v / c2) + state.epsilon)
    return net, state


@dataclass(frozen=True)
class TrainingConfig:
    epochs: int = 200
    batch_size: int = 32
    learning_rate: float = 1e-3
    split: float = 0.75
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be positive")
        if self.batch_size < 1:
            raise ValueError("batch size must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")
        if not 0.0 < self.split < 1.0:
            raise ValueError("split fraction must lie in (0, 1)")
        if self.seed < 0:
            raise ValueError("seed must be nonnegative")


@dataclass(eq=False)
class TrainingHistory:
    """Per-epoch mean squared errors on the train and validation splits."""

    train_mse: np.ndarray
    val_mse: np.ndarray

    def save_csv(self, path):
        with open(path, "w") as fh:
            fh.write("epoch,train_mse,val_mse\n")
            for e, (tr, va) in enumerate(zip(self.train_mse, self.val_mse)):
                fh.write(f"{e},{tr:.17g},{va:.17g}\n")

    @property
    def final_val_mse(self):
        return float(self.val_mse[-1])


def train(dataset, config=None, layer_sizes=None, leaky_slope=0.01):
    """Mini-batch Adam training; returns (weights, history).

    The train/validation split and all shuffling derive from config.seed via
    separate named substreams, so reruns are bit-identical and the split does
    not depend on how the dataset was stored. The returned weights are the
    final-epoch weights (no early stopping).
    """
    if config is None:
        config = TrainingConfig()
    if layer_sizes is None:
        layer_sizes = default_layer_sizes(n_z=dataset.n_z)
    train_idx, val_idx = split_indices(dataset.count, config.split, config.seed)
    x, t = dataset.inputs, dataset.targets
    net = init_network(layer_sizes, seed=np.random.SeedSequence(
        entropy=config.seed, spawn_key=(2,)), leaky_slope=leaky_slope)
    state = AdamState.for_network(net)
    shuffle_rng = np.random.default_rng(np.random.SeedSequence(
        entropy=config.seed, spawn_key=(3,)))
    train_mse = np.empty(config.epochs)
    val_mse = np.empty(config.epochs)
    for epoch in range(config.epochs):
        order = shuffle_rng.permutation(train_idx)
        for lo in range(0, order.size, config.batch_size):
            batch = order[lo:lo + config.batch_size]
            _, cache = forward(net, x[batch])
            grads = backward(net, cache, t[batch])
            adam_step(net, grads, state, config.learning_rate)
        train_mse[epoch] = mse_loss(forward(net, x[train_idx])[0], t[train_idx])
        val_mse[epoch] = mse_loss(forward(net, x[val_idx])[0], t[val_idx])
        if not (np.isfinite(train_mse[epoch]) and np.isfinite(val_mse[epoch])):
            raise NumericalError(f"training diverged at epoch {epoch}: "
                                 f"train={train_mse[epoch]}, val={val_mse[epoch]}")
    return net, TrainingHistory(train_mse=train_mse, val_mse=val_mse)


def predict_profile(net, bf_input, trace_scale):
    """Clamped network output rescaled to absolute power units.

    trace_scale is Tr(sample covariance)/N for the input's example — scalar
    for a single profile, one value per row for a batch.
    """
    scale = np.asarray(trace_scale, dtype=np.float64)
    if np.any(scale <= 0):
        raise ValueError("trace scale must be positive")
    out, _ = forward(net, bf_input)
    out = np.maximum(out, 0.0)
    if out.ndim == 2:
        if scale.ndim == 0:
            scale = np.full(out.shape[0], float(scale))
        if scale.shape != (out.shape[0],):
            raise ValueError("need one trace scale per batch row")
        return out * scale[:, None]
    if scale.ndim != 0:
        raise ValueError("scalar input needs a scalar trace scale")
    return out * float(scale)


def save_weights(net, path):
    """Binary container: magic, version/layer-count u32s, per-layer shape +
    row-major float64 payload, trailing leaky slope (all little-endian)."""
    blob = [_WEIGHTS_MAGIC, struct.pack("<2I", _WEIGHTS_VERSION, len(net.layers))]
    for w in net.layers:
        blob.append(struct.pack("<2I", w.shape[0], w.shape[1]))
        blob.append(np.ascontiguousarray(w, dtype="<f8").tobytes())
    blob.append(struct.pack("<d", net.leaky_slope))
    Path(path).write_bytes(b"".join(blob))


def load_weights(path):
    blob = Path(path).read_bytes()
    if blob[:8] != _WEIGHTS_MAGIC:
        raise ValueError(f"{path}: not a weights file (bad magic)")
    version, n_layers = struct.unpack_from("<2I", blob, 8)
    if version != _WEIGHTS_VERSION:
        raise ValueError(f"{path}: unsupported weights version {version}")
    offset = 16
    layers = []
    for _ in range(n_layers):
        rows, cols = struct.unpack_from("<2I", blob, offset)
        offset += 8
        w = np.frombuffer(blob, dtype="<f8", count=rows * cols, offset=offset)
        layers.append(w.reshape(rows, cols).copy())
        offset += rows * cols * 8
    (slope,) = struct.unpack_from("<d", blob, offset)
    return NetworkWeights(layers=layers, leaky_slope=slope)
