"""Small dense feedforward networks: forward pass, backpropagation and SGD.

Parameters are stored as float32 (the carrier dtype); all arithmetic runs in
float64. Weight matrices are ``(out, in)`` so a layer computes ``z = W a + b``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .tensorstore import Arch, ModelRecord, flatten, from_tensors

log = logging.getLogger(__name__)

LOSSES = ("mse", "cross_entropy")


class NumericError(ArithmeticError):
    pass


class DivergenceError(NumericError):
    pass


def _activate(name: str, z: np.ndarray) -> np.ndarray:
    if name == "identity":
        return z
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    if name == "sigmoid":
        return 0.5 * (1.0 + np.tanh(0.5 * z))
    if name == "softmax":
        e = np.exp(z - z.max(axis=-1, keepdims=True))
        return e / e.sum(axis=-1, keepdims=True)
    raise ValueError(name)


def _backact(name: str, z: np.ndarray, a: np.ndarray, grad_a: np.ndarray) -> np.ndarray:
    """Chain ``dJ/da`` through the activation to ``dJ/dz``."""
    if name == "identity":
        return grad_a
    if name == "relu":
        return grad_a * (z > 0)
    if name == "tanh":
        return grad_a * (1.0 - a * a)
    if name == "sigmoid":
        return grad_a * a * (1.0 - a)
    if name == "softmax":
        return a * (grad_a - (grad_a * a).sum(axis=-1, keepdims=True))
    raise ValueError(name)


@dataclass(frozen=True)
class Network:
    """A dense network viewed through its float32 parameter record."""

    record: ModelRecord

    @property
    def arch(self) -> Arch:
        return self.record.arch

    @property
    def n_params(self) -> int:
        return self.record.n_params

    def params64(self) -> list[tuple[np.ndarray, np.ndarray]]:
        t = [a.astype(np.float64) for _, a in self.record.layers]
        return list(zip(t[0::2], t[1::2]))

    @classmethod
    def from_params(cls, arch: Arch, params, meta=None) -> "Network":
        tensors = []
        for W, b in params:
            tensors += [np.asarray(W, dtype=np.float32), np.asarray(b, dtype=np.float32)]
        return cls(from_tensors(arch, tensors, meta))

    @classmethod
    def init(cls, arch: Arch, seed: int, meta=None) -> "Network":
        """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases."""
        rng = np.random.default_rng(seed)
        params = []
        for n_in, n_out in zip(arch.sizes[:-1], arch.sizes[1:]):
            bound = 1.0 / np.sqrt(n_in)
            params.append((rng.uniform(-bound, bound, (n_out, n_in)), rng.uniform(-bound, bound, n_out)))
        return cls.from_params(arch, params, meta)


def _check_input(arch: Arch, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != arch.sizes[0]:
        raise ValueError(f"input width {x.shape[-1]} does not match layer 0 width {arch.sizes[0]}")
    return x


def _forward(arch: Arch, params, x: np.ndarray):
    zs, acts = [], [x]
    a = x
    for (W, b), act in zip(params, arch.activations):
        z = a @ W.T + b
        a = _activate(act, z)
        zs.append(z)
        acts.append(a)
    return zs, acts


def forward(net: Network, x) -> np.ndarray:
    """Output for one input vector or a batch of row vectors."""
    x = _check_input(net.arch, x)
    return _forward(net.arch, net.params64(), x)[1][-1]


def loss_value(output: np.ndarray, target: np.ndarray, loss: str) -> float:
    """Batch-mean loss. mse averages over output units; cross_entropy sums over classes."""
    output = np.atleast_2d(output)
    target = np.atleast_2d(np.asarray(target, dtype=np.float64))
    if loss == "mse":
        with np.errstate(over="ignore", invalid="ignore"):
            return float(np.mean((output - target) ** 2))
    if loss == "cross_entropy":
        return float(-np.mean(np.sum(target * np.log(np.clip(output, 1e-300, None)), axis=1)))
    raise ValueError(f"unknown loss {loss!r}; expected one of {LOSSES}")


def _loss_grad(output: np.ndarray, target: np.ndarray, loss: str) -> np.ndarray:
    n = output.shape[0]
    if loss == "mse":
        return 2.0 * (output - target) / (n * output.shape[1])
    if loss == "cross_entropy":
        return -target / (n * np.clip(output, 1e-300, None))
    raise ValueError(f"unknown loss {loss!r}; expected one of {LOSSES}")


def _backprop(arch: Arch, params, x: np.ndarray, target: np.ndarray, loss: str):
    with np.errstate(over="ignore", invalid="ignore"):
        return _backprop_unchecked(arch, params, x, target, loss)


def _backprop_unchecked(arch, params, x, target, loss):
    zs, acts = _forward(arch, params, x)
    out = acts[-1]
    last = arch.activations[-1]
    if loss == "cross_entropy" and last == "softmax":
        # combined softmax + cross-entropy derivative, avoids dividing by tiny probabilities
        delta = (out - target) / out.shape[0]
    else:
        delta = _backact(last, zs[-1], out, _loss_grad(out, target, loss))
    grads = [None] * len(params)
    for layer in range(len(params) - 1, -1, -1):
        if not np.all(np.isfinite(delta)):
            raise NumericError(f"non-finite gradient at layer {layer}")
        grads[layer] = (delta.T @ acts[layer], delta.sum(axis=0))
        if layer:
            grad_a = delta @ params[layer][0]
            delta = _backact(arch.activations[layer - 1], zs[layer - 1], acts[layer], grad_a)
    return grads, out


def flatten_grads(grads) -> np.ndarray:
    return np.concatenate([np.concatenate([gW.ravel(), gb.ravel()]) for gW, gb in grads])


def backprop(net: Network, x, target, loss: str = "mse") -> np.ndarray:
    """Gradient of the loss w.r.t. every parameter, in weight-vector order.

    ``x`` and ``target`` may be single vectors or batches; the loss is the
    batch mean, so a batch gradient is the mean of per-sample gradients.
    """
    x = np.atleast_2d(_check_input(net.arch, x))
    target = np.atleast_2d(np.asarray(target, dtype=np.float64))
    if target.shape != (x.shape[0], net.arch.sizes[-1]):
        raise ValueError(f"target shape {target.shape} does not match output width {net.arch.sizes[-1]}")
    grads, _ = _backprop(net.arch, net.params64(), x, target, loss)
    return flatten_grads(grads)


def numeric_gradient(net: Network, x, target, loss: str = "mse", h: float = 1e-3) -> np.ndarray:
    """Central finite differences on float64 copies of the parameters."""
    x = np.atleast_2d(_check_input(net.arch, x))
    target = np.atleast_2d(np.asarray(target, dtype=np.float64))
    params = net.params64()
    out = np.empty(net.n_params)
    pos = 0
    for li, (W, b) in enumerate(params):
        for tensor in (W, b):
            flat = tensor.reshape(-1)
            for k in range(flat.size):
                old = flat[k]
                flat[k] = old + h
                up = loss_value(_forward(net.arch, params, x)[1][-1], target, loss)
                flat[k] = old - h
                down = loss_value(_forward(net.arch, params, x)[1][-1], target, loss)
                flat[k] = old
                out[pos] = (up - down) / (2 * h)
                pos += 1
    return out


def accuracy(net: Network, x, labels) -> float:
    pred = np.argmax(forward(net, x), axis=1)
    return float(np.mean(pred == np.asarray(labels)))


def one_hot(labels, n_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((labels.size, n_classes))
    out[np.arange(labels.size), labels] = 1.0
    return out


@dataclass
class TrainResult:
    network: Network
    final_loss: float
    epochs: int
    history: list[float]


def train_sgd(
    net: Network,
    x,
    y,
    epochs: int,
    lr: float,
    batch: int = 16,
    seed: int = 0,
    loss: str = "cross_entropy",
    momentum: float = 0.0,
    stop=None,
    optimizer: str = "sgd",
    weight_decay: float = 0.0,
) -> TrainResult:
    """Minibatch SGD (or Adam) on a private float64 copy; returns a new float32 network.

    ``stop(network, epoch)`` is called after each epoch and may end training early.
    Shuffling is driven by ``seed`` only, so equal inputs give equal results.
    """
    x = np.atleast_2d(_check_input(net.arch, x))
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    if y.shape != (x.shape[0], net.arch.sizes[-1]):
        raise ValueError(f"targets have shape {y.shape}, expected {(x.shape[0], net.arch.sizes[-1])}")
    if lr == 0:
        return TrainResult(net, loss_value(forward(net, x), y, loss), 0, [])
    rng = np.random.default_rng(seed)
    params = net.params64()
    if optimizer not in ("sgd", "adam"):
        raise ValueError(f"unknown optimizer {optimizer!r}")
    velocity = [[np.zeros_like(p) for p in layer] for layer in params]
    second = [[np.zeros_like(p) for p in layer] for layer in params]
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    step = 0
    history: list[float] = []
    n = x.shape[0]
    epoch = 0
    current = net
    for epoch in range(1, epochs + 1):
        order = rng.permutation(n)
        for start in range(0, n, batch):
            idx = order[start:start + batch]
            grads, _ = _backprop(net.arch, params, x[idx], y[idx], loss)
            step += 1
            for layer, v_layer, s_layer, g_layer in zip(params, velocity, second, grads):
                for p, v, sq, g in zip(layer, v_layer, s_layer, g_layer):
                    if weight_decay:
                        g = g + weight_decay * p
                    if optimizer == "sgd":
                        v *= momentum
                        v -= lr * g
                        p += v
                    else:
                        v *= beta1
                        v += (1 - beta1) * g
                        sq *= beta2
                        sq += (1 - beta2) * g * g
                        v_hat = v / (1 - beta1 ** step)
                        s_hat = sq / (1 - beta2 ** step)
                        p -= lr * v_hat / (np.sqrt(s_hat) + eps)
        epoch_loss = loss_value(_forward(net.arch, params, x)[1][-1], y, loss)
        if not np.isfinite(epoch_loss):
            raise DivergenceError(f"loss diverged at epoch {epoch}")
        history.append(epoch_loss)
        if stop is not None:
            current = Network.from_params(net.arch, params, net.record.meta)
            if stop(current, epoch):
                break
    current = Network.from_params(net.arch, params, net.record.meta)
    return TrainResult(current, history[-1], epoch, history)


def weight_vector(net: Network) -> np.ndarray:
    return flatten(net.record)
