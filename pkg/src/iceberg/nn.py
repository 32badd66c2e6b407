"""Fully-connected MLP head with hand-written backward pass and Adam.

Dropout is applied to the input of every linear layer in train mode, with
inverted scaling so that eval mode equals the expectation.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

_MAGIC = b"ICEBMLP\0"
_VERSION = 1


class EmptyBatchError(ValueError):
    pass


@dataclass
class MlpModel:
    layer_dims: tuple
    weights: list
    biases: list
    dropout: float = 0.5

    def __post_init__(self):
        self.layer_dims = tuple(int(d) for d in self.layer_dims)
        if len(self.weights) != len(self.layer_dims) - 1 or len(self.biases) != len(self.weights):
            raise ValueError("layer_dims do not match the number of parameter arrays")
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (self.layer_dims[k], self.layer_dims[k + 1]) or b.shape != (self.layer_dims[k + 1],):
                raise ValueError(f"layer {k}: parameter shapes do not chain with layer_dims")

    @classmethod
    def init(cls, layer_dims, dropout=0.5, seed=0):
        """Glorot-uniform weights, zero biases."""
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        weights, biases = [], []
        for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        return cls(tuple(layer_dims), weights, biases, dropout)

    def parameters(self):
        for w, b in zip(self.weights, self.biases):
            yield w
            yield b

    def copy(self):
        return MlpModel(self.layer_dims, [w.copy() for w in self.weights],
                        [b.copy() for b in self.biases], self.dropout)

    def load_state(self, other: "MlpModel"):
        for dst, src in zip(self.parameters(), other.parameters()):
            dst[...] = src


@dataclass
class Tape:
    inputs: list = field(default_factory=list)      # post-dropout input of each layer
    masks: list = field(default_factory=list)       # scaled dropout masks (or None)
    pre_acts: list = field(default_factory=list)    # hidden pre-activations


def forward(model: MlpModel, inputs, train_mode=False, rng=None, rows=None):
    """Return ``(logits, tape)``; softmax is left to the loss functions.

    With ``rows`` only those input rows are computed, but dropout masks are
    still drawn for every row so the random stream does not depend on them.
    """
    h = np.asarray(inputs, dtype=np.float64)
    total_rows = h.shape[0]
    if rows is not None:
        h = h[rows]
    if h.ndim != 2 or h.shape[1] != model.layer_dims[0]:
        raise ValueError(f"input width {h.shape[-1]} does not match layer_dims[0]={model.layer_dims[0]}")
    if not np.all(np.isfinite(h)):
        raise ValueError("non-finite input")
    use_dropout = train_mode and model.dropout > 0
    if use_dropout and rng is None:
        raise ValueError("train-mode dropout needs a random generator")
    keep = 1.0 - model.dropout
    tape = Tape()
    last = len(model.weights) - 1
    for k, (w, b) in enumerate(zip(model.weights, model.biases)):
        mask = None
        if use_dropout:
            mask = (rng.random((total_rows, h.shape[1])) < keep) / keep
            if rows is not None:
                mask = mask[rows]
            h = h * mask
        tape.masks.append(mask)
        tape.inputs.append(h)
        z = h @ w + b
        if k < last:
            tape.pre_acts.append(z)
            h = np.maximum(z, 0.0)
        else:
            h = z
    return h, tape


def backward(model: MlpModel, tape: Tape, grad_logits):
    """Gradients ``[(dW, db), ...]`` of a scalar loss with respect to every layer."""
    g = np.asarray(grad_logits, dtype=np.float64)
    if g.shape != (tape.inputs[0].shape[0], model.layer_dims[-1]):
        raise ValueError(f"grad_logits shape {g.shape} does not match the recorded forward pass")
    grads = [None] * len(model.weights)
    for k in range(len(model.weights) - 1, -1, -1):
        grads[k] = (tape.inputs[k].T @ g, g.sum(axis=0))
        if k > 0:
            g = g @ model.weights[k].T
            if tape.masks[k] is not None:
                g = g * tape.masks[k]
            g = g * (tape.pre_acts[k - 1] > 0)
    return grads


@dataclass
class OptimizerState:
    lr: float = 0.01
    weight_decay: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    decoupled: bool = True
    step: int = 0
    first: list = field(default_factory=list)
    second: list = field(default_factory=list)

    @classmethod
    def for_model(cls, model: MlpModel, lr=0.01, weight_decay=5e-4, **kw):
        params = list(model.parameters())
        return cls(lr=lr, weight_decay=weight_decay,
                   first=[np.zeros_like(p) for p in params],
                   second=[np.zeros_like(p) for p in params], **kw)


def adam_step(model: MlpModel, grads, state: OptimizerState):
    """In-place Adam update with bias correction and decoupled weight decay."""
    flat = [g for pair in grads for g in pair]
    params = list(model.parameters())
    if len(flat) != len(params):
        raise ValueError("gradient list does not match model parameters")
    state.step += 1
    c1 = 1.0 - state.beta1 ** state.step
    c2 = 1.0 - state.beta2 ** state.step
    for p, g, m, v in zip(params, flat, state.first, state.second):
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter shape {p.shape}")
        if state.weight_decay:
            if state.decoupled:
                p *= 1.0 - state.lr * state.weight_decay
            else:
                g = g + state.weight_decay * p
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def log_softmax(logits):
    z = np.asarray(logits, dtype=np.float64)
    shifted = z - z.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def softmax(logits):
    z = np.asarray(logits, dtype=np.float64)
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits, targets, sample_weights=None):
    """Weighted mean of ``-log softmax(logits)[target]`` and its gradient."""
    z = np.asarray(logits, dtype=np.float64)
    t = np.asarray(targets, dtype=np.int64)
    b = z.shape[0]
    w = np.ones(b) if sample_weights is None else np.asarray(sample_weights, dtype=np.float64)
    if np.any(w < 0):
        raise ValueError("sample weights must be non-negative")
    total = w.sum()
    if b == 0 or total <= 0:
        raise EmptyBatchError("empty effective batch")
    logp = log_softmax(z)
    rows = np.arange(b)
    loss = float(-(w * logp[rows, t]).sum() / total)
    grad = np.exp(logp)
    grad[rows, t] -= 1.0
    grad *= (w / total)[:, None]
    return loss, grad


def save_checkpoint(model: MlpModel, path) -> Path:
    path = Path(path)
    dims = model.layer_dims
    with open(path, "wb") as fh:
        fh.write(struct.pack("<8sIQ", _MAGIC, _VERSION, len(dims)))
        fh.write(struct.pack(f"<{len(dims)}Q", *dims))
        fh.write(struct.pack("<d", model.dropout))
        for p in model.parameters():
            fh.write(np.ascontiguousarray(p, dtype="<f8").tobytes())
    return path


def load_checkpoint(path) -> MlpModel:
    raw = Path(path).read_bytes()
    magic, version, ndims = struct.unpack_from("<8sIQ", raw)
    if magic != _MAGIC or version != _VERSION:
        raise ValueError(f"{path}: not a model checkpoint (or unsupported version)")
    offset = struct.calcsize("<8sIQ")
    dims = struct.unpack_from(f"<{ndims}Q", raw, offset)
    offset += 8 * ndims
    (dropout,) = struct.unpack_from("<d", raw, offset)
    offset += 8
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        w = np.frombuffer(raw, "<f8", fan_in * fan_out, offset).reshape(fan_in, fan_out).copy()
        offset += 8 * fan_in * fan_out
        b = np.frombuffer(raw, "<f8", fan_out, offset).copy()
        offset += 8 * fan_out
        weights.append(w)
        biases.append(b)
    if offset != len(raw):
        raise ValueError(f"{path}: trailing bytes in checkpoint")
    return MlpModel(tuple(dims), weights, biases, dropout)
