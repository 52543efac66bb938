"""MLP backbone with hand-written backward pass, Nesterov SGD and checkpoints."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from isomax.errors import ContractError, DimensionError, ParseError, SpecError
from isomax.heads import IsoMaxHead, SoftMaxHead, head_loss
from isomax.numeric import Rng, as_tensor, check_finite

CHECKPOINT_MAGIC = b"EOD1"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class LayerSpec:
    in_dim: int
    out_dim: int
    activation: Literal["relu", "none"] = "relu"

    def __post_init__(self):
        if self.in_dim < 1 or self.out_dim < 1:
            raise SpecError(f"layer dims must be positive, got {self.in_dim}->{self.out_dim}")
        if self.activation not in ("relu", "none"):
            raise SpecError(f"unknown activation {self.activation!r}")


def mlp_specs(in_dim, hidden, out_dim):
    """Relu hidden layers followed by a linear embedding layer."""
    dims = [in_dim, *hidden, out_dim]
    return [
        LayerSpec(a, b, "relu" if i < len(dims) - 2 else "none")
        for i, (a, b) in enumerate(zip(dims[:-1], dims[1:]))
    ]


@dataclass
class TrainConfig:
    lr0: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 1e-4
    epochs: int = 200
    batch_size: int = 64
    lr_decay_factor: float = 10.0
    lr_milestones: tuple = (100, 150)
    seed: int = 0

    def __post_init__(self):
        if not self.lr0 > 0:
            raise ContractError(f"lr0 must be positive, got {self.lr0}")
        if not 0 <= self.momentum < 1:
            raise ContractError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            raise ContractError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if self.batch_size < 1 or self.epochs < 0:
            raise ContractError("batch_size must be >= 1 and epochs >= 0")
        self.lr_milestones = tuple(int(m) for m in self.lr_milestones)

    def learning_rate(self, epoch):
        passed = sum(1 for m in self.lr_milestones if m <= epoch)
        return self.lr0 / self.lr_decay_factor**passed


@dataclass
class ModelParams:
    """Named parameter arrays of the backbone and, once attached, the head.

    Head arrays are shared by reference with the head object, so in-place
    optimizer updates are seen by both.
    """

    specs: list
    tensors: dict = field(default_factory=dict)
    grads: dict = field(default_factory=dict)
    velocity: dict = field(default_factory=dict)
    version: int = 0

    @property
    def n_layers(self):
        return len(self.specs)

    def weight(self, i):
        return self.tensors[f"layer{i}.weight"]

    def bias(self, i):
        return self.tensors[f"layer{i}.bias"]

    def attach_head(self, head):
        for name in [k for k in self.tensors if k.startswith("head.")]:
            del self.tensors[name]
            self.grads.pop(name, None)
            self.velocity.pop(name, None)
        for name, arr in head.parameters().items():
            self.tensors[name] = arr
            self.grads[name] = np.zeros_like(arr)

    def zero_grad(self):
        for g in self.grads.values():
            g.fill(0.0)

    def copy(self):
        out = ModelParams(list(self.specs), version=self.version)
        out.tensors = {k: v.copy() for k, v in self.tensors.items()}
        out.grads = {k: v.copy() for k, v in self.grads.items()}
        out.velocity = {k: v.copy() for k, v in self.velocity.items()}
        return out


def _check_chain(specs):
    if not specs:
        raise SpecError("at least one layer is required")
    for a, b in zip(specs[:-1], specs[1:]):
        if a.out_dim != b.in_dim:
            raise SpecError(f"layer chain mismatch: {a.out_dim} feeds {b.in_dim}")
    if specs[-1].activation != "none":
        raise SpecError("the embedding layer must not have an activation")


def init_params(specs, rng):
    """Kaiming-normal weights for relu layers, Xavier-normal otherwise; zero biases."""
    specs = list(specs)
    _check_chain(specs)
    params = ModelParams(specs)
    for i, s in enumerate(specs):
        if s.activation == "relu":
            std = np.sqrt(2.0 / s.in_dim)
        else:
            std = np.sqrt(2.0 / (s.in_dim + s.out_dim))
        params.tensors[f"layer{i}.weight"] = rng.normal(0.0, std, (s.out_dim, s.in_dim))
        params.tensors[f"layer{i}.bias"] = np.zeros(s.out_dim)
    for name, arr in params.tensors.items():
        params.grads[name] = np.zeros_like(arr)
    return params


@dataclass
class ForwardCache:
    inputs: list  # input to each layer
    preacts: list  # affine output of each layer
    version: int
    shapes: tuple


def _shapes(params):
    return tuple((params.weight(i).shape, params.bias(i).shape) for i in range(params.n_layers))


def forward(params, batch):
    x = as_tensor(batch, 2, "batch")
    if x.shape[1] != params.specs[0].in_dim:
        raise DimensionError(
            f"batch width {x.shape[1]} does not match input dim {params.specs[0].in_dim}"
        )
    inputs, preacts = [], []
    a = x
    for i, s in enumerate(params.specs):
        inputs.append(a)
        z = a @ params.weight(i).T + params.bias(i)
        preacts.append(z)
        a = np.maximum(z, 0.0) if s.activation == "relu" else z
    check_finite(a, "embeddings")
    return a, ForwardCache(inputs, preacts, params.version, _shapes(params))


def backward(params, cache, grad_embeddings):
    """Accumulate dL/dW and dL/db of every layer into ``params.grads``."""
    if cache.version != params.version or cache.shapes != _shapes(params):
        raise ContractError("forward cache is stale or belongs to different parameters")
    g = as_tensor(grad_embeddings, 2, "grad_embeddings")
    if g.shape != cache.preacts[-1].shape:
        raise DimensionError(f"gradient shape {g.shape} != embedding shape {cache.preacts[-1].shape}")
    for i in range(params.n_layers - 1, -1, -1):
        if params.specs[i].activation == "relu":
            g = g * (cache.preacts[i] > 0)
        params.grads[f"layer{i}.weight"] = g.T @ cache.inputs[i]
        params.grads[f"layer{i}.bias"] = g.sum(axis=0)
        if i > 0:
            g = g @ params.weight(i)


def sgd_step(params, cfg, epoch):
    """Nesterov SGD with L2 weight decay folded into the gradient.

    v <- mu * v + (g + wd * p);  p <- p - lr * ((g + wd * p) + mu * v)
    """
    lr = cfg.learning_rate(epoch)
    mu = cfg.momentum
    for name, p in params.tensors.items():
        g = params.grads[name]
        if cfg.weight_decay:
            g = g + cfg.weight_decay * p
        if mu:
            v = params.velocity.get(name)
            if v is None:
                v = np.zeros_like(p)
                params.velocity[name] = v
            v *= mu
            v += g
            step = g + mu * v
        else:
            step = g
        if lr:
            p -= lr * step
    params.version += 1
    return params


def train(params, head, features, labels, cfg, rng=None, on_epoch=None):
    """Mini-batch training of backbone and head; returns per-epoch mean losses.

    Each epoch visits a fresh seeded permutation of the data; the trailing
    partial batch is kept.
    """
    params.attach_head(head)
    x = as_tensor(features, 2, "features")
    y = np.asarray(labels)
    n = x.shape[0]
    if rng is None:
        rng = Rng(cfg.seed)
    history = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            emb, cache = forward(params, x[idx])
            res = head_loss(head, emb, y[idx])
            backward(params, cache, res.grad_embeddings)
            params.grads.update(res.grad_head)
            sgd_step(params, cfg, epoch)
            total += res.mean_loss * len(idx)
        history.append(total / n)
        if on_epoch is not None:
            on_epoch(epoch, history[-1])
    return history


def embed(params, features, chunk=4096):
    x = as_tensor(features, 2, "features")
    parts = [forward(params, x[i : i + chunk])[0] for i in range(0, max(len(x), 1), chunk)]
    return np.concatenate(parts, axis=0) if parts else np.zeros((0, params.specs[-1].out_dim))


# -- checkpoint container ----------------------------------------------------


def write_tensors(path, records, layer_count):
    """Write named float64 arrays in the EOD1 container format.

    Layout (little-endian): magic "EOD1", u32 version, u32 layer count,
    u32 record count, then per record: u32 name length, UTF-8 name, u32 rank,
    rank x u64 extents, raw f64 data in row-major order.
    """
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<III", CHECKPOINT_VERSION, layer_count, len(records)))
        for name, arr in records.items():
            arr = np.ascontiguousarray(arr, dtype="<f8")
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(arr.tobytes())


def read_tensors(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    pos = 0

    def take(nbytes):
        nonlocal pos
        if pos + nbytes > len(blob):
            raise ParseError("checkpoint is truncated", path)
        chunk = blob[pos : pos + nbytes]
        pos += nbytes
        return chunk

    if take(4) != CHECKPOINT_MAGIC:
        raise ParseError("not an EOD1 checkpoint (bad magic)", path)
    version, layer_count, n_records = struct.unpack("<III", take(12))
    if version != CHECKPOINT_VERSION:
        raise ParseError(f"unsupported checkpoint version {version}", path)
    records = {}
    for _ in range(n_records):
        (name_len,) = struct.unpack("<I", take(4))
        name = take(name_len).decode("utf-8")
        (rank,) = struct.unpack("<I", take(4))
        shape = struct.unpack(f"<{rank}Q", take(8 * rank))
        count = int(np.prod(shape)) if rank else 1
        data = np.frombuffer(take(8 * count), dtype="<f8").astype(np.float64)
        records[name] = data.reshape(shape)
    if pos != len(blob):
        raise ParseError("trailing bytes after last checkpoint record", path)
    return layer_count, records


def save_checkpoint(path, params, head):
    records = {}
    for i in range(params.n_layers):
        records[f"layer{i}.weight"] = params.weight(i)
        records[f"layer{i}.bias"] = params.bias(i)
    records["arch.activations"] = np.array(
        [1.0 if s.activation == "relu" else 0.0 for s in params.specs]
    )
    records.update(head.parameters())
    if isinstance(head, IsoMaxHead):
        records["head.entropic_scale"] = np.array([head.entropic_scale])
    write_tensors(path, records, params.n_layers)


def load_checkpoint(path):
    """Return ``(params, head)`` restored from ``path``."""
    layer_count, rec = read_tensors(path)
    try:
        acts = rec["arch.activations"]
        specs = []
        for i in range(layer_count):
            w = rec[f"layer{i}.weight"]
            specs.append(LayerSpec(w.shape[1], w.shape[0], "relu" if acts[i] else "none"))
        params = ModelParams(specs)
        for i in range(layer_count):
            params.tensors[f"layer{i}.weight"] = rec[f"layer{i}.weight"]
            params.tensors[f"layer{i}.bias"] = rec[f"layer{i}.bias"]
        if "head.prototypes" in rec:
            head = IsoMaxHead(rec["head.prototypes"], float(rec["head.entropic_scale"][0]))
        else:
            head = SoftMaxHead(rec["head.weights"], rec["head.biases"])
    except KeyError as exc:
        raise ParseError(f"checkpoint is missing record {exc.args[0]}", path) from None
    for name, arr in params.tensors.items():
        params.grads[name] = np.zeros_like(arr)
    params.attach_head(head)
    return params, head
