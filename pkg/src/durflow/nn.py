"""Layers, parameter accounting and checkpoint IO.

Layers are thin containers around :mod:`durflow.numerics` Tensors.
Construction takes a ``numpy.random.Generator`` so that the same seed
always yields bit-identical initial parameters. Weight matrices are
drawn uniform in +-sqrt(1/fan_in), embedding tables from N(0, 0.02),
biases start at zero and layer norms at identity.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from durflow import numerics as nm
from durflow.numerics import Tensor, parameter

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class LayerSpec:
    """Shape-level description of a layer, enough to count its parameters."""

    kind: str  # embedding | conv1d | layer_norm | linear | time_embedding
    input_dim: int
    output_dim: int
    kernel_width: int = 0

    def count(self) -> int:
        if self.kind == "embedding":
            return self.input_dim * self.output_dim
        if self.kind == "conv1d":
            return self.output_dim * self.input_dim * self.kernel_width + self.output_dim
        if self.kind == "linear":
            return self.input_dim * self.output_dim + self.output_dim
        if self.kind == "layer_norm":
            return 2 * self.input_dim
        if self.kind == "time_embedding":
            # sinusoidal part is parameter-free; the MLP is dim -> 4*dim -> dim
            d = self.input_dim
            return d * 4 * d + 4 * d + 4 * d * d + d
        raise ValueError(f"unknown layer kind '{self.kind}'")


def param_count(model) -> int:
    """Total number of scalar parameters in a model, layer, dict or spec list."""
    if isinstance(model, LayerSpec):
        return model.count()
    if isinstance(model, dict):
        return sum(int(np.size(p.data if isinstance(p, Tensor) else p)) for p in model.values())
    if hasattr(model, "params"):
        return param_count(model.params())
    return sum(param_count(item) for item in model)


# ---------------------------------------------------------------------------
# layers


class Linear:
    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator):
        lim = np.sqrt(1.0 / in_dim)
        self.weight = parameter(rng.uniform(-lim, lim, size=(in_dim, out_dim)))
        self.bias = parameter(None, shape=(out_dim,))
        self.in_dim, self.out_dim = in_dim, out_dim

    def __call__(self, x: Tensor) -> Tensor:
        return nm.add(nm.matmul(x, self.weight), self.bias)

    def params(self) -> dict:
        return {"weight": self.weight, "bias": self.bias}

    def spec(self) -> LayerSpec:
        return LayerSpec("linear", self.in_dim, self.out_dim)


class Conv1d:
    def __init__(self, in_channels: int, out_channels: int, kernel_width: int,
                 rng: np.random.Generator):
        lim = np.sqrt(1.0 / (in_channels * kernel_width))
        self.weight = parameter(
            rng.uniform(-lim, lim, size=(out_channels, in_channels, kernel_width))
        )
        self.bias = parameter(None, shape=(out_channels,))
        self.in_channels, self.out_channels = in_channels, out_channels
        self.kernel_width = kernel_width

    def __call__(self, x: Tensor) -> Tensor:
        return nm.conv1d(x, self.weight, self.bias)

    def params(self) -> dict:
        return {"weight": self.weight, "bias": self.bias}

    def spec(self) -> LayerSpec:
        return LayerSpec("conv1d", self.in_channels, self.out_channels, self.kernel_width)


class LayerNorm:
    def __init__(self, channels: int):
        self.gain = parameter(np.ones(channels))
        self.bias = parameter(None, shape=(channels,))
        self.channels = channels

    def __call__(self, x: Tensor) -> Tensor:
        return nm.layer_norm(x, self.gain, self.bias)

    def params(self) -> dict:
        return {"gain": self.gain, "bias": self.bias}

    def spec(self) -> LayerSpec:
        return LayerSpec("layer_norm", self.channels, self.channels)


class Embedding:
    def __init__(self, vocab_size: int, dim: int, rng: np.random.Generator):
        self.table = parameter(rng.normal(0.0, 0.02, size=(vocab_size, dim)))
        self.vocab_size, self.dim = vocab_size, dim

    def __call__(self, ids) -> Tensor:
        return embedding_forward(self.table, ids)

    def params(self) -> dict:
        return {"table": self.table}

    def spec(self) -> LayerSpec:
        return LayerSpec("embedding", self.vocab_size, self.dim)


def embedding_forward(table: Tensor, ids) -> Tensor:
    """Look up token embeddings, channels first.

    ids of shape (T,) gives (E, T); ids of shape (B, T) gives (B, E, T).
    The gradient scatters only into the selected table rows.
    """
    ids = np.asarray(ids)
    vocab = table.data.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= vocab):
        bad = ids[(ids < 0) | (ids >= vocab)][0]
        raise ValueError(f"token id {bad} outside vocabulary of size {vocab}")
    rows = nm.take_rows(table, ids)
    if ids.ndim == 1:
        return nm.permute(rows, (1, 0))
    return nm.permute(rows, (0, 2, 1))


def sinusoidal_time_embedding(t, dim: int, scale: float = 1000.0,
                              base: float = 10000.0) -> Tensor:
    """Raw interleaved sin/cos features of a time value in [0, 1].

    Even indices carry sin, odd indices cos, at geometrically spaced
    frequencies base**(-i/half). t is multiplied by ``scale`` first so a
    unit interval spans many periods of the fastest component. Scalar t
    gives shape (dim,), a length-B array gives (B, dim).
    """
    if dim % 2 != 0:
        raise ValueError(f"embedding dim must be even, got {dim}")
    t_arr = np.atleast_1d(np.asarray(t, dtype=np.float64))
    half = dim // 2
    freqs = base ** (-np.arange(half) / half)
    angles = scale * t_arr[:, None] * freqs[None, :]
    out = np.empty((t_arr.size, dim))
    out[:, 0::2] = np.sin(angles)
    out[:, 1::2] = np.cos(angles)
    if np.ndim(t) == 0:
        out = out[0]
    return Tensor(out)


class TimeEmbedding:
    """Sinusoidal features followed by a dim -> 4*dim -> dim MLP with ReLU."""

    def __init__(self, dim: int, rng: np.random.Generator):
        if dim % 2 != 0:
            raise ValueError(f"embedding dim must be even, got {dim}")
        self.dim = dim
        self.lin1 = Linear(dim, 4 * dim, rng)
        self.lin2 = Linear(4 * dim, dim, rng)

    def __call__(self, t) -> Tensor:
        raw = sinusoidal_time_embedding(t, self.dim)
        scalar = raw.data.ndim == 1
        if scalar:
            raw = nm.reshape(raw, (1, self.dim))
        out = self.lin2(nm.relu(self.lin1(raw)))
        if scalar:
            out = nm.reshape(out, (self.dim,))
        return out

    def params(self) -> dict:
        out = {}
        for prefix, layer in (("lin1", self.lin1), ("lin2", self.lin2)):
            for k, v in layer.params().items():
                out[f"{prefix}.{k}"] = v
        return out

    def spec(self) -> LayerSpec:
        return LayerSpec("time_embedding", self.dim, self.dim)


# ---------------------------------------------------------------------------
# checkpoints


def save_params(path, arrays: dict, meta: dict):
    """Write named float64 arrays plus a JSON metadata block to one file.

    The container is a numpy .npz archive; round-trips are bit-exact.
    """
    meta = dict(meta)
    meta["checkpoint_version"] = CHECKPOINT_VERSION
    payload = {}
    for name, arr in arrays.items():
        data = arr.data if isinstance(arr, Tensor) else arr
        payload[name] = np.asarray(data, dtype=np.float64)
    payload["__meta__"] = np.frombuffer(
        json.dumps(meta, sort_keys=True).encode("utf-8"), dtype=np.uint8
    )
    np.savez(path, **payload)


def load_params(path):
    """Read back a checkpoint written by :func:`save_params`.

    Returns (arrays, meta). Unknown versions are rejected.
    """
    with np.load(path) as archive:
        meta = json.loads(bytes(archive["__meta__"]).decode("utf-8"))
        arrays = {k: archive[k] for k in archive.files if k != "__meta__"}
    version = meta.get("checkpoint_version")
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version!r}")
    return arrays, meta
