"""Minimal dense network stack with exact reverse-mode gradients.

Parameters live in a flat ``{name: ndarray}`` registry so that the
optimizer, checkpointing, and finite-difference checks can treat every
architecture uniformly.  Forward/backward are pure functions of
``(params, input)``; nothing here caches state between calls.

Architectures:

* ``mlp256`` — two hidden layers of 256 units, ReLU then LayerNorm after
  each hidden layer (post-activation LayerNorm).
* ``resnet_large`` — a linear stem, two residual blocks of four
  1024-unit layers (Dense -> LayerNorm -> Swish, pre-activation
  LayerNorm), identity skip per block, then a linear head.

Hidden layers use scaled-uniform fan-in init; final critic layers are
zero-initialized so a fresh critic scores every action identically.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

LN_EPS = 1e-6


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


# --- layers ------------------------------------------------------------------


class Dense:
    def __init__(self, in_dim: int, out_dim: int, zero_init: bool = False):
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.zero_init = zero_init

    def init(self, rng: np.random.Generator, dtype) -> dict[str, np.ndarray]:
        if self.zero_init:
            w = np.zeros((self.in_dim, self.out_dim), dtype=dtype)
        else:
            bound = np.sqrt(3.0 / self.in_dim)
            w = rng.uniform(-bound, bound, size=(self.in_dim, self.out_dim)).astype(dtype)
        return {"W": w, "b": np.zeros(self.out_dim, dtype=dtype)}

    def forward(self, p, x):
        return x @ p["W"] + p["b"], x

    def backward(self, p, cache, dy):
        x = cache
        grads = {"W": x.T @ dy, "b": dy.sum(axis=0)}
        return dy @ p["W"].T, grads


class LayerNorm:
    def __init__(self, dim: int):
        self.dim = dim

    def init(self, rng, dtype) -> dict[str, np.ndarray]:
        return {"gain": np.ones(self.dim, dtype=dtype),
                "offset": np.zeros(self.dim, dtype=dtype)}

    def forward(self, p, x):
        mu = x.mean(axis=-1, keepdims=True)
        var = x.var(axis=-1, keepdims=True)
        inv = 1.0 / np.sqrt(var + LN_EPS)
        xhat = (x - mu) * inv
        return xhat * p["gain"] + p["offset"], (xhat, inv)

    def backward(self, p, cache, dy):
        xhat, inv = cache
        dxhat = dy * p["gain"]
        m1 = dxhat.mean(axis=-1, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
        dx = (dxhat - m1 - xhat * m2) * inv
        grads = {"gain": (dy * xhat).sum(axis=0), "offset": dy.sum(axis=0)}
        return dx, grads


class Relu:
    def init(self, rng, dtype):
        return {}

    def forward(self, p, x):
        return np.maximum(x, 0.0), x

    def backward(self, p, cache, dy):
        return dy * (cache > 0), {}


class Swish:
    def init(self, rng, dtype):
        return {}

    def forward(self, p, x):
        s = _sigmoid(x)
        return x * s, (x, s)

    def backward(self, p, cache, dy):
        x, s = cache
        return dy * (s + x * s * (1.0 - s)), {}


class Residual:
    """Identity skip around a stack of sub-layers."""

    def __init__(self, layers: list):
        self.layers = layers

    def init(self, rng, dtype):
        params = {}
        for j, layer in enumerate(self.layers):
            for name, value in layer.init(rng, dtype).items():
                params[f"{j}.{name}"] = value
        return params

    @staticmethod
    def _local(params, j):
        prefix = f"{j}."
        return {k[len(prefix):]: v for k, v in params.items() if k.startswith(prefix)}

    def forward(self, p, x):
        h = x
        caches = []
        for j, layer in enumerate(self.layers):
            h, cache = layer.forward(self._local(p, j), h)
            caches.append(cache)
        return x + h, caches

    def backward(self, p, caches, dy):
        grads = {}
        dh = dy
        for j in reversed(range(len(self.layers))):
            dh, local = self.layers[j].backward(self._local(p, j), caches[j], dh)
            for name, value in local.items():
                grads[f"{j}.{name}"] = value
        return dy + dh, grads


class Network:
    """A layer stack whose parameters live in one flat registry."""

    def __init__(self, layers: list, input_dim: int, output_dim: int):
        self.layers = layers
        self.input_dim = input_dim
        self.output_dim = output_dim

    def init_params(self, rng: np.random.Generator, dtype=np.float32) -> dict[str, np.ndarray]:
        params = {}
        for i, layer in enumerate(self.layers):
            for name, value in layer.init(rng, dtype).items():
                params[f"{i}.{name}"] = value
        return params

    def _local(self, params, i):
        prefix = f"{i}."
        return {k[len(prefix):]: v for k, v in params.items() if k.startswith(prefix)}

    def forward_cached(self, params, x):
        if x.ndim != 2 or x.shape[1] != self.input_dim:
            raise ValueError(
                f"expected input of shape (batch, {self.input_dim}), got {x.shape}"
            )
        h = x
        caches = []
        for i, layer in enumerate(self.layers):
            h, cache = layer.forward(self._local(params, i), h)
            caches.append(cache)
        return h, caches

    def forward(self, params, x):
        return self.forward_cached(params, x)[0]

    def backward(self, params, caches, dy):
        """Gradients of a scalar loss given d(loss)/d(output)."""
        grads = {}
        dh = dy
        for i in reversed(range(len(self.layers))):
            dh, local = self.layers[i].backward(self._local(params, i), caches[i], dh)
            for name, value in local.items():
                grads[f"{i}.{name}"] = value
        return grads, dh


def build_mlp(input_dim: int, output_dim: int, hidden: int = 256,
              n_hidden: int = 2, zero_final: bool = True) -> Network:
    layers: list = []
    dim = input_dim
    for _ in range(n_hidden):
        layers += [Dense(dim, hidden), Relu(), LayerNorm(hidden)]
        dim = hidden
    layers.append(Dense(dim, output_dim, zero_init=zero_final))
    return Network(layers, input_dim, output_dim)


def build_resnet(input_dim: int, output_dim: int, width: int = 1024,
                 blocks: int = 2, layers_per_block: int = 4,
                 zero_final: bool = True) -> Network:
    layers: list = [Dense(input_dim, width)]
    for _ in range(blocks):
        sub: list = []
        for j in range(layers_per_block):
            # Zero-init the branch's last dense so each block starts as
            # the identity map.
            sub += [Dense(width, width, zero_init=j == layers_per_block - 1),
                    LayerNorm(width), Swish()]
        layers.append(Residual(sub))
    layers.append(Dense(width, output_dim, zero_init=zero_final))
    return Network(layers, input_dim, output_dim)


def build_network(kind: str, input_dim: int, output_dim: int,
                  zero_final: bool = True, **sizes) -> Network:
    if kind in ("mlp", "mlp256"):
        return build_mlp(input_dim, output_dim, zero_final=zero_final, **sizes)
    if kind in ("resnet", "resnet_large"):
        return build_resnet(input_dim, output_dim, zero_final=zero_final, **sizes)
    raise ValueError(f"unknown architecture kind {kind!r}")


# --- optimizer ----------------------------------------------------------------


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def for_params(cls, params: dict[str, np.ndarray]) -> "AdamState":
        return cls(m={k: np.zeros_like(p) for k, p in params.items()},
                   v={k: np.zeros_like(p) for k, p in params.items()})


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              lr: float, state: AdamState, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8):
    """One Adam update with bias correction; returns new params and state."""
    if set(grads) != set(params):
        missing = set(params) ^ set(grads)
        raise ValueError(f"gradient registry mismatch on keys {sorted(missing)}")
    t = state.t + 1
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    new_params, new_m, new_v = {}, {}, {}
    for k, p in params.items():
        g = grads[k]
        if g.shape != p.shape:
            raise ValueError(f"shape mismatch for {k}: {g.shape} vs {p.shape}")
        m = beta1 * state.m[k] + (1.0 - beta1) * g
        v = beta2 * state.v[k] + (1.0 - beta2) * g * g
        new_params[k] = p - lr * (m / c1) / (np.sqrt(v / c2) + eps)
        new_m[k] = m
        new_v[k] = v
    return new_params, AdamState(new_m, new_v, t)


def params_finite(params: dict[str, np.ndarray]) -> bool:
    return all(np.isfinite(p).all() for p in params.values())


# --- quasimetric head ---------------------------------------------------------


def _group_count(dim: int, num_groups: int | None) -> int:
    if dim % 2:
        raise ValueError(f"quasimetric embeddings need an even dim, got {dim}")
    if num_groups is None:
        num_groups = 8 if dim % 8 == 0 else 2
    if dim % num_groups:
        raise ValueError(f"dim {dim} not divisible into {num_groups} groups")
    return num_groups


def quasimetric_distance(e1: np.ndarray, e2: np.ndarray,
                         num_groups: int | None = None) -> np.ndarray:
    """Asymmetric distance: max over groups of summed one-sided gaps.

    d(x, y) = max_g sum_{k in g} relu(y_k - x_k).  Satisfies d(x, x) = 0
    and the triangle inequality by construction (relu is subadditive per
    component; sums and maxima preserve both properties).
    """
    e1 = np.asarray(e1)
    e2 = np.asarray(e2)
    if e1.shape != e2.shape:
        raise ValueError(f"embedding shapes differ: {e1.shape} vs {e2.shape}")
    dim = e1.shape[-1]
    groups = _group_count(dim, num_groups)
    gaps = np.maximum(e2 - e1, 0.0)
    grouped = gaps.reshape(*gaps.shape[:-1], groups, dim // groups).sum(axis=-1)
    return grouped.max(axis=-1)


def quasimetric_pairwise(phi: np.ndarray, psi: np.ndarray,
                         num_groups: int | None = None):
    """All-pairs distances d(phi_i, psi_j) with a cache for the VJP."""
    b, dim = phi.shape
    m = psi.shape[0]
    groups = _group_count(dim, num_groups)
    diffs = psi[None, :, :] - phi[:, None, :]
    positive = diffs > 0
    np.maximum(diffs, 0.0, out=diffs)
    # Group sums as one GEMM against the component->group indicator.
    comp_group = np.repeat(np.arange(groups), dim // groups)
    indicator = (comp_group[:, None] == np.arange(groups)[None, :]).astype(diffs.dtype)
    sums = diffs.reshape(b * m, dim) @ indicator
    best = sums.argmax(axis=-1)
    dist = sums[np.arange(b * m), best].reshape(b, m)
    return dist, (positive, best.reshape(b, m), comp_group, dim)


def quasimetric_pairwise_vjp(cache, ddist: np.ndarray):
    positive, best, comp_group, dim = cache
    # Gradient flows only through the winning group's positive gaps.
    mask = comp_group[None, None, :] == best[:, :, None]
    mask &= positive
    dgap = ddist[:, :, None] * mask
    dpsi = dgap.sum(axis=0)
    dphi = -dgap.sum(axis=1)
    return dphi, dpsi


# --- checkpoints --------------------------------------------------------------
#
# Binary layout (all integers little-endian):
#   magic   4 bytes  b"BWCP"
#   version u32      currently 1
#   meta    u32 length + UTF-8 JSON object
#   count   u32      number of tensors
#   per tensor:
#     name  u16 length + UTF-8 bytes
#     dtype u8       0=float32 1=float64 2=int64 3=uint8
#     ndim  u8
#     dims  ndim * u32
#     data  raw little-endian C-order values

_MAGIC = b"BWCP"
_VERSION = 1
_DTYPE_CODES = {np.dtype("<f4"): 0, np.dtype("<f8"): 1,
                np.dtype("<i8"): 2, np.dtype("<u1"): 3}
_CODE_DTYPES = {v: k for k, v in _DTYPE_CODES.items()}


def save_checkpoint(path, tensors: dict[str, np.ndarray], meta: dict) -> None:
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<I", _VERSION))
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        f.write(struct.pack("<I", len(tensors)))
        for name in sorted(tensors):
            arr = np.ascontiguousarray(tensors[name])
            dtype = arr.dtype.newbyteorder("<")
            code = _DTYPE_CODES.get(np.dtype(dtype))
            if code is None:
                raise ValueError(f"unsupported tensor dtype {arr.dtype} for {name}")
            encoded = name.encode("utf-8")
            f.write(struct.pack("<H", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<BB", code, arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.astype(dtype, copy=False).tobytes())


def load_checkpoint(path):
    with open(path, "rb") as f:
        if f.read(4) != _MAGIC:
            raise ValueError(f"{path} is not a checkpoint file")
        (version,) = struct.unpack("<I", f.read(4))
        if version != _VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        (meta_len,) = struct.unpack("<I", f.read(4))
        meta = json.loads(f.read(meta_len).decode("utf-8"))
        (count,) = struct.unpack("<I", f.read(4))
        tensors = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", f.read(2))
            name = f.read(name_len).decode("utf-8")
            code, ndim = struct.unpack("<BB", f.read(2))
            shape = struct.unpack(f"<{ndim}I", f.read(4 * ndim))
            dtype = _CODE_DTYPES[code]
            n_bytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
            data = np.frombuffer(f.read(n_bytes), dtype=dtype)
            tensors[name] = data.reshape(shape).copy()
    return tensors, meta
