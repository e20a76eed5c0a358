"""Desk-scale trainable embedding networks.

Two families mirror the block structures of the benchmark: a residual
trunk (``x + F(x)`` with a two-layer rectified ``F``) and a
depthwise-separable convolution stack operating on small channel grids.
Both expose a deterministic flat parameter layout, a cached forward
pass and a hand-written reverse-mode backward pass.
"""

import math
import struct
from dataclasses import dataclass
from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .exceptions import DimensionMismatchError, InvalidConfigError, ParseError

NETWORK_KINDS = ("residual", "depthwise")

CHECKPOINT_MAGIC = b"MLLB1"


def _glorot(rng, shape, fan_in, fan_out):
    a = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=shape)


class AffineLayer:
    """Dense layer ``y = x W^T + b`` with weight shape (out, in)."""

    def __init__(self, weight, bias):
        self.weight = weight
        self.bias = bias

    @classmethod
    def init(cls, rng, in_dim, out_dim):
        w = _glorot(rng, (out_dim, in_dim), in_dim, out_dim)
        return cls(w, np.zeros(out_dim))

    def forward(self, x):
        if x.shape[1] != self.weight.shape[1]:
            raise DimensionMismatchError(
                f"affine layer expects width {self.weight.shape[1]}, got {x.shape[1]}"
            )
        return x @ self.weight.T + self.bias, x

    def backward(self, grad_out, cache):
        x = cache
        grad_w = grad_out.T @ x
        grad_b = grad_out.sum(axis=0)
        grad_x = grad_out @ self.weight
        return [grad_w, grad_b], grad_x

    def params(self):
        return [self.weight, self.bias]


class ReluLayer:
    def forward(self, x):
        return np.maximum(x, 0.0), x > 0

    def backward(self, grad_out, cache):
        return [], grad_out * cache

    def params(self):
        return []


class ResidualBlock:
    """``x + F(x)`` where F is affine -> relu -> affine at fixed width."""

    def __init__(self, a1, a2):
        self.a1 = a1
        self.a2 = a2
        self.width = a1.weight.shape[1]

    @classmethod
    def init(cls, rng, width):
        return cls(AffineLayer.init(rng, width, width), AffineLayer.init(rng, width, width))

    def inner(self, x):
        """F(x) alone, without the skip connection."""
        h, _ = self.a1.forward(x)
        r = np.maximum(h, 0.0)
        out, _ = self.a2.forward(r)
        return out

    def forward(self, x):
        h, c1 = self.a1.forward(x)
        mask = h > 0
        r = np.maximum(h, 0.0)
        f, c2 = self.a2.forward(r)
        return x + f, (c1, mask, c2)

    def backward(self, grad_out, cache):
        c1, mask, c2 = cache
        g2, grad_r = self.a2.backward(grad_out, c2)
        g1, grad_x_inner = self.a1.backward(grad_r * mask, c1)
        return g1 + g2, grad_out + grad_x_inner

    def params(self):
        return self.a1.params() + self.a2.params()


class DepthwiseSeparableBlock:
    """Per-channel D_k x D_k filtering followed by 1x1 channel mixing.

    Bias-free, so the parameter count is ``D_k^2 * M + M * N`` against
    ``D_k^2 * M * N`` for a standard convolution of the same shape.
    Stride 1; ``padding`` zero-pads each spatial border.
    """

    def __init__(self, depthwise, pointwise, padding):
        self.depthwise = depthwise      # (M, Dk, Dk)
        self.pointwise = pointwise      # (N, M)
        self.padding = padding

    @classmethod
    def init(cls, rng, in_channels, out_channels, kernel_size, padding=None):
        if padding is None:
            if kernel_size % 2 == 0:
                raise InvalidConfigError("same padding needs an odd kernel size")
            padding = (kernel_size - 1) // 2
        dk2 = kernel_size * kernel_size
        dw = _glorot(rng, (in_channels, kernel_size, kernel_size), dk2, dk2)
        pw = _glorot(rng, (out_channels, in_channels), in_channels, out_channels)
        return cls(dw, pw, padding)

    @property
    def in_channels(self):
        return self.depthwise.shape[0]

    @property
    def out_channels(self):
        return self.pointwise.shape[0]

    @property
    def kernel_size(self):
        return self.depthwise.shape[1]

    @property
    def param_count(self):
        m, dk, _ = self.depthwise.shape
        n = self.pointwise.shape[0]
        return dk * dk * m + m * n

    def _windows(self, x):
        p = self.padding
        dk = self.kernel_size
        padded = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
        if padded.shape[2] < dk or padded.shape[3] < dk:
            raise DimensionMismatchError(
                f"grid {x.shape[2:]} too small for kernel {dk} with padding {p}"
            )
        return padded, sliding_window_view(padded, (dk, dk), axis=(2, 3))

    def forward(self, x):
        if x.shape[1] != self.in_channels:
            raise DimensionMismatchError(
                f"block expects {self.in_channels} channels, got {x.shape[1]}"
            )
        _, windows = self._windows(x)
        dw_out = np.einsum("bmhwij,mij->bmhw", windows, self.depthwise)
        out = np.einsum("bmhw,nm->bnhw", dw_out, self.pointwise)
        return out, (x.shape, windows, dw_out)

    def backward(self, grad_out, cache):
        x_shape, windows, dw_out = cache
        grad_pw = np.einsum("bnhw,bmhw->nm", grad_out, dw_out)
        grad_dw_out = np.einsum("bnhw,nm->bmhw", grad_out, self.pointwise)
        grad_dw = np.einsum("bmhwij,bmhw->mij", windows, grad_dw_out)

        b, m, h, w = x_shape
        p = self.padding
        dk = self.kernel_size
        oh, ow = grad_dw_out.shape[2], grad_dw_out.shape[3]
        grad_padded = np.zeros((b, m, h + 2 * p, w + 2 * p))
        for i in range(dk):
            for j in range(dk):
                grad_padded[:, :, i : i + oh, j : j + ow] += (
                    grad_dw_out * self.depthwise[None, :, i, j, None, None]
                )
        grad_x = grad_padded[:, :, p : p + h, p : p + w]
        return [grad_dw, grad_pw], grad_x

    def params(self):
        return [self.depthwise, self.pointwise]


class ReshapeLayer:
    """Flat vectors <-> channel grids, with no parameters."""

    def __init__(self, grid_shape):
        self.grid_shape = grid_shape

    def forward(self, x):
        c, h, w = self.grid_shape
        if x.shape[1] != c * h * w:
            raise DimensionMismatchError(
                f"cannot reshape width {x.shape[1]} to grid {self.grid_shape}"
            )
        return x.reshape(x.shape[0], c, h, w), None

    def backward(self, grad_out, cache):
        return [], grad_out.reshape(grad_out.shape[0], -1)

    def params(self):
        return []


class FlattenLayer:
    def forward(self, x):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, grad_out, cache):
        return [], grad_out.reshape(cache)

    def params(self):
        return []


@dataclass(frozen=True)
class NetworkConfig:
    """Structural description of an embedding network.

    ``width``/``num_blocks`` size the residual trunk; ``grid_shape``
    (channels, height, width) and per-block ``channels`` size the
    depthwise stack.  Leave the depthwise fields as None to derive them
    from ``input_dim``.
    """

    kind: str
    input_dim: int
    embed_dim: int = 16
    width: int = 32
    num_blocks: int = 2
    grid_shape: Optional[tuple] = None
    channels: Optional[tuple] = None
    kernel_size: int = 3

    def __post_init__(self):
        if self.kind not in NETWORK_KINDS:
            raise InvalidConfigError(
                f"unknown network kind {self.kind!r}; expected one of {NETWORK_KINDS}"
            )
        for name in ("input_dim", "embed_dim", "width", "num_blocks", "kernel_size"):
            if getattr(self, name) < 1:
                raise InvalidConfigError(f"{name} must be >= 1")
        if self.grid_shape is not None:
            if len(self.grid_shape) != 3 or any(v < 1 for v in self.grid_shape):
                raise InvalidConfigError("grid_shape must be three positive integers")
            if int(np.prod(self.grid_shape)) != self.input_dim:
                raise InvalidConfigError(
                    f"grid_shape {self.grid_shape} does not cover input_dim {self.input_dim}"
                )
        if self.channels is not None:
            if any(v < 1 for v in self.channels):
                raise InvalidConfigError("channels must be positive")
            if len(self.channels) != self.num_blocks:
                raise InvalidConfigError(
                    f"{len(self.channels)} channel entries for {self.num_blocks} blocks"
                )

    def resolved_grid(self):
        """Concrete (channels, h, w) for the depthwise stack."""
        if self.grid_shape is not None:
            return tuple(int(v) for v in self.grid_shape)
        # prefer the largest square grid that divides the input width
        for side in range(int(math.isqrt(self.input_dim)), 0, -1):
            if self.input_dim % (side * side) == 0:
                return (self.input_dim // (side * side), side, side)
        return (1, 1, self.input_dim)

    def resolved_channels(self):
        if self.channels is not None:
            return tuple(int(v) for v in self.channels)
        return tuple(8 * 2**i for i in range(self.num_blocks))


class EmbeddingNetwork:
    """Ordered layer stack mapping input vectors to d-dim embeddings.

    The flat parameter layout is the concatenation of every layer's
    parameter arrays in stack order, each raveled in C order; the layout
    is stable across save/load round trips.
    """

    def __init__(self, config, layers):
        self.config = config
        self.layers = layers

    @property
    def kind(self):
        return self.config.kind

    @property
    def input_dim(self):
        return self.config.input_dim

    @property
    def embed_dim(self):
        return self.config.embed_dim

    def _param_arrays(self):
        arrays = []
        for layer in self.layers:
            arrays.extend(layer.params())
        return arrays

    @property
    def num_params(self):
        return sum(a.size for a in self._param_arrays())

    def get_flat_params(self):
        arrays = self._param_arrays()
        if not arrays:
            return np.zeros(0)
        return np.concatenate([a.ravel() for a in arrays])

    def set_flat_params(self, flat):
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (self.num_params,):
            raise DimensionMismatchError(
                f"expected {self.num_params} parameters, got {flat.shape}"
            )
        offset = 0
        for a in self._param_arrays():
            a[...] = flat[offset : offset + a.size].reshape(a.shape)
            offset += a.size

    def _check_input(self, inputs):
        x = np.asarray(inputs, dtype=np.float64)
        if x.ndim == 1:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.input_dim:
            raise DimensionMismatchError(
                f"expected inputs of width {self.input_dim}, got shape {x.shape}"
            )
        return x

    def forward(self, inputs):
        """Embeddings plus the per-layer caches needed by ``backward``."""
        x = self._check_input(inputs)
        caches = []
        for layer in self.layers:
            x, cache = layer.forward(x)
            caches.append(cache)
        return x, caches

    def embed(self, inputs):
        """N x embed_dim embedding matrix; deterministic for fixed parameters."""
        out, _ = self.forward(inputs)
        return out

    def backward(self, grad_features, caches):
        """Flat parameter gradient by reverse accumulation through the stack."""
        g = np.asarray(grad_features, dtype=np.float64)
        if g.ndim != 2 or g.shape[1] != self.embed_dim:
            raise DimensionMismatchError(
                f"upstream gradient must be N x {self.embed_dim}, got {g.shape}"
            )
        grads = [None] * len(self.layers)
        for i in range(len(self.layers) - 1, -1, -1):
            layer_grads, g = self.layers[i].backward(g, caches[i])
            grads[i] = layer_grads
        flat = []
        for layer_grads in grads:
            flat.extend(a.ravel() for a in layer_grads)
        if not flat:
            return np.zeros(0)
        return np.concatenate(flat)


def init_network(config, seed):
    """Build a network with Glorot-uniform weights, deterministic per seed."""
    rng = np.random.default_rng(seed)
    layers = []
    if config.kind == "residual":
        layers.append(AffineLayer.init(rng, config.input_dim, config.width))
        layers.append(ReluLayer())
        for _ in range(config.num_blocks):
            layers.append(ResidualBlock.init(rng, config.width))
        layers.append(AffineLayer.init(rng, config.width, config.embed_dim))
    else:
        grid = config.resolved_grid()
        channels = config.resolved_channels()
        layers.append(ReshapeLayer(grid))
        prev = grid[0]
        for ch in channels:
            layers.append(
                DepthwiseSeparableBlock.init(rng, prev, ch, config.kernel_size)
            )
            layers.append(ReluLayer())
            prev = ch
        layers.append(FlattenLayer())
        layers.append(AffineLayer.init(rng, prev * grid[1] * grid[2], config.embed_dim))
    return EmbeddingNetwork(config, layers)


def residual_block_forward(block, x):
    """Spec surface for a single residual block: ``F(x) + x``."""
    arr = np.asarray(x, dtype=np.float64)
    single = arr.ndim == 1
    if single:
        arr = arr[None, :]
    if arr.shape[1] != block.width:
        raise DimensionMismatchError(
            f"block width {block.width}, input width {arr.shape[1]}"
        )
    out, _ = block.forward(arr)
    return out[0] if single else out


def dws_block_forward(block, x):
    """Spec surface for a depthwise-separable block on an M-channel grid."""
    arr = np.asarray(x, dtype=np.float64)
    single = arr.ndim == 3
    if single:
        arr = arr[None, ...]
    if arr.ndim != 4:
        raise DimensionMismatchError("expected a (channels, h, w) grid or a batch of them")
    out, _ = block.forward(arr)
    return out[0] if single else out


def network_backward(net, inputs, grad_features):
    """Convenience wrapper: forward for caches, then reverse accumulation."""
    _, caches = net.forward(inputs)
    return net.backward(grad_features, caches)


def save_network(net, path):
    """Versioned binary checkpoint: magic, kind, sizes, float64 LE params."""
    cfg = net.config
    if cfg.kind == "residual":
        kind_byte = 0
        sizes = [cfg.input_dim, cfg.embed_dim, cfg.width, cfg.num_blocks]
    else:
        kind_byte = 1
        grid = cfg.resolved_grid()
        channels = cfg.resolved_channels()
        sizes = [
            cfg.input_dim,
            cfg.embed_dim,
            cfg.kernel_size,
            *grid,
            len(channels),
            *channels,
        ]
    params = net.get_flat_params()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<BI", kind_byte, len(sizes)))
        fh.write(struct.pack(f"<{len(sizes)}I", *sizes))
        fh.write(struct.pack("<Q", params.size))
        fh.write(params.astype("<f8").tobytes())


def load_network(path):
    """Rebuild a network from a checkpoint; embeddings round-trip bit-exact."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise ParseError(f"{path}: not a network checkpoint (bad magic)")
    off = len(CHECKPOINT_MAGIC)
    kind_byte, n_sizes = struct.unpack_from("<BI", blob, off)
    off += struct.calcsize("<BI")
    sizes = struct.unpack_from(f"<{n_sizes}I", blob, off)
    off += struct.calcsize(f"<{n_sizes}I")
    (n_params,) = struct.unpack_from("<Q", blob, off)
    off += struct.calcsize("<Q")
    params = np.frombuffer(blob, dtype="<f8", count=n_params, offset=off).astype(
        np.float64
    )

    if kind_byte == 0:
        input_dim, embed_dim, width, num_blocks = sizes
        config = NetworkConfig(
            kind="residual",
            input_dim=input_dim,
            embed_dim=embed_dim,
            width=width,
            num_blocks=num_blocks,
        )
    elif kind_byte == 1:
        input_dim, embed_dim, kernel_size = sizes[:3]
        grid = tuple(sizes[3:6])
        n_ch = sizes[6]
        channels = tuple(sizes[7 : 7 + n_ch])
        config = NetworkConfig(
            kind="depthwise",
            input_dim=input_dim,
            embed_dim=embed_dim,
            kernel_size=kernel_size,
            grid_shape=grid,
            channels=channels,
            num_blocks=n_ch,
        )
    else:
        raise ParseError(f"{path}: unknown network kind byte {kind_byte}")

    net = init_network(config, seed=0)
    if net.num_params != n_params:
        raise ParseError(
            f"{path}: checkpoint holds {n_params} parameters, "
            f"layout expects {net.num_params}"
        )
    net.set_flat_params(params)
    return net
