"""Layer primitives used by the channel-wise network.

All spatial ops use NCHW layout.  ``conv2d`` gathers one strided slice per
kernel tap into a column buffer and runs a batched GEMM, so outputs come out
in NCHW order with no transposes; 1x1 convolutions skip the gather.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from . import tensor as tensor_mod
from .tensor import Tensor, concat, make, matmul, relu

__all__ = [
    "LayerSpec", "conv2d", "maxpool2d", "fire", "gap", "dense", "relu",
    "dropout", "concat", "conv_output_size",
]

KINDS = ("conv2d", "maxpool2d", "fire", "dense", "relu", "dropout", "gap",
         "concat")


@dataclass(frozen=True)
class LayerSpec:
    """Architecture hyperparameters of one layer.

    Only the fields relevant to ``kind`` are read.  For ``fire`` the declared
    ``out_channels`` (the fire "size") must equal the sum of both expand
    branches.
    """

    kind: str
    in_channels: int = 0
    out_channels: int = 0
    kernel_size: int = 3
    stride: int = 1
    padding: int = 0
    squeeze_channels: int = 0
    expand1x1_channels: int = 0
    expand3x3_channels: int = 0
    rate: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.kind == "fire":
            if self.squeeze_channels < 1:
                raise ValueError("fire: squeeze_channels must be >= 1")
            if self.expand1x1_channels + self.expand3x3_channels != self.out_channels:
                raise ValueError(
                    f"fire: expand1x1 ({self.expand1x1_channels}) + expand3x3 "
                    f"({self.expand3x3_channels}) != size {self.out_channels}")
        if self.kind == "dropout" and not 0.0 <= self.rate < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {self.rate}")

    @classmethod
    def make_fire(cls, in_channels: int, size: int, squeeze_ratio: float = 0.5,
                  expand3x3_fraction: float = 0.625) -> "LayerSpec":
        squeeze = max(1, int(round(size * squeeze_ratio)))
        e3 = int(round(size * expand3x3_fraction))
        return cls("fire", in_channels=in_channels, out_channels=size,
                   squeeze_channels=squeeze, expand1x1_channels=size - e3,
                   expand3x3_channels=e3)

    def param_shapes(self) -> dict[str, tuple]:
        """Shapes of the trainable tensors this layer owns."""
        if self.kind == "conv2d":
            k = self.kernel_size
            return {"w": (self.out_channels, self.in_channels, k, k),
                    "b": (self.out_channels,)}
        if self.kind == "dense":
            return {"w": (self.in_channels, self.out_channels),
                    "b": (self.out_channels,)}
        if self.kind == "fire":
            s, e1, e3 = (self.squeeze_channels, self.expand1x1_channels,
                         self.expand3x3_channels)
            return {"squeeze_w": (s, self.in_channels, 1, 1), "squeeze_b": (s,),
                    "e1_w": (e1, s, 1, 1), "e1_b": (e1,),
                    "e3_w": (e3, s, 3, 3), "e3_b": (e3,)}
        return {}


def conv_output_size(n: int, k: int, stride: int, padding: int) -> int:
    return (n + 2 * padding - k) // stride + 1


def _taps(kh: int, kw: int):
    return [(i, j) for i in range(kh) for j in range(kw)]


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1,
           padding: int = 0) -> Tensor:
    """2-D cross-correlation of ``x[N,C,H,W]`` with ``w[K,C,kh,kw]``."""
    if x.ndim != 4 or w.ndim != 4:
        raise ValueError(f"conv2d expects 4-D input and weights, got "
                         f"input {x.shape} and weights {w.shape}")
    n, c, h, wd = x.shape
    k, cw, kh, kw = w.shape
    if c != cw:
        raise ValueError(f"conv2d channel mismatch: input {x.shape} vs "
                         f"weights {w.shape}")
    if b is not None and b.shape != (k,):
        raise ValueError(f"conv2d bias shape {b.shape} does not match weights {w.shape}")
    if stride < 1:
        raise ValueError("conv2d stride must be >= 1")
    hp, wp = h + 2 * padding, wd + 2 * padding
    if kh > hp or kw > wp:
        raise ValueError(f"conv2d kernel {w.shape} larger than padded input "
                         f"{(n, c, hp, wp)}")
    ho = conv_output_size(h, kh, stride, padding)
    wo = conv_output_size(wd, kw, stride, padding)
    taps = _taps(kh, kw)

    xp = x.data
    if padding:
        xp = np.pad(xp, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    if kh == kw == 1 and stride == 1:
        cols = xp.reshape(n, c, ho * wo)
    else:
        # cols[n, c, t, y, x] = xp[n, c, i + s*y, j + s*x] for tap t = (i, j)
        cols = np.empty((n, c, len(taps), ho, wo), dtype=xp.dtype)
        for t, (i, j) in enumerate(taps):
            cols[:, :, t] = xp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride]
        cols = cols.reshape(n, c * len(taps), ho * wo)
    wmat = w.data.reshape(k, -1)
    out = np.matmul(wmat, cols)
    if b is not None:
        out += b.data[:, None]
    out = out.reshape(n, k, ho, wo)

    def backward(g):
        g3 = g.reshape(n, k, ho * wo)
        gw = gb = gx = None
        if w.requires_grad:
            gw = np.matmul(g3, cols.transpose(0, 2, 1)).sum(axis=0).reshape(w.shape)
        if b is not None and b.requires_grad:
            gb = g3.sum(axis=(0, 2))
        if x.requires_grad:
            dcols = np.matmul(wmat.T, g3)
            if kh == kw == 1 and stride == 1:
                gxp = dcols.reshape(n, c, hp, wp)
            else:
                dcols = dcols.reshape(n, c, len(taps), ho, wo)
                gxp = np.zeros((n, c, hp, wp), dtype=g.dtype)
                for t, (i, j) in enumerate(taps):
                    gxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += dcols[:, :, t]
            gx = gxp[:, :, padding:padding + h, padding:padding + wd] if padding else gxp
        return (gx, gw) if b is None else (gx, gw, gb)

    parents = (x, w) if b is None else (x, w, b)
    return make(out, parents, backward, "conv2d")


def maxpool2d(x: Tensor, size: int = 3, stride: int = 2) -> Tensor:
    """Max pooling without padding; ties route the gradient to the first max."""
    if x.ndim != 4:
        raise ValueError(f"maxpool2d expects 4-D input, got {x.shape}")
    if stride < 1:
        raise ValueError("maxpool2d stride must be >= 1")
    n, c, h, w = x.shape
    if size > h or size > w:
        raise ValueError(f"maxpool2d window {size}x{size} larger than input {x.shape}")
    ho = (h - size) // stride + 1
    wo = (w - size) // stride + 1
    taps = _taps(size, size)

    def view(a, i, j):
        return a[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride]

    stacked = np.empty((len(taps), n, c, ho, wo), dtype=x.dtype)
    for t, (i, j) in enumerate(taps):
        stacked[t] = view(x.data, i, j)
    out = stacked.max(axis=0)
    if not (x.requires_grad and tensor_mod._GRAD_ENABLED):
        return Tensor(out)
    # walk taps backwards so the first maximum in row-major order wins ties
    idx = np.full(out.shape, len(taps) - 1, dtype=np.int8)
    for t in range(len(taps) - 2, -1, -1):
        np.copyto(idx, t, where=stacked[t] == out)
    del stacked

    def backward(g):
        gx = np.zeros(x.shape, dtype=g.dtype)
        for t, (i, j) in enumerate(taps):
            view(gx, i, j)[...] += g * (idx == t)
        return (gx,)
    return make(out, (x,), backward, "maxpool2d")


def gap(x: Tensor) -> Tensor:
    """Global average pooling: ``[N,C,H,W] -> [N,C]``."""
    if x.ndim != 4:
        raise ValueError(f"gap expects 4-D input, got {x.shape}")
    n, c, h, w = x.shape
    out = x.data.reshape(n, c, h * w).sum(axis=-1) / x.dtype.type(h * w)

    def backward(g):
        scale = g / x.dtype.type(h * w)
        return (np.broadcast_to(scale[:, :, None, None], x.shape).copy(),)
    return make(out, (x,), backward, "gap")


def dense(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ValueError(f"dense shape mismatch: input {x.shape}, weights {w.shape}")
    out = matmul(x, w)
    return out if b is None else out + b


def dropout(x: Tensor, rate: float, training: bool,
            rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout; the identity when not training."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in training mode needs an rng")
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / x.dtype.type(1.0 - rate)
    return make(x.data * keep, (x,), lambda g: (g * keep,), "dropout")


def fire(x: Tensor, spec: LayerSpec, weights: Mapping[str, Tensor]) -> Tensor:
    """Squeeze 1x1 -> ReLU, then parallel expand 1x1 / 3x3 (same padding) -> ReLU, concat."""
    if spec.kind != "fire":
        raise ValueError(f"fire() got a {spec.kind!r} spec")
    if x.ndim != 4 or x.shape[1] != spec.in_channels:
        raise ValueError(f"fire expects {spec.in_channels} input channels, got {x.shape}")
    s = relu(conv2d(x, weights["squeeze_w"], weights["squeeze_b"]))
    e1 = relu(conv2d(s, weights["e1_w"], weights["e1_b"]))
    e3 = relu(conv2d(s, weights["e3_w"], weights["e3_b"], padding=1))
    return concat([e1, e3], axis=1)
