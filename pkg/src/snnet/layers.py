"""Neural layers over the autodiff core: temporal and color convolutions,
max pooling, the 1D inception block, global max pooling over valid width,
dense, dropout, and softmax.

Convolutions follow the cross-correlation convention (no kernel flip) with a
fixed summation order (kernel position major, then channel), so their outputs
are bit-identical to a naive nested-loop evaluation. Activation maps carry a
per-example valid width; columns at or beyond it are exactly zero and never
influence any downstream value.
"""

from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .autodiff import Tensor, concat, matmul, record_op, relu


@dataclass
class ActivationMap:
    """Batch of feature maps [B, C, H, W] plus each example's valid width."""

    tensor: Tensor
    valid_w: np.ndarray

    def __post_init__(self):
        self.valid_w = np.asarray(self.valid_w, dtype=np.int64)
        if self.tensor.data.ndim != 4:
            raise ValueError("activation map data must be [B, C, H, W]")
        if self.valid_w.shape != (self.tensor.shape[0],):
            raise ValueError("valid_w must hold one width per batch example")
        if np.any(self.valid_w < 0) or np.any(self.valid_w > self.tensor.shape[3]):
            raise ValueError("valid widths must lie in [0, W]")

    @property
    def shape(self):
        return self.tensor.shape


@dataclass
class ConvSpec:
    """A convolution's parameters. kernel_h 1 means temporal (same-width,
    stride 1 or 2); kernel_h 4 means the color convolution (valid, stride 1)."""

    weights: Tensor  # [out_channels, in_channels, kernel_h, kernel_w]
    bias: Tensor  # [out_channels]
    stride_w: int = 1

    def __post_init__(self):
        if self.weights.data.ndim != 4:
            raise ValueError("conv weights must be [outC, inC, kh, kw]")
        if self.kernel_h not in (1, 4):
            raise ValueError(f"kernel height must be 1 or 4, got {self.kernel_h}")
        if self.kernel_h == 1 and self.kernel_w % 2 != 1:
            raise ValueError("temporal kernels must have odd width")
        if self.kernel_h == 4 and (self.stride_w != 1 or self.kernel_w != 1):
            raise ValueError("color convolution must be 4x1 with stride 1")
        if self.stride_w not in (1, 2):
            raise ValueError("stride must be 1 or 2")
        if self.bias.shape != (self.out_channels,):
            raise ValueError("bias must have one entry per output channel")

    @property
    def out_channels(self):
        return self.weights.shape[0]

    @property
    def in_channels(self):
        return self.weights.shape[1]

    @property
    def kernel_h(self):
        return self.weights.shape[2]

    @property
    def kernel_w(self):
        return self.weights.shape[3]


def _ceil_div(a, b):
    return -(-a // b)


def conv_temporal(x: ActivationMap, spec: ConvSpec) -> ActivationMap:
    """1xk correlation along width, per row, with same-width zero padding."""
    if spec.kernel_h != 1:
        raise ValueError("conv_temporal requires a 1xk kernel")
    xt, w, b = x.tensor, spec.weights, spec.bias
    if xt.shape[1] != spec.in_channels:
        raise ValueError(
            f"channel mismatch: input has {xt.shape[1]}, kernel expects {spec.in_channels}"
        )
    batch, _, height, width = xt.shape
    stride = spec.stride_w
    w_out = _ceil_div(width, stride)
    v_out = -(-x.valid_w // stride)
    out = np.zeros((batch, spec.out_channels, height, w_out))
    K.conv_rows_fwd(xt.data, w.data, b.data, stride, x.valid_w, v_out, out)

    def bwd(g):
        g = np.ascontiguousarray(g)
        gx = gw = gb = None
        if xt.requires_grad:
            gx = np.zeros_like(xt.data)
            K.conv_rows_bwd_x(g, w.data, stride, x.valid_w, v_out, gx)
        if w.requires_grad or b.requires_grad:
            gw = np.zeros_like(w.data)
            gb = np.zeros_like(b.data)
            K.conv_rows_bwd_w(g, xt.data, stride, x.valid_w, v_out, gw, gb)
        return gx, gw, gb

    return ActivationMap(record_op("conv_temporal", (xt, w, b), out, bwd), v_out)


def conv_color(x: ActivationMap, spec: ConvSpec) -> ActivationMap:
    """Valid 4x1 convolution collapsing the four band rows to one."""
    if spec.kernel_h != 4:
        raise ValueError("conv_color requires a 4x1 kernel")
    xt, w, b = x.tensor, spec.weights, spec.bias
    if xt.shape[2] != 4:
        raise ValueError(f"color convolution needs height 4, got {xt.shape[2]}")
    if xt.shape[1] != spec.in_channels:
        raise ValueError(
            f"channel mismatch: input has {xt.shape[1]}, kernel expects {spec.in_channels}"
        )
    batch, _, _, width = xt.shape
    out = np.zeros((batch, spec.out_channels, 1, width))
    K.conv_color_fwd(xt.data, w.data, b.data, x.valid_w, out)

    def bwd(g):
        g = np.ascontiguousarray(g)
        gx = gw = gb = None
        if xt.requires_grad:
            gx = np.zeros_like(xt.data)
            K.conv_color_bwd_x(g, w.data, x.valid_w, gx)
        if w.requires_grad or b.requires_grad:
            gw = np.zeros_like(w.data)
            gb = np.zeros_like(b.data)
            K.conv_color_bwd_w(g, xt.data, x.valid_w, gw, gb)
        return gx, gw, gb

    return ActivationMap(record_op("conv_color", (xt, w, b), out, bwd), x.valid_w.copy())


def maxpool_temporal(x: ActivationMap, stride_w: int = 1, window: int = 3) -> ActivationMap:
    """Width-3 sliding max per channel row; padding cells are excluded from
    the window, and gradient flows to the argmax (lowest index on ties)."""
    if window != 3:
        raise ValueError("only window 3 is supported")
    if stride_w not in (1, 2):
        raise ValueError("stride must be 1 or 2")
    xt = x.tensor
    batch, channels, height, width = xt.shape
    w_out = _ceil_div(width, stride_w)
    v_out = -(-x.valid_w // stride_w)
    out = np.zeros((batch, channels, height, w_out))
    arg = np.zeros((batch, channels, height, w_out), dtype=np.int64)
    K.maxpool3_fwd(xt.data, stride_w, x.valid_w, v_out, out, arg)

    def bwd(g):
        gx = np.zeros_like(xt.data)
        K.maxpool3_bwd(np.ascontiguousarray(g), arg, v_out, gx)
        return (gx,)

    return ActivationMap(record_op("maxpool_temporal", (xt,), out, bwd), v_out)


def relu_map(x: ActivationMap) -> ActivationMap:
    return ActivationMap(relu(x.tensor), x.valid_w.copy())


@dataclass
class InceptionBlock:
    """Four-branch 1D inception: 1x1, 1x1->1x3, 1x1->1x5, and pool->1x1.

    Every convolution is followed by a ReLU. The stride is applied in each
    branch's final spatial op (the 1x1 branch itself, the 1x3 and 1x5
    convolutions, and the pool), so all branch widths agree for the depth
    concatenation.
    """

    b1: ConvSpec
    b3_reduce: ConvSpec
    b3: ConvSpec
    b5_reduce: ConvSpec
    b5: ConvSpec
    pool_proj: ConvSpec
    stride_w: int = 1

    def __post_init__(self):
        if self.stride_w not in (1, 2):
            raise ValueError("stride must be 1 or 2")
        for name, spec, kw, st in (
            ("b1", self.b1, 1, self.stride_w),
            ("b3_reduce", self.b3_reduce, 1, 1),
            ("b3", self.b3, 3, self.stride_w),
            ("b5_reduce", self.b5_reduce, 1, 1),
            ("b5", self.b5, 5, self.stride_w),
            ("pool_proj", self.pool_proj, 1, 1),
        ):
            if spec.kernel_w != kw:
                raise ValueError(f"{name} kernel width must be {kw}")
            if spec.stride_w != st:
                raise ValueError(f"{name} stride must be {st}")

    @property
    def out_channels(self):
        return (
            self.b1.out_channels
            + self.b3.out_channels
            + self.b5.out_channels
            + self.pool_proj.out_channels
        )


def inception_forward(x: ActivationMap, block: InceptionBlock) -> ActivationMap:
    br1 = relu_map(conv_temporal(x, block.b1))
    br3 = relu_map(conv_temporal(relu_map(conv_temporal(x, block.b3_reduce)), block.b3))
    br5 = relu_map(conv_temporal(relu_map(conv_temporal(x, block.b5_reduce)), block.b5))
    pooled = maxpool_temporal(x, stride_w=block.stride_w)
    brp = relu_map(conv_temporal(pooled, block.pool_proj))
    out = concat([br1.tensor, br3.tensor, br5.tensor, brp.tensor], axis=1)
    return ActivationMap(out, br1.valid_w)


def global_max_pool(x: ActivationMap) -> Tensor:
    """Per-channel max over H x valid_w cells; output size is the channel
    count regardless of input duration."""
    if np.any(x.valid_w < 1):
        raise ValueError("global max pooling requires valid_w >= 1")
    xt = x.tensor
    batch, channels = xt.shape[0], xt.shape[1]
    out = np.zeros((batch, channels))
    argh = np.zeros((batch, channels), dtype=np.int64)
    argw = np.zeros((batch, channels), dtype=np.int64)
    K.gmp_fwd(xt.data, x.valid_w, out, argh, argw)

    def bwd(g):
        gx = np.zeros_like(xt.data)
        K.gmp_bwd(np.ascontiguousarray(g), argh, argw, gx)
        return (gx,)

    return record_op("global_max_pool", (xt,), out, bwd)


def bias_add(x: Tensor, bias: Tensor) -> Tensor:
    """Add a length-n bias vector to every row of a [B, n] tensor."""
    if x.data.ndim != 2 or bias.data.ndim != 1 or x.shape[1] != bias.shape[0]:
        raise ValueError(f"cannot add bias {bias.shape} to rows of {x.shape}")
    out = x.data + bias.data[None, :]

    def bwd(g):
        return g, g.sum(axis=0)

    return record_op("bias_add", (x, bias), out, bwd)


def dense(x: Tensor, weights: Tensor, bias: Tensor) -> Tensor:
    """Affine map [B, in] -> [B, out]."""
    return bias_add(matmul(x, weights), bias)


def dropout(x: Tensor, rate: float, training: bool, rng=None) -> Tensor:
    """Inverted dropout: zero units with probability `rate` and scale
    survivors by 1/(1-rate) during training; exact identity at inference."""
    if not 0.0 <= rate < 1.0:
        raise ValueError("dropout rate must lie in [0, 1)")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ValueError("training-mode dropout needs an rng")
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    out = x.data * mask

    def bwd(g):
        return (g * mask,)

    return record_op("dropout", (x,), out, bwd)


def softmax(x: Tensor) -> Tensor:
    """Row-wise softmax; rows of the output sum to 1."""
    if x.data.ndim != 2:
        raise ValueError("softmax expects [B, classes]")
    shifted = x.data - np.max(x.data, axis=1, keepdims=True)
    e = np.exp(shifted)
    p = e / np.sum(e, axis=1, keepdims=True)

    def bwd(g):
        dot = np.sum(g * p, axis=1, keepdims=True)
        return (p * (g - dot),)

    return record_op("softmax", (x,), p, bwd)
