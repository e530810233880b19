"""From-scratch network kernels: periodic conv, ReLU, sum pooling, dense.

A tensor is a channel-major float64 array ``(channels, s1, ..., sd)``;
batched internals prepend a batch axis.  Convolution is cross-correlation
on a periodically padded input, so every network built here is exactly
invariant under cyclic shifts of its input once spatial positions are
aggregated by the (global) sum pool.

Two architectures are provided: a single periodic-conv network whose
kernel spans the whole grid (conv -> ReLU -> global sum pool -> dense) and
a three-stage 1D network (pointwise conv stack -> sum pool -> identical
pointwise stack on the pooled scalar) that mirrors the closed-form
structure of the 1D effective conductance.

All evaluation is float64 and reverse-mode gradients are exact; gradient
reductions over a batch use fixed-order vectorized sums so training is
bit-reproducible.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Optional, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeMismatch
from .grid import Field
from .sampler import WhitenStats

MODEL_MAGIC = b"PDESURM1"
MODEL_FORMAT_VERSION = 1


# ---------------------------------------------------------------------------
# layer and network specs


@dataclass(frozen=True)
class PeriodicConv:
    in_ch: int
    out_ch: int
    kernel: tuple[int, ...]  # one size per spatial axis; bias always present


@dataclass(frozen=True)
class ReLU:
    pass


@dataclass(frozen=True)
class SumPool:
    window: tuple[int, ...]  # non-overlapping; window == spatial -> global


@dataclass(frozen=True)
class Dense:
    in_features: int
    out_features: int  # bias always present


LayerSpec = Union[PeriodicConv, ReLU, SumPool, Dense]


@dataclass(frozen=True)
class NetworkSpec:
    """Ordered layer graph with a fixed input shape."""

    input_channels: int
    input_spatial: tuple[int, ...]
    layers: tuple[LayerSpec, ...]

    def __post_init__(self):
        _layer_shapes(self)  # validates composition eagerly


@dataclass
class Tensor:
    """Channel-major value container matching the on-wire tensor layout."""

    channels: int
    spatial: tuple[int, ...]
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64).reshape(-1)
        expected = self.channels * int(np.prod(self.spatial, dtype=np.int64))
        if self.values.size != expected:
            raise ShapeMismatch(
                f"tensor holds {self.values.size} values, shape wants {expected}"
            )
        if not np.all(np.isfinite(self.values)):
            raise ValueError("tensor contains non-finite values")

    @property
    def array(self) -> np.ndarray:
        return self.values.reshape((self.channels, *self.spatial))

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "Tensor":
        arr = np.asarray(arr, dtype=np.float64)
        return cls(channels=arr.shape[0], spatial=tuple(arr.shape[1:]), values=arr.reshape(-1))


@lru_cache(maxsize=None)
def _layer_shapes(spec: NetworkSpec) -> tuple[tuple[int, tuple[int, ...]], ...]:
    """(channels, spatial) after each layer; raises if shapes do not compose."""
    channels, spatial = spec.input_channels, tuple(spec.input_spatial)
    shapes = []
    for layer in spec.layers:
        if isinstance(layer, PeriodicConv):
            if len(layer.kernel) != len(spatial):
                raise ShapeMismatch(f"kernel rank {len(layer.kernel)} vs spatial rank {len(spatial)}")
            if layer.in_ch != channels:
                raise ShapeMismatch(f"conv expects {layer.in_ch} channels, got {channels}")
            if any(k < 1 for k in layer.kernel):
                raise ShapeMismatch("kernel sizes must be >= 1")
            if any(k - 1 > s for k, s in zip(layer.kernel, spatial)):
                raise ShapeMismatch("kernel must not wrap more than one period")
            channels = layer.out_ch
        elif isinstance(layer, ReLU):
            pass
        elif isinstance(layer, SumPool):
            if len(layer.window) != len(spatial):
                raise ShapeMismatch("pool window rank mismatch")
            if any(s % w != 0 for s, w in zip(spatial, layer.window)):
                raise ShapeMismatch(f"window {layer.window} does not tile spatial {spatial}")
            spatial = tuple(s // w for s, w in zip(spatial, layer.window))
        elif isinstance(layer, Dense):
            flat = channels * int(np.prod(spatial, dtype=np.int64))
            if layer.in_features != flat:
                raise ShapeMismatch(f"dense expects {layer.in_features} features, got {flat}")
            channels, spatial = layer.out_features, ()
        else:
            raise ShapeMismatch(f"unknown layer {layer!r}")
        shapes.append((channels, spatial))
    return tuple(shapes)


@lru_cache(maxsize=None)
def _param_layout(spec: NetworkSpec):
    """Per-layer [(name, shape, slice)] into the flat parameter vector."""
    layout = []
    offset = 0
    for layer in spec.layers:
        entries = []
        if isinstance(layer, PeriodicConv):
            w_shape = (layer.out_ch, layer.in_ch, *layer.kernel)
            w_size = int(np.prod(w_shape, dtype=np.int64))
            entries.append(("W", w_shape, slice(offset, offset + w_size)))
            offset += w_size
            entries.append(("b", (layer.out_ch,), slice(offset, offset + layer.out_ch)))
            offset += layer.out_ch
        elif isinstance(layer, Dense):
            w_shape = (layer.out_features, layer.in_features)
            w_size = layer.out_features * layer.in_features
            entries.append(("W", w_shape, slice(offset, offset + w_size)))
            offset += w_size
            entries.append(("b", (layer.out_features,), slice(offset, offset + layer.out_features)))
            offset += layer.out_features
        layout.append(tuple(entries))
    return tuple(layout), offset


def param_count(spec: NetworkSpec) -> int:
    return _param_layout(spec)[1]


class Params:
    """Flat parameter vector plus a same-shape gradient buffer."""

    def __init__(self, spec: NetworkSpec, flat: Optional[np.ndarray] = None):
        self.spec = spec
        n = param_count(spec)
        if flat is None:
            self.flat = np.zeros(n)
        else:
            flat = np.asarray(flat, dtype=np.float64).reshape(-1)
            if flat.size != n:
                raise ShapeMismatch(f"spec wants {n} parameters, got {flat.size}")
            self.flat = flat.copy()
        self.grad = np.zeros(n)

    def layer_views(self, layer_index: int, of=None) -> dict[str, np.ndarray]:
        """Reshaped views into ``flat`` (or ``of``) for one layer's parameters."""
        source = self.flat if of is None else of
        layout, _ = _param_layout(self.spec)
        return {name: source[sl].reshape(shape) for name, shape, sl in layout[layer_index]}

    def zero_grad(self):
        self.grad.fill(0.0)

    def copy(self) -> "Params":
        p = Params(self.spec, self.flat)
        p.grad = self.grad.copy()
        return p


# ---------------------------------------------------------------------------
# core kernels (batched arrays (B, C, *S); single-sample wrappers below)


def _pad_widths(kernel: tuple[int, ...]):
    """Total pad k-1 per axis split floor-left / ceil-right."""
    left = tuple((k - 1) // 2 for k in kernel)
    right = tuple(k - 1 - l for k, l in zip(kernel, left))
    return left, right


def periodic_pad(x: np.ndarray, kernel: tuple[int, ...]) -> np.ndarray:
    """Cyclically extend the spatial axes so a valid conv keeps their size."""
    x = np.asarray(x, dtype=np.float64)
    d = len(kernel)
    left, right = _pad_widths(kernel)
    lead = x.ndim - d
    widths = [(0, 0)] * lead + [(l, r) for l, r in zip(left, right)]
    if all(l == 0 and r == 0 for l, r in widths):
        return x.copy()
    return np.pad(x, widths, mode="wrap")


def _unpad_adjoint(dxpad: np.ndarray, kernel: tuple[int, ...], spatial: tuple[int, ...]) -> np.ndarray:
    """Adjoint of ``periodic_pad``: fold pad-region gradients onto their sources."""
    d = len(kernel)
    left, _ = _pad_widths(kernel)
    out = dxpad
    for ax_rel in range(d):
        ax = out.ndim - d + ax_rel
        k, s, l = kernel[ax_rel], spatial[ax_rel], left[ax_rel]
        if k == 1:
            continue
        r = k - 1 - l
        if l > s or r > s:
            raise ShapeMismatch("pad adjoint supports at most one wrapped period")
        idx = [slice(None)] * out.ndim
        idx[ax] = slice(l, l + s)
        core = out[tuple(idx)].copy()
        if l > 0:
            idx[ax] = slice(0, l)
            head = out[tuple(idx)]
            cidx = [slice(None)] * out.ndim
            cidx[ax] = slice(s - l, s)
            core[tuple(cidx)] += head
        if r > 0:
            idx[ax] = slice(l + s, l + s + r)
            tail = out[tuple(idx)]
            cidx = [slice(None)] * out.ndim
            cidx[ax] = slice(0, r)
            core[tuple(cidx)] += tail
        out = core
    return out


def _im2col(xpad: np.ndarray, kernel: tuple[int, ...]):
    """Patch matrix (B, positions, in_ch * prod(kernel)) from a padded input."""
    d = len(kernel)
    b, c_in = xpad.shape[0], xpad.shape[1]
    win = sliding_window_view(xpad, kernel, axis=tuple(range(2, 2 + d)))
    out_spatial = win.shape[2 : 2 + d]
    # (B, C, *Sout, *k) -> (B, *Sout, C, *k)
    order = [0] + list(range(2, 2 + d)) + [1] + list(range(2 + d, 2 + 2 * d))
    cols = win.transpose(order).reshape(
        b, int(np.prod(out_spatial, dtype=np.int64)), c_in * int(np.prod(kernel, dtype=np.int64))
    )
    return np.ascontiguousarray(cols), out_spatial


def _conv_fwd_cols(cols: np.ndarray, out_spatial, w: np.ndarray, bias: np.ndarray) -> np.ndarray:
    b = cols.shape[0]
    out_ch = w.shape[0]
    wmat = w.reshape(out_ch, -1)
    out2 = cols @ wmat.T + bias  # (B, P, out_ch)
    return out2.transpose(0, 2, 1).reshape(b, out_ch, *out_spatial)


def _conv_bwd_cols(cols, out_spatial, xpad_shape, kernel, w, upstream):
    b, out_ch = upstream.shape[0], w.shape[0]
    d = len(kernel)
    p = int(np.prod(out_spatial, dtype=np.int64))
    up2 = upstream.reshape(b, out_ch, p).transpose(0, 2, 1)  # (B, P, out)
    dw = np.tensordot(up2, cols, axes=([0, 1], [0, 1])).reshape(w.shape)
    db = up2.sum(axis=(0, 1))
    dcols = up2 @ w.reshape(out_ch, -1)  # (B, P, K)
    c_in = xpad_shape[1]
    dwin = dcols.reshape(b, *out_spatial, c_in, *kernel)
    # (B, *Sout, C, *k) -> (B, C, *Sout, *k)
    order = [0, 1 + d] + list(range(1, 1 + d)) + list(range(2 + d, 2 + 2 * d))
    dwin = dwin.transpose(order)
    dxpad = np.zeros(xpad_shape)
    for offset in np.ndindex(*kernel):
        dst = (slice(None), slice(None)) + tuple(
            slice(o, o + s) for o, s in zip(offset, out_spatial)
        )
        src = (slice(None), slice(None)) + (slice(None),) * d + offset
        dxpad[dst] += dwin[src]
    return dxpad, dw, db


def _as_batched(x: np.ndarray, spatial_rank: int) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == spatial_rank + 1:  # (C, *S)
        return x[None], True
    if x.ndim == spatial_rank + 2:  # (B, C, *S)
        return x, False
    raise ShapeMismatch(f"expected rank {spatial_rank + 1} or {spatial_rank + 2}, got {x.ndim}")


def conv_forward(xpad: np.ndarray, w: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Valid cross-correlation of an already periodically padded input."""
    w = np.asarray(w, dtype=np.float64)
    kernel = tuple(w.shape[2:])
    xb, single = _as_batched(xpad, len(kernel))
    if xb.shape[1] != w.shape[1]:
        raise ShapeMismatch(f"input has {xb.shape[1]} channels, kernel expects {w.shape[1]}")
    cols, out_spatial = _im2col(xb, kernel)
    out = _conv_fwd_cols(cols, out_spatial, w, np.asarray(bias, dtype=np.float64))
    return out[0] if single else out


def conv_backward(xpad: np.ndarray, w: np.ndarray, upstream: np.ndarray):
    """Gradients (d xpad, d W, d bias) of the valid cross-correlation."""
    w = np.asarray(w, dtype=np.float64)
    kernel = tuple(w.shape[2:])
    xb, single = _as_batched(xpad, len(kernel))
    ub, _ = _as_batched(upstream, len(kernel))
    cols, out_spatial = _im2col(xb, kernel)
    dxpad, dw, db = _conv_bwd_cols(cols, out_spatial, xb.shape, kernel, w, ub)
    return (dxpad[0] if single else dxpad), dw, db


def relu_forward(x: np.ndarray) -> np.ndarray:
    return np.maximum(np.asarray(x, dtype=np.float64), 0.0)


def relu_backward(x: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    # subgradient 0 at the kink
    return np.asarray(upstream) * (np.asarray(x) > 0.0)


def _pool_fwd(x: np.ndarray, window: tuple[int, ...]) -> np.ndarray:
    d = len(window)
    lead = x.shape[: x.ndim - d]
    spatial = x.shape[x.ndim - d :]
    shape = list(lead)
    sum_axes = []
    for i, (s, w) in enumerate(zip(spatial, window)):
        shape.extend([s // w, w])
        sum_axes.append(len(lead) + 2 * i + 1)
    return x.reshape(shape).sum(axis=tuple(sum_axes))


def _pool_bwd(x_shape, window: tuple[int, ...], upstream: np.ndarray) -> np.ndarray:
    d = len(window)
    lead = x_shape[: len(x_shape) - d]
    spatial = x_shape[len(x_shape) - d :]
    inter = list(lead)
    up_view = list(lead)
    for s, w in zip(spatial, window):
        inter.extend([s // w, w])
        up_view.extend([s // w, 1])
    out = np.broadcast_to(upstream.reshape(up_view), inter)
    return out.reshape(x_shape).copy()


def sum_pool_forward(x: np.ndarray, window: tuple[int, ...]) -> np.ndarray:
    """Non-overlapping sum pooling; a full-extent window sums out space."""
    x = np.asarray(x, dtype=np.float64)
    spatial = x.shape[x.ndim - len(window):]
    if any(s % w != 0 for s, w in zip(spatial, window)):
        raise ShapeMismatch(f"window {window} does not tile spatial {spatial}")
    return _pool_fwd(x, window)


def sum_pool_backward(x: np.ndarray, window: tuple[int, ...], upstream: np.ndarray) -> np.ndarray:
    return _pool_bwd(np.asarray(x).shape, window, np.asarray(upstream, dtype=np.float64))


def dense_forward(x: np.ndarray, w: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Affine map on flattened features; accepts (features,) or (B, ...)."""
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    if x.ndim == 1 or x.size == w.shape[1]:
        return w @ x.reshape(-1) + bias
    flat = x.reshape(x.shape[0], -1)
    if flat.shape[1] != w.shape[1]:
        raise ShapeMismatch(f"dense expects {w.shape[1]} features, got {flat.shape[1]}")
    return flat @ w.T + bias


def dense_backward(x: np.ndarray, w: np.ndarray, upstream: np.ndarray):
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    upstream = np.asarray(upstream, dtype=np.float64)
    if x.ndim == 1 or x.size == w.shape[1]:
        flat = x.reshape(1, -1)
        up = upstream.reshape(1, -1)
        return (up @ w).reshape(x.shape), up.T @ flat, up.reshape(-1)
    flat = x.reshape(x.shape[0], -1)
    dw = upstream.T @ flat
    db = upstream.sum(axis=0)
    dx = (upstream @ w).reshape(x.shape)
    return dx, dw, db


# ---------------------------------------------------------------------------
# network evaluation


def forward_batch(spec: NetworkSpec, params: Params, xb: np.ndarray, keep_cache: bool = False):
    """Evaluate a batch (B, C, *S); returns (outputs (B,), caches)."""
    xb = np.asarray(xb, dtype=np.float64)
    if xb.shape[1:] != (spec.input_channels, *spec.input_spatial):
        raise ShapeMismatch(
            f"input shape {xb.shape[1:]} does not match spec "
            f"({spec.input_channels}, {spec.input_spatial})"
        )
    caches = []
    x = xb
    for i, layer in enumerate(spec.layers):
        if isinstance(layer, PeriodicConv):
            views = params.layer_views(i)
            xpad = periodic_pad(x, layer.kernel)
            cols, out_spatial = _im2col(xpad, layer.kernel)
            caches.append((cols, xpad.shape, x.shape[2:], out_spatial) if keep_cache else None)
            x = _conv_fwd_cols(cols, out_spatial, views["W"], views["b"])
        elif isinstance(layer, ReLU):
            caches.append(x if keep_cache else None)
            x = relu_forward(x)
        elif isinstance(layer, SumPool):
            caches.append(x.shape if keep_cache else None)
            x = _pool_fwd(x, layer.window)
        elif isinstance(layer, Dense):
            flat = x.reshape(x.shape[0], -1)
            caches.append((flat, x.shape) if keep_cache else None)
            views = params.layer_views(i)
            x = flat @ views["W"].T + views["b"]
    b = xb.shape[0]
    if x.size != b:
        raise ShapeMismatch(f"network output has {x.size // b} values per sample, want 1")
    return x.reshape(b), caches


def backward_batch(spec: NetworkSpec, params: Params, caches, upstream: np.ndarray) -> np.ndarray:
    """Accumulate parameter gradients of sum_b upstream_b * output_b into params.grad."""
    grad = params.grad
    shapes = _layer_shapes(spec)
    b = upstream.shape[0]
    channels, spatial = shapes[-1]
    dx = upstream.reshape(b, channels, *spatial).astype(np.float64)
    layout, _ = _param_layout(spec)
    for i in range(len(spec.layers) - 1, -1, -1):
        layer = spec.layers[i]
        if isinstance(layer, PeriodicConv):
            cols, xpad_shape, in_spatial, out_spatial = caches[i]
            views = params.layer_views(i)
            dxpad, dw, db = _conv_bwd_cols(cols, out_spatial, xpad_shape, layer.kernel, views["W"], dx)
            entries = layout[i]
            grad[entries[0][2]] += dw.reshape(-1)
            grad[entries[1][2]] += db
            dx = _unpad_adjoint(dxpad, layer.kernel, in_spatial)
        elif isinstance(layer, ReLU):
            dx = relu_backward(caches[i], dx)
        elif isinstance(layer, SumPool):
            dx = _pool_bwd(caches[i], layer.window, dx)
        elif isinstance(layer, Dense):
            flat, x_shape = caches[i]
            views = params.layer_views(i)
            up2 = dx.reshape(b, -1)
            entries = layout[i]
            grad[entries[0][2]] += (up2.T @ flat).reshape(-1)
            grad[entries[1][2]] += up2.sum(axis=0)
            dx = (up2 @ views["W"]).reshape(x_shape)
    return grad


def _input_to_batch(spec: NetworkSpec, x) -> np.ndarray:
    if isinstance(x, Field):
        arr = x.values.reshape((1, 1, *x.grid.shape))
    else:
        arr = np.asarray(x, dtype=np.float64)
        want = (spec.input_channels, *spec.input_spatial)
        if arr.shape == want:
            arr = arr[None]
        elif arr.size == int(np.prod(want, dtype=np.int64)):
            arr = arr.reshape((1, *want))
        else:
            raise ShapeMismatch(f"cannot view input of shape {arr.shape} as {want}")
    return arr


def forward(spec: NetworkSpec, params: Params, x) -> float:
    """Scalar network output for one field (or raw tensor)."""
    out, _ = forward_batch(spec, params, _input_to_batch(spec, x))
    return float(out[0])


def backward(spec: NetworkSpec, params: Params, x) -> np.ndarray:
    """Gradient of the scalar output with respect to the flat parameters."""
    xb = _input_to_batch(spec, x)
    _, caches = forward_batch(spec, params, xb, keep_cache=True)
    params.zero_grad()
    backward_batch(spec, params, caches, np.ones(1))
    return params.grad.copy()


def predict(spec: NetworkSpec, params: Params, inputs: np.ndarray, chunk: int = 2048) -> np.ndarray:
    """Outputs for a (N, n^d) matrix of flattened fields, evaluated in chunks."""
    inputs = np.asarray(inputs, dtype=np.float64)
    n = inputs.shape[0]
    want = (spec.input_channels, *spec.input_spatial)
    out = np.empty(n)
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        xb = inputs[start:stop].reshape((stop - start, *want))
        out[start:stop], _ = forward_batch(spec, params, xb)
    return out


# ---------------------------------------------------------------------------
# architectures


def build_single_conv_arch(n: int, d: int, alpha: int) -> NetworkSpec:
    """Whole-grid periodic conv -> ReLU -> global sum pool -> dense readout.

    Parameter count is alpha * n^d + 2 alpha + 1.
    """
    if n < 2 or alpha < 1:
        raise ValueError("need n >= 2 and alpha >= 1")
    spatial = (n,) * d
    return NetworkSpec(
        input_channels=1,
        input_spatial=spatial,
        layers=(
            PeriodicConv(in_ch=1, out_ch=alpha, kernel=spatial),
            ReLU(),
            SumPool(window=spatial),
            Dense(in_features=alpha, out_features=1),
        ),
    )


def _pointwise_stack(depth: int, width: int) -> tuple[LayerSpec, ...]:
    """depth kernel-1 convs, channels 1 -> width -> ... -> width -> 1,
    ReLU between them (none after the last)."""
    if depth < 2:
        raise ValueError("a stage needs at least 2 conv layers (1->width->1)")
    chans = [1] + [width] * (depth - 1) + [1]
    layers: list[LayerSpec] = []
    for i in range(depth):
        layers.append(PeriodicConv(in_ch=chans[i], out_ch=chans[i + 1], kernel=(1,)))
        if i < depth - 1:
            layers.append(ReLU())
    return tuple(layers)


def build_1d_three_stage_arch(n: int, width: int = 16, stage_depth: int = 3) -> NetworkSpec:
    """Pointwise stack, full-width sum pool, then the same stack on the scalar."""
    stage = _pointwise_stack(stage_depth, width)
    return NetworkSpec(
        input_channels=1,
        input_spatial=(n,),
        layers=stage + (SumPool(window=(n,)),) + stage,
    )


def stage1_layer_count(spec: NetworkSpec) -> int:
    """Number of layers before the sum pool of a three-stage network."""
    for i, layer in enumerate(spec.layers):
        if isinstance(layer, SumPool):
            if i == 0:
                break
            return i
    raise ValueError("not a three-stage network: no leading stage before a sum pool")


def extract_stage1_response(spec: NetworkSpec, params: Params, x_values: np.ndarray) -> np.ndarray:
    """Pointwise map learned by stage 1, evaluated on scalar inputs.

    Each value is fed as a single-entry field through the layers before the
    sum pool; only valid when those layers are all kernel-1 convs / ReLUs.
    """
    n_stage = stage1_layer_count(spec)
    stage_layers = spec.layers[:n_stage]
    for layer in stage_layers:
        if isinstance(layer, PeriodicConv) and layer.kernel != (1,):
            raise ValueError("stage 1 must be pointwise (kernel-1) convolutions")
        if isinstance(layer, (SumPool, Dense)):
            raise ValueError("stage 1 must contain only convs and ReLUs")
    sub = NetworkSpec(input_channels=1, input_spatial=(1,), layers=stage_layers)
    sub_count = param_count(sub)
    sub_params = Params(sub, params.flat[:sub_count])
    xs = np.asarray(x_values, dtype=np.float64).reshape(-1)
    xb = xs.reshape(-1, 1, 1)
    out = xb
    for i, layer in enumerate(sub.layers):
        if isinstance(layer, PeriodicConv):
            views = sub_params.layer_views(i)
            cols, out_spatial = _im2col(out, (1,))
            out = _conv_fwd_cols(cols, out_spatial, views["W"], views["b"])
        else:
            out = relu_forward(out)
    return out.reshape(-1)


# ---------------------------------------------------------------------------
# checkpoint format


def spec_to_dict(spec: NetworkSpec) -> dict:
    layers = []
    for layer in spec.layers:
        if isinstance(layer, PeriodicConv):
            layers.append({"kind": "periodic_conv", "in_ch": layer.in_ch,
                           "out_ch": layer.out_ch, "kernel": list(layer.kernel)})
        elif isinstance(layer, ReLU):
            layers.append({"kind": "relu"})
        elif isinstance(layer, SumPool):
            layers.append({"kind": "sum_pool", "window": list(layer.window)})
        elif isinstance(layer, Dense):
            layers.append({"kind": "dense", "in": layer.in_features, "out": layer.out_features})
    return {
        "input_channels": spec.input_channels,
        "input_spatial": list(spec.input_spatial),
        "layers": layers,
    }


def spec_from_dict(data: dict) -> NetworkSpec:
    layers: list[LayerSpec] = []
    for entry in data["layers"]:
        kind = entry["kind"]
        if kind == "periodic_conv":
            layers.append(PeriodicConv(entry["in_ch"], entry["out_ch"], tuple(entry["kernel"])))
        elif kind == "relu":
            layers.append(ReLU())
        elif kind == "sum_pool":
            layers.append(SumPool(tuple(entry["window"])))
        elif kind == "dense":
            layers.append(Dense(entry["in"], entry["out"]))
        else:
            raise ValueError(f"unknown layer kind {kind!r}")
    return NetworkSpec(
        input_channels=data["input_channels"],
        input_spatial=tuple(data["input_spatial"]),
        layers=tuple(layers),
    )


def save_checkpoint(
    path,
    spec: NetworkSpec,
    params: Params,
    whiten: Optional[WhitenStats] = None,
    config_hash: str = "",
    extra: Optional[dict] = None,
) -> None:
    """Write architecture + whitening + flat f64 parameters under PDESURM1."""
    header = {
        "format_version": MODEL_FORMAT_VERSION,
        "arch": spec_to_dict(spec),
        "param_count": param_count(spec),
        "whiten": None if whiten is None else
        {"mean": whiten.mean.tolist(), "std": whiten.std.tolist()},
        "config_hash": config_hash,
        "extra": extra or {},
    }
    blob = json.dumps(header).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(params.flat.astype("<f8").tobytes())


def load_checkpoint(path):
    """Returns (spec, params, whiten or None, header dict)."""
    raw = Path(path).read_bytes()
    if raw[:8] != MODEL_MAGIC:
        raise ValueError(f"{path}: not a PDESURM1 checkpoint")
    (blob_len,) = struct.unpack_from("<I", raw, 8)
    header = json.loads(raw[12 : 12 + blob_len].decode("utf-8"))
    if header["format_version"] != MODEL_FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint version {header['format_version']}")
    spec = spec_from_dict(header["arch"])
    flat = np.frombuffer(raw, dtype="<f8", count=header["param_count"], offset=12 + blob_len)
    params = Params(spec, flat)
    whiten = None
    if header["whiten"] is not None:
        whiten = WhitenStats(
            mean=np.array(header["whiten"]["mean"]),
            std=np.array(header["whiten"]["std"]),
        )
    return spec, params, whiten, header
