"""Minimal reverse-mode autodiff over dense float64 numpy arrays.

Only the operations the two-stage model needs are provided. Every op builds
a node holding the forward value and a closure that routes the upstream
gradient to its parents; Tensor.backward() runs the closures in reverse
topological order. Convolutions use valid mode (no padding) and true
convolution semantics (kernels are flipped).
"""

from __future__ import annotations

import numpy as np

from .errors import NumericalError, ShapeError

# When True, every op output is checked for NaN/Inf (cheap arrays always,
# large internal buffers too). Toggled by set_debug_checks.
_DEBUG_CHECKS = False


def set_debug_checks(enabled: bool) -> None:
    global _DEBUG_CHECKS
    _DEBUG_CHECKS = bool(enabled)


def debug_checks_enabled() -> bool:
    return _DEBUG_CHECKS


def _check_finite(op: str, arr: np.ndarray) -> None:
    if not np.all(np.isfinite(arr)):
        raise NumericalError(f"non-finite value produced by op '{op}'")


class Tensor:
    """A float64 array plus the bookkeeping for reverse-mode gradients."""

    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, op: str = "leaf"):
        self.data = np.ascontiguousarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self.op = op
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(op={self.op}, shape={self.data.shape}, requires_grad={self.requires_grad})"

    def backward(self) -> None:
        """Accumulate gradients of this scalar into every reachable parent."""
        if self.data.size != 1:
            raise ShapeError(f"backward() needs a scalar, got shape {self.data.shape}")
        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited or not node.requires_grad:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # Small operator sugar; heavy lifting lives in the module functions.
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __sub__(self, other):
        return add(self, mul(_as_tensor(other), _as_tensor(-1.0)))

    def __neg__(self):
        return mul(self, _as_tensor(-1.0))


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def constant(data) -> Tensor:
    return Tensor(data, requires_grad=False, op="constant")


def param(data) -> Tensor:
    return Tensor(data, requires_grad=True, op="param")


def make_op(data, parents, backward, op: str) -> Tensor:
    """Build an op node; backward(g) must accumulate into the parents."""
    out = Tensor(data, op=op)
    out.requires_grad = any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = tuple(parents)
        out._backward = backward
    if _DEBUG_CHECKS:
        _check_finite(op, out.data)
    return out


def accumulate(t: Tensor, g: np.ndarray) -> None:
    """Add a gradient contribution to a tensor (no-op for constants)."""
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Reduce a broadcast gradient back to the original operand shape."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise and reduction ops


def add(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data + b.data

    def backward(g):
        accumulate(a, _unbroadcast(g, a.data.shape))
        accumulate(b, _unbroadcast(g, b.data.shape))

    return make_op(out_data, (a, b), backward, "add")


def mul(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data * b.data

    def backward(g):
        accumulate(a, _unbroadcast(g * b.data, a.data.shape))
        accumulate(b, _unbroadcast(g * a.data, b.data.shape))

    return make_op(out_data, (a, b), backward, "mul")


def square(a: Tensor) -> Tensor:
    def backward(g):
        accumulate(a, g * 2.0 * a.data)

    return make_op(a.data * a.data, (a,), backward, "square")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0

    def backward(g):
        accumulate(a, g * mask)

    return make_op(np.where(mask, a.data, 0.0), (a,), backward, "relu")


def sigmoid(a: Tensor) -> Tensor:
    s = sigmoid_array(a.data)

    def backward(g):
        accumulate(a, g * s * (1.0 - s))

    return make_op(s, (a,), backward, "sigmoid")


def sigmoid_array(x: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function on a plain array."""
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def exp(a: Tensor) -> Tensor:
    e = np.exp(a.data)

    def backward(g):
        accumulate(a, g * e)

    return make_op(e, (a,), backward, "exp")


def log_floor(a: Tensor, floor: float = 1e-10) -> Tensor:
    """log(max(x, floor)); the gradient is zero wherever x <= floor."""
    clamped = np.maximum(a.data, floor)
    above = a.data > floor

    def backward(g):
        accumulate(a, g * np.where(above, 1.0 / clamped, 0.0))

    return make_op(np.log(clamped), (a,), backward, "log_floor")


def sum_all(a: Tensor) -> Tensor:
    def backward(g):
        accumulate(a, np.broadcast_to(g, a.data.shape).copy())

    return make_op(np.sum(a.data), (a,), backward, "sum_all")


def mean_all(a: Tensor) -> Tensor:
    n = a.data.size

    def backward(g):
        accumulate(a, np.broadcast_to(g / n, a.data.shape).copy())

    return make_op(np.mean(a.data), (a,), backward, "mean_all")


# ---------------------------------------------------------------------------
# shape ops


def reshape(a: Tensor, shape) -> Tensor:
    def backward(g):
        accumulate(a, g.reshape(a.data.shape))

    return make_op(a.data.reshape(shape), (a,), backward, "reshape")


def gather_rows(a: Tensor, perm: np.ndarray) -> Tensor:
    """Reorder the leading axis by a permutation of indices."""
    perm = np.asarray(perm)

    def backward(g):
        scattered = np.zeros_like(a.data)
        scattered[perm] = g
        accumulate(a, scattered)

    return make_op(a.data[perm], (a,), backward, "gather_rows")


def slice_lastdim(a: Tensor, lo: int, hi: int) -> Tensor:
    def backward(g):
        padded = np.zeros_like(a.data)
        padded[..., lo:hi] = g
        accumulate(a, padded)

    return make_op(a.data[..., lo:hi], (a,), backward, "slice_lastdim")


# ---------------------------------------------------------------------------
# dense layers


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """x @ weight.T + bias over the last axis; weight is (out, in)."""
    if x.data.shape[-1] != weight.data.shape[1]:
        raise ShapeError(f"linear: input dim {x.data.shape[-1]} != weight in-dim "
                         f"{weight.data.shape[1]}")
    out_data = x.data @ weight.data.T + bias.data

    def backward(g):
        g2 = g.reshape(-1, weight.data.shape[0])
        x2 = x.data.reshape(-1, weight.data.shape[1])
        accumulate(weight, g2.T @ x2)
        accumulate(bias, g2.sum(axis=0))
        if x.requires_grad:
            accumulate(x, (g2 @ weight.data).reshape(x.data.shape))

    return make_op(out_data, (x, weight, bias), backward, "linear")


def scale_rows(x: Tensor, w: Tensor) -> Tensor:
    """Multiply each row x[..., i, :] by the scalar w[..., i]."""
    if x.data.shape[:-1] != w.data.shape:
        raise ShapeError(f"scale_rows: weights {w.data.shape} do not match rows "
                         f"of {x.data.shape}")
    out_data = x.data * w.data[..., None]

    def backward(g):
        accumulate(w, (g * x.data).sum(axis=-1))
        accumulate(x, g * w.data[..., None])

    return make_op(out_data, (x, w), backward, "scale_rows")


def scale_maps(x: Tensor, w: Tensor) -> Tensor:
    """Multiply each 2-D map x[..., i, :, :] by the scalar w[..., i]."""
    if x.data.shape[:-2] != w.data.shape:
        raise ShapeError(f"scale_maps: weights {w.data.shape} do not match maps "
                         f"of {x.data.shape}")
    out_data = x.data * w.data[..., None, None]

    def backward(g):
        accumulate(w, (g * x.data).sum(axis=(-2, -1)))
        accumulate(x, g * w.data[..., None, None])

    return make_op(out_data, (x, w), backward, "scale_maps")


# ---------------------------------------------------------------------------
# softmax family


def softmax_lastdim(a: Tensor) -> Tensor:
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    w = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        inner = (g * w).sum(axis=-1, keepdims=True)
        accumulate(a, w * (g - inner))

    return make_op(w, (a,), backward, "softmax")


def log_softmax_lastdim_array(x: np.ndarray) -> np.ndarray:
    shifted = x - x.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax_cross_entropy(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean of -log p(target) over the batch; logits is (B, C)."""
    targets = np.asarray(targets, dtype=np.intp)
    if logits.data.ndim != 2 or targets.shape != (logits.data.shape[0],):
        raise ShapeError(f"softmax_cross_entropy: logits {logits.data.shape} vs "
                         f"targets {targets.shape}")
    batch = logits.data.shape[0]
    logp = log_softmax_lastdim_array(logits.data)
    loss = -logp[np.arange(batch), targets].mean()
    probs = np.exp(logp)

    def backward(g):
        d = probs.copy()
        d[np.arange(batch), targets] -= 1.0
        accumulate(logits, (float(g) / batch) * d)

    return make_op(loss, (logits,), backward, "softmax_cross_entropy")


# ---------------------------------------------------------------------------
# stage-specific fused ops


def frame_energies(frames: np.ndarray, kernels: Tensor, floor: float = 1e-10) -> Tensor:
    """Per-frame valid convolution with each kernel, squared, mean-pooled, log.

    frames is a constant (B, t, s) array of raw sample frames; kernels is
    (f, k). Returns (B, f, t) log energies. True convolution: kernels are
    flipped before the sliding dot products.
    """
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 3:
        raise ShapeError(f"frame_energies: frames must be (B, t, s), got {frames.shape}")
    batch, t, s = frames.shape
    f, k = kernels.data.shape
    if s < k:
        raise ShapeError(f"frame_energies: frame length {s} shorter than kernel {k}")
    n_out = s - k + 1
    flipped = np.ascontiguousarray(kernels.data[:, ::-1])
    conv_cache = []
    x = np.empty((batch, f, t))
    for b in range(batch):
        windows = np.lib.stride_tricks.sliding_window_view(frames[b], k, axis=-1)
        conv = windows.reshape(t * n_out, k) @ flipped.T  # (t*n_out, f)
        conv_cache.append(conv)
        energy = np.einsum("tof,tof->tf", *(conv.reshape(t, n_out, f),) * 2) / n_out
        x[b] = np.log(np.maximum(energy, floor)).T
        if _DEBUG_CHECKS:
            _check_finite("frame_energies.conv", conv)

    def backward(g):
        d_flipped = np.zeros_like(flipped)
        for b in range(batch):
            energy = (conv_cache[b] ** 2).reshape(t, n_out, f).mean(axis=1)
            d_energy = g[b].T * np.where(energy > floor, 1.0 / np.maximum(energy, floor), 0.0)
            d_conv = conv_cache[b] * np.repeat(d_energy, n_out, axis=0) * (2.0 / n_out)
            windows = np.lib.stride_tricks.sliding_window_view(frames[b], k, axis=-1)
            d_flipped += d_conv.T @ windows.reshape(t * n_out, k)
        accumulate(kernels, d_flipped[:, ::-1])

    return make_op(x, (kernels,), backward, "frame_energies")


def instance_norm_rows(y: Tensor, c: float = 1e-4) -> Tensor:
    """Per-row normalization over the last axis with population statistics."""
    t = y.data.shape[-1]
    m = y.data.mean(axis=-1, keepdims=True)
    var = y.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + c)
    z = (y.data - m) * inv

    def backward(g):
        gm = g.mean(axis=-1, keepdims=True)
        gz = (g * z).mean(axis=-1, keepdims=True)
        accumulate(y, inv * (g - gm - z * gz))

    return make_op(z, (y,), backward, "instance_norm_rows")


def conv2d_valid(z: Tensor, kernels: Tensor) -> Tensor:
    """True valid 2-D convolution of (B, H, W) inputs with (K, kh, kw) kernels."""
    if z.data.ndim != 3 or kernels.data.ndim != 3:
        raise ShapeError(f"conv2d_valid: need (B,H,W) and (K,kh,kw), got "
                         f"{z.data.shape} and {kernels.data.shape}")
    _, h, w = z.data.shape
    _, kh, kw = kernels.data.shape
    if h < kh or w < kw:
        raise ShapeError(f"conv2d_valid: input {z.data.shape} smaller than kernel "
                         f"{kernels.data.shape}")
    flipped = kernels.data[:, ::-1, ::-1]
    windows = np.lib.stride_tricks.sliding_window_view(z.data, (kh, kw), axis=(1, 2))
    out_data = np.einsum("brcij,kij->bkrc", windows, flipped, optimize=True)

    def backward(g):
        d_flipped = np.einsum("bkrc,brcij->kij", g, windows, optimize=True)
        accumulate(kernels, d_flipped[:, ::-1, ::-1])
        if z.requires_grad:
            gp = np.pad(g, ((0, 0), (0, 0), (kh - 1, kh - 1), (kw - 1, kw - 1)))
            gwin = np.lib.stride_tricks.sliding_window_view(gp, (kh, kw), axis=(2, 3))
            accumulate(z, np.einsum("bkpquv,kuv->bpq", gwin, kernels.data, optimize=True))

    return make_op(out_data, (z, kernels), backward, "conv2d_valid")


def maxpool2x2(x: Tensor) -> Tensor:
    """2x2 max pooling with stride 2; odd trailing rows/columns are dropped."""
    b, k, h, w = x.data.shape
    h2, w2 = h // 2, w // 2
    tiles = (x.data[:, :, :2 * h2, :2 * w2]
             .reshape(b, k, h2, 2, w2, 2)
             .transpose(0, 1, 2, 4, 3, 5)
             .reshape(b, k, h2, w2, 4))
    best = tiles.argmax(axis=-1)
    out_data = np.take_along_axis(tiles, best[..., None], axis=-1)[..., 0]

    def backward(g):
        d_tiles = np.zeros_like(tiles)
        np.put_along_axis(d_tiles, best[..., None], g[..., None], axis=-1)
        d = np.zeros_like(x.data)
        d[:, :, :2 * h2, :2 * w2] = (d_tiles
                                     .reshape(b, k, h2, w2, 2, 2)
                                     .transpose(0, 1, 2, 4, 3, 5)
                                     .reshape(b, k, 2 * h2, 2 * w2))
        accumulate(x, d)

    return make_op(out_data, (x,), backward, "maxpool2x2")


class BatchNormState:
    """Running statistics for one batch-norm layer (one entry per map)."""

    def __init__(self, num_maps: int):
        self.running_mean = np.zeros(num_maps)
        self.running_var = np.ones(num_maps)

    def copy(self) -> "BatchNormState":
        dup = BatchNormState(len(self.running_mean))
        dup.running_mean = self.running_mean.copy()
        dup.running_var = self.running_var.copy()
        return dup


def batch_norm_maps(x: Tensor, gamma: Tensor, beta: Tensor, state: BatchNormState,
                    training: bool, eps: float = 1e-4, momentum: float = 0.1,
                    update_running: bool = True) -> Tensor:
    """Normalize (B, K, H, W) per map over (batch, H, W).

    Training mode uses batch statistics (population variance) and, unless
    update_running is False, folds them into the running estimates.
    Inference mode uses the running statistics.
    """
    if x.data.ndim != 4:
        raise ShapeError(f"batch_norm_maps: need (B,K,H,W), got {x.data.shape}")
    axes = (0, 2, 3)
    if training:
        m = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        if update_running:
            state.running_mean = (1 - momentum) * state.running_mean + momentum * m
            state.running_var = (1 - momentum) * state.running_var + momentum * var
    else:
        m, var = state.running_mean, state.running_var
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - m[None, :, None, None]) * inv[None, :, None, None]
    out_data = gamma.data[None, :, None, None] * xhat + beta.data[None, :, None, None]

    def backward(g):
        accumulate(gamma, (g * xhat).sum(axis=axes))
        accumulate(beta, g.sum(axis=axes))
        if not x.requires_grad:
            return
        dxhat = g * gamma.data[None, :, None, None]
        if training:
            gm = dxhat.mean(axis=axes)
            gz = (dxhat * xhat).mean(axis=axes)
            dx = inv[None, :, None, None] * (dxhat - gm[None, :, None, None]
                                             - xhat * gz[None, :, None, None])
        else:
            dx = dxhat * inv[None, :, None, None]
        accumulate(x, dx)

    return make_op(out_data, (x, gamma, beta), backward, "batch_norm_maps")
