"""A small reverse-mode autodiff engine over float64 NCHW arrays.

Only the operations the road-detection network needs are provided.  Every
op returns a new :class:`Tensor` holding a closure that pushes the output
gradient back to its parents; :meth:`Tensor.backward` runs those closures in
reverse topological order.
"""

from __future__ import annotations

import contextlib
import hashlib
import json
import math
import struct
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Callable, Iterator, Optional, Sequence

import numpy as np

from .errors import InputError, ShapeMismatch

LN10 = math.log(10.0)
LOG_EPS = 1e-12


class Tensor:
    """Dense float64 array with a lazily allocated gradient slot."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self) -> tuple:
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    def backward(self, seed: Optional[np.ndarray] = None) -> None:
        """Back-propagate from this tensor (a scalar unless ``seed`` is given)."""
        if seed is None:
            if self.data.size != 1:
                raise ShapeMismatch("backward() without a seed needs a scalar output")
            seed = np.ones_like(self.data)
        order: list[Tensor] = []
        seen: set[int] = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self._accumulate(seed)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def _make(data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    req = any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=req, _parents=tuple(parents) if req else (),
                  _backward=backward if req else None)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# ---------------------------------------------------------------------------
# MAC accounting
# ---------------------------------------------------------------------------

_MAC_COUNTERS: list["MacCounter"] = []


@dataclass
class MacCounter:
    """Multiply-accumulates performed by convolutions inside :func:`count_macs`."""

    total: int = 0
    per_call: list = field(default_factory=list)


@contextlib.contextmanager
def count_macs() -> Iterator[MacCounter]:
    counter = MacCounter()
    _MAC_COUNTERS.append(counter)
    try:
        yield counter
    finally:
        _MAC_COUNTERS.remove(counter)


class KinkRecorder:
    """Digest of every ReLU mask and max-pool argmax computed while active.

    Two evaluations with equal digests took the same piecewise-linear branch
    everywhere, so a finite difference between them is free of kink effects.
    """

    def __init__(self):
        self._h = hashlib.blake2b(digest_size=16)

    def update(self, arr: np.ndarray) -> None:
        self._h.update(np.ascontiguousarray(arr).tobytes())

    def digest(self) -> bytes:
        return self._h.digest()


_KINK_RECORDERS: list[KinkRecorder] = []


@contextlib.contextmanager
def record_kinks() -> Iterator[KinkRecorder]:
    rec = KinkRecorder()
    _KINK_RECORDERS.append(rec)
    try:
        yield rec
    finally:
        _KINK_RECORDERS.remove(rec)


def _note_branch(arr: np.ndarray) -> None:
    for rec in _KINK_RECORDERS:
        rec.update(arr)


# ---------------------------------------------------------------------------
# Convolution
# ---------------------------------------------------------------------------


def _out_size(n: int, k: int, stride: int, padding: int, dilation: int) -> int:
    return (n + 2 * padding - dilation * (k - 1) - 1) // stride + 1


def conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Optional[Tensor] = None,
    stride: int = 1,
    padding: int = 0,
    dilation: int = 1,
) -> Tensor:
    """Cross-correlation of ``(B, C, H, W)`` input with ``(O, C, k, k)`` weights."""
    if x.data.ndim != 4 or weight.data.ndim != 4:
        raise ShapeMismatch("conv2d expects 4-d input and weights")
    b, c, h, w = x.shape
    o, ci, kh, kw = weight.shape
    if ci != c:
        raise ShapeMismatch(f"conv2d input has {c} channels, weights expect {ci}")
    ho = _out_size(h, kh, stride, padding, dilation)
    wo = _out_size(w, kw, stride, padding, dilation)
    if ho <= 0 or wo <= 0:
        raise ShapeMismatch("conv2d output would be empty")

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    cols = np.empty((b, c, kh, kw, ho, wo))
    for i in range(kh):
        for j in range(kw):
            r0, c0 = i * dilation, j * dilation
            cols[:, :, i, j] = xp[:, :, r0 : r0 + stride * (ho - 1) + 1 : stride,
                                  c0 : c0 + stride * (wo - 1) + 1 : stride]
    cols2 = cols.reshape(b, c * kh * kw, ho * wo)
    wmat = weight.data.reshape(o, c * kh * kw)
    out = np.matmul(wmat, cols2)
    if bias is not None:
        out += bias.data[None, :, None]
    out = out.reshape(b, o, ho, wo)

    macs = b * o * c * kh * kw * ho * wo
    for counter in _MAC_COUNTERS:
        counter.total += macs
        counter.per_call.append(macs)

    parents = [x, weight] + ([bias] if bias is not None else [])

    def backward(g: np.ndarray) -> None:
        g2 = g.reshape(b, o, ho * wo)
        if weight.requires_grad:
            gw = np.einsum("bop,bkp->ok", g2, cols2, optimize=True)
            weight._accumulate(gw.reshape(weight.shape))
        if bias is not None and bias.requires_grad:
            bias._accumulate(g2.sum(axis=(0, 2)))
        if x.requires_grad:
            gcols = np.matmul(wmat.T, g2).reshape(b, c, kh, kw, ho, wo)
            gxp = np.zeros(xp.shape)
            for i in range(kh):
                for j in range(kw):
                    r0, c0 = i * dilation, j * dilation
                    gxp[:, :, r0 : r0 + stride * (ho - 1) + 1 : stride,
                        c0 : c0 + stride * (wo - 1) + 1 : stride] += gcols[:, :, i, j]
            if padding:
                gxp = gxp[:, :, padding : padding + h, padding : padding + w]
            x._accumulate(gxp)

    return _make(out, parents, backward)


class ConvLayer:
    """Weights, bias and geometry of one convolution."""

    def __init__(self, weight: Tensor, bias: Tensor, stride: int = 1, padding: int = 0, dilation: int = 1):
        self.weight = weight
        self.bias = bias
        self.stride = stride
        self.padding = padding
        self.dilation = dilation

    @property
    def in_channels(self) -> int:
        return self.weight.shape[1]

    @property
    def out_channels(self) -> int:
        return self.weight.shape[0]

    @property
    def kernel_size(self) -> int:
        return self.weight.shape[2]

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight, self.bias, self.stride, self.padding, self.dilation)


# ---------------------------------------------------------------------------
# Element-wise and structural ops
# ---------------------------------------------------------------------------


def _check_same(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeMismatch(f"{op}: shapes {a.shape} and {b.shape} differ")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    if _KINK_RECORDERS:
        _note_branch(mask)
    out = np.where(mask, x.data, 0.0)

    def backward(g):
        x._accumulate(g * mask)

    return _make(out, [x], backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same(a, b, "add")

    def backward(g):
        if a.requires_grad:
            a._accumulate(g)
        if b.requires_grad:
            b._accumulate(g)

    return _make(a.data + b.data, [a, b], backward)


def mul_elementwise(a: Tensor, b: Tensor) -> Tensor:
    _check_same(a, b, "mul_elementwise")

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * b.data)
        if b.requires_grad:
            b._accumulate(g * a.data)

    return _make(a.data * b.data, [a, b], backward)


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)

    def backward(g):
        a._accumulate(g * s)

    return _make(a.data * s, [a], backward)


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 4 or b.data.ndim != 4 or a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise ShapeMismatch(f"concat_channels: incompatible shapes {a.shape} and {b.shape}")
    ca = a.shape[1]

    def backward(g):
        if a.requires_grad:
            a._accumulate(g[:, :ca])
        if b.requires_grad:
            b._accumulate(g[:, ca:])

    return _make(np.concatenate([a.data, b.data], axis=1), [a, b], backward)


def slice_channels(x: Tensor, start: int, stop: int) -> Tensor:
    if not 0 <= start < stop <= x.shape[1]:
        raise ShapeMismatch(f"slice_channels: [{start}, {stop}) outside {x.shape[1]} channels")

    def backward(g):
        full = np.zeros(x.shape)
        full[:, start:stop] = g
        x._accumulate(full)

    return _make(x.data[:, start:stop].copy(), [x], backward)


def maxpool2(x: Tensor) -> Tensor:
    """2x2 max-pool, stride 2.  Ties route the gradient to the first maximum."""
    b, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeMismatch(f"maxpool2 needs even spatial dims, got {h}x{w}")
    blocks = x.data.reshape(b, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, h // 2, w // 2, 4)
    arg = blocks.argmax(axis=-1)
    if _KINK_RECORDERS:
        _note_branch(arg.astype(np.uint8))
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]

    def backward(g):
        gb = np.zeros(blocks.shape)
        np.put_along_axis(gb, arg[..., None], g[..., None], axis=-1)
        gx = gb.reshape(b, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, h, w)
        x._accumulate(gx)

    return _make(out, [x], backward)


def interp_matrix(n_out: int, n_in: int) -> np.ndarray:
    """Linear interpolation weights with half-pixel centres and edge clamping."""
    a = np.zeros((n_out, n_in))
    if n_in == 1:
        a[:, 0] = 1.0
        return a
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    i0 = np.floor(src).astype(int)
    i1 = np.minimum(i0 + 1, n_in - 1)
    frac = src - i0
    rows = np.arange(n_out)
    np.add.at(a, (rows, i0), 1.0 - frac)
    np.add.at(a, (rows, i1), frac)
    return a


def upsample_bilinear(x: Tensor, out_h: int, out_w: int) -> Tensor:
    _, _, h, w = x.shape
    ah = interp_matrix(out_h, h)
    aw = interp_matrix(out_w, w)
    out = ah @ x.data @ aw.T

    def backward(g):
        x._accumulate(ah.T @ g @ aw)

    return _make(out, [x], backward)


def softmax_channels(x: Tensor) -> Tensor:
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=1, keepdims=True)

    def backward(g):
        x._accumulate(s * (g - (g * s).sum(axis=1, keepdims=True)))

    return _make(s, [x], backward)


def spatial_mean(x: Tensor) -> Tensor:
    """Global average over H and W, keeping ``(B, C, 1, 1)``."""
    _, _, h, w = x.shape

    def backward(g):
        x._accumulate(np.broadcast_to(g / (h * w), x.shape))

    return _make(x.data.mean(axis=(2, 3), keepdims=True), [x], backward)


def expand_spatial(x: Tensor, h: int, w: int) -> Tensor:
    """Broadcast a ``(B, C, 1, 1)`` tensor to ``(B, C, h, w)``."""
    if x.shape[2:] != (1, 1):
        raise ShapeMismatch("expand_spatial expects a 1x1 spatial input")

    def backward(g):
        x._accumulate(g.sum(axis=(2, 3), keepdims=True))

    return _make(np.broadcast_to(x.data, x.shape[:2] + (h, w)).copy(), [x], backward)


def sum_all(x: Tensor) -> Tensor:
    def backward(g):
        x._accumulate(np.broadcast_to(g, x.shape))

    return _make(np.asarray(x.data.sum()), [x], backward)


def cross_entropy_log10(
    pred: Tensor, target: np.ndarray, ignore_mask: Optional[np.ndarray] = None
) -> Tensor:
    """Mean base-10 multinomial cross-entropy over unmasked pixels.

    ``pred`` holds per-pixel class probabilities ``(B, K, H, W)``; ``target``
    is one-hot with the same shape; ``ignore_mask`` is ``(B, H, W)`` with True
    for pixels that take no part in the loss.
    """
    target = np.asarray(target.data if isinstance(target, Tensor) else target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeMismatch(f"cross_entropy_log10: pred {pred.shape} vs target {target.shape}")
    b, k, h, w = pred.shape
    if ignore_mask is None:
        valid = np.ones((b, h, w))
    else:
        ignore_mask = np.asarray(ignore_mask, dtype=bool)
        if ignore_mask.shape != (b, h, w):
            raise ShapeMismatch(f"ignore mask {ignore_mask.shape} does not match {(b, h, w)}")
        valid = (~ignore_mask).astype(np.float64)
    n = valid.sum()
    if n == 0:
        return _make(np.asarray(0.0), [pred], lambda g: None)
    p = pred.data + LOG_EPS
    per_pixel = -(target * np.log10(p)).sum(axis=1)
    loss = (per_pixel * valid).sum() / n

    def backward(g):
        pred._accumulate(g * (-target / (p * LN10)) * valid[:, None] / n)

    return _make(np.asarray(loss), [pred], backward)


def weighted_sum(terms: Sequence[tuple[float, Tensor]]) -> Tensor:
    """``sum_i w_i * t_i`` over scalar tensors."""
    data = np.asarray(sum(float(wt) * t.data for wt, t in terms))
    parents = [t for _, t in terms]

    def backward(g):
        for wt, t in terms:
            if t.requires_grad:
                t._accumulate(g * float(wt))

    return _make(data, parents, backward)


# ---------------------------------------------------------------------------
# Parameters, optimiser, checkpoints
# ---------------------------------------------------------------------------


class ParameterStore:
    """Ordered, uniquely named trainable tensors plus the seed that initialised them."""

    def __init__(self, seed: int = 0):
        self.seed = seed
        self.rng = np.random.default_rng(seed)
        self._params: "OrderedDict[str, Tensor]" = OrderedDict()

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(value, dtype=np.float64), requires_grad=True)
        self._params[name] = t
        return t

    def conv(
        self,
        name: str,
        in_ch: int,
        out_ch: int,
        k: int,
        stride: int = 1,
        dilation: int = 1,
        padding: Optional[int] = None,
    ) -> ConvLayer:
        """Create a conv layer; ``padding=None`` keeps the spatial size.

        Weights are fan-in scaled normal (Kaiming, ReLU gain); biases are
        uniform in ``±1/sqrt(fan_in)`` so no unit starts exactly on a ReLU kink.
        """
        if k % 2 == 0:
            raise ValueError("kernel size must be odd")
        fan_in = in_ch * k * k
        std = math.sqrt(2.0 / fan_in)
        weight = self.add(f"{name}.weight", self.rng.normal(0.0, std, size=(out_ch, in_ch, k, k)))
        bound = 1.0 / math.sqrt(fan_in)
        bias = self.add(f"{name}.bias", self.rng.uniform(-bound, bound, size=out_ch))
        if padding is None:
            padding = dilation * (k - 1) // 2
        return ConvLayer(weight, bias, stride=stride, padding=padding, dilation=dilation)

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self):
        return iter(self._params.items())

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None

    def num_values(self) -> int:
        return sum(t.data.size for t in self._params.values())

    def state(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((k, v.data.copy()) for k, v in self._params.items())

    def load_state(self, state) -> None:
        for name, arr in state.items():
            if name not in self._params:
                raise KeyError(f"unknown parameter {name!r}")
            if self._params[name].shape != np.shape(arr):
                raise ShapeMismatch(f"{name}: checkpoint shape {np.shape(arr)} != {self._params[name].shape}")
            self._params[name].data[...] = arr


def sgd_step(params: ParameterStore, lr: float) -> None:
    """Plain gradient descent ``p <- p - lr * grad``; gradients are cleared."""
    for _, t in params:
        if t.grad is not None:
            t.data -= lr * t.grad
        t.grad = None


class SGD:
    """Momentum SGD with optional L2 weight decay (heavy-ball form)."""

    def __init__(self, params: ParameterStore, momentum: float = 0.9, weight_decay: float = 0.0):
        self.params = params
        self.momentum = momentum
        self.weight_decay = weight_decay
        self._velocity: dict[str, np.ndarray] = {}

    def step(self, lr: float) -> None:
        for name, t in self.params:
            if t.grad is None:
                continue
            g = t.grad
            if self.weight_decay:
                g = g + self.weight_decay * t.data
            if self.momentum:
                v = self._velocity.get(name)
                if v is None:
                    v = np.zeros_like(t.data)
                v *= self.momentum
                v += g
                self._velocity[name] = v
                g = v
            t.data -= lr * g
            t.grad = None


CHECKPOINT_MAGIC = b"PLARDCK\x00"
CHECKPOINT_VERSION = 1


def save_checkpoint(path, params: ParameterStore, metadata: Optional[dict] = None) -> None:
    """Write ``magic | version | meta JSON | name table | float64 payloads``.

    All integers and floats are little-endian.  The metadata JSON is written
    with sorted keys so equal inputs give equal bytes.
    """
    meta = json.dumps(metadata or {}, sort_keys=True).encode("utf-8")
    parts = [CHECKPOINT_MAGIC, struct.pack("<I", CHECKPOINT_VERSION),
             struct.pack("<I", len(meta)), meta, struct.pack("<I", len(params))]
    for name, t in params:
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack("<B", t.data.ndim) + struct.pack(f"<{t.data.ndim}I", *t.shape))
    for _, t in params:
        parts.append(np.ascontiguousarray(t.data, dtype="<f8").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def load_checkpoint(path) -> tuple[dict, "OrderedDict[str, np.ndarray]"]:
    """Return ``(metadata, name -> array)`` from a checkpoint file."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != CHECKPOINT_MAGIC:
        raise InputError(f"{path}: not a checkpoint (bad magic)")
    off = 8
    (version,) = struct.unpack_from("<I", blob, off)
    off += 4
    if version != CHECKPOINT_VERSION:
        raise InputError(f"{path}: unsupported checkpoint version {version}")
    (mlen,) = struct.unpack_from("<I", blob, off)
    off += 4
    meta = json.loads(blob[off : off + mlen].decode("utf-8"))
    off += mlen
    (count,) = struct.unpack_from("<I", blob, off)
    off += 4
    table = []
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", blob, off)
        off += 2
        name = blob[off : off + nlen].decode("utf-8")
        off += nlen
        (ndim,) = struct.unpack_from("<B", blob, off)
        off += 1
        shape = struct.unpack_from(f"<{ndim}I", blob, off)
        off += 4 * ndim
        table.append((name, shape))
    state: "OrderedDict[str, np.ndarray]" = OrderedDict()
    for name, shape in table:
        n = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(blob, dtype="<f8", count=n, offset=off).astype(np.float64).reshape(shape)
        off += 8 * n
        state[name] = arr
    if off != len(blob):
        raise InputError(f"{path}: trailing bytes in checkpoint")
    return meta, state


# ---------------------------------------------------------------------------
# Gradient verification
# ---------------------------------------------------------------------------


@dataclass
class GradCheckReport:
    max_rel_error: float
    tol: float
    per_tensor: dict
    checked: int
    failures: list
    # coordinates whose step had to shrink to stay on one branch, and those
    # that straddled a kink at every step size tried (excluded from the max)
    shrunk: int = 0
    kinks: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tol

    def summary(self) -> str:
        return (f"max rel err {self.max_rel_error:.3e} (tol {self.tol:g}) over {self.checked} "
                f"coordinates; {self.shrunk} with reduced step, {len(self.kinks)} on kinks")


def gradient_check(
    graph_fn: Callable[[ParameterStore], Tensor],
    params: ParameterStore,
    tol: float = 1e-4,
    samples: int = 50,
    h: float = 1e-3,
    seed: int = 0,
    floor: float = 1e-6,
    max_shrink: int = 4,
) -> GradCheckReport:
    """Compare analytic gradients with central finite differences.

    For each parameter tensor, ``samples`` coordinates (all of them for smaller
    tensors) are perturbed by ``±h`` and ``±h/2``; the two central differences
    are Richardson-combined to cancel the O(h^2) truncation term.  The
    relative error of a coordinate is ``|a - n| / max(|a|, |n|, floor)``, so
    coordinates smaller than ``floor`` are effectively compared absolutely.

    The default step is large on purpose.  With the O(h^2) term removed the
    truncation error at ``h = 1e-3`` is far below tolerance, whereas at
    ``h = 1e-5`` rounding noise in the loss difference (about 1e-10 absolute)
    already swamps gradients of order 1e-6.

    A difference is only meaningful if both perturbed evaluations follow the
    same ReLU / max-pool branches as the unperturbed one.  When a step crosses
    a branch switch, ``h`` is divided by 10 (up to ``max_shrink`` times); a
    coordinate that still straddles a switch is listed in ``kinks`` instead of
    being scored.
    """
    params.zero_grad()
    with record_kinks() as rec:
        loss = graph_fn(params)
    base = rec.digest()
    loss.backward()
    analytic = {name: (t.grad.copy() if t.grad is not None else np.zeros(t.shape)) for name, t in params}
    params.zero_grad()

    def evaluate() -> tuple[float, bytes]:
        with record_kinks() as r:
            value = graph_fn(params).item()
        return value, r.digest()

    rng = np.random.default_rng(seed)
    per_tensor = {}
    failures = []
    kinks = []
    shrunk = 0
    worst = 0.0
    checked = 0
    for name, t in params:
        flat = t.data.reshape(-1)
        n = flat.size
        idx = np.arange(n) if n <= samples else np.sort(rng.choice(n, size=samples, replace=False))
        tensor_worst = 0.0
        for i in idx:
            orig = flat[i]
            step = h
            numeric = None
            for attempt in range(max_shrink + 1):
                values = []
                stable = True
                for delta in (step, -step, step / 2, -step / 2):
                    flat[i] = orig + delta
                    value, digest = evaluate()
                    values.append(value)
                    stable = stable and digest == base
                flat[i] = orig
                if stable:
                    wide = (values[0] - values[1]) / (2.0 * step)
                    narrow = (values[2] - values[3]) / step
                    numeric = (4.0 * narrow - wide) / 3.0
                    shrunk += attempt > 0
                    break
                step /= 10.0
            a = analytic[name].reshape(-1)[i]
            if numeric is None:
                kinks.append((name, int(i)))
                continue
            err = abs(a - numeric) / max(abs(a), abs(numeric), floor)
            checked += 1
            if err > tensor_worst:
                tensor_worst = err
            if err >= tol:
                failures.append((name, int(i), float(a), float(numeric), float(err)))
        per_tensor[name] = tensor_worst
        worst = max(worst, tensor_worst)
    return GradCheckReport(worst, tol, per_tensor, checked, failures, shrunk, kinks)
