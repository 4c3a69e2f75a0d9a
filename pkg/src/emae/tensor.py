"""Dense float64 tensors with reverse-mode automatic differentiation.

This is a deliberately small engine: it provides exactly the operations the
signal models need (elementwise arithmetic, matmul, strided grouped conv2d,
reductions, layer norm, softmax, GELU) plus `backward` over the implicit
compute graph. Everything is 64-bit so gradients can be checked against
central finite differences at tight tolerances.

Conventions:
  - Tensors produced by operations are treated as immutable; only leaf
    parameters are updated (by the optimizer) between graph constructions.
  - Every forward result is checked for NaN/Inf: numerical blow-up raises
    `NumericError` instead of silently propagating.
  - Node ids are assigned in construction order, so ascending id order is a
    topological order of any graph by construction.
"""

from __future__ import annotations

import contextlib
import itertools
import math
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, NumericError, ShapeError

_node_ids = itertools.count()
_grad_enabled = True

GELU_TANH_COEFF = 0.044715  # fixed tanh-approximation constant


@contextlib.contextmanager
def no_grad():
    """Disable graph construction inside the block (pure numpy forwards)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled() -> bool:
    return _grad_enabled


def _check_finite(data: np.ndarray, op: str) -> None:
    if not np.all(np.isfinite(data)):
        raise NumericError(f"operation '{op}' produced non-finite values")


# Non-finite forward results raise NumericError, so numpy's own warnings for
# the same conditions are redundant noise.
_quiet = dict(over="ignore", invalid="ignore", divide="ignore")


class Tensor:
    """A float64 array plus its position in the compute graph."""

    __slots__ = ("data", "requires_grad", "grad", "op", "parents", "vjp", "node_id")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: Tensor | None = None
        self.op = "leaf"
        self.parents: tuple[Tensor, ...] = ()
        # vjp(grad_out) -> per-parent cotangents (None where not needed)
        self.vjp: Callable[[np.ndarray], tuple] | None = None
        self.node_id = next(_node_ids)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        grad = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op!r}{grad})"

    # Operator sugar; all routed through the module-level ops.
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __truediv__(self, other):
        return div(self, _as_tensor(other))

    def __rtruediv__(self, other):
        return div(_as_tensor(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, _as_tensor(other))

    def __pow__(self, exponent):
        return pow_scalar(self, exponent)


def _as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _make(op: str, data: np.ndarray, parents: Sequence[Tensor], vjp) -> Tensor:
    _check_finite(data, op)
    track = _grad_enabled and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=track)
    if track:
        out.op = op
        out.parents = tuple(parents)
        out.vjp = vjp
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `grad` down to `shape`, inverting numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# elementwise ops


def add(a: Tensor, b: Tensor) -> Tensor:
    with np.errstate(**_quiet):
        out = a.data + b.data

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make("add", out, (a, b), vjp)


def sub(a: Tensor, b: Tensor) -> Tensor:
    with np.errstate(**_quiet):
        out = a.data - b.data

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make("sub", out, (a, b), vjp)


def mul(a: Tensor, b: Tensor) -> Tensor:
    with np.errstate(**_quiet):
        out = a.data * b.data

    def vjp(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make("mul", out, (a, b), vjp)


def div(a: Tensor, b: Tensor) -> Tensor:
    with np.errstate(**_quiet):
        out = a.data / b.data

    def vjp(g):
        ga = g / b.data
        gb = -g * out / b.data
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make("div", out, (a, b), vjp)


def neg(a: Tensor) -> Tensor:
    return _make("neg", -a.data, (a,), lambda g: (-g,))


def pow_scalar(a: Tensor, exponent: float) -> Tensor:
    p = float(exponent)
    with np.errstate(**_quiet):
        out = a.data**p

    def vjp(g):
        return (g * p * a.data ** (p - 1.0),)

    return _make("pow", out, (a,), vjp)


def exp(a: Tensor) -> Tensor:
    with np.errstate(**_quiet):
        out = np.exp(a.data)

    def vjp(g):
        return (g * out,)

    return _make("exp", out, (a,), vjp)


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)

    def vjp(g):
        return (g * (1.0 - out * out),)

    return _make("tanh", out, (a,), vjp)


def sqrt(a: Tensor) -> Tensor:
    with np.errstate(**_quiet):
        out = np.sqrt(a.data)

    def vjp(g):
        return (g / (2.0 * out),)

    return _make("sqrt", out, (a,), vjp)


def gelu(a: Tensor) -> Tensor:
    """GELU, tanh approximation: 0.5*x*(1 + tanh(sqrt(2/pi)*(x + 0.044715*x^3)))."""
    c = math.sqrt(2.0 / math.pi)
    inner = c * (a + GELU_TANH_COEFF * (a * a * a))
    return 0.5 * (a * (1.0 + tanh(inner)))


# ---------------------------------------------------------------------------
# reductions and shape ops


def _norm_axes(axis, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, a.ndim)
    out = a.data.sum(axis=axes if axes else None, keepdims=keepdims)

    def vjp(g):
        if not keepdims:
            expanded = list(a.shape)
            for ax in axes:
                expanded[ax] = 1
            g = g.reshape(expanded)
        return (np.broadcast_to(g, a.shape),)

    return _make("sum", out, (a,), vjp)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, a.ndim)
    count = 1
    for ax in axes:
        count *= a.shape[ax]
    return tsum(a, axis=axis, keepdims=keepdims) * (1.0 / count)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    out = a.data.reshape(shape)

    def vjp(g):
        return (g.reshape(a.shape),)

    return _make("reshape", out, (a,), vjp)


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    out = a.data.transpose(axes)

    def vjp(g):
        return (g.transpose(inverse),)

    return _make("transpose", out, (a,), vjp)


def pad2d(a: Tensor, pad: tuple[tuple[int, int], tuple[int, int]]) -> Tensor:
    """Zero-pad the last two axes. Padding is always this explicit step;
    conv2d itself never pads."""
    (pt, pb), (pl, pr) = pad
    widths = [(0, 0)] * (a.ndim - 2) + [(pt, pb), (pl, pr)]
    out = np.pad(a.data, widths)

    def vjp(g):
        index = [slice(None)] * (a.ndim - 2)
        index += [slice(pt, pt + a.shape[-2]), slice(pl, pl + a.shape[-1])]
        return (g[tuple(index)],)

    return _make("pad2d", out, (a,), vjp)


# ---------------------------------------------------------------------------
# matmul and conv2d


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs rank >= 2 operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} @ {b.shape}")
    with np.errstate(**_quiet):
        out = a.data @ b.data

    def vjp(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make("matmul", out, (a, b), vjp)


def _conv_windows(x: np.ndarray, kh: int, kw: int, sh: int, sw: int) -> np.ndarray:
    """Strided view of all (kh, kw) patches: (B, C, H', W', kh, kw)."""
    b, c, h, w = x.shape
    hp = (h - kh) // sh + 1
    wp = (w - kw) // sw + 1
    sb, sc, srow, scol = x.strides
    return np.lib.stride_tricks.as_strided(
        x,
        shape=(b, c, hp, wp, kh, kw),
        strides=(sb, sc, srow * sh, scol * sw, srow, scol),
        writeable=False,
    )


def conv2d(x: Tensor, kernel: Tensor, stride: tuple[int, int] = (1, 1), groups: int = 1) -> Tensor:
    """Valid (unpadded) strided 2-d convolution with channel groups.

    x: (B, Cin, H, W); kernel: (Cout, Cin/groups, kh, kw). Output spatial
    dims are floor((H-kh)/sh)+1 by floor((W-kw)/sw)+1.
    """
    if x.ndim != 4 or kernel.ndim != 4:
        raise ShapeError(f"conv2d expects 4-d input and kernel, got {x.shape} and {kernel.shape}")
    b, cin, h, w = x.shape
    cout, cin_g, kh, kw = kernel.shape
    sh, sw = stride
    if sh < 1 or sw < 1:
        raise ContractError(f"conv2d stride must be positive, got {stride}")
    if groups < 1 or cin % groups != 0 or cout % groups != 0:
        raise ShapeError(
            f"conv2d groups={groups} must divide both Cin={cin} and Cout={cout}"
        )
    if cin_g != cin // groups:
        raise ShapeError(
            f"conv2d kernel expects {cin_g} channels per group but input provides {cin // groups}"
        )
    if kh > h or kw > w:
        raise ShapeError(f"conv2d kernel {kernel.shape} larger than input {x.shape}")

    xd = np.ascontiguousarray(x.data)
    win = _conv_windows(xd, kh, kw, sh, sw)
    hp, wp = win.shape[2], win.shape[3]
    og = cout // groups
    if groups == 1:
        out = np.einsum("bchwuv,ocuv->bohw", win, kernel.data, optimize=True)
    else:
        wing = win.reshape(b, groups, cin_g, hp, wp, kh, kw)
        kg = kernel.data.reshape(groups, og, cin_g, kh, kw)
        out = np.einsum("bgchwuv,gocuv->bgohw", wing, kg, optimize=True).reshape(b, cout, hp, wp)

    def vjp(g):
        gg = g.reshape(b, groups, og, hp, wp)
        kg = kernel.data.reshape(groups, og, cin_g, kh, kw)
        wing = win.reshape(b, groups, cin_g, hp, wp, kh, kw)
        gk = np.einsum("bgohw,bgchwuv->gocuv", gg, wing, optimize=True)
        gx = np.zeros_like(xd)
        gxg = gx.reshape(b, groups, cin_g, h, w)
        for u in range(kh):
            for v in range(kw):
                tap = np.einsum("bgohw,goc->bgchw", gg, kg[:, :, :, u, v], optimize=True)
                gxg[:, :, :, u : u + sh * hp : sh, v : v + sw * wp : sw] += tap
        return gx, gk.reshape(cout, cin_g, kh, kw)

    return _make("conv2d", out, (x, kernel), vjp)


# ---------------------------------------------------------------------------
# composite neural ops


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    """Row-stable softmax: the max is subtracted as a constant shift, which
    leaves both value and gradient unchanged."""
    shift = np.max(a.data, axis=axis, keepdims=True)
    e = exp(a - Tensor(shift))
    return e / tsum(e, axis=axis, keepdims=True)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    d = x.shape[-1] if x.ndim else 0
    if d == 0:
        raise ShapeError("layer_norm requires a non-empty last dimension")
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(
            f"layer_norm affine params must have shape ({d},), got {gamma.shape} and {beta.shape}"
        )
    mu = tmean(x, axis=-1, keepdims=True)
    centered = x - mu
    var = tmean(centered * centered, axis=-1, keepdims=True)
    normed = centered / sqrt(var + eps)
    return normed * gamma + beta


# ---------------------------------------------------------------------------
# graph and backward


@dataclass
class ComputeGraph:
    """Reachable nodes of one backward pass, ascending node id.

    Construction order is a topological order: an operation's output is
    always created after its inputs, so sorting by id puts every node after
    its parents.
    """

    nodes: list[Tensor]

    @classmethod
    def from_root(cls, root: Tensor) -> "ComputeGraph":
        seen: set[int] = set()
        collected: list[Tensor] = []
        stack = [root]
        while stack:
            t = stack.pop()
            if t.node_id in seen or not t.requires_grad:
                continue
            seen.add(t.node_id)
            collected.append(t)
            stack.extend(t.parents)
        collected.sort(key=lambda t: t.node_id)
        return cls(collected)


def backward(root: Tensor) -> dict[Tensor, Tensor]:
    """Reverse-mode gradients of scalar `root` w.r.t. reachable leaf tensors.

    Returns {leaf parameter: gradient tensor} and also stores each gradient
    on the leaf's `.grad` (overwriting any previous value).
    """
    if root.data.ndim != 0:
        raise ContractError(f"backward root must be a scalar, got shape {root.shape}")
    graph = ComputeGraph.from_root(root)
    grads: dict[int, np.ndarray] = {root.node_id: np.ones((), dtype=np.float64)}
    for node in reversed(graph.nodes):
        if node.vjp is None:
            continue  # leaf: gradient stays in `grads` for collection below
        g = grads.pop(node.node_id, None)
        if g is None:
            continue
        for parent, pg in zip(node.parents, node.vjp(g)):
            if pg is None or not parent.requires_grad:
                continue
            acc = grads.get(parent.node_id)
            grads[parent.node_id] = pg if acc is None else acc + pg
    result: dict[Tensor, Tensor] = {}
    for node in graph.nodes:
        if node.vjp is None and node.node_id in grads:
            grad = Tensor(grads[node.node_id])
            node.grad = grad
            result[node] = grad
    return result


# ---------------------------------------------------------------------------
# finite-difference checking


def numeric_gradient(loss_fn: Callable[[], Tensor], param: Tensor, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of loss_fn() w.r.t. every element of `param`.

    `loss_fn` must rebuild the forward pass from current parameter values.
    """
    flat = param.data.reshape(-1)
    grad = np.empty_like(flat)
    with no_grad():
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + h
            up = float(loss_fn().data)
            flat[i] = keep - h
            down = float(loss_fn().data)
            flat[i] = keep
            grad[i] = (up - down) / (2.0 * h)
    return grad.reshape(param.shape)


def max_relative_gradient_error(
    loss_fn: Callable[[], Tensor],
    params: Iterable[Tensor],
    h: float = 1e-5,
) -> float:
    """Worst |analytic - central| / max(1, |central|) over all parameters."""
    analytic = backward(loss_fn())
    worst = 0.0
    for p in params:
        numeric = numeric_gradient(loss_fn, p, h=h)
        got = analytic[p].data if p in analytic else np.zeros_like(numeric)
        rel = np.abs(got - numeric) / np.maximum(1.0, np.abs(numeric))
        worst = max(worst, float(rel.max()))
    return worst
