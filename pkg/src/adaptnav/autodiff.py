"""Dense 2-D float64 tensors with tape-based reverse-mode differentiation.

Sized for desk-scale models: row-major matrices only (scalars and vectors are
stored as 1x1 / 1xn), no broadcasting beyond bias rows and column weights.
Every op records a backward closure; Tensor.backward() runs one reverse
topological sweep and accumulates into .grad, which adam_step consumes.
"""

from __future__ import annotations

import json
from contextlib import contextmanager
from pathlib import Path

import numpy as np

CHECKPOINT_VERSION = 1

_grad_enabled = True


@contextmanager
def no_grad():
    """Disable graph recording inside the block (values only, no backward)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _as_matrix(values) -> np.ndarray:
    # no copy for float64 inputs: op outputs are always fresh arrays
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    elif arr.ndim != 2:
        raise ValueError(f"tensors are at most 2-D, got shape {arr.shape}")
    return arr


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_op")

    def __init__(self, values, requires_grad: bool = False):
        self.data = _as_matrix(values)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple = ()
        self._backward = None
        self._op = ""

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def backward(self) -> None:
        """Reverse sweep from a scalar output; visits each node exactly once."""
        if self.data.size != 1:
            raise ValueError("backward() expects a scalar output")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward()

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


class Parameter(Tensor):
    """Trainable tensor with a name and Adam moment buffers."""

    __slots__ = ("name", "adam_m", "adam_v", "adam_t")

    def __init__(self, values, name: str):
        super().__init__(values, requires_grad=True)
        self.name = name
        self.adam_m = np.zeros_like(self.data)
        self.adam_v = np.zeros_like(self.data)
        self.adam_t = 0


def _accum(t: Tensor, g: np.ndarray, own: bool = True) -> None:
    """Accumulate a gradient contribution.

    own=True promises g is a freshly allocated array the caller will not
    reuse, so the first contribution can be adopted without copying.
    """
    if t.requires_grad:
        if t.grad is None:
            t.grad = g if own else g.copy()
        else:
            t.grad += g


def _track(out: Tensor, parents: tuple, backward, op: str) -> Tensor:
    out._op = op
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(p for p in parents if p.requires_grad)
        out._backward = backward
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    out = Tensor(a.data @ b.data)

    def _bw():
        g = out.grad
        if a.requires_grad:
            _accum(a, g @ b.data.T)
        if b.requires_grad:
            _accum(b, a.data.T @ g)

    return _track(out, (a, b), _bw, "matmul")


def transpose(a: Tensor) -> Tensor:
    out = Tensor(a.data.T)

    def _bw():
        _accum(a, out.grad.T, own=False)

    return _track(out, (a,), _bw, "transpose")


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise add; b may also be a 1xN bias row broadcast over a's rows."""
    if b.shape == a.shape:
        out = Tensor(a.data + b.data)

        def _bw():
            _accum(a, out.grad, own=False)
            _accum(b, out.grad, own=False)

    elif b.shape == (1, a.shape[1]):
        out = Tensor(a.data + b.data)

        def _bw():
            _accum(a, out.grad, own=False)
            _accum(b, out.grad.sum(axis=0, keepdims=True))

    else:
        raise ValueError(f"add shape mismatch: {a.shape} + {b.shape}")
    return _track(out, (a, b), _bw, "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ValueError(f"sub shape mismatch: {a.shape} - {b.shape}")
    out = Tensor(a.data - b.data)

    def _bw():
        _accum(a, out.grad, own=False)
        _accum(b, -out.grad)

    return _track(out, (a, b), _bw, "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ValueError(f"mul shape mismatch: {a.shape} * {b.shape}")
    out = Tensor(a.data * b.data)

    def _bw():
        _accum(a, out.grad * b.data)
        _accum(b, out.grad * a.data)

    return _track(out, (a, b), _bw, "mul")


def mul_columns(a: Tensor, col: Tensor) -> Tensor:
    """Scale each row of a by the matching entry of a column vector."""
    if col.shape != (a.shape[0], 1):
        raise ValueError(f"mul_columns shape mismatch: {a.shape} * {col.shape}")
    out = Tensor(a.data * col.data)

    def _bw():
        _accum(a, out.grad * col.data)
        _accum(col, (out.grad * a.data).sum(axis=1, keepdims=True))

    return _track(out, (a, col), _bw, "mul_columns")


def scale(a: Tensor, s: float) -> Tensor:
    out = Tensor(a.data * s)

    def _bw():
        _accum(a, out.grad * s)

    return _track(out, (a,), _bw, "scale")


def scale_by(a: Tensor, s: Tensor) -> Tensor:
    """Multiply a matrix by a 1x1 tensor (both sides differentiable)."""
    if s.shape != (1, 1):
        raise ValueError(f"scale_by expects a 1x1 scalar tensor, got {s.shape}")
    sv = s.data[0, 0]
    out = Tensor(a.data * sv)

    def _bw():
        _accum(a, out.grad * sv)
        _accum(s, np.array([[np.sum(out.grad * a.data)]]))

    return _track(out, (a, s), _bw, "scale_by")


def concat_cols(parts: list[Tensor]) -> Tensor:
    rows = parts[0].shape[0]
    for p in parts:
        if p.shape[0] != rows:
            raise ValueError(f"concat_cols row mismatch: {[p.shape for p in parts]}")
    out = Tensor(np.hstack([p.data for p in parts]))
    splits = np.cumsum([p.shape[1] for p in parts])[:-1]

    def _bw():
        for p, g in zip(parts, np.hsplit(out.grad, splits)):
            _accum(p, g, own=False)

    return _track(out, tuple(parts), _bw, "concat_cols")


def gather_rows(a: Tensor, indices: list[int]) -> Tensor:
    idx = list(indices)
    out = Tensor(a.data[idx, :])

    def _bw():
        if a.requires_grad:
            g = np.zeros_like(a.data)
            np.add.at(g, idx, out.grad)
            _accum(a, g)

    return _track(out, (a,), _bw, "gather_rows")


def sum_all(a: Tensor) -> Tensor:
    out = Tensor([[np.sum(a.data)]])

    def _bw():
        _accum(a, np.full_like(a.data, out.grad[0, 0]))

    return _track(out, (a,), _bw, "sum_all")


def mean_all(a: Tensor) -> Tensor:
    n = a.data.size
    out = Tensor([[np.sum(a.data) / n]])

    def _bw():
        _accum(a, np.full_like(a.data, out.grad[0, 0] / n))

    return _track(out, (a,), _bw, "mean_all")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign to avoid exp overflow warnings
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a: Tensor) -> Tensor:
    y = _sigmoid(a.data)
    out = Tensor(y)

    def _bw():
        _accum(a, out.grad * y * (1.0 - y))

    return _track(out, (a,), _bw, "sigmoid")


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    out = Tensor(y)

    def _bw():
        _accum(a, out.grad * (1.0 - y * y))

    return _track(out, (a,), _bw, "tanh")


def relu(a: Tensor) -> Tensor:
    y = np.maximum(a.data, 0.0)
    out = Tensor(y)
    mask = a.data > 0.0

    def _bw():
        _accum(a, out.grad * mask)

    return _track(out, (a,), _bw, "relu")


_ACTIVATIONS = {"sigmoid": sigmoid, "tanh": tanh, "relu": relu}


def activation(kind: str, a: Tensor) -> Tensor:
    try:
        return _ACTIVATIONS[kind](a)
    except KeyError:
        raise ValueError(f"unknown activation {kind!r}") from None


def softmax_rows(a: Tensor) -> Tensor:
    """Row-wise softmax with max subtraction for stability."""
    shifted = a.data - a.data.max(axis=1, keepdims=True)
    ex = np.exp(shifted)
    y = ex / ex.sum(axis=1, keepdims=True)
    out = Tensor(y)

    def _bw():
        g = out.grad
        dot = np.sum(g * y, axis=1, keepdims=True)
        _accum(a, y * (g - dot))

    return _track(out, (a,), _bw, "softmax_rows")


def block_attention_row0(q0: Tensor, k: Tensor, v: Tensor, lengths: list[int],
                         scale_factor: float) -> Tensor:
    """Scaled dot-product attention for one query per row block.

    k and v rows are grouped into consecutive blocks of the given lengths
    (one block per stacked snapshot); row i of q0 attends over block i only.
    Fused into one tape node so batched training never materializes a full
    cross-block score matrix or attention outputs for unread rows.
    """
    total = sum(lengths)
    b = len(lengths)
    dk = q0.shape[1]
    if q0.shape[0] != b or k.shape != (total, dk) or v.shape != (total, dk):
        raise ValueError(f"block_attention_row0 shapes {q0.shape}/{k.shape}/"
                         f"{v.shape} do not cover {b} blocks of {total} rows")
    bounds = []
    start = 0
    for ln in lengths:
        bounds.append((start, start + ln))
        start += ln

    if len(set(lengths)) == 1:
        r = lengths[0]
        q3 = q0.data.reshape(b, 1, dk)
        k3 = k.data.reshape(b, r, dk)
        v3 = v.data.reshape(b, r, dk)
        z = np.matmul(q3, k3.swapaxes(1, 2)) * scale_factor
        z -= z.max(axis=2, keepdims=True)
        s = np.exp(z)
        s /= s.sum(axis=2, keepdims=True)
        out = Tensor(np.matmul(s, v3).reshape(b, dk))

        def _bw():
            g3 = out.grad.reshape(b, 1, dk)
            _accum(v, np.matmul(s.swapaxes(1, 2), g3).reshape(total, dk))
            ds = np.matmul(g3, v3.swapaxes(1, 2))
            dz = s * (ds - (ds * s).sum(axis=2, keepdims=True)) * scale_factor
            _accum(q0, np.matmul(dz, k3).reshape(b, dk))
            _accum(k, np.matmul(dz.swapaxes(1, 2), q3).reshape(total, dk))

    else:
        softmaxes = []
        out_data = np.empty((b, dk))
        for i, (st, en) in enumerate(bounds):
            z = (q0.data[i:i + 1] @ k.data[st:en].T) * scale_factor
            z -= z.max()
            s = np.exp(z)
            s /= s.sum()
            softmaxes.append(s)
            out_data[i] = s @ v.data[st:en]
        out = Tensor(out_data)

        def _bw():
            dq = np.empty_like(q0.data)
            dk_ = np.empty_like(k.data)
            dv = np.empty_like(v.data)
            for i, ((st, en), s) in enumerate(zip(bounds, softmaxes)):
                g = out.grad[i:i + 1]
                dv[st:en] = s.T @ g
                ds = g @ v.data[st:en].T
                dz = s * (ds - float((ds * s).sum())) * scale_factor
                dq[i] = dz @ k.data[st:en]
                dk_[st:en] = dz.T @ q0.data[i:i + 1]
            _accum(q0, dq)
            _accum(k, dk_)
            _accum(v, dv)

    return _track(out, (q0, k, v), _bw, "block_attention_row0")


def layer_norm_rows(a: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-6) -> Tensor:
    """Per-row normalization with a learned 1xN affine."""
    n = a.shape[1]
    if gain.shape != (1, n) or bias.shape != (1, n):
        raise ValueError("layer_norm_rows affine shapes must be 1xN")
    mu = a.data.mean(axis=1, keepdims=True)
    var = a.data.var(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (a.data - mu) * inv
    out = Tensor(xhat * gain.data + bias.data)

    def _bw():
        g = out.grad
        if gain.requires_grad:
            _accum(gain, (g * xhat).sum(axis=0, keepdims=True))
        if bias.requires_grad:
            _accum(bias, g.sum(axis=0, keepdims=True))
        if a.requires_grad:
            gx = g * gain.data
            m1 = gx.mean(axis=1, keepdims=True)
            m2 = (gx * xhat).mean(axis=1, keepdims=True)
            _accum(a, inv * (gx - m1 - xhat * m2))

    return _track(out, (a, gain, bias), _bw, "layer_norm_rows")


def mse(pred: Tensor, target: Tensor) -> Tensor:
    d = sub(pred, target)
    return mean_all(mul(d, d))


def relu_kink_margin(out: Tensor) -> float:
    """Smallest |pre-activation| over all relu nodes feeding a graph output.

    Used by gradient checks to skip evaluation points where a finite
    difference would straddle a relu kink.
    """
    margin = np.inf
    seen: set[int] = set()
    stack = [out]
    while stack:
        node = stack.pop()
        if id(node) in seen:
            continue
        seen.add(id(node))
        if node._op == "relu" and node._parents:
            margin = min(margin, float(np.min(np.abs(node._parents[0].data))))
        stack.extend(node._parents)
    return margin


def init_linear(rng: np.random.Generator, fan_in: int, fan_out: int,
                name: str) -> tuple[Parameter, Parameter]:
    """Weight/bias pair drawn uniform(-1/sqrt(fan_in), +1/sqrt(fan_in))."""
    bound = 1.0 / np.sqrt(fan_in)
    w = Parameter(rng.uniform(-bound, bound, size=(fan_in, fan_out)), f"{name}.w")
    b = Parameter(rng.uniform(-bound, bound, size=(1, fan_out)), f"{name}.b")
    return w, b


def adam_step(params, lr: float = 0.001, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> None:
    """Bias-corrected Adam update in place; gradients are zeroed afterwards."""
    for p in params:
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        p.adam_t += 1
        p.adam_m = beta1 * p.adam_m + (1.0 - beta1) * g
        p.adam_v = beta2 * p.adam_v + (1.0 - beta2) * g * g
        m_hat = p.adam_m / (1.0 - beta1 ** p.adam_t)
        v_hat = p.adam_v / (1.0 - beta2 ** p.adam_t)
        p.data -= lr * m_hat / (np.sqrt(v_hat) + eps)
        p.grad = None


def grad_check(build, params, h: float = 1e-5, max_coords: int | None = None,
               rng: np.random.Generator | None = None) -> float:
    """Max relative error of backward gradients vs central differences.

    build() must reconstruct the scalar loss from the current parameter
    values (it is re-run for every probe). With max_coords set, a random
    subset of parameter coordinates is probed instead of all of them.
    """
    out = build()
    out.backward()
    analytic = [p.grad.copy() if p.grad is not None else np.zeros_like(p.data)
                for p in params]
    for p in params:
        p.grad = None

    coords = [(i, j) for i, p in enumerate(params) for j in range(p.data.size)]
    if max_coords is not None and len(coords) > max_coords:
        gen = rng if rng is not None else np.random.default_rng(0)
        picked = gen.choice(len(coords), size=max_coords, replace=False)
        coords = [coords[int(k)] for k in sorted(picked)]

    worst = 0.0
    with no_grad():
        # denominator floor tracks the loss scale: the difference quotient
        # carries roundoff of order eps * |f| / h even for perfect gradients
        floor = 1e-6 * max(1.0, abs(build().item()))
        for i, j in coords:
            flat = params[i].data.reshape(-1)
            orig = flat[j]
            flat[j] = orig + h
            f_plus = build().item()
            flat[j] = orig - h
            f_minus = build().item()
            flat[j] = orig
            fd = (f_plus - f_minus) / (2.0 * h)
            an = float(analytic[i].reshape(-1)[j])
            rel = abs(fd - an) / max(abs(fd), abs(an), floor)
            worst = max(worst, rel)
    return worst


def save_checkpoint(path, arrays: dict[str, np.ndarray], hyper: dict) -> None:
    """Write a versioned JSON checkpoint: hyper header + name->shape->values."""
    doc = {
        "format_version": CHECKPOINT_VERSION,
        "hyper": hyper,
        "params": {
            name: {"shape": list(arr.shape), "values": arr.reshape(-1).tolist()}
            for name, arr in arrays.items()
        },
    }
    Path(path).write_text(json.dumps(doc), encoding="utf-8")


def load_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    version = doc.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version!r}")
    arrays = {}
    for name, entry in doc["params"].items():
        arr = np.array(entry["values"], dtype=np.float64).reshape(entry["shape"])
        arrays[name] = arr
    return doc["hyper"], arrays
