"""Dense float64 tensors with reverse-mode differentiation.

Everything downstream (the path model, both trainers, the baselines) runs on
this engine. It is deliberately small: values are row-major float64 ndarrays,
operations build an implicit computation trace by linking output tensors to
their inputs, and ``backward`` replays that trace once in reverse topological
order. There is no broadcasting beyond explicit matrix products, row-vector
bias addition and same-shape elementwise ops.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np


class ShapeMismatch(ValueError):
    pass


class EmptyBlock(ValueError):
    pass


class IndexOutOfRange(IndexError):
    pass


class Tensor:
    """One node of the computation trace.

    ``data`` is always a float64 ndarray (shape ``()`` for scalars) and must be
    finite; the constructor enforces both. ``_parents`` / ``_backward`` record
    how the node was produced so that :func:`backward` can route the output
    gradient to every parameter exactly once.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False,
                 _parents: tuple = (), _backward: Callable | None = None):
        arr = np.asarray(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise ValueError("tensor values must be finite")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in _parents)
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def _accum(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # Small conveniences; the named functions below are the real API.
    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return sub(self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        return mul(self, other)

    def __neg__(self) -> "Tensor":
        return neg(self)


def constant(data) -> Tensor:
    return Tensor(data, requires_grad=False)


def parameter(data) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64, copy=True), requires_grad=True)


def _check_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.data.shape != b.data.shape:
        raise ShapeMismatch(f"{op}: {a.data.shape} vs {b.data.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "add")
    out = Tensor(a.data + b.data, _parents=(a, b))

    def bw(g):
        if a.requires_grad:
            a._accum(g)
        if b.requires_grad:
            b._accum(g)

    out._backward = bw
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "sub")
    out = Tensor(a.data - b.data, _parents=(a, b))

    def bw(g):
        if a.requires_grad:
            a._accum(g)
        if b.requires_grad:
            b._accum(-g)

    out._backward = bw
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise (Hadamard) product of same-shape tensors."""
    _check_same_shape(a, b, "mul")
    out = Tensor(a.data * b.data, _parents=(a, b))

    def bw(g):
        if a.requires_grad:
            a._accum(g * b.data)
        if b.requires_grad:
            b._accum(g * a.data)

    out._backward = bw
    return out


def neg(a: Tensor) -> Tensor:
    out = Tensor(-a.data, _parents=(a,))

    def bw(g):
        if a.requires_grad:
            a._accum(-g)

    out._backward = bw
    return out


def scale(a: Tensor, c: float) -> Tensor:
    """Multiply by a python float; ``c`` is a constant to the differentiator."""
    c = float(c)
    out = Tensor(a.data * c, _parents=(a,))

    def bw(g):
        if a.requires_grad:
            a._accum(g * c)

    out._backward = bw
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Product of a [m,k] matrix with a [k,n] matrix."""
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeMismatch(f"matmul: {a.data.shape} @ {b.data.shape}")
    out = Tensor(a.data @ b.data, _parents=(a, b))

    def bw(g):
        if a.requires_grad:
            a._accum(g @ b.data.T)
        if b.requires_grad:
            b._accum(a.data.T @ g)

    out._backward = bw
    return out


def add_rowvec(a: Tensor, v: Tensor) -> Tensor:
    """Add a length-n vector to every row of a [m,n] matrix (explicit bias op)."""
    if a.data.ndim != 2 or v.data.ndim != 1 or a.data.shape[1] != v.data.shape[0]:
        raise ShapeMismatch(f"add_rowvec: {a.data.shape} + {v.data.shape}")
    out = Tensor(a.data + v.data[None, :], _parents=(a, v))

    def bw(g):
        if a.requires_grad:
            a._accum(g)
        if v.requires_grad:
            v._accum(g.sum(axis=0))

    out._backward = bw
    return out


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    out = Tensor(y, _parents=(a,))

    def bw(g):
        if a.requires_grad:
            a._accum(g * (1.0 - y * y))

    out._backward = bw
    return out


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    # each branch evaluated only on its safe domain; no overflow anywhere
    pos = x >= 0
    y = np.empty_like(x)
    y[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    y[~pos] = ex / (1.0 + ex)
    return y


def sigmoid(a: Tensor) -> Tensor:
    y = _stable_sigmoid(a.data)
    out = Tensor(y, _parents=(a,))

    def bw(g):
        if a.requires_grad:
            a._accum(g * y * (1.0 - y))

    out._backward = bw
    return out


def sum_all(a: Tensor) -> Tensor:
    out = Tensor(a.data.sum(), _parents=(a,))

    def bw(g):
        if a.requires_grad:
            a._accum(np.full_like(a.data, float(g)))

    out._backward = bw
    return out


def add_n(ts: Sequence[Tensor]) -> Tensor:
    """Sum a non-empty list of same-shape tensors in one trace node."""
    if not ts:
        raise ValueError("add_n of an empty list")
    first = ts[0]
    for t in ts[1:]:
        _check_same_shape(first, t, "add_n")
    out = Tensor(sum(t.data for t in ts), _parents=tuple(ts))

    def bw(g):
        for t in ts:
            if t.requires_grad:
                t._accum(g)

    out._backward = bw
    return out


def gather_rows(a: Tensor, idx: Sequence[int]) -> Tensor:
    """Select rows of a [m,n] matrix; rows may repeat. Backward scatter-adds."""
    if a.data.ndim != 2:
        raise ShapeMismatch(f"gather_rows: expected matrix, got {a.data.shape}")
    ii = np.asarray(idx, dtype=np.intp)
    if ii.size and (ii.min() < 0 or ii.max() >= a.data.shape[0]):
        raise IndexOutOfRange(f"gather_rows: index out of range for {a.data.shape}")
    out = Tensor(a.data[ii], _parents=(a,))

    def bw(g):
        if a.requires_grad:
            if a.grad is None:
                a.grad = np.zeros_like(a.data)
            np.add.at(a.grad, ii, g)

    out._backward = bw
    return out


def take_row(a: Tensor, i: int) -> Tensor:
    """Slice row i of a [m,n] matrix as a length-n vector."""
    if a.data.ndim != 2:
        raise ShapeMismatch(f"take_row: expected matrix, got {a.data.shape}")
    if not 0 <= i < a.data.shape[0]:
        raise IndexOutOfRange(f"take_row: row {i} of {a.data.shape}")
    out = Tensor(a.data[i], _parents=(a,))

    def bw(g):
        if a.requires_grad:
            if a.grad is None:
                a.grad = np.zeros_like(a.data)
            a.grad[i] += g

    out._backward = bw
    return out


@dataclass(frozen=True)
class BlockPartition:
    """Disjoint index blocks covering exactly the logits they are applied to."""

    blocks: tuple[tuple[int, ...], ...]

    @staticmethod
    def of(blocks: Iterable[Iterable[int]]) -> "BlockPartition":
        return BlockPartition(tuple(tuple(int(i) for i in b) for b in blocks))


def _check_partition(blocks: Sequence[Sequence[int]], k: int) -> None:
    seen: set[int] = set()
    for b in blocks:
        if len(b) == 0:
            raise EmptyBlock("empty block in partition")
        for i in b:
            if not 0 <= i < k:
                raise IndexOutOfRange(f"block index {i} out of range for {k} logits")
            if i in seen:
                raise ValueError(f"index {i} appears in two blocks")
            seen.add(i)
    if len(seen) != k:
        raise ValueError(f"partition covers {len(seen)} of {k} indices")


def block_softmax(logits: Tensor, partition: BlockPartition | Sequence[Sequence[int]]) -> Tensor:
    """Softmax normalised independently within each competing-node block.

    Within a block the outputs are positive and sum to one; logits outside a
    block never influence it. Each block is stabilised by subtracting its own
    maximum before exponentiation.
    """
    blocks = partition.blocks if isinstance(partition, BlockPartition) else partition
    if logits.data.ndim != 1:
        raise ShapeMismatch(f"block_softmax: expected vector, got {logits.data.shape}")
    _check_partition(blocks, logits.data.shape[0])
    y = np.empty_like(logits.data)
    for b in blocks:
        bb = np.asarray(b, dtype=np.intp)
        z = logits.data[bb]
        e = np.exp(z - z.max())
        y[bb] = e / e.sum()
    out = Tensor(y, _parents=(logits,))

    def bw(g):
        if logits.requires_grad:
            gz = np.zeros_like(logits.data)
            for b in blocks:
                bb = np.asarray(b, dtype=np.intp)
                yb = y[bb]
                gb = g[bb]
                gz[bb] = yb * (gb - np.dot(gb, yb))
            logits._accum(gz)

    out._backward = bw
    return out


def block_log_prob(logits: Tensor, block: Sequence[int], target: int) -> Tensor:
    """log of the block-softmax probability of ``target`` within its block.

    Equivalent to ``log(block_softmax(logits, ...)[target])`` but fused and
    stabilised as ``z[target] - logsumexp(z[block])``; only the target's block
    receives gradient, matching block independence.
    """
    if logits.data.ndim != 1:
        raise ShapeMismatch(f"block_log_prob: expected vector, got {logits.data.shape}")
    bb = np.asarray(block, dtype=np.intp)
    if bb.size == 0:
        raise EmptyBlock("empty block")
    if bb.size and (bb.min() < 0 or bb.max() >= logits.data.shape[0]):
        raise IndexOutOfRange("block index out of range")
    if target not in set(int(i) for i in bb):
        raise IndexOutOfRange(f"target {target} not inside its block")
    z = logits.data[bb]
    zmax = z.max()
    lse = zmax + np.log(np.exp(z - zmax).sum())
    out = Tensor(np.asarray(logits.data[target] - lse), _parents=(logits,))

    def bw(g):
        if logits.requires_grad:
            gz = np.zeros_like(logits.data)
            p = np.exp(z - lse)
            gz[bb] = -p * float(g)
            gz[target] += float(g)
            logits._accum(gz)

    out._backward = bw
    return out


def bce_with_logits(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Summed binary cross-entropy between sigmoid(logits) and 0/1 targets."""
    if logits.data.shape != np.asarray(targets).shape:
        raise ShapeMismatch("bce_with_logits: logits/targets shape mismatch")
    t = np.asarray(targets, dtype=np.float64)
    z = logits.data
    # max(z,0) - z*t + log(1 + exp(-|z|)), elementwise stable form
    loss = np.maximum(z, 0.0) - z * t + np.log1p(np.exp(-np.abs(z)))
    out = Tensor(np.asarray(loss.sum()), _parents=(logits,))

    def bw(g):
        if logits.requires_grad:
            logits._accum((_stable_sigmoid(z) - t) * float(g))

    out._backward = bw
    return out


def backward(loss: Tensor) -> None:
    """Run reverse-mode differentiation from a scalar loss.

    Visits every trace node reachable from ``loss`` exactly once, in reverse
    topological order. Leaf tensors with ``requires_grad`` end up with their
    ``grad`` populated; parameters not reachable from the loss keep
    ``grad is None`` (a disconnected parameter's gradient is zero).
    """
    if loss.data.shape != ():
        raise ShapeMismatch(f"backward: loss must be scalar, got {loss.data.shape}")
    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    loss.grad = np.ones(())
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


def collect_grads(params: dict[str, Tensor]) -> dict[str, np.ndarray]:
    """Gradients per named parameter; disconnected parameters report zeros."""
    return {name: (p.grad if p.grad is not None else np.zeros_like(p.data))
            for name, p in params.items()}


def zero_grads(params: dict[str, Tensor]) -> None:
    for p in params.values():
        p.grad = None


# ---------------------------------------------------------------------------
# GRU cell
# ---------------------------------------------------------------------------

@dataclass
class GruParams:
    """Reset-before-candidate GRU: r, u gates then candidate c.

    Weights are split per input so no concatenation primitive is needed:
    ``w_*e`` consumes the token embedding, ``w_*f`` the previous state.
    """

    w_re: Tensor
    w_rf: Tensor
    b_r: Tensor
    w_ue: Tensor
    w_uf: Tensor
    b_u: Tensor
    w_ce: Tensor
    w_cf: Tensor
    b_c: Tensor

    @staticmethod
    def init(embed_dim: int, hidden: int, rng: np.random.Generator, prefix: str,
             out: dict[str, Tensor]) -> "GruParams":
        def w(name, rows, cols):
            t = parameter(rng.normal(0.0, 1.0 / np.sqrt(rows), size=(rows, cols)))
            out[f"{prefix}.{name}"] = t
            return t

        def b(name, n):
            t = parameter(np.zeros(n))
            out[f"{prefix}.{name}"] = t
            return t

        return GruParams(
            w_re=w("w_re", embed_dim, hidden), w_rf=w("w_rf", hidden, hidden), b_r=b("b_r", hidden),
            w_ue=w("w_ue", embed_dim, hidden), w_uf=w("w_uf", hidden, hidden), b_u=b("b_u", hidden),
            w_ce=w("w_ce", embed_dim, hidden), w_cf=w("w_cf", hidden, hidden), b_c=b("b_c", hidden),
        )


def gru_step(params: GruParams, e_t: Tensor, f_prev: Tensor) -> Tensor:
    """One recurrent update f_t = (1-u) * f_prev + u * c.

    r = sigmoid(W_r[e,f] + b_r), u = sigmoid(W_u[e,f] + b_u),
    c = tanh(W_c[e, r*f] + b_c). Accepts [m,d]/[m,h] matrices or single
    vectors (promoted to one-row matrices).
    """
    squeeze = e_t.data.ndim == 1
    if squeeze:
        if f_prev.data.ndim != 1:
            raise ShapeMismatch("gru_step: mixed vector/matrix inputs")
        e_t = _promote_row(e_t)
        f_prev = _promote_row(f_prev)
    r = sigmoid(add_rowvec(add(matmul(e_t, params.w_re), matmul(f_prev, params.w_rf)), params.b_r))
    u = sigmoid(add_rowvec(add(matmul(e_t, params.w_ue), matmul(f_prev, params.w_uf)), params.b_u))
    c = tanh(add_rowvec(add(matmul(e_t, params.w_ce), matmul(mul(r, f_prev), params.w_cf)), params.b_c))
    ones = constant(np.ones_like(u.data))
    f_t = add(mul(sub(ones, u), f_prev), mul(u, c))
    return take_row(f_t, 0) if squeeze else f_t


def _promote_row(t: Tensor) -> Tensor:
    out = Tensor(t.data[None, :], _parents=(t,))

    def bw(g):
        if t.requires_grad:
            t._accum(g[0])

    out._backward = bw
    return out


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    """Per-parameter first/second moments plus a shared step counter."""

    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(state: AdamState, params: dict[str, Tensor],
              grads: dict[str, np.ndarray], lr_scale: float = 1.0) -> dict[str, Tensor]:
    """Standard bias-corrected Adam update, applied in place."""
    state.step_count += 1
    t = state.step_count
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    lr = state.lr * lr_scale
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.data.shape:
            raise ShapeMismatch(f"adam_step: grad shape for {name}")
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params


# ---------------------------------------------------------------------------
# Parameter checkpoints
# ---------------------------------------------------------------------------

_MAGIC = b"PCK1"


def save_params(path: str, params: dict[str, np.ndarray]) -> None:
    """Write parameters as the flat PCK1 binary, names in sorted order."""
    with open(path, "wb") as f:
        f.write(_MAGIC)
        for name in sorted(params):
            arr = np.ascontiguousarray(params[name], dtype="<f8")
            raw = name.encode("utf-8")
            f.write(struct.pack("<I", len(raw)))
            f.write(raw)
            f.write(struct.pack("<I", arr.ndim))
            for d in arr.shape:
                f.write(struct.pack("<I", d))
            f.write(arr.tobytes())


def load_params(path: str) -> dict[str, np.ndarray]:
    out: dict[str, np.ndarray] = {}
    with open(path, "rb") as f:
        if f.read(4) != _MAGIC:
            raise ValueError(f"{path}: not a PCK1 checkpoint")
        while True:
            head = f.read(4)
            if not head:
                break
            (nlen,) = struct.unpack("<I", head)
            name = f.read(nlen).decode("utf-8")
            (rank,) = struct.unpack("<I", f.read(4))
            dims = tuple(struct.unpack("<I", f.read(4))[0] for _ in range(rank))
            count = int(np.prod(dims)) if dims else 1
            arr = np.frombuffer(f.read(8 * count), dtype="<f8").astype(np.float64)
            out[name] = arr.reshape(dims)
    return out
