"""Miniature reverse-mode automatic differentiation on float64 numpy arrays.

A :class:`Tensor` wraps an ``ndarray`` and remembers how it was produced;
calling :func:`backward` on a scalar walks the implicit graph in reverse
topological order and accumulates gradients on the leaves. The operation set
is deliberately small: exactly what the span scorers and both training losses
need. All values are checked finite after every op.
"""

from __future__ import annotations

import hashlib
import json
import struct
from typing import Callable, Iterable

import numpy as np

__all__ = [
    "AutodiffError",
    "Tensor",
    "ParamStore",
    "AdamConfig",
    "constant",
    "add",
    "mul",
    "matmul",
    "concat",
    "gather_rows",
    "slice_rows",
    "scatter_rows",
    "reshape",
    "exp",
    "log",
    "tanh",
    "relu",
    "softmax",
    "tensor_sum",
    "max_with_argmax",
    "backward",
    "grad_check",
    "adam_step",
    "seeded_rng",
]

CHECKPOINT_MAGIC = b"XLCOREF\x01"
CHECKPOINT_VERSION = 1


class AutodiffError(ValueError):
    """Shape mismatches, non-finite values, or malformed checkpoints."""


def _as_array(values) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    # ascontiguousarray would promote 0-d scalars to shape (1,).
    return arr if arr.ndim == 0 else np.ascontiguousarray(arr)


class Tensor:
    """A float64 array plus the local backward rule that produced it."""

    __slots__ = ("data", "parents", "_backward", "grad", "op")

    def __init__(
        self,
        data,
        parents: tuple["Tensor", ...] = (),
        backward_fn: Callable[[np.ndarray], None] | None = None,
        op: str = "leaf",
    ):
        self.data = _as_array(data)
        if not np.isfinite(self.data).all():
            raise AutodiffError(f"non-finite values produced by op {op!r}")
        self.parents = parents
        self._backward = backward_fn
        self.grad: np.ndarray | None = None
        self.op = op

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def accumulate(self, grad: np.ndarray) -> None:
        if self.grad is None:
            self.grad = grad.copy()
        else:
            self.grad = self.grad + grad

    def __add__(self, other):
        return add(self, _lift(other))

    def __radd__(self, other):
        return add(_lift(other), self)

    def __sub__(self, other):
        return add(self, mul(_lift(other), constant(-1.0)))

    def __mul__(self, other):
        return mul(self, _lift(other))

    def __rmul__(self, other):
        return mul(_lift(other), self)

    def __neg__(self):
        return mul(self, constant(-1.0))

    def __matmul__(self, other):
        return matmul(self, _lift(other))

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op!r})"


def constant(values) -> Tensor:
    """A graph leaf that never receives gradient."""
    return Tensor(values, op="const")


def _lift(value) -> Tensor:
    return value if isinstance(value, Tensor) else constant(value)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcasted gradient back down to ``shape``."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def add(a: Tensor, b: Tensor) -> Tensor:
    try:
        out = a.data + b.data
    except ValueError:
        raise AutodiffError(f"add: incompatible shapes {a.shape} and {b.shape}") from None

    def bwd(g):
        a.accumulate(_unbroadcast(g, a.shape))
        b.accumulate(_unbroadcast(g, b.shape))

    return Tensor(out, (a, b), bwd, "add")


def mul(a: Tensor, b: Tensor) -> Tensor:
    try:
        out = a.data * b.data
    except ValueError:
        raise AutodiffError(f"mul: incompatible shapes {a.shape} and {b.shape}") from None

    def bwd(g):
        a.accumulate(_unbroadcast(g * b.data, a.shape))
        b.accumulate(_unbroadcast(g * a.data, b.shape))

    return Tensor(out, (a, b), bwd, "mul")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise AutodiffError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    out = a.data @ b.data

    def bwd(g):
        a.accumulate(g @ b.data.T)
        b.accumulate(a.data.T @ g)

    return Tensor(out, (a, b), bwd, "matmul")


def concat(tensors: list[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise AutodiffError("concat: no tensors given")
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0, *sizes])

    def bwd(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            t.accumulate(g[tuple(idx)])

    return Tensor(out, tuple(tensors), bwd, "concat")


def gather_rows(t: Tensor, indices) -> Tensor:
    """Select rows by index; the backward pass scatter-adds into the source."""
    idx = np.asarray(indices, dtype=np.intp)
    if idx.size and (idx.min() < 0 or idx.max() >= t.shape[0]):
        raise AutodiffError(
            f"gather_rows: index out of range for {t.shape[0]} rows"
        )
    out = t.data[idx]

    def bwd(g):
        full = np.zeros_like(t.data)
        np.add.at(full, idx, g)
        t.accumulate(full)

    return Tensor(out, (t,), bwd, "gather_rows")


def slice_rows(t: Tensor, start: int, stop: int) -> Tensor:
    return gather_rows(t, np.arange(start, stop))


def scatter_rows(base: np.ndarray, values: Tensor, rows, cols) -> Tensor:
    """Write a flat vector of values into a copy of ``base`` at (row, col) pairs.

    Index pairs must be unique. Gradient flows only to ``values``; the base is
    a plain constant array.
    """
    rows = np.asarray(rows, dtype=np.intp)
    cols = np.asarray(cols, dtype=np.intp)
    if values.data.ndim != 1 or len(rows) != values.shape[0] or len(cols) != values.shape[0]:
        raise AutodiffError("scatter_rows: values must be 1-D and match the index count")
    out = np.array(base, dtype=np.float64, copy=True)
    out[rows, cols] = values.data

    def bwd(g):
        values.accumulate(g[rows, cols])

    return Tensor(out, (values,), bwd, "scatter_rows")


def reshape(t: Tensor, shape: tuple[int, ...]) -> Tensor:
    out = t.data.reshape(shape)

    def bwd(g):
        t.accumulate(g.reshape(t.shape))

    return Tensor(out, (t,), bwd, "reshape")


def exp(t: Tensor) -> Tensor:
    out = np.exp(t.data)

    def bwd(g):
        t.accumulate(g * out)

    return Tensor(out, (t,), bwd, "exp")


def log(t: Tensor) -> Tensor:
    out = np.log(t.data)

    def bwd(g):
        t.accumulate(g / t.data)

    return Tensor(out, (t,), bwd, "log")


def tanh(t: Tensor) -> Tensor:
    out = np.tanh(t.data)

    def bwd(g):
        t.accumulate(g * (1.0 - out * out))

    return Tensor(out, (t,), bwd, "tanh")


def relu(t: Tensor) -> Tensor:
    out = np.maximum(t.data, 0.0)

    def bwd(g):
        t.accumulate(g * (t.data > 0.0))

    return Tensor(out, (t,), bwd, "relu")


def softmax(t: Tensor, axis: int = -1) -> Tensor:
    shifted = t.data - t.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        inner = (g * out).sum(axis=axis, keepdims=True)
        t.accumulate(out * (g - inner))

    return Tensor(out, (t,), bwd, "softmax")


def tensor_sum(t: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    out = t.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        if axis is None:
            t.accumulate(np.broadcast_to(g, t.shape).copy())
        else:
            g_expanded = g if keepdims else np.expand_dims(g, axis)
            t.accumulate(np.broadcast_to(g_expanded, t.shape).copy())

    return Tensor(out, (t,), bwd, "sum")


def max_with_argmax(t: Tensor, axis: int = -1) -> tuple[Tensor, np.ndarray]:
    """Maximum along an axis plus its indices.

    The backward pass is the subgradient routing all mass to the (first)
    argmax element of each slice.
    """
    indices = np.argmax(t.data, axis=axis)
    out = np.take_along_axis(t.data, np.expand_dims(indices, axis), axis=axis).squeeze(axis)

    def bwd(g):
        full = np.zeros_like(t.data)
        np.put_along_axis(
            full, np.expand_dims(indices, axis), np.expand_dims(g, axis), axis=axis
        )
        t.accumulate(full)

    return Tensor(out, (t,), bwd, "max"), indices


# --------------------------------------------------------------------------
# Backward pass
# --------------------------------------------------------------------------


def _topo_order(root: Tensor) -> list[Tensor]:
    """Iterative post-order DFS; graphs can exceed the recursion limit."""
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node.parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    return order


def backward(loss: Tensor, store: "ParamStore | None" = None) -> dict[str, np.ndarray]:
    """Backpropagate from a scalar loss.

    With a :class:`ParamStore`, returns gradients keyed by parameter name for
    every trainable tensor (zeros for parameters the loss never touched) and
    clears the leaf gradients afterwards so successive steps stay independent.
    """
    if loss.data.shape != ():
        raise AutodiffError(f"backward: loss must be scalar, got shape {loss.data.shape}")
    if store is not None:
        for name in store.names():
            store.tensor(name).grad = None
    loss.grad = np.ones((), dtype=np.float64)
    for node in reversed(_topo_order(loss)):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
    if store is None:
        return {}
    grads: dict[str, np.ndarray] = {}
    for name in store.trainable_names():
        t = store.tensor(name)
        grads[name] = np.zeros_like(t.data) if t.grad is None else t.grad
        t.grad = None
    return grads


# --------------------------------------------------------------------------
# Parameters, optimizer, checkpoints
# --------------------------------------------------------------------------


def seeded_rng(seed: int, name: str) -> np.random.Generator:
    """Independent, order-insensitive RNG stream for one named tensor."""
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    return np.random.default_rng([seed, int.from_bytes(digest[:8], "little")])


class ParamStore:
    """Named parameter tensors with Adam state and a binary checkpoint format.

    Checkpoint layout (all integers little-endian):
      * bytes 0..7    magic ``XLCOREF\\x01``
      * bytes 8..11   uint32 header length ``L``
      * bytes 12..12+L  UTF-8 JSON header: ``{"entries": [{"name", "shape",
        "trainable"}, ...], "step": int, "version": 1}`` with entries sorted
        by name and keys sorted
      * one raw C-order float64 payload per entry, in header order
      * for each trainable entry, in header order: the Adam first-moment
        payload then the second-moment payload, same shape as the entry
    """

    def __init__(self):
        self._tensors: dict[str, Tensor] = {}
        self._trainable: dict[str, bool] = {}
        self.step = 0
        self._adam_m: dict[str, np.ndarray] = {}
        self._adam_v: dict[str, np.ndarray] = {}

    def add(self, name: str, values, trainable: bool = True) -> Tensor:
        if name in self._tensors:
            raise AutodiffError(f"parameter {name!r} already registered")
        t = Tensor(values, op="param")
        self._tensors[name] = t
        self._trainable[name] = trainable
        if trainable:
            self._adam_m[name] = np.zeros_like(t.data)
            self._adam_v[name] = np.zeros_like(t.data)
        return t

    def tensor(self, name: str) -> Tensor:
        try:
            return self._tensors[name]
        except KeyError:
            raise AutodiffError(f"unknown parameter {name!r}") from None

    def __getitem__(self, name: str) -> Tensor:
        return self.tensor(name)

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def names(self) -> list[str]:
        return sorted(self._tensors)

    def trainable_names(self) -> list[str]:
        return [n for n in self.names() if self._trainable[n]]

    def is_trainable(self, name: str) -> bool:
        return self._trainable[name]

    def set_trainable(self, name: str, flag: bool) -> None:
        self.tensor(name)
        if flag and not self._trainable[name]:
            self._adam_m[name] = np.zeros_like(self._tensors[name].data)
            self._adam_v[name] = np.zeros_like(self._tensors[name].data)
        self._trainable[name] = flag

    def replace(self, name: str, values) -> None:
        """Overwrite a parameter's values in place, keeping its identity."""
        t = self.tensor(name)
        arr = _as_array(values)
        if arr.shape != t.data.shape:
            raise AutodiffError(
                f"replace: shape {arr.shape} does not match {t.data.shape} for {name!r}"
            )
        t.data = arr

    def copy(self) -> "ParamStore":
        other = ParamStore()
        for name in self.names():
            other.add(name, self._tensors[name].data.copy(), self._trainable[name])
        other.step = self.step
        for name in self.trainable_names():
            other._adam_m[name] = self._adam_m[name].copy()
            other._adam_v[name] = self._adam_v[name].copy()
        return other

    # -- checkpoint I/O ----------------------------------------------------

    def to_bytes(self) -> bytes:
        entries = [
            {"name": n, "shape": list(self._tensors[n].shape), "trainable": self._trainable[n]}
            for n in self.names()
        ]
        header = json.dumps(
            {"entries": entries, "step": self.step, "version": CHECKPOINT_VERSION},
            sort_keys=True,
            separators=(",", ":"),
        ).encode("utf-8")
        chunks = [CHECKPOINT_MAGIC, struct.pack("<I", len(header)), header]
        for n in self.names():
            chunks.append(self._tensors[n].data.astype("<f8").tobytes(order="C"))
        for n in self.names():
            if self._trainable[n]:
                chunks.append(self._adam_m[n].astype("<f8").tobytes(order="C"))
                chunks.append(self._adam_v[n].astype("<f8").tobytes(order="C"))
        return b"".join(chunks)

    def save(self, path: str) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def from_bytes(cls, blob: bytes) -> "ParamStore":
        if blob[:8] != CHECKPOINT_MAGIC:
            raise AutodiffError("not a checkpoint file (bad magic)")
        (header_len,) = struct.unpack("<I", blob[8:12])
        header = json.loads(blob[12 : 12 + header_len].decode("utf-8"))
        if header.get("version") != CHECKPOINT_VERSION:
            raise AutodiffError(f"unsupported checkpoint version {header.get('version')!r}")
        store = cls()
        store.step = header["step"]
        offset = 12 + header_len

        def read_array(shape):
            nonlocal offset
            count = int(np.prod(shape)) if shape else 1
            nbytes = count * 8
            arr = np.frombuffer(blob[offset : offset + nbytes], dtype="<f8").reshape(shape)
            offset += nbytes
            return np.array(arr, dtype=np.float64)

        for entry in header["entries"]:
            store.add(entry["name"], read_array(entry["shape"]), entry["trainable"])
        for entry in header["entries"]:
            if entry["trainable"]:
                store._adam_m[entry["name"]] = read_array(entry["shape"])
                store._adam_v[entry["name"]] = read_array(entry["shape"])
        return store

    @classmethod
    def load(cls, path: str) -> "ParamStore":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


class AdamConfig:
    """Adaptive-moment hyperparameters; the standard defaults."""

    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps


def adam_step(store: ParamStore, grads: dict[str, np.ndarray], hyper: AdamConfig) -> None:
    """One bias-corrected adaptive-moment update over all trainable tensors."""
    for name in store.trainable_names():
        if name not in grads:
            raise AutodiffError(f"adam_step: missing gradient for {name!r}")
    store.step += 1
    t = store.step
    for name in store.trainable_names():
        g = grads[name]
        m = store._adam_m[name]
        v = store._adam_v[name]
        m[...] = hyper.beta1 * m + (1.0 - hyper.beta1) * g
        v[...] = hyper.beta2 * v + (1.0 - hyper.beta2) * (g * g)
        m_hat = m / (1.0 - hyper.beta1**t)
        v_hat = v / (1.0 - hyper.beta2**t)
        tensor = store.tensor(name)
        tensor.data = tensor.data - hyper.lr * m_hat / (np.sqrt(v_hat) + hyper.eps)


def grad_check(
    loss_fn: Callable[[ParamStore], Tensor],
    store: ParamStore,
    epsilon: float = 1e-5,
    samples_per_tensor: int | None = None,
    seed: int = 0,
) -> float:
    """Worst relative error between analytic and central-difference gradients.

    Checks every trainable scalar by default; ``samples_per_tensor`` draws a
    seeded subset per tensor to keep large checks inside a time budget. The
    relative error is ``|g_a - g_n| / max(1, |g_a|, |g_n|)``.
    """
    if not 1e-7 <= epsilon <= 1e-4:
        raise AutodiffError(f"epsilon {epsilon} outside [1e-7, 1e-4]")
    analytic = backward(loss_fn(store), store)
    worst = 0.0
    for name in store.trainable_names():
        flat = store.tensor(name).data.reshape(-1)
        size = flat.shape[0]
        if samples_per_tensor is None or samples_per_tensor >= size:
            indices: Iterable[int] = range(size)
        else:
            rng = seeded_rng(seed, name)
            indices = np.sort(rng.choice(size, size=samples_per_tensor, replace=False))
        ana_flat = analytic[name].reshape(-1)
        for i in indices:
            original = flat[i]
            flat[i] = original + epsilon
            f_plus = loss_fn(store).item()
            flat[i] = original - epsilon
            f_minus = loss_fn(store).item()
            flat[i] = original
            numeric = (f_plus - f_minus) / (2.0 * epsilon)
            ga = float(ana_flat[i])
            rel = abs(ga - numeric) / max(1.0, abs(ga), abs(numeric))
            worst = max(worst, rel)
    return worst
