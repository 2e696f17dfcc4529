"""Dense-matrix reverse-mode automatic differentiation.

Every value is a 2-D float64 matrix.  Primitive operations append a record to
the active :class:`Tape`; :func:`backward` replays the tape in reverse and
accumulates gradients into every tensor that requires them.

Backward rules live in ``BACKWARD_RULES`` keyed by primitive name so they can
be inspected (and, in tests, deliberately broken).
"""

from __future__ import annotations

import contextlib
import json
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

CE_FLOOR = 1e-12
DEFAULT_LEAKY_SLOPE = 0.2
CHECKPOINT_FORMAT = "ergbias-checkpoint"
CHECKPOINT_VERSION = 1


class ShapeError(ValueError):
    """Operand shapes are incompatible for a primitive."""


def _shape_error(op: str, a, b) -> ShapeError:
    return ShapeError(f"{op}: incompatible shapes {tuple(a)} and {tuple(b)}")


class Tensor:
    """A 2-D float64 matrix that can take part in differentiation."""

    __slots__ = ("values", "requires_grad", "_grad", "name")

    def __init__(self, values, requires_grad: bool = False, name: str | None = None):
        arr = np.array(values, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim != 2:
            raise ShapeError(f"tensors are 2-D, got shape {arr.shape}")
        self.values = arr
        self.requires_grad = requires_grad
        self._grad: np.ndarray | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape  # type: ignore[return-value]

    @property
    def grad(self) -> np.ndarray:
        if self._grad is None:
            self._grad = np.zeros_like(self.values)
        return self._grad

    @grad.setter
    def grad(self, value) -> None:
        self._grad = None if value is None else np.asarray(value, dtype=np.float64)

    def zero_grad(self) -> None:
        self._grad = None

    def item(self) -> float:
        if self.values.size != 1:
            raise ShapeError(f"item() needs a 1x1 tensor, got {self.shape}")
        return float(self.values[0, 0])

    def numpy(self) -> np.ndarray:
        return self.values

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{label})"

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __mul__(self, other) -> "Tensor":
        if isinstance(other, Tensor):
            return mul(self, other)
        return scalar_mul(self, float(other))

    __rmul__ = __mul__


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


@dataclass
class Record:
    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    ctx: dict = field(default_factory=dict)


class Tape:
    """Ordered record of executed primitives (define-by-run)."""

    def __init__(self) -> None:
        self.records: list[Record] = []

    def __len__(self) -> int:
        return len(self.records)

    def append(self, record: Record) -> None:
        self.records.append(record)

    def clear(self) -> None:
        self.records.clear()


_local = threading.local()


def get_tape() -> Tape:
    tape = getattr(_local, "tape", None)
    if tape is None:
        tape = _local.tape = Tape()
    return tape


def _recording() -> bool:
    return not getattr(_local, "paused", False)


@contextlib.contextmanager
def no_grad():
    """Evaluate without recording anything on the tape."""
    previous = getattr(_local, "paused", False)
    _local.paused = True
    try:
        yield
    finally:
        _local.paused = previous


def _emit(op: str, inputs: Sequence[Tensor], out: np.ndarray, **ctx) -> Tensor:
    if not np.all(np.isfinite(out)) and all(np.all(np.isfinite(t.values)) for t in inputs):
        raise FloatingPointError(f"{op} produced non-finite values from finite inputs")
    needs = _recording() and any(t.requires_grad for t in inputs)
    result = Tensor(out, requires_grad=needs)
    if needs:
        get_tape().append(Record(op, tuple(inputs), result, ctx))
    return result


def _unbroadcast(grad: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    if shape[0] == 1 and grad.shape[0] != 1:
        grad = grad.sum(axis=0, keepdims=True)
    if shape[1] == 1 and grad.shape[1] != 1:
        grad = grad.sum(axis=1, keepdims=True)
    return grad


def _broadcast_ok(a: tuple[int, int], b: tuple[int, int]) -> bool:
    return all(x == y or x == 1 or y == 1 for x, y in zip(a, b))


# -- primitives ---------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[1] != b.shape[0]:
        raise _shape_error("matmul", a.shape, b.shape)
    return _emit("matmul", (a, b), a.values @ b.values)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; a row or column of size 1 broadcasts."""
    if not _broadcast_ok(a.shape, b.shape):
        raise _shape_error("add", a.shape, b.shape)
    return _emit("add", (a, b), a.values + b.values)


def sub(a: Tensor, b: Tensor) -> Tensor:
    if not _broadcast_ok(a.shape, b.shape):
        raise _shape_error("sub", a.shape, b.shape)
    return _emit("sub", (a, b), a.values - b.values)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product with the same broadcasting as :func:`add`."""
    if not _broadcast_ok(a.shape, b.shape):
        raise _shape_error("elementwise_mul", a.shape, b.shape)
    return _emit("elementwise_mul", (a, b), a.values * b.values)


elementwise_mul = mul


def scalar_mul(a: Tensor, c: float) -> Tensor:
    return _emit("scalar_mul", (a,), a.values * c, c=float(c))


def concat_rows(parts: Sequence[Tensor]) -> Tensor:
    cols = {p.shape[1] for p in parts}
    if len(cols) != 1:
        raise _shape_error("concat_rows", parts[0].shape, next(p.shape for p in parts if p.shape[1] != parts[0].shape[1]))
    out = np.concatenate([p.values for p in parts], axis=0)
    return _emit("concat_rows", tuple(parts), out, sizes=[p.shape[0] for p in parts])


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    rows = {p.shape[0] for p in parts}
    if len(rows) != 1:
        raise _shape_error("concat_cols", parts[0].shape, next(p.shape for p in parts if p.shape[0] != parts[0].shape[0]))
    out = np.concatenate([p.values for p in parts], axis=1)
    return _emit("concat_cols", tuple(parts), out, sizes=[p.shape[1] for p in parts])


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    if not 0 <= start < stop <= a.shape[1]:
        raise ShapeError(f"slice_cols: [{start}, {stop}) out of range for shape {a.shape}")
    return _emit("slice_cols", (a,), a.values[:, start:stop].copy(), start=start, stop=stop)


def transpose(a: Tensor) -> Tensor:
    return _emit("transpose", (a,), a.values.T.copy())


def gather_rows(a: Tensor, index: Sequence[int] | np.ndarray) -> Tensor:
    """Rows ``a[index]`` (repeats allowed)."""
    idx = np.asarray(index, dtype=np.int64).reshape(-1)
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[0]):
        raise ShapeError(f"gather_rows: index out of range for shape {a.shape}")
    return _emit("gather_rows", (a,), a.values[idx], index=idx)


def segment_sum(a: Tensor, segments: Sequence[int] | np.ndarray, num_segments: int) -> Tensor:
    """Scatter-add row ``r`` of ``a`` into output row ``segments[r]``."""
    seg = np.asarray(segments, dtype=np.int64).reshape(-1)
    if seg.size != a.shape[0]:
        raise _shape_error("segment_sum", a.shape, (seg.size, 1))
    out = np.zeros((num_segments, a.shape[1]))
    np.add.at(out, seg, a.values)
    return _emit("segment_sum", (a,), out, segments=seg)


def row_softmax(a: Tensor) -> Tensor:
    z = a.values - a.values.max(axis=1, keepdims=True)
    e = np.exp(z)
    return _emit("row_softmax", (a,), e / e.sum(axis=1, keepdims=True))


def segment_softmax(a: Tensor, segments: Sequence[int] | np.ndarray) -> Tensor:
    """Softmax of a column of scores, normalized within each segment."""
    if a.shape[1] != 1:
        raise _shape_error("segment_softmax", a.shape, (a.shape[0], 1))
    seg = np.asarray(segments, dtype=np.int64).reshape(-1)
    if seg.size != a.shape[0]:
        raise _shape_error("segment_softmax", a.shape, (seg.size, 1))
    x = a.values[:, 0]
    out = np.zeros_like(x)
    if seg.size:
        n = int(seg.max()) + 1
        peak = np.full(n, -np.inf)
        np.maximum.at(peak, seg, x)
        e = np.exp(x - peak[seg])
        denom = np.zeros(n)
        np.add.at(denom, seg, e)
        out = e / denom[seg]
    return _emit("segment_softmax", (a,), out.reshape(-1, 1), segments=seg)


def leaky_relu(a: Tensor, slope: float = DEFAULT_LEAKY_SLOPE) -> Tensor:
    v = a.values
    return _emit("leaky_relu", (a,), np.where(v > 0, v, slope * v), slope=slope)


def tanh(a: Tensor) -> Tensor:
    return _emit("tanh", (a,), np.tanh(a.values))


def sigmoid(a: Tensor) -> Tensor:
    v = a.values
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out[~pos] = ev / (1.0 + ev)
    return _emit("sigmoid", (a,), out)


def sum(a: Tensor, axis: int | None = None) -> Tensor:  # noqa: A001 - mirrors numpy
    if axis is None:
        out = np.array([[a.values.sum()]])
    else:
        out = a.values.sum(axis=axis, keepdims=True)
    return _emit("sum", (a,), out, axis=axis)


def mean(a: Tensor) -> Tensor:
    return _emit("mean", (a,), np.array([[a.values.mean()]]))


def cross_entropy_rows(target, predicted: Tensor) -> Tensor:
    """``-sum_rows sum_c target * log(max(predicted, 1e-12))`` as a 1x1 tensor.

    ``predicted`` holds probabilities, not logits.  ``target`` is treated as
    constant.
    """
    t = target.values if isinstance(target, Tensor) else np.asarray(target, dtype=np.float64)
    t = t.reshape(predicted.shape) if t.size == predicted.values.size and t.ndim < 2 else t
    if t.shape != predicted.shape:
        raise _shape_error("cross_entropy_rows", t.shape, predicted.shape)
    q = np.maximum(predicted.values, CE_FLOOR)
    out = np.array([[-(t * np.log(q)).sum()]])
    return _emit("cross_entropy_rows", (predicted,), out, target=t)


# -- backward rules -----------------------------------------------------------
# Each rule maps (record, upstream gradient) to one gradient per input.


def _bw_matmul(rec: Record, g: np.ndarray):
    a, b = rec.inputs
    return g @ b.values.T, a.values.T @ g


def _bw_add(rec: Record, g: np.ndarray):
    a, b = rec.inputs
    return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)


def _bw_sub(rec: Record, g: np.ndarray):
    a, b = rec.inputs
    return _unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)


def _bw_mul(rec: Record, g: np.ndarray):
    a, b = rec.inputs
    return _unbroadcast(g * b.values, a.shape), _unbroadcast(g * a.values, b.shape)


def _bw_scalar_mul(rec: Record, g: np.ndarray):
    return (g * rec.ctx["c"],)


def _split(g: np.ndarray, sizes: list[int], axis: int):
    return tuple(np.split(g, np.cumsum(sizes)[:-1], axis=axis))


def _bw_concat_rows(rec: Record, g: np.ndarray):
    return _split(g, rec.ctx["sizes"], 0)


def _bw_concat_cols(rec: Record, g: np.ndarray):
    return _split(g, rec.ctx["sizes"], 1)


def _bw_slice_cols(rec: Record, g: np.ndarray):
    out = np.zeros(rec.inputs[0].shape)
    out[:, rec.ctx["start"] : rec.ctx["stop"]] = g
    return (out,)


def _bw_transpose(rec: Record, g: np.ndarray):
    return (g.T,)


def _bw_gather_rows(rec: Record, g: np.ndarray):
    out = np.zeros(rec.inputs[0].shape)
    np.add.at(out, rec.ctx["index"], g)
    return (out,)


def _bw_segment_sum(rec: Record, g: np.ndarray):
    return (g[rec.ctx["segments"]],)


def _bw_row_softmax(rec: Record, g: np.ndarray):
    y = rec.output.values
    return (y * (g - (g * y).sum(axis=1, keepdims=True)),)


def _bw_segment_softmax(rec: Record, g: np.ndarray):
    y = rec.output.values[:, 0]
    seg = rec.ctx["segments"]
    gy = g[:, 0] * y
    dot = np.zeros(int(seg.max()) + 1 if seg.size else 0)
    np.add.at(dot, seg, gy)
    return ((y * (g[:, 0] - dot[seg])).reshape(-1, 1),)


def _bw_leaky_relu(rec: Record, g: np.ndarray):
    v = rec.inputs[0].values
    return (np.where(v > 0, g, rec.ctx["slope"] * g),)


def _bw_tanh(rec: Record, g: np.ndarray):
    y = rec.output.values
    return (g * (1.0 - y * y),)


def _bw_sigmoid(rec: Record, g: np.ndarray):
    y = rec.output.values
    return (g * y * (1.0 - y),)


def _bw_sum(rec: Record, g: np.ndarray):
    return (np.broadcast_to(g, rec.inputs[0].shape).copy(),)


def _bw_mean(rec: Record, g: np.ndarray):
    shape = rec.inputs[0].shape
    return (np.full(shape, g[0, 0] / (shape[0] * shape[1])),)


def _bw_cross_entropy_rows(rec: Record, g: np.ndarray):
    q = rec.inputs[0].values
    t = rec.ctx["target"]
    live = q > CE_FLOOR
    grad = np.where(live, -t / np.where(live, q, 1.0), 0.0)
    return (g[0, 0] * grad,)


BACKWARD_RULES: dict[str, Callable[[Record, np.ndarray], tuple]] = {
    "matmul": _bw_matmul,
    "add": _bw_add,
    "sub": _bw_sub,
    "elementwise_mul": _bw_mul,
    "scalar_mul": _bw_scalar_mul,
    "concat_rows": _bw_concat_rows,
    "concat_cols": _bw_concat_cols,
    "slice_cols": _bw_slice_cols,
    "transpose": _bw_transpose,
    "gather_rows": _bw_gather_rows,
    "segment_sum": _bw_segment_sum,
    "row_softmax": _bw_row_softmax,
    "segment_softmax": _bw_segment_softmax,
    "leaky_relu": _bw_leaky_relu,
    "tanh": _bw_tanh,
    "sigmoid": _bw_sigmoid,
    "sum": _bw_sum,
    "mean": _bw_mean,
    "cross_entropy_rows": _bw_cross_entropy_rows,
}


def backward(loss: Tensor, tape: Tape | None = None) -> None:
    """Accumulate d(loss)/d(t) into ``t.grad`` for every tensor on the tape."""
    if loss.shape != (1, 1):
        raise ShapeError(f"backward needs a scalar (1x1) loss, got {loss.shape}")
    tape = tape or get_tape()
    if not loss.requires_grad:
        tape.clear()
        return
    loss.grad = loss.grad + 1.0
    for rec in reversed(tape.records):
        g = rec.output._grad
        if g is None:
            continue
        grads = BACKWARD_RULES[rec.op](rec, g)
        for inp, gi in zip(rec.inputs, grads):
            if inp.requires_grad and gi is not None:
                if inp._grad is None:
                    inp._grad = np.array(gi, dtype=np.float64)
                else:
                    inp._grad += gi
    tape.clear()


# -- optimisation -------------------------------------------------------------


@dataclass
class LinearSchedule:
    """Learning rate decaying linearly from ``lr0`` to zero over ``total_steps``."""

    lr0: float
    total_steps: int

    def rate(self, step: int) -> float:
        if self.total_steps <= 0:
            return 0.0
        return self.lr0 * max(0.0, 1.0 - step / self.total_steps)


@dataclass
class AdamWState:
    lr0: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-2
    step: int = 0
    first: dict[str, np.ndarray] = field(default_factory=dict)
    second: dict[str, np.ndarray] = field(default_factory=dict)


def adamw_step(params: Mapping[str, Tensor], state: AdamWState, rate: float) -> None:
    """One AdamW update with decoupled weight decay; zeroes the gradients."""
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    for name, p in params.items():
        g = p.grad
        m = state.first.get(name)
        if m is None:
            m = state.first[name] = np.zeros_like(p.values)
            state.second[name] = np.zeros_like(p.values)
        v = state.second[name]
        p.values -= rate * state.weight_decay * p.values
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p.values -= rate * (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.zero_grad()


class AdamW:
    """Convenience wrapper pairing :class:`AdamWState` with a parameter map."""

    def __init__(self, params: Mapping[str, Tensor], lr: float = 1e-3, betas=(0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 1e-2):
        self.params = dict(params)
        self.state = AdamWState(lr, betas[0], betas[1], eps, weight_decay)

    def step(self, rate: float | None = None) -> None:
        adamw_step(self.params, self.state, self.state.lr0 if rate is None else rate)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()


# -- parameter containers -----------------------------------------------------


class Module:
    """Base class collecting Tensor parameters from attributes, recursively."""

    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for key, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                out[prefix + key] = value
            elif isinstance(value, Module):
                out.update(value.named_parameters(f"{prefix}{key}."))
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        out.update(item.named_parameters(f"{prefix}{key}.{i}."))
        return out

    def zero_grad(self) -> None:
        for p in self.named_parameters().values():
            p.zero_grad()

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.values.copy() for k, v in self.named_parameters().items()}

    def load_state_dict(self, state: Mapping[str, np.ndarray]) -> None:
        params = self.named_parameters()
        missing = set(params) - set(state)
        if missing:
            raise KeyError(f"state is missing parameters: {sorted(missing)}")
        for k, p in params.items():
            arr = np.asarray(state[k], dtype=np.float64)
            if arr.shape != p.shape:
                raise _shape_error(f"load {k}", arr.shape, p.shape)
            p.values[...] = arr


def parameter(rng: np.random.Generator, rows: int, cols: int, scale: float | None = None) -> Tensor:
    """Uniform Glorot-initialised trainable matrix."""
    bound = scale if scale is not None else np.sqrt(6.0 / (rows + cols))
    return Tensor(rng.uniform(-bound, bound, size=(rows, cols)), requires_grad=True)


def zeros_parameter(rows: int, cols: int) -> Tensor:
    return Tensor(np.zeros((rows, cols)), requires_grad=True)


# -- checkpoints --------------------------------------------------------------


def save_checkpoint(path: str | Path, tensors: Mapping[str, np.ndarray | Tensor], meta: dict | None = None) -> None:
    """Write ``{name: matrix}`` as JSON with shape + row-major values."""
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "meta": meta or {},
        "tensors": {},
    }
    for name in sorted(tensors):
        arr = tensors[name]
        arr = arr.values if isinstance(arr, Tensor) else np.asarray(arr, dtype=np.float64)
        if arr.ndim != 2:
            raise ShapeError(f"checkpoint entry {name!r} must be 2-D, got {arr.shape}")
        payload["tensors"][name] = {"shape": list(arr.shape), "values": [float(x) for x in arr.ravel()]}
    Path(path).write_text(json.dumps(payload, sort_keys=True))


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    payload = json.loads(Path(path).read_text())
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not an {CHECKPOINT_FORMAT} file")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {payload.get('version')}")
    out = {}
    for name, entry in payload["tensors"].items():
        rows, cols = entry["shape"]
        values = entry["values"]
        if len(values) != rows * cols:
            raise ValueError(f"{path}: entry {name!r} has {len(values)} values for shape {rows}x{cols}")
        out[name] = np.asarray(values, dtype=np.float64).reshape(rows, cols)
    return out, payload.get("meta", {})


def parameters_of(modules: Iterable[Module]) -> dict[str, Tensor]:
    out: dict[str, Tensor] = {}
    for m in modules:
        out.update(m.named_parameters())
    return out
