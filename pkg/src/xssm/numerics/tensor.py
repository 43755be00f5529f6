"""Dense tensors and the reverse-mode differentiation tape."""
from __future__ import annotations

import contextlib
from typing import Callable, Iterator, Sequence

import numpy as np

_DEFAULT_DTYPE = [np.float32]
_TAPES: list["Tape"] = []


class NonFiniteError(FloatingPointError):
    """Raised as soon as an operation produces NaN or Inf."""


def default_dtype():
    return _DEFAULT_DTYPE[-1]


@contextlib.contextmanager
def precision(dtype) -> Iterator[None]:
    """Temporarily switch the dtype used for new tensors and parameters.

    Gradient checks run under ``precision(np.float64)``; finite differences
    are not trustworthy in single precision.
    """
    _DEFAULT_DTYPE.append(np.dtype(dtype).type)
    try:
        yield
    finally:
        _DEFAULT_DTYPE.pop()


def check_finite(arr: np.ndarray, what: str = "tensor") -> None:
    # NaN propagates through min/max and Inf lands in one of them
    if arr.size and not (np.isfinite(arr.min()) and np.isfinite(arr.max())):
        raise NonFiniteError(f"non-finite values produced by {what}")


class Tensor:
    """An immutable n-d float array with an optional gradient slot."""

    __slots__ = ("data", "requires_grad", "grad", "name", "__weakref__")
    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(default_dtype())
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.item())

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag}, requires_grad={self.requires_grad})"

    def __len__(self) -> int:
        return self.shape[0]

    # arithmetic sugar; implementations live in ops
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from . import ops
        return ops.mul(self, -1.0)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def __getitem__(self, key):
        from . import ops
        return ops.getitem(self, key)

    def reshape(self, *shape):
        from . import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def transpose(self, *axes):
        from . import ops
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return ops.transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        from . import ops
        return ops.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        from . import ops
        return ops.mean(self, axis=axis, keepdims=keepdims)


def as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=default_dtype()))


BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class _Record:
    __slots__ = ("output", "inputs", "backward")

    def __init__(self, output: Tensor, inputs: tuple[Tensor, ...], backward: BackwardFn):
        self.output = output
        self.inputs = inputs
        self.backward = backward


class Tape:
    """Ordered log of primitive applications, replayed in reverse by :meth:`backward`.

    Used as a context manager; every op evaluated inside the ``with`` block
    whose inputs need gradients appends one record.
    """

    def __init__(self):
        self.records: list[_Record] = []

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _TAPES.remove(self)

    def __len__(self) -> int:
        return len(self.records)

    def record(self, output: Tensor, inputs: tuple[Tensor, ...], backward: BackwardFn) -> None:
        self.records.append(_Record(output, inputs, backward))

    def clear(self) -> None:
        self.records.clear()

    def backward(self, output: Tensor) -> None:
        """Accumulate d(output)/d(leaf) into ``leaf.grad`` for every leaf that requires grad."""
        if output.size != 1:
            raise ValueError(f"backward needs a scalar output, got shape {output.shape}")
        produced: dict[int, int] = {}
        for pos, rec in enumerate(self.records):
            key = id(rec.output)
            if key in produced:
                raise RuntimeError("cycle in tape: tensor recorded as output twice")
            for inp in rec.inputs:
                if produced.get(id(inp), -1) >= pos:
                    raise RuntimeError("cycle in tape: input produced after its consumer")
            produced[key] = pos

        grads: dict[int, np.ndarray] = {id(output): np.ones_like(output.data)}
        leaves: dict[int, Tensor] = {}
        for rec in reversed(self.records):
            g = grads.pop(id(rec.output), None)
            if g is None:
                continue
            in_grads = rec.backward(g)
            for inp, ig in zip(rec.inputs, in_grads):
                if ig is None or not inp.requires_grad:
                    continue
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + ig
                else:
                    grads[key] = ig
                if key not in produced:
                    leaves[key] = inp
        if id(output) not in produced and output.requires_grad:
            leaves[id(output)] = output
        for key, leaf in leaves.items():
            g = grads[key].astype(leaf.data.dtype, copy=False)
            if g.shape != leaf.shape:
                raise RuntimeError(f"gradient shape {g.shape} != tensor shape {leaf.shape}")
            leaf.grad = g if leaf.grad is None else leaf.grad + g


def active_tape() -> Tape | None:
    return _TAPES[-1] if _TAPES else None


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Suspend recording, e.g. for evaluation inside a training step."""
    saved = list(_TAPES)
    _TAPES.clear()
    try:
        yield
    finally:
        _TAPES.extend(saved)


def make_result(data: np.ndarray, inputs: Sequence[Tensor], backward: BackwardFn, what: str) -> Tensor:
    """Wrap an op result and record it on the active tape when needed."""
    check_finite(data, what)
    out = Tensor(data)
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.record(out, tuple(inputs), backward)
    return out


def backward(output: Tensor, tape: Tape) -> None:
    tape.backward(output)
