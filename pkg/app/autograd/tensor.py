"""Tensors, learnable parameters and the reverse-mode tape.

A ``Tensor`` wraps a NumPy array. Operations in :mod:`app.autograd.ops` record
themselves on the active :class:`Tape` whenever one of their inputs requires a
gradient; :func:`backward` then walks the tape in reverse and accumulates
``grad`` on every leaf that took part in the computation.
"""
from __future__ import annotations

import contextlib
import contextvars
from dataclasses import dataclass, field
from typing import Callable, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from app.utils.exceptions import AutogradError, DimensionError

DEFAULT_DTYPE = np.float32

_active_tape: contextvars.ContextVar[Optional["Tape"]] = contextvars.ContextVar("active_tape", default=None)


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_produced")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        array = np.asarray(data, dtype=dtype if dtype is not None else None)
        if dtype is None and not np.issubdtype(array.dtype, np.floating):
            array = array.astype(DEFAULT_DTYPE)
        self.data: np.ndarray = array
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self._produced = False

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return not self._produced

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate_grad(self, g: np.ndarray) -> None:
        g = np.asarray(g, dtype=self.data.dtype).reshape(self.data.shape)
        self.grad = g.copy() if self.grad is None else self.grad + g

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"


class Parameter(Tensor):
    __slots__ = ("name",)

    def __init__(self, name: str, data, dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)
        self.name = name

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape}, dtype={self.dtype})"


Vjp = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


@dataclass
class TapeRecord:
    op_id: str
    inputs: Tuple[Tensor, ...]
    output: Tensor
    vjp: Vjp


@dataclass
class Tape:
    records: List[TapeRecord] = field(default_factory=list)
    _token: Optional[contextvars.Token] = field(default=None, repr=False)

    def __enter__(self) -> "Tape":
        self._token = _active_tape.set(self)
        return self

    def __exit__(self, exc_type, exc_val, exc_tb) -> None:
        _active_tape.reset(self._token)
        self._token = None

    def __len__(self) -> int:
        return len(self.records)

    def record(self, op_id: str, inputs: Sequence[Tensor], output: Tensor, vjp: Vjp) -> None:
        output._produced = True
        output.requires_grad = True
        self.records.append(TapeRecord(op_id, tuple(inputs), output, vjp))


def active_tape() -> Optional[Tape]:
    return _active_tape.get()


@contextlib.contextmanager
def no_tape() -> Iterator[None]:
    token = _active_tape.set(None)
    try:
        yield
    finally:
        _active_tape.reset(token)


def record_op(op_id: str, inputs: Sequence[Tensor], output: Tensor, vjp: Vjp) -> Tensor:
    tape = _active_tape.get()
    if tape is not None and any(t.requires_grad for t in inputs):
        tape.record(op_id, inputs, output, vjp)
    return output


def backward(tape: Tape, loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``grad`` of every leaf reached from ``loss``."""
    if loss.data.size != 1:
        raise AutogradError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    pending = {id(loss): np.ones_like(loss.data)}
    leaves = {}
    for rec in reversed(tape.records):
        g = pending.pop(id(rec.output), None)
        if g is None:
            continue
        for inp, gi in zip(rec.inputs, rec.vjp(g)):
            if gi is None or not inp.requires_grad:
                continue
            key = id(inp)
            pending[key] = pending[key] + gi if key in pending else gi
            if inp.is_leaf:
                leaves[key] = inp
    for key, leaf in leaves.items():
        leaf.accumulate_grad(pending[key])
