"""Reverse-mode automatic differentiation core: tensors, parameters, tapes.

The numerical side of this package is deliberately small: dense numpy
arrays wrapped in :class:`Tensor`, a :class:`Tape` that records every
primitive op in execution order, and :func:`backward`, which replays the
record in exact reverse order. The primitive ops live in
``resnetkit.engine.ops``.
"""

from __future__ import annotations

from typing import Callable, Iterable

import numpy as np

_debug_checks = False


def set_debug_checks(enabled: bool) -> None:
    """Toggle NaN/Inf assertions after every forward op (test builds)."""
    global _debug_checks
    _debug_checks = bool(enabled)


def debug_checks_enabled() -> bool:
    return _debug_checks


def check_finite(op_name: str, data: np.ndarray) -> None:
    if _debug_checks and not np.all(np.isfinite(data)):
        raise FloatingPointError(f"{op_name}: non-finite values in forward output")


class Tensor:
    """A dense N-d array tracked for differentiation.

    ``data`` is a row-major float32/float64 array, treated as immutable once
    produced by an op. ``grad`` is filled lazily during the backward pass and
    always matches ``data`` in shape.
    """

    __slots__ = ("data", "grad")

    def __init__(self, data) -> None:
        self.data = np.asarray(data)
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def accumulate(self, g: np.ndarray) -> None:
        self.grad = g if self.grad is None else self.grad + g

    def __repr__(self) -> str:
        return f"Tensor(shape={tuple(self.data.shape)}, dtype={self.data.dtype})"


class Parameter(Tensor):
    """Trainable tensor with a stable unique id and weight-decay participation.

    ``velocity`` holds the optimizer's momentum buffer; it is allocated on the
    first update step.
    """

    __slots__ = ("id", "decayable", "velocity")

    def __init__(self, id: str, data, decayable: bool = True) -> None:
        super().__init__(data)
        self.id = id
        self.decayable = decayable
        self.grad = np.zeros_like(self.data)
        self.velocity: np.ndarray | None = None

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        return f"Parameter({self.id!r}, shape={tuple(self.data.shape)})"


class TapeConsumedError(RuntimeError):
    """Raised when backward() runs a second time over the same tape."""


class Tape:
    """Ordered record of executed primitive ops.

    Each record is a closure holding exactly the context its op needs for the
    backward pass. A tape may be consumed by :func:`backward` only once.
    One forward/backward pass over a tape is single-threaded by contract;
    distinct model replicas on distinct threads share no mutable state.
    """

    def __init__(self) -> None:
        self._records: list[tuple[str, Callable[[], None]]] = []
        self._consumed = False

    def record(self, op_name: str, backward_fn: Callable[[], None]) -> None:
        self._records.append((op_name, backward_fn))

    def __len__(self) -> int:
        return len(self._records)

    @property
    def consumed(self) -> bool:
        return self._consumed


def backward(tape: Tape, loss: Tensor) -> None:
    """Propagate d(loss)/d(x) to every tensor recorded on ``tape``.

    Ops are visited in exact reverse execution order. The gradient of the
    loss with respect to itself is 1; tensors that do not influence the loss
    keep a ``None`` (or pre-zeroed, for parameters) gradient.
    """
    if tape.consumed:
        raise TapeConsumedError("backward() already ran over this tape")
    if loss.data.ndim != 0:
        raise ValueError(f"loss must be a scalar, got shape {tuple(loss.data.shape)}")
    loss.accumulate(np.ones((), dtype=loss.data.dtype))
    for _, fn in reversed(tape._records):
        fn()
    tape._consumed = True


def zero_grads(params: Iterable[Parameter]) -> None:
    for p in params:
        p.zero_grad()
