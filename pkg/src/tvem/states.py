"""Latent state spaces, canonical ordering and bounded enumeration.

Binary states are rows of a ``uint8`` array with ``H`` columns; categorical
states are integer cluster indices ``0 <= c < C``. Arrays of states may carry
any number of leading axes, e.g. ``(N, S, H)`` for a whole collection of
variational sets.

The canonical order is lexicographic for binary vectors (first latent is the
most significant position) and numeric for indices. It is used for every
tie-break so that runs are reproducible bit for bit.
"""

import os
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError, SpaceTooLargeError

BINARY = "binary"
CATEGORICAL = "categorical"

DEFAULT_ENUM_CAP = 2**16
_INT64_MAX = 2**63 - 1


def enum_cap():
    """Enumeration cap, overridable through the ``TVEM_ENUM_CAP`` variable."""
    value = os.environ.get("TVEM_ENUM_CAP")
    if value is None or value == "":
        return DEFAULT_ENUM_CAP
    try:
        cap = int(value)
    except ValueError:
        raise InvalidInputError(f"TVEM_ENUM_CAP must be an integer, got {value!r}")
    if cap < 1:
        raise InvalidInputError("TVEM_ENUM_CAP must be positive")
    return cap


@dataclass(frozen=True)
class StateSpace:
    kind: str
    size: int

    def __post_init__(self):
        if self.kind not in (BINARY, CATEGORICAL):
            raise InvalidInputError(f"unknown state space kind {self.kind!r}")
        if int(self.size) < 1:
            raise InvalidInputError("state space size must be >= 1")

    @classmethod
    def binary(cls, H):
        return cls(BINARY, int(H))

    @classmethod
    def categorical(cls, C):
        return cls(CATEGORICAL, int(C))

    @property
    def is_binary(self):
        return self.kind == BINARY

    @property
    def cardinality(self):
        """Exact number of states as a Python integer."""
        return 2**self.size if self.is_binary else self.size

    @property
    def is_huge(self):
        """True when the cardinality does not fit a signed 64-bit integer."""
        return self.cardinality > _INT64_MAX

    @property
    def state_shape(self):
        return (self.size,) if self.is_binary else ()

    @property
    def dtype(self):
        return np.uint8 if self.is_binary else np.int64

    def validate(self, states):
        """Coerce ``states`` to the canonical dtype and check membership."""
        arr = np.asarray(states)
        if self.is_binary:
            if arr.ndim < 1 or arr.shape[-1] != self.size:
                raise InvalidInputError(
                    f"binary states need trailing axis of length {self.size}, got shape {arr.shape}"
                )
            if arr.size and not np.all((arr == 0) | (arr == 1)):
                raise InvalidInputError("binary states must contain only 0 and 1")
        else:
            if arr.size and not np.all(np.equal(np.mod(arr, 1), 0)):
                raise InvalidInputError("categorical states must be integers")
            if arr.size and (arr.min() < 0 or arr.max() >= self.size):
                raise InvalidInputError(f"cluster index outside 0..{self.size - 1}")
        return arr.astype(self.dtype, copy=False)

    def key(self, state):
        """Hashable, canonically ordered key for a single state."""
        if self.is_binary:
            return np.packbits(np.asarray(state, dtype=np.uint8)).tobytes()
        return int(state)

    def sort_keys(self, states):
        """Keys for :func:`numpy.lexsort` (least significant first).

        For an array of states with shape ``lead + state_shape`` the returned
        arrays all have shape ``lead``.
        """
        states = np.asarray(states)
        if not self.is_binary:
            return [states.astype(np.int64)]
        packed = np.packbits(states.astype(np.uint8), axis=-1)
        return [packed[..., b] for b in range(packed.shape[-1] - 1, -1, -1)]

    def same_state(self, a, b):
        """Elementwise equality of two state arrays over the state axes."""
        eq = np.asarray(a) == np.asarray(b)
        return np.all(eq, axis=-1) if self.is_binary else eq


def enumerate_states(space, cap=None):
    """All states of ``space`` in canonical order.

    Raises :class:`SpaceTooLargeError` when the space holds more than ``cap``
    states (default: :func:`enum_cap`).
    """
    cap = enum_cap() if cap is None else int(cap)
    if space.cardinality > cap:
        raise SpaceTooLargeError(
            f"{space.kind} space with {space.cardinality} states exceeds the enumeration cap {cap}"
        )
    if not space.is_binary:
        return np.arange(space.size, dtype=np.int64)
    H = space.size
    idx = np.arange(space.cardinality, dtype=np.int64)[:, None]
    shifts = np.arange(H - 1, -1, -1, dtype=np.int64)[None, :]
    return ((idx >> shifts) & 1).astype(np.uint8)


def state_index(space, states):
    """Position of each state in the canonical enumeration."""
    states = np.asarray(states)
    if not space.is_binary:
        return states.astype(np.int64)
    if space.size > 62:
        raise SpaceTooLargeError("state_index needs H <= 62")
    weights = (1 << np.arange(space.size - 1, -1, -1, dtype=np.int64))
    return states.astype(np.int64) @ weights


def validate_data(data, nonnegative_integer=False):
    """Return ``data`` as a float array of shape ``(N, D)`` with N, D >= 1."""
    arr = np.asarray(data, dtype=float)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise InvalidInputError(f"data must be a non-empty N x D array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError("data contains non-finite values")
    if nonnegative_integer and (np.any(arr < 0) or np.any(arr != np.round(arr))):
        raise InvalidInputError("count data must be non-negative integers")
    return arr
