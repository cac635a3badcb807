"""Truncated posteriors over per-datapoint state sets and their free energies.

A variational collection ``K`` holds one set of distinct latent states per
datapoint. The truncated posterior of datapoint ``n`` is the exact posterior
restricted to ``K[n]`` and renormalized; states outside the set carry an
exact zero.
"""

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError
from .logspace import logsumexp
from .models.base import set_weights
from .states import enumerate_states


def entropy(weights, axis=-1):
    """Shannon entropy ``-sum w log w`` with the ``0 log 0 = 0`` convention."""
    w = np.asarray(weights, dtype=float)
    logw = np.log(w, where=w > 0, out=np.zeros_like(w))
    return -np.sum(np.where(w > 0, w * logw, 0.0), axis=axis)


def _dedupe_check(space, states):
    """Raise if any set of ``states`` (shape ``(N, S, ...)``) holds a duplicate."""
    keys = space.sort_keys(states)
    order = np.lexsort(keys, axis=-1)
    sorted_states = np.take_along_axis(
        states, order.reshape(order.shape + (1,) * len(space.state_shape)), axis=1
    )
    dup = space.same_state(sorted_states[:, 1:], sorted_states[:, :-1])
    if np.any(dup):
        n = int(np.flatnonzero(np.any(dup, axis=1))[0])
        raise InvalidInputError(f"variational set of datapoint {n} contains duplicate states")


class VariationalCollection:
    """Per-datapoint variational state sets with cached log-joints.

    ``states`` has shape ``(N, S) + space.state_shape``. The cache is keyed by
    an opaque ``version`` token; :meth:`refresh` recomputes it whenever the
    parameters change.
    """

    def __init__(self, space, states, check=True):
        states = space.validate(states)
        if states.ndim != 2 + len(space.state_shape):
            raise InvalidInputError("states must have shape (N, S) + state shape")
        if states.shape[1] < 1:
            raise InvalidInputError("variational sets must be non-empty")
        if check:
            _dedupe_check(space, states)
        self.space = space
        self.states = states
        self.log_joints = None
        self.version = None

    @property
    def N(self):
        return self.states.shape[0]

    @property
    def S(self):
        return self.states.shape[1]

    def refresh(self, model, params, data, version=None):
        self.log_joints = model.log_joint_sets(params, model.check_data(data), self.states)
        self.version = version
        return self.log_joints

    def invalidate(self):
        self.log_joints = None
        self.version = None

    def copy(self):
        out = VariationalCollection(self.space, self.states.copy(), check=False)
        if self.log_joints is not None:
            out.log_joints = self.log_joints.copy()
        out.version = self.version
        return out

    def weights(self):
        """Truncated weights from the cached log-joints, shape ``(N, S)``."""
        if self.log_joints is None:
            raise InvalidInputError("log-joints not computed; call refresh() first")
        return set_weights(self.log_joints)

    def to_list(self):
        return self.states.tolist()

    @classmethod
    def from_list(cls, space, data):
        return cls(space, np.asarray(data, dtype=space.dtype))

    def __len__(self):
        return self.N

    def __eq__(self, other):
        return (
            isinstance(other, VariationalCollection)
            and self.space == other.space
            and np.array_equal(self.states, other.states)
        )


def as_collection(space, K):
    return K if isinstance(K, VariationalCollection) else VariationalCollection(space, K)


@dataclass
class TruncatedWeights:
    states: np.ndarray
    weights: np.ndarray


def truncated_weights(model, params, states, y):
    """Truncated posterior over one variational set for datapoint ``y``."""
    states = model.space.validate(states)
    if states.ndim != 1 + len(model.space.state_shape) or states.shape[0] < 1:
        raise InvalidInputError("expected a non-empty sequence of states")
    data = model.check_data(np.asarray(y, dtype=float).reshape(1, -1))
    lj = model.log_joint_all(params, data, states)[0]
    return TruncatedWeights(states=states, weights=set_weights(lj[None, :])[0])


def truncated_expectation(g, model, params, states, y):
    """``<g(s)>`` under the truncated posterior; ``g`` maps one state to a scalar or vector."""
    tw = truncated_weights(model, params, states, y)
    acc = None
    for s, w in zip(tw.states, tw.weights):
        if w == 0.0:
            continue
        term = w * np.asarray(g(s), dtype=float)
        acc = term if acc is None else acc + term
    return float(acc) if np.ndim(acc) == 0 else acc


def free_energy_terms(log_joints):
    """Per-datapoint contributions ``log sum_{s in K_n} p(s, y_n)``."""
    return logsumexp(np.asarray(log_joints, dtype=float), axis=-1)


def simplified_free_energy(model, params, data, K):
    """``sum_n log sum_{s in K_n} p(s, y_n | params)``; may be ``-inf``."""
    data = model.check_data(data)
    K = as_collection(model.space, K)
    return float(np.sum(free_energy_terms(model.log_joint_sets(params, data, K.states))))


def general_free_energy(model, params_var, params, data, K):
    """Free energy with truncated posteriors built from ``params_var``.

    ``sum_n sum_{s in K_n} q_n(s; params_var) log p(s, y_n | params) + H(q)``.
    Raises :class:`~tvem.errors.DegenerateSetError` when some set has zero mass
    under ``params_var``; returns ``-inf`` when ``params`` zeroes a used state.
    """
    data = model.check_data(data)
    K = as_collection(model.space, K)
    w = set_weights(model.log_joint_sets(params_var, data, K.states))
    lj = model.log_joint_sets(params, data, K.states)
    used = w > 0
    if np.any(used & np.isneginf(lj)):
        return -np.inf
    energy = np.sum(np.where(used, w * np.where(used, lj, 0.0), 0.0), axis=1)
    return float(np.sum(energy + entropy(w)))


def generalized_free_energy(model, q, params, data, cap=None):
    """Free energy of explicit weight tables ``q`` of shape ``(N, |Omega|)``.

    Entries may be exact zeros; they contribute nothing. Each row must sum to
    one within ``1e-9``. Columns follow the canonical state enumeration.
    """
    data = model.check_data(data)
    q = np.asarray(q, dtype=float)
    omega = enumerate_states(model.space, cap)
    if q.shape != (data.shape[0], len(omega)):
        raise InvalidInputError(f"q must have shape ({data.shape[0]}, {len(omega)})")
    if np.any(q < 0) or np.any(np.abs(q.sum(axis=1) - 1.0) > 1e-9):
        raise InvalidInputError("each q row must be non-negative and sum to 1")
    lj = model.log_joint_all(params, data, omega)
    used = q > 0
    if np.any(used & np.isneginf(lj)):
        return -np.inf
    energy = np.sum(np.where(used, q * np.where(used, lj, 0.0), 0.0), axis=1)
    return float(np.sum(energy + entropy(q)))
