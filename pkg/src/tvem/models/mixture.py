"""Shared machinery for mixture models with a categorical latent."""

import numpy as np

from ..errors import InsufficientDataError, InvalidParamsError
from ..states import StateSpace
from .base import GenerativeModel, check_finite, set_weights

PI_FLOOR = 1e-8


def constrained_mixing(counts, floor=PI_FLOOR):
    """Maximize ``sum_c counts[c] * log(pi[c])`` subject to ``pi >= floor``, ``sum(pi) = 1``.

    The optimum sets the smallest components to ``floor`` and the rest
    proportional to their counts. Without binding floors this is ``counts / sum``.
    """
    counts = np.asarray(counts, dtype=float)
    C = counts.shape[0]
    if C * floor > 1.0:
        raise InvalidParamsError(f"mixing floor {floor} infeasible for C={C}")
    clamped = np.zeros(C, dtype=bool)
    while True:
        free = ~clamped
        mass = 1.0 - floor * np.count_nonzero(clamped)
        total = counts[free].sum()
        pi = np.full(C, floor)
        if total > 0:
            pi[free] = counts[free] / total * mass
        else:
            pi[free] = mass / np.count_nonzero(free)
        low = free & (pi < floor)
        if not np.any(low):
            break
        clamped |= low
    return pi / pi.sum()


def responsibilities(states, weights, C):
    """Scatter per-set weights ``(N, S)`` into a dense ``(N, C)`` table."""
    states = np.asarray(states, dtype=np.int64)
    N = states.shape[0]
    flat = (np.arange(N)[:, None] * C + states).ravel()
    return np.bincount(flat, weights=np.asarray(weights).ravel(), minlength=N * C).reshape(N, C)


def reseed_order(max_joints):
    """Datapoints ordered by ascending best joint (ties by index)."""
    return np.argsort(np.asarray(max_joints), kind="stable")


def kmeanspp_indices(data, k, rng):
    """Distinct datapoint indices chosen by D^2-weighted seeding."""
    N = data.shape[0]
    if N < k:
        raise InsufficientDataError(f"need at least {k} datapoints, got {N}")
    chosen = [int(rng.integers(N))]
    d2 = np.sum((data - data[chosen[0]]) ** 2, axis=1)
    for _ in range(1, k):
        d2_masked = d2.copy()
        d2_masked[chosen] = 0.0
        total = d2_masked.sum()
        if total > 0:
            idx = int(rng.choice(N, p=d2_masked / total))
        else:
            rest = np.setdiff1d(np.arange(N), chosen)
            idx = int(rng.choice(rest))
        chosen.append(idx)
        d2 = np.minimum(d2, np.sum((data - data[idx]) ** 2, axis=1))
    return np.array(chosen)


class MixtureModel(GenerativeModel):
    """Base for ``p(c, y) = pi_c p(y | c)`` with ``c`` in ``0..C-1``."""

    def __init__(self, C, D, pi_floor=PI_FLOOR):
        super().__init__(StateSpace.categorical(C), D)
        self.C = int(C)
        self.pi_floor = float(pi_floor)

    def _check_pi(self, pi):
        pi = check_finite("pi", pi)
        if pi.shape != (self.C,):
            raise InvalidParamsError(f"pi must have shape ({self.C},)")
        if np.any(pi < 0) or abs(pi.sum() - 1.0) > 1e-9:
            raise InvalidParamsError("pi must be non-negative and sum to 1")
        return pi

    def log_joint_table(self, params, data):
        """``(N, C)`` table of ``log p(c, y_n)``."""
        raise NotImplementedError

    def log_joint_all(self, params, data, states):
        return self.log_joint_table(params, data)[:, np.asarray(states, dtype=np.int64)]

    def log_joint_sets(self, params, data, states):
        table = self.log_joint_table(params, data)
        return np.take_along_axis(table, np.asarray(states, dtype=np.int64), axis=1)

    def sample_prior(self, params, size, rng):
        return rng.choice(self.C, size=size, p=params.pi).astype(np.int64)

    def m_step(self, data, states, log_joints, params_old):
        data = self.check_data(data)
        weights = set_weights(log_joints)
        r = responsibilities(states, weights, self.C)
        counts = r.sum(axis=0)
        starved = np.flatnonzero(counts <= 0)
        reseed = reseed_order(np.max(log_joints, axis=1))[: len(starved)]
        return self._update(data, r, counts, starved, reseed, params_old)

    def _update(self, data, r, counts, starved, reseed, params_old):
        raise NotImplementedError
