"""Exact-enumeration references: likelihood, posteriors, exact EM, hard EM.

Everything here enumerates the full latent space and is meant for toy-scale
ground truth. The M-steps operate on dense ``(N, |Omega|)`` weight tables and
are written independently of the set-based M-steps of the models; they only
share the model definition (floors, mixing constraint, reseeding rule).
"""

import itertools
from math import comb

import numpy as np
import scipy.linalg

from .errors import BudgetExceededError, DegenerateModelError, InvalidInputError
from .logspace import logsumexp
from .models.bsc import COND_LIMIT, RIDGE_SCALE, BinarySparseCoding, BscParams
from .models.gmm import GaussianMixture, GmmParams
from .models.mixture import constrained_mixing, reseed_order
from .models.poisson import PoissonMixParams, PoissonMixture
from .posterior import VariationalCollection
from .states import enumerate_states

DEFAULT_BUDGET = 2_000_000


def joint_table(model, params, data, cap=None):
    """``(omega, lj)`` with ``lj[n, m] = log p(omega[m], y_n)``."""
    data = model.check_data(data)
    omega = enumerate_states(model.space, cap)
    return omega, model.log_joint_all(params, data, omega)


def log_likelihood(model, params, data, cap=None):
    """``sum_n log sum_s p(s, y_n | params)`` by enumeration."""
    _, lj = joint_table(model, params, data, cap)
    return float(np.sum(logsumexp(lj, axis=1)))


def _normalize_rows(lj):
    if np.any(np.all(np.isneginf(lj), axis=1)):
        raise DegenerateModelError("every latent state has zero joint probability")
    top = np.max(lj, axis=1, keepdims=True)
    w = np.exp(lj - top)
    return w / w.sum(axis=1, keepdims=True)


def posterior_table(model, params, data, cap=None):
    """Exact posteriors of all datapoints, shape ``(N, |Omega|)``."""
    _, lj = joint_table(model, params, data, cap)
    return _normalize_rows(lj)


def exact_posterior(model, params, y, cap=None):
    """Exact posterior of one datapoint over the canonical enumeration."""
    y = np.asarray(y, dtype=float).reshape(1, -1)
    return posterior_table(model, params, y, cap)[0]


def kl_divergence(q, p, log_p=None):
    """``sum q log(q / p)`` with ``0 log 0 = 0``; ``inf`` if ``q`` puts mass where ``p`` has none.

    ``log_p`` may be passed instead of relying on ``log(p)`` when ``p`` has
    entries too small to represent.
    """
    q = np.asarray(q, dtype=float)
    if log_p is None:
        with np.errstate(divide="ignore"):
            log_p = np.log(np.asarray(p, dtype=float))
    log_p = np.asarray(log_p, dtype=float)
    support = q > 0
    if np.any(support & np.isneginf(log_p)):
        return np.inf
    qs = q[support]
    return float(np.sum(qs * (np.log(qs) - log_p[support])))


def annealed_posterior(model, params, y, T, cap=None, literal=False):
    """Boltzmann-reweighted posterior with energy ``E = -log p(s, y)``.

    Weights are proportional to ``exp(-E / T)``: ``T = 1`` gives the exact
    posterior, large ``T`` flattens it and ``T -> 0`` concentrates on the MAP
    state. ``literal=True`` uses ``exp(-T E)`` instead, which inverts the
    role of the temperature.
    """
    T = float(T)
    if not (np.isfinite(T) and T > 0):
        raise InvalidInputError("temperature must be positive and finite")
    _, lj = joint_table(model, params, np.asarray(y, dtype=float).reshape(1, -1), cap)
    scaled = lj * T if literal else lj / T
    return _normalize_rows(scaled)[0]


# -- dense M-steps ----------------------------------------------------------------------


def _starvation(counts, max_joints):
    starved = np.flatnonzero(counts <= 0)
    return starved, reseed_order(max_joints)[: len(starved)]


def _gmm_dense(model, data, r, max_joints, old):
    counts = r.sum(axis=0)
    C, D = model.C, model.D
    means = np.empty((C, D))
    var = np.empty((C, D))
    for c in range(C):
        if counts[c] > 0:
            means[c] = r[:, c] @ data / counts[c]
            var[c] = np.maximum(r[:, c] @ (data - means[c]) ** 2 / counts[c], model.var_floor)
        else:
            means[c], var[c] = old.means[c], old.variances[c]
    starved, reseed = _starvation(counts, max_joints)
    for c, n in zip(starved, reseed):
        means[c] = data[n]
    return GmmParams(pi=constrained_mixing(counts, model.pi_floor), means=means, variances=var)


def _poisson_dense(model, data, r, max_joints, old):
    counts = r.sum(axis=0)
    rates = np.empty((model.C, model.D))
    for c in range(model.C):
        if counts[c] > 0:
            rates[c] = np.maximum(r[:, c] @ data / counts[c], model.rate_floor)
        else:
            rates[c] = old.rates[c]
    starved, reseed = _starvation(counts, max_joints)
    for c, n in zip(starved, reseed):
        rates[c] = np.maximum(data[n], model.rate_floor)
    return PoissonMixParams(pi=constrained_mixing(counts, model.pi_floor), rates=rates)


def _bsc_dense(model, data, q, omega, old):
    H, D = model.H, model.D
    N = data.shape[0]
    s = omega.astype(float)
    mean_s = q @ s
    gram = s.T @ (q.sum(axis=0)[:, None] * s)
    B = data.T @ mean_s
    W = old.W.copy()
    active = np.flatnonzero(np.diag(gram) > 0)
    if active.size:
        G = gram[np.ix_(active, active)]
        if np.linalg.cond(G) >= COND_LIMIT:
            G = G + RIDGE_SCALE * np.trace(gram) / H * np.eye(active.size)
        W[:, active] = scipy.linalg.solve(G, B[:, active].T, assume_a="sym").T
    sq = (
        np.sum(data * data)
        - 2.0 * np.sum(W * B)
        + np.sum((W.T @ W) * gram)
    )
    sigma2 = max(sq / (N * D), model.var_floor)
    pi = float(np.clip(mean_s.sum() / (N * H), model.prior_floor, 1.0 - model.prior_floor))
    return BscParams(W=W, pi=pi, sigma2=float(sigma2))


def dense_m_step(model, data, q, omega, lj, params_old):
    """M-step from an explicit weight table ``q`` over the enumeration ``omega``.

    ``lj`` holds the log-joints under ``params_old``; the reseeding rule for
    starved clusters uses the best joint on each row's support.
    """
    data = model.check_data(data)
    support_best = np.max(np.where(q > 0, lj, -np.inf), axis=1)
    if isinstance(model, GaussianMixture):
        return _gmm_dense(model, data, q, support_best, params_old)
    if isinstance(model, PoissonMixture):
        return _poisson_dense(model, data, q, support_best, params_old)
    if isinstance(model, BinarySparseCoding):
        return _bsc_dense(model, data, q, omega, params_old)
    raise InvalidInputError(f"no dense M-step for {type(model).__name__}")


def exact_em_step(model, params, data, cap=None):
    """One EM iteration with full posteriors as weights."""
    data = model.check_data(data)
    omega, lj = joint_table(model, params, data, cap)
    q = _normalize_rows(lj)
    # reseeding looks at the whole space, even where weights underflow to zero
    best = np.max(lj, axis=1)
    if isinstance(model, BinarySparseCoding):
        return _bsc_dense(model, data, q, omega, params)
    dense = _gmm_dense if isinstance(model, GaussianMixture) else _poisson_dense
    return dense(model, data, q, best, params)


# -- hard EM ----------------------------------------------------------------------------


def hard_free_energy(model, params, data, states):
    """``sum_n log p(s_n, y_n | params)`` for one state per datapoint."""
    data = model.check_data(data)
    states = model.space.validate(states)
    return float(np.sum(model.log_joint_sets(params, data, states[:, None, ...])))


def hard_em_step(model, params, data, states_old=None, proposals=None, cap=None):
    """One hard-EM iteration; returns ``(states, params_new)``.

    Without ``proposals`` every datapoint takes its MAP state (first in
    canonical order on ties). With ``proposals`` of shape ``(N, P, ...)`` and
    warm-start ``states_old``, the best proposal is accepted only if its
    posterior is no worse than that of the previous state; otherwise the
    previous state is kept.
    """
    data = model.check_data(data)
    space = model.space
    if proposals is None:
        omega, lj = joint_table(model, params, data, cap)
        idx = np.argmax(lj, axis=1)
        states = omega[idx]
        lj_s = lj[np.arange(len(idx)), idx]
    else:
        if states_old is None:
            raise InvalidInputError("partial hard EM needs the previous states")
        states_old = space.validate(states_old)
        proposals = space.validate(proposals)
        lj_old = model.log_joint_sets(params, data, states_old[:, None, ...])[:, 0]
        lj_prop = model.log_joint_sets(params, data, proposals)
        best = np.argmax(lj_prop, axis=1)
        lj_best = lj_prop[np.arange(len(best)), best]
        accept = lj_best >= lj_old
        cand = proposals[np.arange(len(best)), best]
        mask = accept.reshape(accept.shape + (1,) * len(space.state_shape))
        states = np.where(mask, cand, states_old)
        lj_s = np.where(accept, lj_best, lj_old)
    if isinstance(model, BinarySparseCoding):
        new = _bsc_hard(model, data, states, params)
    else:
        q = np.zeros((data.shape[0], model.C))
        q[np.arange(data.shape[0]), states] = 1.0
        dense = _gmm_dense if isinstance(model, GaussianMixture) else _poisson_dense
        new = dense(model, data, q, lj_s, params)
    return states, new


def _bsc_hard(model, data, states, old):
    """Dense BSC update for point-mass weights on the given states."""
    uniq, inverse = np.unique(states, axis=0, return_inverse=True)
    q = np.zeros((data.shape[0], uniq.shape[0]))
    q[np.arange(data.shape[0]), inverse.ravel()] = 1.0
    return _bsc_dense(model, data, q, uniq, old)


# -- brute-force set search -------------------------------------------------------------


def brute_force_best_sets(model, params, data, S, budget=DEFAULT_BUDGET, cap=None):
    """Per datapoint, the size-``S`` subset of Omega with the largest joint mass.

    Subsets are scanned in lexicographic order of canonical indices and only
    a strictly larger value replaces the incumbent, so ties resolve to the
    lexicographically smallest subset.
    """
    omega, lj = joint_table(model, params, data, cap)
    N, M = lj.shape
    if not 1 <= S <= M:
        raise InvalidInputError(f"S must be in 1..{M}")
    n_sub = comb(M, S)
    if n_sub * N > budget:
        raise BudgetExceededError(f"{n_sub} subsets x {N} datapoints exceeds budget {budget}")
    subsets = np.array(list(itertools.combinations(range(M), S)), dtype=np.int64)
    best = np.empty((N, S), dtype=np.int64)
    for n in range(N):
        values = logsumexp(lj[n][subsets], axis=1)
        best[n] = subsets[int(np.argmax(values))]
    K = VariationalCollection(model.space, omega[best], check=False)
    K.log_joints = np.take_along_axis(lj, best, axis=1)
    return K
