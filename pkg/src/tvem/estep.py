"""TV-E-steps: update the variational sets at fixed model parameters.

Every update here keeps the sets at their capacity and never decreases the
simplified free energy. Partial steps propose candidate pools (blind,
perturbation, prior samples, sparse construction) and keep the ``S`` states
with the largest joints; full steps select the top ``S`` states of the whole
space directly.
"""

import itertools
from dataclasses import asdict, dataclass, field
from math import comb

import numpy as np

from .errors import (
    ConfigError,
    InvalidInputError,
    PoolTooLargeError,
    UnsupportedSpaceError,
)
from .posterior import VariationalCollection
from .states import enum_cap, enumerate_states

DEFAULT_POOL_CAP = 10_000

FULL_STRATEGIES = ("mixture-full", "exhaustive")
PARTIAL_STRATEGIES = ("blind", "perturb", "prior-sample", "sparse-construct", "hybrid")
STRATEGIES = FULL_STRATEGIES + PARTIAL_STRATEGIES


def _expand(arr, space):
    """Index helper: append singleton axes for the state dimensions."""
    return arr.reshape(arr.shape + (1,) * len(space.state_shape))


# -- single datapoint -------------------------------------------------------------------


def replace_if_better(model, params, states, candidate, y):
    """Swap ``candidate`` for the lowest-joint member if its joint is strictly larger.

    Returns ``(states, improved)``. ``states`` is a new array when a swap
    happened and the input array otherwise.
    """
    space = model.space
    states = space.validate(states)
    candidate = space.validate(candidate)
    if np.any(space.same_state(states, candidate[None, ...])):
        return states, False
    data = model.check_data(np.asarray(y, dtype=float).reshape(1, -1))
    lj = model.log_joint_all(params, data, states)[0]
    lj_new = model.log_joint_all(params, data, candidate[None, ...])[0, 0]
    worst = int(np.argmin(lj))
    if not lj_new > lj[worst]:
        return states, False
    out = states.copy()
    out[worst] = candidate
    return out, True


# -- batch merging ----------------------------------------------------------------------


def merge_arrays(space, states, log_joints, pool, pool_log_joints):
    """Keep the ``S`` best distinct states of ``states`` and ``pool`` per datapoint.

    Ranking is by log-joint (largest first), ties by canonical state order.
    Pool members with ``-inf`` joint or already present are ignored. Kept
    members of the current set stay in their slots' relative order, new
    states follow in pool order.

    Returns ``(states, log_joints, n_new)`` where ``n_new`` counts accepted
    pool states per datapoint.
    """
    N, S = log_joints.shape
    P = pool.shape[1]
    if P == 0:
        return states, log_joints, np.zeros(N, dtype=np.int64)
    allst = np.concatenate([states, pool], axis=1)
    alllj = np.concatenate([log_joints, pool_log_joints], axis=1)
    from_pool = np.zeros((N, S + P), dtype=np.int8)
    from_pool[:, S:] = 1
    invalid = (from_pool == 1) & np.isneginf(alllj)

    keys = space.sort_keys(allst)
    by_state = np.lexsort([from_pool] + keys, axis=-1)
    sorted_st = np.take_along_axis(allst, _expand(by_state, space), axis=1)
    dup = space.same_state(sorted_st[:, 1:], sorted_st[:, :-1])
    rows, cols = np.nonzero(dup)
    invalid[rows, by_state[rows, cols + 1]] = True

    rank = np.lexsort(keys + [-alllj, invalid.astype(np.int8)], axis=-1)
    keep = np.sort(rank[:, :S], axis=1)
    new_states = np.take_along_axis(allst, _expand(keep, space), axis=1)
    new_lj = np.take_along_axis(alllj, keep, axis=1)
    n_new = np.count_nonzero(keep >= S, axis=1)
    return new_states, new_lj, n_new


def merge_top_s(model, params, data, K, pool):
    """Merge a candidate pool ``(N, P, ...)`` into collection ``K``; returns ``(K_new, n_new)``."""
    data = model.check_data(data)
    pool = model.space.validate(pool)
    if pool.shape[1] < 1:
        raise InvalidInputError("candidate pool must be non-empty")
    if K.log_joints is None:
        K.refresh(model, params, data)
    pool_lj = model.log_joint_sets(params, data, pool)
    st, lj, n_new = merge_arrays(model.space, K.states, K.log_joints, pool, pool_lj)
    out = VariationalCollection(model.space, st, check=False)
    out.log_joints, out.version = lj, K.version
    return out, n_new


def count_new(space, old, new):
    """Per-datapoint number of states in ``new`` that are not in ``old``."""
    if space.is_binary:
        eq = np.all(new[:, :, None, :] == old[:, None, :, :], axis=-1)
    else:
        eq = new[:, :, None] == old[:, None, :]
    return np.count_nonzero(~np.any(eq, axis=2), axis=1)


# -- candidate suggestion ---------------------------------------------------------------


def _lead(n, count):
    return (count,) if n is None else (n, count)


def suggest_blind(space, count, rng, n=None):
    """``count`` uniform draws from the latent space (per datapoint if ``n`` given)."""
    if count < 1:
        raise InvalidInputError("count must be >= 1")
    shape = _lead(n, count)
    if space.is_binary:
        return rng.integers(0, 2, size=shape + (space.size,), dtype=np.uint8)
    return rng.integers(0, space.size, size=shape, dtype=np.int64)


def suggest_perturb(space, states, flips, count, rng):
    """Copies of random set members with ``flips`` distinct bits toggled.

    ``states`` is one set ``(S, H)`` or a collection ``(N, S, H)``.
    """
    if not space.is_binary:
        raise UnsupportedSpaceError("perturbation is defined for binary latents only")
    if count < 1:
        raise InvalidInputError("count must be >= 1")
    if not 1 <= flips <= space.size:
        raise InvalidInputError(f"flips must be in 1..{space.size}")
    states = np.asarray(states, dtype=np.uint8)
    single = states.ndim == 2
    if single:
        states = states[None]
    N, S, H = states.shape
    src = rng.integers(0, S, size=(N, count))
    base = np.take_along_axis(states, src[:, :, None], axis=1)
    positions = np.argsort(rng.random((N, count, H)), axis=-1)[..., :flips]
    mask = np.zeros((N, count, H), dtype=np.uint8)
    np.put_along_axis(mask, positions, 1, axis=-1)
    out = base ^ mask
    return out[0] if single else out


def suggest_prior(model, params, count, rng, n=None):
    """``count`` independent draws from the model prior (per datapoint if ``n`` given)."""
    if count < 1:
        raise InvalidInputError("count must be >= 1")
    return model.space.validate(model.sample_prior(params, _lead(n, count), rng))


def select_relevant(model, params, data, n_relevant):
    """Indices of the ``n_relevant`` latents with the largest relevance score.

    The default score is the scalar product between the datapoint and each
    latent's generative field. Ties go to the smaller index. Returns sorted
    indices of shape ``(N, n_relevant)``.
    """
    if not model.space.is_binary or not hasattr(model, "relevance"):
        raise UnsupportedSpaceError(f"{model.kind} has no per-latent relevance score")
    H = model.space.size
    if not 1 <= n_relevant <= H:
        raise InvalidInputError(f"number of relevant latents must be in 1..{H}")
    data = model.check_data(data)
    scores = model.relevance(params, data)
    top = np.argsort(-scores, axis=1, kind="stable")[:, :n_relevant]
    return np.sort(top, axis=1)


def sparse_pool_size(n_relevant, gamma):
    return sum(comb(n_relevant, k) for k in range(gamma + 1))


def construct_sparse(relevant, gamma, H, cap=DEFAULT_POOL_CAP):
    """All states with at most ``gamma`` active units, all inside ``relevant``.

    ``relevant`` is one index set ``(H',)`` or one per datapoint ``(N, H')``;
    the pool has ``sum_{k<=gamma} C(H', k)`` states, starting with the zero state.
    """
    relevant = np.asarray(relevant, dtype=np.int64)
    single = relevant.ndim == 1
    if single:
        relevant = relevant[None]
    n_rel = relevant.shape[1]
    if n_rel < 1 or relevant.min() < 0 or relevant.max() >= H:
        raise InvalidInputError(f"relevant indices must lie in 0..{H - 1}")
    if not 1 <= gamma <= n_rel:
        raise InvalidInputError(f"gamma must be in 1..{n_rel}")
    P = sparse_pool_size(n_rel, gamma)
    if P > cap:
        raise PoolTooLargeError(f"sparse pool of {P} states exceeds cap {cap}")
    template = np.zeros((P, n_rel), dtype=np.uint8)
    row = 1
    for k in range(1, gamma + 1):
        for combo in itertools.combinations(range(n_rel), k):
            template[row, list(combo)] = 1
            row += 1
    N = relevant.shape[0]
    out = np.zeros((N, P, H), dtype=np.uint8)
    n_idx = np.arange(N)[:, None]
    p_idx = np.arange(P)[None, :]
    for j in range(n_rel):
        out[n_idx, p_idx, relevant[:, j][:, None]] = template[None, :, j]
    return out[0] if single else out


# -- full E-steps -----------------------------------------------------------------------


def _top_s(table, S):
    """Column indices of the ``S`` largest entries per row, ties to the smaller index."""
    N, M = table.shape
    idx = np.broadcast_to(np.arange(M), (N, M))
    rank = np.lexsort([idx, -table], axis=-1)
    return np.sort(rank[:, :S], axis=1)


def mixture_full_estep(model, params, data, n_clusters):
    """Optimal sets of ``n_clusters`` clusters: the largest joints per datapoint."""
    if model.space.is_binary or not hasattr(model, "log_joint_table"):
        raise UnsupportedSpaceError("mixture E-step needs a categorical model")
    if not 1 <= n_clusters <= model.space.size:
        raise InvalidInputError(f"set size must be in 1..{model.space.size}")
    data = model.check_data(data)
    table = model.log_joint_table(params, data)
    top = _top_s(table, n_clusters)
    K = VariationalCollection(model.space, top, check=False)
    K.log_joints = np.take_along_axis(table, top, axis=1)
    return K


def exhaustive_estep(model, params, data, S, cap=None):
    """Top-``S`` states of the enumerated space for every datapoint."""
    data = model.check_data(data)
    omega = enumerate_states(model.space, cap)
    S = min(int(S), len(omega))
    table = model.log_joint_all(params, data, omega)
    top = _top_s(table, S)
    K = VariationalCollection(model.space, omega[top], check=False)
    K.log_joints = np.take_along_axis(table, top, axis=1)
    return K


# -- strategy configuration -------------------------------------------------------------


@dataclass
class EStepConfig:
    """Which TV-E-step to run and with what candidate budget.

    ``strategy=None`` picks :func:`default_strategy` for the model on
    validation. ``candidates`` is the pool size of each suggestion source
    (default: the set capacity). ``hybrid`` combines blind and prior samples, plus
    perturbations and sparse construction for binary models when configured.
    """

    strategy: str = None
    candidates: int = None
    flips: int = 1
    n_relevant: int = None
    gamma: int = None
    rounds: int = 1
    pool_cap: int = DEFAULT_POOL_CAP
    sources: list = field(default_factory=list)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d or {})
        if "H_prime" in d:
            d["n_relevant"] = d.pop("H_prime")
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown E-step option(s): {sorted(unknown)}")
        return cls(**d)

    @property
    def is_full(self):
        return self.strategy in FULL_STRATEGIES

    def validate(self, model):
        space = model.space
        if self.strategy is None:
            self.strategy = default_strategy(model)
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"unknown E-step strategy {self.strategy!r}; expected one of {STRATEGIES}")
        if self.strategy == "mixture-full" and space.is_binary:
            raise ConfigError("mixture-full needs a mixture model")
        if self.strategy in ("perturb", "sparse-construct") and not space.is_binary:
            raise ConfigError(f"{self.strategy} needs binary latents")
        if self.rounds < 1:
            raise ConfigError("rounds must be >= 1")
        if self.candidates is not None and self.candidates < 1:
            raise ConfigError("candidates must be >= 1")
        if space.is_binary and not 1 <= self.flips <= space.size:
            raise ConfigError(f"flips must be in 1..{space.size}")
        if self.strategy == "sparse-construct" and (self.n_relevant is None or self.gamma is None):
            raise ConfigError("sparse-construct needs n_relevant (H') and gamma")
        if self.n_relevant is not None:
            if not space.is_binary:
                raise ConfigError("n_relevant applies to binary models only")
            if not 1 <= self.n_relevant <= space.size:
                raise ConfigError(f"n_relevant must be in 1..{space.size}")
            if self.gamma is None or not 1 <= self.gamma <= self.n_relevant:
                raise ConfigError("gamma must be in 1..n_relevant")
        for src in self.sources:
            if src not in ("blind", "prior-sample", "perturb", "sparse-construct"):
                raise ConfigError(f"unknown hybrid source {src!r}")
        return self

    def hybrid_sources(self, model):
        if self.sources:
            return list(self.sources)
        out = ["blind", "prior-sample"]
        if model.space.is_binary:
            out.append("perturb")
            if self.n_relevant is not None:
                out.append("sparse-construct")
        return out


def default_strategy(model, cap=None):
    """Optimal sets for mixtures, exhaustive search for enumerable binary spaces, else hybrid."""
    if not model.space.is_binary:
        return "mixture-full"
    limit = enum_cap() if cap is None else cap
    return "exhaustive" if model.space.cardinality <= min(limit, 2**10) else "hybrid"


def suggest_pool(model, params, data, K, cfg, rng):
    """Candidate pool ``(N, P, ...)`` for one partial E-step round."""
    N, S = K.N, K.S
    count = cfg.candidates or S
    names = cfg.hybrid_sources(model) if cfg.strategy == "hybrid" else [cfg.strategy]
    parts = []
    for name in names:
        if name == "blind":
            parts.append(suggest_blind(model.space, count, rng, n=N))
        elif name == "prior-sample":
            parts.append(suggest_prior(model, params, count, rng, n=N))
        elif name == "perturb":
            parts.append(suggest_perturb(model.space, K.states, cfg.flips, count, rng))
        elif name == "sparse-construct":
            rel = select_relevant(model, params, data, cfg.n_relevant)
            parts.append(construct_sparse(rel, cfg.gamma, model.space.size, cfg.pool_cap))
    return np.concatenate(parts, axis=1)


def run_estep(model, params, data, K, cfg, rng, cap=None):
    """Apply the configured TV-E-step; returns ``(K_new, n_new)``.

    ``K`` must carry log-joints under ``params``. Full strategies recompute
    the optimal sets; partial strategies run ``cfg.rounds`` suggest-and-merge
    rounds.
    """
    if cfg.strategy == "mixture-full":
        K_new = mixture_full_estep(model, params, data, K.S)
    elif cfg.strategy == "exhaustive":
        K_new = exhaustive_estep(model, params, data, K.S, cap)
    else:
        K_new, total = K, np.zeros(K.N, dtype=np.int64)
        for _ in range(cfg.rounds):
            pool = suggest_pool(model, params, data, K_new, cfg, rng)
            K_new, n_new = merge_top_s(model, params, data, K_new, pool)
            total += n_new
        return K_new, total
    K_new.version = K.version
    return K_new, count_new(model.space, K.states, K_new.states)
