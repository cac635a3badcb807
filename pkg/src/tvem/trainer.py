"""TV-EM training loop with monotonicity checks, convergence and checkpoints.

One iteration runs a TV-E-step at the current parameters, a TV-M-step on
the updated sets, and then replaces the old parameters by the new ones.
The simplified free energy is tracked after both half-steps; in ``assert``
mode any decrease beyond ``1e-9 (1 + |F|)`` raises
:class:`~tvem.errors.MonotonicityViolation`.
"""

import json
import os
import tempfile
import time
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError, InvalidInputError, MonotonicityViolation
from .estep import EStepConfig, mixture_full_estep, run_estep
from .models import model_from_dict
from .posterior import VariationalCollection, entropy, free_energy_terms
from .states import enumerate_states

NUM_TOL = 1e-9
CONVERGENCE_WINDOW = 3
TRACE_COLUMNS = ("iter", "F_after_E", "F_after_M", "wall_ms", "replacements")
CHECKPOINT_FORMAT = 1


def num_tol(F):
    """Absolute slack for monotonicity checks at free-energy magnitude ``F``."""
    return NUM_TOL * (1.0 + abs(F)) if np.isfinite(F) else 0.0


def make_rng(seed, *key):
    """Generator for a named stream: independent of every other ``key`` under ``seed``."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=tuple(key)))


@dataclass
class TrainerConfig:
    S: int = 2
    estep: EStepConfig = field(default_factory=EStepConfig)
    max_iter: int = 100
    eps_rel: float = 1e-8
    seed: int = 0
    monotone: str = "assert"
    timing: bool = True
    checkpoint_every: int = 0
    checkpoint_path: str = None

    def validate(self, model=None):
        if int(self.S) < 1:
            raise ConfigError("S must be >= 1")
        if not (self.eps_rel > 0 and np.isfinite(self.eps_rel)):
            raise ConfigError("eps_rel must be positive")
        if int(self.max_iter) < 1:
            raise ConfigError("max_iter must be >= 1")
        if self.monotone not in ("assert", "warn"):
            raise ConfigError("monotone must be 'assert' or 'warn'")
        if int(self.seed) < 0:
            raise ConfigError("seed must be non-negative")
        if self.checkpoint_every < 0:
            raise ConfigError("checkpoint_every must be >= 0")
        if self.checkpoint_every and not self.checkpoint_path:
            raise ConfigError("checkpoint_every needs checkpoint_path")
        if model is not None:
            self.estep.validate(model)
        return self

    def to_dict(self):
        d = asdict(self)
        d["estep"] = self.estep.to_dict()
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown trainer option(s): {sorted(unknown)}")
        if "estep" in d and not isinstance(d["estep"], EStepConfig):
            d["estep"] = EStepConfig.from_dict(d["estep"])
        return cls(**d)


@dataclass
class TraceRecord:
    iter: int
    F_after_E: float
    F_after_M: float
    wall_ms: float
    replacements: int

    def row(self):
        return [getattr(self, c) for c in TRACE_COLUMNS]


class FreeEnergyTrace(list):
    """List of :class:`TraceRecord`, one per iteration."""

    def F_sequence(self, F_init=None):
        """Interleaved trajectory ``F_init, E_1, M_1, E_2, M_2, ...``."""
        seq = [] if F_init is None else [F_init]
        for r in self:
            seq.extend([r.F_after_E, r.F_after_M])
        return np.array(seq)

    def to_rows(self):
        return [r.row() for r in self]

    @classmethod
    def from_rows(cls, rows):
        return cls(TraceRecord(int(r[0]), float(r[1]), float(r[2]), float(r[3]), int(r[4])) for r in rows)


@dataclass
class TrainResult:
    params: object
    K: VariationalCollection
    trace: FreeEnergyTrace
    converged: bool
    F_init: float

    @property
    def iterations(self):
        return len(self.trace)

    @property
    def F(self):
        return self.trace[-1].F_after_M if self.trace else self.F_init


def init_params(model, data, rng):
    """Data-driven starting parameters (see each model's ``init_params``)."""
    return model.init_params(model.check_data(data), rng)


def init_sets(model, params, data, S, rng, cap=None):
    """Starting collection with ``min(S, |Omega|)`` distinct states per datapoint.

    Mixtures start from the optimal sets. Binary models take distinct prior
    samples, topped up with uniform draws, and finally with states from a
    random permutation of the space if the draws were not diverse enough.
    """
    data = model.check_data(data)
    space = model.space
    S = min(int(S), space.cardinality)
    if not space.is_binary:
        return mixture_full_estep(model, params, data, S)
    N = data.shape[0]
    prior = model.space.validate(model.sample_prior(params, (N, S), rng))
    blind = rng.integers(0, 2, size=(N, S, space.size), dtype=np.uint8)
    out = np.empty((N, S, space.size), dtype=np.uint8)
    for n in range(N):
        chosen, seen = [], set()
        for cand in (prior[n], blind[n]):
            for st in cand:
                key = space.key(st)
                if key not in seen:
                    seen.add(key)
                    chosen.append(st)
                    if len(chosen) == S:
                        break
            if len(chosen) == S:
                break
        if len(chosen) < S:
            extra = _fill_states(space, S - len(chosen), seen, rng, cap)
            chosen.extend(extra)
        out[n] = np.array(chosen)
    return VariationalCollection(space, out, check=False)


def _fill_states(space, count, seen, rng, cap):
    if space.cardinality <= 4 * (count + len(seen)):
        omega = enumerate_states(space, cap)
        order = rng.permutation(len(omega))
        pick = [omega[m] for m in order if space.key(omega[m]) not in seen]
        return pick[:count]
    out = []
    while len(out) < count:
        st = rng.integers(0, 2, size=space.size, dtype=np.uint8)
        key = space.key(st)
        if key not in seen:
            seen.add(key)
            out.append(st)
    return out


def _check(mode, phase, iteration, before, after, extra=None):
    tol = num_tol(before)
    if after >= before - tol or (np.isneginf(before)):
        return
    record = {
        "phase": phase,
        "iteration": iteration,
        "F_before": before,
        "F_after": after,
        "decrease": before - after,
        "tolerance": tol,
    }
    record.update(extra or {})
    msg = f"free energy decreased in {phase} of iteration {iteration}: {before!r} -> {after!r}"
    if mode == "assert":
        raise MonotonicityViolation(msg, record)
    warnings.warn(msg, RuntimeWarning, stacklevel=3)


def tvem_iteration(model, params, data, K, config, iteration, cap=None):
    """One TV-EM iteration; returns ``(params_new, K_new, record)``.

    ``K`` must carry log-joints under ``params``; the returned collection
    carries log-joints under ``params_new``.
    """
    t0 = time.perf_counter()
    if K.log_joints is None:
        K.refresh(model, params, data)
    F_start = float(np.sum(free_energy_terms(K.log_joints)))
    rng = make_rng(config.seed, iteration)

    K_new, n_new = run_estep(model, params, data, K, config.estep, rng, cap)
    F_E = float(np.sum(free_energy_terms(K_new.log_joints)))
    _check(config.monotone, "E-step", iteration, F_start, F_E)

    params_new = model.m_step(data, K_new.states, K_new.log_joints, params)
    w = K_new.weights()
    lj_new = model.log_joint_sets(params_new, data, K_new.states)
    H = float(np.sum(entropy(w)))
    with np.errstate(invalid="ignore"):
        Q_old = float(np.sum(np.where(w > 0, w * K_new.log_joints, 0.0)))
        Q_new = float(np.sum(np.where(w > 0, w * lj_new, 0.0)))
    _check(config.monotone, "M-step", iteration, Q_old + H, Q_new + H)

    K_new.log_joints = lj_new
    F_M = float(np.sum(free_energy_terms(lj_new)))
    _check(config.monotone, "M-step", iteration, F_E, F_M)
    wall = (time.perf_counter() - t0) * 1e3 if config.timing else 0.0
    record = TraceRecord(iteration, F_E, F_M, wall, int(np.sum(n_new)))
    return params_new, K_new, record


def train(model, data, config, params=None, K=None, cap=None, callback=None, resume=None):
    """Iterate TV-EM until the free energy settles or ``max_iter`` is reached.

    Convergence means ``|F_t - F_{t-1}| <= eps_rel (1 + |F_t|)`` on three
    consecutive iterations. ``resume`` is a :class:`Checkpoint` to continue
    from; the continued run is identical to an uninterrupted one.
    """
    data = model.check_data(data)
    config.validate(model)
    if resume is not None:
        params, K, trace = resume.params, resume.K, FreeEnergyTrace(resume.trace)
        F_init, streak, start = resume.F_init, resume.streak, resume.iteration + 1
    else:
        if params is None:
            params = init_params(model, data, make_rng(config.seed, 0, 0))
        model.validate_params(params)
        if K is None:
            K = init_sets(model, params, data, config.S, make_rng(config.seed, 0, 1), cap)
        trace, streak, start = FreeEnergyTrace(), 0, 1
        K = K.copy()
        K.refresh(model, params, data)
        F_init = float(np.sum(free_energy_terms(K.log_joints)))
    if K.log_joints is None:
        K.refresh(model, params, data)
    F_prev = trace[-1].F_after_M if trace else F_init
    converged = streak >= CONVERGENCE_WINDOW
    it = start
    while not converged and it <= config.max_iter:
        params, K, rec = tvem_iteration(model, params, data, K, config, it, cap)
        trace.append(rec)
        if abs(rec.F_after_M - F_prev) <= config.eps_rel * (1.0 + abs(rec.F_after_M)):
            streak += 1
        else:
            streak = 0
        F_prev = rec.F_after_M
        converged = streak >= CONVERGENCE_WINDOW
        if callback is not None:
            callback(rec)
        if config.checkpoint_every and (it % config.checkpoint_every == 0 or converged):
            Checkpoint(model, config, params, K, trace, it, streak, F_init).save(config.checkpoint_path)
        it += 1
    return TrainResult(params=params, K=K, trace=trace, converged=converged, F_init=F_init)


@dataclass
class Checkpoint:
    """Everything needed to resume a run: the RNG streams derive from seed and iteration."""

    model: object
    config: TrainerConfig
    params: object
    K: VariationalCollection
    trace: list
    iteration: int
    streak: int
    F_init: float

    def to_dict(self):
        return {
            "format": CHECKPOINT_FORMAT,
            "config": self.config.to_dict(),
            "params": self.model.params_to_dict(self.params),
            "states": self.K.to_list(),
            "iteration": self.iteration,
            "streak": self.streak,
            "F_init": self.F_init,
            "rng": {"seed": int(self.config.seed), "next_stream": [self.iteration + 1]},
            "trace": FreeEnergyTrace(self.trace).to_rows(),
        }

    def save(self, path):
        """Write atomically: a temporary file in the same directory is renamed over ``path``."""
        directory = os.path.dirname(os.path.abspath(path))
        fd, tmp = tempfile.mkstemp(prefix=".ckpt-", dir=directory)
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                json.dump(self.to_dict(), fh)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise

    @classmethod
    def from_dict(cls, d):
        if d.get("format") != CHECKPOINT_FORMAT:
            raise InvalidInputError("unsupported checkpoint format")
        model, params = model_from_dict(d["params"])
        K = VariationalCollection.from_list(model.space, d["states"])
        return cls(
            model=model,
            config=TrainerConfig.from_dict(d["config"]),
            params=params,
            K=K,
            trace=FreeEnergyTrace.from_rows(d["trace"]),
            iteration=int(d["iteration"]),
            streak=int(d["streak"]),
            F_init=float(d["F_init"]),
        )

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))
