"""Generative model contract shared by the bundled models."""

import numpy as np

from ..errors import DegenerateSetError, InvalidInputError, InvalidParamsError
from ..logspace import normalize_log
from ..states import validate_data


def check_finite(name, value):
    arr = np.asarray(value, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise InvalidParamsError(f"parameter {name} contains NaN or infinite entries")
    return arr


def set_weights(log_joints):
    """Truncated posterior weights for each row of ``log_joints``.

    Rows with no finite entry cannot be normalized and raise
    :class:`DegenerateSetError`.
    """
    lj = np.asarray(log_joints, dtype=float)
    bad = ~np.any(np.isfinite(lj), axis=-1)
    if np.any(bad):
        rows = np.flatnonzero(np.atleast_1d(bad))
        raise DegenerateSetError(
            f"variational set(s) {rows[:10].tolist()} have zero joint mass for every member"
        )
    weights, _ = normalize_log(lj, axis=-1)
    return weights


class GenerativeModel:
    """A joint distribution ``p(s, y | params)`` over discrete latents.

    Subclasses define ``kind``, ``space`` (a :class:`~tvem.states.StateSpace`)
    and the observed dimension ``D``. Log-joints are evaluated for whole
    arrays of states:

    * :meth:`log_joint_sets` takes per-datapoint sets ``(N, S, ...)``;
    * :meth:`log_joint_all` takes one shared list of states ``(M, ...)``.

    Both return an ``(N, S)`` or ``(N, M)`` array whose entries are finite or
    ``-inf``. Evaluation never mutates the model or the parameters.
    """

    kind = None
    count_data = False

    def __init__(self, space, D):
        if int(D) < 1:
            raise InvalidInputError("observed dimension D must be >= 1")
        self.space = space
        self.D = int(D)

    def __repr__(self):
        return f"{type(self).__name__}({self.space.kind}={self.space.size}, D={self.D})"

    def check_data(self, data):
        data = validate_data(data, nonnegative_integer=self.count_data)
        if data.shape[1] != self.D:
            raise InvalidInputError(f"data has dimension {data.shape[1]}, model expects D={self.D}")
        return data

    # -- to be provided by subclasses -------------------------------------------------

    def validate_params(self, params):
        raise NotImplementedError

    def log_joint_all(self, params, data, states):
        raise NotImplementedError

    def log_joint_sets(self, params, data, states):
        raise NotImplementedError

    def sample_prior(self, params, size, rng):
        raise NotImplementedError

    def sample(self, params, N, rng):
        """Ancestral sampling; returns ``(data, states)``."""
        raise NotImplementedError

    def m_step(self, data, states, log_joints, params_old):
        """Closed-form TV-M-step.

        ``log_joints`` are the log-joints of ``states`` under ``params_old``;
        they define the truncated weights used as responsibilities.
        """
        raise NotImplementedError

    def init_params(self, data, rng):
        raise NotImplementedError

    def random_params(self, rng):
        raise NotImplementedError

    def params_to_dict(self, params):
        raise NotImplementedError

    def params_from_dict(self, d):
        raise NotImplementedError

    def param_arrays(self, params):
        """Flat name -> array mapping, used for comparisons in tests and reports."""
        return {k: np.asarray(v, dtype=float) for k, v in vars(params).items()}


def log_joint(model, state, y, params):
    """``log p(state, y | params)`` for a single state and datapoint."""
    state = model.space.validate(state)
    if state.shape != model.space.state_shape:
        raise InvalidInputError(f"expected a single state of shape {model.space.state_shape}")
    y = np.asarray(y, dtype=float)
    if y.ndim != 1 or y.shape[0] != model.D:
        raise InvalidInputError(f"datapoint must have dimension {model.D}")
    model.validate_params(params)
    data = model.check_data(y[None, :])
    return float(model.log_joint_all(params, data, state[None, ...])[0, 0])
