"""Binary sparse coding: Bernoulli latents, linear Gaussian observation.

    p(s | pi)        = prod_h pi^s_h (1 - pi)^(1 - s_h)
    p(y | s, W, s2)  = N(y; W s, s2 I)
"""

from dataclasses import dataclass

import numpy as np

from ..errors import InvalidParamsError, SingularSystemError
from ..states import StateSpace
from .base import GenerativeModel, check_finite, set_weights

VAR_FLOOR = 1e-6
PRIOR_FLOOR = 1e-4
RIDGE_SCALE = 1e-6
COND_LIMIT = 1e10
_CHUNK = 2**22
_LOG_2PI = np.log(2.0 * np.pi)


@dataclass
class BscParams:
    W: np.ndarray  # (D, H)
    pi: float
    sigma2: float


class BinarySparseCoding(GenerativeModel):
    kind = "bsc"

    def __init__(self, H, D, var_floor=VAR_FLOOR, prior_floor=PRIOR_FLOOR):
        super().__init__(StateSpace.binary(H), D)
        self.H = int(H)
        self.var_floor = float(var_floor)
        self.prior_floor = float(prior_floor)

    def validate_params(self, params):
        W = check_finite("W", params.W)
        if W.shape != (self.D, self.H):
            raise InvalidParamsError(f"W must have shape ({self.D}, {self.H})")
        pi = float(check_finite("pi", params.pi))
        if not 0.0 <= pi <= 1.0:
            raise InvalidParamsError("pi must lie in [0, 1]")
        if not float(check_finite("sigma2", params.sigma2)) > 0:
            raise InvalidParamsError("sigma2 must be positive")
        return params

    def _log_prior(self, pi, n_on):
        with np.errstate(divide="ignore", invalid="ignore"):
            lp, lq = np.log(pi), np.log1p(-pi)
            on = np.where(n_on > 0, n_on * lp, 0.0)
            off = np.where(self.H - n_on > 0, (self.H - n_on) * lq, 0.0)
        return on + off

    def log_joint_all(self, params, data, states):
        s = np.asarray(states, dtype=float)  # (M, H)
        means = s @ params.W.T  # (M, D)
        step = max(1, _CHUNK // max(1, means.size))
        sq = np.empty((data.shape[0], s.shape[0]))
        for lo in range(0, data.shape[0], step):
            resid = data[lo:lo + step, None, :] - means[None, :, :]
            sq[lo:lo + step] = np.einsum("nmd,nmd->nm", resid, resid)
        return self._finish(params, s.sum(axis=-1)[None, :], sq)

    def log_joint_sets(self, params, data, states):
        s = np.asarray(states, dtype=float)  # (N, S, H)
        resid = data[:, None, :] - s @ params.W.T
        sq = np.einsum("nsd,nsd->ns", resid, resid)
        return self._finish(params, s.sum(axis=-1), sq)

    def _finish(self, params, n_on, sq):
        s2 = params.sigma2
        return self._log_prior(params.pi, n_on) - 0.5 * self.D * (_LOG_2PI + np.log(s2)) - 0.5 * sq / s2

    def relevance(self, params, data):
        """Scalar product of each datapoint with each dictionary column, ``(N, H)``."""
        return np.asarray(data, dtype=float) @ params.W

    def sample_prior(self, params, size, rng):
        size = (size,) if np.isscalar(size) else tuple(size)
        return (rng.random(size + (self.H,)) < params.pi).astype(np.uint8)

    def sample(self, params, N, rng):
        s = self.sample_prior(params, N, rng)
        data = s @ params.W.T + rng.standard_normal((N, self.D)) * np.sqrt(params.sigma2)
        return data, s

    def _solve_dictionary(self, B, G, W_old):
        """``W = B G^-1`` on latents with non-zero usage; unused columns keep their value."""
        W = W_old.copy()
        active = np.flatnonzero(np.diag(G) > 0)
        if active.size == 0:
            return W
        Ga = G[np.ix_(active, active)]
        Ba = B[:, active]
        try:
            if np.linalg.cond(Ga) < COND_LIMIT:
                W[:, active] = np.linalg.solve(Ga, Ba.T).T
                return W
            rho = RIDGE_SCALE * np.trace(G) / self.H
            Gr = Ga + rho * np.eye(active.size)
            if not np.linalg.cond(Gr) < 1.0 / np.finfo(float).eps:
                raise np.linalg.LinAlgError("ridge-regularized Gram still singular")
            W[:, active] = np.linalg.solve(Gr, Ba.T).T
        except np.linalg.LinAlgError as exc:
            raise SingularSystemError(f"dictionary update failed: {exc}") from exc
        return W

    def m_step(self, data, states, log_joints, params_old):
        data = self.check_data(data)
        w = set_weights(log_joints)  # (N, S)
        s = np.asarray(states, dtype=float)  # (N, S, H)
        N = data.shape[0]
        mean_s = np.einsum("ns,nsh->nh", w, s)
        gram = np.einsum("ns,nsh,nsk->hk", w, s, s)
        W = self._solve_dictionary(data.T @ mean_s, gram, params_old.W)
        resid = data[:, None, :] - s @ W.T
        sq = np.einsum("ns,nsd,nsd->", w, resid, resid)
        sigma2 = max(sq / (N * self.D), self.var_floor)
        pi = mean_s.sum() / (N * self.H)
        pi = min(max(pi, self.prior_floor), 1.0 - self.prior_floor)
        return BscParams(W=W, pi=float(pi), sigma2=float(sigma2))

    def init_params(self, data, rng):
        data = self.check_data(data)
        N = data.shape[0]
        idx = rng.choice(N, size=self.H, replace=N < self.H)
        cols = data[idx].T
        norms = np.linalg.norm(cols, axis=0)
        norms[norms == 0] = 1.0
        scale = np.mean(np.linalg.norm(data, axis=1))
        W = cols / norms * scale
        return BscParams(W=W, pi=1.0 / self.H, sigma2=float(max(data.var(), self.var_floor)))

    def random_params(self, rng, pi=None, sigma2=None):
        return BscParams(
            W=rng.normal(0.0, 1.0, (self.D, self.H)),
            pi=float(rng.uniform(0.1, 0.5) if pi is None else pi),
            sigma2=float(rng.uniform(0.2, 1.0) if sigma2 is None else sigma2),
        )

    def params_to_dict(self, params):
        return {
            "model": self.kind,
            "dims": {"H": self.H, "D": self.D},
            "params": {"W": np.asarray(params.W).tolist(), "pi": float(params.pi),
                       "sigma2": float(params.sigma2)},
            "floors": {"variance": self.var_floor, "prior": self.prior_floor},
        }

    @classmethod
    def from_dict(cls, d):
        floors = d.get("floors", {})
        model = cls(d["dims"]["H"], d["dims"]["D"],
                    var_floor=floors.get("variance", VAR_FLOOR), prior_floor=floors.get("prior", PRIOR_FLOOR))
        return model, model.params_from_dict(d)

    def params_from_dict(self, d):
        p = d["params"]
        params = BscParams(
            W=np.asarray(p["W"], dtype=float).reshape(self.D, self.H),
            pi=float(p["pi"]),
            sigma2=float(p["sigma2"]),
        )
        return self.validate_params(params)
