"""Gaussian mixture model with diagonal covariances."""

from dataclasses import dataclass

import numpy as np

from ..errors import InvalidParamsError
from .base import check_finite
from .mixture import PI_FLOOR, MixtureModel, constrained_mixing, kmeanspp_indices

VAR_FLOOR = 1e-6
_LOG_2PI = np.log(2.0 * np.pi)


@dataclass
class GmmParams:
    pi: np.ndarray  # (C,)
    means: np.ndarray  # (C, D)
    variances: np.ndarray  # (C, D)


class GaussianMixture(MixtureModel):
    kind = "gmm"

    def __init__(self, C, D, pi_floor=PI_FLOOR, var_floor=VAR_FLOOR):
        super().__init__(C, D, pi_floor)
        self.var_floor = float(var_floor)

    def validate_params(self, params):
        self._check_pi(params.pi)
        means = check_finite("means", params.means)
        var = check_finite("variances", params.variances)
        if means.shape != (self.C, self.D) or var.shape != (self.C, self.D):
            raise InvalidParamsError(f"means and variances must have shape ({self.C}, {self.D})")
        if np.any(var <= 0):
            raise InvalidParamsError("variances must be positive")
        return params

    def log_joint_table(self, params, data):
        var = params.variances
        with np.errstate(divide="ignore"):
            log_pi = np.log(params.pi)
        diff2 = (data[:, None, :] - params.means[None, :, :]) ** 2
        ll = -0.5 * np.sum(_LOG_2PI + np.log(var)[None] + diff2 / var[None], axis=2)
        return log_pi[None, :] + ll

    def sample(self, params, N, rng):
        c = self.sample_prior(params, N, rng)
        noise = rng.standard_normal((N, self.D))
        data = params.means[c] + noise * np.sqrt(params.variances[c])
        return data, c

    def _update(self, data, r, counts, starved, reseed, params_old):
        pi = constrained_mixing(counts, self.pi_floor)
        safe = np.where(counts > 0, counts, 1.0)[:, None]
        means = (r.T @ data) / safe
        diff2 = (data[:, None, :] - means[None, :, :]) ** 2
        var = np.einsum("nc,ncd->cd", r, diff2) / safe
        var = np.maximum(var, self.var_floor)
        for c, n in zip(starved, reseed):
            means[c] = data[n]
            var[c] = params_old.variances[c]
        for c in starved[len(reseed):]:
            means[c] = params_old.means[c]
            var[c] = params_old.variances[c]
        return GmmParams(pi=pi, means=means, variances=var)

    def init_params(self, data, rng):
        data = self.check_data(data)
        idx = kmeanspp_indices(data, self.C, rng)
        var = np.maximum(data.var(axis=0), self.var_floor)
        return GmmParams(
            pi=np.full(self.C, 1.0 / self.C),
            means=data[idx].copy(),
            variances=np.tile(var, (self.C, 1)),
        )

    def random_params(self, rng, spread=2.0):
        return GmmParams(
            pi=rng.dirichlet(np.full(self.C, 2.0)),
            means=rng.normal(0.0, spread, (self.C, self.D)),
            variances=rng.uniform(0.3, 2.0, (self.C, self.D)),
        )

    def params_to_dict(self, params):
        return {
            "model": self.kind,
            "dims": {"C": self.C, "D": self.D},
            "params": {
                "pi": params.pi.tolist(),
                "means": params.means.tolist(),
                "variances": params.variances.tolist(),
            },
            "floors": {"pi": self.pi_floor, "variance": self.var_floor},
        }

    @classmethod
    def from_dict(cls, d):
        floors = d.get("floors", {})
        model = cls(d["dims"]["C"], d["dims"]["D"],
                    pi_floor=floors.get("pi", PI_FLOOR), var_floor=floors.get("variance", VAR_FLOOR))
        return model, model.params_from_dict(d)

    def params_from_dict(self, d):
        p = d["params"]
        params = GmmParams(
            pi=np.asarray(p["pi"], dtype=float),
            means=np.asarray(p["means"], dtype=float).reshape(self.C, self.D),
            variances=np.asarray(p["variances"], dtype=float).reshape(self.C, self.D),
        )
        return self.validate_params(params)
