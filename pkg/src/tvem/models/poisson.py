"""Mixture of products of Poisson distributions for count data."""

from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from ..errors import InvalidParamsError
from .base import check_finite
from .mixture import PI_FLOOR, MixtureModel, constrained_mixing, kmeanspp_indices

RATE_FLOOR = 1e-8


@dataclass
class PoissonMixParams:
    pi: np.ndarray  # (C,)
    rates: np.ndarray  # (C, D)


class PoissonMixture(MixtureModel):
    kind = "poisson"
    count_data = True

    def __init__(self, C, D, pi_floor=PI_FLOOR, rate_floor=RATE_FLOOR):
        super().__init__(C, D, pi_floor)
        self.rate_floor = float(rate_floor)

    def validate_params(self, params):
        self._check_pi(params.pi)
        rates = check_finite("rates", params.rates)
        if rates.shape != (self.C, self.D):
            raise InvalidParamsError(f"rates must have shape ({self.C}, {self.D})")
        if np.any(rates <= 0):
            raise InvalidParamsError("rates must be positive")
        return params

    def log_joint_table(self, params, data):
        with np.errstate(divide="ignore"):
            log_pi = np.log(params.pi)
        lam = params.rates
        ll = data @ np.log(lam).T - lam.sum(axis=1)[None, :]
        ll -= gammaln(data + 1.0).sum(axis=1, keepdims=True)
        return log_pi[None, :] + ll

    def sample(self, params, N, rng):
        c = self.sample_prior(params, N, rng)
        data = rng.poisson(params.rates[c]).astype(float)
        return data, c

    def _update(self, data, r, counts, starved, reseed, params_old):
        pi = constrained_mixing(counts, self.pi_floor)
        safe = np.where(counts > 0, counts, 1.0)[:, None]
        rates = np.maximum((r.T @ data) / safe, self.rate_floor)
        for c, n in zip(starved, reseed):
            rates[c] = np.maximum(data[n], self.rate_floor)
        for c in starved[len(reseed):]:
            rates[c] = params_old.rates[c]
        return PoissonMixParams(pi=pi, rates=rates)

    def init_params(self, data, rng):
        data = self.check_data(data)
        idx = kmeanspp_indices(data, self.C, rng)
        return PoissonMixParams(
            pi=np.full(self.C, 1.0 / self.C),
            rates=np.maximum(data[idx], self.rate_floor),
        )

    def random_params(self, rng, max_rate=8.0):
        return PoissonMixParams(
            pi=rng.dirichlet(np.full(self.C, 2.0)),
            rates=rng.uniform(0.2, max_rate, (self.C, self.D)),
        )

    def params_to_dict(self, params):
        return {
            "model": self.kind,
            "dims": {"C": self.C, "D": self.D},
            "params": {"pi": params.pi.tolist(), "rates": params.rates.tolist()},
            "floors": {"pi": self.pi_floor, "rate": self.rate_floor},
        }

    @classmethod
    def from_dict(cls, d):
        floors = d.get("floors", {})
        model = cls(d["dims"]["C"], d["dims"]["D"],
                    pi_floor=floors.get("pi", PI_FLOOR), rate_floor=floors.get("rate", RATE_FLOOR))
        return model, model.params_from_dict(d)

    def params_from_dict(self, d):
        p = d["params"]
        params = PoissonMixParams(
            pi=np.asarray(p["pi"], dtype=float),
            rates=np.asarray(p["rates"], dtype=float).reshape(self.C, self.D),
        )
        return self.validate_params(params)
