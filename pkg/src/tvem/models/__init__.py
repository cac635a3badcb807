"""Bundled generative models and their parameter (de)serialization."""

import json

from ..errors import ConfigError
from .base import GenerativeModel, log_joint, set_weights
from .bsc import BinarySparseCoding, BscParams
from .gmm import GaussianMixture, GmmParams
from .mixture import MixtureModel, constrained_mixing
from .poisson import PoissonMixParams, PoissonMixture

MODELS = {
    "gmm": GaussianMixture,
    "poisson": PoissonMixture,
    "bsc": BinarySparseCoding,
}


def make_model(kind, D, C=None, H=None, **floors):
    """Instantiate a bundled model by name."""
    try:
        cls = MODELS[kind]
    except KeyError:
        raise ConfigError(f"unknown model kind {kind!r}; expected one of {sorted(MODELS)}")
    if cls is BinarySparseCoding:
        if H is None:
            raise ConfigError("bsc needs H")
        return cls(H, D, **floors)
    if C is None:
        raise ConfigError(f"{kind} needs C")
    return cls(C, D, **floors)


def model_from_dict(d):
    """Rebuild ``(model, params)`` from a parameter document."""
    try:
        cls = MODELS[d["model"]]
    except KeyError as exc:
        raise ConfigError(f"parameter document has unknown or missing model kind: {exc}")
    return cls.from_dict(d)


def dump_params(model, params, path, seed=None, extra=None):
    doc = model.params_to_dict(params)
    doc["seed"] = seed
    if extra:
        doc.update(extra)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")
    return doc


def load_params(path):
    with open(path, encoding="utf-8") as fh:
        return model_from_dict(json.load(fh))


__all__ = [
    "BinarySparseCoding",
    "BscParams",
    "GaussianMixture",
    "GenerativeModel",
    "GmmParams",
    "MODELS",
    "MixtureModel",
    "PoissonMixParams",
    "PoissonMixture",
    "constrained_mixing",
    "dump_params",
    "load_params",
    "log_joint",
    "make_model",
    "model_from_dict",
    "set_weights",
]
