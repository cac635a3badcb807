"""Ground-truth parameter generators and recovery metrics."""

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import InvalidInputError
from .models.bsc import BscParams
from .models.gmm import GmmParams


def separated_gmm(C, D, rng, separation=5.0, sigma=1.0, box=None, max_tries=10_000):
    """Equal-weight isotropic GMM whose means are pairwise at least ``separation * sigma`` apart.

    Means are drawn uniformly in a cube (side ``box``, default ``3 * separation
    * sigma``) and redrawn until the separation holds.
    """
    box = 3.0 * separation * sigma if box is None else float(box)
    for _ in range(max_tries):
        means = rng.uniform(0.0, box, size=(C, D))
        diff = means[:, None, :] - means[None, :, :]
        dist = np.sqrt(np.sum(diff**2, axis=-1))
        if C == 1 or np.min(dist[np.triu_indices(C, 1)]) >= separation * sigma:
            return GmmParams(
                pi=np.full(C, 1.0 / C),
                means=means,
                variances=np.full((C, D), sigma**2),
            )
    raise InvalidInputError("could not place separated means; enlarge the box")


def unit_dictionary(D, H, rng):
    """Gaussian dictionary with unit-norm columns."""
    W = rng.standard_normal((D, H))
    return W / np.linalg.norm(W, axis=0)


def sparse_coding_truth(D, H, rng, pi=None, sigma=1.0, scale=None):
    """BSC ground truth: unit-norm columns scaled by ``scale`` (default ``sqrt(D)``)."""
    scale = np.sqrt(D) if scale is None else float(scale)
    return BscParams(
        W=unit_dictionary(D, H, rng) * scale,
        pi=float(1.0 / H if pi is None else pi),
        sigma2=float(sigma**2),
    )


def match_means(learned, truth):
    """Best permutation matching of rows; returns ``(perm, distances)``.

    ``perm[c]`` is the learned row assigned to true row ``c``; the assignment
    minimizes the summed Euclidean distances.
    """
    learned = np.asarray(learned, dtype=float)
    truth = np.asarray(truth, dtype=float)
    cost = np.sqrt(np.sum((truth[:, None, :] - learned[None, :, :]) ** 2, axis=-1))
    rows, cols = linear_sum_assignment(cost)
    perm = np.empty(len(truth), dtype=np.int64)
    perm[rows] = cols
    return perm, cost[rows, cols]


def match_dictionary(W, W_true):
    """Best signed permutation matching of columns by absolute cosine similarity.

    Returns ``(perm, signs, cosines)`` with ``cosines[h]`` the absolute cosine
    between true column ``h`` and learned column ``perm[h]``.
    """
    W = np.asarray(W, dtype=float)
    W_true = np.asarray(W_true, dtype=float)
    norms = np.linalg.norm(W, axis=0)
    norms[norms == 0] = 1.0
    cos = (W_true / np.linalg.norm(W_true, axis=0)).T @ (W / norms)
    rows, cols = linear_sum_assignment(-np.abs(cos))
    perm = np.empty(W_true.shape[1], dtype=np.int64)
    perm[rows] = cols
    signed = cos[rows, cols]
    return perm, np.sign(signed), np.abs(signed)
