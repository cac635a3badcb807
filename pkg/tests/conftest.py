import numpy as np
import pytest

from tvem import BinarySparseCoding, GaussianMixture, PoissonMixture, VariationalCollection
from tvem.states import enumerate_states

ACCEPTANCE_LINES = []


def report(label, passed, detail=""):
    """Record and print one acceptance line."""
    line = f"{'PASS' if passed else 'FAIL'}  {label}" + (f"  [{detail}]" if detail else "")
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def make_instance(kind, rng, N=20, C=None, H=None, D=None):
    """Random toy model, parameters and data drawn from it."""
    if kind == "gmm":
        model = GaussianMixture(C or int(rng.integers(2, 6)), D or int(rng.integers(1, 4)))
    elif kind == "poisson":
        model = PoissonMixture(C or int(rng.integers(2, 6)), D or int(rng.integers(1, 4)))
    else:
        model = BinarySparseCoding(H or int(rng.integers(2, 5)), D or int(rng.integers(2, 6)))
    params = model.random_params(rng)
    data, _ = model.sample(params, N, rng)
    return model, params, data


def random_collection(model, N, S, rng):
    """Collection of ``N`` sets with ``S`` distinct uniformly chosen states each."""
    omega = enumerate_states(model.space)
    idx = np.array([rng.choice(len(omega), size=S, replace=False) for _ in range(N)])
    return VariationalCollection(model.space, omega[idx])


def random_q_table(N, M, rng, zero_frac=0.5):
    """Random weight tables with exact zeros; every row keeps at least one entry."""
    q = rng.random((N, M)) * (rng.random((N, M)) > zero_frac)
    empty = q.sum(axis=1) == 0
    q[empty, rng.integers(M, size=empty.sum())] = 1.0
    return q / q.sum(axis=1, keepdims=True)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


KINDS = ("gmm", "poisson", "bsc")
