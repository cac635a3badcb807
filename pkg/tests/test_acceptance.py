"""Acceptance suite: each test prints one PASS/FAIL line and asserts it."""

import time

import numpy as np
import pytest

from tvem import (
    BinarySparseCoding,
    BscParams,
    EStepConfig,
    GaussianMixture,
    GmmParams,
    PoissonMixParams,
    PoissonMixture,
    TrainerConfig,
    general_free_energy,
    mixture_full_estep,
    replace_if_better,
    simplified_free_energy,
    train,
    tvem_iteration,
)
from tvem.logspace import logsumexp
from tvem.oracle import (
    annealed_posterior,
    brute_force_best_sets,
    exact_em_step,
    exact_posterior,
    hard_em_step,
    hard_free_energy,
    joint_table,
    kl_divergence,
    log_likelihood,
    posterior_table,
)
from tvem.states import enumerate_states, state_index
from tvem.synthetic import match_dictionary, match_means, separated_gmm, sparse_coding_truth
from tvem.trainer import init_sets, make_rng

from conftest import KINDS, make_instance, random_collection, report

pytestmark = pytest.mark.acceptance


def _max_diff(a, b):
    return max(float(np.max(np.abs(np.asarray(x) - np.asarray(y)))) for x, y in zip(vars(a).values(), vars(b).values()))


def _max_abs(params):
    return max(float(np.max(np.abs(np.asarray(x)))) for x in vars(params).values())


def _toy(kind, rng, N=None):
    """Random toy instance within the desk-scale limits (N <= 50, C <= 8, H <= 6)."""
    N = N or int(rng.integers(5, 51))
    if kind == "bsc":
        return make_instance(kind, rng, N=N, H=int(rng.integers(2, 7)), D=int(rng.integers(2, 6)))
    return make_instance(kind, rng, N=N, C=int(rng.integers(2, 9)), D=int(rng.integers(1, 4)))


def _perturb(model, params, rng, scale):
    if isinstance(model, BinarySparseCoding):
        return BscParams(W=params.W + scale * rng.normal(size=params.W.shape),
                         pi=float(np.clip(params.pi * np.exp(scale * rng.normal()), 1e-3, 0.999)),
                         sigma2=params.sigma2 * float(np.exp(scale * rng.normal())))
    pi = params.pi * np.exp(scale * rng.normal(size=params.pi.shape))
    pi /= pi.sum()
    if isinstance(model, PoissonMixture):
        return PoissonMixParams(pi=pi, rates=params.rates * np.exp(scale * rng.normal(size=params.rates.shape)))
    return GmmParams(pi=pi, means=params.means + scale * rng.normal(size=params.means.shape),
                     variances=params.variances * np.exp(scale * rng.normal(size=params.variances.shape)))


def _q_over_omega(model, params, data, K):
    """Truncated weights of ``K`` under ``params`` as dense tables over the full space."""
    K = K.copy()
    K.refresh(model, params, data)
    q = np.zeros((K.N, model.space.cardinality))
    q[np.arange(K.N)[:, None], state_index(model.space, K.states)] = K.weights()
    return q


def _sum_kl(model, params, data, q):
    _, lj = joint_table(model, params, data)
    log_post = lj - logsumexp(lj, axis=1)[:, None]
    return sum(kl_divergence(q[n], None, log_p=log_post[n]) for n in range(len(q)))


def _verdict(label, ok, elapsed, limit, detail):
    passed = bool(ok) and elapsed < limit
    report(label, passed, f"{detail}; {elapsed:.2f}s of {limit}s")
    return passed


def test_01_monotonicity_suite():
    rng = np.random.default_rng(1001)
    t0 = time.perf_counter()
    runs, bad, worst = 0, 0, 0.0
    partial = {"gmm": ["blind", "prior-sample", "hybrid"], "poisson": ["blind", "prior-sample", "hybrid"],
               "bsc": ["blind", "perturb", "prior-sample", "hybrid", "sparse-construct"]}
    for kind in KINDS:
        for mode in ("full", "partial"):
            for S in (1, 2, 4):
                for rep in range(12):
                    model, params, data = _toy(kind, rng)
                    strategy = None if mode == "full" else partial[kind][rep % len(partial[kind])]
                    if strategy == "sparse-construct":
                        est = EStepConfig(strategy=strategy, n_relevant=min(3, model.H), gamma=2)
                    else:
                        est = EStepConfig(strategy=strategy)
                    if mode == "full" and kind == "bsc":
                        est = EStepConfig(strategy="exhaustive")
                    cfg = TrainerConfig(S=S, estep=est, max_iter=50, eps_rel=1e-300, seed=rep,
                                        monotone="warn")
                    cfg.validate(model)
                    K = init_sets(model, params, data, S, make_rng(rep, 0, 1))
                    K.refresh(model, params, data)
                    F = [simplified_free_energy(model, params, data, K)]
                    theta = params
                    for it in range(1, 51):
                        theta, K, rec = tvem_iteration(model, theta, data, K, cfg, it)
                        F += [rec.F_after_E, rec.F_after_M]
                    F = np.array(F)
                    drop = -np.diff(F) / (1 + np.abs(F[:-1]))
                    worst = max(worst, float(drop.max()))
                    bad += int(np.any(drop > 1e-9))
                    runs += 1
    elapsed = time.perf_counter() - t0
    ok = _verdict("1 monotonicity suite", runs >= 200 and bad == 0, elapsed, 60,
                  f"{runs} runs, {bad} violating, worst relative drop {worst:.2e}")
    assert ok


def test_02_equal_parameter_identity():
    rng = np.random.default_rng(1002)
    t0 = time.perf_counter()
    worst = 0.0
    for i in range(100):
        model, params, data = _toy(KINDS[i % 3], rng, N=int(rng.integers(2, 21)))
        K = random_collection(model, len(data), int(rng.integers(1, min(model.space.cardinality, 8) + 1)), rng)
        F = simplified_free_energy(model, params, data, K)
        G = general_free_energy(model, params, params, data, K)
        worst = max(worst, abs(F - G) / max(abs(F), 1e-300))
    elapsed = time.perf_counter() - t0
    assert _verdict("2 general equals simplified at equal parameters", worst <= 1e-10, elapsed, 5,
                    f"100 instances, max relative diff {worst:.2e}")


def test_03_bound_chain_and_kl_gaps():
    rng = np.random.default_rng(1003)
    t0 = time.perf_counter()
    chain, gap1, gap3 = 0.0, 0.0, 0.0
    for i in range(100):
        model, params, data = _toy(KINDS[i % 3], rng, N=int(rng.integers(2, 21)))
        hat = _perturb(model, params, rng, 0.5)
        K = random_collection(model, len(data), int(rng.integers(1, min(model.space.cardinality, 8) + 1)), rng)
        L = log_likelihood(model, params, data)
        F = simplified_free_energy(model, params, data, K)
        G = general_free_energy(model, hat, params, data, K)
        chain = max(chain, F - L, G - F)
        gap1 = max(gap1, abs((L - F) - _sum_kl(model, params, data, _q_over_omega(model, params, data, K))))
        gap3 = max(gap3, abs((L - G) - _sum_kl(model, params, data, _q_over_omega(model, hat, data, K))))
    elapsed = time.perf_counter() - t0
    ok = chain <= 1e-9 and gap1 <= 1e-9 and gap3 <= 1e-9
    assert _verdict("3 bound chain and KL-gap identities", ok, elapsed, 10,
                    f"worst chain excess {chain:.2e}, KL gap errors {gap1:.2e} / {gap3:.2e}")


def test_04_variational_parameters_optimal_at_theta():
    rng = np.random.default_rng(1004)
    t0 = time.perf_counter()
    worst = -np.inf
    for i in range(50):
        model, params, data = _toy(KINDS[i % 3], rng, N=int(rng.integers(2, 21)))
        K = random_collection(model, len(data), int(rng.integers(1, min(model.space.cardinality, 8) + 1)), rng)
        at_theta = general_free_energy(model, params, params, data, K)
        for j in range(200):
            hat = _perturb(model, params, rng, [0.01, 0.1, 1.0][j % 3])
            worst = max(worst, general_free_energy(model, hat, params, data, K) - at_theta)
    elapsed = time.perf_counter() - t0
    assert _verdict("4 truncated posterior at theta maximizes the general free energy", worst <= 1e-9,
                    elapsed, 10, f"50 x 200 perturbations, max excess {worst:.2e}")


def test_05_replacement_criterion():
    rng = np.random.default_rng(1005)
    t0 = time.perf_counter()
    disagree = 0
    for i in range(1000):
        model, params, data = _toy(KINDS[i % 3], rng, N=1)
        card = model.space.cardinality
        omega = enumerate_states(model.space)
        S = int(rng.integers(1, min(card, 8)))
        idx = rng.choice(card, size=S + 1, replace=False)
        states, candidate = omega[idx[:S]], omega[idx[S]]
        new, improved = replace_if_better(model, params, states, candidate, data[0])
        before = simplified_free_energy(model, params, data, states[None])
        # direct comparison: best free energy reachable by swapping the candidate for any member
        best = max(simplified_free_energy(model, params, data, np.concatenate([np.delete(states, k, 0),
                                                                                candidate[None]])[None])
                   for k in range(S))
        slack = 1e-12 * (1 + abs(before))
        after = simplified_free_energy(model, params, data, new[None])
        if improved:
            disagree += int(not after > before - slack or after < best - slack)
        else:
            disagree += int(best > before + slack or not np.array_equal(new, states))
    elapsed = time.perf_counter() - t0
    assert _verdict("5 replacement flag agrees with direct free-energy comparison", disagree == 0, elapsed, 5,
                    f"1000 trials, {disagree} disagreements")


def test_06_mixture_full_estep_optimal():
    rng = np.random.default_rng(1006)
    t0 = time.perf_counter()
    worst, cases = 0.0, 0
    for C in range(1, 9):
        for Cp in range(1, C + 1):
            for _ in range(20):
                kind = "gmm" if rng.random() < 0.5 else "poisson"
                model, params, data = make_instance(kind, rng, N=4, C=C, D=int(rng.integers(1, 3)))
                F = simplified_free_energy(model, params, data, mixture_full_estep(model, params, data, Cp))
                best = simplified_free_energy(model, params, data, brute_force_best_sets(model, params, data, Cp))
                worst = max(worst, abs(F - best) / (1 + abs(best)))
                cases += 1
    elapsed = time.perf_counter() - t0
    assert _verdict("6 mixture full E-step equals brute-force best subsets", worst <= 1e-10, elapsed, 20,
                    f"{cases} cases, max relative diff {worst:.2e}")


def test_07_single_state_is_hard_em():
    rng = np.random.default_rng(1007)
    t0 = time.perf_counter()
    mismatch, gap_err, worst_drift = 0, 0.0, 0.0
    for i in range(20):
        kind = KINDS[i % 3]
        model, params, data = _toy(kind, rng, N=30)
        cfg = TrainerConfig(S=1, estep=EStepConfig(strategy="exhaustive" if kind == "bsc" else None),
                            eps_rel=1e-300).validate(model)
        K = init_sets(model, params, data, 1, rng)
        tv, hard = params, params
        for it in range(1, 31):
            tv, K, _ = tvem_iteration(model, tv, data, K, cfg, it)
            states, hard = hard_em_step(model, hard, data)
            # states must agree exactly; parameters up to summation-order rounding
            drift = max(worst_drift, _max_diff(tv, hard) / (1 + _max_abs(hard)))
            worst_drift = drift
            if not (np.array_equal(K.states[:, 0], states) and drift <= 1e-12):
                mismatch += 1
            post = posterior_table(model, hard, data)
            nxt, _ = hard_em_step(model, hard, data)
            gap = log_likelihood(model, hard, data) - hard_free_energy(model, hard, data, nxt)
            ref = -np.sum(np.log(post[np.arange(len(data)), state_index(model.space, nxt)]))
            gap_err = max(gap_err, abs(gap - ref))
    elapsed = time.perf_counter() - t0
    ok = mismatch == 0 and gap_err <= 1e-9
    assert _verdict("7 single-state TV-EM is hard EM", ok, elapsed, 10,
                    f"20 instances x 30 iterations, {mismatch} mismatching iterations, "
                    f"parameter drift {worst_drift:.2e}, gap error {gap_err:.2e}")


def test_08_full_sets_are_exact_em():
    rng = np.random.default_rng(1008)
    t0 = time.perf_counter()
    worst = 0.0
    for kind in KINDS:
        for _ in range(3):
            model, params, data = make_instance(kind, rng, N=30, C=4, H=3, D=3)
            S = model.space.cardinality
            cfg = TrainerConfig(S=S, eps_rel=1e-300).validate(model)
            K = init_sets(model, params, data, S, rng)
            tv, ex = params, params
            for it in range(1, 21):
                tv, K, _ = tvem_iteration(model, tv, data, K, cfg, it)
                ex = exact_em_step(model, ex, data)
                worst = max(worst, _max_diff(tv, ex))
    elapsed = time.perf_counter() - t0
    assert _verdict("8 full-set TV-EM is exact EM", worst <= 1e-8, elapsed, 15,
                    f"3 models x 3 instances x 20 iterations, max parameter diff {worst:.2e}")


def test_09_annealed_posterior():
    rng = np.random.default_rng(1009)
    t0 = time.perf_counter()
    t1_err, cold_fail, cold_cases, argmax_fail = 0.0, 0, 0, 0
    for i in range(100):
        model, params, data = _toy(KINDS[i % 3], rng, N=1)
        y = data[0]
        exact = exact_posterior(model, params, y)
        t1_err = max(t1_err, float(np.max(np.abs(annealed_posterior(model, params, y, 1.0) - exact))))
        _, lj = joint_table(model, params, data)
        top2 = np.sort(lj[0])[-2:]
        if top2[1] - top2[0] >= 1.0:
            cold_cases += 1
            cold_fail += int(annealed_posterior(model, params, y, 1e-3)[np.argmax(lj[0])] < 0.999)
        for T in (1e-3, 0.1, 0.5, 2.0, 10.0):
            argmax_fail += int(np.argmax(annealed_posterior(model, params, y, T)) != np.argmax(exact))
    elapsed = time.perf_counter() - t0
    ok = t1_err <= 1e-12 and cold_fail == 0 and cold_cases > 0 and argmax_fail == 0
    assert _verdict("9 annealed posterior", ok, elapsed, 5,
                    f"T=1 error {t1_err:.2e}; {cold_cases} cold cases, {cold_fail} failing; "
                    f"{argmax_fail} argmax changes")


def _gmm_recovery(seed):
    rng = np.random.default_rng([10, seed])
    truth = separated_gmm(3, 2, rng)
    model = GaussianMixture(3, 2)
    data, _ = model.sample(truth, 500, rng)
    res = train(model, data, TrainerConfig(S=2, max_iter=300, seed=seed))
    _, dist = match_means(res.params.means, truth.means)
    return dist.max() <= 0.1 * np.sqrt(data.var(axis=0).mean())


def _bsc_recovery(seed):
    rng = np.random.default_rng([11, seed])
    truth = sparse_coding_truth(16, 5, rng)
    model = BinarySparseCoding(5, 16)
    data, _ = model.sample(truth, 1000, rng)
    cfg = TrainerConfig(S=8, max_iter=400, seed=seed,
                        estep=EStepConfig(strategy="sparse-construct", n_relevant=4, gamma=2))
    res = train(model, data, cfg)
    _, _, cos = match_dictionary(res.params.W, truth.W)
    return cos.min() >= 0.95


def test_10_recovery():
    t0 = time.perf_counter()
    gmm = sum(bool(_gmm_recovery(s)) for s in range(100))
    bsc = sum(bool(_bsc_recovery(s)) for s in range(100))
    elapsed = time.perf_counter() - t0
    assert _verdict("10 parameter recovery", gmm >= 95 and bsc >= 90, elapsed, 300,
                    f"GMM {gmm}/100 within 0.1 sigma, BSC {bsc}/100 with cosine >= 0.95")
