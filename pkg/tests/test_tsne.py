import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from raredetect.tsne import (
    CalibrationWarning,
    TsneConfig,
    calibrate_bandwidth,
    conditional_matrix,
    fit_tsne,
    tsne_cost,
    tsne_gradient,
)

VARIANTS = ("student_t", "paper_sne")


def _perplexity(p):
    p = p[p > 0]
    return math.exp(-float(np.sum(p * np.log(p))))


# -- calibration ----------------------------------------------------------


def test_equidistant_row_is_uniform():
    with pytest.warns(CalibrationWarning):
        h, p = calibrate_bandwidth(np.full(6, 2.0), 3.0)
    np.testing.assert_allclose(p, 1 / 6, atol=1e-12)


def test_two_neighbor_frozen_oracle():
    # distances 1 and 2 at perplexity 1.5; values from a 50-digit solve
    h, p = calibrate_bandwidth([1.0, 4.0], 1.5)
    assert h == pytest.approx(0.9095933807091494, rel=1e-6)
    np.testing.assert_allclose(p, [0.8597234930025353, 0.14027650699746474], rtol=1e-5)


def test_equilateral_triangle():
    pi = np.array([[0.0, 0.0], [1.0, 0.0], [0.5, math.sqrt(3) / 2]])
    with pytest.warns(CalibrationWarning):
        P = conditional_matrix(pi, 1.5)
    off = P[~np.eye(3, dtype=bool)]
    np.testing.assert_allclose(off, 0.5, atol=1e-12)


def test_duplicated_point_dominates():
    r = np.random.default_rng(0)
    pi = np.vstack([np.zeros((2, 3)), r.normal(5.0, 1.0, size=(6, 3))])
    P = conditional_matrix(pi, 1.05)
    assert P[0, 1] > 0.95 and P[1, 0] > 0.95


def test_perplexity_too_large():
    with pytest.raises(ValueError):
        calibrate_bandwidth([1.0, 2.0, 3.0], 3.0)
    with pytest.raises(ValueError):
        conditional_matrix(np.eye(4), 3.0)


def test_all_zero_distances_warn():
    with pytest.warns(CalibrationWarning):
        h, p = calibrate_bandwidth(np.zeros(4), 2.0)
    assert h == 1.0
    np.testing.assert_allclose(p, 0.25)


def test_conditionals_match_direct_formula():
    r = np.random.default_rng(1)
    pi = r.normal(size=(10, 5))
    P = conditional_matrix(pi, 4.0)
    from raredetect.tsne import _conditionals

    _, h = _conditionals(pi, 4.0)
    for i in range(10):
        num = np.zeros(10)
        for j in range(10):
            if j != i:
                d2 = sum((pi[i, k] - pi[j, k]) ** 2 for k in range(5))
                num[j] = math.exp(-d2 / (2 * h[i] ** 2))
        np.testing.assert_allclose(P[i], num / num.sum(), atol=1e-10)
        assert abs(_perplexity(P[i]) - 4.0) / 4.0 < 1e-4
    assert np.all(np.diag(P) == 0)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10**6), target=st.floats(1.5, 20.0))
def test_calibration_hits_perplexity(seed, target):
    r = np.random.default_rng(seed)
    sq = r.exponential(3.0, size=30)
    with warnings.catch_warnings():
        warnings.simplefilter("error", CalibrationWarning)
        _, p = calibrate_bandwidth(sq, target)
    assert abs(_perplexity(p) - target) / target < 1e-4
    assert p.sum() == pytest.approx(1.0, abs=1e-12)


# -- cost and gradient ----------------------------------------------------


def _random_P(n, seed):
    r = np.random.default_rng(seed)
    return conditional_matrix(r.normal(size=(n, 4)), 3.0)


def _student_cost_loop(P, tau):
    n = len(tau)
    p = (P + P.T) / (2 * n)
    w = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            if i != j:
                w[i, j] = 1.0 / (1.0 + np.sum((tau[i] - tau[j]) ** 2))
    q = w / w.sum()
    total = 0.0
    for i in range(n):
        for j in range(n):
            if i != j and p[i, j] > 0:
                total += p[i, j] * math.log(p[i, j] / q[i, j])
    return total


def _sne_cost_loop(P, tau):
    n = len(tau)
    total = 0.0
    for i in range(n):
        e = np.array([math.exp(-np.sum((tau[i] - tau[j]) ** 2)) if j != i else 0.0 for j in range(n)])
        q = e / e.sum()
        for j in range(n):
            if j != i and P[i, j] > 0:
                total += P[i, j] * math.log(P[i, j] / q[j])
    return total


def test_cost_matches_double_loop():
    P = _random_P(9, 2)
    tau = np.random.default_rng(3).normal(size=(9, 2))
    assert tsne_cost(P, tau, "student_t") == pytest.approx(_student_cost_loop(P, tau), abs=1e-10)
    assert tsne_cost(P, tau, "paper_sne") == pytest.approx(_sne_cost_loop(P, tau), abs=1e-10)


def test_cost_zero_when_q_equals_p():
    # two points: every distribution is degenerate and identical on both sides
    tau = np.array([[0.0, 0.0], [1.0, 1.0]])
    P = np.array([[0.0, 1.0], [1.0, 0.0]])
    for v in VARIANTS:
        assert tsne_cost(P, tau, v) == pytest.approx(0.0, abs=1e-15)


@pytest.mark.parametrize("variant", VARIANTS)
def test_cost_nonnegative(variant):
    for seed in range(5):
        P = _random_P(8, seed)
        tau = np.random.default_rng(seed + 50).normal(size=(8, 2)) * 3
        assert tsne_cost(P, tau, variant) >= 0.0


@pytest.mark.parametrize("variant", VARIANTS)
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_gradient_finite_differences(variant, seed):
    P = _random_P(7, seed)
    tau = np.random.default_rng(seed + 10).normal(size=(7, 2))
    g = tsne_gradient(P, tau, variant)
    eps = 1e-5
    fd = np.zeros_like(tau)
    for idx in np.ndindex(tau.shape):
        tp, tm = tau.copy(), tau.copy()
        tp[idx] += eps
        tm[idx] -= eps
        fd[idx] = (tsne_cost(P, tp, variant) - tsne_cost(P, tm, variant)) / (2 * eps)
    rel = np.linalg.norm(g - fd) / np.linalg.norm(fd)
    assert rel < 1e-4


@pytest.mark.parametrize("variant", VARIANTS)
def test_cost_invariant_to_rigid_motion(variant):
    P = _random_P(8, 4)
    tau = np.random.default_rng(5).normal(size=(8, 2))
    a = 0.7
    R = np.array([[math.cos(a), -math.sin(a)], [math.sin(a), math.cos(a)]])
    moved = tau @ R.T + np.array([3.0, -2.0])
    assert tsne_cost(P, moved, variant) == pytest.approx(tsne_cost(P, tau, variant), abs=1e-9)


def test_unknown_variant():
    with pytest.raises(ValueError):
        tsne_cost(np.zeros((3, 3)), np.zeros((3, 2)), "cauchy")


# -- optimizer ------------------------------------------------------------


def _clusters(seed=0, per=30, dim=50, sep=10.0):
    r = np.random.default_rng(seed)
    centers = r.normal(size=(3, dim))
    centers *= sep / np.linalg.norm(centers, axis=1, keepdims=True)
    X = np.vstack([c + r.normal(size=(per, dim)) for c in centers])
    return X, np.repeat(np.arange(3), per)


def _majority_agreement(tau, labels, k=5):
    d = ((tau[:, None] - tau[None]) ** 2).sum(-1)
    np.fill_diagonal(d, np.inf)
    nn = np.argsort(d, axis=1)[:, :k]
    return np.mean([np.bincount(labels[row], minlength=3).argmax() == labels[i] for i, row in enumerate(nn)])


@pytest.mark.parametrize("variant", VARIANTS)
def test_fit_separates_clusters(variant):
    X, y = _clusters()
    emb = fit_tsne(X, TsneConfig(perplexity=10, iterations=500, kernel_variant=variant, seed=1))
    assert emb.tau.shape == (90, 2)
    assert emb.final_cost < emb.initial_cost
    assert _majority_agreement(emb.tau, y) >= 0.95


def test_fit_deterministic():
    X, _ = _clusters(per=10)
    cfg = TsneConfig(perplexity=5, iterations=120, seed=7)
    a, b = fit_tsne(X, cfg), fit_tsne(X, cfg)
    assert np.array_equal(a.tau, b.tau)
    c = fit_tsne(X, TsneConfig(perplexity=5, iterations=120, seed=8))
    assert not np.array_equal(a.tau, c.tau)


def test_sidecar_contents():
    X, _ = _clusters(per=6)
    emb = fit_tsne(X, TsneConfig(perplexity=4, iterations=60), sample_ids=[f"s{i}" for i in range(18)])
    side = emb.sidecar()
    assert side["sample_ids"][0] == "s0"
    assert len(side["bandwidths"]) == 18
    assert side["config"]["perplexity"] == 4
    assert side["cost_trace"][0][0] == 0


def test_config_validation():
    with pytest.raises(ValueError):
        TsneConfig(kernel_variant="nope").validate(10)
    with pytest.raises(ValueError):
        fit_tsne(np.random.default_rng(0).normal(size=(10, 3)), TsneConfig(perplexity=30))
