import math

import numpy as np
import pytest

from tnlasso.bounds import (PackingError, _gamma_one, _into_ball, _truncate, build_packing,
                            estimate_gamma, estimate_geometry, estimate_R, estimate_theta,
                            eval_minimax_lower, eval_prop1_bound, eval_thm2_rate, expected_kl,
                            fano_lower, kl_divergence, minimax_conditions, minimax_gamma_sq,
                            packing_target, spikiness, theta_objective)
from tnlasso.dense import RngStream, gaussian_matrix, matrix_rank
from tnlasso.measurements import build_completion, build_sketching
from tnlasso.norms import NormBallSpec, tnorm

# reference values evaluated independently at 30 significant digits
ERROR_BOUND_SPOTS = [
    ((1.0, 1.0, 1.0, 1.0, 1.0, 2 / math.e), 20.5663706143591729538505735331),
    ((2.0, 0.5, 0.3, 5.0, 4.0, 0.05), 93.7026460214816173121352958957),
    ((0.5, 2.0, 0.0, 1.5, 3.0, 0.5), 37.3865694015039621127846979054),
]
RATE_SPOTS = [
    ((1.0, 1.0, 32, 32, 16, 2), 2.7000227622299319130143251154),
    ((2.0, 0.5, 16, 24, 8, 3), 4.36057134004456057561626671097),
    ((0.7, 0.0, 10, 20, 5, 1), 0.310470527489770119402107393197),
]
MINIMAX_SPOTS = [
    ((1.0, 1.0, 4, 64, 64, 2), 0.0009765625),
    ((3.0, 0.25, 16, 20, 10, 2), 0.00574099158464807366764988455009),
    ((1.0, 10.0, 2, 8, 8, 1), 0.0078125),
]


@pytest.mark.parametrize("args,expected", ERROR_BOUND_SPOTS)
def test_error_bound_spots(args, expected):
    assert eval_prop1_bound(*args) == pytest.approx(expected, rel=1e-12)


@pytest.mark.parametrize("args,expected", RATE_SPOTS)
def test_rate_spots(args, expected):
    assert eval_thm2_rate(*args) == pytest.approx(expected, rel=1e-12)


@pytest.mark.parametrize("args,expected", MINIMAX_SPOTS)
def test_minimax_spots(args, expected):
    assert eval_minimax_lower(*args).value == pytest.approx(expected, rel=1e-12)


def test_error_bound_special_cases():
    assert eval_prop1_bound(1.5, 0.0, 0.7, 3.0, 2.0, 0.1) == pytest.approx(4 * 2.25 * 0.7)
    assert eval_prop1_bound(1.5, 0.4, 0.0, 0.0, 2.0, 0.1) == pytest.approx(
        2 * math.pi * 1.5 * 0.4 * 2.0 * math.sqrt(2 * math.log(20)))
    with pytest.raises(ValueError):
        eval_prop1_bound(1, 1, 1, 1, 1, 1.0)
    with pytest.raises(ValueError):
        eval_prop1_bound(-1, 1, 1, 1, 1, 0.5)


def test_rate_noiseless_and_scaling():
    d1, d2, r = 20, 30, 3
    expect = (1 / d1) * math.sqrt(r * (d1 + d2) * math.log(d1 + d2) ** 4 / (8 * d2))
    assert eval_thm2_rate(1.0, 0.0, d1, d2, 8, r) == pytest.approx(expect, rel=1e-12)
    # with the logs frozen the low-noise branch decays like L^(-1/2)
    a = eval_thm2_rate(1.0, 0.0, d1, d2, 8, r, log_ld2=3.0, log_dsum=4.0)
    b = eval_thm2_rate(1.0, 0.0, d1, d2, 32, r, log_ld2=3.0, log_dsum=4.0)
    assert b / a == pytest.approx(0.5, rel=1e-12)
    # and the high-noise branch does not depend on L at all
    a = eval_thm2_rate(1.0, 10.0, d1, d2, 8, r, log_ld2=3.0, log_dsum=4.0)
    b = eval_thm2_rate(1.0, 10.0, d1, d2, 32, r, log_ld2=3.0, log_dsum=4.0)
    assert b == pytest.approx(a, rel=1e-12)
    assert eval_thm2_rate(1.0, 0.0, d1, d2, 8, r, constant=2.5) == pytest.approx(2.5 * expect)


def test_minimax_branches():
    d1 = d2 = 16
    r, L, alpha = 2, 4, 1.0
    assert eval_minimax_lower(alpha, 100.0, L, d1, d2, r).value == pytest.approx(alpha**2 / 256)
    # kink: sigma sqrt(L)/alpha * sqrt(r (d1 + d2) / (L d2)) = 1
    sigma = alpha / math.sqrt(L) / math.sqrt(r * (d1 + d2) / (L * d2))
    left = eval_minimax_lower(alpha, sigma * (1 - 1e-9), L, d1, d2, r).value
    right = eval_minimax_lower(alpha, sigma * (1 + 1e-9), L, d1, d2, r).value
    assert left == pytest.approx(right, rel=1e-8)
    mm = eval_minimax_lower(1.0, 1.0, 64, 16, 16, 2)
    assert mm.value_many_measurements is not None
    assert eval_minimax_lower(1.0, 1.0, 1, 16, 16, 8).value_many_measurements is None


def test_minimax_window_flag():
    assert minimax_conditions(1.0, math.sqrt(8), 16, 16, 4)
    mm = eval_minimax_lower(1.0, 0.01, 4, 16, 16, 4)
    assert not mm.conditions_met and mm.warning


def test_formula_monotonicity():
    rng = np.random.default_rng(20261015)
    for _ in range(1000):
        a, s, t, g, R = rng.uniform(0.01, 5, 5)
        z = rng.uniform(0.01, 0.99)
        base = eval_prop1_bound(a, s, t, g, R, z)
        f = 1 + rng.uniform(0.01, 1)
        assert eval_prop1_bound(a * f, s, t, g, R, z) >= base
        assert eval_prop1_bound(a, s * f, t, g, R, z) >= base
        assert eval_prop1_bound(a, s, t * f, g, R, z) >= base
        assert eval_prop1_bound(a, s, t, g * f, R, z) >= base
        assert eval_prop1_bound(a, s, t, g, R, z / f) >= base
        d1, d2, L, r = (int(x) for x in rng.integers(1, 64, 4))
        mm = eval_minimax_lower(a, s, L, d1, d2, r).value
        assert mm > 0 and eval_minimax_lower(a * f, s, L, d1, d2, r).value >= mm
        rate = eval_thm2_rate(a, s, d1, d2, L, r)
        assert rate > 0 and eval_thm2_rate(a * f, s, d1, d2, L, r) >= rate
        assert eval_thm2_rate(a, s * f, d1, d2, L, r) >= rate


# -- packing ---------------------------------------------------------------------------

def _packing_invariants(pack, d1, d2, r, gamma, alpha):
    entry = gamma * alpha / math.sqrt(d1)
    B = round(r / gamma**2)
    for M in pack.matrices:
        assert np.all(np.abs(M) == entry)
        assert np.sqrt(np.max(np.sum(M * M, axis=0))) == pytest.approx(gamma * alpha, rel=1e-12)
        assert float(np.sum(M * M)) == pytest.approx(gamma**2 * alpha**2 * d2, rel=1e-12)
        for k in range(d1):
            np.testing.assert_array_equal(M[k], M[k % B])
        assert matrix_rank(M) <= B


def test_packing_invariants():
    pack = build_packing(16, 16, 4, 1.0, 2.0, 20, RngStream(0, "packing"))
    _packing_invariants(pack, 16, 16, 4, 1.0, 2.0)
    assert pack.min_sep_sq >= 1.0 * 4.0 * 16 / 2
    stats = pack.stats()
    assert stats["count"] == 20 and stats["B"] == 4


def test_packing_fractional_gamma():
    pack = build_packing(16, 12, 2, math.sqrt(0.5), 1.0, 10, RngStream(1, "packing"))
    _packing_invariants(pack, 16, 12, 2, math.sqrt(0.5), 1.0)


def test_packing_pairs_separate():
    ok = 0
    for seed in range(100):
        try:
            build_packing(16, 16, 4, 1.0, 1.0, 2, RngStream(seed, "pair"), max_redraws=0)
            ok += 1
        except PackingError:
            pass
    assert ok >= 99


def test_packing_rejects_bad_parameters():
    with pytest.raises(ValueError):
        build_packing(16, 16, 3, math.sqrt(2), 1.0, 2, RngStream(0))
    with pytest.raises(ValueError):
        build_packing(16, 16, 4, 1.0, 1.0, packing_target(16, 16, 4, 1.0) + 1, RngStream(0))


def test_packing_target():
    assert packing_target(16, 16, 4, 1.0) == math.ceil(math.exp(4))


# -- KL and Fano -------------------------------------------------------------------------

def test_kl_basic():
    ens = build_sketching(4, 3, 2, RngStream(2))
    M = gaussian_matrix(4, 3, RngStream(3))
    N = gaussian_matrix(4, 3, RngStream(4))
    assert kl_divergence(ens, M, M, 1.0) == 0.0
    assert kl_divergence(ens, M, N, 3.0) == pytest.approx(kl_divergence(ens, M, N, 1.0) / 9)
    v = ens.apply(M - N)
    assert kl_divergence(ens, M, N, 2.0) == pytest.approx(float(v @ v) / 8)


def test_kl_completion_expectation():
    M = gaussian_matrix(4, 4, RngStream(5))
    N = gaussian_matrix(4, 4, RngStream(6))
    sigma = 0.8
    ens = build_completion(4, 4, 100_000, RngStream(7))
    closed = float(np.sum((M - N) ** 2)) / (2 * sigma**2)
    assert kl_divergence(ens, M, N, sigma) / ens.n == pytest.approx(closed, rel=0.03)
    single = build_completion(4, 4, 1, RngStream(8))
    assert expected_kl(single, M, N, sigma) == pytest.approx(closed, rel=1e-12)


def test_kl_sketching_expectation():
    M = gaussian_matrix(5, 4, RngStream(9))
    N = gaussian_matrix(5, 4, RngStream(10))
    closed = float(np.sum((M - N) ** 2)) / 2
    draws = [kl_divergence(build_sketching(5, 4, 8, RngStream(s, "kl")), M, N, 1.0)
             for s in range(2000)]
    assert np.mean(draws) == pytest.approx(closed, rel=0.03)
    assert expected_kl(build_sketching(5, 4, 8, RngStream(0)), M, N, 1.0) == pytest.approx(closed)


def test_fano_large_noise_limit():
    pack = build_packing(16, 16, 4, 1.0, 1.0, 8, RngStream(11))
    ens = build_sketching(16, 16, 4, RngStream(12))
    assert fano_lower(pack, ens, 1e9) == pytest.approx(1 - math.log(2) / pack.log_target,
                                                       rel=1e-9)


def test_fano_rejects_degenerate():
    pack = build_packing(16, 16, 4, 1.0, 1.0, 2, RngStream(13))
    pack.matrices[1] = pack.matrices[0].copy()
    with pytest.raises(ValueError):
        fano_lower(pack, build_sketching(16, 16, 1, RngStream(0)), 1.0)


def test_gamma_choice():
    assert minimax_gamma_sq(1.0, math.sqrt(8), 16, 16, 4) == pytest.approx(0.5)
    assert minimax_gamma_sq(0.1, 10.0, 16, 16, 4) == 1.0


# -- geometry ---------------------------------------------------------------------------

def test_theta_objective_by_hand():
    ens = build_sketching(2, 2, 1, RngStream(14))
    M = np.array([[1.0, -2.0], [0.5, 3.0]])
    b = ens.vectors
    quad = (b[:, 0] @ M[:, 0]) ** 2 + (b[:, 1] @ M[:, 1]) ** 2
    assert theta_objective(ens, M) == pytest.approx(abs(quad - 14.25), rel=1e-12)
    comp = build_completion(2, 2, 3, RngStream(15))
    vals = [M[i, j] for i, j in zip(comp.rows, comp.cols)]
    assert theta_objective(comp, M) == pytest.approx(abs(4 * sum(v * v for v in vals) / 3 - 14.25))


def test_theta_zero_ensemble():
    ens = build_sketching(4, 4, 2, RngStream(16)).scaled(0.0)
    spec = NormBallSpec("mixed", 1.0, 1)
    lo, hi = estimate_R(spec, 4, 4)
    theta = estimate_theta(ens, spec, samples=4, ascent_iters=10, rng=RngStream(17))
    assert 0 < theta <= hi**2 * (1 + 1e-9)
    assert estimate_gamma(ens, spec, trials=2, samples=2, rng=RngStream(18)) == (0.0, 0.0)


def test_theta_points_in_ball():
    spec = NormBallSpec("max", 1.0, 2)
    M = _into_ball(gaussian_matrix(5, 5, RngStream(19)), spec)
    assert tnorm(M, spec) <= 1.0 + 1e-6


def test_theta_monotone_in_samples():
    ens = build_sketching(6, 6, 2, RngStream(20))
    spec = NormBallSpec("mixed", 1.0, 2)
    few = estimate_theta(ens, spec, samples=3, ascent_iters=5, rng=RngStream(21))
    many = estimate_theta(ens, spec, samples=6, ascent_iters=5, rng=RngStream(21))
    assert many >= few
    g_few = _gamma_one(ens.adjoint(RngStream(22).normal(ens.n)), spec, 2, 5, RngStream(23))
    g_many = _gamma_one(ens.adjoint(RngStream(22).normal(ens.n)), spec, 5, 5, RngStream(23))
    assert g_many >= g_few


def test_theta_shrinks_with_sketches():
    spec = NormBallSpec("mixed", 1.0, 2)
    for seed in range(10):
        rng = RngStream(seed, "trend")
        small = estimate_theta(build_sketching(16, 16, 4, rng.child("e4")), spec, 8, 20,
                               rng.child("t4"))
        large = estimate_theta(build_sketching(16, 16, 64, rng.child("e64")), spec, 8, 20,
                               rng.child("t64"))
        assert large < small


@pytest.mark.parametrize("kind", ["mixed", "max"])
def test_gamma_dual_sanity(kind):
    spec = NormBallSpec(kind, 1.0, 2)
    X = gaussian_matrix(6, 5, RngStream(24))
    est = _gamma_one(X, spec, 4, 10, RngStream(25))
    start = _into_ball(_truncate(X, 2), spec)
    assert est >= float(np.sum(X * start)) - 1e-12
    # every ball member has columns of norm <= alpha (mixed) or entries <= alpha (max)
    cap = np.sum(np.linalg.norm(X, axis=0)) if kind == "mixed" else np.sum(np.abs(X))
    assert est <= cap


def test_gamma_grows_with_sketches():
    spec = NormBallSpec("mixed", 1.0, 2)
    small, large = [], []
    for seed in range(10):
        rng = RngStream(seed, "gtrend")
        small.append(estimate_gamma(build_sketching(16, 16, 4, rng.child("e4")), spec, 4, 4, 15,
                                    rng.child("g4"))[0])
        large.append(estimate_gamma(build_sketching(16, 16, 64, rng.child("e64")), spec, 4, 4,
                                    15, rng.child("g64"))[0])
    assert np.mean(large) > np.mean(small)


def test_radius():
    assert estimate_R(NormBallSpec("mixed", 1.0, 5), 3, 5) == pytest.approx((math.sqrt(5),) * 2)
    assert estimate_R(NormBallSpec("max", 1.0, 3), 3, 5) == pytest.approx((math.sqrt(15),) * 2)
    for kind in ("mixed", "max"):
        lo, hi = estimate_R(NormBallSpec(kind, 2.0, 1), 4, 6, samples=5, rng=RngStream(26))
        assert lo <= hi


def test_geometry_record():
    ens = build_sketching(5, 5, 2, RngStream(27))
    est = estimate_geometry(ens, NormBallSpec("mixed", 1.0, 1), samples=2, trials=2,
                            ascent_iters=3, seed=4)
    rec = est.to_record()
    assert rec["seed"] == 4 and rec["theta_hat"] >= 0 and rec["gamma_hat"] >= 0


def test_spikiness_range():
    M = gaussian_matrix(5, 9, RngStream(28))
    assert 1.0 <= spikiness(M) <= 3.0
    assert spikiness(np.ones((3, 4))) == pytest.approx(1.0)
    E = np.zeros((3, 4))
    E[0, 0] = 1.0
    assert spikiness(E) == pytest.approx(2.0)
    with pytest.raises(ValueError):
        spikiness(np.zeros((2, 2)))
