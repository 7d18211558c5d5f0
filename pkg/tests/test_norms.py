import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tnlasso.dense import RngStream, gaussian_matrix, random_rank_r
from tnlasso.errors import SolverError
from tnlasso.factored import _Problem, factor_norm_factored
from tnlasso.norms import (NormBallSpec, Regime, check_rank_sandwich, inf_norm,
                           max_norm_factored, max_norm_sdp, mixed_norm_factored, mixed_norm_sdp,
                           op_norm_1to2, svd_factor_bound, tnorm, tnorm_certify, tnorm_detail,
                           tnorm_upper)
from tnlasso.sdp import MAX, MIXED, GroupLayout, factor_norm_sdp

from . import oracles


def rank_one(seed, d1=5, d2=4):
    rng = RngStream(seed, "rank-one")
    return rng.normal(d1), rng.normal(d2)


# -- closed-form norms ---------------------------------------------------------

def test_op_norm_examples():
    assert op_norm_1to2(np.eye(3)) == 1.0
    assert op_norm_1to2([[3.0, 0.0], [4.0, 0.0]]) == 5.0
    M = gaussian_matrix(6, 5, RngStream(0, "col"))
    assert op_norm_1to2(M) == pytest.approx(max(math.sqrt(sum(M[i, j] ** 2 for i in range(6)))
                                                for j in range(5)), rel=1e-14)


def test_inf_norm_examples():
    assert inf_norm(np.eye(3)) == 1.0
    assert inf_norm([[-7.0, 2.0], [0.0, 3.0]]) == 7.0
    M = gaussian_matrix(6, 5, RngStream(1, "ent"))
    assert inf_norm(M) == max(abs(x) for x in M.ravel())


# -- SDP values ------------------------------------------------------------------

def test_mixed_identity():
    assert mixed_norm_sdp(np.eye(3)).value == pytest.approx(math.sqrt(3), abs=1e-5)


@pytest.mark.parametrize("d", [2, 3, 4])
def test_max_identity(d):
    assert max_norm_sdp(np.eye(d)).value == pytest.approx(1.0, abs=1e-5)


def test_max_all_ones():
    assert max_norm_sdp(np.ones((4, 4))).value == pytest.approx(1.0, abs=1e-6)


@pytest.mark.parametrize("seed", range(5))
def test_rank_one_values(seed):
    u, v = rank_one(seed)
    M = np.outer(u, v)
    assert mixed_norm_sdp(M).value == pytest.approx(np.linalg.norm(u) * np.abs(v).max(), rel=1e-6)
    assert max_norm_sdp(M).value == pytest.approx(np.abs(u).max() * np.abs(v).max(), rel=1e-6)
    assert mixed_norm_factored(M) == pytest.approx(np.linalg.norm(u) * np.abs(v).max(), rel=1e-6)
    assert max_norm_factored(M) == pytest.approx(np.abs(u).max() * np.abs(v).max(), rel=1e-6)


def test_zero_matrix():
    Z = np.zeros((3, 4))
    assert mixed_norm_sdp(Z).value == 0.0
    assert max_norm_sdp(Z).value == 0.0
    assert mixed_norm_factored(Z) == 0.0
    assert max_norm_factored(Z) == 0.0
    assert tnorm(Z, NormBallSpec("mixed", 1.0, 2)) == 0.0


def test_sdp_certificate_structure():
    M = gaussian_matrix(4, 5, RngStream(2, "cert"))
    for kind in (MIXED, MAX):
        sol = factor_norm_sdp(M, kind)
        W = np.block([[sol.W1, M], [M.T, sol.W2]])
        assert np.linalg.eigvalsh(W)[0] >= -1e-8 * np.trace(W)
        a, b = GroupLayout(kind, 4, 5).side_values(sol.W1, sol.W2)
        assert sol.value == pytest.approx(max(a, b), rel=1e-12)
        assert sol.lower <= sol.value and sol.gap <= 1e-6


@pytest.mark.parametrize("seed", range(4))
def test_sdp_matches_cvxpy(seed):
    rng = RngStream(seed, "cvx")
    M = gaussian_matrix(4, 3, rng) if seed % 2 else random_rank_r(5, 4, 2, rng)
    assert mixed_norm_sdp(M).value == pytest.approx(oracles.mixed_norm(M), rel=1e-5)
    assert max_norm_sdp(M).value == pytest.approx(oracles.max_norm(M), rel=1e-5)


def test_sdp_iteration_cap_reports_partial():
    M = gaussian_matrix(6, 6, RngStream(3, "cap"))
    with pytest.raises(SolverError) as info:
        factor_norm_sdp(M, MAX, tol=1e-12, max_iter=50)
    assert info.value.partial.value >= info.value.partial.lower


def test_accept_below_stops_early():
    M = gaussian_matrix(6, 6, RngStream(4, "accept"))
    exact = max_norm_sdp(M).value
    loose = factor_norm_sdp(M, MAX, accept_below=2 * exact)
    assert exact <= loose.value <= 2 * exact


# -- factored path ------------------------------------------------------------------

@pytest.mark.parametrize("kind", [MIXED, MAX])
def test_factored_gradient(kind):
    M = random_rank_r(5, 4, 2, RngStream(5, "grad"))
    prob = _Problem(M, kind, 4)
    x = prob.start(RngStream(6, "start"), 0.3)
    f, g = prob.smooth(x, 8.0)
    h = 1e-6
    fd = np.array([(prob.smooth(x + h * e, 8.0)[0] - prob.smooth(x - h * e, 8.0)[0]) / (2 * h)
                   for e in np.eye(x.size)])
    np.testing.assert_allclose(g, fd, rtol=1e-5, atol=1e-7)


@pytest.mark.parametrize("kind", [MIXED, MAX])
def test_factored_returns_exact_factorization(kind):
    M = random_rank_r(6, 5, 3, RngStream(7, "fac"))
    val, U, V = factor_norm_factored(M, kind, restarts=2)
    np.testing.assert_allclose(U @ V.T, M, atol=1e-9)
    ru = np.sum(U * U) if kind == MIXED else np.max(np.sum(U * U, axis=1))
    assert val == pytest.approx(math.sqrt(ru * np.max(np.sum(V * V, axis=1))), rel=1e-12)


@pytest.mark.parametrize("seed", range(3))
def test_factored_upper_bounds_sdp(seed):
    M = random_rank_r(6, 6, 3, RngStream(seed, "fac-sdp"))
    for kind in (MIXED, MAX):
        sdp = factor_norm_sdp(M, kind)
        fac = factor_norm_factored(M, kind, restarts=3)[0]
        assert fac >= sdp.lower * (1 - 1e-9)
        assert fac <= sdp.value * 1.01


def test_svd_bound_is_upper():
    M = gaussian_matrix(5, 6, RngStream(8, "svdb"))
    assert svd_factor_bound(M, MIXED) >= mixed_norm_sdp(M).lower
    assert svd_factor_bound(M, MAX) >= max_norm_sdp(M).lower


# -- regularizer ---------------------------------------------------------------------

def test_regime_parse():
    assert Regime.parse("Mixed") is Regime.MIXED
    assert Regime.parse("max-regime") is Regime.MAX
    with pytest.raises(ValueError):
        Regime.parse("nuclear")


@pytest.mark.parametrize("alpha,r", [(0.0, 1), (-1.0, 1), (math.inf, 1), (1.0, 0), (1.0, 1.5)])
def test_ball_spec_validation(alpha, r):
    with pytest.raises(ValueError):
        NormBallSpec("mixed", alpha, r)


def test_tnorm_rank_one_mixed():
    u, v = rank_one(9)
    M = np.outer(u, v)
    val = tnorm(M, NormBallSpec("mixed", 1.0, 1))
    assert val == pytest.approx(np.linalg.norm(u) * np.abs(v).max(), rel=1e-6)


def test_tnorm_identity_max_regime():
    assert tnorm(np.eye(4), NormBallSpec("max", 1.0, 4)) == pytest.approx(1.0, abs=1e-6)


def test_tnorm_homogeneity():
    M = gaussian_matrix(4, 5, RngStream(10, "hom"))
    for kind in ("mixed", "max"):
        spec = NormBallSpec(kind, 1.0, 2)
        assert tnorm(2.5 * M, spec) == pytest.approx(2.5 * tnorm(M, spec), rel=1e-5)
        assert tnorm(-M, spec) == pytest.approx(tnorm(M, spec), rel=1e-5)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32), st.sampled_from(["mixed", "max"]))
def test_triangle_inequality(seed, kind):
    rng = RngStream(seed, "tri")
    A, B = gaussian_matrix(4, 3, rng.child("a")), gaussian_matrix(4, 3, rng.child("b"))
    spec = NormBallSpec(kind, 1.0, 2)
    f = mixed_norm_sdp if kind == "mixed" else max_norm_sdp
    base = op_norm_1to2 if kind == "mixed" else inf_norm
    # the left side uses the certified lower bound so solver slack cannot flip the check
    low = f(A + B).lower
    assert low <= f(A).value + f(B).value + 1e-6
    assert max(base(A + B), low / math.sqrt(2)) <= tnorm(A, spec) + tnorm(B, spec) + 1e-6


def test_tnorm_upper_dominates():
    M = gaussian_matrix(5, 5, RngStream(11, "upper"))
    for kind in ("mixed", "max"):
        spec = NormBallSpec(kind, 1.0, 2)
        assert tnorm_upper(M, spec) >= tnorm(M, spec) * (1 - 1e-6)


def test_tnorm_large_uses_factored():
    M = random_rank_r(70, 8, 2, RngStream(12, "big"))
    res = tnorm_detail(M, NormBallSpec("mixed", 1.0, 2))
    assert res.method == "factored" and res.upper_bound_only
    assert res.value >= op_norm_1to2(M)


def test_tnorm_certify():
    M = gaussian_matrix(5, 5, RngStream(13, "certify"))
    spec = NormBallSpec("max", 1.0, 2)
    val = tnorm(M, spec)
    ok, upper = tnorm_certify(M, spec, val * 1.01)
    assert ok and upper <= val * 1.01
    ok, _ = tnorm_certify(M, spec, val * 0.9)
    assert not ok


# -- sandwich -------------------------------------------------------------------------

def test_sandwich_rank_one_tight():
    u, v = rank_one(14)
    rep = check_rank_sandwich(np.outer(u, v), 1)
    assert rep.all_ok
    assert rep.mixed == pytest.approx(rep.op_1to2, rel=1e-6)
    assert rep.max == pytest.approx(rep.inf, rel=1e-6)


def test_sandwich_rejects_rank_above_r():
    with pytest.raises(ValueError):
        check_rank_sandwich(gaussian_matrix(4, 4, RngStream(15, "hi")), 2)


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 7), st.integers(1, 7), st.integers(1, 4), st.integers(0, 2**32))
def test_sandwich_property(d1, d2, r, seed):
    r = min(r, d1, d2)
    M = random_rank_r(d1, d2, r, RngStream(seed, "sandwich"))
    assert check_rank_sandwich(M, r).all_ok
