import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from conechain.cones import (
    OrthantCone, PolyhedralCone, alpha_max, beta_min, contraction_bound, cross_ratio_diameter,
    hilbert_distance, local_norm, measured_contraction, membership, one_minus_contraction,
    operator_distance_orthant, optimized_contraction, product_subadditivity_check, projective_diameter,
    rank_one_approx, rank_one_chain, spectral_gap_cone,
)
from conechain.errors import CertificationError, DomainError

from oracles import entrywise_ratio_distance, orthant_distance

pos_vec = lambda n: arrays(float, n, elements=st.floats(0.01, 100.0))
pos_mat = lambda n: arrays(float, (n, n), elements=st.floats(0.01, 100.0))


def test_hilbert_distance_examples():
    c = OrthantCone(2)
    assert hilbert_distance(c, [1, 1], [2, 1]) == pytest.approx(math.log(2), abs=1e-15)
    assert hilbert_distance(c, [3, 7], [3, 7]) == 0.0
    assert hilbert_distance(c, [1, 0.1], [0.1, 1]) == pytest.approx(2 * math.log(10), abs=1e-12)


def test_hilbert_distance_boundary_and_errors():
    c = OrthantCone(2)
    assert hilbert_distance(c, [1, 0], [1, 1]) == math.inf
    assert hilbert_distance(c, [1, 0], [2, 0]) == 0.0
    with pytest.raises(DomainError, match="violates"):
        hilbert_distance(c, [1, -1], [1, 1])
    with pytest.raises(DomainError, match="zero"):
        hilbert_distance(c, [0, 0], [1, 1])


def test_alpha_beta_self():
    c = OrthantCone(3)
    x = np.array([1.0, 2.0, 5.0])
    assert alpha_max(c, x, x) == 1.0 and beta_min(c, x, x) == 1.0


@settings(max_examples=60, deadline=None)
@given(pos_vec(4), pos_vec(4), pos_vec(4), st.floats(0.1, 10), st.floats(0.1, 10))
def test_metric_axioms(x, y, z, lam, mu):
    c = OrthantCone(4)
    d = hilbert_distance(c, x, y)
    assert d == pytest.approx(hilbert_distance(c, y, x), abs=1e-12)
    assert hilbert_distance(c, lam * x, mu * y) == pytest.approx(d, abs=1e-9)
    assert d <= hilbert_distance(c, x, z) + hilbert_distance(c, z, y) + 1e-9
    assert d == pytest.approx(orthant_distance(x, y), abs=1e-9)


@settings(max_examples=60, deadline=None)
@given(pos_vec(3), pos_vec(3))
def test_alpha_beta_sandwich(x, y):
    c = OrthantCone(3)
    a, b = alpha_max(c, x, y), beta_min(c, x, y)
    assert membership(c, y - a * x * (1 - 1e-12))[0]
    assert membership(c, b * x * (1 + 1e-12) - y)[0]


@settings(max_examples=40, deadline=None)
@given(pos_mat(3), pos_vec(3), pos_vec(3))
def test_non_expansion(T, x, y):
    c = OrthantCone(3)
    assert hilbert_distance(c, T @ x, T @ y) <= hilbert_distance(c, x, y) + 1e-9


def test_polyhedral_membership_witness():
    H = np.array([[1.0, 0.0], [1.0, -1.0]])
    cone = PolyhedralCone(H, labels=["first positive", "first dominates"])
    assert membership(cone, [2, 1]) == (True, None)
    assert membership(cone, [1, 2]) == (False, "first dominates")
    assert membership(cone, [0, 0])[0]


def test_two_state_diameter_example():
    est = projective_diameter([[1.0, 0.1], [0.1, 1.0]])
    assert est.exact
    assert est.value == pytest.approx(2 * math.log(10), abs=1e-10)
    assert contraction_bound(est.value) == pytest.approx(0.9 / 1.1, abs=1e-10)
    # away from beta = 1 the column cross ratio is beta / eps^2
    for beta in (0.01, 7.5, 300.0):
        est = projective_diameter([[beta, 0.1], [0.1, 1.0]])
        assert est.value == pytest.approx(abs(math.log(beta / 0.01)), abs=1e-10)


def test_diameter_trivial_cases():
    assert projective_diameter(np.outer([1, 2, 3], [4, 5, 6])).value == pytest.approx(0.0, abs=1e-12)
    est = projective_diameter(np.eye(2))
    assert est.value == math.inf
    est = projective_diameter([[1.0, 0.0], [2.0, 0.0]])
    assert est.value == math.inf and est.witness == ("zero column", 1)


@settings(max_examples=30, deadline=None)
@given(pos_mat(4))
def test_orthant_diameter_formula_dominates_samples(T):
    est = projective_diameter(T)
    cols = [orthant_distance(T[:, j], T[:, k]) for j in range(4) for k in range(4)]
    assert est.value == pytest.approx(max(cols), abs=1e-9)
    rng = np.random.default_rng(0)
    X = rng.lognormal(size=(4, 200))
    Y = rng.lognormal(size=(4, 200))
    for j in range(200):
        assert orthant_distance(T @ X[:, j], T @ Y[:, j]) <= est.value + 1e-9


def test_cross_ratio_diameter_zero_coordinate_is_infinite():
    val, pair = cross_ratio_diameter(np.array([[1.0, 1.0], [0.0, 1.0]]))
    assert val == math.inf and set(pair) == {0, 1}


def test_contraction_bound_values():
    assert contraction_bound(0.0) == 0.0
    assert contraction_bound(4.0) == pytest.approx(math.tanh(1.0), abs=1e-15)
    assert contraction_bound(math.inf) == 1.0
    for d in (1e-3, 1.0, 30.0, 200.0):
        ref = float(1 - mpmath.tanh(mpmath.mpf(d) / 4)) if d < 100 else float(2 * mpmath.exp(-mpmath.mpf(d) / 2))
        assert one_minus_contraction(d) == pytest.approx(ref, rel=1e-9)
    with pytest.raises(DomainError):
        contraction_bound(-1.0)


def test_measured_contraction_examples():
    T = np.array([[1.0, 0.1], [0.1, 1.0]])
    m = measured_contraction(T, pairs=10_000, seed=1)
    assert m.value <= 0.9 / 1.1 + 1e-9
    assert measured_contraction(np.outer([1, 2], [3, 1]), pairs=100).value == pytest.approx(0.0, abs=1e-12)


def test_measured_contraction_indeterminate():
    x = np.ones((2, 5))
    m = measured_contraction(np.eye(2), points=(x, x))
    assert m.indeterminate


def test_optimized_contraction_approaches_bound():
    rng = np.random.default_rng(3)
    T = rng.lognormal(size=(5, 5))
    bound = contraction_bound(projective_diameter(T).value)
    opt = optimized_contraction(T)
    assert 0.9 * bound <= opt <= bound + 1e-9


def test_operator_distance_examples():
    A = [[1, 2], [2, 1]]
    B = [[2, 1], [1, 2]]
    assert operator_distance_orthant(A, B) == pytest.approx(math.log(4), abs=1e-12)
    assert operator_distance_orthant(A, A) == 0.0
    rng = np.random.default_rng(0)
    M = rng.uniform(0.1, 1, (3, 3))
    assert operator_distance_orthant(M, 2 * M) == pytest.approx(0.0, abs=1e-12)
    assert operator_distance_orthant([[1, 0], [1, 1]], [[1, 1], [1, 1]]) == math.inf


@settings(max_examples=30, deadline=None)
@given(pos_mat(3), pos_mat(3))
def test_operator_distance_matches_brute_force(A, B):
    assert operator_distance_orthant(A, B) == pytest.approx(entrywise_ratio_distance(A, B), abs=1e-9)


def test_rank_one_examples():
    r = rank_one_approx(np.outer([1, 2], [3, 4]))
    assert r.distance == pytest.approx(0.0, abs=1e-12)
    T = np.array([[1.0, 0.1], [0.1, 1.0]])
    r = rank_one_approx(T, y0=[1, 1])
    assert r.certificate == pytest.approx(4 * math.log(10))
    assert entrywise_ratio_distance(T, r.matrix()) <= r.certificate
    with pytest.raises(CertificationError):
        rank_one_approx(np.eye(2))
    with pytest.raises(DomainError):
        rank_one_approx(T, y0=[1, 0])


@settings(max_examples=40, deadline=None)
@given(pos_mat(4))
def test_rank_one_certificate_and_envelopes(T):
    r = rank_one_approx(T)
    assert entrywise_ratio_distance(T, r.matrix()) <= 2 * projective_diameter(T).value + 1e-9
    rng = np.random.default_rng(1)
    for x in rng.lognormal(size=(50, 4)):
        a, l, b = r.envelopes(x)
        assert l >= 0
        assert a * (1 - 1e-12) <= l <= b * (1 + 1e-12)


def test_rank_one_chain_geometric_decay():
    T = np.array([[1.0, 0.1], [0.1, 1.0]])
    res = rank_one_chain([T] * 12)
    d = np.array(res.stage_distances)
    assert np.all(d <= np.array(res.stage_bounds) + 1e-9)
    rates = d[2:8] / d[1:7]
    assert np.all(rates <= 0.9 / 1.1 + 1e-9)
    single = rank_one_chain([T])
    assert single.operator.certificate == pytest.approx(rank_one_approx(T).certificate)


def test_rank_one_chain_random_product_oracle():
    rng = np.random.default_rng(5)
    mats = [rng.uniform(0.2, 1.0, (3, 3)) for _ in range(6)]
    R = max(projective_diameter(M).value for M in mats)
    res = rank_one_chain(mats, R=R, kappa=contraction_bound(R))
    P = np.linalg.multi_dot(mats[::-1])
    assert entrywise_ratio_distance(P, res.operator.matrix()) <= res.operator.certificate + 1e-9


def test_rank_one_chain_names_failing_stage():
    T = np.array([[1.0, 0.1], [0.1, 1.0]])
    with pytest.raises(CertificationError, match="stage 2"):
        rank_one_chain([T, T, np.array([[1.0, 1e-3], [1e-3, 1.0]])], kappa=0.9)
    with pytest.raises(CertificationError, match="stage 0"):
        rank_one_chain([T, T], R=1.0)


def test_product_subadditivity_examples():
    A = np.array([[1.0, 2.0], [2.0, 1.0]])
    C = np.array([[2.0, 1.0], [1.0, 2.0]])
    I = np.array([[1.0, 1e-9], [1e-9, 1.0]])
    rep = product_subadditivity_check(A, I, C, I)
    assert rep.holds and rep.lhs == pytest.approx(math.log(4), abs=1e-6)
    assert product_subadditivity_check(A, C, A, C).rhs == 0.0
    rng = np.random.default_rng(2)
    for _ in range(100):
        assert product_subadditivity_check(*rng.uniform(0.05, 1, (4, 3, 3))).holds


def test_local_norm_examples():
    assert local_norm([1, 1], [1, -1]) == 2.0
    assert local_norm([1, 1], [0, 0]) == 0.0
    assert local_norm([2, 4], [1, -2]) == 1.0
    with pytest.raises(DomainError):
        local_norm([1, 0], [1, 1])


@settings(max_examples=60, deadline=None)
@given(pos_vec(4), arrays(float, 4, elements=st.floats(-1, 1)), st.floats(1e-5, 1e-3))
def test_local_norm_first_order(x0, s, scale):
    s = s * scale * x0
    ln = local_norm(x0, s)
    if ln < 1e-9 or ln > 0.01:
        return
    d = hilbert_distance(OrthantCone(4), x0, x0 + s)
    assert abs(d - ln) <= 0.05 * ln


def test_spectral_gap_cone_2x2():
    # symmetric positive definite with eigenvalues 1 and 0.3
    T = np.array([[0.65, 0.35], [0.35, 0.65]])
    cone = spectral_gap_cone(T)
    m = measured_contraction(T, cone, pairs=1000, seed=0)
    assert m.value < 1.0
    assert np.all(cone.coords(T @ cone.generators) >= -1e-9)


def test_spectral_gap_cone_projection_and_negative_entry():
    u0 = np.array([0.6, 0.8])
    P = np.outer(u0, u0)
    cone = spectral_gap_cone(P)
    assert projective_diameter(P, cone).value == pytest.approx(0.0, abs=1e-9)
    T = np.array([[1.2, -0.1, 0.2], [0.3, 0.9, 0.1], [0.2, 0.3, 0.8]])
    vals = np.sort(np.abs(np.linalg.eigvals(T)))[::-1]
    assert vals[1] / vals[0] < 0.9
    cone = spectral_gap_cone(T)
    assert np.all(cone.coords((T / cone.scale) @ cone.generators) >= -1e-9 * np.abs(cone.H).max())


def test_spectral_gap_cone_refusals():
    with pytest.raises(DomainError, match="degenerate"):
        spectral_gap_cone(np.eye(2))
    with pytest.raises(CertificationError, match="insufficient gap"):
        spectral_gap_cone(np.array([[1.0, 0.0], [0.0, 0.999999]]), max_power=10)
