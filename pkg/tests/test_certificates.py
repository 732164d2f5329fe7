import math
from dataclasses import replace

import numpy as np
import pytest


# --- Tests for Lasota-Yorke constants ---

def test_doubling_ly_constants(doubling_ly):
    """lambda = 1/2, B = 0 give M = 1, C = 1 and D = 3/2."""
    assert doubling_ly.lam == pytest.approx(0.5)
    assert doubling_ly.M == pytest.approx(1.0, abs=1e-12)
    assert doubling_ly.C == pytest.approx(1.0, abs=1e-12)
    assert doubling_ly.D == pytest.approx(1.5, abs=1e-12)
    assert doubling_ly.growth >= 1.0
    assert doubling_ly.density_c1 == pytest.approx(1.0, abs=1e-12)


def test_ly_constants_grow_with_distortion(degree8_model):
    from models.certificates import ly_constants
    from models.dynamics import certify_expanding
    ly = ly_constants(certify_expanding(degree8_model, depth=10))
    assert ly.M > 1.0
    assert ly.C > ly.M
    assert ly.D > ly.C
    lam_c1, C = ly.c1_pair
    assert lam_c1 >= ly.M * ly.lam and C == ly.C


def test_degree8_distortion_constant(degree8_model):
    from models.certificates import ly_constants
    from models.dynamics import certify_expanding
    ly = ly_constants(certify_expanding(degree8_model, depth=10))
    assert 1.0 < ly.M <= 1.25


def test_ly_constants_grow_with_looser_bounds(degree8_model):
    from models.certificates import ly_constants
    from models.dynamics import certify_expanding
    bounds = certify_expanding(degree8_model, depth=10)
    tight = ly_constants(bounds)
    for loose_bounds in (replace(bounds, lam=bounds.lam * 1.5),
                         replace(bounds, B=bounds.B * 2.0),
                         replace(bounds, T3=bounds.T3 * 2.0)):
        loose = ly_constants(loose_bounds)
        for name in ("M", "C", "D", "Z", "D_step"):
            assert getattr(loose, name) >= getattr(tight, name), name


def test_ly_needs_lambda_below_one():
    from models.certificates import ly_constants
    from models.dynamics import DerivativeBounds
    from utils.exceptions import NoContraction
    with pytest.raises(NoContraction):
        ly_constants(DerivativeBounds(lam=1.0, B=0.0, T3=0.0))


def test_ly_audit_entries(doubling_ly):
    ids = [entry.id for entry in doubling_ly.audit_entries()]
    assert "ly.lambda" in ids and "ly.D" in ids
    line = doubling_ly.audit_entries()[3].render()
    assert line.startswith("ly.M, 1 + B/(1-lam), ")
    assert "lam=" in line


# --- Tests for discrete Lasota-Yorke pairs ---

def test_discrete_iterate_for_doubling(doubling_ly):
    from models.certificates import choose_discrete_iterate, discrete_ly
    from models.partition import PartitionScheme
    scheme = PartitionScheme(1024)
    dly = choose_discrete_iterate(doubling_ly, scheme)
    assert dly is not None and dly.k == 5
    assert dly.usable
    assert not discrete_ly(doubling_ly, scheme, 4).usable
    with pytest.raises(ValueError):
        discrete_ly(doubling_ly, scheme, 0)


def test_discrete_iterate_missing_when_cap_small(doubling_ly):
    from models.certificates import choose_discrete_iterate
    from models.partition import PartitionScheme
    assert choose_discrete_iterate(doubling_ly, PartitionScheme(1024), k_max=2) is None


# --- Tests for approximation distances ---

def test_operator_distance_doubling(doubling_ly):
    from models.certificates import operator_distance
    from models.partition import PartitionScheme
    d = operator_distance(doubling_ly, PartitionScheme(1024))
    assert d == pytest.approx(3.0 / 1024 * 6.5, rel=1e-12)
    assert d >= 3.0 / 1024 * 6.5


def test_range_distance_scales_with_eta(doubling_ly):
    from models.certificates import range_distance
    from models.partition import PartitionScheme
    coarse = range_distance(doubling_ly, PartitionScheme(64), 1.0, 10.0)
    fine = range_distance(doubling_ly, PartitionScheme(128), 1.0, 10.0)
    assert fine == pytest.approx(coarse / 2, rel=1e-12)


def test_power_distance_prefers_smaller_pair(doubling_ly):
    from models.certificates import approx_bound, power_distance
    from models.partition import PartitionScheme
    scheme = PartitionScheme(1024)
    computed = approx_bound(doubling_ly, scheme, per_power=[0.9, 0.8, 0.7])
    both = approx_bound(doubling_ly, scheme, per_power=[0.9, 0.8, 0.7], M_delta=50.0)
    uniform = approx_bound(doubling_ly, scheme, M_delta=50.0)
    assert power_distance(both, 3).total == power_distance(computed, 3).total
    assert power_distance(uniform, 3).total > power_distance(computed, 3).total
    first = power_distance(computed, 1)
    assert first.strong > 0.0 and first.weak > 0.0


def test_power_distance_needs_data(doubling_ly):
    from models.certificates import approx_bound, power_distance
    from models.partition import PartitionScheme
    ab = approx_bound(doubling_ly, PartitionScheme(64))
    with pytest.raises(ValueError):
        power_distance(ab, 3)
    with pytest.raises(ValueError):
        power_distance(ab, 0)


# --- Tests for certify_matrix ---

def test_certify_matrix_contracting():
    from models.certificates import certify_matrix
    cert = certify_matrix([[0.5, 1.0], [0.1, 0.2]], n1=3)
    assert cert.rho < 1.0
    assert cert.eigen_inequality_holds()
    assert cert.C1 >= 1.0 / cert.b
    assert math.isfinite(cert.strong_resolvent)


def test_certify_matrix_weights_beat_uniform():
    from models.certificates import certify_matrix
    mat = [[0.1, 4.0], [0.01, 0.1]]
    searched = certify_matrix(mat)
    plain = certify_matrix(mat, ab_search=False)
    assert (plain.a, plain.b) == (0.5, 0.5)
    assert searched.rho <= plain.rho
    assert searched.rho < 1.0 <= plain.rho


def test_certify_matrix_not_contracting():
    from models.certificates import certify_matrix
    cert = certify_matrix([[1.5, 0.0], [0.0, 0.5]])
    assert cert.rho >= 1.0
    assert math.isinf(cert.strong_resolvent)


def test_certify_matrix_looser_entries_give_larger_rate():
    from models.certificates import certify_matrix
    mat = np.array([[0.3, 2.0], [0.05, 0.2]])
    tight = certify_matrix(mat, n1=4)
    loose = certify_matrix(mat * 1.1, n1=4)
    assert tight.rho < loose.rho < 1.0
    assert tight.strong_resolvent <= loose.strong_resolvent


def test_certify_matrix_rejects_negative_entries():
    from models.certificates import certify_matrix
    with pytest.raises(ValueError):
        certify_matrix([[0.5, -1.0], [0.1, 0.2]])
    with pytest.raises(ValueError):
        certify_matrix(np.zeros((3, 3)))


# --- Tests for equilibrium ---

def test_doubling_equilibrium(doubling_certificate):
    cert = doubling_certificate
    assert cert.rho < 1.0
    assert cert.eigen_inequality_holds()
    assert 1 <= cert.n1 <= 16
    assert cert.C1 == pytest.approx(1.0 / cert.b, rel=1e-12)
    assert cert.distance is not None
    assert len(cert.per_power) == 16
    ids = [entry.id for entry in cert.audit_entries()]
    assert ids[0] == "equilibrium.n1" and "equilibrium.rho" in ids


def test_equilibrium_reuses_trace(doubling_c0_1024, doubling_ly, doubling_certificate):
    from models.certificates import equilibrium
    from models.operator import PowerNormTrace
    trace = PowerNormTrace(bounds=list(doubling_certificate.per_power), one_norms=[],
                           computed=[], local_errors=[])
    again = equilibrium(doubling_c0_1024, doubling_ly, cap=16, rho_target=0.05, trace=trace)
    assert again.rho == doubling_certificate.rho
    assert again.n1 == doubling_certificate.n1


def test_equilibrium_fails_on_coarse_partition(doubling_model, doubling_ly):
    from models.certificates import equilibrium
    from models.operator import KIND_C0, assemble
    from models.partition import PartitionScheme
    from utils.exceptions import NoContraction
    op = assemble(doubling_model, PartitionScheme(16), KIND_C0)
    with pytest.raises(NoContraction):
        equilibrium(op, doubling_ly, cap=4)


# --- Tests for the truncation length ---

def test_tail_length_reaches_tau(doubling_certificate):
    from models.certificates import tail_length, tail_value
    cert = doubling_certificate
    l_star, tail = tail_length(cert, 2.0, 1e-3)
    assert l_star % cert.n1 == 0
    assert tail <= 1e-3
    k = l_star // cert.n1
    if k > 1:
        assert tail_value(cert, 2.0, k - 1) > 1e-3


def test_tail_length_zero_input(doubling_certificate):
    from models.certificates import tail_length
    l_star, tail = tail_length(doubling_certificate, 0.0, 1e-6)
    assert l_star == doubling_certificate.n1
    assert tail <= 1e-300


def test_tail_length_without_contraction():
    from models.certificates import certify_matrix, tail_length, tail_value
    from utils.exceptions import NoContraction
    cert = certify_matrix([[1.5, 0.0], [0.0, 0.5]])
    assert math.isinf(tail_value(cert, 1.0, 3))
    with pytest.raises(NoContraction):
        tail_length(cert, 1.0, 0.1)


def test_tail_length_grows_with_input_bound(doubling_certificate):
    from models.certificates import tail_length
    l_small, _ = tail_length(doubling_certificate, 1.0, 1e-3)
    l_large, _ = tail_length(doubling_certificate, 10.0, 1e-3)
    l_strict, _ = tail_length(doubling_certificate, 1.0, 1e-5)
    assert l_small <= l_large
    assert l_small <= l_strict
