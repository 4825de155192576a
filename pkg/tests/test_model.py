import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import P1, X_PLUS
from satbasin.errors import InvalidParameterError, SingularControllabilityError
from satbasin.model import (
    Channel,
    RegionSignature,
    SystemSpec,
    all_signatures,
    closed_loop_field,
    eigenvalues,
    load_system,
    counterexample_system,
    place_poles_single_input,
    random_antistable_system,
    region_jacobian,
    region_offset,
    region_signature,
    saturate,
    save_system,
    spectrum_mismatch,
    validate_spec,
)


@pytest.mark.parametrize("s, M, want", [(0.5, 1.0, 0.5), (2.3, 1.0, 1.0), (-7.0, 2.0, -2.0), (0.0, 3.0, 0.0)])
def test_saturate(s, M, want):
    assert saturate(s, M) == want


@pytest.mark.parametrize("M", [0.0, -1.0])
def test_saturate_rejects_nonpositive_bound(M):
    with pytest.raises(InvalidParameterError):
        saturate(1.0, M)


@given(st.floats(-1e6, 1e6), st.floats(1e-3, 1e3))
def test_saturate_is_odd_and_clamped(s, M):
    assert saturate(-s, M) == -saturate(s, M)
    assert -M <= saturate(s, M) <= M


def test_spec_dimension_checks():
    with pytest.raises(InvalidParameterError):
        SystemSpec(A=np.eye(2), B=[[1.0], [0.0], [0.0]], K=[[1.0, 1.0]])
    with pytest.raises(InvalidParameterError):
        SystemSpec(A=np.eye(2), B=[[1.0], [0.0]], K=[[1.0, 1.0, 1.0]])
    with pytest.raises(InvalidParameterError):
        SystemSpec(A=np.eye(2), B=[[1.0], [0.0]], K=[[1.0, 1.0]], M=0.0)
    with pytest.raises(InvalidParameterError):
        SystemSpec(A=[[np.nan, 0], [0, 1]], B=[[1.0], [0.0]], K=[[1.0, 1.0]])


def test_spec_is_immutable(cx):
    with pytest.raises(ValueError):
        cx.A[0, 0] = 5.0


def test_json_round_trip(tmp_path, cx):
    path = tmp_path / "sys.json"
    save_system(cx, path)
    data = json.loads(path.read_text())
    assert data["n"] == 3 and data["m"] == 1
    assert load_system(path).allclose(cx, atol=0)


def test_counterexample_system_gain_is_exact_fraction(cx):
    np.testing.assert_allclose(cx.K[0], [7 / 3, -4 / 3, -35 / 12], rtol=0, atol=1e-15)


def test_field_vanishes_at_origin_and_saturated_equilibrium(cx):
    assert np.all(closed_loop_field(cx, np.zeros(3)) == 0)
    # A^{-1} b = (0.7, -0.1, 1) by hand, so x = -A^{-1} b M solves A x + b M = 0
    assert np.linalg.norm(closed_loop_field(cx, X_PLUS)) < 1e-14


def test_field_dimension_mismatch(cx):
    with pytest.raises(InvalidParameterError):
        closed_loop_field(cx, np.zeros(2))


def test_field_odd_at_p1(cx):
    np.testing.assert_array_equal(closed_loop_field(cx, -P1), -closed_loop_field(cx, P1))


def test_region_signature_examples(cx, planar):
    sig = region_signature(cx, np.zeros(3))
    assert sig.channels == (Channel.LINEAR,) and sig.margins == (1.0,)
    sig = region_signature(cx, X_PLUS)
    assert str(sig) == "P"
    assert cx.K[0] @ X_PLUS == pytest.approx(1.15, abs=1e-12)
    assert str(region_signature(planar, np.array([1.0, 0.5]))) == "L"


def test_region_signature_on_plane_is_saturated():
    spec = SystemSpec(A=np.eye(2), B=[[1.0], [0.0]], K=[[1.0, 0.0]], M=1.0)
    assert str(region_signature(spec, np.array([1.0, 0.0]))) == "P"
    assert str(region_signature(spec, np.array([-1.0, 3.0]))) == "N"


def test_all_signatures_count_and_order():
    assert [str(s) for s in all_signatures(1)] == ["L", "P", "N"]
    sigs = all_signatures(3)
    assert len(sigs) == 27 and len({str(s) for s in sigs}) == 27


def test_region_jacobian(cx):
    np.testing.assert_array_equal(region_jacobian(cx, RegionSignature.parse("L")), cx.A + cx.B @ cx.K)
    np.testing.assert_array_equal(region_jacobian(cx, RegionSignature.parse("P")), cx.A)
    rng = np.random.default_rng(3)
    spec = SystemSpec(A=rng.normal(size=(3, 3)), B=rng.normal(size=(3, 2)), K=rng.normal(size=(2, 3)))
    J = region_jacobian(spec, RegionSignature.parse("LN"))
    np.testing.assert_allclose(J, spec.A + np.outer(spec.B[:, 0], spec.K[0]), rtol=0, atol=1e-15)


def test_piecewise_consistency():
    rng = np.random.default_rng(11)
    checked = 0
    for _ in range(200):
        n, m = rng.integers(2, 5), rng.integers(1, 3)
        spec = SystemSpec(A=rng.normal(size=(n, n)), B=rng.normal(size=(n, m)), K=rng.normal(size=(m, n)),
                          M=rng.uniform(0.2, 2))
        x = rng.normal(size=n) * 2
        sig = region_signature(spec, x)
        if min(abs(v) for v in sig.margins) <= 1e-9:
            continue
        sig = RegionSignature(sig.channels)
        affine = region_jacobian(spec, sig) @ x + region_offset(spec, sig)
        f = closed_loop_field(spec, x)
        assert np.linalg.norm(affine - f) <= 1e-12 * max(1.0, np.linalg.norm(f))
        checked += 1
    assert checked > 150


def test_field_oddness_1000_pairs():
    rng = np.random.default_rng(5)
    for _ in range(1000):
        n, m = rng.integers(1, 6), rng.integers(1, 4)
        spec = SystemSpec(A=rng.normal(size=(n, n)), B=rng.normal(size=(n, m)), K=rng.normal(size=(m, n)),
                          M=rng.uniform(0.1, 3))
        x = rng.normal(size=n) * rng.uniform(0.1, 10)
        f = closed_loop_field(spec, x)
        assert np.linalg.norm(closed_loop_field(spec, -x) + f) <= 1e-12 * max(1.0, np.linalg.norm(f))


@settings(max_examples=200, deadline=None)
@given(arrays(float, 3, elements=st.floats(-50, 50)))
def test_saturation_term_bound(x):
    rng = np.random.default_rng(0)
    B = rng.normal(size=(3, 2))
    spec = SystemSpec(A=np.eye(3), B=B, K=rng.normal(size=(2, 3)), M=0.7)
    sat_term = closed_loop_field(spec, x) - spec.A @ x
    assert np.linalg.norm(sat_term) <= np.linalg.norm(B, 2) * spec.M * np.sqrt(2) + 1e-12


def test_eigenvalue_examples(cx):
    assert spectrum_mismatch(eigenvalues(cx.A + cx.B @ cx.K), [-1, -2, -3]) < 1e-9
    assert spectrum_mismatch(eigenvalues(cx.A), [1 + 3j, 1 - 3j, 4]) < 1e-12
    assert spectrum_mismatch(eigenvalues(np.eye(2)), [1, 1]) == 0
    with pytest.raises(InvalidParameterError):
        eigenvalues(np.ones((2, 3)))


def test_eigenpair_residuals():
    rng = np.random.default_rng(2)
    for n in range(2, 13):
        F = rng.normal(size=(n, n))
        lam, V = np.linalg.eig(F)
        lam2 = eigenvalues(F)
        assert spectrum_mismatch(lam, lam2) < 1e-10
        for i in range(n):
            assert np.linalg.norm(F @ V[:, i] - lam[i] * V[:, i]) <= 1e-8 * np.linalg.norm(F, 2)


def test_validate_counterexample_system(cx):
    rep = validate_spec(cx)
    assert rep.anti_stable and rep.controllable and rep.closed_loop_hurwitz
    assert rep.controllability_rank == 3


def test_validate_failures():
    rep = validate_spec(SystemSpec(A=-np.eye(2), B=[[1.0], [1.0]], K=[[0.0, 0.0]]))
    assert not rep.anti_stable
    rep = validate_spec(SystemSpec(A=np.eye(2), B=[[1.0], [0.0]], K=[[-2.0, 0.0]]))
    assert not rep.controllable and rep.controllability_rank == 1


def test_place_poles_recovers_counterexample_gain(cx):
    k = place_poles_single_input(cx.A, cx.B[:, 0], [-1, -2, -3])
    np.testing.assert_allclose(k, [7 / 3, -4 / 3, -35 / 12], rtol=0, atol=1e-9)


def test_place_poles_hand_solved_planar():
    # trace(A + b k) = 3 + k1 + k2 = -3 and det = (1 + k1)(2 + k2) - k1 k2 = 2
    # give k = (6, -12)
    k = place_poles_single_input(np.diag([1.0, 2.0]), [1.0, 1.0], [-1, -2])
    np.testing.assert_allclose(k, [6.0, -12.0], atol=1e-12)


def test_place_poles_no_feedback_needed():
    k = place_poles_single_input(np.diag([1.0, 2.0]), [1.0, 1.0], [1, 2])
    np.testing.assert_allclose(k, [0.0, 0.0], atol=1e-12)


def test_place_poles_errors():
    with pytest.raises(SingularControllabilityError):
        place_poles_single_input(np.eye(2), [1.0, 0.0], [-1, -2])
    with pytest.raises(InvalidParameterError):
        place_poles_single_input(np.diag([1.0, 2.0]), [1.0, 1.0], [-1 + 1j, -2])


def test_place_poles_round_trip_100_systems():
    rng = np.random.default_rng(17)
    done = 0
    while done < 100:
        n = int(rng.integers(2, 7))
        A, b = rng.uniform(-1, 1, (n, n)), rng.uniform(-1, 1, n)
        poles = -rng.uniform(0.5, 3, n).astype(complex)
        if rng.random() < 0.5:
            poles[0], poles[1] = complex(poles[0].real, 0.8), complex(poles[0].real, -0.8)
        try:
            k = place_poles_single_input(A, b, poles)
        except SingularControllabilityError:
            continue
        assert spectrum_mismatch(eigenvalues(A + np.outer(b, k)), poles) <= 1e-6
        done += 1


def test_random_system_is_seeded_and_valid():
    a, b = random_antistable_system(3, 42), random_antistable_system(3, 42)
    assert a.allclose(b, atol=0)
    for seed in range(20):
        spec = random_antistable_system(2 + seed % 7, seed)
        assert validate_spec(spec).ok
        assert eigenvalues(spec.A).real.min() >= 0.1
        assert spec.m == 1 and spec.M == 1.0


def test_random_system_rejects_bad_n():
    with pytest.raises(InvalidParameterError):
        random_antistable_system(9, 0)


def test_counterexample_system_scaled_bound():
    assert counterexample_system(2.0).M == 2.0
