import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qarb.errors import (DimensionMismatch, DomainError, MissingEigenvalue, NonOrthogonalTruncation,
                         OutOfDomainWarning, TruncationTooSmall)
from qarb.market import MarketDomain, MarketPoint
from qarb.quadrature import box_rule
from qarb.evolution import (
    ObservableMatrix, RMarginal, SpectralState, Truncation, diagonal_mean_dynamics, ehrenfest_residual,
    eigenvalue_tensor, evolve, expectation, from_wavepacket, function_of, hamiltonian_observable,
    heisenberg_check, identity_observable, moment_series, momentum_operator_matrix, packet_coefficients_1d,
    phases, position_matrix_1d, position_operator_matrix, rate_observable, sample_density,
    serial_cross_moment, uniform_law_cdf, variance,
)
from qarb.spectral import lambda_IJ_quadrature

UNIT = MarketDomain((1, 1), (1, 1))
SMALL = Truncation(((1, 3), (1, 3, 5)), ((-2, 0, 2), (0, 2)))


def test_truncation_parity_and_shape():
    assert SMALL.shape == (2, 3, 3, 2)
    assert SMALL.size == 36
    assert SMALL.labels()[0] == ((1, 1), (-2, 0))
    with pytest.raises(NonOrthogonalTruncation):
        Truncation(((1, 2),), ((0,),))
    with pytest.raises(DomainError):
        Truncation(((0, 2),), ((0,),))
    t = Truncation.default(UNIT)
    assert t.shape == (4, 4, 9, 9) and t.size <= 5000


def test_eigenvalue_tensor_matches_quadrature():
    lam = eigenvalue_tensor(UNIT, SMALL)
    for pos, (I, J) in zip(np.ndindex(*SMALL.shape), SMALL.labels()):
        if 0 in J:
            assert lam[pos] == 0.0
    pos = SMALL.position((3, 5), (2, 2))
    assert lam[pos] == pytest.approx(lambda_IJ_quadrature((3, 5), (2, 2), UNIT).lambda_IJ, rel=1e-10)
    assert np.all(eigenvalue_tensor(MarketDomain((1,), (1,)), Truncation(((1, 3),), ((0, 2),))) == 0)


def test_missing_eigenvalue():
    c = np.ones(SMALL.shape)
    with pytest.raises(MissingEigenvalue):
        SpectralState.from_coeffs(UNIT, SMALL, c, eigenvalues={})
    lam = eigenvalue_tensor(UNIT, SMALL)
    lam[0, 0, 0, 0] = np.nan
    with pytest.raises(MissingEigenvalue):
        SpectralState.from_coeffs(UNIT, SMALL, c, eigenvalues=lam)
    table = {lab: 0.0 for lab in SMALL.labels()}
    assert SpectralState.from_coeffs(UNIT, SMALL, c, eigenvalues=table).norm() == pytest.approx(1)


def test_evolve_identity_and_phase():
    s = SpectralState.random(UNIT, SMALL, np.random.default_rng(0))
    assert evolve(s, 0.0) is s
    t = 0.37
    np.testing.assert_allclose(evolve(s, t).coeffs, s.coeffs * np.exp(1j * s.eigenvalues * t), atol=1e-12)
    assert evolve(s, t).r_marginal == s.r_marginal


def test_phases_large_argument():
    lam = np.array([3.8e4, -1e6])
    t = 1e3
    ref = np.exp(1j * np.mod(np.longdouble(lam) * np.longdouble(t), 2 * np.pi).astype(float))
    np.testing.assert_allclose(phases(lam, t), ref, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6), st.floats(-50, 50), st.floats(-50, 50))
def test_unitarity_and_group_law(seed, s, t):
    st0 = SpectralState.random(UNIT, SMALL, np.random.default_rng(seed))
    a = evolve(evolve(st0, s), t).coeffs
    b = evolve(st0, s + t).coeffs
    assert abs(evolve(st0, t).norm() - 1) < 1e-12
    assert np.max(np.abs(a - b)) < 1e-11


def test_position_matrix_against_quadrature():
    L = 1.7
    idx = [-4, -2, 0, 2, 6]
    X = position_matrix_1d(idx, L)
    y, w = box_rule([0.0], [L], 40)
    y = y[:, 0]
    for a, i in enumerate(idx):
        for b, j in enumerate(idx):
            ref = np.sum(w * y * np.exp(1j * np.pi * (i - j) * y / L)) / L
            assert X[a, b] == pytest.approx(ref, abs=1e-13)
    np.testing.assert_allclose(X, X.conj().T, atol=0)
    np.testing.assert_allclose(np.diag(X).real, L / 2)


def test_observable_hermitian_flag():
    with pytest.raises(DomainError):
        ObservableMatrix("dense", np.array([[0, 1], [0, 0]]), hermitian=True)
    with pytest.raises(DimensionMismatch):
        expectation(SpectralState.random(UNIT, SMALL, np.random.default_rng(1)),
                    ObservableMatrix("dense", np.eye(3), hermitian=True))


def test_identity_and_plane_wave_expectations():
    s = SpectralState.random(UNIT, SMALL, np.random.default_rng(2))
    assert expectation(s, identity_observable()) == pytest.approx(1)
    assert variance(s, identity_observable()) == 0
    b = SpectralState.basis(UNIT, SMALL, (3, 1), (0, 2))
    assert expectation(b, position_operator_matrix("x", 0, UNIT, SMALL)) == pytest.approx(0.5)
    assert expectation(b, position_operator_matrix("d", 1, UNIT, SMALL)) == pytest.approx(0.5)


def test_two_mode_quadratic_form():
    # (phi_1 + phi_3)/sqrt2 on one x axis: <x> = L/2 + Re X_13 = 1/2 + 1/(2 pi^2) * 2 ... by hand:
    # X_{1,3}: m = -2, k = -2 pi, s = 1 -> 1/(i k) = i/(2 pi); Re part 0 -> <x> = 1/2
    # X on (1, 1-step-odd) m = -1 would differ; use the even m case and compare Im.
    t = Truncation(((1, 3), (1,)), ((0,), (0,)))
    c = np.zeros(t.shape, complex)
    c[0, 0, 0, 0] = 1
    c[1, 0, 0, 0] = 1j
    s = SpectralState.from_coeffs(UNIT, t, c)
    X = position_operator_matrix("x", 0, UNIT, t)
    # <x> = 1/2 + 2 Re(conj(c1) X_13 c3)/2 = 1/2 + Re(1 * (i/(2pi)) * i) = 1/2 - 1/(2 pi)
    assert expectation(s, X) == pytest.approx(0.5 - 1 / (2 * np.pi))


def test_function_of_and_rate_observable():
    s = SpectralState.random(UNIT, SMALL, np.random.default_rng(3))
    X = position_operator_matrix("x", 1, UNIT, SMALL)
    X2 = function_of(X, lambda w: w**2)
    assert expectation(s, X2) == pytest.approx(expectation(s, X.power(2)), rel=1e-12)
    rm = RMarginal((("uniform", -1, 1), ("normal", 0.3, 2)))
    s = SpectralState.random(UNIT, SMALL, np.random.default_rng(3), r_marginal=rm)
    assert expectation(s, rate_observable(rm, 0)) == 0
    assert expectation(s, rate_observable(rm, 1)) == pytest.approx(0.3)
    assert ehrenfest_residual(s, rate_observable(rm, 1), 0.2, 1e-3) < 1e-12
    np.testing.assert_allclose(rm.variance(), [1 / 3, 4])
    draws = rm.sample(np.random.default_rng(0), 200000)
    np.testing.assert_allclose(draws.var(0), rm.variance(), rtol=0.02)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10**6))
def test_diagonal_mean_dynamics_is_half_bounds(seed):
    d = MarketDomain((1.3, 0.4), (2.0, 0.7))
    s = SpectralState.random(d, SMALL, np.random.default_rng(seed))
    ex, ed, er = diagonal_mean_dynamics(evolve(s, 0.3))
    np.testing.assert_allclose(ex, d.A / 2, rtol=0, atol=1e-14)
    np.testing.assert_allclose(ed, d.B / 2, rtol=0, atol=1e-14)
    np.testing.assert_array_equal(er, [0, 0])


def test_uniform_law_cdf():
    rm = RMarginal((("uniform", -1, 1), ("point", 0.0)))
    assert uniform_law_cdf(MarketPoint([1, 1], [1, 1], np.inf), UNIT, rm) == 1
    assert uniform_law_cdf(MarketPoint([0.5, 0.5], [0.5, 0.5], np.inf), UNIT, rm) == 1 / 16
    assert uniform_law_cdf(MarketPoint([0.25, 0.5], [0.5, 0.5], np.inf), UNIT, rm) == 1 / 32
    assert uniform_law_cdf(MarketPoint([1, 1], [1, 1], 0.0), UNIT, rm) == 0.5
    with pytest.warns(OutOfDomainWarning):
        assert uniform_law_cdf(MarketPoint([2, 1], [1, 1], np.inf), UNIT, rm) == 1


def test_serial_cross_moment_examples():
    s = SpectralState.random(UNIT, SMALL, np.random.default_rng(4))
    one = identity_observable()
    assert serial_cross_moment(s, one, one, 0, 0.4, 0.4) == pytest.approx(1)
    zero = ObservableMatrix("scalar", np.array(0.0), hermitian=True)
    assert serial_cross_moment(s, one, zero, 0, 0.1, 0.7) == 0
    with pytest.raises(DomainError):
        serial_cross_moment(s, one, one, 1.0, 0.5, 2.0)


def test_serial_cross_moment_eigenstate_factorizes():
    b = SpectralState.basis(UNIT, SMALL, (3, 5), (2, 2))
    f = position_operator_matrix("x", 0, UNIT, SMALL)
    g = position_operator_matrix("d", 1, UNIT, SMALL)
    v = serial_cross_moment(b, f, g, 0, 0.3, 0.9)
    assert abs(v - expectation(b, f) * expectation(b, g)) < 1e-12


def test_heisenberg_packet_and_edge_case():
    t = Truncation.around(UNIT, [31, 31], 12, 10)
    s = from_wavepacket(MarketPoint([0.5, 0.5], [0.5, 0.5], 0), 0.06, UNIT, t)
    for block in ("x", "d"):
        h = heisenberg_check(s, block, 0)
        assert h.satisfied and not h.edge_case
        assert 1.0 - 1e-6 <= h.ratio <= 1.5
        assert h.commutator_norm == pytest.approx(1, abs=1e-3)
    b = SpectralState.basis(UNIT, SMALL, (1, 1), (0, 0))
    h = heisenberg_check(b, "x", 0)
    assert h.edge_case and h.var_p == 0
    wide = Truncation.default(UNIT)
    b = SpectralState.basis(UNIT, wide, (3, 1), (0, 0))
    assert heisenberg_check(b, "x", 0).commutator_norm == pytest.approx(np.sqrt(3))
    with pytest.raises(TruncationTooSmall):
        heisenberg_check(b, "x", 0, strict=True)


def test_heisenberg_mixing_momenta_grows_lhs():
    t = Truncation(((1, 3, 5, 7, 9, 11), (1,)), ((0,), (0,)))
    c = np.zeros(t.shape, complex)
    c[0, 0, 0, 0] = c[1, 0, 0, 0] = 1
    a = heisenberg_check(SpectralState.from_coeffs(UNIT, t, c), "x", 0)
    c[1, 0, 0, 0] = 0
    c[5, 0, 0, 0] = 1
    b = heisenberg_check(SpectralState.from_coeffs(UNIT, t, c), "x", 0)
    assert b.var_p > a.var_p and b.lhs > a.lhs


def test_ehrenfest_second_order():
    s = SpectralState.random(UNIT, SMALL, np.random.default_rng(5))
    X = position_operator_matrix("x", 0, UNIT, SMALL)
    H = hamiltonian_observable(s)
    assert ehrenfest_residual(s, H, 0.1, 1e-3) < 1e-9 * np.max(np.abs(s.eigenvalues))
    # lam ~ 1e3 here, so pick h where truncation error dominates rounding
    scale = np.max(np.abs(s.eigenvalues))
    r1 = ehrenfest_residual(s, X, 0.1, 0.2 / scale)
    r2 = ehrenfest_residual(s, X, 0.1, 0.1 / scale)
    assert r1 / r2 == pytest.approx(4, rel=0.05)


def test_wavepacket_properties():
    t = Truncation.around(UNIT, [31, 31], 12, 10)
    s = from_wavepacket(MarketPoint([0.4, 0.55], [0.5, 0.45], 0), 0.06, UNIT, t)
    assert s.norm() == pytest.approx(1)
    assert expectation(s, position_operator_matrix("x", 0, UNIT, t)) == pytest.approx(0.4, abs=1e-3)
    assert expectation(s, position_operator_matrix("d", 1, UNIT, t)) == pytest.approx(0.45, abs=1e-3)
    caps = [packet_coefficients_1d(0.5, 0.06, 1.0, range(31 - 2 * h, 32 + 2 * h, 2), 31)[1] for h in (2, 4, 8, 12)]
    assert caps == sorted(caps)
    with pytest.raises(TruncationTooSmall):
        from_wavepacket(MarketPoint([0.5, 0.5], [0.5, 0.5], 0), 0.06, UNIT, SMALL)


def test_sample_density_plane_wave_uniform():
    b = SpectralState.basis(UNIT, SMALL, (3, 1), (2, 0))
    x, d, r = sample_density(b, 20000, np.random.default_rng(6))
    assert np.all((x >= 0) & (x <= 1)) and r.shape == (20000, 2)
    assert np.mean(x[:, 0]) == pytest.approx(0.5, abs=0.01)
    assert np.var(d[:, 1]) == pytest.approx(1 / 12, abs=0.003)


def test_moment_series_eigenstate_constant():
    b = SpectralState.basis(UNIT, SMALL, (1, 3), (2, 2))
    rows = moment_series(b, [0, 0.5, 1.0])
    for r in rows:
        np.testing.assert_allclose(r.e_x, rows[0].e_x, atol=1e-14)
        np.testing.assert_allclose(r.diag_d, [0.5, 0.5])


def test_momentum_matrix_diagonal():
    d = MarketDomain((1, 2), (0.5, 1))
    p = momentum_operator_matrix("d", 0, d, SMALL)
    np.testing.assert_allclose(np.diag(p.entries).real, np.pi * np.array([-2, 0, 2]) / 0.5)
    assert p.hermitian and p.axis == 2
    q = momentum_operator_matrix("x", 1, d, SMALL)
    b = SpectralState.basis(d, SMALL, (3, 5), (0, 0))
    assert expectation(b, q) == pytest.approx(np.pi * 5 / 2)
    assert variance(b, q) == 0
