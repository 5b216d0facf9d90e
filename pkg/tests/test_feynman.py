import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qarb.errors import DegenerateMetric, SingularDiffusion, ZeroDenominator
from qarb.feynman import (
    GridField, PathIntegralConfig, PathModel, evolve_via_path_integral,
    fourier_multiplier_reference, gat_potentials, guerra_morato_lagrangian, madelung_residuals,
    path_action, sample_constrained_step, sample_directions, sample_path, wavefunction_from_RS,
)
from qarb.market import MarketPoint


def test_gat_potentials_examples():
    phi, a = gat_potentials(MarketPoint([1, 1], [1, 1], [1, 1]), np.eye(2))
    assert phi == pytest.approx(-1.5)
    np.testing.assert_allclose(a, [-0.5, -0.5])
    phi, _ = gat_potentials(MarketPoint([0.3, 2], [4, 0.1], 0), np.eye(2))
    assert phi == -0.5
    # sigma = diag(2, 1): (sigma sigma^T)^{-1} x / x.D
    _, a = gat_potentials(MarketPoint([1, 1], [1, 1], 0), np.diag([2.0, 1.0]))
    np.testing.assert_allclose(a, [-1 / 8, -1 / 2])
    with pytest.raises(SingularDiffusion):
        gat_potentials(MarketPoint([1, 1], [1, 1], 0), [[1, 1], [1, 1]])
    with pytest.raises(ZeroDenominator):
        gat_potentials(MarketPoint([1, -1], [1, 1], 0), np.eye(2))


def test_guerra_morato_examples():
    assert guerra_morato_lagrangian([0, 0], 0, 0, [0, 0], 0) == 0
    assert guerra_morato_lagrangian([1, 0], 0, 0, 0, 0) == 0.5
    base = guerra_morato_lagrangian([0.3, -1], 0.2, 0.7, [1, 2], -0.4)
    assert guerra_morato_lagrangian([0.3, -1], 0.2, 0.7 + 2.5, [1, 2], -0.4) == pytest.approx(base - 2.5)


def test_wavefunction_from_RS():
    x = np.linspace(-2, 2, 41)
    np.testing.assert_array_equal(wavefunction_from_RS(np.zeros(3), np.zeros(3)), np.ones(3))
    np.testing.assert_allclose(np.abs(wavefunction_from_RS(-x**2 / 2, 0 * x)) ** 2, np.exp(-x**2), rtol=1e-15)
    rng = np.random.default_rng(0)
    R, S = rng.normal(size=(2, 50))
    assert np.max(np.abs(np.abs(wavefunction_from_RS(R, S)) ** 2 - np.exp(2 * R)) / np.exp(2 * R)) < 1e-14


def _free_gaussian(n_t=41, n_x=401):
    """Free packet psi = (1 + i t)^(-1/2) exp(-x^2 / (2 (1 + i t))) solving i psi_t = -psi_xx/2."""
    t = np.linspace(0, 1, n_t)[:, None]
    x = np.linspace(-6, 6, n_x)[None, :]
    z = 1 + 1j * t
    logpsi = -0.5 * np.log(z) - x**2 / (2 * z)
    return logpsi.real, logpsi.imag, x[0, 1] - x[0, 0], t[1, 0] - t[0, 0]


def test_madelung_free_gaussian_residuals_vanish():
    R, S, dx, dt = _free_gaussian()
    hj, cont = madelung_residuals(R, S, [dx], dt)
    R2, S2, dx2, dt2 = _free_gaussian(81, 801)
    hj2, cont2 = madelung_residuals(R2, S2, [dx2], dt2)
    # second-order differencing: halving both steps shrinks residuals about 4x
    assert np.max(np.abs(hj)) < 2e-2 and np.max(np.abs(cont)) < 2e-2
    assert np.max(np.abs(hj)) / np.max(np.abs(hj2)) > 3
    assert np.max(np.abs(cont)) / np.max(np.abs(cont2)) > 3


def test_madelung_detects_wrong_potential():
    R, S, dx, dt = _free_gaussian()
    hj, _ = madelung_residuals(R, S, [dx], dt, Phi=0.3)
    assert np.allclose(hj, 0.3, atol=2e-2)


MODEL = PathModel(sigma_x=np.eye(2), sigma_d=0.5 * np.eye(2), sigma_r=np.diag([0.2, 0.3]))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.1, 3), st.floats(0.1, 3))
def test_step_residuals(seed, d1, d2):
    rng = np.random.default_rng(seed)
    ds = 0.01
    dx, dd, dr = sample_constrained_step(MarketPoint([1, 1], [d1, d2], 0), MODEL, ds, rng)
    v = np.concatenate([dx, dd, dr]) / ds
    G = np.diag([1, 1, 0.25, 0.25, 0.04, 0.09])
    assert abs(v @ G @ v - 1) <= 1e-10
    assert abs(dx @ np.array([d1, d2])) / ds <= 1e-10


def test_path_residuals_along_path():
    p = sample_path(MarketPoint([1.0, 0.5], [1.0, 2.0], [0.0, 0.0]), MODEL, 0.02, 100, np.random.default_rng(1))
    speed, sf = p.residuals(MODEL)
    assert speed.max() <= 1e-10 and sf.max() <= 1e-10


def test_n1_nominal_direction_frozen():
    m = PathModel(sigma_x=np.eye(1), sigma_d=np.eye(1))
    vx, vd, vr = sample_directions(np.array([[2.0]] * 10), m, np.random.default_rng(0))
    np.testing.assert_allclose(vx, 0, atol=1e-15)
    np.testing.assert_allclose(np.abs(vd), 1)
    with pytest.raises(DegenerateMetric):
        sample_directions(np.array([[2.0]]), PathModel(sigma_x=np.eye(1)), np.random.default_rng(0))


def test_direction_mean_zero():
    m = 100000
    d = np.tile([1.0, 2.0], (m, 1))
    vx, vd, vr = sample_directions(d, MODEL, np.random.default_rng(5))
    v = np.concatenate([vx, vd, vr], axis=1)
    se = v.std(0) / np.sqrt(m)
    assert np.all(np.abs(v.mean(0)) < 3 * se + 1e-15)


def test_path_action_examples():
    s = np.linspace(0, 1, 2001)
    ds = s[1] - s[0]
    x = np.tile([1.0, 0.0], (s.size, 1))
    d = np.column_stack([1 + s, np.ones_like(s)])
    a = path_action(x, d, 0.0, ds)
    assert a == pytest.approx(np.log(2), abs=ds)
    # first-order refinement of the left sum
    s2 = np.linspace(0, 1, 4001)
    d2 = np.column_stack([1 + s2, np.ones_like(s2)])
    a2 = path_action(np.tile([1.0, 0.0], (s2.size, 1)), d2, 0.0, s2[1] - s2[0])
    assert (a - np.log(2)) / (a2 - np.log(2)) == pytest.approx(2, rel=1e-2)
    assert path_action(x, np.ones_like(d), 0.0, ds) == 0
    # additivity over concatenation
    k = 700
    whole = path_action(x, d, 0.1, ds)
    parts = path_action(x[:k + 1], d[:k + 1], 0.1, ds) + path_action(x[k:], d[k:], 0.1, ds)
    assert whole == pytest.approx(parts, rel=1e-14)
    with pytest.raises(ZeroDenominator):
        path_action(np.zeros((3, 2)), np.ones((3, 2)), 0.0, 0.1)


def _check_field():
    e = np.linspace(0, 1, 17)
    c = 0.5 * (e[1:] + e[:-1])
    X, Y = np.meshgrid(c, c, indexing="ij")
    amp = np.exp(-((X - 0.5) ** 2 + (Y - 0.5) ** 2) / 0.05) * np.exp(3j * X)
    f = GridField((e, e, np.array([1.0]), np.array([2.0])), amp)
    return GridField(f.edges, f.values / f.l2_norm())


def test_gridfield_fourier_zero_mode_is_integral():
    f = _check_field()
    F = f.fourier([[0, 0, 0, 0]], (0, 1, 2, 3))
    assert F[0] == pytest.approx(np.sum(f.values * f.cell_volumes()) * np.exp(0), rel=1e-14)


def test_zero_action_phase_is_one():
    f = _check_field()
    cfg = PathIntegralConfig(2000, 10, 0.5, seed=3, terminal_edges=(np.linspace(-1, 2, 7), np.linspace(-1, 2, 7), None, None))
    tf = evolve_via_path_integral(f, cfg, PathModel(sigma_x=np.eye(2)))
    assert np.all(tf.action == 0)
    ok = tf.counts > 0
    assert np.all(tf.phase_mean[ok] == 1)
    assert np.all(np.abs(tf.samples) <= f.l1_mass() * (1 + 1e-12))


def test_estimator_deterministic_across_threads():
    f = _check_field()
    m = PathModel(sigma_x=np.eye(2), r0=(0.7, 0.7))
    a = evolve_via_path_integral(f, PathIntegralConfig(9000, 5, 0.5, seed=4, threads=1), m)
    b = evolve_via_path_integral(f, PathIntegralConfig(9000, 5, 0.5, seed=4, threads=3), m)
    np.testing.assert_array_equal(a.samples, b.samples)
    np.testing.assert_array_equal(a.endpoints, b.endpoints)


def test_fourier_modes_match_reference_small():
    f = _check_field()
    m = PathModel(sigma_x=np.eye(2), r0=(0.7, 0.7))
    tf = evolve_via_path_integral(f, PathIntegralConfig(20000, 50, 0.5, seed=7), m)
    ks = np.pi * np.array([[1, 1], [3, 1], [1, 5]])
    est = tf.fourier_modes(ks, (0, 1))
    ref = fourier_multiplier_reference(f, ks, 0.5, 50, m)
    assert np.all(np.abs(est.value - ref) < 4 * est.stderr)
