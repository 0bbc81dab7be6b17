import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from brachistochrone.chain import ChainSpec, ControlState, WaveState
from brachistochrone.dynamics import (
    conservation_report, from_real_gauge, integrate, layout, qbe_rhs, schrodinger_rhs,
    state_rhs, state_vjp, to_real_gauge,
)
from brachistochrone.errors import GaugeError, ShapeError

S3 = ChainSpec(3)
LAM3 = -0.816497


def random_control(spec, rng, scale=1.0):
    return ControlState(scale * rng.normal(size=spec.n_couplings),
                        scale * rng.normal(size=spec.n_multipliers), spec)


def test_rhs_vanishes_without_multipliers():
    spec = ChainSpec(6)
    c = ControlState(np.arange(1.0, 6.0), np.zeros(spec.n_multipliers), spec)
    dJ, dL = qbe_rhs(c)
    assert not dJ.any() and not dL.any()


def test_rhs_three_sites_by_hand():
    dJ, dL = qbe_rhs(ControlState([1.0, 0.0], [LAM3], S3))
    assert dJ == pytest.approx([0.0, -LAM3 / np.sqrt(2)], abs=1e-15)
    assert dJ[1] == pytest.approx(0.577350, abs=1e-6)
    assert dL == pytest.approx([0.0], abs=1e-15)


@given(st.integers(2, 14), st.integers(0, 2**31))
@settings(max_examples=50, deadline=None)
def test_rhs_preserves_coupling_norm_pointwise(N, seed):
    c = random_control(ChainSpec(N), np.random.default_rng(seed))
    dJ, dL = qbe_rhs(c)
    assert abs(c.couplings @ dJ) <= 1e-12 * (1 + np.abs(c.couplings) @ np.abs(dJ))
    assert abs(c.multipliers @ dL) <= 1e-12 * (1 + np.abs(c.multipliers) @ np.abs(dL))


def test_rhs_shape_error():
    c = ControlState.zeros(ChainSpec(4))
    with pytest.raises(ShapeError):
        qbe_rhs(c, ChainSpec(5))


def test_schrodinger_examples():
    spec2 = ChainSpec(2)
    d = schrodinger_rhs(WaveState([1, 0]), [1.0], spec2)
    assert np.array_equal(d, [0, -1j])
    d = schrodinger_rhs(WaveState([0, 1, 0]), [1.0, 0.0], S3)
    assert np.array_equal(d, [-1j, 0, 0])
    with pytest.raises(ShapeError):
        schrodinger_rhs(WaveState([1, 0]), [1.0, 2.0], spec2)


@given(st.integers(2, 12), st.integers(0, 2**31))
@settings(max_examples=30, deadline=None)
def test_real_gauge_generator_is_antisymmetric(N, seed):
    rng = np.random.default_rng(seed)
    phi = rng.normal(size=N)
    d = schrodinger_rhs(phi, rng.normal(size=N - 1), ChainSpec(N), gauge=True)
    assert abs(phi @ d) < 1e-12 * (1 + np.abs(phi) @ np.abs(d))


def test_gauge_maps():
    assert np.array_equal(to_real_gauge(np.array([1, 0, 0, 0], dtype=complex)), [1, 0, 0, 0])
    assert np.array_equal(from_real_gauge([0, 0, 0, 1]), [0, 0, 0, -1j])
    rng = np.random.default_rng(3)
    phi = rng.normal(size=9)
    phi /= np.linalg.norm(phi)
    back = to_real_gauge(from_real_gauge(phi))
    assert np.max(np.abs(back - phi)) <= 1e-14
    with pytest.raises(GaugeError):
        to_real_gauge(np.array([1, 1, 0], dtype=complex))


def test_vjp_matches_finite_differences():
    N = 6
    lay = layout(N)
    rng = np.random.default_rng(7)
    y = rng.normal(size=lay.size)
    cot = rng.normal(size=lay.size)
    f = state_rhs(N)
    h = 1e-6
    jac = np.empty((lay.size, lay.size))
    for i in range(lay.size):
        e = np.zeros(lay.size)
        e[i] = h
        jac[:, i] = (f(0.0, y + e) - f(0.0, y - e)) / (2 * h)
    assert np.max(np.abs(state_vjp(y, cot, N) - cot @ jac)) < 1e-8


def test_two_level_rotation():
    traj = integrate(ControlState([np.pi / 2], [], ChainSpec(2)), WaveState.site(ChainSpec(2)),
                     1.0, tol=1e-12)
    assert traj.gauge_amplitudes[-1] == pytest.approx([0.0, -1.0], abs=1e-10)
    assert traj.probabilities[-1, 1] == pytest.approx(1.0, abs=1e-12)


def test_three_site_transfer_from_tabulated_start():
    traj = integrate(ControlState([1.0, 0.0], [LAM3], S3), WaveState.site(S3), 2.7207,
                     tol=1e-10)
    assert traj.probabilities[-1, -1] >= 0.999999
    assert traj.times[0] == 0 and np.all(np.diff(traj.times) > 0)


def test_integrate_validates_arguments():
    c = ControlState.zeros(S3)
    w = WaveState.site(S3)
    with pytest.raises(ValueError):
        integrate(c, w, 0.0)
    with pytest.raises(ValueError):
        integrate(c, w, 1.0, tol=1e-5)
    with pytest.raises(ValueError):
        integrate(c, w, 1.0, tol=1e-15)
    with pytest.raises(ShapeError):
        integrate(c, np.ones(4), 1.0)


@given(st.integers(3, 12), st.integers(0, 2**31))
@settings(max_examples=12, deadline=None)
def test_random_flows_conserve_invariants(N, seed):
    tol = 1e-10
    rng = np.random.default_rng(seed)
    spec = ChainSpec(N)
    c = random_control(spec, rng, scale=1 / np.sqrt(N))
    traj = integrate(c, WaveState.site(spec), 2.0, tol=tol, samples=21)
    rep = conservation_report(traj)
    assert rep.coupling_norm_drift <= 100 * tol
    assert rep.multiplier_norm_drift <= 100 * tol
    assert rep.wave_norm_drift <= 100 * tol
    assert rep.spectrum_drift <= 1e-8


def test_zero_controls_have_no_drift():
    spec = ChainSpec(5)
    traj = integrate(ControlState.zeros(spec), WaveState.site(spec), 1.0)
    rep = conservation_report(traj)
    assert rep.max_drift() == 0.0
    assert np.max(np.abs(traj.probabilities[:, 0] - 1.0)) <= 1e-15


def test_real_and_complex_propagation_agree():
    tol = 1e-11
    spec = ChainSpec(7)
    c = random_control(spec, np.random.default_rng(11), scale=0.5)
    real = integrate(c, WaveState.site(spec), 3.0, tol=tol, gauge="real", samples=11)
    cplx = integrate(c, WaveState.site(spec), 3.0, tol=tol, gauge="complex", samples=11)
    assert cplx.complex_wave and not real.complex_wave
    assert np.max(np.abs(np.abs(real.gauge_amplitudes) - np.abs(cplx.amplitudes))) <= 100 * tol


def test_complex_mode_used_for_non_gauge_state():
    spec = ChainSpec(3)
    psi = np.array([1, 1, 0], dtype=complex) / np.sqrt(2)
    traj = integrate(ControlState([1.0, 0.5], [0.2], spec), psi, 1.0)
    assert traj.complex_wave
    assert traj.gauge_amplitudes is None
    with pytest.raises(GaugeError):
        integrate(ControlState([1.0, 0.5], [0.2], spec), psi, 1.0, gauge="real")
