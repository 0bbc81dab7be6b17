import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from brachistochrone.chain import (
    ChainSpec, ControlState, WaveState, build_generator, build_hamiltonian, coupling_norm, ipow,
    multiplier_index, multiplier_pair,
)
from brachistochrone.errors import IndexDomainError, ShapeError


def random_control(spec, seed=0):
    rng = np.random.default_rng(seed)
    return ControlState(rng.normal(size=spec.n_couplings), rng.normal(size=spec.n_multipliers),
                        spec)


@given(st.integers(2, 40))
@settings(max_examples=39, deadline=None)
def test_multiplier_index_is_a_bijection(N):
    spec = ChainSpec(N)
    seen = []
    for k in range(1, N):
        for n in range(2, N - k + 1):
            i = multiplier_index(k, n, spec)
            assert multiplier_pair(i, spec) == (k, n)
            seen.append(i)
    assert seen == list(range(spec.n_multipliers))


def test_multiplier_index_examples():
    spec = ChainSpec(5)
    assert multiplier_index(1, 2, spec) == 0
    assert multiplier_index(1, 4, spec) == 2
    assert multiplier_index(2, 2, spec) == 3
    assert multiplier_index(3, 2, spec) == 5
    assert spec.n_multipliers == 6


@pytest.mark.parametrize("k,n", [(0, 2), (1, 1), (4, 2), (1, 5), (3, 3)])
def test_multiplier_index_out_of_family(k, n):
    with pytest.raises(IndexDomainError):
        multiplier_index(k, n, ChainSpec(5))


def test_multiplier_pair_rejects_bad_ordinal():
    with pytest.raises(IndexDomainError):
        multiplier_pair(3, ChainSpec(4))
    with pytest.raises(IndexDomainError):
        multiplier_pair(0, ChainSpec(2))


def test_chain_spec_validation():
    with pytest.raises(ValueError):
        ChainSpec(1)
    with pytest.raises(ValueError):
        ChainSpec(4, j0=0.0)
    with pytest.raises(ValueError):
        ChainSpec(4, j0=float("inf"))
    assert ChainSpec(4).n_couplings == 3


def test_ipow_is_exact():
    assert list(ipow(np.arange(-4, 5))) == [1, 1j, -1, -1j, 1, 1j, -1, -1j, 1]


def test_control_state_is_immutable_and_checked():
    spec = ChainSpec(4)
    c = ControlState.zeros(spec)
    with pytest.raises(ValueError):
        c.couplings[0] = 1.0
    with pytest.raises(ShapeError):
        ControlState(np.zeros(2), np.zeros(3), spec)
    with pytest.raises(ValueError):
        ControlState([np.nan, 0, 0], np.zeros(3), spec)


def test_control_multiplier_lookup():
    spec = ChainSpec(4)
    c = ControlState([1, 0, 0], [0.1, 0.2, 0.3], spec)
    assert c.multiplier(1, 3) == 0.2
    assert c.multiplier(2, 2) == 0.3


@given(st.integers(2, 12), st.integers(0, 2**31))
@settings(max_examples=40, deadline=None)
def test_generator_is_hermitian_and_traceless(N, seed):
    spec = ChainSpec(N)
    c = random_control(spec, seed)
    G = build_generator(c)
    assert np.allclose(G, G.conj().T, atol=0)
    assert abs(np.trace(G)) == 0
    assert np.array_equal(G.real.diagonal(1), c.couplings)


def test_generator_multiplier_phase():
    spec = ChainSpec(4)
    c = ControlState(np.zeros(3), [1.0, 2.0, 3.0], spec)
    G = build_generator(c)
    s = np.sqrt(2)
    assert G[2, 0] == pytest.approx(1j / s)       # lambda_{1,3}, n=2
    assert G[3, 0] == pytest.approx(-2 / s)       # lambda_{1,4}, n=3
    assert G[3, 1] == pytest.approx(3j / s)       # lambda_{2,4}
    assert G[0, 2] == pytest.approx(-1j / s)


def test_hamiltonian_shape_error():
    with pytest.raises(ShapeError):
        build_hamiltonian([1.0, 2.0], ChainSpec(4))
    H = build_hamiltonian([1.0, 2.0], ChainSpec(3))
    assert np.array_equal(H, [[0, 1, 0], [1, 0, 2], [0, 2, 0]])


def test_coupling_norm():
    assert coupling_norm([3.0, 4.0]) == 25.0


def test_wave_state_site():
    spec = ChainSpec(4)
    w = WaveState.site(spec, 4)
    assert np.array_equal(w.amplitudes, [0, 0, 0, -1j])
    assert np.array_equal(w.gauge_amplitudes, [0, 0, 0, 1])
    assert w.norm2 == 1.0
    assert w.position() == 4.0
