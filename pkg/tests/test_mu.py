import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_stable, scalar_structure
from mrlft.errors import NumericalError
from mrlft.lft import BlockSpec, BlockStructure, StateSpace
from mrlft.mu import MuStructure, bilinear_to_continuous, hinf_norm, mu_lower_bound, mu_upper_bound
from mrlft.mu.hinf import continuous_frequency, discrete_angle


def _cmat(rng, n):
    return rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))


def test_structure_merges_groups():
    s = BlockStructure((BlockSpec("a", "real-scalar", 1), BlockSpec("b", "real-scalar", 2),
                        BlockSpec("a2", "real-scalar", 1, group="a"),
                        BlockSpec("E", "complex-full", 2, 1)))
    m = MuStructure.compile(s)
    assert [b.name for b in m.blocks] == ["a", "b", "E"]
    assert list(m.blocks[0].w_idx) == [0, 3]
    D = m.delta({"a": 0.5}, {"E": np.ones((2, 1))})
    assert D[0, 0] == 0.5 and D[3, 3] == 0.5 and D[4, 4] == 1.0
    assert m.delta_norm(D) == pytest.approx(np.sqrt(2))


def test_complex_full_block_is_max_singular_value(rng):
    M = _cmat(rng, 3)
    s = BlockStructure((BlockSpec("E", "complex-full", 3),))
    up = mu_upper_bound(M, s).value
    lo = mu_lower_bound(M, s).value
    sv = np.linalg.norm(M, 2)
    assert up == pytest.approx(sv, rel=1e-6) and lo == pytest.approx(sv, rel=1e-6)


def test_repeated_real_scalar_is_real_spectral_radius():
    M = np.diag([0.3, -1.2, 0.7]).astype(complex)
    M[0, 1] = 5.0
    s = scalar_structure(3)
    assert mu_upper_bound(M, s).value == pytest.approx(1.2, rel=1e-5)
    assert mu_lower_bound(M, s).value == pytest.approx(1.2, rel=1e-8)


def test_real_mu_zero_without_real_eigenvalues():
    M = np.array([[0.0, 1.0], [-1.0, 0.0]], dtype=complex)  # eigenvalues +-j
    s = scalar_structure(2)
    assert mu_upper_bound(M, s).value < 1e-3
    assert mu_lower_bound(M, s).value == 0.0


def test_diagonal_real_scalars(rng):
    d = rng.uniform(-2, 2, 4)
    M = np.diag(d).astype(complex)
    s = scalar_structure(1, 1, 1, 1)
    assert mu_upper_bound(M, s).value == pytest.approx(np.abs(d).max(), rel=1e-5)
    assert mu_lower_bound(M, s).value == pytest.approx(np.abs(d).max(), rel=1e-8)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 100_000))
def test_bound_sandwich_and_certificate(seed):
    rng = np.random.default_rng(seed)
    s = BlockStructure((BlockSpec("a", "real-scalar", 2), BlockSpec("b", "real-scalar", 1),
                        BlockSpec("E", "complex-full", 1)))
    M = _cmat(rng, 4)
    up = mu_upper_bound(M, s)
    lo = mu_lower_bound(M, s, seed=seed)
    assert lo.value <= up.value * (1 + 1e-6)
    assert up.value <= np.linalg.norm(M, 2) * (1 + 1e-6)
    if lo.value > 0:
        struct = MuStructure.compile(s)
        assert struct.delta_norm(lo.delta) == pytest.approx(1 / lo.value)
        smin = np.linalg.svd(np.eye(4) - M @ lo.delta, compute_uv=False)[-1]
        assert smin <= 1e-6


def test_upper_bound_scaling_invariance(rng):
    # mu is invariant under diagonal similarity that commutes with the structure
    M = _cmat(rng, 3)
    s = scalar_structure(1, 1, 1)
    D = np.diag([1.0, 10.0, 0.1])
    a = mu_upper_bound(M, s).value
    b = mu_upper_bound(D @ M @ np.linalg.inv(D), s).value
    assert a == pytest.approx(b, rel=1e-4)


def test_hinf_first_order():
    s = StateSpace([[-2.0]], [[1.0]], [[1.0]], [[0.0]])
    h = hinf_norm(s)
    assert h.value == pytest.approx(0.5, rel=1e-9) and h.frequency == pytest.approx(0.0)


def test_hinf_resonance():
    wn, z = 3.0, 0.05
    s = StateSpace([[0, 1], [-wn ** 2, -2 * z * wn]], [[0], [wn ** 2]], [[1, 0]], [[0]])
    h = hinf_norm(s)
    peak = 1 / (2 * z * np.sqrt(1 - z ** 2))
    assert h.value == pytest.approx(peak, rel=1e-8)
    assert h.frequency == pytest.approx(wn * np.sqrt(1 - 2 * z ** 2), rel=1e-5)


def test_hinf_unstable_and_static():
    assert hinf_norm(StateSpace([[1.0]], [[1.0]], [[1.0]], [[0.0]])).value == np.inf
    assert hinf_norm(StateSpace(np.zeros((0, 0)), np.zeros((0, 2)), np.zeros((1, 0)),
                                [[3.0, 4.0]])).value == pytest.approx(5.0)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 100_000))
def test_hinf_dominates_grid(seed):
    rng = np.random.default_rng(seed)
    s = random_stable(rng, 4, 2, 2, dt=0.1)
    h = hinf_norm(s)
    w = np.linspace(0, np.pi / 0.1, 400)
    grid = max(np.linalg.norm(s.evaluate(np.exp(1j * x * 0.1)), 2) for x in w)
    assert grid <= h.value * (1 + 1e-8)
    assert np.linalg.norm(s.evaluate(np.exp(1j * h.frequency * 0.1)), 2) == pytest.approx(h.value)


@pytest.mark.parametrize("k", [0.5, 1.0, 2.0])
def test_bilinear_maps_frequencies(k, rng):
    s = random_stable(rng, 3, dt=0.2)
    c = bilinear_to_continuous(s, k)
    th = 0.9
    assert np.allclose(s.evaluate(np.exp(1j * th)), c.evaluate(1j * continuous_frequency(th, k)))
    assert discrete_angle(continuous_frequency(th, k), k) == pytest.approx(th)


def test_bilinear_errors():
    with pytest.raises(NumericalError):
        bilinear_to_continuous(StateSpace([[-1.0]], [[1.0]], [[1.0]], [[0.0]], 0.1))
    with pytest.raises(NumericalError):
        bilinear_to_continuous(StateSpace([[0.5]], [[1.0]], [[1.0]], [[0.0]], 0.1), k=0)
