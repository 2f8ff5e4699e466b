import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from conftest import random_stable, random_uncertain
from mrlft.discretization import (EpsCover, delta_eps_exact, eps_series_coefficients,
                                  error_bound, exact_eps_values, expm, full_zoh_discretize,
                                  is_affine, pade_coefficients, pade_discretize, phi1,
                                  reduce_eps_structure, tustin_discretize, zoh_exact)
from mrlft.errors import ModelError, NonAffineError
from mrlft.lft import BlockSpec, BlockStructure, StateSpace, UncertainStateSpace, eval_at


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, (4, 4), elements=st.floats(-30, 30)))
def test_expm_matches_scipy(A):
    E = expm(A)
    ref = scipy.linalg.expm(A)
    assert np.allclose(E, ref, rtol=1e-10, atol=1e-12 * max(1.0, np.abs(ref).max()))


def test_expm_edge_cases():
    assert expm(np.zeros((0, 0))).shape == (0, 0)
    assert np.allclose(expm(np.zeros((3, 3))), np.eye(3))
    with pytest.raises(ModelError):
        expm(np.ones((2, 3)))


def test_pade_coefficients():
    assert np.allclose(pade_coefficients(1), [1, 0.5])
    assert np.allclose(pade_coefficients(2), [1, 0.5, 1 / 12])


def test_series_leading_terms():
    assert np.isclose(eps_series_coefficients(1, 3)[2], -1 / 12)
    assert np.isclose(eps_series_coefficients(2, 5)[4], 1 / 720)
    assert not eps_series_coefficients(2, 5)[:4].any()


def test_phi1_scalar():
    x = 0.7
    assert np.isclose(phi1(np.array([[x]]))[0, 0], (np.exp(x) - 1) / x)


@pytest.mark.parametrize("order", [1, 2])
@pytest.mark.parametrize("scale", [0.1, 2.0, 8.0])
def test_delta_eps_exact_closes_the_identity(order, scale, rng):
    X = scale * rng.standard_normal((4, 4)) / 2
    eps = delta_eps_exact(X, 1.0, order)
    c = pade_coefficients(order)
    Dn = sum(((-1) ** j) * c[j] * np.linalg.matrix_power(X, j) for j in range(order + 1))
    # (I + eps) = D_N(X) phi1(X)
    assert np.allclose(np.eye(4) + eps, Dn @ phi1(X), rtol=1e-9, atol=1e-9)


def test_zoh_exact_scalar():
    s = StateSpace([[-2.0]], [[1.0]], [[1.0]], [[0.0]])
    d = zoh_exact(s, 0.5)
    assert np.isclose(d.A[0, 0], np.exp(-1.0))
    assert np.isclose(d.B[0, 0], (1 - np.exp(-1.0)) / 2)


@pytest.mark.parametrize("order", [1, 2])
def test_pade_lft_with_exact_residual_is_zoh(order, rng):
    sys = random_uncertain(rng, n=3, k=2, m=2, p=2)
    model, rep = pade_discretize(sys, 0.3, order, eps="full")
    assert model.meta["certified"]
    for _ in range(5):
        vals = dict(zip(("p0", "p1"), rng.uniform(-1, 1, 2)))
        full = dict(vals, **exact_eps_values(sys, rep, vals))
        got = eval_at(model, full)
        ref = zoh_exact(eval_at(sys, vals), 0.3)
        assert np.allclose(got.A, ref.A, atol=1e-11)
        assert np.allclose(got.B, ref.B, atol=1e-11)
        assert np.allclose(got.C, ref.C) and np.allclose(got.D, ref.D)


def test_pade_parameter_copies_and_eps_blocks(rng):
    sys = random_uncertain(rng, n=3, k=2)
    m1, _ = pade_discretize(sys, 0.1, 1, eps="none")
    m2, rep = pade_discretize(sys, 0.1, 2, eps="reduced")
    assert m1.nw == sys.nw and not m1.meta["certified"]
    par = [b for b in m2.delta if b.role == "parameter"]
    assert sum(b.rows for b in par) == 2 * sys.nw
    errs = [b for b in m2.delta if b.role == "error"]
    # a dense A has no structural zeros, so the reduced cover is one full block
    assert [b.name for b in errs] == ["eps"] and rep.eps.full


def test_error_bound_dominates_samples(rng):
    sys = random_uncertain(rng, n=3, k=2, scale=0.3)
    rep = error_bound(sys, 0.2, 1)
    assert rep.certified and rep.tail_bound >= 0
    for d in rng.uniform(-1, 1, (50, 2)):
        A = eval_at(sys, dict(zip(("p0", "p1"), d))).A
        assert np.linalg.norm(delta_eps_exact(A, 0.2, 1), 2) <= rep.bound


def test_vertex_approx_requires_affine():
    # A(d) = -1 / (1 + 0.5 d): rational, so the vertex method must refuse
    s = BlockStructure((BlockSpec("d", "real-scalar", 1),))
    sys = UncertainStateSpace([[-1.0]], [[-0.5, 1.0]], [[1.0], [1.0]],
                              [[-0.5, 0.0], [0.0, 0.0]], s)
    assert not is_affine(sys)
    with pytest.raises(NonAffineError):
        error_bound(sys, 0.1, 1, "vertex-approx")
    rep = error_bound(sys, 0.1, 1, "vertex-approx", assume_affine=True)
    assert not rep.certified and rep.notes


def test_vertex_approx_matches_leading_term(rng):
    sys = random_uncertain(rng, n=2, k=1)
    assert is_affine(sys)
    rep = error_bound(sys, 0.01, 2, "vertex-approx")
    ref = max(np.linalg.norm(np.linalg.matrix_power(eval_at(sys, {"p0": v}).A, 4), 2)
              for v in (-1.0, 1.0)) * 0.01 ** 4 / 720
    assert np.isclose(rep.bound, ref)


def test_grid_sampled_not_certified(rng):
    rep = error_bound(random_uncertain(rng), 0.1, 2, "grid-sampled", samples=16)
    assert not rep.certified


def test_reduce_eps_structure():
    a = np.array([[1.0, 0.0], [2.0, 0.0]])
    b = np.array([[-3.0, 0.0], [1.0, 0.0]])
    c = reduce_eps_structure([a, b])
    assert not c.full and c.entries == ((0, 0), (1, 0)) and c.scales == (3.0, 2.0)
    assert c.covers(a) and not c.covers(np.ones((2, 2)))
    full = reduce_eps_structure([np.ones((2, 2))])
    assert full.full
    assert reduce_eps_structure([np.zeros((2, 2))]).empty
    L, R = c.left_right()
    v = c.values(b)
    assert np.allclose(L @ np.diag([v[n] for n in c.names()]) @ R, b)


def test_eps_cover_full_values():
    c = EpsCover(2, True, 2.0)
    E = np.array([[1.0, 0.5], [0.0, 1.0]])
    assert np.allclose(c.values(E)["eps"], E / 2)


def test_tustin_and_full_zoh_flags(rng):
    sys = random_uncertain(rng)
    t = tustin_discretize(sys, 0.1)
    z = full_zoh_discretize(sys, 0.1)
    assert t.meta["certified"] is False and z.meta["certified"] is False
    assert t.delta == sys.delta and z.delta == sys.delta
    # at delta = 0 full ZOH is exact
    assert np.allclose(z.nominal().A, zoh_exact(sys.nominal(), 0.1).A)


@pytest.mark.parametrize("bad", [0.0, -1.0, np.inf])
def test_bad_period(bad, rng):
    with pytest.raises(ModelError):
        pade_discretize(random_uncertain(rng), bad, 1)


def test_bad_order(rng):
    with pytest.raises(ModelError):
        pade_discretize(random_uncertain(rng), 0.1, 0)
    with pytest.raises(ModelError):
        pade_discretize(random_uncertain(rng), 0.1, 1, eps="diag")
