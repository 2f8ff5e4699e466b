import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_stable, random_uncertain
from mrlft.errors import IllPosedLFTError, ModelError, AlgebraicLoopError
from mrlft.lft import (BlockKind, BlockSpec, BlockStructure, ParameterBox, StateSpace,
                       UncertainStateSpace, close_controller, eval_at, feedback, lower_lft,
                       realize_affine, upper_lft)


def test_block_structure_offsets_and_repeat():
    s = BlockStructure((BlockSpec("a", "real-scalar", 2), BlockSpec("E", "complex-full", 1, 3)))
    assert s.total_rows == 3 and s.total_cols == 5
    assert s.offsets() == [(0, 0), (2, 2)]
    r = s.repeat(3)
    assert len(r) == 6
    assert r.names[2] == "a#1" and r["a#1"].group == "a"
    D = r.matrix({"a": 0.5})
    assert np.count_nonzero(D) == 6


def test_block_validation():
    with pytest.raises(ModelError):
        BlockSpec("x", "real-scalar", 2, 3)
    with pytest.raises(ModelError):
        BlockSpec("x", "real-full", 0)
    with pytest.raises(ModelError):
        BlockStructure((BlockSpec("x", "real-scalar", 1), BlockSpec("x", "real-scalar", 1)))
    with pytest.raises(ModelError):
        BlockSpec("x", "real-scalar", 1).value_matrix(1j)


def test_upper_lft_matches_formula(rng):
    M = rng.standard_normal((5, 5))
    D = 0.3 * rng.standard_normal((2, 2))
    M11, M12, M21, M22 = M[:2, :2], M[:2, 2:], M[2:, :2], M[2:, 2:]
    ref = M22 + M21 @ D @ np.linalg.solve(np.eye(2) - M11 @ D, M12)
    assert np.allclose(upper_lft(M, D), ref)


def test_lower_lft_matches_formula(rng):
    M = rng.standard_normal((4, 5))
    K = 0.2 * rng.standard_normal((2, 1))
    M11, M12, M21, M22 = M[:3, :3], M[:3, 3:], M[3:, :3], M[3:, 3:]
    ref = M11 + M12 @ K @ np.linalg.solve(np.eye(1) - M22 @ K, M21)
    assert np.allclose(lower_lft(M, K), ref)


def test_ill_posed_names_blocks():
    M = np.array([[1.0, 1.0], [1.0, 0.0]])
    s = BlockStructure((BlockSpec("d", "real-scalar", 1),))
    with pytest.raises(IllPosedLFTError) as e:
        upper_lft(M, np.array([[1.0]]), s)
    assert "d" in e.value.blocks


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(-1, 1), st.floats(-1, 1))
def test_realize_affine_reproduces_parameters(seed, a, b):
    rng = np.random.default_rng(seed)
    n, m, p = 3, 2, 2
    nom = random_stable(rng, n, m, p)
    coeffs = [tuple(rng.standard_normal(s) for s in ((n, n), (n, m), (p, n), (p, m)))
              for _ in range(2)]
    box = ParameterBox(("x", "y"), (1.0, 2.0), (0.5, 0.25))
    sys = realize_affine(nom, coeffs, box)
    got = eval_at(sys, {"x": a, "y": b})
    S = np.block([[nom.A, nom.B], [nom.C, nom.D]])
    for h, d, c in zip(box.half_range, (a, b), coeffs):
        S = S + h * d * np.block([[c[0], c[1]], [c[2], c[3]]])
    assert np.allclose(np.block([[got.A, got.B], [got.C, got.D]]), S, atol=1e-10)


def test_realize_affine_drops_inert_parameter(rng, caplog):
    nom = random_stable(rng, 2)
    box = ParameterBox(("x", "y"), (0, 0), (1, 1))
    sys = realize_affine(nom, [(np.eye(2), None, None, None), (None, None, None, None)], box)
    assert sys.delta.names == ("x",)
    assert "no effect" in caplog.text


def test_close_blocks_and_recenter_agree_with_eval(rng):
    sys = random_uncertain(rng, 3, 3, m=2, p=2)
    vals = {"p0": 0.4, "p1": -0.7, "p2": 0.2}
    full = eval_at(sys, vals)
    part = eval_at(sys.close_blocks({"p0": 0.4}), {"p1": -0.7, "p2": 0.2})
    assert np.allclose(full.A, part.A) and np.allclose(full.D, part.D)
    # Delta = c + r Delta'
    rc = sys.recenter({"p1": -0.5}, {"p1": 0.25})
    moved = eval_at(rc, {"p0": 0.4, "p1": -0.8, "p2": 0.2})
    assert np.allclose(moved.A, full.A) and np.allclose(moved.C, full.C)


def test_scale_delta(rng):
    sys = random_uncertain(rng)
    sc = sys.scale_delta(0.5)
    assert np.allclose(eval_at(sc, {"p0": 1.0}).A, eval_at(sys, {"p0": 0.5}).A)


def test_frequency_matrix_matches_eval(rng):
    sys = random_uncertain(rng, m=2, p=2)
    s = 0.3 + 1.7j
    F = sys.frequency_matrix(s)
    D = sys.delta.matrix({"p0": 0.3, "p1": -0.2})
    G = upper_lft(F, D)
    assert np.allclose(G, eval_at(sys, {"p0": 0.3, "p1": -0.2}).evaluate(s))


def test_statespace_checks():
    with pytest.raises(ModelError):
        StateSpace(np.eye(2), np.ones((3, 1)), np.ones((1, 2)), [[0.0]])
    s = StateSpace([[-1.0]], [[1.0]], [[1.0]], [[0.0]], None, ("u",), ("y",))
    assert s.is_stable() and not s.is_discrete
    assert np.isclose(s.evaluate(0.0)[0, 0], 1.0)
    with pytest.raises(ModelError):
        s.select(["nope"])


def test_feedback_against_hand_computation():
    # y = x, x' = -x + u, u = -2 y  ->  x' = -3 x
    P = StateSpace([[-1.0]], [[1.0, 1.0]], [[1.0]], [[0.0, 0.0]])
    K = StateSpace(np.zeros((0, 0)), np.zeros((0, 1)), np.zeros((1, 0)), [[-2.0]])
    A, B, C, D, r, e = feedback(P, K, [0], [1], keep_out=[0])
    assert np.allclose(A, [[-3.0]]) and np.allclose(B, [[1.0]])


def test_algebraic_loop_detected():
    P = StateSpace([[-1.0]], [[1.0]], [[1.0]], [[1.0]])
    K = StateSpace(np.zeros((0, 0)), np.zeros((0, 1)), np.zeros((1, 0)), [[1.0]])
    with pytest.raises(AlgebraicLoopError):
        feedback(P, K, [0], [0])


def test_close_controller_keeps_delta_channels(rng):
    sys = random_uncertain(rng, 3, 2, m=2, p=2, dt=0.1)
    sys = sys.replace(inputs=("w", "u"), outputs=("z", "y"))
    K = StateSpace([[0.5]], [[1.0]], [[0.3]], [[0.1]], 0.1)
    cl = close_controller(sys, K, ["y"], ["u"])
    assert cl.delta == sys.delta and cl.inputs == ("w",) and cl.outputs == ("z",)
    assert cl.n == 4
    with pytest.raises(ModelError):
        close_controller(sys, StateSpace([[0.5]], [[1.0]], [[0.3]], [[0.1]], 0.2), ["y"], ["u"])


def test_parameter_box():
    b = ParameterBox(("a", "b", "c"), lower=(-1, 0, -1), upper=(1, 0, 1))
    assert list(b.active) == [0, 2]
    assert len(b.vertices()) == 4
    lo, hi = b.split(0)
    assert lo.upper[0] == 0 and hi.lower[0] == 0
    pts = b.sample(np.random.default_rng(0), 10)
    assert all(b.contains(p) for p in pts)
    with pytest.raises(ModelError):
        ParameterBox(("a",), lower=(1,), upper=(0,))


def test_uncertain_select_and_nominal(rng):
    sys = random_uncertain(rng, m=2, p=2)
    sel = sys.select(["u1"], ["y0"])
    assert sel.inputs == ("u1",) and sel.outputs == ("y0",)
    assert sel.nw == sys.nw
    assert isinstance(sel, UncertainStateSpace)
    assert np.allclose(sys.nominal().A, sys.A)
