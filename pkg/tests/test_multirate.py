import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_stable, random_uncertain
from mrlft.errors import ModelError
from mrlft.hybrid import step_profile
from mrlft.lft import StateSpace, eval_at
from mrlft.multirate import (LoopSpec, MultirateController, absorb_routing, assemble,
                             coverage_check, downsample)


def _gain(k, dt, y="y", name=""):
    return LoopSpec(StateSpace(np.zeros((0, 0)), np.zeros((0, 1)), np.zeros((1, 0)), [[k]], dt,
                               (y,), ("v",)), (y,), name)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 4))
def test_downsample_equals_iteration(seed, q):
    rng = np.random.default_rng(seed)
    sys = random_uncertain(rng, n=3, k=2, m=2, p=1, dt=0.1)
    lifted = downsample(sys, q)
    assert len(lifted.delta) == q * len(sys.delta)
    vals = dict(zip(("p0", "p1"), rng.uniform(-1, 1, 2)))
    one = eval_at(sys, vals)
    big = eval_at(lifted, vals)
    Aq = np.linalg.matrix_power(one.A, q)
    Bq = sum(np.linalg.matrix_power(one.A, i) @ one.B for i in range(q))
    assert np.allclose(big.A, Aq, atol=1e-12)
    assert np.allclose(big.B, Bq, atol=1e-12)
    assert np.allclose(big.C, one.C) and np.allclose(big.D, one.D)
    assert np.isclose(lifted.dt, q * sys.dt)


def test_downsample_rejects_bad_factor(rng):
    sys = random_uncertain(rng, dt=0.1)
    assert downsample(sys, 1) is sys
    with pytest.raises(ModelError):
        downsample(sys, 0)
    with pytest.raises(ModelError):
        downsample(random_uncertain(rng), 2)


def test_controller_validation():
    with pytest.raises(ModelError, match="increasing period"):
        MultirateController((_gain(1, 0.2, "a"), _gain(1, 0.1, "b")), [[1, 1]], ("u",))
    with pytest.raises(ModelError, match="not an integer"):
        MultirateController((_gain(1, 0.1, "a"), _gain(1, 0.25, "b")), [[1, 1]], ("u",))
    with pytest.raises(ModelError, match="more than one loop"):
        MultirateController((_gain(1, 0.1, "a"), _gain(1, 0.2, "a")), [[1, 1]], ("u",))
    with pytest.raises(ModelError, match="routing"):
        MultirateController((_gain(1, 0.1, "a"),), [[1, 1]], ("u",))
    c = MultirateController((_gain(1, 0.1, "a"), _gain(1, 0.3, "b")), [[1, -1]], ("u",))
    assert c.ratios == (3,) and c.frame_period == pytest.approx(0.3)
    assert c.all_commands() == ("loop1.v0", "loop2.v0")


def _plant(rng):
    sys = random_uncertain(rng, n=3, k=2, m=2, p=3, scale=0.05)
    D = sys.D.copy()
    D[sys.nz:, sys.nw:] = 0.0  # strictly proper measurements
    return sys.replace(D=D, inputs=("w", "u"), outputs=("e", "ya", "yb"))


def test_absorb_routing(rng):
    plant = _plant(rng)
    c = MultirateController((_gain(1, 0.1, "ya"), _gain(1, 0.2, "yb")), [[1, -2]], ("u",))
    r = absorb_routing(plant, c)
    assert r.inputs == ("w", "loop1.v0", "loop2.v0")
    assert np.allclose(r.B2[:, 2], -2 * plant.B2[:, 1])


@pytest.mark.parametrize("method", ["pade", "tustin", "full-zoh"])
def test_assemble_shapes(method, rng):
    plant = _plant(rng)
    c = MultirateController((_gain(-0.2, 0.1, "ya"), _gain(-0.1, 0.3, "yb")), [[1, 1]], ("u",))
    res = assemble(plant, c, method, 1)
    assert res.model.dt == pytest.approx(0.3)
    assert res.model.inputs == ("w",) and res.model.outputs == ("e",)
    stages = [s["stage"] for s in res.log]
    assert stages[-1] == "closed loop2" and any("downsampled x3" in s for s in stages)
    assert res.to_dict()["period"] == pytest.approx(0.3)


def test_assemble_errors(rng):
    plant = _plant(rng)
    c = MultirateController((_gain(1, 0.1, "nope"),), [[1]], ("u",))
    with pytest.raises(ModelError):
        assemble(plant, c)
    with pytest.raises(ModelError):
        assemble(plant.replace(dt=0.1), c)
    with pytest.raises(ModelError):
        assemble(plant, MultirateController((_gain(1, 0.1, "ya"),), [[1]], ("u",)), "euler")


def test_coverage_on_random_loop(rng):
    plant = _plant(rng)
    c = MultirateController((_gain(-0.2, 0.1, "ya"), _gain(-0.1, 0.2, "yb")), [[1, 1]], ("u",))
    res = assemble(plant, c, "pade", 2, eps="full")
    prof = step_profile(["w"], 1.0, 2.0, 0.2)
    out = coverage_check(plant, c, res, {"p0": 0.5, "p1": -1.0}, prof, 10.0)
    assert out["max_deviation"] < 1e-9 and out["in_unit_ball"]
