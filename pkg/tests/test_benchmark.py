import json

import numpy as np
import pytest

from mrlft.benchmark import (CRITICAL, PARAMETERS, PidParams, SatelliteParams, build_controller,
                             build_model, build_plant, continuous_closed_loop, delta_summary,
                             plant_matrices, reproduce_figures, reproduce_tables, sanity_gates)
from mrlft.errors import ModelError
from mrlft.lft import eval_at


@pytest.mark.parametrize("delta", [(0, 0, 0, 0), CRITICAL, (0.3, -0.7, 0.5, -1), (1, 1, -1, 1)])
def test_lft_plant_matches_closed_form(delta):
    sys = build_plant()
    got = eval_at(sys, dict(zip(PARAMETERS, delta)))
    ref = plant_matrices(SatelliteParams(), delta)
    for k in "ABCD":
        assert np.allclose(getattr(got, k), getattr(ref, k), atol=1e-12)


def test_plant_structure():
    sys = build_plant()
    assert sys.n == 5 and sys.nw == 5
    assert [b.rows for b in sys.delta] == [1, 1, 2, 1]
    p = SatelliteParams()
    assert p.physical((0, 0, -1, 0))["omega"] == pytest.approx(3.6)
    assert p.physical((0, 0, 1, 0))["omega"] == pytest.approx(4.4)


def test_plant_rejects_singular_coupling():
    with pytest.raises(ModelError):
        plant_matrices(SatelliteParams(J=0.5, alpha=0.5))


def test_controllers():
    mr, sr = build_controller(), build_controller(single_rate=True)
    assert mr.periods == (0.1, 0.2) and sr.periods == (0.1, 0.1)
    assert mr.measurements == ("y_rate", "y_angle")


def test_continuous_loop_is_stable_on_the_box():
    for d in np.random.default_rng(0).uniform(-1, 1, (20, 4)):
        assert np.max(np.linalg.eigvals(continuous_closed_loop(SatelliteParams(), PidParams(),
                                                                d)).real) < 0


def test_sanity_gates_pass():
    gates = sanity_gates()
    assert all(g.passed for g in gates), [(g.name, g.value) for g in gates]


def test_delta_summary_order1():
    res = build_model("rational1")
    assert delta_summary(res) == ("I2 (x) Delta_G", "10x10")
    assert delta_summary(build_model("tustin")) == ("I2 (x) Delta_G", "NA")
    with pytest.raises(ModelError):
        build_model("rk4")


@pytest.fixture(scope="module")
def figures(tmp_path_factory):
    out = tmp_path_factory.mktemp("figs")
    files = reproduce_figures(out)
    return {f.stem: np.genfromtxt(f, delimiter=",", names=True) for f in files}


def test_figure_columns(figures):
    names = figures["nominal"].dtype.names
    assert names == ("t", "continuous", "hybrid_single_rate", "hybrid_multi_rate", "rational1",
                     "rational2", "full_zoh", "tustin")
    assert len(figures["nominal"]) == 200


def test_rational_models_reproduce_the_hybrid_loop(figures):
    for d in figures.values():
        for col in ("rational1", "rational2"):
            assert np.max(np.abs(d[col] - d["hybrid_multi_rate"])) < 1e-9


def test_time_response_claims(figures):
    nom, crit = figures["nominal"], figures["critical"]
    late = nom["t"] > 15
    assert np.abs(nom["hybrid_multi_rate"][late]).max() < 0.1 * np.abs(nom["hybrid_multi_rate"]).max()
    after = crit["t"] > 20
    assert (np.abs(crit["hybrid_multi_rate"][after]).max()
            < np.abs(crit["hybrid_single_rate"][after]).max())
    assert np.abs(crit["full_zoh"][after]).max() > 1e3  # full ZOH model diverges


def test_reproduce_table1_files(tmp_path):
    s = reproduce_tables(tmp_path, tables=(1,))
    assert (tmp_path / "table1.csv").exists()
    data = json.loads((tmp_path / "summary.json").read_text())
    names = [c["check"] for c in data["checks"]]
    assert "table1 order 1 structure" in names and data["gates_passed"]
    assert "seconds" not in data and "table1" in s["seconds"]
    rows = (tmp_path / "table1.csv").read_text().splitlines()
    assert rows[0].startswith("method,structure,eps_size,eps_bound")
    assert len(rows) == 5
