import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mrlft.benchmark import build_controller, build_plant
from mrlft.errors import ModelFileError
from mrlft.lft import eval_at
from mrlft.modelfile import ModelFile, benchmark_file, write_model

AFFINE = """\
# two-state oscillator with an uncertain stiffness
plant:
  inputs: [w, u]
  outputs: [y]
  affine:
    A: {rows: 2, cols: 2, data: [0, 1, -4, -0.4]}
    B: {rows: 2, cols: 2, data: [0, 0, 1, 1]}
    C: {rows: 1, cols: 2, data: [1, 0]}
    D: {rows: 1, cols: 2, data: [0, 0]}
    parameters:
      - {name: k, nominal: 4.0, half_range: 0.4, A: {rows: 2, cols: 2, data: [0, 0, -1, 0]}}
controller:
  loops:
    - name: P
      period: 0.05
      measurements: [y]
      tf: {num: [-0.5, 0.1], den: [1, -0.5]}
routing: {rows: 1, cols: 1, data: [1]}
io: {control: [u], disturbances: [w], performance: [y]}
"""


def test_affine_document():
    mf = ModelFile.parse(AFFINE)
    plant, ctrl = mf.models()
    assert plant.delta.names == ("k",)
    assert np.allclose(eval_at(plant, {"k": 1.0}).A, [[0, 1], [-4.4, -0.4]])
    assert ctrl.base_period == 0.05 and ctrl.loops[0].controller.n == 1
    assert mf.io["performance"] == ["y"]


def test_roundtrip_is_identity():
    mf = ModelFile.parse(AFFINE)
    again = ModelFile.parse(mf.dumps())
    assert again.document == mf.document and again.dumps() == mf.dumps()


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(allow_nan=False, allow_infinity=False, width=64), min_size=4,
                max_size=4))
def test_numbers_survive_exactly(vals):
    text = AFFINE.replace("data: [0, 1, -4, -0.4]", "data: [" + ", ".join(map(repr, vals)) + "]")
    mf = ModelFile.parse(text)
    back = ModelFile.parse(mf.dumps())
    got = back.document["plant"]["affine"]["A"]["data"]
    assert [float(x) for x in got] == [float(x) for x in vals]


def test_benchmark_file_is_the_benchmark(tmp_path):
    mf = benchmark_file()
    mf.save(tmp_path / "sat.yaml")
    plant, ctrl = ModelFile.load(tmp_path / "sat.yaml").models()
    ref = build_plant()
    for k in "ABCD":
        assert np.array_equal(getattr(plant, k), getattr(ref, k))
    assert ctrl.periods == build_controller().periods


def test_write_model_for_discrete(tmp_path):
    from mrlft.multirate import assemble

    res = assemble(build_plant(), build_controller(), "pade", 1)
    write_model(tmp_path / "cl.yaml", res.model, None, {"disturbances": ["w_p"]})
    back = ModelFile.load(tmp_path / "cl.yaml").plant()
    assert back.dt == res.model.dt and back.delta == res.model.delta
    assert np.array_equal(back.A, res.model.A)


@pytest.mark.parametrize("text,line,fragment", [
    ("plant: [1, 2]\n", 1, "must be a mapping"),
    ("plant:\n  inputs: [u]\n  outputs: [y]\n", 2, "exactly one of"),
    ("plant:\n  inputs: [u]\n  outputs: [y]\n  lft:\n    A: {rows: 1, cols: 1, data: [1, 2]}\n",
     5, "2 entries for a 1x1"),
    ("plant:\n  inputs: [u]\n  outputs: [y]\n  bogus: 1\n  lft: {}\n", 4, "unknown key"),
    ("a: [1\n", 2, "YAML syntax error"),
    ("format: other/2\nplant: {}\n", 1, "unsupported format"),
    ("plant: {}\nplant: {}\n", 2, "duplicate key"),
])
def test_errors_have_positions(text, line, fragment):
    with pytest.raises(ModelFileError) as e:
        ModelFile.parse(text)
    assert fragment in str(e.value)
    assert e.value.line == line and e.value.column is not None


def test_semantic_error_points_at_section():
    bad = AFFINE.replace("den: [1, -0.5]", "den: [0, 1]")
    with pytest.raises(ModelFileError, match="leading coefficient"):
        ModelFile.parse(bad)
    bad = AFFINE.replace("period: 0.05", "period: -1")
    with pytest.raises(ModelFileError) as e:
        ModelFile.parse(bad)
    assert e.value.line == 15


def test_io_names_checked():
    with pytest.raises(ModelFileError, match="not a plant output"):
        ModelFile.parse(AFFINE.replace("performance: [y]", "performance: [q]"))


def test_missing_file(tmp_path):
    with pytest.raises(ModelFileError, match="cannot read"):
        ModelFile.load(tmp_path / "nope.yaml")
