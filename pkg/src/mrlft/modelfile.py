"""Declarative YAML model files.

A document has four sections::

    plant:
      inputs: [w_p, u]
      outputs: [z, y]
      period: 0.1            # optional; omitted for continuous models
      affine:                # or `lft:` with an explicit realization
        A: {rows: 2, cols: 2, data: [0, 1, -1, -0.2]}
        B: ...
        parameters:
          - {name: k, nominal: 1.0, half_range: 0.1, A: {...}}
    controller:
      loops:
        - {name: D, period: 0.1, measurements: [y], ss: {A: ..., B: ..., C: ..., D: ...}}
    routing: {rows: 1, cols: 1, data: [-1]}
    io: {control: [u], disturbances: [w_p], performance: [z]}

Matrices are row-major with explicit dimensions.  Numbers are written with
``repr`` so a parse/serialize/parse cycle is exact.  Errors carry the line
and column of the offending node.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from .errors import ModelError, ModelFileError
from .lft import (BlockSpec, BlockStructure, ParameterBox, StateSpace, UncertainStateSpace,
                  realize_affine)
from .multirate import LoopSpec, MultirateController

FORMAT = "mrlft-model/1"


class _Node:
    """Plain value plus the source position of the YAML node it came from."""

    __slots__ = ("value", "line", "column")

    def __init__(self, value, mark):
        self.value = value
        self.line = mark.line + 1 if mark is not None else None
        self.column = mark.column + 1 if mark is not None else None


def _convert(node, loader):
    if isinstance(node, yaml.MappingNode):
        out = {}
        for k, v in node.value:
            key = loader.construct_object(k, deep=True)
            if not isinstance(key, str):
                raise ModelFileError("mapping keys must be strings", k.start_mark.line + 1,
                                     k.start_mark.column + 1)
            if key in out:
                raise ModelFileError(f"duplicate key {key!r}", k.start_mark.line + 1,
                                     k.start_mark.column + 1)
            out[key] = _convert(v, loader)
        return _Node(out, node.start_mark)
    if isinstance(node, yaml.SequenceNode):
        return _Node([_convert(v, loader) for v in node.value], node.start_mark)
    return _Node(loader.construct_object(node, deep=True), node.start_mark)


def _fail(msg, node):
    raise ModelFileError(msg, node.line, node.column)


def _plain(node):
    v = node.value
    if isinstance(v, dict):
        return {k: _plain(x) for k, x in v.items()}
    if isinstance(v, list):
        return [_plain(x) for x in v]
    return v


class _Reader:
    def mapping(self, node, where):
        if not isinstance(node.value, dict):
            _fail(f"{where} must be a mapping", node)
        return node.value

    def get(self, m, key, parent, required=True):
        if key not in m.value:
            if required:
                _fail(f"missing key {key!r}", parent)
            return None
        return m.value[key]

    def check_keys(self, m, allowed, where):
        for k, v in m.value.items():
            if k not in allowed:
                _fail(f"unknown key {k!r} in {where}", v)

    def names(self, node, where):
        if not isinstance(node.value, list) or not all(isinstance(x.value, str) for x in node.value):
            _fail(f"{where} must be a list of names", node)
        return tuple(x.value for x in node.value)

    def number(self, node, where):
        v = node.value
        if isinstance(v, str):
            # YAML 1.1 reads exponents without a dot (1e-3) as strings
            try:
                node.value = v = float(v)
            except ValueError:
                pass
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            _fail(f"{where} must be a number", node)
        return float(v)

    def integer(self, node, where):
        v = node.value
        if isinstance(v, bool) or not isinstance(v, int) or v < 0:
            _fail(f"{where} must be a nonnegative integer", node)
        return v

    def matrix(self, node, where):
        self.mapping(node, where)
        self.check_keys(node, ("rows", "cols", "data"), where)
        r = self.integer(self.get(node, "rows", node), f"{where}.rows")
        c = self.integer(self.get(node, "cols", node), f"{where}.cols")
        data = self.get(node, "data", node)
        if not isinstance(data.value, list):
            _fail(f"{where}.data must be a list", data)
        if len(data.value) != r * c:
            _fail(f"{where}: {len(data.value)} entries for a {r}x{c} matrix", data)
        vals = [self.number(x, f"{where}.data") for x in data.value]
        return np.array(vals, dtype=float).reshape(r, c)


def _matrix_doc(M) -> dict:
    M = np.asarray(M, dtype=float)
    M = M.reshape(1, -1) if M.ndim < 2 else M
    return {"rows": int(M.shape[0]), "cols": int(M.shape[1]),
            "data": [float(x) for x in M.reshape(-1)]}


@dataclass
class ModelFile:
    """Parsed model document; ``document`` is the canonical plain-data form."""

    document: dict
    source: str | None = None

    # construction -----------------------------------------------------------

    @classmethod
    def parse(cls, text: str, source: str | None = None) -> "ModelFile":
        loader = yaml.SafeLoader(text)
        try:
            root = loader.get_single_node()
        except yaml.MarkedYAMLError as e:
            mark = e.problem_mark or e.context_mark
            raise ModelFileError(f"YAML syntax error: {e.problem}",
                                 mark.line + 1 if mark else None,
                                 mark.column + 1 if mark else None) from None
        finally:
            loader.dispose()
        if root is None:
            raise ModelFileError("empty model file", 1, 1)
        loader = yaml.SafeLoader("")
        node = _convert(root, loader)
        doc = _validate(node)
        return cls(doc, source)

    @classmethod
    def load(cls, path) -> "ModelFile":
        p = Path(path)
        try:
            text = p.read_text()
        except OSError as e:
            raise ModelFileError(f"cannot read {p}: {e.strerror}") from None
        return cls.parse(text, str(p))

    @classmethod
    def from_models(cls, plant: UncertainStateSpace, ctrl: MultirateController | None = None,
                    io: dict | None = None, meta: dict | None = None) -> "ModelFile":
        """Document with an explicit LFT realization of ``plant``."""
        doc = {"format": FORMAT, "plant": _lft_doc(plant)}
        if ctrl is not None:
            doc["controller"] = {"loops": [_loop_doc(lp) for lp in ctrl.loops]}
            doc["routing"] = _matrix_doc(ctrl.routing)
        io = dict(io or {})
        if ctrl is not None:
            io.setdefault("control", list(ctrl.control_inputs))
        if io:
            doc["io"] = {k: list(v) for k, v in io.items()}
        if meta:
            doc["meta"] = dict(meta)
        return cls.parse(yaml.safe_dump(doc, sort_keys=False))

    # output -----------------------------------------------------------------

    def dumps(self) -> str:
        return yaml.safe_dump(self.document, sort_keys=False, default_flow_style=None, width=100)

    def save(self, path) -> None:
        Path(path).write_text(self.dumps())

    # interpretation ---------------------------------------------------------

    @property
    def io(self) -> dict:
        return self.document.get("io", {})

    @property
    def is_discrete(self) -> bool:
        return self.document["plant"].get("period") is not None

    def plant(self) -> UncertainStateSpace:
        return _build_plant(self.document["plant"])

    def controller(self) -> MultirateController | None:
        c = self.document.get("controller")
        if c is None:
            return None
        loops = tuple(_build_loop(lp) for lp in c["loops"])
        L = _mat(self.document.get("routing"))
        if L is None:
            raise ModelError("a controller needs a routing matrix")
        control = tuple(self.io.get("control", ()))
        if not control:
            raise ModelError("io.control must name the plant inputs driven by the controller")
        return MultirateController(loops, L, control)

    def models(self):
        return self.plant(), self.controller()


_PLANT_KEYS = ("inputs", "outputs", "period", "affine", "lft", "meta")
_IO_KEYS = ("control", "disturbances", "performance")


def _validate(node) -> dict:
    rd = _Reader()
    rd.mapping(node, "document")
    rd.check_keys(node, ("format", "plant", "controller", "routing", "io", "meta"), "document")
    fmt = rd.get(node, "format", node, required=False)
    if fmt is not None and fmt.value != FORMAT:
        _fail(f"unsupported format {fmt.value!r} (expected {FORMAT})", fmt)
    plant = rd.get(node, "plant", node)
    rd.mapping(plant, "plant")
    rd.check_keys(plant, _PLANT_KEYS, "plant")
    inputs = rd.names(rd.get(plant, "inputs", plant), "plant.inputs")
    outputs = rd.names(rd.get(plant, "outputs", plant), "plant.outputs")
    per = rd.get(plant, "period", plant, required=False)
    if per is not None and per.value is not None:
        T = rd.number(per, "plant.period")
        if not T > 0:
            _fail("plant.period must be positive", per)
    forms = [k for k in ("affine", "lft") if k in plant.value]
    if len(forms) != 1:
        _fail("plant needs exactly one of 'affine' or 'lft'", plant)
    form = plant.value[forms[0]]
    if forms[0] == "affine":
        _check_affine(rd, form)
    else:
        _check_lft(rd, form)
    ctrl = rd.get(node, "controller", node, required=False)
    if ctrl is not None:
        rd.mapping(ctrl, "controller")
        rd.check_keys(ctrl, ("loops",), "controller")
        loops = rd.get(ctrl, "loops", ctrl)
        if not isinstance(loops.value, list) or not loops.value:
            _fail("controller.loops must be a nonempty list", loops)
        for i, lp in enumerate(loops.value):
            _check_loop(rd, lp, f"controller.loops[{i}]")
        routing = rd.get(node, "routing", node)
        rd.matrix(routing, "routing")
    io = rd.get(node, "io", node, required=False)
    if io is not None:
        rd.mapping(io, "io")
        rd.check_keys(io, _IO_KEYS, "io")
        for k, v in io.value.items():
            names = rd.names(v, f"io.{k}")
            pool = inputs if k in ("control", "disturbances") else outputs
            for nm, item in zip(names, v.value):
                if nm not in pool:
                    _fail(f"io.{k}: {nm!r} is not a plant {'input' if pool is inputs else 'output'}",
                          item)
    doc = _plain(node)
    doc.setdefault("format", FORMAT)
    # trial build so that structural errors surface with a position
    try:
        _build_plant(doc["plant"])
    except ModelFileError:
        raise
    except ModelError as e:
        raise ModelFileError(f"plant: {e}", plant.line, plant.column) from None
    if ctrl is not None:
        try:
            ModelFile(doc).controller()
        except ModelFileError:
            raise
        except ModelError as e:
            raise ModelFileError(f"controller: {e}", ctrl.line, ctrl.column) from None
    return doc


def _check_affine(rd, form):
    rd.mapping(form, "plant.affine")
    rd.check_keys(form, ("A", "B", "C", "D", "parameters"), "plant.affine")
    for k in "ABCD":
        rd.matrix(rd.get(form, k, form), f"plant.affine.{k}")
    params = rd.get(form, "parameters", form, required=False)
    if params is None:
        return
    if not isinstance(params.value, list):
        _fail("plant.affine.parameters must be a list", params)
    seen = set()
    for i, p in enumerate(params.value):
        where = f"plant.affine.parameters[{i}]"
        rd.mapping(p, where)
        rd.check_keys(p, ("name", "nominal", "half_range", "A", "B", "C", "D"), where)
        name = rd.get(p, "name", p)
        if not isinstance(name.value, str):
            _fail(f"{where}.name must be a string", name)
        if name.value in seen:
            _fail(f"duplicate parameter {name.value!r}", name)
        seen.add(name.value)
        rd.number(rd.get(p, "nominal", p), f"{where}.nominal")
        h = rd.get(p, "half_range", p)
        if rd.number(h, f"{where}.half_range") < 0:
            _fail(f"{where}.half_range must be nonnegative", h)
        for k in "ABCD":
            m = rd.get(p, k, p, required=False)
            if m is not None:
                rd.matrix(m, f"{where}.{k}")


def _check_lft(rd, form):
    rd.mapping(form, "plant.lft")
    rd.check_keys(form, ("A", "B", "C", "D", "delta"), "plant.lft")
    for k in "ABCD":
        rd.matrix(rd.get(form, k, form), f"plant.lft.{k}")
    blocks = rd.get(form, "delta", form)
    if not isinstance(blocks.value, list):
        _fail("plant.lft.delta must be a list of blocks", blocks)
    for i, b in enumerate(blocks.value):
        where = f"plant.lft.delta[{i}]"
        rd.mapping(b, where)
        rd.check_keys(b, ("name", "kind", "rows", "cols", "group", "role"), where)
        rd.get(b, "name", b)
        kind = rd.get(b, "kind", b)
        if kind.value not in ("real-scalar", "real-full", "complex-full"):
            _fail(f"{where}.kind must be real-scalar, real-full or complex-full", kind)
        rd.integer(rd.get(b, "rows", b), f"{where}.rows")
        try:
            BlockSpec(**_plain(b))
        except (ModelError, TypeError, ValueError) as e:
            _fail(f"{where}: {e}", b)


def _check_loop(rd, lp, where):
    rd.mapping(lp, where)
    rd.check_keys(lp, ("name", "period", "measurements", "ss", "tf"), where)
    per = rd.get(lp, "period", lp)
    if not rd.number(per, f"{where}.period") > 0:
        _fail(f"{where}.period must be positive", per)
    rd.names(rd.get(lp, "measurements", lp), f"{where}.measurements")
    forms = [k for k in ("ss", "tf") if k in lp.value]
    if len(forms) != 1:
        _fail(f"{where} needs exactly one of 'ss' or 'tf'", lp)
    f = lp.value[forms[0]]
    rd.mapping(f, f"{where}.{forms[0]}")
    if forms[0] == "ss":
        rd.check_keys(f, ("A", "B", "C", "D"), f"{where}.ss")
        for k in "ABCD":
            rd.matrix(rd.get(f, k, f), f"{where}.ss.{k}")
    else:
        rd.check_keys(f, ("num", "den"), f"{where}.tf")
        for k in ("num", "den"):
            v = rd.get(f, k, f)
            if not isinstance(v.value, list) or not v.value:
                _fail(f"{where}.tf.{k} must be a nonempty list of coefficients", v)
            for x in v.value:
                rd.number(x, f"{where}.tf.{k}")
        if float(f.value["den"].value[0].value) == 0.0:
            _fail(f"{where}.tf.den must have a nonzero leading coefficient", f.value["den"])


def _mat(d):
    if d is None:
        return None
    return np.array(d["data"], dtype=float).reshape(d["rows"], d["cols"])


def _build_plant(d) -> UncertainStateSpace:
    dt = d.get("period")
    inputs, outputs = tuple(d["inputs"]), tuple(d["outputs"])
    meta = dict(d.get("meta") or {})
    if "lft" in d:
        f = d["lft"]
        delta = BlockStructure(tuple(BlockSpec(**b) for b in f["delta"]))
        return UncertainStateSpace(_mat(f["A"]), _mat(f["B"]), _mat(f["C"]), _mat(f["D"]),
                                   delta, dt, inputs, outputs, meta)
    f = d["affine"]
    nom = StateSpace(_mat(f["A"]), _mat(f["B"]), _mat(f["C"]), _mat(f["D"]), dt, inputs, outputs)
    params = f.get("parameters") or []
    box = ParameterBox(tuple(p["name"] for p in params), tuple(p["nominal"] for p in params),
                       tuple(p["half_range"] for p in params))
    coeffs = [tuple(_mat(p.get(k)) for k in "ABCD") for p in params]
    sys = realize_affine(nom, coeffs, box)
    return sys.replace(meta=dict(meta, parameters={p["name"]: [p["nominal"], p["half_range"]]
                                                   for p in params}))


def _build_loop(d) -> LoopSpec:
    T = float(d["period"])
    meas = tuple(d["measurements"])
    if "ss" in d:
        s = d["ss"]
        K = StateSpace(_mat(s["A"]), _mat(s["B"]), _mat(s["C"]), _mat(s["D"]), T, meas)
    else:
        from scipy.signal import tf2ss

        num = np.array(d["tf"]["num"], dtype=float)
        den = np.array(d["tf"]["den"], dtype=float)
        if len(num) > len(den):
            raise ModelError("improper controller transfer function")
        A, B, C, D = tf2ss(num, den)
        K = StateSpace(A, B, C, D, T, meas)
    return LoopSpec(K, meas, d.get("name", ""))


def _lft_doc(sys: UncertainStateSpace) -> dict:
    d = {"inputs": list(sys.inputs), "outputs": list(sys.outputs)}
    if sys.dt is not None:
        d["period"] = float(sys.dt)
    d["lft"] = {k: _matrix_doc(getattr(sys, k)) for k in "ABCD"}
    d["lft"]["delta"] = sys.delta.to_dict()
    meta = _json_safe(sys.meta)
    if meta:
        d["meta"] = meta
    return d


def _loop_doc(lp: LoopSpec) -> dict:
    K = lp.controller
    return {"name": lp.name, "period": float(lp.period), "measurements": list(lp.measurements),
            "ss": {k: _matrix_doc(getattr(K, k)) for k in "ABCD"}}


def _json_safe(meta) -> dict:
    out = {}
    for k, v in dict(meta).items():
        if isinstance(v, (bool, int, float, str)) or v is None:
            out[str(k)] = v
        elif isinstance(v, (np.floating, np.integer)):
            out[str(k)] = v.item()
    return out


def write_model(path, plant: UncertainStateSpace, ctrl: MultirateController | None = None,
                io: dict | None = None, meta: dict | None = None) -> ModelFile:
    mf = ModelFile.from_models(plant, ctrl, io, meta)
    mf.save(path)
    return mf


def benchmark_file() -> ModelFile:
    """The satellite benchmark as a model document."""
    from .benchmark import build_controller, build_plant

    return ModelFile.from_models(build_plant(), build_controller(),
                                 {"control": ["u"], "disturbances": ["w_p"], "performance": ["z"]})
