"""Command-line entry point.

Exit codes: 0 success, 1 usage, 2 model error, 3 numerical failure,
4 analysis budget exhausted, 5 benchmark checks failed.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .errors import ModelError, MrlftError

log = logging.getLogger("mrlft")

EXIT_USAGE, EXIT_BUDGET, EXIT_BENCH = 1, 4, 5


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _positive(x):
    try:
        v = float(x)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {x!r}") from None
    if not (np.isfinite(v) and v > 0):
        raise argparse.ArgumentTypeError(f"must be positive, got {x}")
    return v


def _default_jobs():
    raw = os.environ.get("MRLFT_JOBS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise UsageError(f"MRLFT_JOBS must be an integer, got {raw!r}") from None


def _flag(certified: bool) -> str:
    return "CERTIFIED: yes" if certified else "CERTIFIED: NO (model-validity warning)"


def _prefix(out: str) -> Path:
    p = Path(out)
    if p.suffix in (".yaml", ".yml", ".json"):
        p = p.with_suffix("")
    p.parent.mkdir(parents=True, exist_ok=True)
    return p


def _method(name):
    return "pade" if name == "rational" else name


def _assemble(mf, args):
    from .multirate import assemble

    plant, ctrl = mf.models()
    if ctrl is None:
        raise UsageError("the model file has no controller section")
    kw = {}
    if args.method == "rational":
        kw = {"eps": args.eps, "seed": args.seed}
    return assemble(plant, ctrl, _method(args.method), args.order, **kw)


def cmd_discretize(args) -> int:
    from .modelfile import ModelFile, write_model
    from .multirate import discretize

    mf = ModelFile.load(args.model)
    plant, ctrl = mf.models()
    T = args.period or (ctrl.base_period if ctrl is not None else None)
    if T is None:
        raise UsageError("--period is required when the model has no controller")
    kw = {"eps": args.eps, "seed": args.seed} if args.method == "rational" else {}
    model, report = discretize(plant, T, _method(args.method), args.order, **kw)
    out = _prefix(args.out)
    write_model(out.with_suffix(".yaml"), model, ctrl, mf.io)
    if report is None:
        rep = {"method": args.method, "period": T, "certified": False,
               "notes": ["no error certificate: the discretization error is not modelled"]}
    else:
        rep = report.to_dict()
    rep["model_certified"] = bool(model.meta.get("certified", False))
    out.with_suffix(".json").write_text(json.dumps(rep, indent=2, sort_keys=True) + "\n")
    print(f"discretized at T={T:g} with {args.method}"
          + (f" order {args.order}" if args.method == "rational" else ""))
    if report is not None and report.bound:
        print(f"error bound sigma_max(Delta_eps) <= {report.bound:.6g}")
    elif report is None:
        print("no error certificate")
    print(f"structure: {model.delta.describe()}")
    print(_flag(rep["model_certified"]))
    print(f"wrote {out.with_suffix('.yaml')} and {out.with_suffix('.json')}")
    return 0


def cmd_assemble(args) -> int:
    from .modelfile import ModelFile, write_model

    mf = ModelFile.load(args.model)
    res = _assemble(mf, args)
    out = _prefix(args.out)
    write_model(out.with_suffix(".yaml"), res.model, None,
                {k: v for k, v in mf.io.items() if k != "control"})
    out.with_suffix(".json").write_text(json.dumps(res.to_dict(), indent=2, sort_keys=True,
                                                   default=str) + "\n")
    for s in res.log:
        print(f"{s['stage']}: T={s['period']:g} n={s['states']} "
              f"Delta {s['delta_rows']}x{s['delta_cols']}")
    print(_flag(bool(res.model.meta.get("certified", False))))
    print(f"wrote {out.with_suffix('.yaml')} and {out.with_suffix('.json')}")
    return 0


def _parse_delta(text, names):
    if text is None or text.strip() in ("0", ""):
        return {n: 0.0 for n in names}
    vals = {n: 0.0 for n in names}
    if "=" not in text:
        parts = [float(x) for x in text.split(",")]
        if len(parts) != len(names):
            raise UsageError(f"--delta needs {len(names)} values ({', '.join(names)})")
        return dict(zip(names, parts))
    for item in text.split(","):
        k, _, v = item.partition("=")
        k = k.strip()
        if k not in vals:
            raise UsageError(f"--delta: unknown parameter {k!r}; known: {', '.join(names)}")
        vals[k] = float(v)
    return vals


def _parse_disturbance(text, names, frame):
    from .hybrid import step_profile

    kind, _, rest = text.partition(":")
    if kind != "step":
        raise UsageError("--disturbance must look like step:AMPLITUDE[:DURATION]")
    parts = rest.split(":") if rest else []
    try:
        amp = float(parts[0]) if parts else 1.0
        dur = float(parts[1]) if len(parts) > 1 else 5.0
    except ValueError:
        raise UsageError(f"--disturbance: bad number in {text!r}") from None
    return step_profile(names, amp, dur, frame)


def cmd_simulate(args) -> int:
    from .hybrid import simulate_discrete_lft, simulate_hybrid
    from .lft import eval_at
    from .modelfile import ModelFile
    from .multirate import exact_values

    mf = ModelFile.load(args.model)
    plant, ctrl = mf.models()
    groups = tuple(dict.fromkeys(b.group for b in plant.delta if b.role == "parameter"))
    values = _parse_delta(args.delta, groups)
    dist = tuple(mf.io.get("disturbances") or [n for n in plant.inputs
                                                if ctrl is None or n not in ctrl.control_inputs])
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    if plant.is_discrete:
        if ctrl is not None:
            raise UsageError("a discrete model with a controller cannot be simulated; "
                             "assemble it first")
        prof = _parse_disturbance(args.disturbance, plant.inputs, plant.dt)
        trace = simulate_discrete_lft(plant, values, prof, int(round(args.horizon / plant.dt)))
        certified = bool(plant.meta.get("certified", False))
    elif ctrl is None:
        raise UsageError("a continuous model needs a controller section to simulate")
    elif args.mode == "hybrid":
        prof = _parse_disturbance(args.disturbance, dist, ctrl.frame_period)
        trace = simulate_hybrid(eval_at(plant, values), ctrl, prof, args.horizon,
                                substeps=args.substeps, compute_delay=args.compute_delay)
        certified = True
    else:
        res = _assemble(mf, args)
        prof = _parse_disturbance(args.disturbance, res.model.inputs, ctrl.frame_period)
        vals = exact_values(plant, res, values)
        trace = simulate_discrete_lft(res.model, vals, prof,
                                      int(round(args.horizon / ctrl.frame_period)))
        certified = bool(res.model.meta.get("certified", False))
    trace.to_csv(out)
    print(f"simulated {len(trace.t)} samples; delta = "
          + ", ".join(f"{k}={v:g}" for k, v in values.items()))
    print(_flag(certified))
    print(f"wrote {out}")
    return 0


def _check_channels(model, inputs, outputs, ctrl):
    for kind, names, have in (("input", inputs, model.inputs), ("output", outputs, model.outputs)):
        bad = [n for n in names if n not in have]
        if not bad:
            continue
        hint = ""
        if ctrl is not None and set(bad) & set(ctrl.measurements):
            hint = "; measured outputs are consumed by the loops, add a separate plant output"
        raise ModelError(f"unknown closed-loop {kind}(s) {bad}; available: {list(have)}{hint}")


def cmd_analyze(args) -> int:
    from .modelfile import ModelFile
    from .mu.robust import AnalysisOptions, robust_stability_margin, worst_case_hinf

    mf = ModelFile.load(args.model)
    plant, ctrl = mf.models()
    if plant.is_discrete or ctrl is None:
        model = plant
    else:
        model = _assemble(mf, args).model
    io = mf.io
    inputs = tuple(args.inputs.split(",")) if args.inputs else tuple(io.get("disturbances") or ())
    outputs = tuple(args.outputs.split(",")) if args.outputs else tuple(io.get("performance") or ())
    opts = AnalysisOptions(threshold=args.threshold, max_boxes=args.budget,
                           max_time=args.max_time, seed=args.seed, jobs=args.jobs,
                           inputs=inputs or None, outputs=outputs or None)
    if args.metric == "wc-hinf":
        _check_channels(model, inputs, outputs, ctrl)
    stab = robust_stability_margin(model, opts)
    res = stab
    if args.metric == "wc-hinf":
        res = worst_case_hinf(model, opts, stab)
    out = _prefix(args.out) if args.out else None
    if out is not None:
        sweep = out.with_name(out.name + "_sweep.csv")
        res.sweep_csv(sweep)
        res.to_json(out.with_suffix(".json"), sweep.name, timings=False)
    if res.metric == "stability-margin":
        print(f"stability margin k_r in [{res.lower:.6g}, {res.upper:.6g}]")
        print(f"peak mu in [{res.mu_lower:.6g}, {res.mu_upper:.6g}]"
              f" at {res.peak_frequency:.6g} rad/s")
        verdict = ("robustly stable" if res.mu_upper < 1 else
                   "not robustly stable" if res.mu_lower > 1 else "inconclusive")
        print(f"verdict on the unit ball: {verdict}")
    else:
        print(f"worst-case gain gamma_wc in [{res.lower:.6g}, {res.upper:.6g}]"
              f" at {res.peak_frequency:.6g} rad/s")
    if res.critical:
        print("critical perturbation: " + ", ".join(
            f"{k}={v:.4g}" for k, v in res.critical.items() if isinstance(v, float)))
    print(f"branch and bound: {res.boxes} boxes, depth {res.depth}, {res.wall_time:.1f} s")
    for w in res.warnings:
        print(f"warning: {w}")
    print(_flag(res.certified))
    if out is not None:
        print(f"wrote {out.with_suffix('.json')}")
    return EXIT_BUDGET if res.exhausted else 0


def cmd_bench(args) -> int:
    from .benchmark import reproduce_figures, reproduce_tables
    from .mu.robust import AnalysisOptions

    if args.suite != "satellite":
        raise UsageError(f"unknown suite {args.suite!r}; available: satellite")
    out = Path(args.out)
    modes = tuple(args.modes)
    tables = tuple(args.tables) if args.tables else ((3,) if modes == ("SR-HF",) else (1, 2, 3))
    opts = AnalysisOptions(seed=args.seed, jobs=args.jobs)
    summary = reproduce_tables(out, tables, modes, opts)
    if not args.no_figures:
        reproduce_figures(out / "figs")
    failed = [c for c in summary["checks"] if not c["passed"]]
    for c in summary["checks"]:
        mark = "PASS" if c["passed"] else ("FAIL" if c["gated"] else "FAIL (not gated)")
        print(f"{mark:17s} {c['check']}: {c['detail']}")
    for k, v in summary["seconds"].items():
        print(f"{k}: {v:.1f} s")
    print(f"wrote {out}")
    if failed and summary["passed"]:
        print("only reconstruction-sensitive checks failed")
    return 0 if summary["passed"] else EXIT_BENCH


def cmd_example(args) -> int:
    from .modelfile import benchmark_file

    if args.name != "satellite":
        raise UsageError(f"unknown example {args.name!r}; available: satellite")
    mf = benchmark_file()
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    mf.save(args.out)
    print(f"wrote {args.out}")
    return 0


def _add_assembly(p, order_default=2):
    p.add_argument("--order", type=int, choices=(1, 2), default=order_default)
    p.add_argument("--method", choices=("rational", "tustin", "full-zoh"), default="rational")
    p.add_argument("--eps", choices=("reduced", "full", "none"), default="reduced",
                   help="representation of the rational-approximation error")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="seed for randomized internals")
    common.add_argument("--jobs", type=int, default=None,
                        help="worker processes (default: $MRLFT_JOBS or 1)")
    common.add_argument("-v", "--verbose", action="store_true")
    ap = _Parser(prog="mrlft", description="LFT modelling and robustness analysis of "
                 "multi-rate sampled-data control systems")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("discretize", parents=[common], help="discretize an uncertain plant")
    p.add_argument("model")
    p.add_argument("--period", type=_positive)
    p.add_argument("--out", required=True, help="output prefix (.yaml and .json are written)")
    _add_assembly(p)
    p.set_defaults(func=cmd_discretize)

    p = sub.add_parser("assemble", parents=[common], help="build the closed-loop LFT")
    p.add_argument("model")
    p.add_argument("--out", required=True)
    _add_assembly(p)
    p.set_defaults(func=cmd_assemble)

    p = sub.add_parser("simulate", parents=[common], help="time response at fixed parameters")
    p.add_argument("model")
    p.add_argument("--delta", default="0",
                   help="normalized parameters: 0, a comma list, or name=value pairs")
    p.add_argument("--horizon", type=_positive, default=40.0)
    p.add_argument("--disturbance", default="step:1:5", help="step:AMPLITUDE[:DURATION]")
    p.add_argument("--mode", choices=("hybrid", "lft"), default="hybrid")
    p.add_argument("--substeps", type=int, default=1)
    p.add_argument("--compute-delay", action="store_true")
    p.add_argument("--out", required=True, help="CSV file")
    _add_assembly(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("analyze", parents=[common], help="robust stability or worst-case gain")
    p.add_argument("model")
    p.add_argument("--metric", choices=("stability", "wc-hinf"), default="stability")
    p.add_argument("--threshold", type=_positive, default=0.05,
                   help="relative gap at which branch and bound stops")
    p.add_argument("--budget", type=int, default=300, help="maximum number of boxes")
    p.add_argument("--max-time", type=_positive, default=None, help="seconds")
    p.add_argument("--inputs", help="comma-separated performance inputs")
    p.add_argument("--outputs", help="comma-separated performance outputs")
    p.add_argument("--out", help="output prefix for the JSON result and sweep CSV")
    _add_assembly(p)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("bench", parents=[common], help="reproduce the benchmark tables")
    p.add_argument("--suite", default="satellite")
    p.add_argument("--out", default="bench_out")
    p.add_argument("--modes", nargs="+", choices=("MR", "SR-HF"), default=["MR", "SR-HF"])
    p.add_argument("--tables", nargs="+", type=int, choices=(1, 2, 3))
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("example", parents=[common], help="write a bundled model file")
    p.add_argument("name")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_example)
    return ap


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.jobs is None:
            args.jobs = _default_jobs()
        if args.jobs < 1:
            raise UsageError("--jobs must be at least 1")
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except MrlftError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    except (np.linalg.LinAlgError, FloatingPointError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
