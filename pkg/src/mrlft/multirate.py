"""Nested multi-rate controllers and closed-loop LFT assembly.

Loops are ordered from fastest to slowest with integer period ratios.  The
loop ``i`` controller maps its measurements to commands ``v_i``; commands
are routed to the plant input through a fixed matrix ``u = L_sigma v``.
Assembly closes the fastest loop first, downsamples the resulting model to
the next period by lifting, and repeats.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .discretization import (ErrorBoundReport, delta_eps_exact, full_zoh_discretize,
                             pade_discretize, tustin_discretize)
from .errors import ModelError
from .lft import StateSpace, UncertainStateSpace, close_controller, eval_at

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LoopSpec:
    controller: StateSpace
    measurements: tuple[str, ...]
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "measurements", tuple(self.measurements))
        if not self.controller.is_discrete:
            raise ModelError("loop controllers must be discrete-time")
        if self.controller.m != len(self.measurements):
            raise ModelError(f"loop {self.name!r}: controller has {self.controller.m} inputs "
                             f"for {len(self.measurements)} measurements")

    @property
    def period(self) -> float:
        return self.controller.dt


@dataclass(frozen=True)
class MultirateController:
    loops: tuple[LoopSpec, ...]
    routing: np.ndarray
    control_inputs: tuple[str, ...]

    def __post_init__(self):
        loops = tuple(self.loops)
        if not loops:
            raise ModelError("at least one loop is required")
        names = [lp.name or f"loop{i + 1}" for i, lp in enumerate(loops)]
        loops = tuple(LoopSpec(lp.controller, lp.measurements, nm) for lp, nm in zip(loops, names))
        object.__setattr__(self, "loops", loops)
        object.__setattr__(self, "control_inputs", tuple(self.control_inputs))
        L = np.atleast_2d(np.asarray(self.routing, dtype=float))
        L.setflags(write=False)
        object.__setattr__(self, "routing", L)
        for a, b in zip(loops, loops[1:]):
            if b.period < a.period * (1 - 1e-12):
                raise ModelError("loops must be ordered by increasing period")
        self.ratios  # validates integer ratios
        seen = set()
        for lp in loops:
            dup = seen.intersection(lp.measurements)
            if dup:
                raise ModelError(f"measurement(s) {sorted(dup)} used by more than one loop")
            seen.update(lp.measurements)
        nv = sum(lp.controller.p for lp in loops)
        if L.shape != (len(self.control_inputs), nv):
            raise ModelError(f"routing matrix must be {len(self.control_inputs)}x{nv}, "
                             f"got {L.shape[0]}x{L.shape[1]}")
        if not np.all(np.isin(L, (-1.0, 0.0, 1.0))):
            log.warning("routing matrix has entries outside {-1, 0, 1}")

    @property
    def periods(self) -> tuple[float, ...]:
        return tuple(lp.period for lp in self.loops)

    @property
    def ratios(self) -> tuple[int, ...]:
        out = []
        for a, b in zip(self.periods, self.periods[1:]):
            q = b / a
            if abs(q - round(q)) > 1e-9 * q or round(q) < 1:
                raise ModelError(f"period ratio {b}/{a} is not an integer")
            out.append(int(round(q)))
        return tuple(out)

    @property
    def base_period(self) -> float:
        return self.periods[0]

    @property
    def frame_period(self) -> float:
        return self.periods[-1]

    @property
    def measurements(self) -> tuple[str, ...]:
        return tuple(m for lp in self.loops for m in lp.measurements)

    def command_names(self, i: int) -> tuple[str, ...]:
        lp = self.loops[i]
        return tuple(f"{lp.name}.v{j}" for j in range(lp.controller.p))

    def all_commands(self) -> tuple[str, ...]:
        return tuple(n for i in range(len(self.loops)) for n in self.command_names(i))


def absorb_routing(plant: UncertainStateSpace, ctrl: MultirateController) -> UncertainStateSpace:
    """Replace the plant control inputs ``u`` by the loop commands ``v`` (``u = L v``)."""
    ui = plant.input_index(ctrl.control_inputs)
    keep = [i for i in range(len(plant.inputs)) if i not in set(ui)]
    L = ctrl.routing
    nw = plant.nw
    Bv = plant.B2[:, ui] @ L
    Dv = plant.D[:, nw + ui] @ L
    B = np.hstack([plant.B1, plant.B2[:, keep], Bv])
    D = np.hstack([plant.D[:, :nw], plant.D[:, nw + np.array(keep, dtype=int)], Dv])
    inputs = tuple(plant.inputs[i] for i in keep) + ctrl.all_commands()
    return plant.replace(B=B, D=D, inputs=inputs)


def downsample(sys: UncertainStateSpace, q: int) -> UncertainStateSpace:
    """Lift a discrete model over ``q`` steps with inputs held across the frame.

    The perturbation channels of every intermediate step become separate
    channels, so the result carries ``q`` copies of the structure.  Exogenous
    outputs are sampled at the frame instants and therefore only see the
    first copy.
    """
    if not sys.is_discrete:
        raise ModelError("downsample expects a discrete-time model")
    if not isinstance(q, (int, np.integer)) or q < 1:
        raise ModelError(f"downsampling factor must be a positive integer, got {q!r}")
    if q == 1:
        return sys
    A, B1, B2, C1, D11, D12 = sys.A, sys.B1, sys.B2, sys.C1, sys.D11, sys.D12
    n, nw, nz, m = sys.n, sys.nw, sys.nz, B2.shape[1]
    P = [np.eye(n)]
    for _ in range(q):
        P.append(A @ P[-1])
    # S[j] = sum_{i<j} A^(j-1-i) B2: state response to a held input after j steps
    S = [np.zeros((n, m))]
    for j in range(1, q + 1):
        S.append(A @ S[-1] + B2)
    Bs = np.hstack([P[q - 1 - i] @ B1 for i in range(q)] + [S[q]])
    Cz = np.vstack([C1 @ P[j] for j in range(q)])
    Dzw = np.zeros((q * nz, q * nw))
    for j in range(q):
        for i in range(j + 1):
            Dzw[j * nz:(j + 1) * nz, i * nw:(i + 1) * nw] = D11 if i == j else C1 @ P[j - 1 - i] @ B1
    Dzu = np.vstack([C1 @ S[j] + D12 for j in range(q)])
    C = np.vstack([Cz, sys.C2])
    Dyw = np.zeros((sys.C2.shape[0], q * nw))
    Dyw[:, :nw] = sys.D21
    D = np.block([[Dzw, Dzu], [Dyw, sys.D22]])
    meta = dict(sys.meta, downsampled=sys.meta.get("downsampled", 1) * q)
    return sys.replace(A=P[q], B=Bs, C=C, D=D, delta=sys.delta.repeat(q), dt=sys.dt * q,
                       meta=meta)


@dataclass
class AssemblyResult:
    model: UncertainStateSpace
    report: ErrorBoundReport | None
    log: list = field(default_factory=list)
    discrete_plant: UncertainStateSpace | None = None

    def to_dict(self) -> dict:
        return {"stages": self.log,
                "error_bound": None if self.report is None else self.report.to_dict(),
                "structure": self.model.delta.to_dict(), "period": self.model.dt,
                "states": self.model.n}


def _stage(label, sys):
    return {"stage": label, "period": sys.dt, "states": sys.n,
            "delta_rows": sys.nw, "delta_cols": sys.nz, "structure": sys.delta.describe()}


def discretize(plant: UncertainStateSpace, T: float, method: str = "pade", order: int = 2,
               **kw):
    """Dispatch to one of the discretization routes; returns ``(model, report)``."""
    if method in ("pade", "rational"):
        return pade_discretize(plant, T, order, **kw)
    if method == "tustin":
        return tustin_discretize(plant, T), None
    if method in ("full-zoh", "zoh"):
        return full_zoh_discretize(plant, T), None
    raise ModelError(f"unknown discretization method {method!r}")


def assemble(plant: UncertainStateSpace, ctrl: MultirateController, method: str = "pade",
             order: int = 2, **kw) -> AssemblyResult:
    """Closed-loop LFT at the slowest period.

    The plant is discretized at the fastest period, loop 1 is closed, and for
    each further loop the model is lifted to that loop's period and the loop
    is closed.  Remaining exogenous channels are held at the frame rate.
    """
    if plant.is_discrete:
        raise ModelError("assemble expects a continuous-time plant")
    missing = set(ctrl.measurements) - set(plant.outputs)
    if missing:
        raise ModelError(f"measurement(s) {sorted(missing)} are not plant outputs")
    routed = absorb_routing(plant, ctrl)
    M, report = discretize(routed, ctrl.base_period, method, order, **kw)
    stages = [_stage(f"discretized ({M.meta.get('discretization')})", M)]
    discrete_plant = M
    for i, lp in enumerate(ctrl.loops):
        if i:
            q = ctrl.ratios[i - 1]
            M = downsample(M, q)
            stages.append(_stage(f"downsampled x{q}", M))
        M = close_controller(M, lp.controller, lp.measurements, ctrl.command_names(i))
        stages.append(_stage(f"closed {lp.name}", M))
    for s in stages:
        log.info("%(stage)s: T=%(period)g n=%(states)d Delta %(delta_rows)dx%(delta_cols)d", s)
    M = M.replace(meta=dict(M.meta, loops=len(ctrl.loops)))
    return AssemblyResult(M, report, stages, discrete_plant)


def exact_values(plant: UncertainStateSpace, result: AssemblyResult, values: Mapping) -> dict:
    """Block values of the assembled model that reproduce the plant at ``values``."""
    out = dict(values)
    rep = result.report
    if rep is not None and rep.eps is not None and not rep.eps.empty:
        A = eval_at(plant, values).A
        out.update(rep.eps.values(delta_eps_exact(A, rep.period, rep.order)))
    return out


def coverage_check(plant: UncertainStateSpace, ctrl: MultirateController,
                   result: AssemblyResult, values: Mapping, w_profile, horizon: float,
                   outputs: Sequence[str] | None = None) -> dict:
    """Compare the assembled LFT at exact perturbation values with the hybrid loop.

    Returns the maximum absolute output deviation over the frame instants and
    whether every normalized perturbation value lies in the unit ball.
    """
    from .hybrid import simulate_discrete_lft, simulate_hybrid

    model = result.model
    outputs = tuple(outputs or model.outputs)
    vals = exact_values(plant, result, values)
    in_ball = True
    per = model.delta.resolve(vals)
    for b in model.delta:
        v = np.asarray(per.get(b.name, 0.0))
        if (np.abs(v).max() if b.is_scalar else np.linalg.norm(np.atleast_2d(v), 2)) > 1 + 1e-12:
            in_ball = False
    steps = int(round(horizon / ctrl.frame_period))
    frame = simulate_discrete_lft(model, vals, w_profile, steps)
    hyb = simulate_hybrid(eval_at(plant, values), ctrl, w_profile, horizon)
    q = int(round(ctrl.frame_period / ctrl.base_period))
    dev = 0.0
    for name in outputs:
        a = frame.signals[name]
        b = hyb.signals[name][::q][:len(a)]
        dev = max(dev, float(np.max(np.abs(a - b))))
    return {"max_deviation": dev, "in_unit_ball": in_ball, "steps": steps}
