"""Reference simulation of the sampled-data loop.

The continuous plant is advanced exactly (zero-order hold) between base-rate
ticks.  At every tick the loops due to run sample their measurements, update
their controllers, and refresh the held commands before the plant is advanced.
Exogenous inputs are piecewise constant on the frame (slowest) period.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .discretization import zoh_exact
from .errors import ModelError
from .lft import StateSpace, UncertainStateSpace, eval_at


@dataclass
class SimTrace:
    t: np.ndarray
    signals: dict = field(default_factory=dict)
    states: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def to_csv(self, path) -> None:
        names = list(self.signals)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + names)
            for k, t in enumerate(self.t):
                w.writerow([repr(float(t))] + [repr(float(self.signals[n][k])) for n in names])

    @classmethod
    def from_csv(cls, path) -> "SimTrace":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        head, data = rows[0], np.array(rows[1:], dtype=float).reshape(-1, len(rows[0]))
        return cls(data[:, 0], {n: data[:, i + 1] for i, n in enumerate(head[1:])})


def step_profile(names, amplitude=1.0, duration=5.0, frame=0.2):
    """Held step on every named channel for ``duration`` seconds, zero afterwards."""
    k_end = int(round(duration / frame))
    amp = np.broadcast_to(np.asarray(amplitude, dtype=float), (len(names),)).copy()

    def f(k):
        return amp if k < k_end else np.zeros_like(amp)

    f.names = tuple(names)
    return f


def profile_value(profile, k: int, width: int) -> np.ndarray:
    """Input value for frame ``k``; arrays shorter than the horizon are zero-padded."""
    if profile is None:
        return np.zeros(width)
    if callable(profile):
        v = np.asarray(profile(k), dtype=float).reshape(-1)
    else:
        arr = np.asarray(profile, dtype=float)
        if arr.ndim == 1:
            v = arr
        elif arr.ndim == 2:
            v = arr[k] if k < arr.shape[0] else np.zeros(arr.shape[1])
        else:
            raise ModelError("input profile must be a vector, a frame-by-channel array "
                             "or a callable of the frame index")
    if v.size != width:
        raise ModelError(f"input profile has {v.size} channels, expected {width}")
    return v


def simulate_discrete_lft(sys: UncertainStateSpace, values, profile, steps: int,
                          x0=None) -> SimTrace:
    """Iterate an assembled model instantiated at ``values``."""
    if not sys.is_discrete:
        raise ModelError("simulate_discrete_lft expects a discrete model")
    d = eval_at(sys, values)
    x = np.zeros(d.n) if x0 is None else np.asarray(x0, dtype=float).copy()
    Y = np.zeros((steps, d.p))
    X = np.zeros((steps, d.n))
    for k in range(steps):
        w = profile_value(profile, k, d.m)
        X[k] = x
        Y[k] = d.C @ x + d.D @ w
        x = d.A @ x + d.B @ w
    return SimTrace(np.arange(steps) * sys.dt, {n: Y[:, i] for i, n in enumerate(d.outputs)}, X)


def simulate_hybrid(plant: StateSpace, ctrl, profile, horizon: float, *, substeps: int = 1,
                    compute_delay: bool = False, x0=None) -> SimTrace:
    """Hybrid simulation on the base-rate grid.

    ``compute_delay`` applies each loop's command one sampling period after
    the measurement it was computed from.
    """
    if plant.is_discrete:
        raise ModelError("simulate_hybrid expects a continuous-time plant")
    if not isinstance(substeps, int) or substeps < 1:
        raise ModelError("substeps must be a positive integer")
    T1 = ctrl.base_period
    Tr = ctrl.frame_period
    q_frame = int(round(Tr / T1))
    every = [int(round(T / T1)) for T in ctrl.periods]
    steps = int(round(horizon / T1))
    ui = plant.channel(ctrl.control_inputs)
    wi = np.array([i for i in range(plant.m) if i not in set(ui)], dtype=int)
    yi = [plant.channel(lp.measurements, outputs=True) for lp in ctrl.loops]
    for lp, idx in zip(ctrl.loops, yi):
        if lp.controller.D.any() and plant.D[np.ix_(idx, ui)].any():
            raise ModelError("measurement with direct feedthrough from the control input "
                             "forms an algebraic loop")
    d = zoh_exact(plant, T1 / substeps)
    x = np.zeros(plant.n) if x0 is None else np.asarray(x0, dtype=float).copy()
    xc = [np.zeros(lp.controller.n) for lp in ctrl.loops]
    v = [np.zeros(lp.controller.p) for lp in ctrl.loops]
    pending = [np.zeros(lp.controller.p) for lp in ctrl.loops]
    names_v = ctrl.all_commands()
    Y = np.zeros((steps, plant.p))
    U = np.zeros((steps, len(ui)))
    V = np.zeros((steps, len(names_v)))
    X = np.zeros((steps, plant.n))
    inp = np.zeros(plant.m)
    for k in range(steps):
        w = profile_value(profile, k // q_frame, len(wi))
        inp[wi] = w
        y_now = plant.C @ x + plant.D @ inp
        for i, lp in enumerate(ctrl.loops):
            if k % every[i]:
                continue
            K = lp.controller
            meas = y_now[yi[i]]
            out = K.C @ xc[i] + K.D @ meas
            xc[i] = K.A @ xc[i] + K.B @ meas
            if compute_delay:
                v[i], pending[i] = pending[i], out
            else:
                v[i] = out
        vv = np.concatenate(v)
        u = ctrl.routing @ vv
        inp[ui] = u
        X[k] = x
        Y[k] = plant.C @ x + plant.D @ inp
        U[k] = u
        V[k] = vv
        for _ in range(substeps):
            x = d.A @ x + d.B @ inp
    sig = {n: Y[:, i] for i, n in enumerate(plant.outputs)}
    sig.update({plant.inputs[j]: U[:, c] for c, j in enumerate(ui)})
    sig.update({n: V[:, c] for c, n in enumerate(names_v)})
    return SimTrace(np.arange(steps) * T1, sig, X, {"period": T1, "compute_delay": compute_delay})
