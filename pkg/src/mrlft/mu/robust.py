"""Robust stability margin and worst-case H-infinity gain of ``F_u(M, Delta)``.

Both metrics come from mu bounds evaluated on a frequency grid.  Discrete
models are swept on the unit circle and continuous ones on the imaginary
axis; the two views are related by the bilinear map, which changes neither
the peak values nor the perturbation structure.

Gaps left by the sweep are closed by a branch and bound over the parameter
blocks.  Each box is tested at a fixed level: the model is re-centred on the
box, and the box is cleared when the upper bound stays below one at every
frequency still open for its parent.
"""

from __future__ import annotations

import csv
import heapq
import json
import logging
import pickle
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import minimize, minimize_scalar

from ..errors import MrlftError
from ..lft import BlockKind, BlockSpec, BlockStructure, ParameterBox, StateSpace, UncertainStateSpace
from .bounds import UpperBoundProblem, _verify, mu_lower_bound
from .hinf import hinf_norm
from .structure import MuStructure

log = logging.getLogger(__name__)

STABILITY = "stability-margin"
WORST_CASE = "worst-case-hinf"


class RobustStabilityNotEstablished(MrlftError):
    """Worst-case gain requested without a robust stability certificate on the unit ball."""


@dataclass
class AnalysisOptions:
    threshold: float = 0.05
    max_boxes: int = 300
    max_time: float | None = None
    grid: int = 40
    refine: float = 0.05
    densify: int = 10
    max_points: int = 160
    seed: int = 0
    jobs: int = 1
    split: str = "sensitivity"
    lower_starts: int = 8
    samples: int = 64
    inputs: tuple[str, ...] | None = None
    outputs: tuple[str, ...] | None = None


@dataclass
class SweepPoint:
    frequency: float
    upper: float
    lower: float = 0.0


@dataclass
class AnalysisResult:
    """Guaranteed bounds on one robustness metric.

    For the stability margin ``lower``/``upper`` bound ``k_r``; ``mu_lower``
    and ``mu_upper`` are the corresponding peak mu values.  For the
    worst-case gain they bound ``gamma_wc`` directly.
    """

    metric: str
    lower: float
    upper: float
    peak_frequency: float = float("nan")
    critical: dict | None = None
    critical_frequency: float = float("nan")
    boxes: int = 0
    depth: int = 0
    wall_time: float = 0.0
    certified: bool = False
    exhausted: bool = False
    sweep: list = field(default_factory=list)
    warnings: list = field(default_factory=list)

    @property
    def gap(self) -> float:
        if not np.isfinite(self.upper) or self.upper <= 0:
            return 0.0 if self.upper == self.lower else float("inf")
        return float((self.upper - self.lower) / self.upper)

    @property
    def mu_upper(self) -> float:
        return _inv(self.lower) if self.metric == STABILITY else float("nan")

    @property
    def mu_lower(self) -> float:
        return _inv(self.upper) if self.metric == STABILITY else float("nan")

    def to_dict(self) -> dict:
        crit = None
        if self.critical is not None:
            crit = {k: (_jsonable(v)) for k, v in self.critical.items()}
        out = {"metric": self.metric, "lower": _num(self.lower), "upper": _num(self.upper),
               "gap": _num(self.gap), "peak_frequency": _num(self.peak_frequency),
               "critical": crit, "critical_frequency": _num(self.critical_frequency),
               "bnb": {"boxes": self.boxes, "depth": self.depth,
                       "wall_time": round(self.wall_time, 3), "exhausted": self.exhausted},
               "certified": self.certified, "warnings": list(self.warnings)}
        if self.metric == STABILITY:
            out["mu_lower"] = _num(self.mu_lower)
            out["mu_upper"] = _num(self.mu_upper)
        return out

    def to_json(self, path=None, sweep_path=None, timings: bool = True) -> str:
        """JSON export; ``timings=False`` drops wall time so reruns are byte-identical."""
        d = self.to_dict()
        if not timings:
            del d["bnb"]["wall_time"]
        if sweep_path is not None:
            d["sweep"] = str(sweep_path)
        text = json.dumps(d, indent=2, sort_keys=True)
        if path is not None:
            Path(path).write_text(text + "\n")
        return text

    def sweep_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["frequency", "upper", "lower"])
            for p in self.sweep:
                w.writerow([repr(float(p.frequency)), repr(float(p.upper)), repr(float(p.lower))])


def _inv(x):
    if x == 0:
        return float("inf")
    return 0.0 if np.isinf(x) else float(1 / x)


def _num(x):
    x = float(x)
    if np.isnan(x):
        return None
    if np.isinf(x):
        return "inf" if x > 0 else "-inf"
    return x


def _jsonable(v):
    a = np.asarray(v)
    if a.ndim == 0:
        return float(a.real)
    if np.iscomplexobj(a):
        return {"re": a.real.tolist(), "im": a.imag.tolist()}
    return a.tolist()


# Parallel map with results independent of the worker count.

def _pmap(fn, items, jobs):
    items = list(items)
    if jobs <= 1 or len(items) < 2:
        return [fn(x) for x in items]
    try:
        pickle.dumps(fn)
    except Exception:
        log.warning("evaluator cannot be sent to worker processes; running serially")
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, items))


class _Frequency:
    """Frequency variable of a model: ``s = j w`` or ``z = exp(j w dt)``."""

    def __init__(self, sys):
        self.dt = sys.dt if sys.is_discrete else None
        if self.dt:
            self.wmax = np.pi / self.dt
            self.wmin = 1e-3 * self.wmax
        else:
            mags = np.abs(np.linalg.eigvals(sys.A)) if sys.n else np.array([1.0])
            mags = mags[mags > 1e-9]
            lo = mags.min() if mags.size else 1.0
            hi = mags.max() if mags.size else 1.0
            self.wmin, self.wmax = 1e-2 * lo, 1e2 * hi

    def point(self, w):
        return np.exp(1j * w * self.dt) if self.dt else 1j * w

    def seed(self, count):
        return np.r_[0.0, np.logspace(np.log10(self.wmin), np.log10(self.wmax), count)]


# Frequency-point evaluators (module level so they can run in workers).

@dataclass
class _UpperTask:
    struct: MuStructure

    def __call__(self, item):
        M, theta0, stop, stages = item
        return UpperBoundProblem(self.struct).optimize(M, theta0, stages=stages,
                                                       stop_below=stop)


def _mu_matrix(sys, s):
    G = sys.frequency_matrix(s)
    return G[:sys.nz, :sys.nw]


class _Sweep:
    """Adaptive grid of mu upper bounds for one model."""

    FLOOR = 0.2

    def __init__(self, matrix: Callable, struct: MuStructure, freq: _Frequency, opts):
        self.matrix = matrix
        self.struct = struct
        self.freq = freq
        self.opts = opts
        self.task = _UpperTask(struct)
        self.points: dict[float, tuple[float, np.ndarray]] = {}

    def evaluate(self, ws):
        """Bounds at new frequencies, tight only where they can reach the peak.

        A one-stage pass bounds every point; points whose coarse bound exceeds
        ``FLOOR`` times the peak are then refined until they drop below that
        level.  Coarse values are valid bounds, so the peak is never missed.
        """
        ws = sorted({float(w) for w in ws} - set(self.points))
        if not ws:
            return
        mats = {w: self.matrix(self.freq.point(w)) for w in ws}
        res = _pmap(self.task, [(mats[w], self.near(w), None, 1) for w in ws], self.opts.jobs)
        coarse = dict(zip(ws, res))
        peak = max((v for v, _ in self.points.values()), default=0.0)
        top = max(ws, key=lambda w: coarse[w][0])
        if coarse[top][0] > peak:
            v, th = self.task((mats[top], coarse[top][1], None, 8))
            coarse[top] = (v, th)
            peak = max(peak, v)
        level = self.FLOOR * peak
        redo = [w for w in ws if w != top and coarse[w][0] >= level]
        res = _pmap(self.task, [(mats[w], coarse[w][1], level, 8) for w in redo],
                    self.opts.jobs)
        coarse.update(zip(redo, res))
        self.points.update(coarse)

    def near(self, w):
        if not self.points:
            return None
        k = min(self.points, key=lambda x: abs(x - w))
        return self.points[k][1]

    def value(self, w):
        self.evaluate([w])
        return self.points[float(w)][0]

    def sorted(self):
        ws = np.array(sorted(self.points))
        return ws, np.array([self.points[w][0] for w in ws])

    def run(self):
        o = self.opts
        self.evaluate(self.freq.seed(o.grid))
        for _ in range(6):
            ws, vs = self.sorted()
            floor = self.FLOOR * vs.max()
            jumps = []
            for i in range(len(ws) - 1):
                a, b = vs[i], vs[i + 1]
                rel = abs(a - b) / max(a, b, 1e-300)
                if (rel > o.refine and max(a, b) > floor
                        and ws[i + 1] - ws[i] > 1e-6 * ws[i + 1]):
                    jumps.append((-rel, _mid(ws[i], ws[i + 1])))
            room = o.max_points - len(self.points)
            if not jumps or room <= 0:
                break
            # largest jumps first when the budget is short
            jumps.sort()
            self.evaluate([w for _, w in jumps[:room]])
        self.densify()
        return self.peak()

    def densify(self):
        ws, vs = self.sorted()
        i = int(np.argmax(vs))
        new = []
        for j in (i - 1, i):
            if 0 <= j < len(ws) - 1:
                new += list(np.linspace(ws[j], ws[j + 1], self.opts.densify + 1)[1:-1])
        self.evaluate(new)

    def peak(self):
        """Local maximization of the bound around the grid maximum."""
        ws, vs = self.sorted()
        i = int(np.argmax(vs))
        a = ws[max(i - 1, 0)]
        b = ws[min(i + 1, len(ws) - 1)]
        if b > a:
            res = minimize_scalar(lambda w: -self.value(w), bounds=(a, b), method="bounded",
                                  options={"xatol": 1e-6 * max(b, 1e-9), "maxiter": 25})
            self.value(res.x)
        ws, vs = self.sorted()
        i = int(np.argmax(vs))
        return float(ws[i]), float(vs[i])

    def local_maxima(self, count, floor):
        ws, vs = self.sorted()
        idx = [i for i in range(len(ws))
               if (i == 0 or vs[i] >= vs[i - 1]) and (i == len(ws) - 1 or vs[i] >= vs[i + 1])
               and vs[i] >= floor]
        idx.sort(key=lambda i: -vs[i])
        out = []
        for i in idx:
            a, b = ws[max(i - 1, 0)], ws[min(i + 1, len(ws) - 1)]
            # plateaus give runs of equal maxima; keep one bracket per run
            if any(a <= o[2] and b >= o[0] for o in out):
                continue
            out.append((a, ws[i], b))
            if len(out) == count:
                break
        return out


def _mid(a, b):
    return float(np.sqrt(a * b)) if a > 0 else 0.5 * (a + b)


def _block_values(struct: MuStructure, Delta) -> dict:
    out = {}
    for b in struct.blocks:
        blk = Delta[np.ix_(b.w_idx, b.z_idx)]
        out[b.name] = float(blk[0, 0].real) if b.kind == "real" else (
            blk.real.copy() if b.real else blk.copy())
    return out


def _best_lower(matrix, struct, freq, brackets, opts, initial=None):
    """Largest verified lower bound over frequency near each bracketed peak."""
    best = (0.0, None, float("nan"))
    for k, (a, w0, b) in enumerate(brackets):
        cache = {}

        def neg(w, init=None, starts=opts.lower_starts):
            w = float(w)
            if w not in cache:
                r = mu_lower_bound(matrix(freq.point(w)), struct, starts=starts,
                                   seed=opts.seed + k, initial=init,
                                   scan=4 * opts.samples if init is None else 16)
                cache[w] = r
            return -cache[w].value

        first = neg(w0, initial)
        seed_x = _real_vector(struct, cache[float(w0)])
        for e in (a, b):
            first = min(first, neg(e, seed_x))
        if b > a and first < 0:
            minimize_scalar(lambda w: neg(w, seed_x, 2), bounds=(a, b), method="bounded",
                            options={"xatol": 1e-6 * max(b, 1e-9), "maxiter": 12})
        for w, r in cache.items():
            if r.value > best[0]:
                best = (r.value, r, w)
    # real poles cross the boundary at zero or Nyquist frequency, where real mu jumps
    for w in ([0.0, freq.wmax] if freq.dt else [0.0]):
        r = mu_lower_bound(matrix(freq.point(w)), struct, starts=opts.lower_starts,
                           seed=opts.seed, scan=4 * opts.samples)
        if r.value > best[0]:
            best = (r.value, r, w)
    return best


class _Crossing:
    """Smallest scaling along a real-block direction that puts a pole on the boundary."""

    def __init__(self, sys, struct):
        nw, nz = struct.nw, struct.nz
        self.sys, self.struct = sys, struct
        self.blocks = struct.real_blocks()
        self.A = sys.A
        self.Bw, self.Cz, self.Dzw = sys.B[:, :nw], sys.C[:nz, :], sys.D[:nz, :nw]
        self.discrete = sys.is_discrete

    def delta(self, x):
        D = np.zeros((self.struct.nw, self.struct.nz))
        for b, v in zip(self.blocks, x):
            D[b.w_idx, b.z_idx] = v
        return D

    def poles(self, x):
        D = self.delta(x)
        L = np.eye(self.Dzw.shape[0]) - self.Dzw @ D
        if np.linalg.cond(L) > 1e12:
            return None
        return np.linalg.eigvals(self.A + self.Bw @ D @ np.linalg.solve(L, self.Cz))

    def margin(self, x):
        ev = self.poles(x)
        if ev is None:
            return None
        return float(np.max(np.abs(ev)) - 1 if self.discrete else np.max(ev.real))

    def first(self, x, tmax, n=16):
        """First ``t`` in ``(0, tmax]`` with ``t x`` on the boundary, or None."""
        lo = 0.0
        for t in np.linspace(tmax / n, tmax, n):
            m = self.margin(t * x)
            if m is None:
                return None
            if m >= 0:
                hi = t
                while hi - lo > 1e-12 * hi:
                    mid = 0.5 * (lo + hi)
                    m = self.margin(mid * x)
                    if m is None:
                        return None
                    lo, hi = (lo, mid) if m >= 0 else (mid, hi)
                return hi
            lo = t
        return None

    def frequency(self, x, freq):
        ev = self.poles(x)
        if self.discrete:
            p = ev[np.argmin(np.abs(np.abs(ev) - 1))]
            return abs(float(np.angle(p))) / freq.dt
        return abs(float(ev[np.argmin(np.abs(ev.real))].imag))


def _crossing_lower(sys, matrix, struct, freq, groups, opts, tmax):
    """Destabilizing real perturbations from direct boundary crossings in parameter space."""
    cross = _Crossing(sys, struct)
    names = [b.name for b in cross.blocks]
    nr = len(names)
    if not nr or not np.isfinite(tmax) or tmax <= 0:
        return None
    rng = np.random.default_rng(opts.seed)
    gi = [names.index(g) for g in groups if g in names]
    dirs = []
    if 0 < len(gi) <= 8:
        for v in np.ndindex(*(2,) * len(gi)):
            x = np.zeros(nr)
            x[gi] = 2.0 * np.array(v) - 1
            dirs.append(x)
    dirs += [np.ones(nr), -np.ones(nr)]
    dirs += [np.sign(rng.uniform(-1, 1, nr)) for _ in range(opts.samples)]
    best_t, best_x = tmax, None
    for x in dirs:
        t = cross.first(x, best_t)
        if t is not None and t < best_t:
            best_t, best_x = t, x
    if best_x is None:
        return None
    w = cross.frequency(best_t * best_x, freq)
    M = matrix(freq.point(w))
    vals = {n: best_t * v for n, v in zip(names, best_x)}
    found = _verify_values(M, struct, vals)
    refined = mu_lower_bound(M, struct, starts=2, seed=opts.seed, initial=best_x, scan=0)
    if found is None or refined.value > found.value:
        found = refined
    return (found.value, found, w) if found.value > 0 else None


def _verify_values(M, struct, vals):
    return _verify(M, struct, struct.delta(vals), 1e-8)


def _real_vector(struct, lower):
    if lower is None or lower.delta is None:
        return None
    vals = _block_values(struct, lower.delta)
    x = np.array([vals[b.name] for b in struct.real_blocks()])
    m = np.max(np.abs(x)) if x.size else 0.0
    return x / m if m > 0 else None


def _certified(sys) -> bool:
    return bool(sys.meta.get("certified", "discretization" not in sys.meta))


def _param_groups(sys) -> tuple[str, ...]:
    return tuple(dict.fromkeys(b.group for b in sys.delta
                               if b.is_scalar and b.role == "parameter"))


def _closed_loop_poles(sys, values):
    return sys.close_blocks(values).nominal().poles()


def boundary_distance(sys, values) -> float:
    """Distance of the closest closed-loop pole to the stability boundary."""
    ev = _closed_loop_poles(sys, values)
    if not len(ev):
        return float("inf")
    d = np.abs(np.abs(ev) - 1) if sys.is_discrete else np.abs(ev.real)
    return float(np.min(d))


def is_unstable(sys, values, tol=1e-9) -> bool:
    ev = _closed_loop_poles(sys, values)
    if not len(ev):
        return False
    return bool(np.max(np.abs(ev)) >= 1 - tol if sys.is_discrete else np.max(ev.real) >= -tol)


# Branch and bound.

@dataclass
class BoxBound:
    """Result of evaluating one box: ``upper`` bounds the metric over the box,
    ``lower`` is attained at ``point`` (block values)."""

    upper: float
    lower: float = 0.0
    point: dict | None = None
    sensitivities: dict = field(default_factory=dict)
    data: object = None


@dataclass
class BnBResult:
    upper: float
    lower: float
    point: dict | None
    boxes: int
    depth: int
    wall_time: float
    exhausted: bool
    status: str  # "converged", "below", "above", "exhausted"


def branch_and_bound(domain: ParameterBox, evaluate: Callable, threshold: float = 0.05,
                     max_boxes: int = 300, max_time: float | None = None,
                     split: str = "sensitivity", jobs: int = 1, stop_below: float | None = None,
                     stop_above: float | None = None, batch: int = 4,
                     root: BoxBound | None = None) -> BnBResult:
    """Best-first bisection of ``domain`` for the maximum of a box-bounded metric.

    ``evaluate((box, parent_data))`` returns a :class:`BoxBound`.  The global
    upper bound is the largest upper bound among open boxes; boxes whose upper
    bound cannot exceed the best lower bound (or ``stop_below``) are closed.
    Boxes are processed in batches of fixed size so that the outcome does not
    depend on ``jobs``.
    """
    t0 = time.perf_counter()
    names = domain.names
    if root is None:
        root = _pmap(evaluate, [(domain, None)], 1)[0]
    boxes, depth = 1, 0
    best_lower, best_point = root.lower, root.point
    heap = []
    counter = 0

    def push(box, bb, d):
        nonlocal counter
        heapq.heappush(heap, (-bb.upper, counter, box, bb, d))
        counter += 1

    push(domain, root, 0)

    def status():
        up = max(-heap[0][0], best_lower) if heap else best_lower
        if stop_above is not None and best_lower >= stop_above:
            return up, "above"
        if not heap or (stop_below is not None and up < stop_below):
            return up, "below" if stop_below is not None else "converged"
        if up - best_lower <= threshold * abs(up):
            return up, "converged"
        return up, None

    while True:
        up, st = status()
        if st:
            break
        if boxes >= max_boxes or (max_time is not None and time.perf_counter() - t0 > max_time):
            st = "exhausted"
            break
        take = []
        while heap and len(take) < min(batch, max_boxes - boxes):
            negu, _, box, bb, d = heapq.heappop(heap)
            if -negu <= best_lower or (stop_below is not None and -negu < stop_below):
                continue
            take.append((box, bb, d))
        if not take:
            continue
        work, meta = [], []
        for box, bb, d in take:
            i = _split_index(box, bb, d, split, names)
            for child in box.split(i):
                work.append((child, bb.data))
                meta.append((child, d + 1))
        results = _pmap(evaluate, work, jobs)
        boxes += len(results)
        for (child, d), bb in zip(meta, results):
            depth = max(depth, d)
            if bb.lower > best_lower:
                best_lower, best_point = bb.lower, bb.point
            push(child, bb, d)
    prune = stop_below if stop_below is not None else -np.inf
    live = [-h[0] for h in heap if -h[0] > best_lower and -h[0] >= prune]
    up = max([best_lower] + live)
    return BnBResult(float(up), float(best_lower), best_point, boxes, depth,
                     time.perf_counter() - t0, st == "exhausted", st)


def _split_index(box, bb, depth, rule, names):
    act = [i for i in box.active]
    if not act:
        raise MrlftError("box cannot be split further")
    if rule == "sensitivity" and bb.sensitivities:
        s = np.array([bb.sensitivities.get(names[i], 0.0) * 1.0 for i in act])
        if np.any(s > 0):
            return act[int(np.argmax(s))]
    if rule not in ("sensitivity", "round-robin"):
        raise MrlftError(f"unknown split rule {rule!r}")
    if rule == "round-robin":
        return act[depth % len(act)]
    r = box.radius[act]
    return act[int(np.argmax(r))]


# Box evaluators.

@dataclass
class _LevelBox:
    """mu test of one parameter box for a model whose unit ball is the target set.

    ``base`` already carries the level scaling; parameter blocks are re-centred
    on the box, all other blocks keep their (unit) range.  The box clears when
    the upper bound is below one on every frequency still open for the parent.
    """

    base: UncertainStateSpace
    struct: MuStructure
    groups: tuple[str, ...]
    scale: float
    dt: float | None
    seed: int
    lower_starts: int
    mu_rows: int
    mu_cols: int

    def model(self, box):
        c = {g: float(x) / self.scale for g, x in zip(self.groups, box.center)}
        r = {g: float(x) / self.scale for g, x in zip(self.groups, box.radius)}
        return self.base.recenter(c, r)

    def __call__(self, item):
        box, parent = item
        sysb = self.model(box)
        freqs = parent
        out, worst, wtheta = [], -1.0, None
        prob = UpperBoundProblem(self.struct)
        for w, theta0 in freqs:
            s = np.exp(1j * w * self.dt) if self.dt else 1j * w
            G = sysb.frequency_matrix(s)[:self.mu_rows, :self.mu_cols]
            v, th = prob.optimize(G, theta0, stop_below=1.0)
            if v >= 1:
                out.append((w, th))
            if v > worst:
                worst, wtheta = v, (w, G, th)
        bb = BoxBound(max(worst, 0.0), data=out)
        if worst >= 1 and wtheta is not None:
            w, G, th = wtheta
            lo = mu_lower_bound(G, self.struct, starts=self.lower_starts, seed=self.seed)
            bb.lower = lo.value
            if lo.value >= 1:
                vals = _block_values(self.struct, lo.delta)
                bb.point = {"frequency": w, "box": (box.center.tolist(), box.radius.tolist()),
                            "values": vals}
            names = [b.name for b in self.struct.blocks if b.name in self.groups]
            bb.sensitivities = prob.sensitivities(G, th, names)
        return bb


def _box_point_values(point, groups, scale):
    """Original-coordinate block values of a certificate found inside a box."""
    center, radius = point["box"]
    out = {}
    for name, v in point["values"].items():
        if name in groups:
            i = list(groups).index(name)
            out[name] = (center[i] + radius[i] * v) / scale
        else:
            out[name] = v
    return out


def _values_norm(values) -> float:
    m = 0.0
    for v in values.values():
        a = np.atleast_2d(np.asarray(v))
        m = max(m, float(np.abs(a[0, 0]) if a.size == 1 else np.linalg.norm(a, 2)))
    return m


# Robust stability.

def robust_stability_margin(sys: UncertainStateSpace, opts: AnalysisOptions | None = None
                            ) -> AnalysisResult:
    """Bounds on ``k_r = max{k : F_u(M, Delta) stable for all Delta in k B}``."""
    opts = opts or AnalysisOptions()
    t0 = time.perf_counter()
    certified = _certified(sys)
    warns = [] if certified else ["model-validity warning: the discretization error is not "
                                  "covered, so bounds hold for the model only"]
    nominal = sys.nominal()
    if nominal.n and not nominal.is_stable():
        return AnalysisResult(STABILITY, 0.0, 0.0, certified=certified,
                              critical={}, warnings=warns + ["nominal system is unstable"],
                              wall_time=time.perf_counter() - t0)
    if not len(sys.delta):
        return AnalysisResult(STABILITY, np.inf, np.inf, certified=certified, warnings=warns,
                              wall_time=time.perf_counter() - t0)
    struct = MuStructure.compile(sys.delta)
    freq = _Frequency(sys)

    def matrix(s):
        return _mu_matrix(sys, s)

    sweep = _Sweep(matrix, struct, freq, opts)
    w_peak, mu_up = sweep.run()
    if mu_up <= 0:
        res = AnalysisResult(STABILITY, np.inf, np.inf, w_peak, certified=certified,
                             warnings=warns, wall_time=time.perf_counter() - t0)
        res.sweep = [SweepPoint(w, v) for w, v in zip(*sweep.sorted())]
        return res
    log.info("sweep: %d frequencies, mu upper %.6g at %.6g rad/s", len(sweep.points), mu_up,
             w_peak)
    brackets = sweep.local_maxima(3, 0.5 * mu_up)
    mu_lo, cert, w_cert = _best_lower(matrix, struct, freq, brackets, opts)
    groups = _param_groups(sys)
    if mu_lo < (1 - opts.threshold) * mu_up:
        found = _crossing_lower(sys, matrix, struct, freq, groups, opts,
                                1 / mu_lo if mu_lo > 0 else 4 / mu_up)
        if found is not None and found[0] > mu_lo:
            mu_lo, cert, w_cert = found
    log.info("lower bound: mu lower %.6g at %.6g rad/s", mu_lo, w_cert)
    mu_up = max(mu_up, mu_lo)  # rounding when the bounds meet
    lower_trace = {}
    if cert is not None and cert.delta is not None:
        lower_trace[w_cert] = mu_lo
    k_lo = 1 / mu_up
    k_up = 1 / mu_lo if mu_lo > 0 else np.inf
    critical = _block_values(struct, cert.delta) if mu_lo > 0 else None

    boxes = depth = 0
    exhausted = False
    if (np.isfinite(k_up) and (k_up - k_lo) > opts.threshold * k_up and groups):
        out = _stability_bnb(sys, struct, freq, sweep, groups, k_lo, k_up, critical, w_cert,
                             opts, t0)
        k_lo, k_up, critical, w_cert, boxes, depth, exhausted = out
        if exhausted:
            warns.append("branch-and-bound budget exhausted; bounds are valid but loose")
    ws, vs = sweep.sorted()
    res = AnalysisResult(STABILITY, float(k_lo), float(k_up), w_peak, critical, float(w_cert),
                         boxes, depth, time.perf_counter() - t0, certified, exhausted,
                         [SweepPoint(w, v, lower_trace.get(w, 0.0)) for w, v in zip(ws, vs)],
                         warns)
    return res


def _stability_bnb(sys, struct, freq, sweep, groups, k_lo, k_up, critical, w_cert, opts, t0):
    """Raise ``k_lo`` by certifying stability on ``k B`` for ``k`` just under ``k_up``."""
    ws, vs = sweep.sorted()
    thetas = {w: sweep.points[w][1] for w in ws}
    boxes = depth = 0
    exhausted = False
    while True:
        budget = opts.max_boxes - boxes
        remaining = None if opts.max_time is None else opts.max_time - (time.perf_counter() - t0)
        if budget <= 0 or (remaining is not None and remaining <= 0):
            exhausted = True
            break
        k_t = k_up * (1 - opts.threshold)
        if k_t <= k_lo:
            break
        # frequencies where the unit-ball bound already clears level k_t need no work
        open_f = [(w, thetas[w]) for w, v in zip(ws, vs) if v * k_t >= 1]
        base = sys.scale_delta(k_t)
        ev = _LevelBox(base, struct, groups, k_t, freq.dt, opts.seed, opts.lower_starts,
                       sys.nz, sys.nw)
        domain = ParameterBox(groups, lower=(-k_t,) * len(groups), upper=(k_t,) * len(groups))
        root = ev((domain, open_f))
        r = branch_and_bound(domain, ev, 0.0, max_boxes=budget, max_time=remaining,
                             split=opts.split, jobs=opts.jobs, stop_below=1.0, stop_above=1.0,
                             root=root)
        boxes += r.boxes
        depth = max(depth, r.depth)
        log.info("branch and bound at k = %.6g: %s after %d boxes", k_t, r.status, r.boxes)
        if r.status == "below":
            k_lo = k_t
            break
        if r.status == "above" and r.point is not None:
            # certificate in the level-scaled model, mapped back to unit-ball coordinates
            vals = {k: v * k_t for k, v in _box_point_values(r.point, groups, k_t).items()}
            size = _values_norm(vals)
            if size < k_up:
                k_up, critical, w_cert = size, vals, r.point["frequency"]
                continue
        exhausted = r.status == "exhausted"
        break
    return k_lo, k_up, critical, w_cert, boxes, depth, exhausted


# Worst-case gain.

def _performance_model(sys, inputs, outputs):
    """Model whose mu problem includes a complex full performance block."""
    sel = sys.select(inputs, outputs)
    perf = BlockSpec("performance", BlockKind.COMPLEX_FULL, len(sel.inputs), len(sel.outputs),
                     role="performance")
    return sel, perf


def _gain_at(sel: UncertainStateSpace, values) -> float:
    return hinf_norm(sel.close_blocks(values).nominal()).value


def worst_case_hinf(sys: UncertainStateSpace, opts: AnalysisOptions | None = None,
                    stability: AnalysisResult | None = None) -> AnalysisResult:
    """Bounds on ``max_{Delta in B} ||F_u(M, Delta)||_inf`` from inputs to outputs."""
    opts = opts or AnalysisOptions()
    t0 = time.perf_counter()
    inputs = tuple(opts.inputs or sys.inputs)
    outputs = tuple(opts.outputs or sys.outputs)
    sel, perf = _performance_model(sys, inputs, outputs)
    certified = _certified(sys)
    warns = [] if certified else ["model-validity warning: the discretization error is not "
                                  "covered, so bounds hold for the model only"]
    if not len(sel.delta):
        h = hinf_norm(sel.nominal())
        return AnalysisResult(WORST_CASE, h.value, h.value, h.frequency, {}, h.frequency,
                              certified=certified, warnings=warns,
                              wall_time=time.perf_counter() - t0)
    if stability is None:
        stability = robust_stability_margin(sys, opts)
    if not stability.lower > 1:
        raise RobustStabilityNotEstablished(
            f"robust stability on the unit ball is not established (k_r >= {stability.lower:.4g});"
            " run the stability analysis first and make sure its lower bound exceeds 1")
    struct_p = MuStructure.compile(sel.delta)
    aug = sel.delta + BlockStructure((perf,))
    struct = MuStructure.compile(aug)
    freq = _Frequency(sel)
    rng = np.random.default_rng(opts.seed)

    # lower bound from sampled and locally maximized perturbations
    lo_val, lo_point, lo_w = _wc_lower(sel, struct_p, freq, rng, opts)

    # frequency grid shaped by the gain curve at the worst point found
    def gain_curve(w, values):
        G = sel.close_blocks(values).nominal().evaluate(freq.point(w))
        return float(np.linalg.norm(G, 2))

    grid = list(freq.seed(opts.grid))
    g = [gain_curve(w, lo_point) for w in grid]
    for _ in range(4):
        new = [_mid(a, b) for a, b, ga, gb in zip(grid, grid[1:], g, g[1:])
               if abs(ga - gb) > opts.refine * max(ga, gb, 1e-300)]
        if not new:
            break
        grid += new
        g += [gain_curve(w, lo_point) for w in new]
        order = np.argsort(grid)
        grid = [grid[i] for i in order]
        g = [g[i] for i in order]
    i = int(np.argmax(g))
    for j in (i - 1, i):
        if 0 <= j < len(grid) - 1:
            grid += list(np.linspace(grid[j], grid[j + 1], opts.densify + 1)[1:-1])
    if np.isfinite(lo_w):
        grid.append(lo_w)
    grid = sorted(set(float(w) for w in grid))
    ga = np.array([gain_curve(w, lo_point) for w in grid])

    def aug_matrix(s, gamma):
        G = sel.frequency_matrix(s)
        M = G.copy()
        M[sel.nz:] /= gamma
        return M

    up, w_up, trace, thetas = _wc_upper(sel, struct, freq, grid, ga, lo_val, aug_matrix, opts)

    boxes = depth = 0
    exhausted = False
    groups = _param_groups(sel)
    if up - lo_val > opts.threshold * up and groups:
        out = _wc_bnb(sel, struct, freq, groups, lo_val, lo_point, lo_w, up, trace, thetas, opts,
                      t0)
        up, lo_val, lo_point, lo_w, boxes, depth, exhausted = out
        if exhausted:
            warns.append("branch-and-bound budget exhausted; bounds are valid but loose")
    sweep = [SweepPoint(w, trace.get(w, float("nan")), float(x)) for w, x in zip(grid, ga)]
    return AnalysisResult(WORST_CASE, float(lo_val), float(up), float(w_up), lo_point, float(lo_w),
                          boxes, depth, time.perf_counter() - t0, certified, exhausted, sweep,
                          warns)


def _wc_lower(sel, struct, freq, rng, opts):
    """Best exact closed-loop H-infinity norm over candidate perturbations."""
    names = [b.name for b in struct.real_blocks()]
    full = struct.full_blocks()
    nr = len(names)
    cands = [np.zeros(nr)]
    groups = _param_groups(sel)
    gi = [names.index(g) for g in groups if g in names]
    if len(gi) <= 8:
        for signs in np.ndindex(*(2,) * len(gi)):
            x = np.zeros(nr)
            x[gi] = 2.0 * np.array(signs) - 1
            cands.append(x)
    cands += list(rng.uniform(-1, 1, (opts.samples, nr)))

    def values(x):
        v = dict(zip(names, (float(t) for t in x)))
        for b in full:
            v[b.name] = np.zeros((b.size, len(b.z_idx)))
        return v

    scored = []
    for x in cands:
        h = _gain_at(sel, values(x))
        scored.append((h, tuple(x)))
    scored.sort(key=lambda t: -t[0])
    best_h, best_x = scored[0][0], np.array(scored[0][1])
    best_w = hinf_norm(sel.close_blocks(values(best_x)).nominal()).frequency

    # local ascent of the gain over (delta, frequency) from the best candidates
    for h0, x0 in scored[:3]:
        x0 = np.array(x0)
        w0 = hinf_norm(sel.close_blocks(values(x0)).nominal()).frequency
        if not np.isfinite(w0):
            continue

        def neg(z):
            try:
                G = sel.close_blocks(values(z[:-1])).nominal().evaluate(freq.point(z[-1]))
            except MrlftError:
                return 0.0
            return -float(np.linalg.norm(G, 2))

        bnds = [(-1.0, 1.0)] * nr + [(0.0, freq.wmax)]
        res = minimize(neg, np.r_[x0, w0], method="L-BFGS-B", bounds=bnds,
                       options={"maxiter": 80})
        x = np.clip(res.x[:-1], -1, 1)
        try:
            h = hinf_norm(sel.close_blocks(values(x)).nominal())
        except MrlftError:
            continue
        if np.isfinite(h.value) and h.value > best_h:
            best_h, best_x, best_w = h.value, x, h.frequency
    return float(best_h), {k: v for k, v in values(best_x).items()
                           if np.ndim(v) == 0}, float(best_w)


def _wc_upper(sel, struct, freq, grid, proxy, lo_val, aug_matrix, opts):
    """Largest certified per-frequency gain level, with skew-mu bisection."""
    order = list(np.argsort(-proxy))
    up = max(lo_val, 1e-12)
    w_up = float(grid[order[0]])
    trace, thetas = {}, {}
    prob = UpperBoundProblem(struct)
    rtol = min(opts.threshold / 10, 1e-3)

    last = {}

    def test(w, gamma):
        # only the comparison with one matters; warm start from the previous level
        v, th = prob.optimize(aug_matrix(freq.point(w), gamma), last.get("theta"),
                              stop_below=1.0)
        last["theta"] = th
        return v, th

    for idx in order:
        w = float(grid[idx])
        v, th = test(w, up)
        if v < 1:
            trace[w], thetas[w] = up, th
            continue
        lo, hi = up, up * 2
        while True:
            v, th_hi = test(w, hi)
            if v < 1:
                break
            lo, hi = hi, hi * 2
            if hi > 1e12:
                raise MrlftError("worst-case gain bound diverged; check robust stability")
        while hi - lo > rtol * hi:
            mid = 0.5 * (lo + hi)
            v, th = test(w, mid)
            if v < 1:
                hi, th_hi = mid, th
            else:
                lo = mid
        up, w_up = hi, w
        trace[w], thetas[w] = hi, th_hi
    return up, w_up, trace, thetas


def _wc_bnb(sel, struct, freq, groups, lo_val, lo_point, lo_w, up, trace, thetas, opts, t0):
    """Lower the certified level towards the best gain found."""
    boxes = depth = 0
    exhausted = False
    while True:
        budget = opts.max_boxes - boxes
        remaining = None if opts.max_time is None else opts.max_time - (time.perf_counter() - t0)
        if budget <= 0 or (remaining is not None and remaining <= 0):
            exhausted = True
            break
        g_t = lo_val / (1 - opts.threshold)
        if g_t >= up:
            break
        base = sel.replace(C=_scaled_rows(sel.C, sel.nz, g_t), D=_scaled_rows(sel.D, sel.nz, g_t))
        rows = base.nz + len(sel.outputs)
        cols = base.nw + len(sel.inputs)
        ev = _LevelBox(base, struct, groups, 1.0, freq.dt, opts.seed, opts.lower_starts,
                       rows, cols)
        open_f = [(w, thetas.get(w)) for w in sorted(trace) if trace[w] >= g_t]
        domain = ParameterBox(groups)
        root = ev((domain, open_f))
        r = branch_and_bound(domain, ev, 0.0, max_boxes=budget, max_time=remaining,
                             split=opts.split, jobs=opts.jobs, stop_below=1.0, stop_above=1.0,
                             root=root)
        boxes += r.boxes
        depth = max(depth, r.depth)
        if r.status == "below":
            up = g_t
            break
        if r.status == "above" and r.point is not None:
            vals = _box_point_values(r.point, groups, 1.0)
            vals = {k: v for k, v in vals.items() if k != "performance" and np.ndim(v) == 0}
            vals = {k: float(np.clip(v, -1, 1)) for k, v in vals.items()}
            h = hinf_norm(sel.close_blocks(vals).nominal())
            if np.isfinite(h.value) and h.value > lo_val:
                lo_val, lo_point, lo_w = h.value, vals, h.frequency
                continue
        exhausted = r.status == "exhausted"
        break
    return up, lo_val, lo_point, lo_w, boxes, depth, exhausted


def _scaled_rows(X, nz, gamma):
    X = X.copy()
    X[nz:] /= gamma
    return X
