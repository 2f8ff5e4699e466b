"""Discretization of uncertain continuous-time models.

The rational route replaces ``exp(TA)`` by the diagonal Pade approximant of
order ``N`` and carries the remaining discrepancy as an additive perturbation
``Delta_eps`` on the state update::

    x+ = x + T (I + Delta_eps) q0,     D_N(TA) q0 = A x + B u

where ``D_N`` is the Pade denominator.  Because ``D_N(TA)^-1`` only involves
powers of ``A``, ``q0`` is realized with ``N`` copies of the parametric block,
and with the exact ``Delta_eps = D_N(TA) phi1(TA) - I`` the update reproduces
the zero-order-hold discretization to rounding error.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.optimize import minimize

from .errors import ModelError, NonAffineError, NumericalError
from .lft import (BlockKind, BlockSpec, BlockStructure, StateSpace, UncertainStateSpace,
                  ParameterBox, eval_at)

log = logging.getLogger(__name__)

# Scaling-and-squaring thresholds for Pade degrees 3..13 (1-norm).
_THETA = {3: 1.495585217958292e-2, 5: 2.539398330063230e-1, 7: 9.504178996162932e-1,
          9: 2.097847961257068, 13: 5.371920351148152}


def pade_coefficients(order: int) -> np.ndarray:
    """Coefficients ``c_j`` of the diagonal Pade numerator ``sum_j c_j X^j``."""
    n = order
    return np.array([math.factorial(2 * n - j) * math.factorial(n)
                     / (math.factorial(2 * n) * math.factorial(j) * math.factorial(n - j))
                     for j in range(n + 1)])


def expm(A) -> np.ndarray:
    """Matrix exponential by scaling and squaring with a diagonal Pade approximant."""
    A = np.asarray(A, dtype=np.result_type(A, float))
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ModelError("expm needs a square matrix")
    n = A.shape[0]
    if n == 0:
        return A.copy()
    norm = np.linalg.norm(A, 1)
    if not np.isfinite(norm):
        raise NumericalError("non-finite entries in expm argument")
    I = np.eye(n, dtype=A.dtype)
    for m in (3, 5, 7, 9):
        if norm <= _THETA[m]:
            return _pade_ratio(A, m, I)
    s = max(0, int(math.ceil(math.log2(norm / _THETA[13])))) if norm > 0 else 0
    E = _pade_ratio(A / 2.0 ** s, 13, I)
    for _ in range(s):
        E = E @ E
    return E


def _pade_ratio(A, m, I):
    c = pade_coefficients(m)
    A2 = A @ A
    powers = [I, A2]
    while len(powers) <= m // 2:
        powers.append(powers[-1] @ A2)
    U = A @ sum(c[2 * k + 1] * powers[k] for k in range((m + 1) // 2))
    V = sum(c[2 * k] * powers[k] for k in range(m // 2 + 1))
    return np.linalg.solve(V - U, V + U)


def zoh_exact(sys: StateSpace, T: float) -> StateSpace:
    """Exact zero-order-hold discretization of a certain model."""
    _check_period(T)
    if sys.is_discrete:
        raise ModelError("zoh_exact expects a continuous-time model")
    n, m = sys.n, sys.m
    M = np.zeros((n + m, n + m), dtype=np.result_type(sys.A, sys.B))
    M[:n, :n] = sys.A * T
    M[:n, n:] = sys.B * T
    E = expm(M)
    return StateSpace(E[:n, :n], E[:n, n:], sys.C, sys.D, T, sys.inputs, sys.outputs)


def phi1(X) -> np.ndarray:
    """``sum_k X^k / (k+1)!`` through an augmented exponential."""
    n = X.shape[0]
    M = np.zeros((2 * n, 2 * n), dtype=X.dtype)
    M[:n, :n] = X
    M[:n, n:] = np.eye(n)
    return expm(M)[:n, n:]


def _check_period(T):
    if not (np.isfinite(T) and T > 0):
        raise ModelError(f"sampling period must be positive, got {T}")


def _check_order(order):
    if not isinstance(order, (int, np.integer)) or order < 1:
        raise ModelError(f"Pade order must be a positive integer, got {order!r}")


def eps_series_coefficients(order: int, terms: int) -> np.ndarray:
    """Power-series coefficients ``e_j`` of ``D_N(X) phi1(X) - I`` for ``j < terms``.

    The first ``2N`` coefficients vanish; ``e_2N`` is ``-1/12`` for ``N = 1``
    and ``+1/720`` for ``N = 2``.
    """
    c = pade_coefficients(order)
    d = c * (-1.0) ** np.arange(order + 1)
    e = np.zeros(terms)
    for j in range(terms):
        e[j] = sum(d[i] / math.factorial(j - i + 1) for i in range(min(j, order) + 1))
    e[0] -= 1.0
    e[:2 * order] = 0.0
    return e


def _tail_bound(order, J, r):
    """Bound on ``sum_{j>J} |e_j| r^j`` valid for every ``r >= 0``."""
    S = float(np.sum(pade_coefficients(order)))
    k = J - order + 2
    return S * r ** (J + 1) * math.exp(r) / math.factorial(k) if k > 0 else math.inf


def _truncation_order(order, r, tol=1e-16):
    J = 2 * order + 8
    while _tail_bound(order, J, r) > tol and J < 400:
        J += 1
    return J


def _series(X, coeffs):
    out = np.zeros_like(X)
    P = np.eye(X.shape[0], dtype=X.dtype)
    for j, e in enumerate(coeffs):
        if j:
            P = P @ X
        if e:
            out = out + e * P
    return out


def delta_eps_exact(A, T: float, order: int) -> np.ndarray:
    """Exact Pade residual ``Delta_eps(TA)`` at a fixed matrix ``A``."""
    _check_order(order)
    _check_period(T)
    X = np.asarray(A, dtype=float) * T
    if X.size == 0:
        return X.copy()
    r = np.linalg.norm(X, 2)
    if r > 4.0:
        c = pade_coefficients(order) * (-1.0) ** np.arange(order + 1)
        Dn = _series(X, c)
        return Dn @ phi1(X) - np.eye(X.shape[0])
    J = _truncation_order(order, r)
    return _series(X, eps_series_coefficients(order, J + 1))


@dataclass(frozen=True)
class EpsCover:
    """Normalization of ``Delta_eps`` into uncertainty blocks.

    Either one full real block scaled by ``bound`` or one real scalar per
    retained entry, each scaled by its own magnitude bound.
    """

    n: int
    full: bool
    bound: float
    entries: tuple[tuple[int, int], ...] = ()
    scales: tuple[float, ...] = ()

    @property
    def empty(self) -> bool:
        return not self.full and not self.entries

    def names(self) -> tuple[str, ...]:
        if self.full:
            return ("eps",)
        return tuple(f"eps[{i},{j}]" for i, j in self.entries)

    def structure(self) -> BlockStructure:
        if self.full:
            return BlockStructure((BlockSpec("eps", BlockKind.REAL_FULL, self.n, self.n,
                                             role="error"),))
        return BlockStructure(tuple(BlockSpec(nm, BlockKind.REAL_SCALAR, 1, role="error")
                                    for nm in self.names()))

    def left_right(self) -> tuple[np.ndarray, np.ndarray]:
        """Factors with ``Delta_eps = L diag(values) R`` (full: ``bound * L Dn R``)."""
        if self.full:
            return np.eye(self.n), self.bound * np.eye(self.n)
        k = len(self.entries)
        L = np.zeros((self.n, k))
        R = np.zeros((k, self.n))
        for t, ((i, j), s) in enumerate(zip(self.entries, self.scales)):
            L[i, t] = 1.0
            R[t, j] = s
        return L, R

    def values(self, eps: np.ndarray) -> dict[str, object]:
        """Normalized block values representing a given ``Delta_eps``."""
        if self.full:
            return {"eps": eps / self.bound if self.bound > 0 else np.zeros_like(eps)}
        return {nm: (eps[i, j] / s if s > 0 else 0.0)
                for nm, (i, j), s in zip(self.names(), self.entries, self.scales)}

    def covers(self, eps: np.ndarray, tol: float = 1e-9) -> bool:
        if self.full:
            return np.linalg.norm(eps, 2) <= self.bound * (1 + tol) + 1e-300
        mask = np.zeros((self.n, self.n), dtype=bool)
        for (i, j), s in zip(self.entries, self.scales):
            mask[i, j] = True
            if abs(eps[i, j]) > s * (1 + tol) + 1e-300:
                return False
        scale = max(self.scales, default=0.0)
        return bool(np.all(np.abs(eps[~mask]) <= 1e-12 * max(scale, 1e-300) + 1e-300))

    def to_dict(self) -> dict:
        return {"n": self.n, "full": self.full, "bound": self.bound,
                "entries": [list(e) for e in self.entries], "scales": list(self.scales)}


def reduce_eps_structure(samples: Sequence[np.ndarray], rel_tol: float = 1e-12) -> EpsCover:
    """Entrywise cover of a family of ``Delta_eps`` samples.

    Entries whose magnitude never exceeds ``rel_tol`` times the largest
    sampled spectral norm are treated as structurally zero; every other entry
    becomes a real scalar block scaled by its maximum sampled magnitude.  If
    no entry is zero a single full block scaled by the largest spectral norm
    is returned instead.
    """
    S = np.array([np.asarray(s, dtype=float) for s in samples])
    if S.ndim != 3 or S.shape[1] != S.shape[2]:
        raise ModelError("samples must be square matrices of equal size")
    n = S.shape[1]
    bound = max((np.linalg.norm(s, 2) for s in S), default=0.0)
    if bound == 0.0:
        return EpsCover(n, False, 0.0)
    peak = np.max(np.abs(S), axis=0)
    mask = peak > rel_tol * bound
    if mask.all():
        return EpsCover(n, True, float(bound))
    entries = tuple((int(i), int(j)) for i, j in zip(*np.nonzero(mask)))
    return EpsCover(n, False, float(bound), entries, tuple(float(peak[e]) for e in entries))


@dataclass
class ErrorBoundReport:
    order: int
    period: float
    method: str
    bound: float
    certified: bool
    eps: EpsCover | None = None
    vertex_estimate: float = float("nan")
    truncation_order: int = 0
    tail_bound: float = 0.0
    argmax: dict = field(default_factory=dict)
    samples: int = 0
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "order": self.order, "period": self.period, "method": self.method,
            "bound": self.bound, "certified": self.certified,
            "eps_structure": None if self.eps is None else self.eps.to_dict(),
            "vertex_estimate": self.vertex_estimate,
            "truncation_order": self.truncation_order, "tail_bound": self.tail_bound,
            "argmax": self.argmax, "samples": self.samples, "notes": list(self.notes),
        }


def parameter_groups(sys: UncertainStateSpace) -> tuple[str, ...]:
    groups = []
    for g in sys.delta.groups:
        blocks = sys.delta.group_blocks(g)
        if not blocks[0].is_scalar:
            raise ModelError(f"block {g!r} is not a real parameter; error bounds need "
                             "parametric uncertainty")
        groups.append(g)
    return tuple(groups)


def _a_of(sys, groups, delta) -> np.ndarray:
    if not groups:
        return np.asarray(sys.A)
    return eval_at(sys, dict(zip(groups, delta))).A


def is_affine(sys: UncertainStateSpace, rng=None, tol=1e-9) -> bool:
    """Numerical test that ``A(delta)`` is affine in the parameters."""
    groups = parameter_groups(sys)
    if not groups:
        return True
    rng = np.random.default_rng(0) if rng is None else rng
    k = len(groups)
    A0 = _a_of(sys, groups, np.zeros(k))
    cols = [_a_of(sys, groups, np.eye(k)[i]) - A0 for i in range(k)]
    scale = max(1.0, np.abs(A0).max())
    for _ in range(3):
        d = rng.uniform(-1, 1, k)
        lin = A0 + sum(di * Ci for di, Ci in zip(d, cols))
        if np.abs(_a_of(sys, groups, d) - lin).max() > tol * scale:
            return False
    return True


def error_bound(sys: UncertainStateSpace, T: float, order: int,
                method: str = "series-tail-certified", *, samples: int = 256,
                seed: int = 0, assume_affine: bool = False,
                keep_samples: bool = False) -> ErrorBoundReport | tuple:
    """Bound ``max ||Delta_eps(T A(delta))||_2`` over the unit parameter box.

    ``vertex-approx`` uses the leading series term at the vertices and is only
    meaningful for affine ``A(delta)``; ``assume_affine`` overrides the
    affinity check.  ``series-tail-certified`` maximizes the truncated series
    over vertices, a Latin-hypercube sample and local refinements, and adds a
    rigorous truncation tail bound.  ``grid-sampled`` is the same search on the
    exact residual without the tail term and is not flagged as certified.
    """
    _check_order(order)
    _check_period(T)
    if sys.is_discrete:
        raise ModelError("error bounds need a continuous-time model")
    groups = parameter_groups(sys)
    k = len(groups)
    box = ParameterBox.unit(groups)
    verts = box.vertices()
    vert_A = [_a_of(sys, groups, v) for v in verts]
    lead = abs(eps_series_coefficients(order, 2 * order + 1)[2 * order])
    vertex_values = [lead * T ** (2 * order) * np.linalg.norm(np.linalg.matrix_power(A, 2 * order), 2)
                     for A in vert_A]
    vertex_estimate = float(max(vertex_values))
    notes = []

    if method == "vertex-approx":
        if not assume_affine and not is_affine(sys):
            raise NonAffineError("vertex-approx requires A(delta) affine in the parameters; "
                                 "use series-tail-certified or pass assume_affine=True")
        if assume_affine:
            notes.append("affinity check bypassed; vertex estimate is heuristic")
        i = int(np.argmax(vertex_values))
        rep = ErrorBoundReport(order, T, method, vertex_estimate, False, None, vertex_estimate,
                               2 * order, 0.0, dict(zip(groups, verts[i].tolist())),
                               len(verts), notes)
        return (rep, [delta_eps_exact(A, T, order) for A in vert_A]) if keep_samples else rep

    if method not in ("series-tail-certified", "grid-sampled"):
        raise ModelError(f"unknown error-bound method {method!r}")

    rng = np.random.default_rng(seed)
    pts = [v for v in verts]
    if k:
        pts += list(box.sample(rng, samples))
    else:
        pts = [np.zeros(0)]
    As = vert_A + [_a_of(sys, groups, p) for p in pts[len(verts):]]
    r = max(np.linalg.norm(A * T, 2) for A in As)
    certified = method == "series-tail-certified"
    if certified:
        J = _truncation_order(order, r)
        coeffs = eps_series_coefficients(order, J + 1)

        def eps_at(A):
            return _series(A * T, coeffs)
    else:
        J = 0

        def eps_at(A):
            return delta_eps_exact(A, T, order)

    def value(d):
        return np.linalg.norm(eps_at(_a_of(sys, groups, d)), 2)

    eps_samples = [eps_at(A) for A in As]
    vals = np.array([np.linalg.norm(E, 2) for E in eps_samples])
    best = int(np.argmax(vals))
    bound, arg = float(vals[best]), pts[best]
    if k:
        order_idx = np.argsort(-vals)[:3]
        for i in order_idx:
            res = minimize(lambda d: -value(d), pts[i], method="L-BFGS-B",
                           bounds=[(-1.0, 1.0)] * k, options={"maxiter": 60})
            if -res.fun > bound:
                bound, arg = float(-res.fun), res.x
            eps_samples.append(eps_at(_a_of(sys, groups, res.x)))
            r = max(r, np.linalg.norm(_a_of(sys, groups, res.x) * T, 2))
    tail = 0.0
    if certified:
        J = _truncation_order(order, r)
        tail = _tail_bound(order, J, r)
        bound += tail
    else:
        notes.append("sampled maximum; not a certified bound")
    rep = ErrorBoundReport(order, T, method, bound, certified, None, vertex_estimate, J, tail,
                           dict(zip(groups, np.asarray(arg, dtype=float).tolist())),
                           len(eps_samples), notes)
    return (rep, eps_samples) if keep_samples else rep


def refine_entry_maxima(sys, T, order, cover: EpsCover, samples) -> EpsCover:
    """Raise each entry scale to a locally maximized magnitude over the box."""
    if cover.full or cover.empty:
        return cover
    groups = parameter_groups(sys)
    k = len(groups)
    if not k:
        return cover
    S = np.array(samples)
    box = ParameterBox.unit(groups)
    starts = box.vertices()
    start_eps = [delta_eps_exact(_a_of(sys, groups, v), T, order) for v in starts]
    scales = list(cover.scales)
    for t, (i, j) in enumerate(cover.entries):
        mags = np.array([abs(E[i, j]) for E in start_eps])
        x0 = starts[int(np.argmax(mags))]
        res = minimize(lambda d: -abs(delta_eps_exact(_a_of(sys, groups, d), T, order)[i, j]),
                       x0, method="L-BFGS-B", bounds=[(-1.0, 1.0)] * k,
                       options={"maxiter": 40})
        scales[t] = max(scales[t], float(-res.fun), float(np.max(np.abs(S[:, i, j]))))
    return EpsCover(cover.n, False, cover.bound, cover.entries, tuple(scales))


def _output_uncertain(sys: UncertainStateSpace) -> bool:
    return bool(np.any(sys.D21 != 0))


def pade_discretize(sys: UncertainStateSpace, T: float, order: int = 2, *,
                    eps: str = "reduced", method: str = "series-tail-certified",
                    samples: int = 256, seed: int = 0, assume_affine: bool = False
                    ) -> tuple[UncertainStateSpace, ErrorBoundReport]:
    """Rational LFT discretization with certified Pade residual.

    ``eps`` selects how the residual is represented: ``"full"`` (one real
    ``n x n`` block), ``"reduced"`` (one real scalar per structurally nonzero
    entry) or ``"none"`` (omit it; the result is then only an approximation).
    """
    _check_order(order)
    _check_period(T)
    if sys.is_discrete:
        raise ModelError("pade_discretize expects a continuous-time model")
    if eps not in ("full", "reduced", "none"):
        raise ModelError(f"unknown eps structure {eps!r}")
    n, N = sys.n, order
    nw, nz, m, p = sys.nw, sys.nz, len(sys.inputs), len(sys.outputs)
    A0, B1, B2, C1 = sys.A, sys.B1, sys.B2, sys.C1
    D11, D12, C2, D21, D22 = sys.D11, sys.D12, sys.C2, sys.D21, sys.D22
    out_copy = _output_uncertain(sys)
    c = pade_coefficients(N)

    # signals s = [q0, r_1 .. r_{N-1}]; inputs v = [x, w_1 .. w_N, (w_out), u]
    ns = N * n
    n_copies = N + (1 if out_copy else 0)
    nv = n + n_copies * nw + m
    xs = slice(0, n)
    ws = [slice(n + k * nw, n + (k + 1) * nw) for k in range(n_copies)]
    us = slice(n + n_copies * nw, nv)
    rs = [slice(k * n, (k + 1) * n) for k in range(N)]
    E = np.zeros((ns, ns))
    F = np.zeros((ns, nv))
    Zs = np.zeros((n_copies * nz, ns))
    Zv = np.zeros((n_copies * nz, nv))
    zr = [slice(k * nz, (k + 1) * nz) for k in range(n_copies)]
    # q0 = A xi + B1 w_1 + B2 u,  xi = x - sum_j c_j (-T)^j r_{j-1}
    F[rs[0], xs] = A0
    F[rs[0], ws[0]] = B1
    F[rs[0], us] = B2
    Zv[zr[0], xs] = C1
    Zv[zr[0], ws[0]] = D11
    Zv[zr[0], us] = D12
    for j in range(1, N + 1):
        coef = -c[j] * (-T) ** j
        E[rs[0], rs[j - 1]] += coef * A0
        Zs[zr[0], rs[j - 1]] += coef * C1
    # r_k = A r_{k-1} through its own copy of the parametric block
    for k in range(1, N):
        E[rs[k], rs[k - 1]] = A0
        F[rs[k], ws[k]] = B1
        Zs[zr[k], rs[k - 1]] = C1
        Zv[zr[k], ws[k]] = D11
    if out_copy:
        Zv[zr[N], xs] = C1
        Zv[zr[N], ws[N]] = D11
        Zv[zr[N], us] = D12
    L = np.eye(ns) - E
    if np.linalg.cond(L) > 1e12:
        raise NumericalError("Pade denominator is singular at the nominal model")
    S = np.linalg.solve(L, F)
    q0 = S[rs[0]]
    Z = Zs @ S + Zv
    Xp = T * q0
    Xp[:, xs] += np.eye(n)
    Y = np.zeros((p, nv))
    Y[:, xs] = C2
    Y[:, us] = D22
    if out_copy:
        Y[:, ws[N]] = D21

    delta = sys.delta.repeat(n_copies)
    report = None
    if eps != "none":
        report, eps_samples = error_bound(sys, T, order, method, samples=samples, seed=seed,
                                          assume_affine=assume_affine, keep_samples=True)
        if eps == "full":
            cover = EpsCover(n, True, report.bound)
        else:
            cover = reduce_eps_structure(eps_samples)
            cover = refine_entry_maxima(sys, T, order, cover, eps_samples)
        report.eps = cover
    else:
        cover = EpsCover(n, False, 0.0)
    Le, Re = cover.left_right() if not cover.empty else (np.zeros((n, 0)), np.zeros((0, n)))
    ne = Le.shape[1]
    Ze = Re @ (T * q0)
    if not cover.empty:
        delta = delta + cover.structure()

    # assemble realization: states x, inputs [w_copies, w_eps, u], outputs [z_copies, z_eps, y]
    wi = np.r_[n:n + n_copies * nw]
    ui = np.r_[us]
    A = Xp[:, xs]
    B = np.hstack([Xp[:, wi], Le, Xp[:, ui]])
    C = np.vstack([Z[:, xs], Ze[:, xs], Y[:, xs]])
    D = np.block([
        [Z[:, wi], np.zeros((Z.shape[0], ne)), Z[:, ui]],
        [Ze[:, wi], np.zeros((ne, ne)), Ze[:, ui]],
        [Y[:, wi], np.zeros((p, ne)), Y[:, ui]],
    ])
    meta = dict(sys.meta, discretization=f"pade{order}", period=T,
                eps=eps, certified=eps != "none" and bool(report and report.certified))
    model = UncertainStateSpace(A, B, C, D, delta, T, sys.inputs, sys.outputs, meta)
    if report is None:
        report = ErrorBoundReport(order, T, "none", 0.0, False, cover,
                                  notes=["Pade residual omitted"])
    return model, report


def exact_eps_values(sys: UncertainStateSpace, report: ErrorBoundReport,
                     values: Mapping) -> dict:
    """Normalized residual block values reproducing exact ZOH at ``values``."""
    if report.eps is None or report.eps.empty:
        return {}
    A = eval_at(sys, values).A if values else sys.A
    return report.eps.values(delta_eps_exact(A, report.period, report.order))


def tustin_discretize(sys: UncertainStateSpace, T: float) -> UncertainStateSpace:
    """Bilinear transform of the full realization; the LFT structure is kept."""
    _check_period(T)
    if sys.is_discrete:
        raise ModelError("tustin_discretize expects a continuous-time model")
    n = sys.n
    L = np.eye(n) - 0.5 * T * sys.A
    if n and np.linalg.cond(L) > 1e12:
        raise NumericalError("I - T/2 A is singular; Tustin transform undefined")
    Linv = np.linalg.inv(L) if n else L
    Ad = Linv @ (np.eye(n) + 0.5 * T * sys.A)
    Bd = T * Linv @ sys.B
    Cd = sys.C @ Linv
    Dd = sys.D + 0.5 * sys.C @ Bd
    meta = dict(sys.meta, discretization="tustin", period=T, certified=False)
    return sys.replace(A=Ad, B=Bd, C=Cd, D=Dd, dt=T, meta=meta)


def full_zoh_discretize(sys: UncertainStateSpace, T: float) -> UncertainStateSpace:
    """ZOH of the realization with the perturbation channels treated as held inputs."""
    d = zoh_exact(StateSpace(sys.A, sys.B, sys.C, sys.D), T)
    meta = dict(sys.meta, discretization="full-zoh", period=T, certified=False)
    return sys.replace(A=d.A, B=d.B, dt=T, meta=meta)
