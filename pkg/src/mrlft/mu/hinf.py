"""H-infinity norm by level-crossing bisection, and the bilinear map to continuous time.

For a level ``gamma`` the frequencies where ``sigma_max(G) = gamma`` are the
eigenvalues of a pencil on the imaginary axis (continuous) or on the unit
circle (discrete).  The lower level is raised to the largest gain found at
the midpoints between crossings until no crossing remains above it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import eigvals
from scipy.optimize import minimize_scalar

from ..errors import NumericalError
from ..lft import StateSpace, UncertainStateSpace


@dataclass(frozen=True)
class HinfResult:
    value: float
    frequency: float  # rad/s; for discrete systems, physical frequency theta / dt

    @property
    def finite(self) -> bool:
        return bool(np.isfinite(self.value))


def _gain(sys: StateSpace, w: float) -> float:
    s = np.exp(1j * w * sys.dt) if sys.is_discrete else 1j * w
    G = sys.evaluate(s)
    return float(np.linalg.norm(G, 2)) if G.size else 0.0


def _crossings(sys: StateSpace, gamma: float, tol: float) -> np.ndarray:
    """Frequencies (rad/s, nonnegative) where some singular value equals ``gamma``."""
    A, B, C, D = sys.A, sys.B, sys.C, sys.D
    n, m = sys.n, sys.m
    R = gamma ** 2 * np.eye(m) - D.T @ D
    Z = np.zeros
    if sys.is_discrete:
        F = np.block([[A, Z((n, n)), B],
                      [Z((n, n)), -np.eye(n), Z((n, m))],
                      [D.T @ C, B.T, -R]])
        E = np.block([[np.eye(n), Z((n, n)), Z((n, m))],
                      [-C.T @ C, -A.T, -C.T @ D],
                      [Z((m, n)), Z((m, n)), Z((m, m))]])
        ev = eigvals(F, E)
        ev = ev[np.isfinite(ev)]
        on = np.abs(np.abs(ev) - 1) < tol
        th = np.abs(np.angle(ev[on]))
        return np.sort(th / sys.dt)
    F = np.block([[A, Z((n, n)), B],
                  [-C.T @ C, -A.T, -C.T @ D],
                  [D.T @ C, B.T, -R]])
    E = np.block([[np.eye(n), Z((n, n)), Z((n, m))],
                  [Z((n, n)), np.eye(n), Z((n, m))],
                  [Z((m, n)), Z((m, n)), Z((m, m))]])
    ev = eigvals(F, E)
    ev = ev[np.isfinite(ev)]
    on = np.abs(ev.real) < tol * np.maximum(1.0, np.abs(ev))
    return np.sort(np.abs(ev[on].imag))


def _test_frequencies(sys: StateSpace) -> list:
    ev = sys.poles()
    if sys.is_discrete:
        ws = [0.0, np.pi / sys.dt] + list(np.abs(np.angle(ev)) / sys.dt)
    else:
        ws = [0.0] + list(np.abs(ev))
        ws += [abs(e.imag) for e in ev if e.imag]
    return sorted(set(float(w) for w in ws))


def hinf_norm(sys: StateSpace, rtol: float = 1e-6, max_iter: int = 60) -> HinfResult:
    """Peak gain over frequency; an unstable system yields an infinite norm."""
    if isinstance(sys, UncertainStateSpace):
        sys = sys.nominal()
    if sys.n and not sys.is_stable():
        return HinfResult(np.inf, np.nan)
    if not sys.m or not sys.p:
        return HinfResult(0.0, 0.0)
    if not sys.n:
        return HinfResult(float(np.linalg.norm(sys.D, 2)), 0.0)
    wmax = np.pi / sys.dt if sys.is_discrete else np.inf
    best_w, lo = 0.0, -1.0
    for w in _test_frequencies(sys):
        g = _gain(sys, w)
        if g > lo:
            lo, best_w = g, w
    dnorm = float(np.linalg.norm(sys.D, 2))
    if dnorm > lo:
        lo, best_w = dnorm, (wmax if sys.is_discrete else np.inf)
    if lo == 0.0:
        return HinfResult(0.0, 0.0)
    for _ in range(max_iter):
        gamma = lo * (1 + 2 * rtol)
        ws = _crossings(sys, gamma, 1e-7)
        if not len(ws):
            break
        # a crossing pair brackets an interval where the gain exceeds gamma
        cand = list((ws[:-1] + ws[1:]) / 2) + list(ws)
        improved = False
        for w in cand:
            if w > wmax:
                continue
            g = _gain(sys, w)
            if g > lo * (1 + rtol):
                lo, best_w, improved = g, w, True
        if not improved:
            break
    else:
        raise NumericalError("H-infinity bisection did not converge")
    if np.isfinite(best_w):
        lo, best_w = _polish(sys, lo, best_w, wmax)
    return HinfResult(float(lo), float(best_w))


def _polish(sys, lo, w0, wmax):
    """Maximize the gain inside the crossing interval just below the peak."""
    ws = _crossings(sys, lo * (1 - 1e-6), 1e-7)
    a, b = max(w0 * (1 - 1e-2), 0.0), w0 * (1 + 1e-2) + 1e-9
    for w1, w2 in zip(ws[:-1], ws[1:]):
        if w1 <= w0 <= w2 and w2 - w1 < b - a:
            a, b = w1, w2
    b = min(b, wmax)
    if b <= a:
        return lo, w0
    res = minimize_scalar(lambda w: -_gain(sys, w), bounds=(a, b), method="bounded",
                          options={"xatol": 1e-14 * max(w0, 1.0), "maxiter": 200})
    if -res.fun > lo:
        return float(-res.fun), float(res.x)
    return lo, w0


def bilinear_to_continuous(sys, k: float = 1.0):
    """``P(s) = M((k + s) / (k - s))``: unit disk to left half plane, structure kept.

    The map is applied to the full realization, so the perturbation channels
    and their block structure pass through unchanged.  ``I + A`` must be
    invertible (no discrete pole at ``z = -1``).
    """
    if not k > 0:
        raise NumericalError("bilinear parameter must be positive")
    if not sys.is_discrete:
        raise NumericalError("bilinear_to_continuous expects a discrete-time model")
    A, B, C, D = sys.A, sys.B, sys.C, sys.D
    n = A.shape[0]
    P = np.eye(n) + A
    if n and np.linalg.cond(P) > 1e12:
        raise NumericalError("discrete pole at z = -1 maps to infinity")
    Pinv = np.linalg.inv(P) if n else P
    r = np.sqrt(2 * k)
    Ac = k * Pinv @ (A - np.eye(n))
    Bc = r * Pinv @ B
    Cc = r * C @ Pinv
    Dc = D - C @ Pinv @ B
    if isinstance(sys, UncertainStateSpace):
        meta = dict(sys.meta, bilinear=k, period=sys.dt)
        return sys.replace(A=Ac, B=Bc, C=Cc, D=Dc, dt=None, meta=meta)
    return StateSpace(Ac, Bc, Cc, Dc, None, sys.inputs, sys.outputs)


def continuous_frequency(theta: float, k: float = 1.0) -> float:
    """Frequency of ``P(s)`` matching the discrete angle ``theta`` (radians per sample)."""
    return float(k * np.tan(theta / 2))


def discrete_angle(nu: float, k: float = 1.0) -> float:
    return float(2 * np.arctan(nu / k))
