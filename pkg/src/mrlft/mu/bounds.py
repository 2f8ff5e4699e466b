"""Upper and lower bounds of the mixed structured singular value at one frequency.

Upper bound: for any ``D > 0`` commuting with Delta and Hermitian ``G`` on the
real scalar blocks,

    M^H D_z M + j (G M - M^H G^H) <= beta^2 D_w   implies   mu(M) <= beta.

The smallest ``beta^2`` for given scalings is the top generalized eigenvalue
of the pencil ``(M^H D_z M + j(GM - M^H G^H), D_w)``; it is minimized over the
scalings with a quasi-Newton method on a soft-max smoothing of that
eigenvalue.  Whatever scalings the optimizer stops at, the reported bound is
the exact eigenvalue for them, so it is always valid.

Lower bound: any structured ``Delta`` with ``det(I - M Delta) = 0`` certifies
``mu(M) >= 1 / ||Delta||``.  The search minimizes ``||Delta||`` subject to
``M Delta`` having the eigenvalue 1, by sequential linear programming on the
tracked eigenvalue from several scanned starting points.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular
from scipy.optimize import linprog, minimize

from ..lft import BlockStructure
from .structure import MuStructure


def _tril_count(r):
    return r * (r - 1) // 2


class UpperBoundProblem:
    """Scaling parametrization for one compiled structure.

    Coordinates are permuted so every block is contiguous.  A real repeated
    scalar block of size ``r`` carries a lower-triangular factor ``L`` (log
    diagonal, complex strict lower part) with ``D = L L^H``, and a Hermitian
    ``G^ = L^-1 G L^-H``; a full block carries ``log d``.  With
    ``M~ = Lz^H M Lw^-H`` the pencil reduces to the Hermitian matrix
    ``H = M~^H M~ + j (G^ M~ - M~^H G^^H)`` whose top eigenvalue is ``beta^2``.
    """

    def __init__(self, struct: MuStructure):
        self.struct = struct
        blocks = struct.blocks
        self.perm_w = np.concatenate([b.w_idx for b in blocks]) if blocks else np.zeros(0, int)
        self.perm_z = np.concatenate([b.z_idx for b in blocks]) if blocks else np.zeros(0, int)
        layout = []
        pos, wpos, zpos = 0, 0, 0
        # scatter maps: (w position, z position, parameter, exponent factor)
        dw, dz = [], []
        off = []   # (w row, w col, z row, z col, re param, im param)
        gd = []    # (w pos, z pos, param)
        go = []    # (w i, z j, w j, z i, re param, im param)
        for b in blocks:
            nwb, nzb = len(b.w_idx), len(b.z_idx)
            if b.kind == "real":
                r = nwb
                k = r * r
                ls, gs = slice(pos, pos + k), slice(pos + k, pos + 2 * k)
                for i in range(r):
                    dw.append((wpos + i, pos + i, 1.0))
                    dz.append((zpos + i, pos + i, 1.0))
                    gd.append((wpos + i, zpos + i, gs.start + i))
                kk = _tril_count(r)
                for t, (i, j) in enumerate(zip(*np.tril_indices(r, -1))):
                    off.append((wpos + i, wpos + j, zpos + i, zpos + j,
                                pos + r + t, pos + r + kk + t))
                    go.append((wpos + i, zpos + j, wpos + j, zpos + i,
                               gs.start + r + t, gs.start + r + kk + t))
                layout.append(("real", b, ls, gs, slice(wpos, wpos + r), slice(zpos, zpos + r)))
                pos += 2 * k
            else:
                for i in range(nwb):
                    dw.append((wpos + i, pos, 0.5))
                for i in range(nzb):
                    dz.append((zpos + i, pos, 0.5))
                layout.append(("full", b, slice(pos, pos + 1), None,
                               slice(wpos, wpos + nwb), slice(zpos, zpos + nzb)))
                pos += 1
            wpos += nwb
            zpos += nzb
        self.layout = layout
        self.size = pos
        self.nw, self.nz = wpos, zpos
        as_int = lambda rows, n: tuple(np.array([r[c] for r in rows], dtype=int) for c in range(n))
        self._dw = as_int(dw, 2) + (np.array([r[2] for r in dw]),)
        self._dz = as_int(dz, 2) + (np.array([r[2] for r in dz]),)
        self._off = as_int(off, 6) if off else tuple(np.zeros(0, int) for _ in range(6))
        self._gd = as_int(gd, 3) if gd else tuple(np.zeros(0, int) for _ in range(3))
        self._go = as_int(go, 6) if go else tuple(np.zeros(0, int) for _ in range(6))
        self._diag_params = np.array(sorted(set(self._dw[1]) | set(self._dz[1])), dtype=int)
        self._full = np.array([l[2].start for l in layout if l[0] == "full"], dtype=int)

    def permute(self, M: np.ndarray) -> np.ndarray:
        return M[np.ix_(self.perm_z, self.perm_w)]

    def initial(self, Mp: np.ndarray, sweeps: int = 8) -> np.ndarray:
        """Frobenius-balanced block scalings with ``G = 0``."""
        wsz = np.array([l[4].stop - l[4].start for l in self.layout])
        zsz = np.array([l[5].stop - l[5].start for l in self.layout])
        d = np.ones(len(self.layout))
        A = np.abs(Mp) ** 2
        for _ in range(sweeps):
            for i, (_, _, _, _, ws, zs) in enumerate(self.layout):
                sz = np.repeat(d, zsz)
                sw = np.repeat(d, wsz)
                col = np.sum(A[:, ws] * sz[:, None]) / d[i]
                row = np.sum(A[zs, :] / sw[None, :]) * d[i]
                if row > 0 and col > 0:
                    d[i] *= np.sqrt(col / row)
            d /= np.exp(np.mean(np.log(d)))
        theta = np.zeros(self.size)
        for di, (kind, b, ls, gs, ws, zs) in zip(d, self.layout):
            if kind == "real":
                r = ws.stop - ws.start
                theta[ls.start:ls.start + r] = 0.5 * np.log(di)
            else:
                theta[ls] = np.log(di)
        return theta

    def factors(self, theta):
        """Block-diagonal square roots of the ``D`` scalings on the w and z sides."""
        Lw = np.zeros((self.nw, self.nw), dtype=complex)
        Lz = np.zeros((self.nz, self.nz), dtype=complex)
        pw, kw, fw = self._dw
        pz, kz, fz = self._dz
        Lw[pw, pw] = np.exp(fw * theta[kw])
        Lz[pz, pz] = np.exp(fz * theta[kz])
        wr, wc, zr, zc, re, im = self._off
        vals = theta[re] + 1j * theta[im]
        Lw[wr, wc] = vals
        Lz[zr, zc] = vals
        return Lw, Lz

    def ghat(self, theta):
        G = np.zeros((self.nw, self.nz), dtype=complex)
        w, z, k = self._gd
        G[w, z] = theta[k]
        wi, zj, wj, zi, re, im = self._go
        G[wi, zj] = theta[re] + 1j * theta[im]
        G[wj, zi] = theta[re] - 1j * theta[im]
        return G

    def scaled(self, Mp, theta):
        """``Lz^H M Lw^-H``: the matrix seen by the ``D`` part of ``theta``."""
        Lw, Lz = self.factors(theta)
        X = solve_triangular(Lw, np.eye(self.nw), lower=True, check_finite=False)
        return Lz.conj().T @ Mp @ X.conj().T

    def hermitian(self, Mp, theta):
        Mt = self.scaled(Mp, theta)
        GM = self.ghat(theta) @ Mt
        H = Mt.conj().T @ Mt + 1j * (GM - GM.conj().T)
        return 0.5 * (H + H.conj().T), Mt

    def value(self, Mp, theta) -> float:
        if not Mp.size:
            return 0.0
        H, _ = self.hermitian(Mp, theta)
        return float(np.sqrt(max(np.linalg.eigvalsh(H)[-1], 0.0)))

    def objective(self, Mp, theta, t):
        """Soft-max of the eigenvalues of ``H`` and its gradient."""
        Lw, Lz = self.factors(theta)
        Xw = solve_triangular(Lw, np.eye(self.nw), lower=True, check_finite=False)
        Xz = solve_triangular(Lz, np.eye(self.nz), lower=True, check_finite=False)
        Mt = Lz.conj().T @ Mp @ Xw.conj().T
        Gh = self.ghat(theta)
        GM = Gh @ Mt
        H = Mt.conj().T @ Mt + 1j * (GM - GM.conj().T)
        lam, U = np.linalg.eigh(0.5 * (H + H.conj().T))
        top = lam[-1]
        e = np.exp(t * (lam - top))
        keep = e > 1e-12
        wts = e[keep] / e[keep].sum()
        f = top + np.log(np.sum(e)) / t
        U = U[:, keep]
        V = Mt @ U
        Aa = V - 1j * (Gh.conj().T @ U)
        Sz = (V * wts) @ Aa.conj().T
        Sw = (U * wts) @ (Mt.conj().T @ Aa).conj().T
        Wz = Xz.conj().T @ Sz
        Ww = Xw.conj().T @ Sw
        Q = (U.conj() * wts) @ V.T
        grad = np.zeros(self.size)
        pw, kw, fw = self._dw
        pz, kz, fz = self._dz
        np.add.at(grad, kz, 2 * fz * np.real(Wz[pz, pz]) * np.exp(fz * theta[kz]))
        np.add.at(grad, kw, -2 * fw * np.real(Ww[pw, pw]) * np.exp(fw * theta[kw]))
        wr, wc, zr, zc, re, im = self._off
        dlt = Wz[zr, zc] - Ww[wr, wc]
        grad[re] += 2 * dlt.real
        grad[im] += 2 * dlt.imag
        Gam = 2j * Q
        w, z, k = self._gd
        grad[k] += np.real(Gam[w, z])
        wi, zj, wj, zi, re, im = self._go
        grad[re] += np.real(Gam[wi, zj] + Gam[wj, zi])
        grad[im] += np.real(1j * (Gam[wi, zj] - Gam[wj, zi]))
        return f, grad

    def rebase(self, theta):
        """Local coordinates after absorbing the ``D`` part of ``theta`` into M."""
        loc = theta.copy()
        for kind, b, ls, gs, ws, zs in self.layout:
            loc[ls] = 0.0
        return loc

    def compose(self, theta, loc):
        out = loc.copy()
        for kind, b, ls, gs, ws, zs in self.layout:
            if kind == "real":
                r = ws.stop - ws.start
                L = _lower(theta[ls], r) @ _lower(loc[ls], r)
                q = np.empty(r * r)
                q[:r] = np.log(np.real(np.diag(L)))
                if r > 1:
                    i, j = np.tril_indices(r, -1)
                    k = _tril_count(r)
                    q[r:r + k] = L[i, j].real
                    q[r + k:] = L[i, j].imag
                out[ls] = q
            else:
                out[ls] = theta[ls] + loc[ls]
        return out

    def optimize(self, M, theta0=None, maxiter=60, tol=1e-7, stages=8, stop_below=None):
        """Minimize the bound; returns ``(bound, theta)``.

        Each stage absorbs the current ``D`` scalings into M and restarts from
        the identity, which keeps the smoothed problem well conditioned even
        when the optimal scalings span many orders of magnitude.  Any scaling
        gives a valid bound, so the search ends once the bound is below
        ``stop_below``.
        """
        Mp = self.permute(np.asarray(M, dtype=complex))
        if not self.size or not Mp.size:
            return 0.0, np.zeros(self.size)
        theta = self.initial(Mp)
        best_val = self.value(Mp, theta)
        if theta0 is not None:
            v = self.value(Mp, np.asarray(theta0, dtype=float))
            if v < best_val:
                best_val, theta = v, np.array(theta0, dtype=float)
        best = theta
        done = lambda: best_val == 0.0 or (stop_below is not None and best_val < stop_below)
        if done():
            return best_val, best
        for _ in range(stages):
            start_val = best_val
            try:
                with np.errstate(all="ignore"):
                    Mt = self.scaled(Mp, theta)
                    loc = self.rebase(theta)
                    bounds = self.bounds(loc)
                    for rel in (30.0, 300.0, 3000.0):
                        scale = max(best_val ** 2, 1e-300)
                        res = minimize(self._scaled, loc, args=(Mt, rel / scale, scale),
                                       jac=True, method="L-BFGS-B", bounds=bounds,
                                       options={"maxiter": maxiter, "gtol": tol,
                                                "ftol": 1e-13})
                        if not np.all(np.isfinite(res.x)):
                            continue
                        loc = res.x
                        cand = self.compose(theta, loc)
                        v = self.value(Mp, cand)
                        if np.isfinite(v) and v < best_val:
                            best_val, best = v, cand
                            if done():
                                return best_val, best
            except (np.linalg.LinAlgError, ValueError):
                break
            if best is theta or best_val > start_val * (1 - 1e-4):
                break
            theta = best
        return best_val, best

    def _scaled(self, theta, Mp, t, scale):
        f, g = self.objective(Mp, theta, t)
        return f / scale, g / scale

    def bounds(self, theta):
        """Box keeping one stage's scalings finite."""
        lo = np.full(self.size, -1e4)
        hi = np.full(self.size, 1e4)
        for kind, b, ls, gs, ws, zs in self.layout:
            r = ws.stop - ws.start if kind == "real" else 1
            idx = np.arange(ls.start, ls.start + r)
            lo[idx] = theta[idx] - 12
            hi[idx] = theta[idx] + 12
        return list(zip(lo, hi))

    def sensitivities(self, M, theta, names, h=1e-3) -> dict:
        """Decrease of the bound per unit shrinkage of each named block's radius."""
        Mp = self.permute(np.asarray(M, dtype=complex))
        base = self.value(Mp, theta)
        out = {}
        for kind, b, ls, gs, ws, zs in self.layout:
            if b.name not in names:
                continue
            Mh = Mp.copy()
            Mh[zs] *= 1 - h
            out[b.name] = (base - self.value(Mh, theta)) / h
        return out


def _lower(p, r):
    L = np.diag(np.exp(p[:r])).astype(complex)
    if r > 1:
        k = _tril_count(r)
        i, j = np.tril_indices(r, -1)
        L[i, j] = p[r:r + k] + 1j * p[r + k:r + 2 * k]
    return L


@dataclass
class MuUpper:
    value: float
    theta: np.ndarray


def mu_upper_bound(M, delta: BlockStructure | MuStructure, theta0=None,
                   maxiter: int = 60) -> MuUpper:
    struct = delta if isinstance(delta, MuStructure) else MuStructure.compile(delta)
    prob = UpperBoundProblem(struct)
    v, th = prob.optimize(M, theta0, maxiter=maxiter)
    return MuUpper(v, th)


@dataclass
class MuLower:
    """Lower bound with its certificate ``delta``: a structured perturbation of
    size ``1 / value`` making ``I - M delta`` singular."""

    value: float
    delta: np.ndarray | None = None
    residual: float = float("nan")


def _eig_lr(A):
    from scipy.linalg import eig

    return eig(A, left=True, right=True)


def _closest(A, target):
    w, vl, vr = _eig_lr(A)
    i = int(np.argmin(np.abs(w - target)))
    return w[i], vl[:, i], vr[:, i]


class _LowerSearch:
    """Minimum-norm structured perturbation with ``M Delta`` having eigenvalue 1.

    Real scalar blocks carry a value each; full blocks are rank-one dyads
    ``r exp(j phi) x y^H`` whose directions are re-aligned with the current
    eigenvectors every iteration.  Steps solve an LP in the linearized
    eigenvalue constraint with the infinity norm as objective.
    """

    def __init__(self, M, struct: MuStructure):
        self.M = np.asarray(M, dtype=complex)
        self.s = struct
        self.real = struct.real_blocks()
        self.full = struct.full_blocks()
        self.cplx = [k for k, b in enumerate(self.full) if not b.real]

    def build(self, p, dirs):
        nr, nf = len(self.real), len(self.full)
        D = np.zeros((self.s.nw, self.s.nz), dtype=complex)
        for b, v in zip(self.real, p[:nr]):
            D[b.w_idx, b.z_idx] = v
        phases = dict(zip(self.cplx, p[nr + nf:]))
        for k, (b, (x, y)) in enumerate(zip(self.full, dirs)):
            val = p[nr + k] * np.outer(x, y.conj())
            D[np.ix_(b.w_idx, b.z_idx)] = val * np.exp(1j * phases.get(k, 0.0))
        return D

    def align(self, p, dirs, l, u):
        """Directions maximizing each dyad's first-order effect on the eigenvalue."""
        nr, nf = len(self.real), len(self.full)
        lhM = l.conj() @ self.M
        out = []
        p = p.copy()
        for k, b in enumerate(self.full):
            x = lhM[b.w_idx].conj()
            y = u[b.z_idx]
            if b.real:
                x, y = x.real, y.real
            nx, ny = np.linalg.norm(x), np.linalg.norm(y)
            if nx < 1e-300 or ny < 1e-300:
                out.append(dirs[k])
                continue
            out.append((x / nx, y / ny))
        if self.cplx:
            denom = l.conj() @ u
            for j, k in enumerate(self.cplx):
                b = self.full[k]
                x, y = out[k]
                c = lhM[b.w_idx] @ x * (y.conj() @ u[b.z_idx]) / denom
                p[nr + nf + j] = -np.angle(c)
        return p, out

    def jac(self, p, dirs, l, u):
        """Derivatives of the tracked eigenvalue with respect to ``p``."""
        nr, nf = len(self.real), len(self.full)
        lhM = l.conj() @ self.M
        denom = l.conj() @ u
        g = np.zeros(len(p), dtype=complex)
        for i, b in enumerate(self.real):
            g[i] = np.sum(lhM[b.w_idx] * u[b.z_idx])
        phases = dict(zip(self.cplx, p[nr + nf:]))
        for k, (b, (x, y)) in enumerate(zip(self.full, dirs)):
            c = (lhM[b.w_idx] @ x) * (y.conj() @ u[b.z_idx]) * np.exp(1j * phases.get(k, 0.0))
            g[nr + k] = c
            if k in phases:
                g[nr + nf + self.cplx.index(k)] = 1j * p[nr + k] * c
        return g / denom

    def norm(self, p):
        nr, nf = len(self.real), len(self.full)
        return float(np.max(np.abs(p[:nr + nf]))) if nr + nf else 0.0

    def restore(self, p, dirs, lam, iters=30):
        """Gauss-Newton on ``lam(p) = 1`` with minimum-norm corrections."""
        M = self.M
        prev = np.inf
        for _ in range(iters):
            A = M @ self.build(p, dirs)
            if not np.all(np.isfinite(A)):
                return p, complex(np.nan)
            w, l, u = _closest(A, lam)
            lam = w
            err = abs(lam - 1)
            # quadratic convergence stalls at rounding level
            if err < 1e-13 or err > 0.5 * prev:
                break
            prev = err
            g = self.jac(p, dirs, l, u)
            J = np.vstack([g.real, g.imag])
            r = np.array([1 - lam.real, -lam.imag])
            step = np.linalg.lstsq(J, r, rcond=None)[0]
            p = p + step
        return p, lam

    def run(self, p0, dirs, lam0, iters=60):
        M = self.M
        nr, nf = len(self.real), len(self.full)
        npar = len(p0)
        nn = nr + nf
        # scale so the tracked eigenvalue has unit modulus, then restore
        p = p0.copy()
        p[:nn] /= abs(lam0)
        lam = lam0 / abs(lam0)
        p, lam = self.restore(p, dirs, lam)
        if not abs(lam - 1) <= 1e-6:
            return None
        rho = 0.5 * max(self.norm(p), 1e-3)
        for _ in range(iters):
            w, l, u = _closest(M @ self.build(p, dirs), lam)
            if nf:
                p2, d2 = self.align(p, dirs, l, u)
                p2, lam2 = self.restore(p2, d2, w)
                if abs(lam2 - 1) < 1e-9 and self.norm(p2) < self.norm(p) * (1 - 1e-12):
                    p, dirs, lam = p2, d2, lam2
                    w, l, u = _closest(M @ self.build(p, dirs), lam)
            g = self.jac(p, dirs, l, u)
            s0 = self.norm(p)
            # variables: dp (npar), s ; minimize s
            c = np.zeros(npar + 1)
            c[-1] = 1.0
            A_eq = np.hstack([np.vstack([g.real, g.imag]), np.zeros((2, 1))])
            b_eq = np.array([1 - w.real, -w.imag])
            rows, rhs = [], []
            for i in range(nn):
                e = np.zeros(npar + 1)
                e[i], e[-1] = 1.0, -1.0
                rows.append(e)
                rhs.append(-p[i])
                e = np.zeros(npar + 1)
                e[i], e[-1] = -1.0, -1.0
                rows.append(e)
                rhs.append(p[i])
            ph = min(np.pi / 4, rho / max(s0, 1e-300))
            bnds = [(-rho, rho)] * nn + [(-ph, ph)] * (npar - nn) + [(0, None)]
            res = linprog(c, A_ub=np.array(rows), b_ub=np.array(rhs), A_eq=A_eq, b_eq=b_eq,
                          bounds=bnds, method="highs")
            if res.status != 0:
                rho *= 0.3
                if rho < 1e-10 * max(s0, 1e-300):
                    break
                continue
            trial, lam_t = self.restore(p + res.x[:npar], dirs, w)
            if abs(lam_t - 1) < 1e-9 and self.norm(trial) < s0 * (1 - 1e-12):
                gain = s0 - self.norm(trial)
                p, lam = trial, lam_t
                if gain < 1e-12 * s0:
                    break
                rho = min(rho * 2, 2 * s0)
            else:
                rho *= 0.3
                if rho < 1e-10 * s0:
                    break
        return p, dirs

    def start(self, x, rng):
        """Parameter vector and dyad directions from real values ``x``."""
        nf = len(self.full)
        dirs = []
        for b in self.full:
            a = rng.standard_normal(len(b.w_idx)) + (0 if b.real else 1j) * rng.standard_normal(len(b.w_idx))
            c = rng.standard_normal(len(b.z_idx)) + (0 if b.real else 1j) * rng.standard_normal(len(b.z_idx))
            dirs.append((a / np.linalg.norm(a), c / np.linalg.norm(c)))
        p = np.concatenate([x, np.ones(nf), np.zeros(len(self.cplx))])
        return p, dirs


def _scan(search, rng, x_list, keep):
    """Score start points by their largest nearly real eigenvalue of ``M Delta``.

    A negative eigenvalue is turned positive by negating the real values.
    """
    cands = []
    for x in x_list:
        p, dirs = search.start(x, rng)
        ev = np.linalg.eigvals(search.M @ search.build(p, dirs))
        if not len(ev):
            continue
        i = int(np.argmax(np.abs(ev.real) - np.abs(ev.imag)))
        lam = ev[i]
        if abs(lam) < 1e-300:
            continue
        sgn = 1.0 if lam.real >= 0 else -1.0
        # real values flip sign; full dyads absorb the sign through their direction
        p[:len(search.real)] *= sgn
        dirs = [(sgn * xx, y) for xx, y in dirs]
        cands.append((abs(lam.real) - abs(lam.imag), p, dirs, sgn * lam))
    cands.sort(key=lambda c: -c[0])
    out = []
    nr = len(search.real)
    for c in cands:
        if not nr or all(np.max(np.abs(c[1][:nr] - o[1][:nr])) > 0.25 for o in out):
            out.append(c)
        if len(out) >= keep:
            break
    return out


def mu_lower_bound(M, delta: BlockStructure | MuStructure, starts: int = 8, seed: int = 0,
                   initial=None, tol: float = 1e-8, scan: int = 64) -> MuLower:
    """Structured perturbation search; returns a verified lower bound and its certificate."""
    struct = delta if isinstance(delta, MuStructure) else MuStructure.compile(delta)
    M = np.asarray(M, dtype=complex)
    if not np.any(M) or not struct.blocks:
        return MuLower(0.0)
    if len(struct.blocks) == 1 and (struct.blocks[0].kind == "real" or not struct.blocks[0].real):
        return _single_block(M, struct, tol)
    rng = np.random.default_rng(seed)
    search = _LowerSearch(M, struct)
    nr = len(search.real)
    xs = []
    if initial is not None:
        xs.append(np.clip(np.asarray(initial, dtype=float), -1, 1))
    xs += [np.ones(nr), -np.ones(nr)]
    if nr <= 6:
        xs += [2.0 * np.array(v) - 1 for v in np.ndindex(*(2,) * nr)]
    xs += [rng.uniform(-1, 1, nr) for _ in range(scan)]
    best = MuLower(0.0)
    for _, p0, dirs, lam0 in _scan(search, rng, xs, starts):
        out = search.run(p0, dirs, lam0)
        if out is None:
            continue
        p, dirs = out
        cand = _verify(M, struct, search.build(p, dirs), tol)
        if cand is not None and cand.value > best.value:
            best = cand
    return best


def _verify(M, struct, Delta, tol):
    """``mu >= 1 / ||Delta||`` if ``I - M Delta`` is numerically singular."""
    size = struct.delta_norm(Delta)
    if size <= 0:
        return None
    I = np.eye(M.shape[0])
    smin = np.linalg.svd(I - M @ Delta, compute_uv=False)[-1]
    if smin > tol * max(1.0, np.linalg.norm(M @ Delta, 2)):
        return None
    return MuLower(float(1 / size), Delta, float(smin))


def _single_block(M, struct, tol):
    """Exact mu for one repeated real scalar or one complex full block."""
    b = struct.blocks[0]
    N = M[np.ix_(b.z_idx, b.w_idx)]
    if b.kind == "real":
        lam = np.linalg.eigvals(N)
        real = lam[np.abs(lam.imag) <= 1e-10 * np.maximum(np.abs(lam), 1e-300)]
        real = real[np.abs(real) > 0]
        if not len(real):
            return MuLower(0.0)
        top = real[np.argmax(np.abs(real))].real
        Delta = struct.delta({b.name: 1 / top})
    else:
        U, sv, Vh = np.linalg.svd(N)
        if sv[0] <= 0:
            return MuLower(0.0)
        Delta = struct.delta(full_values={b.name: np.outer(Vh[0].conj(), U[:, 0].conj()) / sv[0]})
    return _verify(M, struct, Delta, tol) or MuLower(0.0)
