"""Uncertain state-space models in linear fractional form.

An uncertain model is stored as one constant realization whose first input
channels ``w_delta`` and first output channels ``z_delta`` are closed by a
block-diagonal perturbation ``w_delta = Delta z_delta``::

    [ x+      ]   [ A   B1   B2  ] [ x       ]
    [ z_delta ] = [ C1  D11  D12 ] [ w_delta ]
    [ y       ]   [ C2  D21  D22 ] [ u       ]

The constant matrix ``[[D11, C1, D12], [B1, A, B2], [D21, C2, D22]]`` is the
coefficient of an upper LFT, so instantiating the model at a given Delta is a
single ``upper_lft`` evaluation.  Blocks sharing a ``group`` are the same
physical parameter; this is how repeated occurrences survive downsampling and
augmentation.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import AlgebraicLoopError, IllPosedLFTError, ModelError

log = logging.getLogger(__name__)

RCOND_TOL = 1e-12
ROLES = ("parameter", "error", "performance")


class BlockKind(str, Enum):
    REAL_SCALAR = "real-scalar"
    REAL_FULL = "real-full"
    COMPLEX_FULL = "complex-full"


@dataclass(frozen=True)
class BlockSpec:
    """One diagonal block of Delta.

    ``rows`` is the number of ``w_delta`` channels (outputs of the block) and
    ``cols`` the number of ``z_delta`` channels feeding it.  A real scalar block
    is ``delta * I_rows``.
    """

    name: str
    kind: BlockKind
    rows: int
    cols: int | None = None
    group: str | None = None
    role: str = "parameter"

    def __post_init__(self):
        object.__setattr__(self, "kind", BlockKind(self.kind))
        if self.cols is None:
            object.__setattr__(self, "cols", self.rows)
        if self.group is None:
            object.__setattr__(self, "group", self.name)
        if self.rows < 1 or self.cols < 1:
            raise ModelError(f"block {self.name!r} must have positive size")
        if self.kind is BlockKind.REAL_SCALAR and self.rows != self.cols:
            raise ModelError(f"repeated scalar block {self.name!r} must be square")
        if self.role not in ROLES:
            raise ModelError(f"unknown block role {self.role!r}")

    @property
    def is_real(self) -> bool:
        return self.kind is not BlockKind.COMPLEX_FULL

    @property
    def is_scalar(self) -> bool:
        return self.kind is BlockKind.REAL_SCALAR

    def value_matrix(self, value) -> np.ndarray:
        v = np.asarray(value)
        if self.is_real and np.iscomplexobj(v) and np.any(np.imag(v) != 0):
            raise ModelError(f"complex value for real block {self.name!r}")
        if self.is_real:
            v = np.real(v)
        if self.is_scalar:
            if v.size != 1:
                raise ModelError(f"block {self.name!r} expects a scalar value")
            return v.reshape(()) * np.eye(self.rows)
        if v.size == 1 and self.rows == self.cols == 1:
            return v.reshape(1, 1)
        if v.shape != (self.rows, self.cols):
            raise ModelError(
                f"block {self.name!r} expects shape {(self.rows, self.cols)}, got {v.shape}"
            )
        return v


@dataclass(frozen=True)
class BlockStructure:
    blocks: tuple[BlockSpec, ...] = ()

    def __post_init__(self):
        blocks = tuple(self.blocks)
        object.__setattr__(self, "blocks", blocks)
        names = [b.name for b in blocks]
        if len(set(names)) != len(names):
            raise ModelError(f"duplicate block names in {names}")
        kinds = {}
        for b in blocks:
            if kinds.setdefault(b.group, b.kind) is not b.kind:
                raise ModelError(f"group {b.group!r} mixes block kinds")

    def __len__(self):
        return len(self.blocks)

    def __iter__(self):
        return iter(self.blocks)

    def __getitem__(self, key):
        if isinstance(key, str):
            for b in self.blocks:
                if b.name == key:
                    return b
            raise KeyError(key)
        return self.blocks[key]

    def __add__(self, other: "BlockStructure") -> "BlockStructure":
        return self.augment(other)[0]

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(b.name for b in self.blocks)

    @property
    def groups(self) -> tuple[str, ...]:
        return tuple(dict.fromkeys(b.group for b in self.blocks))

    @property
    def total_rows(self) -> int:
        return sum(b.rows for b in self.blocks)

    @property
    def total_cols(self) -> int:
        return sum(b.cols for b in self.blocks)

    def offsets(self) -> list[tuple[int, int]]:
        out, r, c = [], 0, 0
        for b in self.blocks:
            out.append((r, c))
            r += b.rows
            c += b.cols
        return out

    def row_index(self, names: Iterable[str]) -> np.ndarray:
        """``w_delta`` channel indices of the named blocks."""
        sel = set(names)
        idx = [
            np.arange(r, r + b.rows)
            for b, (r, _) in zip(self.blocks, self.offsets())
            if b.name in sel
        ]
        return np.concatenate(idx) if idx else np.zeros(0, dtype=int)

    def col_index(self, names: Iterable[str]) -> np.ndarray:
        """``z_delta`` channel indices of the named blocks."""
        sel = set(names)
        idx = [
            np.arange(c, c + b.cols)
            for b, (_, c) in zip(self.blocks, self.offsets())
            if b.name in sel
        ]
        return np.concatenate(idx) if idx else np.zeros(0, dtype=int)

    def group_blocks(self, group: str) -> list[BlockSpec]:
        return [b for b in self.blocks if b.group == group]

    def with_role(self, *roles: str) -> tuple[str, ...]:
        return tuple(b.name for b in self.blocks if b.role in roles)

    def subset(self, names: Iterable[str]) -> "BlockStructure":
        sel = set(names)
        return BlockStructure(tuple(b for b in self.blocks if b.name in sel))

    def resolve(self, values: Mapping) -> dict[str, object]:
        """Map user keys (block names or group names) to per-block values."""
        out = {}
        names = set(self.names)
        for key, v in values.items():
            members = self.group_blocks(key)
            if members:
                for b in members:
                    out.setdefault(b.name, v)
            elif key in names:
                out[key] = v
            else:
                raise ModelError(f"unknown uncertainty block or group {key!r}")
        return out

    def matrix(self, values: Mapping | np.ndarray | None = None) -> np.ndarray:
        """Assemble Delta.  Missing blocks are zero."""
        shape = (self.total_rows, self.total_cols)
        if values is None:
            return np.zeros(shape)
        if isinstance(values, np.ndarray):
            if values.shape != shape:
                raise ModelError(f"Delta must have shape {shape}, got {values.shape}")
            return values
        per = self.resolve(values)
        mats = {b.name: b.value_matrix(per[b.name]) for b in self.blocks if b.name in per}
        dtype = complex if any(np.iscomplexobj(m) for m in mats.values()) else float
        D = np.zeros(shape, dtype=dtype)
        for b, (r, c) in zip(self.blocks, self.offsets()):
            if b.name in mats:
                D[r:r + b.rows, c:c + b.cols] = mats[b.name]
        return D

    def augment(self, other: "BlockStructure") -> tuple["BlockStructure", dict[str, str]]:
        """Concatenate; duplicate names in ``other`` get a ``#k`` suffix but keep their group."""
        taken = set(self.names)
        renamed, new = {}, []
        for b in other.blocks:
            name = b.name
            if name in taken:
                base = name.split("#")[0]
                k = 1
                while f"{base}#{k}" in taken:
                    k += 1
                name = f"{base}#{k}"
                renamed[b.name] = name
            taken.add(name)
            new.append(BlockSpec(name, b.kind, b.rows, b.cols, b.group, b.role))
        return BlockStructure(self.blocks + tuple(new)), renamed

    def repeat(self, q: int) -> "BlockStructure":
        out = self
        for _ in range(q - 1):
            out = out + self
        return out

    def to_dict(self) -> list[dict]:
        return [
            {"name": b.name, "kind": b.kind.value, "rows": b.rows, "cols": b.cols,
             "group": b.group, "role": b.role}
            for b in self.blocks
        ]

    def describe(self) -> str:
        """Compact human description, e.g. ``I2(x)J, 5x5 eps``."""
        parts = []
        for g in self.groups:
            members = self.group_blocks(g)
            b = members[0]
            if b.is_scalar:
                size = sum(m.rows for m in members)
                parts.append(f"{g}[{size}]")
            else:
                parts.append(f"{len(members)}x {g}[{b.rows}x{b.cols}]")
        return ", ".join(parts)


def _frozen(a, dtype=None) -> np.ndarray:
    a = np.array(a, dtype=dtype, copy=True)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    if np.iscomplexobj(a) and not np.any(a.imag):
        a = a.real.copy()
    a.setflags(write=False)
    return a


def _as_float(a) -> np.ndarray:
    a = np.asarray(a)
    return a.astype(np.result_type(a.dtype, float), copy=False)


def _shape2(a, rows, cols) -> np.ndarray:
    a = _as_float(a)
    if a.size == 0:
        return np.zeros((rows, cols), dtype=a.dtype)
    return a.reshape(rows, cols) if a.ndim < 2 else a


@dataclass(frozen=True, eq=False)
class StateSpace:
    """``x+ = A x + B u, y = C x + D u`` (discrete if ``dt`` is set)."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    dt: float | None = None
    inputs: tuple[str, ...] = ()
    outputs: tuple[str, ...] = ()

    def __post_init__(self):
        D = np.atleast_2d(_as_float(self.D))
        p, m = D.shape
        A = _as_float(self.A)
        n = 0 if A.size == 0 else int(np.atleast_2d(A).shape[0])
        A = _shape2(A, n, n)
        B = _shape2(self.B, n, m)
        C = _shape2(self.C, p, n)
        if A.shape != (n, n) or B.shape != (n, m) or C.shape != (p, n):
            raise ModelError(
                f"inconsistent realization shapes A{A.shape} B{B.shape} C{C.shape} D{D.shape}"
            )
        for k, v in zip("ABCD", (A, B, C, D)):
            object.__setattr__(self, k, _frozen(v))
        inputs = tuple(self.inputs) or tuple(f"u{i}" for i in range(m))
        outputs = tuple(self.outputs) or tuple(f"y{i}" for i in range(p))
        if len(inputs) != m or len(outputs) != p:
            raise ModelError("channel names do not match realization size")
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "outputs", outputs)
        if self.dt is not None:
            if not self.dt > 0:
                raise ModelError("sampling period must be positive")
            object.__setattr__(self, "dt", float(self.dt))

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def p(self) -> int:
        return self.C.shape[0]

    @property
    def is_discrete(self) -> bool:
        return self.dt is not None

    def poles(self) -> np.ndarray:
        return np.linalg.eigvals(self.A) if self.n else np.zeros(0)

    def stability_margin(self) -> float:
        """Spectral abscissa (continuous) or spectral radius minus one (discrete)."""
        ev = self.poles()
        if not ev.size:
            return -np.inf
        return float(np.max(np.abs(ev)) - 1.0) if self.is_discrete else float(np.max(ev.real))

    def is_stable(self) -> bool:
        return self.stability_margin() < 0

    def evaluate(self, s: complex) -> np.ndarray:
        if not self.n:
            return self.D.astype(complex)
        return self.C @ np.linalg.solve(s * np.eye(self.n) - self.A, self.B) + self.D

    def freqresp(self, omega: Sequence[float]) -> np.ndarray:
        omega = np.atleast_1d(np.asarray(omega, dtype=float))
        pts = np.exp(1j * omega * self.dt) if self.is_discrete else 1j * omega
        return np.stack([self.evaluate(s) for s in pts])

    def channel(self, names: Sequence[str], outputs=False) -> np.ndarray:
        pool = self.outputs if outputs else self.inputs
        try:
            return np.array([pool.index(n) for n in names], dtype=int)
        except ValueError as exc:
            raise ModelError(f"unknown channel in {list(names)}: {exc}") from None

    def select(self, inputs=None, outputs=None) -> "StateSpace":
        ii = self.channel(inputs) if inputs is not None else np.arange(self.m)
        oo = self.channel(outputs, True) if outputs is not None else np.arange(self.p)
        return StateSpace(self.A, self.B[:, ii], self.C[oo], self.D[np.ix_(oo, ii)], self.dt,
                          tuple(self.inputs[i] for i in ii), tuple(self.outputs[i] for i in oo))

    def matrix(self) -> np.ndarray:
        return np.block([[self.A, self.B], [self.C, self.D]])

    def __eq__(self, other):
        if not isinstance(other, StateSpace):
            return NotImplemented
        return (self.dt == other.dt and self.inputs == other.inputs
                and self.outputs == other.outputs
                and all(np.array_equal(getattr(self, k), getattr(other, k)) for k in "ABCD"))

    __hash__ = None


@dataclass(frozen=True, eq=False)
class UncertainStateSpace:
    """State-space model in upper-LFT form with a structured perturbation.

    ``inputs`` and ``outputs`` name the exogenous channels only; the first
    ``delta.total_rows`` columns of ``B``/``D`` and the first
    ``delta.total_cols`` rows of ``C``/``D`` are the perturbation channels.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    delta: BlockStructure
    dt: float | None = None
    inputs: tuple[str, ...] = ()
    outputs: tuple[str, ...] = ()
    meta: Mapping = field(default_factory=dict)

    def __post_init__(self):
        full = StateSpace(self.A, self.B, self.C, self.D, self.dt)
        for k in "ABCD":
            object.__setattr__(self, k, getattr(full, k))
        nw, nz = self.delta.total_rows, self.delta.total_cols
        if full.m < nw or full.p < nz:
            raise ModelError("realization is smaller than the perturbation structure")
        inputs = tuple(self.inputs) or tuple(f"u{i}" for i in range(full.m - nw))
        outputs = tuple(self.outputs) or tuple(f"y{i}" for i in range(full.p - nz))
        if len(inputs) != full.m - nw or len(outputs) != full.p - nz:
            raise ModelError("exogenous channel names do not match realization size")
        if len(set(inputs)) != len(inputs) or len(set(outputs)) != len(outputs):
            raise ModelError("duplicate channel names")
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "outputs", outputs)
        object.__setattr__(self, "dt", full.dt)
        object.__setattr__(self, "meta", dict(self.meta))

    # partitions
    @property
    def nw(self) -> int:
        return self.delta.total_rows

    @property
    def nz(self) -> int:
        return self.delta.total_cols

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def is_discrete(self) -> bool:
        return self.dt is not None

    @property
    def B1(self):
        return self.B[:, :self.nw]

    @property
    def B2(self):
        return self.B[:, self.nw:]

    @property
    def C1(self):
        return self.C[:self.nz]

    @property
    def C2(self):
        return self.C[self.nz:]

    @property
    def D11(self):
        return self.D[:self.nz, :self.nw]

    @property
    def D12(self):
        return self.D[:self.nz, self.nw:]

    @property
    def D21(self):
        return self.D[self.nz:, :self.nw]

    @property
    def D22(self):
        return self.D[self.nz:, self.nw:]

    def realization(self) -> StateSpace:
        """The full realization with perturbation channels exposed."""
        win = tuple(f"w[{i}]" for i in range(self.nw))
        zout = tuple(f"z[{i}]" for i in range(self.nz))
        return StateSpace(self.A, self.B, self.C, self.D, self.dt,
                          win + self.inputs, zout + self.outputs)

    def lft_matrix(self) -> np.ndarray:
        """Coefficient matrix whose upper LFT with Delta gives ``[[A, B], [C, D]]``."""
        return np.block([
            [self.D11, self.C1, self.D12],
            [self.B1, self.A, self.B2],
            [self.D21, self.C2, self.D22],
        ])

    def nominal(self) -> StateSpace:
        return StateSpace(self.A, self.B2, self.C2, self.D22, self.dt, self.inputs, self.outputs)

    def replace(self, **kw) -> "UncertainStateSpace":
        args = dict(A=self.A, B=self.B, C=self.C, D=self.D, delta=self.delta, dt=self.dt,
                    inputs=self.inputs, outputs=self.outputs, meta=self.meta)
        args.update(kw)
        return UncertainStateSpace(**args)

    def eval_at(self, values=None) -> StateSpace:
        return eval_at(self, values)

    def input_index(self, names: Sequence[str]) -> np.ndarray:
        try:
            return np.array([self.inputs.index(n) for n in names], dtype=int)
        except ValueError:
            raise ModelError(f"unknown input in {list(names)}; have {list(self.inputs)}") from None

    def output_index(self, names: Sequence[str]) -> np.ndarray:
        try:
            return np.array([self.outputs.index(n) for n in names], dtype=int)
        except ValueError:
            raise ModelError(f"unknown output in {list(names)}; have {list(self.outputs)}") from None

    def select(self, inputs=None, outputs=None) -> "UncertainStateSpace":
        ii = self.input_index(inputs) if inputs is not None else np.arange(len(self.inputs))
        oo = self.output_index(outputs) if outputs is not None else np.arange(len(self.outputs))
        cols = np.concatenate([np.arange(self.nw), self.nw + ii]).astype(int)
        rows = np.concatenate([np.arange(self.nz), self.nz + oo]).astype(int)
        return self.replace(B=self.B[:, cols], C=self.C[rows], D=self.D[np.ix_(rows, cols)],
                            inputs=tuple(self.inputs[i] for i in ii),
                            outputs=tuple(self.outputs[i] for i in oo))

    def frequency_matrix(self, s: complex) -> np.ndarray:
        """``[[M11, M12], [M21, M22]](s)`` with the perturbation channels first."""
        if not self.n:
            return self.D.astype(complex)
        return self.C @ np.linalg.solve(s * np.eye(self.n) - self.A, self.B) + self.D

    def close_blocks(self, values: Mapping) -> "UncertainStateSpace":
        """Fix the named blocks (or groups) at the given values and remove their channels."""
        per = self.delta.resolve(values)
        names = [b.name for b in self.delta if b.name in per]
        rest = [b.name for b in self.delta if b.name not in per]
        fixed = self.delta.subset(names)
        Dfix = fixed.matrix({k: per[k] for k in names})
        w_idx = self.delta.row_index(names)
        z_idx = self.delta.col_index(names)
        R = self._full_matrix()
        n = self.n
        keep_in = _complement(n + self.B.shape[1], n + w_idx)
        keep_out = _complement(n + self.C.shape[0], n + z_idx)
        Rn = _partial_lft(R, n + z_idx, n + w_idx, keep_out, keep_in, Dfix, fixed)
        return self._from_full(Rn, self.delta.subset(rest))

    def drop_blocks(self, names: Iterable[str]) -> "UncertainStateSpace":
        names = set(names)
        zero = {b.name: (0.0 if b.is_scalar else np.zeros((b.rows, b.cols)))
                for b in self.delta if b.name in names or b.group in names}
        return self.close_blocks(zero) if zero else self

    def scale_delta(self, scales: Mapping[str, float] | float) -> "UncertainStateSpace":
        """Model whose unit ball corresponds to ``scale * unit ball`` of this one."""
        s = np.ones(self.nz)
        if isinstance(scales, Mapping):
            per = self.delta.resolve(scales)
        else:
            per = {b.name: scales for b in self.delta}
        for b, (_, c) in zip(self.delta, self.delta.offsets()):
            s[c:c + b.cols] = per.get(b.name, 1.0)
        C, D = self.C.copy(), self.D.copy()
        C[:self.nz] *= s[:, None]
        D[:self.nz] *= s[:, None]
        return self.replace(C=C, D=D)

    def recenter(self, center: Mapping, radius: Mapping) -> "UncertainStateSpace":
        """Reparametrize ``Delta = Delta_c + r * Delta'`` block by block."""
        Dc = self.delta.matrix(center) if center else np.zeros((self.nw, self.nz))
        R = self._full_matrix()
        n, nw, nz = self.n, self.nw, self.nz
        zi = np.arange(n, n + nz)
        wi = np.arange(n, n + nw)
        oi = _complement(R.shape[0], zi)
        ii = _complement(R.shape[1], wi)
        Rzz, Rzo = R[np.ix_(zi, wi)], R[np.ix_(zi, ii)]
        Roz, Roo = R[np.ix_(oi, wi)], R[np.ix_(oi, ii)]
        L = np.eye(nz) - Rzz @ Dc
        _check_rcond(L, "recentred LFT")
        E = np.linalg.inv(L)
        r = np.ones(nz)
        per = self.delta.resolve(radius) if radius else {}
        for b, (_, c) in zip(self.delta, self.delta.offsets()):
            r[c:c + b.cols] = per.get(b.name, 1.0)
        new_zz = r[:, None] * (E @ Rzz)
        new_zo = r[:, None] * (E @ Rzo)
        new_oz = Roz @ (np.eye(nw) + Dc @ E @ Rzz)
        new_oo = Roo + Roz @ Dc @ E @ Rzo
        Rn = np.empty_like(R, dtype=np.result_type(R, Dc))
        Rn[np.ix_(zi, wi)] = new_zz
        Rn[np.ix_(zi, ii)] = new_zo
        Rn[np.ix_(oi, wi)] = new_oz
        Rn[np.ix_(oi, ii)] = new_oo
        return self._from_full(Rn, self.delta)

    def _full_matrix(self) -> np.ndarray:
        return np.block([[self.A, self.B], [self.C, self.D]])

    def _from_full(self, R: np.ndarray, delta: BlockStructure) -> "UncertainStateSpace":
        n = self.n
        return self.replace(A=R[:n, :n], B=R[:n, n:], C=R[n:, :n], D=R[n:, n:], delta=delta)


def _complement(size: int, idx) -> np.ndarray:
    mask = np.ones(size, dtype=bool)
    mask[np.asarray(idx, dtype=int)] = False
    return np.flatnonzero(mask)


def _check_rcond(L: np.ndarray, what: str, structure: BlockStructure | None = None,
                 Delta=None, M11=None):
    if not L.size:
        return
    s = np.linalg.svd(L, compute_uv=False)
    if s[-1] <= RCOND_TOL * max(s[0], 1.0):
        blocks = ()
        if structure is not None and Delta is not None and M11 is not None:
            blocks = _offending_blocks(structure, Delta, M11)
        msg = f"ill-posed {what}: loop matrix is singular (rcond {s[-1] / max(s[0], 1.0):.2e})"
        if blocks:
            msg += f"; offending block(s): {', '.join(blocks)}"
        raise IllPosedLFTError(msg, blocks)


def _offending_blocks(structure, Delta, M11) -> tuple[str, ...]:
    _, _, vh = np.linalg.svd(np.eye(Delta.shape[0]) - Delta @ M11)
    v = np.abs(vh[-1])
    out = []
    for b, (r, _) in zip(structure, structure.offsets()):
        if np.max(v[r:r + b.rows]) > 1e-3 * v.max():
            out.append(b.name)
    return tuple(out)


def _partial_lft(R, z_rows, w_cols, keep_out, keep_in, Delta, structure=None):
    M11 = R[np.ix_(z_rows, w_cols)]
    M12 = R[np.ix_(z_rows, keep_in)]
    M21 = R[np.ix_(keep_out, w_cols)]
    M22 = R[np.ix_(keep_out, keep_in)]
    if not len(w_cols):
        return M22
    L = np.eye(len(w_cols)) - Delta @ M11
    _check_rcond(L, "LFT", structure, Delta, M11)
    return M22 + M21 @ np.linalg.solve(L, Delta @ M12)


def upper_lft(M: np.ndarray, Delta: np.ndarray, structure: BlockStructure | None = None):
    """``M22 + M21 Delta (I - M11 Delta)^-1 M12``; partition taken from ``Delta``'s shape."""
    M = np.asarray(M)
    Delta = np.atleast_2d(np.asarray(Delta))
    r, c = Delta.shape
    if M.shape[0] < c or M.shape[1] < r:
        raise ModelError("Delta is larger than the coefficient matrix")
    return _partial_lft(M, np.arange(c), np.arange(r), np.arange(c, M.shape[0]),
                        np.arange(r, M.shape[1]), Delta, structure)


def lower_lft(M: np.ndarray, K: np.ndarray) -> np.ndarray:
    """``M11 + M12 K (I - M22 K)^-1 M21``; partition taken from ``K``'s shape."""
    M = np.asarray(M)
    K = np.atleast_2d(np.asarray(K))
    nu, ny = K.shape
    p, m = M.shape
    return _partial_lft(M, np.arange(p - ny, p), np.arange(m - nu, m), np.arange(p - ny),
                        np.arange(m - nu), K)


def eval_at(sys: UncertainStateSpace, values=None) -> StateSpace:
    """Instantiate the model at one perturbation value.

    ``values`` maps block names or group names to scalars/matrices, or is a
    full Delta matrix.  Unspecified blocks are zero.
    """
    if values is None or (isinstance(values, Mapping) and not values):
        return sys.nominal()
    Delta = sys.delta.matrix(values)
    R = upper_lft(sys.lft_matrix(), Delta, sys.delta)
    n = sys.n
    return StateSpace(R[:n, :n], R[:n, n:], R[n:, :n], R[n:, n:], sys.dt, sys.inputs, sys.outputs)


def augment_block_diag(*systems: UncertainStateSpace) -> UncertainStateSpace:
    """Block-diagonal combination; perturbation structures are concatenated.

    Blocks with the same name in different systems keep a shared group, so
    they remain one physical parameter.
    """
    if not systems:
        raise ModelError("nothing to augment")
    dts = {s.dt for s in systems}
    if len(dts) > 1:
        raise ModelError("cannot augment models with different sampling periods")
    delta = BlockStructure()
    for s in systems:
        delta = delta.augment(s.delta)[0]
    nw = [s.nw for s in systems]
    nz = [s.nz for s in systems]
    from scipy.linalg import block_diag

    def blk(parts):
        return block_diag(*parts) if parts else np.zeros((0, 0))

    A = blk([s.A for s in systems])
    B = np.hstack([blk([s.B1 for s in systems]).reshape(A.shape[0], sum(nw)),
                   blk([s.B2 for s in systems]).reshape(A.shape[0], -1)])
    C1 = blk([s.C1 for s in systems]).reshape(sum(nz), A.shape[0])
    C2 = blk([s.C2 for s in systems]).reshape(-1, A.shape[0])
    D11 = blk([s.D11 for s in systems]).reshape(sum(nz), sum(nw))
    D12 = blk([s.D12 for s in systems]).reshape(sum(nz), -1)
    D21 = blk([s.D21 for s in systems]).reshape(C2.shape[0], sum(nw))
    D22 = blk([s.D22 for s in systems]).reshape(C2.shape[0], D12.shape[1])
    inputs, outputs = [], []
    for k, s in enumerate(systems):
        inputs += [n if n not in inputs else f"{n}#{k}" for n in s.inputs]
        outputs += [n if n not in outputs else f"{n}#{k}" for n in s.outputs]
    return UncertainStateSpace(A, B, np.vstack([C1, C2]), np.block([[D11, D12], [D21, D22]]),
                               delta, systems[0].dt, tuple(inputs), tuple(outputs))


def feedback(plant: StateSpace, ctrl: StateSpace, y_idx, u_idx, keep_in=None, keep_out=None):
    """Close ``u = K y`` around ``plant`` (positive feedback convention).

    Returns the closed loop with states ``[plant; controller]`` and the plant
    channels other than ``u``/``y`` in their original order.
    """
    y_idx = np.asarray(y_idx, dtype=int)
    u_idx = np.asarray(u_idx, dtype=int)
    if ctrl.m != len(y_idx) or ctrl.p != len(u_idx):
        raise ModelError(
            f"controller is {ctrl.p}x{ctrl.m} but routing has {len(u_idx)} inputs and "
            f"{len(y_idx)} measurements"
        )
    r_idx = _complement(plant.m, u_idx) if keep_in is None else np.asarray(keep_in, dtype=int)
    e_idx = _complement(plant.p, y_idx) if keep_out is None else np.asarray(keep_out, dtype=int)
    A, B, C, D = plant.A, plant.B, plant.C, plant.D
    Bu, Br = B[:, u_idx], B[:, r_idx]
    Cy, Ce = C[y_idx], C[e_idx]
    Dyu, Dyr = D[np.ix_(y_idx, u_idx)], D[np.ix_(y_idx, r_idx)]
    Deu, Der = D[np.ix_(e_idx, u_idx)], D[np.ix_(e_idx, r_idx)]
    Ak, Bk, Ck, Dk = ctrl.A, ctrl.B, ctrl.C, ctrl.D
    L = np.eye(len(u_idx)) - Dk @ Dyu
    s = np.linalg.svd(L, compute_uv=False) if L.size else np.ones(1)
    if s[-1] <= RCOND_TOL * max(s[0], 1.0):
        raise AlgebraicLoopError("algebraic loop: I - D_yu D_ctrl is singular")
    Q = np.linalg.inv(L) if L.size else L
    Ux, Uk, Ur = Q @ Dk @ Cy, Q @ Ck, Q @ Dk @ Dyr
    Yx, Yk, Yr = Cy + Dyu @ Ux, Dyu @ Uk, Dyr + Dyu @ Ur
    Acl = np.block([[A + Bu @ Ux, Bu @ Uk], [Bk @ Yx, Ak + Bk @ Yk]])
    Bcl = np.vstack([Br + Bu @ Ur, Bk @ Yr])
    Ccl = np.hstack([Ce + Deu @ Ux, Deu @ Uk])
    Dcl = Der + Deu @ Ur
    return Acl, Bcl, Ccl, Dcl, r_idx, e_idx


def _same_period(a, b) -> bool:
    if a is None or b is None:
        return a is b
    return abs(a - b) <= 1e-9 * max(abs(a), abs(b))


def close_controller(plant: UncertainStateSpace, ctrl: StateSpace, y_names: Sequence[str],
                     u_names: Sequence[str]) -> UncertainStateSpace:
    """Close a (certain) controller around an uncertain plant; Delta channels are kept."""
    if not _same_period(plant.dt, ctrl.dt):
        raise ModelError(f"controller period {ctrl.dt} differs from plant period {plant.dt}")
    y_idx = plant.nz + plant.output_index(y_names)
    u_idx = plant.nw + plant.input_index(u_names)
    full = StateSpace(plant.A, plant.B, plant.C, plant.D, plant.dt)
    A, B, C, D, r_idx, e_idx = feedback(full, ctrl, y_idx, u_idx)
    inputs = tuple(plant.inputs[i - plant.nw] for i in r_idx[plant.nw:])
    outputs = tuple(plant.outputs[i - plant.nz] for i in e_idx[plant.nz:])
    return plant.replace(A=A, B=B, C=C, D=D, inputs=inputs, outputs=outputs)


@dataclass(frozen=True)
class ParameterBox:
    """Axis-aligned box of normalized parameters ``delta_i in [lower_i, upper_i]``.

    Physical value is ``nominal_i + half_range_i * delta_i``.
    """

    names: tuple[str, ...]
    nominal: tuple[float, ...] = ()
    half_range: tuple[float, ...] = ()
    lower: tuple[float, ...] = ()
    upper: tuple[float, ...] = ()

    def __post_init__(self):
        k = len(self.names)
        object.__setattr__(self, "names", tuple(self.names))
        for attr, default in (("nominal", 0.0), ("half_range", 1.0), ("lower", -1.0),
                              ("upper", 1.0)):
            v = tuple(float(x) for x in getattr(self, attr)) or (default,) * k
            if len(v) != k:
                raise ModelError(f"ParameterBox.{attr} has wrong length")
            object.__setattr__(self, attr, v)
        if any(lo > hi for lo, hi in zip(self.lower, self.upper)):
            raise ModelError("empty parameter box")

    @classmethod
    def unit(cls, names: Sequence[str]) -> "ParameterBox":
        return cls(tuple(names))

    def __len__(self):
        return len(self.names)

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (np.array(self.lower) + np.array(self.upper))

    @property
    def radius(self) -> np.ndarray:
        return 0.5 * (np.array(self.upper) - np.array(self.lower))

    @property
    def active(self) -> np.ndarray:
        """Indices of non-degenerate coordinates."""
        return np.flatnonzero((self.radius > 0) & (np.array(self.half_range) != 0))

    def vertices(self) -> np.ndarray:
        act = self.active
        base = self.center.copy()
        out = []
        for signs in itertools.product((-1.0, 1.0), repeat=len(act)):
            v = base.copy()
            v[act] += np.array(signs) * self.radius[act]
            out.append(v)
        return np.array(out).reshape(-1, len(self))

    def sample(self, rng: np.random.Generator, count: int) -> np.ndarray:
        from scipy.stats import qmc

        if not len(self):
            return np.zeros((count, 0))
        u = qmc.LatinHypercube(d=len(self), seed=rng).random(count)
        return np.array(self.lower) + u * (np.array(self.upper) - np.array(self.lower))

    def split(self, i: int) -> tuple["ParameterBox", "ParameterBox"]:
        mid = self.center[i]
        lo_u = list(self.upper)
        hi_l = list(self.lower)
        lo_u[i] = mid
        hi_l[i] = mid
        return (ParameterBox(self.names, self.nominal, self.half_range, self.lower, lo_u),
                ParameterBox(self.names, self.nominal, self.half_range, hi_l, self.upper))

    def physical(self, delta) -> dict[str, float]:
        d = np.asarray(delta, dtype=float)
        return {n: nom + h * x for n, nom, h, x in zip(self.names, self.nominal, self.half_range, d)}

    def as_values(self, delta) -> dict[str, float]:
        return dict(zip(self.names, (float(x) for x in np.asarray(delta, dtype=float))))

    def contains(self, delta, tol=1e-12) -> bool:
        d = np.asarray(delta, dtype=float)
        return bool(np.all(d >= np.array(self.lower) - tol) and np.all(d <= np.array(self.upper) + tol))


def realize_affine(nominal: StateSpace, coeffs: Sequence, box: ParameterBox,
                   tol: float = 1e-14) -> UncertainStateSpace:
    """Minimal-rank LFT of ``nominal + sum_i (p_i - p_i0) * [[A_i, B_i], [C_i, D_i]]``.

    Each coefficient is factored by SVD so that parameter ``i`` becomes a
    repeated real scalar block of size ``rank`` (``D11 = 0``).  Parameters
    whose coefficient vanishes are dropped with a warning.
    """
    if len(coeffs) != len(box):
        raise ModelError("one coefficient tuple is required per parameter")
    n, m, p = nominal.n, nominal.m, nominal.p
    Ls, Rs, blocks = [], [], []
    for name, h, coef in zip(box.names, box.half_range, coeffs):
        Ai, Bi, Ci, Di = (np.zeros(s) if c is None else np.asarray(c, dtype=float).reshape(s)
                          for c, s in zip(coef, ((n, n), (n, m), (p, n), (p, m))))
        S = h * np.block([[Ai, Bi], [Ci, Di]])
        U, sv, Vt = np.linalg.svd(S)
        rank = int(np.sum(sv > tol * max(1.0, sv[0] if sv.size else 0.0)))
        if rank == 0:
            log.warning("parameter %s has no effect and is dropped", name)
            continue
        root = np.sqrt(sv[:rank])
        Ls.append(U[:, :rank] * root)
        Rs.append(root[:, None] * Vt[:rank])
        blocks.append(BlockSpec(name, BlockKind.REAL_SCALAR, rank))
    delta = BlockStructure(tuple(blocks))
    L = np.hstack(Ls) if Ls else np.zeros((n + p, 0))
    R = np.vstack(Rs) if Rs else np.zeros((0, n + m))
    nw = L.shape[1]
    B = np.hstack([L[:n], nominal.B])
    C = np.vstack([R[:, :n], nominal.C])
    D = np.block([[np.zeros((nw, nw)), R[:, n:]], [L[n:], nominal.D]])
    return UncertainStateSpace(nominal.A, B, C, D, delta, nominal.dt, nominal.inputs,
                               nominal.outputs)
