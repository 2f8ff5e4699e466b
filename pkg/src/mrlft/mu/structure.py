"""Compiled perturbation structure for mu computations.

Real scalar blocks that share a group are merged into one repeated scalar
(``delta I_r``).  Full blocks stay separate; real full blocks are handled as
complex ones by the upper bound, which only makes it more conservative.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ModelError
from ..lft import BlockStructure


@dataclass(frozen=True)
class MuBlock:
    name: str
    kind: str  # "real" (repeated scalar), "full" (complex or real full)
    real: bool
    w_idx: np.ndarray
    z_idx: np.ndarray
    role: str
    members: tuple[str, ...]

    @property
    def size(self) -> int:
        return len(self.w_idx)


@dataclass(frozen=True)
class MuStructure:
    blocks: tuple[MuBlock, ...]
    nw: int
    nz: int

    @classmethod
    def compile(cls, delta: BlockStructure) -> "MuStructure":
        offs = delta.offsets()
        groups: dict[str, list] = {}
        out = []
        for b, (r, c) in zip(delta, offs):
            w = np.arange(r, r + b.rows)
            z = np.arange(c, c + b.cols)
            if b.is_scalar:
                if b.group not in groups:
                    groups[b.group] = [[], [], [], b.role]
                    out.append(("real", b.group))
                g = groups[b.group]
                g[0].append(w)
                g[1].append(z)
                g[2].append(b.name)
            else:
                out.append(("full", MuBlock(b.name, "full", b.is_real, w, z, b.role, (b.name,))))
        blocks = []
        for kind, item in out:
            if kind == "real":
                w, z, names, role = groups[item]
                blocks.append(MuBlock(item, "real", True, np.concatenate(w), np.concatenate(z),
                                      role, tuple(names)))
            else:
                blocks.append(item)
        return cls(tuple(blocks), delta.total_rows, delta.total_cols)

    def index(self, name: str) -> int:
        for i, b in enumerate(self.blocks):
            if b.name == name:
                return i
        raise ModelError(f"no block {name!r}")

    def delta(self, real_values=None, full_values=None, dtype=float) -> np.ndarray:
        """Delta from per-block values (scalars for real blocks, matrices for full ones)."""
        real_values = real_values or {}
        full_values = full_values or {}
        any_complex = any(np.iscomplexobj(v) for v in full_values.values())
        D = np.zeros((self.nw, self.nz), dtype=complex if any_complex else dtype)
        for b in self.blocks:
            if b.kind == "real" and b.name in real_values:
                D[b.w_idx, b.z_idx] = real_values[b.name]
            elif b.kind == "full" and b.name in full_values:
                D[np.ix_(b.w_idx, b.z_idx)] = full_values[b.name]
        return D

    def real_blocks(self):
        return [b for b in self.blocks if b.kind == "real"]

    def full_blocks(self):
        return [b for b in self.blocks if b.kind == "full"]

    def delta_norm(self, Delta: np.ndarray) -> float:
        """Structured size ``max_i ||Delta_i||``."""
        v = 0.0
        for b in self.blocks:
            blk = Delta[np.ix_(b.w_idx, b.z_idx)]
            v = max(v, np.abs(blk[0, 0]) if b.kind == "real" else np.linalg.norm(blk, 2))
        return float(v)
