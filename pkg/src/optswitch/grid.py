"""Uniform time/space grids shared by the lattice, PDE and policy machinery.

State dimension 1 or 2.  Nodes are stored flat in C order (for 2D, flat index
= i0 * nodes[1] + i1), which every consumer of node indices relies on.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

__all__ = ["GridSpec"]


@dataclass(frozen=True)
class GridSpec:
    time_steps: int
    x_lo: tuple[float, ...]
    x_hi: tuple[float, ...]
    nodes: tuple[int, ...]

    def __post_init__(self):
        def as_tuple(v, conv):
            try:
                return tuple(conv(item) for item in v)
            except TypeError:
                return (conv(v),)
        object.__setattr__(self, "x_lo", as_tuple(self.x_lo, float))
        object.__setattr__(self, "x_hi", as_tuple(self.x_hi, float))
        object.__setattr__(self, "nodes", as_tuple(self.nodes, int))
        if self.time_steps < 1:
            raise ValueError("time_steps must be >= 1")
        if not (len(self.x_lo) == len(self.x_hi) == len(self.nodes)):
            raise ValueError("x_lo, x_hi and nodes must have matching dimensions")
        if len(self.nodes) not in (1, 2):
            raise ValueError("grids support state dimension 1 or 2")
        for lo, hi, n in zip(self.x_lo, self.x_hi, self.nodes):
            if not (np.isfinite(lo) and np.isfinite(hi) and lo < hi):
                raise ValueError(f"need finite x_lo < x_hi, got [{lo}, {hi}]")
            if n < 2:
                raise ValueError("need at least 2 nodes per dimension")

    @property
    def state_dim(self) -> int:
        return len(self.nodes)

    @property
    def n_nodes(self) -> int:
        out = 1
        for n in self.nodes:
            out *= n
        return out

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple((hi - lo) / (n - 1)
                     for lo, hi, n in zip(self.x_lo, self.x_hi, self.nodes))

    def axes(self) -> list[np.ndarray]:
        return [np.linspace(lo, hi, n)
                for lo, hi, n in zip(self.x_lo, self.x_hi, self.nodes)]

    @cached_property
    def node_matrix(self) -> np.ndarray:
        """(n_nodes, state_dim) coordinates, flat C order."""
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        out = np.stack([mm.reshape(-1) for mm in mesh], axis=1)
        out.flags.writeable = False
        return out

    def times(self, horizon: float) -> np.ndarray:
        return np.linspace(0.0, horizon, self.time_steps + 1)

    def dt(self, horizon: float) -> float:
        return horizon / self.time_steps

    def nearest_node(self, x) -> int:
        """Flat index of the grid node nearest to ``x`` (clipped to bounds)."""
        x = np.atleast_1d(np.asarray(x, dtype=np.float64))
        if x.shape[0] != self.state_dim:
            raise ValueError(f"point has dimension {x.shape[0]}, grid has {self.state_dim}")
        flat = 0
        for a, (lo, dx, n) in enumerate(zip(self.x_lo, self.spacing, self.nodes)):
            idx = int(np.rint((x[a] - lo) * (1.0 / dx)))
            idx = min(max(idx, 0), n - 1)
            flat = flat * n + idx
        return flat

    def contains_interior(self, x) -> bool:
        x = np.atleast_1d(np.asarray(x, dtype=np.float64))
        return all(lo < v < hi for lo, v, hi in zip(self.x_lo, x, self.x_hi))

    def describe(self) -> dict[str, str]:
        return {
            "time_steps": str(self.time_steps),
            "x_lo": ",".join(repr(v) for v in self.x_lo),
            "x_hi": ",".join(repr(v) for v in self.x_hi),
            "nodes": ",".join(str(v) for v in self.nodes),
        }

    @classmethod
    def from_description(cls, fields: dict[str, str]) -> "GridSpec":
        return cls(
            time_steps=int(fields["time_steps"]),
            x_lo=tuple(float(v) for v in fields["x_lo"].split(",")),
            x_hi=tuple(float(v) for v in fields["x_hi"].split(",")),
            nodes=tuple(int(v) for v in fields["nodes"].split(",")),
        )
