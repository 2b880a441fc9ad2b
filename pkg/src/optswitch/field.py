"""Value fields and convergence traces, with the columnar text format both
solver engines emit.

A :class:`ValueField` holds one array ``values[mode, time_index, node]`` for
all modes on a common grid, the numerical stand-in for the per-mode value
functions.  Terminal slice is identically zero by construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grid import GridSpec

__all__ = ["ValueField", "ConvergenceTrace", "TraceEntry", "best_switch_targets"]


def best_switch_targets(v_slice: np.ndarray, cost_slice: np.ndarray, tie: float = 1e-12):
    """Best switching obstacle per mode on one time slice.

    ``v_slice`` is (modes, nodes), ``cost_slice`` is (modes, modes, nodes).
    Returns ``(best, target)``: the obstacle max_{j != i}(v_j - g_ij) and the
    1-based mode realising it.  Candidates within ``tie`` of the maximum are
    resolved to the smallest mode index; with a single mode the obstacle is
    -inf and the target 0.  Both solver engines and the policy extractor use
    this one rule so their switch regions agree.
    """
    m, n_nodes = v_slice.shape
    best = np.full((m, n_nodes), -np.inf)
    for i in range(m):
        for j in range(m):
            if j == i:
                continue
            np.maximum(best[i], v_slice[j] - cost_slice[i, j], out=best[i])
    target = np.zeros((m, n_nodes), dtype=np.int16)
    for i in range(m):
        taken = np.zeros(n_nodes, dtype=bool)
        for j in range(m):
            if j == i:
                continue
            hit = ~taken & (v_slice[j] - cost_slice[i, j] >= best[i] - tie)
            target[i][hit] = j + 1
            taken |= hit
    return best, target

_FORMAT_TAG = "optswitch-valuefield-v1"


@dataclass
class ValueField:
    values: np.ndarray          # (modes, time_steps + 1, n_nodes) float64
    grid: GridSpec
    horizon: float
    problem_hash: str
    scheme: str

    def __post_init__(self):
        m, nt, nn = self.values.shape
        if nt != self.grid.time_steps + 1 or nn != self.grid.n_nodes:
            raise ValueError(
                f"values shape {self.values.shape} does not match grid "
                f"({self.grid.time_steps + 1} slices, {self.grid.n_nodes} nodes)"
            )

    @property
    def mode_count(self) -> int:
        return self.values.shape[0]

    def value_at(self, mode: int, time_index: int, x) -> float:
        """Value for 1-based ``mode`` at the grid node nearest to ``x``."""
        node = self.grid.nearest_node(x)
        return float(self.values[mode - 1, time_index, node])

    def save(self, path) -> None:
        lines = [f"# format: {_FORMAT_TAG}"]
        lines.append(f"# problem_hash: {self.problem_hash}")
        lines.append(f"# scheme: {self.scheme}")
        lines.append(f"# horizon: {self.horizon!r}")
        lines.append(f"# modes: {self.mode_count}")
        for key, val in self.grid.describe().items():
            lines.append(f"# {key}: {val}")
        dim = self.grid.state_dim
        xcols = ",".join(f"x{a + 1}" for a in range(dim))
        lines.append(f"mode,time_index,node_index,{xcols},value")
        coords = self.grid.node_matrix
        m, nt, nn = self.values.shape
        for i in range(m):
            for n in range(nt):
                row_vals = self.values[i, n]
                for q in range(nn):
                    xtxt = ",".join("%.17g" % coords[q, a] for a in range(dim))
                    lines.append(f"{i + 1},{n},{q},{xtxt},{'%.17g' % row_vals[q]}")
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path) -> "ValueField":
        header: dict[str, str] = {}
        rows: list[str] = []
        with open(path) as fh:
            for line in fh:
                line = line.rstrip("\n")
                if not line:
                    continue
                if line.startswith("#"):
                    key, _, val = line[1:].partition(":")
                    header[key.strip()] = val.strip()
                elif line.startswith("mode,"):
                    continue
                else:
                    rows.append(line)
        if header.get("format") != _FORMAT_TAG:
            raise ValueError(f"{path}: not a value-field file")
        grid = GridSpec.from_description(header)
        modes = int(header["modes"])
        values = np.zeros((modes, grid.time_steps + 1, grid.n_nodes))
        for line in rows:
            parts = line.split(",")
            i, n, q = int(parts[0]), int(parts[1]), int(parts[2])
            values[i - 1, n, q] = float(parts[-1])
        return cls(
            values=values,
            grid=grid,
            horizon=float(header["horizon"]),
            problem_hash=header["problem_hash"],
            scheme=header["scheme"],
        )


@dataclass(frozen=True)
class TraceEntry:
    label: int              # n-switch level, or time-slice index
    sup_increment: float
    min_increment: float    # most negative node-wise increment (monotonicity)
    sweeps: int             # same-slice obstacle sweeps / Howard iterations
    wall_time: float


@dataclass
class ConvergenceTrace:
    kind: str               # "n-switch" | "coupled" | "pde"
    entries: list[TraceEntry] = field(default_factory=list)
    companion: "ConvergenceTrace | None" = None   # e.g. level trace of a cross-check

    def add(self, label, sup_increment, min_increment, sweeps, wall_time) -> None:
        self.entries.append(TraceEntry(int(label), float(sup_increment),
                                       float(min_increment), int(sweeps), float(wall_time)))

    @property
    def sup_increments(self) -> np.ndarray:
        return np.array([e.sup_increment for e in self.entries])

    @property
    def min_increments(self) -> np.ndarray:
        return np.array([e.min_increment for e in self.entries])

    def render(self, problem_hash: str | None = None) -> str:
        lines = [f"# trace kind: {self.kind}"]
        if problem_hash is not None:
            lines.append(f"# problem_hash: {problem_hash}")
        lines.append("label,sup_increment,min_increment,sweeps,wall_time")
        for e in self.entries:
            lines.append(f"{e.label},{'%.17g' % e.sup_increment},{'%.17g' % e.min_increment},"
                         f"{e.sweeps},{'%.6f' % e.wall_time}")
        return "\n".join(lines) + "\n"

    def save(self, path, problem_hash: str | None = None) -> None:
        with open(path, "w") as fh:
            fh.write(self.render(problem_hash))

    @classmethod
    def load(cls, path) -> "ConvergenceTrace":
        kind = "unknown"
        entries = []
        with open(path) as fh:
            for line in fh:
                line = line.strip()
                if line.startswith("# trace kind:"):
                    kind = line.split(":", 1)[1].strip()
                elif not line or line.startswith("label,") or line.startswith("#"):
                    continue
                else:
                    lab, sup, mn, sw, wall = line.split(",")
                    entries.append(TraceEntry(int(lab), float(sup), float(mn),
                                              int(sw), float(wall)))
        return cls(kind=kind, entries=entries)
