"""Shared solver exception types (mapped to CLI exit codes in cli.py)."""

from __future__ import annotations

__all__ = [
    "OptSwitchError",
    "NegativeProbabilityError",
    "GridAlignmentError",
    "InstantaneousLoopError",
    "ConvergenceError",
    "SolverBreakdownError",
]


class OptSwitchError(Exception):
    """Base class for solver-level failures."""


class NegativeProbabilityError(OptSwitchError):
    """Chain stencil produced a negative probability (time step too large)."""

    def __init__(self, time_index: int, node: int, suggested_dt: float):
        super().__init__(
            f"negative transition probability at time index {time_index}, node {node}; "
            f"use a chain step of at most {suggested_dt:.6g} (or leave substeps on auto)"
        )
        self.time_index = time_index
        self.node = node
        self.suggested_dt = suggested_dt


class GridAlignmentError(OptSwitchError):
    """Mixed second-derivative terms break monotonicity on this grid."""


class InstantaneousLoopError(OptSwitchError):
    """Same-slice obstacle sweeps did not settle within mode_count - 1 passes;
    indicates a violated no-free-loop assumption."""

    def __init__(self, time_index: int):
        super().__init__(
            f"instantaneous switching loop at time index {time_index}: same-slice "
            f"sweeps exceeded mode_count - 1, the no-free-loop condition is violated"
        )
        self.time_index = time_index


class ConvergenceError(OptSwitchError):
    """Iteration budget exhausted; carries the trace collected so far."""

    def __init__(self, message: str, trace=None):
        super().__init__(message)
        self.trace = trace


class SolverBreakdownError(OptSwitchError):
    """Linear solver failed (singular system) while stepping the PDE."""

    def __init__(self, time_index: int, detail: str):
        super().__init__(f"linear solve failed at time index {time_index}: {detail}")
        self.time_index = time_index
