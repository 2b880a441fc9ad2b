"""Run configuration: flat sectioned key-value text (INI) with quoted
expression strings.

Sections and keys::

    [problem]
    horizon = 1.0            ; T > 0
    state_dim = 1            ; k in {1, 2} for the grid solvers
    brownian_dim = 1         ; d >= 1
    modes = 2                ; m >= 1
    initial_mode = 1         ; optional, default 1
    x0 = 4.0                 ; comma-separated k floats
    neg_cost_bound = 0       ; K, optional, default 0
    drift_1 = "0.05 * x1"    ; one per state dimension
    sigma_1_1 = "0.2 * x1"   ; k x d entries, row_col
    psi_1 = "x1 - 4"         ; one per mode
    psi_2 = "2 - 0.5 * x1"
    g_1_2 = "0.3"            ; all off-diagonal entries; diagonal optional
    g_2_1 = "0.3"            ; (defaults to "0")

    [grid]
    time_steps = 200
    nodes = 200              ; comma-separated per dimension
    x_lo = 0.0
    x_hi = 7.96

    [solver]
    engine = both            ; lattice | pde | both
    tol = 1e-8
    max_outer = 50
    cross_check = false      ; verify the direct sweep against the n-switch limit

    [simulate]
    paths = 10000
    seed = 7
    substeps = 1
    policy_tol = 1e-9

    [output]
    directory = out
    formats = csv

Values may be quoted; expression values typically are.  ``;`` and ``#``
start comments.
"""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass

from . import expr as ex
from .grid import GridSpec
from .problem import SwitchingProblem

__all__ = ["RunConfig", "ConfigError", "load_config", "parse_config_text", "render_config"]

_ENGINES = ("lattice", "pde", "both")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    problem: SwitchingProblem
    grid: GridSpec
    engine: str = "both"
    tol: float = 1e-8
    max_outer: int = 50
    cross_check: bool = False
    paths: int = 10000
    seed: int = 7
    substeps: int = 1
    policy_tol: float = 1e-9
    out_dir: str = "out"
    formats: tuple[str, ...] = ("csv",)

    def __post_init__(self):
        if self.engine not in _ENGINES:
            raise ConfigError(f"engine must be one of {_ENGINES}, got {self.engine!r}")
        if self.tol <= 0:
            raise ConfigError("tol must be positive")
        if self.paths < 1:
            raise ConfigError("paths must be >= 1")
        if self.substeps < 1:
            raise ConfigError("substeps must be >= 1")
        if self.policy_tol <= 0:
            raise ConfigError("policy_tol must be positive")
        if self.max_outer < 1:
            raise ConfigError("max_outer must be >= 1")
        if self.problem.state_dim != self.grid.state_dim:
            raise ConfigError("grid dimension does not match problem state_dim")


def _unquote(raw: str) -> str:
    raw = raw.strip()
    if len(raw) >= 2 and raw[0] == raw[-1] and raw[0] in ("'", '"'):
        return raw[1:-1]
    return raw


class _Section:
    def __init__(self, parser, name):
        self.name = name
        self.data = dict(parser[name]) if parser.has_section(name) else {}
        self.seen = set()

    def get(self, key, default=None, required=False):
        if key in self.data:
            self.seen.add(key)
            return _unquote(self.data[key])
        if required:
            raise ConfigError(f"[{self.name}] missing required key '{key}'")
        return default

    def number(self, key, conv, default=None, required=False):
        raw = self.get(key, required=required)
        if raw is None:
            return default
        try:
            return conv(raw)
        except ValueError:
            raise ConfigError(f"[{self.name}] {key} = {raw!r} is not a valid "
                              f"{conv.__name__}") from None

    def floats(self, key, required=False, default=None):
        raw = self.get(key, required=required)
        if raw is None:
            return default
        try:
            return tuple(float(v) for v in raw.split(","))
        except ValueError:
            raise ConfigError(f"[{self.name}] {key} = {raw!r}: expected "
                              f"comma-separated numbers") from None

    def flag(self, key, default=False):
        raw = self.get(key)
        if raw is None:
            return default
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"[{self.name}] {key} = {raw!r} is not a boolean")

    def expression(self, key, state_dim, required=True, default=None):
        raw = self.get(key, required=required)
        if raw is None:
            raw = default
        try:
            return ex.parse(raw, state_dim)
        except ex.ExprError as exc:
            raise ConfigError(f"[{self.name}] {key}: {exc}") from None

    def warn_unknown(self):
        unknown = set(self.data) - self.seen
        if unknown:
            raise ConfigError(f"[{self.name}] unknown keys: {', '.join(sorted(unknown))}")


def parse_config_text(text: str, source: str = "<config>") -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None,
                                       inline_comment_prefixes=(";", "#"))
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"config parse error: {exc}") from None

    prob = _Section(parser, "problem")
    k = prob.number("state_dim", int, required=True)
    d = prob.number("brownian_dim", int, required=True)
    m = prob.number("modes", int, required=True)
    if k < 1 or d < 1 or m < 1:
        raise ConfigError("[problem] state_dim, brownian_dim and modes must be >= 1")
    horizon = prob.number("horizon", float, required=True)
    x0 = prob.floats("x0", required=True)
    initial_mode = prob.number("initial_mode", int, default=1)
    neg_bound = prob.number("neg_cost_bound", int, default=0)
    drift = tuple(prob.expression(f"drift_{a + 1}", k) for a in range(k))
    vol = tuple(tuple(prob.expression(f"sigma_{a + 1}_{w + 1}", k) for w in range(d))
                for a in range(k))
    profit = tuple(prob.expression(f"psi_{i + 1}", k) for i in range(m))
    cost = tuple(
        tuple(prob.expression(f"g_{i + 1}_{j + 1}", k, required=(i != j), default="0")
              for j in range(m))
        for i in range(m))
    prob.warn_unknown()
    try:
        problem = SwitchingProblem(
            horizon=horizon, state_dim=k, brownian_dim=d, mode_count=m,
            drift=drift, vol=vol, profit=profit, cost=cost, x0=x0,
            initial_mode=initial_mode, neg_cost_bound=neg_bound)
    except ValueError as exc:
        raise ConfigError(f"[problem] {exc}") from None

    gsec = _Section(parser, "grid")
    time_steps = gsec.number("time_steps", int, required=True)
    nodes_raw = gsec.get("nodes", required=True)
    try:
        nodes = tuple(int(v) for v in nodes_raw.split(","))
    except ValueError:
        raise ConfigError(f"[grid] nodes = {nodes_raw!r}: expected comma-separated "
                          f"integers") from None
    x_lo = gsec.floats("x_lo", required=True)
    x_hi = gsec.floats("x_hi", required=True)
    gsec.warn_unknown()
    if len(nodes) == 1 and k > 1:
        nodes = nodes * k
    try:
        grid = GridSpec(time_steps=time_steps, x_lo=x_lo, x_hi=x_hi, nodes=nodes)
    except ValueError as exc:
        raise ConfigError(f"[grid] {exc}") from None

    solver = _Section(parser, "solver")
    engine = solver.get("engine", default="both")
    tol = solver.number("tol", float, default=1e-8)
    max_outer = solver.number("max_outer", int, default=50)
    cross_check = solver.flag("cross_check", default=False)
    solver.warn_unknown()

    sim = _Section(parser, "simulate")
    paths = sim.number("paths", int, default=10000)
    seed = sim.number("seed", int, default=7)
    substeps = sim.number("substeps", int, default=1)
    policy_tol = sim.number("policy_tol", float, default=1e-9)
    sim.warn_unknown()

    out = _Section(parser, "output")
    out_dir = out.get("directory", default="out")
    formats_raw = out.get("formats", default="csv")
    formats = tuple(v.strip() for v in formats_raw.split(",") if v.strip())
    out.warn_unknown()

    return RunConfig(problem=problem, grid=grid, engine=engine, tol=tol,
                     max_outer=max_outer, cross_check=cross_check, paths=paths,
                     seed=seed, substeps=substeps, policy_tol=policy_tol,
                     out_dir=out_dir, formats=formats)


def load_config(path) -> RunConfig:
    with open(path) as fh:
        return parse_config_text(fh.read(), source=str(path))


def render_config(cfg: RunConfig) -> str:
    """Canonical text form; re-parsing it yields an equal RunConfig."""
    p = cfg.problem
    buf = io.StringIO()
    buf.write("[problem]\n")
    buf.write(f"horizon = {p.horizon!r}\n")
    buf.write(f"state_dim = {p.state_dim}\n")
    buf.write(f"brownian_dim = {p.brownian_dim}\n")
    buf.write(f"modes = {p.mode_count}\n")
    buf.write(f"initial_mode = {p.initial_mode}\n")
    buf.write(f"x0 = {','.join(repr(v) for v in p.x0)}\n")
    buf.write(f"neg_cost_bound = {p.neg_cost_bound}\n")
    for a, e in enumerate(p.drift):
        buf.write(f"drift_{a + 1} = \"{ex.to_source(e)}\"\n")
    for a, row in enumerate(p.vol):
        for w, e in enumerate(row):
            buf.write(f"sigma_{a + 1}_{w + 1} = \"{ex.to_source(e)}\"\n")
    for i, e in enumerate(p.profit):
        buf.write(f"psi_{i + 1} = \"{ex.to_source(e)}\"\n")
    for i, row in enumerate(p.cost):
        for j, e in enumerate(row):
            if i != j:
                buf.write(f"g_{i + 1}_{j + 1} = \"{ex.to_source(e)}\"\n")
    buf.write("\n[grid]\n")
    buf.write(f"time_steps = {cfg.grid.time_steps}\n")
    buf.write(f"nodes = {','.join(str(v) for v in cfg.grid.nodes)}\n")
    buf.write(f"x_lo = {','.join(repr(v) for v in cfg.grid.x_lo)}\n")
    buf.write(f"x_hi = {','.join(repr(v) for v in cfg.grid.x_hi)}\n")
    buf.write("\n[solver]\n")
    buf.write(f"engine = {cfg.engine}\n")
    buf.write(f"tol = {cfg.tol!r}\n")
    buf.write(f"max_outer = {cfg.max_outer}\n")
    buf.write(f"cross_check = {'true' if cfg.cross_check else 'false'}\n")
    buf.write("\n[simulate]\n")
    buf.write(f"paths = {cfg.paths}\n")
    buf.write(f"seed = {cfg.seed}\n")
    buf.write(f"substeps = {cfg.substeps}\n")
    buf.write(f"policy_tol = {cfg.policy_tol!r}\n")
    buf.write("\n[output]\n")
    buf.write(f"directory = {cfg.out_dir}\n")
    buf.write(f"formats = {','.join(cfg.formats)}\n")
    return buf.getvalue()
