"""Scenario files: a sectioned TOML format describing grid, initial data,
evolution, requested outputs and tolerances.

Initial data and free choices are expression strings over x, y, t1, t2
with constants pi, kappa and functions sin, cos, exp.  Initial data may
instead come from a CSV table in the snapshot format written by
``evolve``.
"""

from __future__ import annotations

import ast
import csv
import operator
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import tomli
import tomli_w

from .ansatz import AnsatzState, spd_violations
from .evolve import EvolutionConfig
from .grid import BaseGrid

SYMBOLS = ("x", "y", "t1", "t2")
FUNCTIONS = {"sin": np.sin, "cos": np.cos, "exp": np.exp}
CONSTANTS = {"pi": np.pi}
SNAPSHOT_COLUMNS = ("x", "y", "w11", "w12", "w22", "re_alpha1", "im_alpha1", "re_alpha2", "im_alpha2")


class ExpressionError(ValueError):
    pass


class ScenarioError(ValueError):
    """Collected validation errors."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


_BINOPS = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul,
           ast.Div: operator.truediv, ast.Pow: operator.pow}
_UNOPS = {ast.UAdd: operator.pos, ast.USub: operator.neg}


def _check_tree(node, names):
    if isinstance(node, ast.Expression):
        return _check_tree(node.body, names)
    if isinstance(node, ast.Constant):
        if isinstance(node.value, bool) or not isinstance(node.value, (int, float, complex)):
            raise ExpressionError(f"unsupported constant {node.value!r}")
        return
    if isinstance(node, ast.Name):
        if node.id not in names and node.id not in CONSTANTS:
            raise ExpressionError(f"unbound symbol '{node.id}'")
        return
    if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
        _check_tree(node.left, names)
        _check_tree(node.right, names)
        return
    if isinstance(node, ast.UnaryOp) and type(node.op) in _UNOPS:
        return _check_tree(node.operand, names)
    if isinstance(node, ast.Call):
        if not isinstance(node.func, ast.Name) or node.func.id not in FUNCTIONS:
            raise ExpressionError("only sin, cos and exp may be called")
        if len(node.args) != 1 or node.keywords:
            raise ExpressionError(f"{node.func.id} takes exactly one argument")
        return _check_tree(node.args[0], names)
    raise ExpressionError(f"unsupported syntax: {ast.dump(node)[:40]}")


def parse_expression(expr: str, names=SYMBOLS + ("kappa",)) -> ast.Expression:
    """Parse and whitelist-check an expression."""
    if not isinstance(expr, str):
        raise ExpressionError(f"expression must be a string, got {type(expr).__name__}")
    try:
        tree = ast.parse(expr.strip(), mode="eval")
    except SyntaxError as exc:
        raise ExpressionError(f"malformed expression {expr!r}: {exc.msg}") from None
    _check_tree(tree, set(names))
    return tree


def _eval(node, env):
    if isinstance(node, ast.Expression):
        return _eval(node.body, env)
    if isinstance(node, ast.Constant):
        return node.value
    if isinstance(node, ast.Name):
        if node.id in env:
            return env[node.id]
        if node.id in CONSTANTS:
            return CONSTANTS[node.id]
        raise ExpressionError(f"unbound symbol '{node.id}'")
    if isinstance(node, ast.BinOp):
        left, right = _eval(node.left, env), _eval(node.right, env)
        if isinstance(node.op, ast.Div) and np.any(np.asarray(right) == 0):
            raise ExpressionError("division by zero")
        if isinstance(node.op, ast.Pow) and np.any(np.asarray(left) == 0) and np.any(np.real(right) < 0):
            raise ExpressionError("division by zero")
        return _BINOPS[type(node.op)](left, right)
    if isinstance(node, ast.UnaryOp):
        return _UNOPS[type(node.op)](_eval(node.operand, env))
    if isinstance(node, ast.Call):
        return FUNCTIONS[node.func.id](_eval(node.args[0], env))
    raise ExpressionError("unsupported syntax")


def expression_eval(expr: str, bindings: dict):
    """Evaluate ``expr`` with numpy semantics; bindings may be arrays."""
    tree = parse_expression(expr, names=tuple(bindings))
    with np.errstate(all="ignore"):
        value = _eval(tree, bindings)
    if not np.all(np.isfinite(value)):
        raise ExpressionError(f"expression {expr!r} is not finite")
    return value


# config ------------------------------------------------------------------------------


@dataclass
class InitialData:
    m: int = 2
    w11: str = "1"
    w12: str = "0"
    w22: str = "1"
    alpha1: str = "0"
    alpha2: str = "0"
    table: str | None = None


@dataclass
class EvolutionSection:
    t_max: tuple = (0.1, 0.1)
    dt: float = 0.005
    t_nodes: int = 9
    node_kind: str = "chebyshev"
    dealias: bool = True
    check_every: int = 1
    hitchin_stride: int = 16
    free: dict = field(default_factory=dict)


@dataclass
class Outputs:
    residual_report: bool = True
    snapshots: bool = True
    snapshot_every: int = 1
    phi_scan: dict = field(default_factory=dict)
    geometry: tuple = ()


@dataclass
class Tolerances:
    residual_ceiling: float = 1e-6
    verify: float = 1e-10


@dataclass
class ScenarioConfig:
    name: str = "scenario"
    grid: BaseGrid = field(default_factory=BaseGrid)
    initial: InitialData = field(default_factory=InitialData)
    evolution: EvolutionSection = field(default_factory=EvolutionSection)
    outputs: Outputs = field(default_factory=Outputs)
    tolerances: Tolerances = field(default_factory=Tolerances)
    base_dir: Path = field(default=Path("."), compare=False, repr=False)

    def evolution_config(self, ceiling: float | None = None) -> EvolutionConfig:
        ev = self.evolution
        free = {k: _free_callable(v, self.grid.kappa) for k, v in ev.free.items()}
        return EvolutionConfig(
            m=self.initial.m, t_max=ev.t_max, dt=ev.dt, t_nodes=ev.t_nodes,
            node_kind=ev.node_kind, free_choice=free, dealias=ev.dealias,
            residual_ceiling=self.tolerances.residual_ceiling if ceiling is None else ceiling,
            check_every=ev.check_every, hitchin_stride=ev.hitchin_stride or None)

    def scan_points(self) -> list[tuple[float, float, float]]:
        spec = self.outputs.phi_scan
        if not spec:
            return []
        axes = []
        for key in ("t1", "t2"):
            lo, hi, n = spec.get(key, (0.0, 0.0, 1))
            axes.append(np.linspace(lo, hi, int(n)))
        ys = spec.get("y", [0.5 * (self.grid.y_min + self.grid.y_max)])
        return [(float(a), float(b), float(c)) for a in axes[0] for b in axes[1] for c in ys]


def _free_callable(expr, kappa):
    tree = parse_expression(expr, names=("x", "y", "t1", "kappa"))

    def fn(xx, yy, t):
        return _eval(tree, {"x": xx, "y": yy, "t1": t, "kappa": kappa})

    return fn


_SECTIONS = {"grid": BaseGrid, "initial": InitialData, "evolution": EvolutionSection,
             "outputs": Outputs, "tolerances": Tolerances}


def _coerce(cls, section, raw, errors):
    known = {f.name: f for f in fields(cls)}
    kwargs = {}
    for key, value in raw.items():
        if key not in known:
            errors.append(f"{section}.{key} is not a recognised key")
            continue
        default = known[key].default
        if isinstance(default, bool):
            if not isinstance(value, bool):
                errors.append(f"{section}.{key} must be true or false")
                continue
        elif isinstance(default, int) and not isinstance(default, bool):
            if isinstance(value, bool) or not isinstance(value, int):
                errors.append(f"{section}.{key} must be an integer")
                continue
        elif isinstance(default, float):
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                errors.append(f"{section}.{key} must be a number")
                continue
            value = float(value)
        elif key in ("t_max", "geometry"):
            if not isinstance(value, list):
                errors.append(f"{section}.{key} must be a list")
                continue
            value = tuple(tuple(float(v) for v in p) if isinstance(p, list) else float(p) for p in value)
        kwargs[key] = value
    return kwargs


def config_from_dict(data: dict, base_dir=".") -> ScenarioConfig:
    errors: list[str] = []
    data = dict(data)
    name = data.pop("name", "scenario")
    parts = {}
    for section, cls in _SECTIONS.items():
        raw = data.pop(section, {})
        if not isinstance(raw, dict):
            errors.append(f"[{section}] must be a table")
            raw = {}
        kwargs = _coerce(cls, section, raw, errors)
        if cls is BaseGrid:
            probe = object.__new__(BaseGrid)
            for f in fields(BaseGrid):
                object.__setattr__(probe, f.name, kwargs.get(f.name, f.default))
            grid_errors = probe.validation_errors()
            errors.extend(grid_errors)
            parts[section] = None if grid_errors else BaseGrid(**kwargs)
        else:
            parts[section] = cls(**kwargs)
    for key in data:
        errors.append(f"unknown top-level key '{key}'")
    cfg = ScenarioConfig(name=str(name), base_dir=Path(base_dir),
                         **{k: v for k, v in parts.items() if v is not None})
    errors.extend(validate(cfg, grid_ok=parts["grid"] is not None))
    if errors:
        raise ScenarioError(errors)
    return cfg


def validate(cfg: ScenarioConfig, grid_ok: bool = True) -> list[str]:
    errors = []
    init, ev, out = cfg.initial, cfg.evolution, cfg.outputs
    if init.m not in (1, 2):
        errors.append("initial.m must be 1 or 2")
        return errors
    names = SYMBOLS + ("kappa",)
    keys = ("w11", "alpha1") if init.m == 1 else ("w11", "w12", "w22", "alpha1", "alpha2")
    if init.table is None:
        for key in keys:
            try:
                parse_expression(getattr(init, key), names)
            except ExpressionError as exc:
                errors.append(f"initial.{key}: {exc}")
    elif not (cfg.base_dir / init.table).is_file():
        errors.append(f"initial.table: file '{init.table}' does not exist")
    for key, expr in ev.free.items():
        try:
            parse_expression(expr, ("x", "y", "t1", "kappa"))
        except ExpressionError as exc:
            errors.append(f"evolution.free.{key}: {exc}")
    try:
        EvolutionConfig(m=init.m, t_max=ev.t_max, dt=ev.dt, t_nodes=ev.t_nodes,
                        node_kind=ev.node_kind, free_choice={k: None for k in ev.free})
    except ValueError as exc:
        errors.extend(str(exc).split("; "))
    if ev.check_every < 1:
        errors.append("evolution.check_every must be ≥ 1")
    if out.snapshot_every < 1:
        errors.append("outputs.snapshot_every must be ≥ 1")
    for key in out.phi_scan:
        if key not in ("t1", "t2", "y"):
            errors.append(f"outputs.phi_scan.{key} is not a scan axis")
    if (out.phi_scan or out.geometry) and init.m != 2:
        errors.append("fibration outputs need initial.m = 2")
    if cfg.tolerances.residual_ceiling <= 0:
        errors.append("tolerances.residual_ceiling must be > 0")
    if not errors and grid_ok:
        try:
            state = initial_state(cfg)
        except (ExpressionError, ValueError, OSError) as exc:
            errors.append(f"initial: {exc}")
        else:
            errors.extend(_band_limit_errors(state))
    return errors


def _band_limit_errors(state: AnsatzState, tol: float = 1e-8) -> list[str]:
    grid = state.grid
    cut = grid.Nx // 3 + 1
    out = []
    named = [("w11", state.w(0, 0)), ("alpha1", state.alpha[0])]
    if state.m == 2:
        named += [("w12", state.w(0, 1)), ("w22", state.w(1, 1)), ("alpha2", state.alpha[1])]
    for name, f in named:
        spec = np.abs(np.fft.fft(f, axis=0)) / grid.Nx
        scale = max(1.0, float(spec.max()))
        high = spec[cut:grid.Nx - cut + 1]
        if high.size and high.max() > tol * scale:
            out.append(f"initial.{name} is not band-limited (modes above Nx/3)")
    return out


def initial_state(cfg: ScenarioConfig) -> AnsatzState:
    """Evaluate the initial data on the grid at t = 0."""
    grid, init = cfg.grid, cfg.initial
    m = init.m
    if init.table is not None:
        return read_snapshot(cfg.base_dir / init.table, grid, m)
    xx, yy = grid.mesh()
    env = {"x": xx, "y": yy, "t1": 0.0, "t2": 0.0, "kappa": grid.kappa}

    def field_of(expr, real=True):
        v = np.broadcast_to(np.asarray(expression_eval(expr, env)), grid.shape)
        if real:
            if np.any(np.abs(np.imag(v)) > 0):
                raise ExpressionError(f"expression {expr!r} must be real")
            return np.real(v).astype(float)
        return v.astype(complex)

    if m == 1:
        winv = field_of(init.w11)[None]
        alpha = field_of(init.alpha1, real=False)[None]
    else:
        winv = np.stack([field_of(init.w11), field_of(init.w12), field_of(init.w22)])
        alpha = np.stack([field_of(init.alpha1, False), field_of(init.alpha2, False)])
    bad = spd_violations(winv, m)
    if bad.any():
        ix, iy = np.argwhere(bad)[0]
        raise ValueError(f"initial W^-1 is not positive definite at x = {grid.x[ix]:.6g}, y = {grid.y[iy]:.6g}")
    return AnsatzState(grid, m, winv, alpha)


def parse_scenario(path) -> ScenarioConfig:
    """Read and validate a scenario file; raises ScenarioError listing every problem."""
    path = Path(path)
    text = path.read_text()
    try:
        data = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ScenarioError([f"{path}: {exc}"]) from None
    return config_from_dict(data, base_dir=path.parent)


def config_to_dict(cfg: ScenarioConfig) -> dict:
    def clean(obj):
        if isinstance(obj, dict):
            return {k: clean(v) for k, v in obj.items() if v is not None}
        if isinstance(obj, (list, tuple)):
            return [clean(v) for v in obj]
        return obj

    out = {"name": cfg.name}
    for section in _SECTIONS:
        out[section] = clean(asdict(getattr(cfg, section)))
    return out


def serialize_scenario(cfg: ScenarioConfig) -> str:
    return tomli_w.dumps(config_to_dict(cfg))


def loads_scenario(text: str, base_dir=".") -> ScenarioConfig:
    return config_from_dict(tomli.loads(text), base_dir=base_dir)


def with_overrides(cfg: ScenarioConfig, **tolerances) -> ScenarioConfig:
    return replace(cfg, tolerances=replace(cfg.tolerances, **tolerances))


# CSV ---------------------------------------------------------------------------------


def fmt(v) -> str:
    return f"{float(v):.17g}"


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([fmt(v) if not isinstance(v, str) else v for v in row])


def snapshot_rows(state: AnsatzState):
    grid = state.grid
    xx, yy = grid.mesh()
    zero = np.zeros(grid.shape)
    cols = [xx, yy, state.w(0, 0)]
    if state.m == 2:
        cols += [state.w(0, 1), state.w(1, 1)]
    else:
        cols += [zero, zero]
    for j in range(2):
        a = state.alpha[j] if j < state.m else zero
        cols += [np.real(a), np.imag(a)]
    return np.stack([c.ravel() for c in cols], axis=1)


def write_snapshot(path, state: AnsatzState):
    write_csv(path, SNAPSHOT_COLUMNS, snapshot_rows(state))


def read_snapshot(path, grid: BaseGrid, m: int) -> AnsatzState:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = np.array([[float(v) for v in r] for r in reader if r])
    if tuple(header) != SNAPSHOT_COLUMNS:
        raise ValueError(f"{path}: expected columns {','.join(SNAPSHOT_COLUMNS)}")
    if rows.shape[0] != grid.Nx * grid.Ny:
        raise ValueError(f"{path}: {rows.shape[0]} rows do not match the {grid.Nx}x{grid.Ny} grid")
    xx, yy = grid.mesh()
    if not (np.allclose(rows[:, 0], xx.ravel(), atol=1e-12) and np.allclose(rows[:, 1], yy.ravel(), atol=1e-12)):
        raise ValueError(f"{path}: node coordinates do not match the grid")
    col = lambda k: rows[:, k].reshape(grid.shape)  # noqa: E731
    if m == 1:
        winv = col(2)[None]
        alpha = (col(5) + 1j * col(6))[None]
    else:
        winv = np.stack([col(2), col(3), col(4)])
        alpha = np.stack([col(5) + 1j * col(6), col(7) + 1j * col(8)])
    return AnsatzState(grid, m, winv, alpha)
