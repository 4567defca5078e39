"""Staged integration of the torus-bundle evolution system in t_1, t_2.

Stage 1 sweeps t_1 at t_2 = 0.  Evolved fields are the reduced Kähler
density f and the alpha_i; w^{11} is pinned by det W^{-1} = f and the
remaining entries are free choices (frozen initial data by default).

Stage 2 (m = 2) sweeps t_2 for a stack of t_1-nodes jointly.  Every
entry of W^{-1} is determined there:

    d/dt2 w11 = d/dt1 w12,   d/dt2 w12 = d/dt1 w22,   w22 pinned,

with d/dt1 taken by polynomial differentiation across the node stack.

The t-evolution is an elliptic (Cauchy-Kowalevsky) problem, so high x
modes grow like exp(k t).  x-derivatives in the right-hand side drop
modes above Nx/3 and initial data must be band-limited.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .ansatz import AnsatzState, NotPositiveDefinite, StateDerivative, spd_violations, verify_structure
from .grid import d_dx, d_dy, d_u, diff_matrix, fd_weights, interp_weights

FreeChoice = Callable[[np.ndarray, np.ndarray, float], np.ndarray]


class ConstraintViolation(RuntimeError):
    """Pinned entry or density left the positive-definite cone."""

    def __init__(self, message: str, t=None):
        super().__init__(message if t is None else f"{message} at t = {t}")
        self.t = t


class ResidualCeilingExceeded(RuntimeError):
    def __init__(self, message: str, t=None, value: float = float("nan")):
        super().__init__(message if t is None else f"{message} at t = {t}")
        self.t = t
        self.value = value


@dataclass
class EvolutionConfig:
    m: int = 2
    t_max: tuple[float, ...] = (0.1, 0.1)
    dt: float = 0.005
    t_nodes: int = 9
    node_kind: str = "chebyshev"
    free_choice: Mapping[str, FreeChoice] = field(default_factory=dict)
    dealias: bool = True
    residual_ceiling: float | None = 1e-6
    check_every: int = 1
    hitchin_stride: int | None = 16
    stepper: str = "RK4"

    def __post_init__(self):
        self.t_max = tuple(float(v) for v in np.atleast_1d(self.t_max))
        errors = self.validation_errors()
        if errors:
            raise ValueError("; ".join(errors))

    def validation_errors(self) -> list[str]:
        errors = []
        if self.m not in (1, 2):
            errors.append("evolution.m must be 1 or 2")
        if len(self.t_max) != self.m:
            errors.append(f"evolution.t_max must have {self.m} entries")
        if not self.dt > 0:
            errors.append("evolution.dt must be > 0")
        elif any(not t >= self.dt for t in self.t_max):
            errors.append("evolution.t_max must be ≥ evolution.dt")
        if self.m == 2 and self.t_nodes < 2:
            errors.append("evolution.t_nodes must be ≥ 2")
        if self.node_kind not in ("chebyshev", "uniform"):
            errors.append("evolution.node_kind must be chebyshev or uniform")
        if self.stepper != "RK4":
            errors.append("evolution.stepper must be RK4")
        allowed = {"w12", "w22"} if self.m == 2 else set()
        for key in self.free_choice:
            if key not in allowed:
                errors.append(f"evolution.free.{key} is not a free choice for m = {self.m}")
        return errors

    @property
    def t1_nodes(self) -> np.ndarray:
        """Stage-1 checkpoints; for m = 2 the t1-stack carried through stage 2."""
        if self.m == 1:
            return np.array([0.0, self.t_max[0]])
        if self.node_kind == "uniform":
            return np.linspace(0.0, self.t_max[0], self.t_nodes)
        # Chebyshev-Lobatto points keep polynomial differentiation well conditioned
        k = np.arange(self.t_nodes)
        nodes = 0.5 * self.t_max[0] * (1 - np.cos(np.pi * k / (self.t_nodes - 1)))
        nodes[0], nodes[-1] = 0.0, self.t_max[0]
        return nodes


# right-hand sides -------------------------------------------------------------------


def _free(config, key, grid, initial, t):
    fn = config.free_choice.get(key)
    if fn is None:
        return initial.w(*{"w12": (0, 1), "w22": (1, 1)}[key])
    xx, yy = grid.mesh()
    return np.broadcast_to(np.asarray(fn(xx, yy, t), dtype=float), grid.shape)


def _stage1_winv(f, grid, config, initial, t):
    """Packed W^{-1} with w11 pinned by det W^{-1} = f."""
    if config.m == 1:
        return f[None]
    w12 = _free(config, "w12", grid, initial, t)
    w22 = _free(config, "w22", grid, initial, t)
    w11 = (f + w12**2) / w22
    return np.stack([w11, w12, w22])


def _density_rate(alpha_l, grid, dealias):
    # i d theta_l as a multiple of (i/2) du ^ dubar
    return 2 * d_dy(alpha_l.imag, grid) - 2 * d_dx(alpha_l.real, grid, dealias)


def _alpha_rate(winv, m, l, grid, dealias):
    idx = {1: {(0, 0): 0}, 2: {(0, 0): 0, (0, 1): 1, (1, 0): 1, (1, 1): 2}}[m]
    return np.stack([d_u(winv[..., idx[(i, l)], :, :], grid, dealias) for i in range(m)], axis=-3)


def rhs(state: AnsatzState, l: int, config: EvolutionConfig, dwinv=None) -> StateDerivative:
    """d/dt_l of (w^{ij}, alpha_i, f) for one state.

    ``l`` is 0-based.  For the stage-2 sweep ``dwinv`` supplies d/dt1 of
    the packed W^{-1}; otherwise the evolved w-rates are zero here and the
    pinned/free entries are handled by the integrator.
    """
    grid, m = state.grid, state.m
    dens = _density_rate(state.alpha[l], grid, config.dealias)
    dalpha = _alpha_rate(state.winv, m, l, grid, config.dealias)
    dw = np.zeros_like(state.winv)
    if l == 1 and dwinv is not None:
        dw[0] = dwinv[1]
        dw[1] = dwinv[2]
        w11, w12 = state.winv[0], state.winv[1]
        # w22 = (f + w12^2) / w11
        dw[2] = (dens + 2 * w12 * dw[1] - state.winv[2] * dw[0]) / w11
    return StateDerivative(dw, dalpha, dens)


# trajectories ---------------------------------------------------------------------


@dataclass
class Trajectory:
    """Ordered (t-point, state) pairs with stage markers (1-based)."""

    points: list = field(default_factory=list)
    states: list = field(default_factory=list)
    stages: list = field(default_factory=list)
    t1_nodes: np.ndarray | None = None
    dt: float = 0.0
    _index: dict = field(default_factory=dict, repr=False)

    def append(self, t, state, stage):
        t = tuple(float(v) for v in t)
        self._index[t] = len(self.points)
        self.points.append(t)
        self.states.append(state)
        self.stages.append(stage)

    def __len__(self):
        return len(self.states)

    def index_of(self, t, tol: float = 1e-9) -> int:
        key = tuple(float(v) for v in t)
        if key in self._index:
            return self._index[key]
        pts = np.asarray(self.points)
        gap = np.max(np.abs(pts - np.asarray(key)), axis=1)
        i = int(np.argmin(gap))
        if gap[i] <= tol:
            return i
        raise KeyError(f"no recorded state at t = {key}")

    def state_at(self, t, tol: float = 1e-9) -> AnsatzState:
        return self.states[self.index_of(t, tol)]

    def stage_sequence(self, stage: int, t1=None):
        """(t-values along the stage, states, trajectory indices); stage 2
        is taken at fixed t_1."""
        ts, ss, idx = [], [], []
        for n, (p, s, st) in enumerate(zip(self.points, self.states, self.stages)):
            if st != stage:
                continue
            if stage == 2 and abs(p[0] - t1) > 1e-12:
                continue
            ts.append(p[stage - 1])
            ss.append(s)
            idx.append(n)
        return np.array(ts), ss, idx

    def t2_values(self) -> np.ndarray:
        return np.array(sorted({p[1] for p, st in zip(self.points, self.stages) if st == 2}))

    def interpolate(self, t) -> AnsatzState:
        """State at an arbitrary t.  Off-node t1 values use local Lagrange
        interpolation along stage 1 (t2 = 0) or the node-stack polynomial
        (t2 > 0); t2 must be a recorded value."""
        try:
            return self.state_at(t)
        except KeyError:
            pass
        t = tuple(float(v) for v in t)
        if len(t) == 1 or abs(t[1]) <= 1e-12:
            ts, ss, _ = self.stage_sequence(1)
            window, w = interp_weights(ts, t[0], 5)
            states = ss[window]
        else:
            i = self.index_of((self.t1_nodes[0], t[1]))
            t2 = self.points[i][1]
            states = [self.state_at((t1, t2)) for t1 in self.t1_nodes]
            w = fd_weights(self.t1_nodes, t[0], 0)
        if not (min(self.points)[0] - 1e-12 <= t[0] <= max(p[0] for p in self.points) + 1e-12):
            raise KeyError(f"t1 = {t[0]} outside the trajectory")
        mix = StateDerivative.from_states(states, w)
        return AnsatzState(states[0].grid, states[0].m, mix.winv, mix.alpha, t)

    @property
    def final(self) -> AnsatzState:
        return self.states[-1]


def _rk4(y, h, f):
    k1 = f(y, 0.0)
    k2 = f([a + 0.5 * h * b for a, b in zip(y, k1)], 0.5 * h)
    k3 = f([a + 0.5 * h * b for a, b in zip(y, k2)], 0.5 * h)
    k4 = f([a + h * b for a, b in zip(y, k3)], h)
    return [a + h / 6 * (b1 + 2 * b2 + 2 * b3 + b4) for a, b1, b2, b3, b4 in zip(y, k1, k2, k3, k4)]


def _substeps(interval, dt):
    n = max(1, math.ceil(interval / dt - 1e-9))
    return n, interval / n


def _make_state(grid, m, winv, alpha, f, t):
    bad = spd_violations(winv, m) | ~(f > 0)
    if bad.any():
        ix, iy = np.argwhere(bad)[0]
        raise ConstraintViolation(
            f"W^-1 lost positive definiteness at node ({ix}, {iy})", tuple(float(v) for v in t))
    try:
        return AnsatzState(grid, m, winv, alpha, t, f)
    except NotPositiveDefinite as exc:
        raise ConstraintViolation(str(exc), tuple(float(v) for v in t)) from exc


def evolve(initial: AnsatzState, config: EvolutionConfig, check: bool = True) -> Trajectory:
    """Integrate stage 1 (and stage 2 when m = 2) from ``initial`` at t = 0."""
    grid, m = initial.grid, initial.m
    if m != config.m:
        raise ValueError(f"state has m = {m} but config has m = {config.m}")
    gap = np.max(np.abs(initial.density - initial.det_winv()))
    if gap > 1e-10:
        raise ValueError(f"initial data violates det W^-1 = f by {gap:.3g}")
    traj = Trajectory(t1_nodes=config.t1_nodes, dt=config.dt)
    zeros = (0.0,) * m

    # stage 1
    t_now = [0.0]

    def f1(y, dtau):
        f, alpha = y
        winv = _stage1_winv(f, grid, config, initial, t_now[0] + dtau)
        return [_density_rate(alpha[0], grid, config.dealias),
                _alpha_rate(winv, m, 0, grid, config.dealias)]

    y = [initial.density.copy(), initial.alpha.copy()]
    t1 = 0.0
    nodes = config.t1_nodes
    node_states = [_make_state(grid, m, _stage1_winv(y[0], grid, config, initial, 0.0), y[1], y[0], zeros)]
    traj.append(zeros, node_states[0], 1)
    for a, b in zip(nodes[:-1], nodes[1:]):
        n, h = _substeps(b - a, config.dt)
        for k in range(n):
            t_now[0] = t1
            y = _rk4(y, h, f1)
            t1 = a + (k + 1) * h if k + 1 < n else b
            t = (t1,) + zeros[1:]
            state = _make_state(grid, m, _stage1_winv(y[0], grid, config, initial, t1), y[1], y[0], t)
            traj.append(t, state, 1)
        node_states.append(state)

    if m == 2:
        D1 = diff_matrix(nodes, order=1, width=None)

        def f2(y, dtau):
            f, alpha, w11, w12 = y
            w22 = (f + w12**2) / w11
            winv = np.stack([w11, w12, w22], axis=1)
            dwinv = np.einsum("ab,b...->a...", D1, winv)
            dens = _density_rate(alpha[:, 1], grid, config.dealias)
            dalpha = _alpha_rate(winv, m, 1, grid, config.dealias)
            return [dens, dalpha, dwinv[:, 1], dwinv[:, 2]]

        stack = [np.stack([s.density for s in node_states]),
                 np.stack([s.alpha for s in node_states]),
                 np.stack([s.winv[0] for s in node_states]),
                 np.stack([s.winv[1] for s in node_states])]
        n, h = _substeps(config.t_max[1], config.dt)
        for k in range(n):
            stack = _rk4(stack, h, f2)
            t2 = (k + 1) * h if k + 1 < n else config.t_max[1]
            f, alpha, w11, w12 = stack
            for j, t1 in enumerate(nodes):
                winv = np.stack([w11[j], w12[j], (f[j] + w12[j] ** 2) / w11[j]])
                state = _make_state(grid, m, winv, alpha[j], f[j], (t1, t2))
                traj.append((t1, t2), state, 2)

    if check and config.residual_ceiling is not None:
        summary = trajectory_residuals(traj, config)
        if summary["worst"] > config.residual_ceiling:
            raise ResidualCeilingExceeded(
                f"residual {summary['worst']:.3g} exceeds ceiling {config.residual_ceiling:.3g}",
                summary["worst_t"], summary["worst"])
    return traj


# runtime checks -------------------------------------------------------------------


def _fd_derivative(ts, states, i, width=5):
    lo = min(max(i - width // 2, 0), len(ts) - width)
    window = slice(lo, lo + width)
    w = fd_weights(ts[window], ts[i], 1)
    return StateDerivative.from_states(states[window], w)


def state_derivatives(traj: Trajectory, indices=None, width: int = 5) -> dict:
    """Finite-difference t-derivatives for recorded states.

    Stage-1 states get d/dt1 along the stage.  Stage-2 states get d/dt2
    along their t1-node (the stage-1 node state supplies t2 = 0) and d/dt1
    by polynomial differentiation across the node stack.  Returns
    ``{index: {l: StateDerivative}}``; states with too few neighbours are
    skipped.
    """
    wanted = set(range(len(traj))) if indices is None else set(indices)
    out = {}
    ts, ss, idx = traj.stage_sequence(1)
    if len(ts) >= width:
        for i, pos in enumerate(idx):
            if pos in wanted:
                out[pos] = {0: _fd_derivative(ts, ss, i, width)}
    if 2 not in traj.stages:
        return out
    m = traj.states[0].m
    nodes = traj.t1_nodes
    D1 = diff_matrix(nodes, order=1, width=None)
    for j, t1 in enumerate(nodes):
        ts2, ss2, idx2 = traj.stage_sequence(2, t1)
        ts2 = np.concatenate([[0.0], ts2])
        ss2 = [traj.state_at((t1,) + (0.0,) * (m - 1))] + ss2
        if len(ts2) < width:
            continue
        for i, pos in enumerate(idx2, start=1):
            if pos not in wanted:
                continue
            t2 = ts2[i]
            stack = [traj.state_at((u, t2)) for u in nodes]
            out[pos] = {0: StateDerivative.from_states(stack, D1[j]),
                        1: _fd_derivative(ts2, ss2, i, width)}
    return out


def cross_symmetry_residuals(derivs: Mapping[int, StateDerivative], m: int) -> dict:
    """Full symmetry of d/dt_l w^{ik} in (i, k, l) and d theta_i/dt_k = d theta_k/dt_i."""
    if m < 2 or not {0, 1} <= set(derivs):
        return {}
    w = lambda l, i, k: derivs[l].w(m, i, k)  # noqa: E731
    sym = max(np.max(np.abs(w(l, i, k) - w(k, i, l)))
              for i in range(2) for k in range(2) for l in range(2))
    theta = np.max(np.abs(derivs[1].alpha[0] - derivs[0].alpha[1]))
    return {"cross_symmetry": float(sym), "theta_symmetry": float(theta)}


def trajectory_residuals(traj: Trajectory, config: EvolutionConfig, width: int = 5) -> dict:
    """Worst residuals over the trajectory; evaluated every ``check_every`` states.

    ``equations`` maps each equation family to its worst sup and L2 norms.
    """
    step = max(config.check_every, 1)
    derivs = state_derivatives(traj, range(0, len(traj), step), width)
    worst, worst_t = 0.0, None
    per_eq: dict = {}
    hitchin: dict = {}
    constraint = 0.0
    for n, (p, s) in enumerate(zip(traj.points, traj.states)):
        constraint = max(constraint, float(np.max(np.abs(s.density - s.det_winv()))))
        d = derivs.get(n)
        if d is None:
            continue
        rep = verify_structure(s, d, hitchin_stride=config.hitchin_stride, dealias=config.dealias)
        for k, v in rep.equations.items():
            entry = per_eq.setdefault(k.split("[")[0], {"sup": 0.0, "l2": 0.0})
            entry["sup"] = max(entry["sup"], v["sup"])
            entry["l2"] = max(entry["l2"], v["l2"])
        for k, v in cross_symmetry_residuals(d, s.m).items():
            entry = per_eq.setdefault(k, {"sup": 0.0})
            entry["sup"] = max(entry["sup"], v)
        for k, v in rep.hitchin.items():
            if k == "decomposable":
                hitchin[k] = hitchin.get(k, True) and v
            elif k == "min_volume":
                hitchin[k] = min(hitchin.get(k, np.inf), v)
            else:
                hitchin[k] = max(hitchin.get(k, 0.0), v)
        r = max([rep.max_residual()] + list(cross_symmetry_residuals(d, s.m).values()))
        if r > worst:
            worst, worst_t = r, p
    worst = max(worst, constraint)
    return {"worst": worst, "worst_t": worst_t, "equations": per_eq,
            "hitchin": hitchin, "constraint": constraint, "checked": len(derivs)}
