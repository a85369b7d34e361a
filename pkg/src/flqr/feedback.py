"""Sample-and-hold feedback built from the value functional."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dynamics import ControlSignal, Trajectory, _march, prepare_grid, solve_motion
from .errors import DomainError, InvalidArgument
from .fracspace import Grid, PiecewiseLinear, Position, Problem, extend_tail
from .kernels import Tables
from .value import auxiliary_paths, evaluate


@dataclass(frozen=True)
class FeedbackConfig:
    """Measurement times ``t = tau_1 < ... < tau_{l+1} = vartheta < T``."""

    partition: np.ndarray

    def __post_init__(self):
        part = np.asarray(self.partition, dtype=float)
        if part.ndim != 1 or part.size < 2 or np.any(np.diff(part) <= 0):
            raise InvalidArgument("partition must be strictly increasing with at least two points")
        object.__setattr__(self, "partition", part)

    @classmethod
    def uniform(cls, t: float, vartheta: float, steps: int) -> "FeedbackConfig":
        if not vartheta > t:
            raise InvalidArgument("vartheta must exceed the initial time")
        if steps < 1:
            raise InvalidArgument("need at least one feedback step")
        return cls(np.linspace(t, vartheta, int(steps) + 1))

    @property
    def vartheta(self) -> float:
        return float(self.partition[-1])

    @property
    def steps(self) -> int:
        return self.partition.size - 1

    @property
    def diameter(self) -> float:
        return float(np.diff(self.partition).max())


@dataclass(frozen=True)
class FeedbackRunReport:
    control: ControlSignal
    trajectory: Trajectory
    cost: float
    phi: float
    gap: float
    kappa_times: np.ndarray
    kappa: np.ndarray


def strategy_U(prob: Problem, pos: Position, tables: Tables) -> np.ndarray:
    """Feedback value ``-d(t) / (T - t)**(1 - alpha)`` at a position (batch-aware)."""
    if pos.t >= prob.T:
        raise DomainError("the feedback strategy is undefined at t = T")
    paths = auxiliary_paths(prob, pos, tables)
    return -paths.d[0] / tables.pref[paths.start]


def cost_J(prob: Problem, pos: Position, u: ControlSignal, x: Trajectory, running_to_go: bool = False):
    """Terminal term plus trapezoidal running cost along ``x``.

    With ``running_to_go=True`` also returns ``int_{s_k}^T`` of the running
    cost for every node of the trajectory.
    """
    nodes = x.nodes
    h = np.diff(nodes)
    states = x.states
    xT = states[-1]
    terminal = np.einsum("a...,ab,b...->...", xT, prob.P, xT)
    xq = np.einsum("ka...,kab,kb...->k...", states, prob.Q(nodes), states)
    uc = u.on_cells(nodes)
    R_nodes = prob.R(nodes)
    r_cell = 0.5 * (R_nodes[:-1] + R_nodes[1:])
    ur = np.einsum("ka...,kab,kb...->k...", uc, r_cell, uc)
    h_b = h.reshape((-1,) + (1,) * (xq.ndim - 1))
    cells = 0.5 * h_b * (xq[:-1] + xq[1:]) + h_b * ur
    total = terminal + cells.sum(axis=0)
    if not running_to_go:
        return total[()]
    to_go = np.concatenate([np.cumsum(cells[::-1], axis=0)[::-1], np.zeros_like(cells[:1])])
    return total[()], to_go


def kappa_path(prob: Problem, pos: Position, u: ControlSignal, x: Trajectory, tables: Tables, times=None):
    """``kappa(s) = phi(s, x_s) - int_s^T running cost`` at trajectory nodes.

    ``times`` selects the nodes (default: every trajectory node); ``T`` is
    always included, where ``kappa`` is the terminal cost.
    """
    _, to_go = cost_J(prob, pos, u, x, running_to_go=True)
    nodes = x.nodes
    if times is None:
        idx = np.arange(nodes.size)
    else:
        idx = np.array([int(np.argmin(np.abs(nodes - s))) for s in np.atleast_1d(times)])
        if not np.allclose(nodes[idx], times, rtol=0, atol=1e-12 * max(prob.T, 1.0)):
            raise InvalidArgument("kappa times must be trajectory nodes")
        idx = np.union1d(idx, [nodes.size - 1])
    vals = []
    for k in idx:
        phi = evaluate(prob, x.position_at(int(k)), tables, derivatives=False).phi
        vals.append(phi - to_go[k])
    return nodes[idx], np.asarray(vals)


def run_feedback(
    prob: Problem,
    pos: Position,
    cfg: FeedbackConfig,
    grid: Grid,
    tables: Tables | None = None,
    kappa: bool = True,
) -> FeedbackRunReport:
    """Step-by-step feedback procedure with zero control after ``vartheta``."""
    if abs(cfg.partition[0] - pos.t) > 1e-12 * max(prob.T, 1.0):
        raise InvalidArgument("partition must start at the position time")
    if cfg.vartheta >= prob.T:
        raise InvalidArgument("vartheta must be strictly less than T")
    if tables is None or not all(tables.grid.has_node(s) for s in cfg.partition):
        grid = prepare_grid(grid, cfg.partition)
        tables = Tables(prob, grid)
    grid = tables.grid
    nodes = grid.nodes
    i0 = grid.index(pos.t)
    stops = [grid.index(s) for s in cfg.partition] + [grid.N]
    B_nodes = tables.B_nodes

    current = pos
    states = [extend_tail(pos, nodes[i0 : i0 + 1])]
    f_left, f_right, controls = [], [], []
    for j in range(len(stops) - 1):
        lo, hi = stops[j], stops[j + 1]
        if j < cfg.steps:
            u_j = strategy_U(prob, current, tables)
        else:
            u_j = np.zeros(prob.m)
        controls.append(u_j)
        seg = nodes[lo : hi + 1]
        a = extend_tail(current, seg)
        bu_l = B_nodes[lo:hi] @ u_j
        bu_r = B_nodes[lo + 1 : hi + 1] @ u_j
        x, ax = _march(prob, grid, lo, a, bu_l, bu_r, stop=hi - lo)
        fl, fr = ax[:-1] + bu_l, ax[1:] + bu_r
        current = current.extend(PiecewiseLinear(seg, fl, fr))
        states.append(x[1:])
        f_left.append(fl)
        f_right.append(fr)

    knots = np.append(cfg.partition, prob.T)
    control = ControlSignal(knots, np.asarray(controls))
    traj = Trajectory(
        history=pos,
        nodes=nodes[i0:].copy(),
        states=np.concatenate(states),
        f_left=np.concatenate(f_left),
        f_right=np.concatenate(f_right),
        control=control,
    )
    cost = float(cost_J(prob, pos, control, traj))
    phi = float(evaluate(prob, pos, tables, derivatives=False).phi)
    if kappa:
        k_times, k_vals = kappa_path(prob, pos, control, traj, tables, cfg.partition)
    else:
        k_times, k_vals = np.empty(0), np.empty(0)
    return FeedbackRunReport(control, traj, cost, phi, cost - phi, k_times, k_vals)


def random_controls(prob: Problem, grid: Grid, t: float, cells: int, count: int, rng: np.random.Generator, scale: float = 1.0):
    """Batch of piecewise-constant controls with standard normal values.

    Switching times are taken from the nodes of ``grid`` so that motions
    can be computed on it without refinement.
    """
    sub = grid.nodes[grid.index(t):]
    pick = np.unique(np.round(np.linspace(0, sub.size - 1, cells + 1)).astype(int))
    knots = sub[pick]
    return ControlSignal(knots, scale * rng.standard_normal((knots.size - 1, prob.m, count)))


def kappa_batch(prob: Problem, pos: Position, u: ControlSignal, tables: Tables, times):
    """``kappa`` at ``times`` for a batch of controls sharing one history.

    Each base time needs one Fredholm factorization, shared by the batch.
    """
    if not all(tables.grid.has_node(s) for s in u.knots):
        raise InvalidArgument("control switching times must be nodes of the table grid")
    traj = solve_motion(prob, pos, u, tables.grid)
    return kappa_path(prob, pos, u, traj, tables, times)


__all__ = [
    "FeedbackConfig",
    "FeedbackRunReport",
    "strategy_U",
    "run_feedback",
    "cost_J",
    "kappa_path",
    "kappa_batch",
    "random_controls",
]
