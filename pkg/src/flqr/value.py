"""The explicit value functional, its ci-derivatives and the HJB residual.

Every routine accepts positions whose state carries a trailing batch axis;
the outputs then carry the same axis.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, InvalidArgument
from .fracspace import Position, Problem, eval_history, extend_tail
from .kernels import KernelTableM, Tables


@dataclass(frozen=True)
class AuxiliaryPaths:
    """Node samples of ``a, b`` (state valued) and ``c, d`` (control valued) on ``[t, T]``."""

    t: float
    start: int
    nodes: np.ndarray
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    d: np.ndarray


@dataclass(frozen=True)
class ValueReport:
    t: float
    phi: np.ndarray | float
    grad_full: np.ndarray | None = None
    grad_Bt: np.ndarray | None = None
    dt: np.ndarray | float | None = None
    hjb_residual: np.ndarray | float | None = None
    grad_consistency: float | None = None


def _quad(x, Mat, y):
    """``<x_k, Mat_k y_k>`` along the leading node axis, batch axes kept."""
    return np.einsum("ka...,kab,kb...->k...", x, Mat, y)


def auxiliary_paths(prob: Problem, pos: Position, tables: Tables, M_tab: KernelTableM | None = None) -> AuxiliaryPaths:
    grid = tables.grid
    alpha = prob.alpha
    start = grid.index(pos.t)
    nodes = grid.nodes[start:]
    size = nodes.size
    batch = pos.w0.shape[1:]
    a = extend_tail(pos, nodes)

    # b = a + int_t^tau Phi(tau, xi) A(xi) a(xi) (tau - xi)^(a-1) d xi
    A = tables.A_nodes[start:]
    if np.any(A):
        w = grid.node_weights_left(alpha - 1.0, start)[start:, start:]
        kern = w[:, :, None, None] * tables.phi.values[start:, start:]
        kern = kern.transpose(0, 2, 1, 3).reshape(size * prob.n, size * prob.n)
        Aa = np.einsum("kab,kb...->ka...", A, a)
        b = a + (kern @ Aa.reshape(size * prob.n, -1)).reshape(a.shape)
    else:
        b = a.copy()

    c = np.einsum("kab,b...->ka...", tables.c_term[start:], b[-1])
    c += np.einsum("ikab,kb...->ia...", tables.c_run[start:, start:], b)
    fm = tables.fredholm(pos.t) if M_tab is None else M_tab
    if fm.start != start:
        raise InvalidArgument("Fredholm table built for another base time")
    d = fm.solve(c) if c.size else c
    return AuxiliaryPaths(float(nodes[0]), start, nodes, a, b, c, d.reshape(c.shape))


def value_phi(prob: Problem, pos: Position, paths: AuxiliaryPaths | None, M_tab: KernelTableM | None):
    """``phi(t, w)``; at ``t = T`` the terminal quadratic form, with no quadrature."""
    if pos.t >= prob.T:
        wT = eval_history(pos, prob.T)
        return np.einsum("a...,ab,b...->...", wT, prob.P, wT)[()]
    b, c, d = paths.b, paths.c, paths.d
    nodes = paths.nodes
    bT = b[-1]
    terminal = np.einsum("a...,ab,b...->...", bT, prob.P, bT)
    running = _quad(b, prob.Q(nodes), b)
    running = np.tensordot(np.diff(nodes), 0.5 * (running[:-1] + running[1:]), axes=1)
    cross = M_tab.weights.apply(np.einsum("ka...,ka...->k...", c, d))
    return (terminal + running - cross)[()]


def ci_derivatives(prob: Problem, pos: Position, paths: AuxiliaryPaths, tables: Tables):
    """``(grad_full, grad_Bt, dt)`` at a position with ``t < T``.

    ``grad_full`` follows the full-gradient formula; ``grad_Bt`` is the
    control-space projection from ``d(t)`` alone.  The two agree through
    the discrete Fredholm equation.
    """
    if pos.t >= prob.T:
        raise DomainError("ci-derivatives are undefined at t = T")
    start = paths.start
    pref = tables.pref[start]
    fm = tables.fredholm(pos.t)
    b, d = paths.b, paths.d
    phi_T_t = tables.phi.values[-1, start]
    grad = 2.0 / pref * np.einsum("ba,bc,c...->a...", phi_T_t, prob.P, b[-1])
    grad += np.einsum("kab,kb...->a...", tables.grad_run[start, start:], b)
    # half kernel L(s_k, t) stands in for the gradient of c(s_k)
    half = tables.K.half[start:, start]
    wd = fm.weights.weights.reshape((-1,) + (1,) * (d.ndim - 1)) * d
    grad -= 2.0 / pref * np.einsum("kab,ka...->b...", half, wd)

    R_t = tables.R_nodes[start]
    grad_bt = 2.0 / pref * np.einsum("ab,b...->a...", R_t, d[0])
    w_t = paths.a[0]
    dt = (
        -np.einsum("a...,ab,b...->...", grad, tables.A_nodes[start], w_t)
        - np.einsum("a...,ab,b...->...", w_t, tables.Q_nodes[start], w_t)
        + np.einsum("a...,ab,b...->...", d[0], R_t, d[0]) / pref**2
    )
    return grad, grad_bt, dt[()]


def hamiltonian(prob: Problem, t: float, x, u, s):
    """Pre-Hamiltonian ``h(t, x, u, s)`` and its minimum over ``u``, ``H(t, x, s)``."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    s = np.asarray(s, dtype=float)
    A, B, Q, R = prob.A(t), prob.B(t), prob.Q(t), prob.R(t)
    h = s @ (A @ x + B @ u) + x @ Q @ x + u @ R @ u
    bts = B.T @ s
    H = s @ A @ x + x @ Q @ x - 0.25 * bts @ np.linalg.solve(R, bts)
    return float(h), float(H)


def _hamiltonian_min(prob: Problem, t: float, x: np.ndarray, s: np.ndarray):
    A, B, Q, R = prob.A(t), prob.B(t), prob.Q(t), prob.R(t)
    bts = np.einsum("ba,b...->a...", B, s)
    rb = np.linalg.solve(R, bts.reshape(bts.shape[0], -1)).reshape(bts.shape)
    return (
        np.einsum("a...,ab,b...->...", s, A, x)
        + np.einsum("a...,ab,b...->...", x, Q, x)
        - 0.25 * np.einsum("a...,a...->...", bts, rb)
    )


def hjb_residual(prob: Problem, pos: Position, report: ValueReport) -> float:
    """``dt + H(t, w(t), grad)``; vanishes for an exact solution of the HJB equation."""
    if pos.t >= prob.T:
        raise DomainError("the HJB residual is evaluated for t < T only")
    w_t = eval_history(pos, pos.t)
    return (report.dt + _hamiltonian_min(prob, pos.t, w_t, report.grad_full))[()]


def evaluate(prob: Problem, pos: Position, tables: Tables, derivatives: bool = True) -> ValueReport:
    """Value, ci-derivatives and HJB residual at one position (or a batch)."""
    if pos.t >= prob.T:
        return ValueReport(t=pos.t, phi=value_phi(prob, pos, None, None))
    fm = tables.fredholm(pos.t)
    paths = auxiliary_paths(prob, pos, tables, fm)
    phi = value_phi(prob, pos, paths, fm)
    if not derivatives:
        return ValueReport(t=pos.t, phi=phi)
    grad, grad_bt, dt = ci_derivatives(prob, pos, paths, tables)
    B_t = tables.B_nodes[paths.start]
    consistency = float(np.abs(np.einsum("ba,b...->a...", B_t, grad) - grad_bt).max())
    report = ValueReport(pos.t, phi, grad, grad_bt, dt, None, consistency)
    res = hjb_residual(prob, pos, report)
    return ValueReport(pos.t, phi, grad, grad_bt, dt, res, consistency)
