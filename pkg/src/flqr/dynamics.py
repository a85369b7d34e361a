"""Controlled motions, the fundamental solution matrix and Mittag-Leffler sums."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from .errors import InvalidArgument, NumericOverflow, SolverFailure
from .fracspace import Grid, PiecewiseLinear, Position, Problem, extend_tail
from .quadrature import cell_moments


# {{{ controls and trajectories


@dataclass(frozen=True)
class ControlSignal:
    """Piecewise-constant control on a partition of ``[t_start, T]``.

    ``values[k]`` holds on ``[knots[k], knots[k + 1])``.  A trailing batch
    axis is allowed (shape ``(cells, m, batch)``).
    """

    knots: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        knots = np.asarray(self.knots, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if knots.ndim != 1 or knots.size < 2 or np.any(np.diff(knots) <= 0):
            raise InvalidArgument("control partition must be strictly increasing with >= 2 points")
        if values.ndim < 2 or values.shape[0] != knots.size - 1:
            raise InvalidArgument("need one control vector per partition cell")
        if not np.all(np.isfinite(values)):
            raise InvalidArgument("control values must be finite")
        object.__setattr__(self, "knots", knots)
        object.__setattr__(self, "values", values)

    @classmethod
    def zero(cls, t_start: float, T: float, m: int) -> "ControlSignal":
        return cls(np.array([t_start, T]), np.zeros((1, m)))

    @classmethod
    def constant(cls, t_start: float, T: float, value) -> "ControlSignal":
        return cls(np.array([t_start, T]), np.atleast_1d(np.asarray(value, dtype=float))[None])

    @property
    def t_start(self) -> float:
        return float(self.knots[0])

    @property
    def m(self) -> int:
        return self.values.shape[1]

    def __call__(self, tau):
        tau = np.asarray(tau, dtype=float)
        k = np.clip(np.searchsorted(self.knots, tau, side="right") - 1, 0, self.knots.size - 2)
        return self.values[k]

    def on_cells(self, nodes) -> np.ndarray:
        """Value on each cell of ``nodes`` (evaluated at cell midpoints)."""
        nodes = np.asarray(nodes, dtype=float)
        return self((nodes[:-1] + nodes[1:]) / 2.0)


@dataclass(frozen=True)
class Trajectory:
    """Motion from a position onward, sampled on grid nodes ``s_0 = t < ... < s_K``.

    ``f_left``/``f_right`` are the Caputo-derivative values at the two ends
    of each cell (they jump where the control jumps).  ``history`` is the
    position the motion started from.
    """

    history: Position
    nodes: np.ndarray
    states: np.ndarray
    f_left: np.ndarray
    f_right: np.ndarray
    control: ControlSignal | None = None

    @property
    def caputo(self) -> np.ndarray:
        """Right-limit Caputo derivative at each node (left limit at the last)."""
        return np.concatenate([self.f_left, self.f_right[-1:]])

    def derivative(self, k: int | None = None) -> PiecewiseLinear:
        """Caputo derivative samples on ``[s_0, s_k]``."""
        k = self.nodes.size - 1 if k is None else k
        return PiecewiseLinear(self.nodes[: k + 1], self.f_left[:k], self.f_right[:k])

    def position_at(self, k: int) -> Position:
        """Position ``(s_k, x)`` whose history is the original one followed by this motion."""
        hist = _broadcast_position(self.history, self.states.shape[1:])
        if k == 0:
            return hist
        return hist.extend(self.derivative(k))


def _broadcast_position(pos: Position, shape: tuple) -> Position:
    if pos.w0.shape == shape:
        return pos
    w0 = np.broadcast_to(pos.w0.reshape(pos.w0.shape + (1,) * (len(shape) - pos.w0.ndim)), shape)
    f = pos.f
    extra = (1,) * (len(shape) - len(f.value_shape))
    left = np.broadcast_to(f.left.reshape(f.left.shape + extra), (f.left.shape[0], *shape))
    right = np.broadcast_to(f.right.reshape(f.right.shape + extra), (f.right.shape[0], *shape))
    return Position(pos.alpha, pos.t, w0.copy(), PiecewiseLinear(f.knots, left.copy(), right.copy()))


# }}}


# {{{ motion


def _march(prob: Problem, grid: Grid, i0: int, a: np.ndarray, bu_left, bu_right, stop: int | None = None):
    """Implicit product-trapezoid march from node ``i0``.

    ``a`` holds the tail extension at nodes ``i0..``; ``bu_left``/``bu_right``
    hold ``B u`` at the two ends of each cell.  Returns node states and the
    ``A x`` samples.  Arrays carry a trailing batch axis.
    """
    alpha = prob.alpha
    s = grid.nodes[i0:]
    K = s.size - 1 if stop is None else stop
    gam = math.gamma(alpha)
    wl, wr = grid.left_weights(alpha - 1.0)
    wl = wl[i0 : i0 + K + 1, i0 : i0 + K] / gam
    wr = wr[i0 : i0 + K + 1, i0 : i0 + K] / gam

    forcing = np.tensordot(wl, bu_left[:K], axes=1) + np.tensordot(wr, bu_right[:K], axes=1)
    x = a[: K + 1] + forcing
    A_nodes = prob.A(s[: K + 1])
    ax = np.zeros_like(x)
    if not np.any(A_nodes):
        return x, ax

    # node weights: wn[k, i] multiplies A x at node i in the update of node k
    wn = np.zeros((K + 1, K + 1))
    wn[:, :-1] += wl
    wn[:, 1:] += wr
    eye = np.eye(prob.n)
    ax[0] = A_nodes[0] @ x[0]
    for k in range(1, K + 1):
        rhs = x[k] + np.tensordot(wn[k, :k], ax[:k], axes=1)
        try:
            x[k] = np.linalg.solve(eye - wn[k, k] * A_nodes[k], rhs)
        except np.linalg.LinAlgError as exc:
            raise SolverFailure("singular implicit step matrix", step=i0 + k) from exc
        if not np.all(np.isfinite(x[k])):
            raise SolverFailure("non-finite state", step=i0 + k)
        ax[k] = A_nodes[k] @ x[k]
    return x, ax


def prepare_grid(grid: Grid, times) -> Grid:
    """``grid`` itself if every time is already a node, else a merged grid."""
    times = np.atleast_1d(np.asarray(times, dtype=float))
    if all(grid.has_node(t) for t in times):
        return grid
    return grid.with_nodes(times)


def solve_motion(prob: Problem, pos: Position, u: ControlSignal, grid: Grid) -> Trajectory:
    """Motion of ``D^alpha x = A x + B u`` from ``pos`` under the piecewise-constant ``u``.

    The grid is refined with ``pos.t`` and the control switching times if
    they are not nodes already.  ``u`` may carry a trailing batch axis; the
    history is then shared by every batch member.
    """
    if abs(u.t_start - pos.t) > 1e-12 * max(prob.T, 1.0) or abs(u.knots[-1] - prob.T) > 1e-12 * max(prob.T, 1.0):
        raise InvalidArgument("control must be defined on [t, T]")
    if u.m != prob.m:
        raise InvalidArgument(f"control has {u.m} components, expected {prob.m}")
    grid = prepare_grid(grid, u.knots)
    i0 = grid.index(pos.t)
    s = grid.nodes[i0:]
    batch = u.values.shape[2:]
    pos_b = _broadcast_position(pos, (prob.n, *batch))
    a = extend_tail(pos_b, s)
    uc = u.on_cells(s)
    B_nodes = prob.B(s)
    bu_left = np.einsum("kij,kj...->ki...", B_nodes[:-1], uc)
    bu_right = np.einsum("kij,kj...->ki...", B_nodes[1:], uc)
    x, ax = _march(prob, grid, i0, a, bu_left, bu_right)
    return Trajectory(
        history=pos_b,
        nodes=s.copy(),
        states=x,
        f_left=ax[:-1] + bu_left,
        f_right=ax[1:] + bu_right,
        control=u,
    )


# }}}


# {{{ fundamental matrix


@dataclass(frozen=True)
class FundamentalMatrixTable:
    """Node samples ``values[i, j] = Phi(s_i, s_j)`` for ``i >= j`` (zero above)."""

    grid: Grid
    values: np.ndarray
    alpha: float

    def __call__(self, i: int, j: int) -> np.ndarray:
        if i < j:
            raise InvalidArgument("Phi(tau, xi) needs tau >= xi")
        return self.values[i, j]


def _phi_row(i: int, nodes: np.ndarray, A_nodes: np.ndarray, alpha: float) -> np.ndarray:
    """Solve for ``Phi(s_i, s_j)``, ``j < i``, by one triangular solve."""
    n = A_nodes.shape[-1]
    gam = math.gamma(alpha)
    beta = alpha - 1.0
    tau = nodes[i]
    # every (j, c) pair with j <= c < i: cell c lies inside (s_j, s_i)
    jj, cc = np.triu_indices(i)
    sing = np.stack([nodes[jj], np.full(jj.size, tau)], axis=-1)
    w_p, w_q = cell_moments(nodes[cc], nodes[cc + 1], sing, beta)
    omega = np.zeros((i, i + 1))
    np.add.at(omega, (jj, cc), w_p)
    np.add.at(omega, (jj, cc + 1), w_q)
    coef = (tau - nodes[:i]) ** (1.0 - alpha) / gam
    omega *= coef[:, None]

    At = np.swapaxes(A_nodes[: i + 1], -1, -2)
    eye = np.eye(n)
    rhs = eye / gam + omega[:, i, None, None] * (At[i] / gam)
    # block (j, k) = delta_jk I - omega[j, k] A_k^T, upper triangular in blocks
    mat = -omega[:, None, :i, None] * np.swapaxes(At[:i], 0, 1)[None]
    mat = mat.reshape(i * n, i * n) if n == 1 else mat
    if n == 1:
        mat = mat + np.eye(i)
        sol = solve_triangular(mat, rhs.reshape(i, 1), check_finite=False)
        out = sol.reshape(i, 1, 1)
    else:
        idx = np.arange(i)
        mat[idx, :, idx, :] += eye
        diag = mat[idx, :, idx, :]
        try:
            dinv = np.linalg.inv(diag)
        except np.linalg.LinAlgError as exc:
            raise SolverFailure("singular diagonal block in fundamental matrix", step=i) from exc
        mat = np.einsum("jab,jbkc->jakc", dinv, mat).reshape(i * n, i * n)
        rhs = np.einsum("jab,jbc->jac", dinv, rhs).reshape(i * n, n)
        sol = solve_triangular(mat, rhs, unit_diagonal=True, check_finite=False)
        out = sol.reshape(i, n, n)
    if not np.all(np.isfinite(out)):
        raise SolverFailure("non-finite fundamental matrix row", step=i)
    return np.swapaxes(out, -1, -2)


def fundamental_matrix(prob: Problem, grid: Grid) -> FundamentalMatrixTable:
    """Tabulate ``Phi`` on all node pairs of ``grid``.

    For each fixed ``tau = s_i`` the defining equation couples ``Phi(tau, xi)``
    only to values with larger ``xi``, so each row is a single (block)
    triangular solve.  Both endpoint singularities of the kernel are
    integrated with Gauss-Jacobi cell rules.
    """
    nodes = grid.nodes
    n = prob.n
    gam = math.gamma(prob.alpha)
    values = np.zeros((nodes.size, nodes.size, n, n))
    eye = np.eye(n) / gam
    values[np.arange(nodes.size), np.arange(nodes.size)] = eye
    A_nodes = prob.A(nodes)
    if not np.any(A_nodes):
        rows, cols = np.tril_indices(nodes.size)
        values[rows, cols] = eye
        return FundamentalMatrixTable(grid, values, prob.alpha)
    for i in range(1, nodes.size):
        values[i, :i] = _phi_row(i, nodes, A_nodes, prob.alpha)
    return FundamentalMatrixTable(grid, values, prob.alpha)


# }}}


# {{{ Mittag-Leffler


def _ml_series(alpha: float, beta: float, Z: np.ndarray, matrix: bool, tol: float, max_terms: int):
    if matrix:
        term = np.eye(Z.shape[0])
    else:
        term = np.ones_like(Z)
    lg_prev = math.lgamma(beta)
    term = term * math.exp(-lg_prev)
    total = term.copy()
    for k in range(1, max_terms + 1):
        lg = math.lgamma(alpha * k + beta)
        step = math.exp(lg_prev - lg)
        term = (term @ Z if matrix else term * Z) * step
        lg_prev = lg
        total = total + term
        if not np.all(np.isfinite(total)):
            raise NumericOverflow(f"Mittag-Leffler series overflowed after {k} terms")
        tnorm = np.abs(term).max() if term.size else 0.0
        if tnorm < tol * max(1.0, np.abs(total).max()) and step * (np.abs(Z).max() if Z.size else 0.0) < 1.0:
            return total
    raise NumericOverflow(f"Mittag-Leffler series did not converge within {max_terms} terms")


def mittag_leffler(alpha: float, beta: float, Z, tol: float = 1e-16, max_terms: int = 10_000):
    """Two-parameter Mittag-Leffler function ``sum_k Z**k / Gamma(alpha k + beta)``.

    ``Z`` may be a scalar, a 1d array (evaluated elementwise) or a square
    matrix (matrix power series).
    """
    if alpha <= 0 or beta <= 0:
        raise InvalidArgument("Mittag-Leffler parameters must be positive")
    Z = np.asarray(Z, dtype=float)
    matrix = Z.ndim == 2
    if matrix and Z.shape[0] != Z.shape[1]:
        raise InvalidArgument("matrix argument must be square")
    out = _ml_series(alpha, beta, Z, matrix, tol, max_terms)
    return float(out) if Z.ndim == 0 else out


# }}}
