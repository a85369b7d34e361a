"""Brute-force cross-checks: direct transcription and finite-difference ci-derivatives."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .dynamics import ControlSignal, _march, prepare_grid
from .errors import DomainError, InvalidArgument, InvariantViolation
from .fracspace import Grid, PiecewiseLinear, Position, Problem, extend_tail
from .kernels import Tables
from .value import evaluate


@dataclass(frozen=True)
class OracleReport:
    rho_hat: float
    u_hat: ControlSignal
    value_gap: float | None
    condition: float
    asymmetry: float
    min_eigenvalue: float
    max_control: float


def _motion_maps(prob: Problem, pos: Position, grid: Grid):
    """Affine map ``u -> x = x_free + H u`` for controls constant on grid cells."""
    i0 = grid.index(pos.t)
    s = grid.nodes[i0:]
    K, n, m = s.size - 1, prob.n, prob.m
    a = extend_tail(pos, s)
    zero = np.zeros((K, n))
    x_free, _ = _march(prob, grid, i0, a, zero, zero)

    # column (cell c, component l) of H: unit control on one cell
    B_nodes = prob.B(s)
    eye = np.eye(K * m).reshape(K, m, K * m)
    bu_l = np.einsum("kij,kjc->kic", B_nodes[:-1], eye)
    bu_r = np.einsum("kij,kjc->kic", B_nodes[1:], eye)
    H, _ = _march(prob, grid, i0, np.zeros((K + 1, n, K * m)), bu_l, bu_r)
    return s, x_free, H


def direct_optimum(prob: Problem, pos: Position, grid: Grid, phi: float | None = None) -> OracleReport:
    """Minimize the transcribed cost over controls constant on each cell of ``[t, T]``.

    The cost is assembled here from scratch (trapezoidal state term,
    cell-averaged control weight) and minimized by one Cholesky solve.
    """
    if pos.t >= prob.T:
        raise DomainError("the direct transcription needs t < T")
    grid = prepare_grid(grid, [pos.t])
    s, x_free, H = _motion_maps(prob, pos, grid)
    K, n, m = s.size - 1, prob.n, prob.m
    h = np.diff(s)

    node_w = np.zeros(K + 1)
    node_w[:-1] += h / 2
    node_w[1:] += h / 2
    Qw = node_w[:, None, None] * prob.Q(s)
    Qw[-1] += prob.P
    Hf = H.reshape((K + 1) * n, K * m)
    QH = np.einsum("kab,kbc->kac", Qw, H).reshape((K + 1) * n, K * m)
    G = Hf.T @ QH
    R_nodes = prob.R(s)
    Rc = h[:, None, None] * 0.5 * (R_nodes[:-1] + R_nodes[1:])
    idx = np.arange(K)
    G4 = G.reshape(K, m, K, m)
    G4[idx, :, idx, :] += Rc
    asym = float(np.abs(G - G.T).max() / max(1.0, np.abs(G).max()))
    if asym > 1e-10:
        raise InvariantViolation(f"normal matrix asymmetric ({asym:.3e})")
    G = 0.5 * (G + G.T)
    g = QH.T @ x_free.ravel()
    const = float(x_free.ravel() @ np.einsum("kab,kb->ka", Qw, x_free).ravel())
    eig = np.linalg.eigvalsh(G)
    if eig[0] <= 0:
        raise InvariantViolation("normal matrix is not positive definite")
    try:
        fac = cho_factor(G, check_finite=False)
    except LinAlgError as exc:
        raise InvariantViolation("Cholesky factorization of the normal matrix failed") from exc
    u = -cho_solve(fac, g, check_finite=False)
    rho = const + float(g @ u)
    u_hat = ControlSignal(s, u.reshape(K, m))
    return OracleReport(
        rho_hat=rho,
        u_hat=u_hat,
        value_gap=None if phi is None else rho - phi,
        condition=float(eig[-1] / eig[0]),
        asymmetry=asym,
        min_eigenvalue=float(eig[0]),
        max_control=float(np.abs(u).max()),
    )


@dataclass(frozen=True)
class CiCheck:
    deltas: np.ndarray
    remainder: np.ndarray
    phi: float
    dt: float
    grad: np.ndarray

    @property
    def ratio(self) -> np.ndarray:
        return self.remainder / self.deltas


def fd_ci_check(prob: Problem, pos: Position, f0, deltas, grid: Grid) -> CiCheck:
    """Remainders of the first-order ci-expansion along a constant-derivative extension.

    ``r(delta) = phi(t + delta, x) - phi(t, w) - dt * delta - <grad, f0 delta>``
    where ``x`` continues ``w`` with Caputo derivative ``f0`` on ``[t, t + delta]``.
    """
    f0 = np.atleast_1d(np.asarray(f0, dtype=float))
    deltas = np.asarray(deltas, dtype=float)
    if pos.t >= prob.T:
        raise DomainError("the ci-expansion needs t < T")
    if np.any(deltas <= 0) or pos.t + deltas.max() >= prob.T:
        raise InvalidArgument("deltas must be positive with t + delta < T")
    grid = prepare_grid(grid, np.concatenate([[pos.t], pos.t + deltas]))
    tables = Tables(prob, grid)
    base = evaluate(prob, pos, tables)
    rem = []
    for dl in deltas:
        t1 = float(grid.nodes[grid.index(pos.t + dl)])
        ext = PiecewiseLinear.constant(np.array([pos.t, t1]), f0)
        later = evaluate(prob, pos.extend(ext), tables, derivatives=False).phi
        step = t1 - pos.t
        rem.append(later - base.phi - base.dt * step - base.grad_full @ f0 * step)
    return CiCheck(deltas, np.asarray(rem, dtype=float), float(base.phi), float(base.dt), base.grad_full)
