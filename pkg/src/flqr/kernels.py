"""The kernel ``K``, the Fredholm solve for ``M`` and cached table sets."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from .dynamics import FundamentalMatrixTable, fundamental_matrix
from .errors import InvalidArgument, SolverFailure
from .fracspace import Grid, Problem
from .quadrature import cell_moments, left_cell_weights


@dataclass(frozen=True)
class SingularWeightRule:
    """Node weights for ``int_t^T g(eta) (T - eta)**(2 alpha - 2) d eta``.

    ``weights[k]`` multiplies ``g`` at grid node ``start + k``; the rule is
    exact for piecewise-linear ``g``.
    """

    grid: Grid
    t: float
    start: int
    weights: np.ndarray

    def apply(self, g) -> np.ndarray:
        return np.tensordot(self.weights, np.asarray(g, dtype=float), axes=1)


def singular_weights(grid: Grid, t: float, alpha: float) -> SingularWeightRule:
    start = grid.index(t)
    wl, wr = left_cell_weights(grid.nodes[start:], [grid.T], 2.0 * alpha - 2.0)
    w = np.zeros(grid.N + 1 - start)
    w[:-1] += wl[0]
    w[1:] += wr[0]
    return SingularWeightRule(grid, float(grid.nodes[start]), start, w)


# {{{ K


@dataclass(frozen=True)
class KernelTableK:
    """``K(s_i, s_j)`` on all node pairs, plus the half kernel ``L``.

    ``L[i, j]`` (``m x n``) is ``B(s_i)^T [Phi(T, s_i)^T P Phi(T, s_j) +
    (T - s_i)^(1-a) (T - s_j)^(1-a) Khat(s_i, s_j)]`` where ``Khat`` is the
    running-cost integral; ``K[i, j] = L[i, j] B(s_j)``.  ``defect`` is the
    relative symmetry defect before symmetrization.
    """

    values: np.ndarray
    half: np.ndarray
    defect: float


def _running_cost_kernel(phi: FundamentalMatrixTable, Q_nodes: np.ndarray, alpha: float) -> np.ndarray:
    """``Khat[i, j] = int_{s_i v s_j}^T Phi(., s_i)^T Q Phi(., s_j) (.-s_i)^(a-1) (.-s_j)^(a-1)``."""
    nodes = phi.grid.nodes
    size = nodes.size
    n = Q_nodes.shape[-1]
    beta = alpha - 1.0
    vals = phi.values
    q_phi = np.swapaxes(np.einsum("kab,kjbc->kjac", Q_nodes, vals), 0, 1)
    out = np.zeros((size, size, n, n))
    for i in range(size - 1):
        # pairs (j, c) with j <= i and cell c starting at or after s_i
        jj, cc = np.meshgrid(np.arange(i + 1), np.arange(i, size - 1), indexing="ij")
        jj, cc = jj.ravel(), cc.ravel()
        sing = np.stack([np.full(jj.size, nodes[i]), nodes[jj]], axis=-1)
        w_p, w_q = cell_moments(nodes[cc], nodes[cc + 1], sing, beta)
        omega = np.zeros((i + 1, size))
        np.add.at(omega, (jj, cc), w_p)
        np.add.at(omega, (jj, cc + 1), w_q)
        # out[i, j] = sum_k omega[j, k] Phi(s_k, s_i)^T Q_k Phi(s_k, s_j)
        left = omega[:, :, None, None] * np.swapaxes(vals[:, i], -1, -2)[None]
        left = np.swapaxes(left, 1, 2).reshape(i + 1, n, size * n)
        right = q_phi[: i + 1].reshape(i + 1, size * n, n)
        out[i, : i + 1] = left @ right
    # the cell rule is symmetric in the two singular points
    lower = np.tril_indices(size, -1)
    out[lower[1], lower[0]] = np.swapaxes(out[lower], -1, -2)
    return out


def build_K(prob: Problem, phi: FundamentalMatrixTable) -> KernelTableK:
    """Assemble ``K`` on every node pair and symmetrize it.

    The asymmetry of the assembled table is recorded as ``defect`` before
    the table is averaged with its transpose, so that
    ``K(s_i, s_j)^T = K(s_j, s_i)`` holds exactly afterwards.
    """
    grid = phi.grid
    nodes = grid.nodes
    alpha = prob.alpha
    T = grid.T
    B_nodes = prob.B(nodes)
    Q_nodes = prob.Q(nodes)
    phi_T = phi.values[-1]
    term = np.einsum("iba,bc,jcd->ijad", phi_T, prob.P, phi_T)
    if np.any(Q_nodes):
        khat = _running_cost_kernel(phi, Q_nodes, alpha)
    else:
        khat = np.zeros_like(term)
    pref = (T - nodes) ** (1.0 - alpha)

    def assemble(kh):
        inner = term + pref[:, None, None, None] * pref[None, :, None, None] * kh
        half = np.einsum("iba,ijbc->ijac", B_nodes, inner)
        return half, np.einsum("ijac,jcd->ijad", half, B_nodes)

    _, K_raw = assemble(khat)
    asym = np.abs(K_raw - np.swapaxes(np.swapaxes(K_raw, 0, 1), -1, -2)).max()
    defect = float(asym / max(1.0, np.abs(K_raw).max()))
    khat = 0.5 * (khat + np.swapaxes(np.swapaxes(khat, 0, 1), -1, -2))
    half, K = assemble(khat)
    # the B products round differently on each side
    K = 0.5 * (K + np.swapaxes(np.swapaxes(K, 0, 1), -1, -2))
    return KernelTableK(values=K, half=half, defect=defect)


# }}}


# {{{ M


@dataclass
class KernelTableM:
    """Discrete Fredholm operator ``R + K W`` at base node ``start``.

    The operator is LU-factored once.  ``solve`` applies its inverse to any
    number of right-hand sides; the kernel ``M(., . | t)`` itself is formed
    on first access of :attr:`values`.
    """

    t: float
    start: int
    nodes: np.ndarray
    weights: SingularWeightRule
    R_nodes: np.ndarray
    K_block: np.ndarray
    _lu: tuple = field(repr=False)
    _values: np.ndarray | None = field(default=None, repr=False)

    @property
    def m(self) -> int:
        return self.R_nodes.shape[-1]

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        """Solve ``R g + int K g (T - .)**(2a-2) = rhs`` at the nodes; ``rhs`` is ``(nodes, m, ...)``."""
        rhs = np.asarray(rhs, dtype=float)
        flat = rhs.reshape(rhs.shape[0] * rhs.shape[1], -1)
        out = lu_solve(self._lu, flat, check_finite=False)
        return out.reshape(rhs.shape)

    @property
    def values(self) -> np.ndarray:
        """``M[i, j] = M(s_i, s_j | t)`` for nodes ``s_i, s_j >= t``."""
        if self._values is None:
            size, m = self.nodes.size, self.m
            r_inv = np.linalg.inv(self.R_nodes)
            rhs = -np.einsum("ijab,jbc->iajc", self.K_block, r_inv).reshape(size * m, size * m)
            sol = lu_solve(self._lu, rhs, check_finite=False)
            self._values = sol.reshape(size, m, size, m).transpose(0, 2, 1, 3)
        return self._values

    def symmetry_defect(self) -> float:
        M = self.values
        return float(np.abs(M - np.swapaxes(np.swapaxes(M, 0, 1), -1, -2)).max())

    def residual(self) -> float:
        """Max nodewise residual of the defining equation for the discrete ``M``."""
        M = self.values
        w = self.weights.weights
        lhs = np.einsum("iab,ijbc->ijac", self.R_nodes, M)
        size, m = self.nodes.size, self.m
        kw = (self.K_block * w[None, :, None, None]).transpose(0, 2, 1, 3).reshape(size * m, size * m)
        lhs += (kw @ M.transpose(0, 2, 1, 3).reshape(size * m, size * m)).reshape(size, m, size, m).transpose(0, 2, 1, 3)
        rhs = -np.einsum("ijab,jbc->ijac", self.K_block, np.linalg.inv(self.R_nodes))
        return float(np.abs(lhs - rhs).max())


def solve_M(prob: Problem, K: KernelTableK, grid: Grid, t: float) -> KernelTableM:
    """Nyström discretization of the Fredholm equation for ``M(., . | t)``."""
    rule = singular_weights(grid, t, prob.alpha)
    start = rule.start
    nodes = grid.nodes[start:]
    m = prob.m
    R_nodes = prob.R(nodes)
    K_block = K.values[start:, start:]
    size = nodes.size
    op = K_block * rule.weights[None, :, None, None]
    op = op.transpose(0, 2, 1, 3).reshape(size * m, size * m)
    idx = np.arange(size)
    blocks = op.reshape(size, m, size, m)
    blocks[idx, :, idx, :] += R_nodes
    try:
        lu = lu_factor(op, check_finite=False)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise SolverFailure("Fredholm operator factorization failed", step=start) from exc
    if np.any(np.diag(lu[0]) == 0) or not np.all(np.isfinite(lu[0])):
        raise SolverFailure("Fredholm operator is singular", step=start)
    return KernelTableM(float(nodes[0]), start, nodes, rule, R_nodes, K_block, lu)


# }}}


# {{{ table set


class Tables:
    """Everything that depends on the grid but not on the position.

    Holds ``Phi``, ``K`` and the linear maps that turn ``b`` into ``c``;
    Fredholm factorizations are cached per base node.
    """

    def __init__(self, prob: Problem, grid: Grid, phi: FundamentalMatrixTable | None = None):
        self.prob = prob
        self.grid = grid
        self.phi = fundamental_matrix(prob, grid) if phi is None else phi
        self.K = build_K(prob, self.phi)
        self._fredholm: dict[int, KernelTableM] = {}

        nodes = grid.nodes
        alpha = prob.alpha
        self.A_nodes = prob.A(nodes)
        self.B_nodes = prob.B(nodes)
        self.Q_nodes = prob.Q(nodes)
        self.R_nodes = prob.R(nodes)
        self.pref = (grid.T - nodes) ** (1.0 - alpha)
        vals = self.phi.values
        # c(s_i) = c_term[i] b(T) + sum_k c_run[i, k] b(s_k)
        self.c_term = np.einsum("iba,icb,cd->iad", self.B_nodes, vals[-1], prob.P)
        wr = grid.node_weights_right(alpha - 1.0)
        run = np.einsum("ik,kiba,kbc->ikac", wr, vals, self.Q_nodes)
        self.grad_run = 2.0 * run
        self.c_run = self.pref[:, None, None, None] * np.einsum("iba,ikbc->ikac", self.B_nodes, run)

    def fredholm(self, t: float) -> KernelTableM:
        start = self.grid.index(t)
        if start not in self._fredholm:
            self._fredholm[start] = solve_M(self.prob, self.K, self.grid, float(self.grid.nodes[start]))
        return self._fredholm[start]

    def dump(self, path, which: str = "K", t: float = 0.0) -> None:
        """Write the ``K`` table or ``M(., . | t)`` in the flat binary format."""
        if which == "K":
            dump_table(path, self.K.values, self.prob.alpha, self.grid.T, self.grid.N, self.prob.m, float("nan"))
        elif which == "M":
            fm = self.fredholm(t)
            dump_table(path, fm.values, self.prob.alpha, self.grid.T, self.grid.N, self.prob.m, fm.t)
        else:
            raise InvalidArgument(f"unknown table {which!r}")


# }}}


# {{{ binary tables

_MAGIC = b"FLQRTAB1"
_HEADER = struct.Struct("<5d")


def dump_table(path, values: np.ndarray, alpha: float, T: float, N: int, m: int, t: float) -> None:
    """Flat little-endian dump: magic, ``(alpha, T, N, m, t)`` as doubles, row-major data."""
    values = np.ascontiguousarray(values, dtype="<f8")
    with open(Path(path), "wb") as fh:
        fh.write(_MAGIC)
        fh.write(_HEADER.pack(alpha, T, float(N), float(m), t))
        fh.write(values.tobytes(order="C"))


def load_table(path):
    """Inverse of :func:`dump_table`; returns ``(header, values)``."""
    raw = Path(path).read_bytes()
    if raw[: len(_MAGIC)] != _MAGIC:
        raise InvalidArgument(f"{path} is not a kernel table dump")
    alpha, T, N, m, t = _HEADER.unpack_from(raw, len(_MAGIC))
    data = np.frombuffer(raw, dtype="<f8", offset=len(_MAGIC) + _HEADER.size)
    m = int(m)
    size = math.isqrt(data.size // (m * m))
    if size * size * m * m != data.size:
        raise InvalidArgument(f"{path}: payload size does not match header")
    header = {"alpha": alpha, "T": T, "N": int(N), "m": m, "t": t}
    return header, data.reshape(size, size, m, m).copy()


# }}}
