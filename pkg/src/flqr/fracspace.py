"""Grids, histories, fractional integration and problem data."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgument, OutOfRange, ValidationError
from .quadrature import left_cell_weights, right_cell_weights

_NODE_TOL = 1e-12


def check_order(alpha: float) -> float:
    """Validate a fractional order; only ``1/2 < alpha < 1`` is supported."""
    alpha = float(alpha)
    if not 0.5 < alpha < 1.0:
        raise InvalidArgument(f"order alpha must lie in (1/2, 1), got {alpha}")
    return alpha


# {{{ grid


@dataclass(frozen=True, eq=False)
class Grid:
    """Strictly increasing nodes ``0 = s_0 < ... < s_N = T``.

    Product-integration weight tables are cached on the instance; the
    nodes themselves are never mutated.
    """

    nodes: np.ndarray
    grading: float = 1.0
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        if nodes.ndim != 1 or nodes.size < 2:
            raise InvalidArgument("a grid needs at least two nodes")
        if nodes[0] != 0.0:
            raise InvalidArgument("grid must start at 0")
        if np.any(np.diff(nodes) <= 0):
            raise InvalidArgument("grid nodes must be strictly increasing")
        nodes.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)

    @property
    def T(self) -> float:
        return float(self.nodes[-1])

    @property
    def N(self) -> int:
        return self.nodes.size - 1

    @property
    def steps(self) -> np.ndarray:
        return np.diff(self.nodes)

    def index(self, t: float) -> int:
        """Index of the node equal to ``t``; raises if ``t`` is not a node."""
        k = int(np.argmin(np.abs(self.nodes - t)))
        if abs(self.nodes[k] - t) > _NODE_TOL * max(self.T, 1.0):
            raise InvalidArgument(f"time {t} is not a grid node")
        return k

    def has_node(self, t: float) -> bool:
        return bool(np.min(np.abs(self.nodes - t)) <= _NODE_TOL * max(self.T, 1.0))

    def with_nodes(self, times, snap: float = 0.3) -> "Grid":
        """Return a grid containing every time in ``times``.

        A free node closer than ``snap`` times the local step to a required
        time is moved onto it instead of inserting a sliver cell next to it.
        """
        times = np.unique(np.asarray(times, dtype=float))
        if times.size and (times[0] < 0 or times[-1] > self.T):
            raise InvalidArgument("required nodes must lie in [0, T]")
        nodes = list(self.nodes)
        pinned = {0, len(nodes) - 1}
        tol = _NODE_TOL * max(self.T, 1.0)
        for r in times:
            arr = np.asarray(nodes)
            k = int(np.argmin(np.abs(arr - r)))
            if abs(arr[k] - r) <= tol:
                nodes[k] = r if k not in (0, len(nodes) - 1) else nodes[k]
                pinned.add(k)
                continue
            k_left = int(np.searchsorted(arr, r)) - 1
            h = arr[k_left + 1] - arr[k_left]
            movable = k not in pinned and abs(arr[k] - r) < snap * min(
                arr[k] - arr[k - 1] if k > 0 else np.inf,
                arr[k + 1] - arr[k] if k + 1 < len(arr) else np.inf,
                h,
            )
            if movable:
                nodes[k] = r
                pinned.add(k)
            else:
                nodes.insert(k_left + 1, r)
                pinned = {i + 1 if i > k_left else i for i in pinned}
                pinned.add(k_left + 1)
        return Grid(np.asarray(nodes), grading=self.grading)

    def left_weights(self, beta: float):
        """Cell weights of ``(s_i - xi)**beta`` for every node ``s_i``.

        Returns ``(WL, WR)`` of shape ``(N + 1, N)``; row ``i`` covers the
        cells left of ``s_i``.
        """
        key = ("left", round(beta, 14))
        if key not in self._cache:
            self._cache[key] = left_cell_weights(self.nodes, self.nodes, beta)
        return self._cache[key]

    def right_weights(self, beta: float):
        """Cell weights of ``(eta - s_i)**beta`` for every node ``s_i``."""
        key = ("right", round(beta, 14))
        if key not in self._cache:
            self._cache[key] = right_cell_weights(self.nodes, self.nodes, beta)
        return self._cache[key]

    def node_weights_left(self, beta: float, start: int) -> np.ndarray:
        """Node weights for ``int_{s_start}^{s_i} g(xi) (s_i - xi)**beta dxi``.

        Shape ``(N + 1, N + 1)``; entry ``[i, k]`` multiplies ``g(s_k)``.
        """
        wl, wr = self.left_weights(beta)
        out = np.zeros((self.N + 1, self.N + 1))
        out[:, start:-1] += wl[:, start:]
        out[:, start + 1:] += wr[:, start:]
        return out

    def node_weights_right(self, beta: float) -> np.ndarray:
        """Node weights for ``int_{s_i}^{T} g(eta) (eta - s_i)**beta d eta``."""
        key = ("right-nodes", round(beta, 14))
        if key not in self._cache:
            wl, wr = self.right_weights(beta)
            out = np.zeros((self.N + 1, self.N + 1))
            out[:, :-1] += wl
            out[:, 1:] += wr
            self._cache[key] = out
        return self._cache[key]


def build_grid(T: float, N: int, g: float = 2.0) -> Grid:
    """Nodes ``T * (1 - (1 - k/N)**g)``; ``g = 1`` is uniform, ``g > 1`` clusters at T."""
    if not T > 0:
        raise InvalidArgument(f"horizon T must be positive, got {T}")
    if int(N) != N or N < 2:
        raise InvalidArgument(f"node count N must be an integer >= 2, got {N}")
    if g < 1:
        raise InvalidArgument(f"grading exponent must be >= 1, got {g}")
    k = np.arange(int(N) + 1) / N
    nodes = T * (1.0 - (1.0 - k) ** g)
    nodes[0], nodes[-1] = 0.0, T
    return Grid(nodes, grading=float(g))


# }}}


# {{{ sampled functions


@dataclass(frozen=True)
class PiecewiseLinear:
    """Function that is linear on each cell of ``knots``, possibly discontinuous.

    ``left[k]`` and ``right[k]`` are the values at the start and end of cell
    ``k``; trailing dimensions are arbitrary (vector values, batches).
    """

    knots: np.ndarray
    left: np.ndarray
    right: np.ndarray

    def __post_init__(self):
        knots = np.asarray(self.knots, dtype=float)
        left = np.asarray(self.left, dtype=float)
        right = np.asarray(self.right, dtype=float)
        if knots.ndim != 1 or knots.size < 1:
            raise InvalidArgument("knots must be a non-empty 1d array")
        if left.shape != right.shape or left.shape[0] != knots.size - 1:
            raise InvalidArgument("need one (left, right) value pair per cell")
        if np.any(np.diff(knots) <= 0):
            raise InvalidArgument("knots must be strictly increasing")
        if not (np.all(np.isfinite(left)) and np.all(np.isfinite(right))):
            raise InvalidArgument("sample values must be finite")
        object.__setattr__(self, "knots", knots)
        object.__setattr__(self, "left", left)
        object.__setattr__(self, "right", right)

    @classmethod
    def empty(cls, t0: float, shape=()) -> "PiecewiseLinear":
        shape = tuple(np.atleast_1d(shape)) if shape != () else ()
        return cls(np.array([t0], dtype=float), np.zeros((0, *shape)), np.zeros((0, *shape)))

    @classmethod
    def from_nodes(cls, knots, values) -> "PiecewiseLinear":
        """Continuous interpolant of node values."""
        values = np.asarray(values, dtype=float)
        return cls(knots, values[:-1], values[1:])

    @classmethod
    def constant(cls, knots, value) -> "PiecewiseLinear":
        knots = np.asarray(knots, dtype=float)
        value = np.asarray(value, dtype=float)
        vals = np.broadcast_to(value, (knots.size - 1, *value.shape)).copy()
        return cls(knots, vals, vals.copy())

    @property
    def start(self) -> float:
        return float(self.knots[0])

    @property
    def end(self) -> float:
        return float(self.knots[-1])

    @property
    def value_shape(self) -> tuple:
        return self.left.shape[1:]

    def __call__(self, tau):
        """Evaluate (right-continuous at interior knots, left limit at the end)."""
        tau = np.asarray(tau, dtype=float)
        if self.knots.size == 1:
            raise OutOfRange("cannot evaluate a function on an empty interval")
        k = np.clip(np.searchsorted(self.knots, tau, side="right") - 1, 0, self.knots.size - 2)
        lam = (tau - self.knots[k]) / (self.knots[k + 1] - self.knots[k])
        lam = lam.reshape(lam.shape + (1,) * len(self.value_shape))
        return (1 - lam) * self.left[k] + lam * self.right[k]

    def truncate(self, tau: float) -> "PiecewiseLinear":
        """Restriction to ``[start, tau]``."""
        if tau < self.start or tau > self.end:
            raise OutOfRange(f"{tau} outside [{self.start}, {self.end}]")
        k = int(np.searchsorted(self.knots, tau, side="left"))
        if k < self.knots.size and self.knots[k] == tau:
            return PiecewiseLinear(self.knots[: k + 1], self.left[:k], self.right[:k])
        # tau falls inside cell k - 1
        c = k - 1
        lam = (tau - self.knots[c]) / (self.knots[c + 1] - self.knots[c])
        mid = (1 - lam) * self.left[c] + lam * self.right[c]
        knots = np.append(self.knots[: c + 1], tau)
        right = np.concatenate([self.right[:c], mid[None]])
        return PiecewiseLinear(knots, self.left[: c + 1], right)

    def concat(self, other: "PiecewiseLinear") -> "PiecewiseLinear":
        if abs(other.start - self.end) > _NODE_TOL * max(abs(self.end), 1.0):
            raise InvalidArgument("concatenated pieces must share an endpoint")
        return PiecewiseLinear(
            np.concatenate([self.knots, other.knots[1:]]),
            np.concatenate([self.left, other.left]),
            np.concatenate([self.right, other.right]),
        )

    def sup_norm(self) -> float:
        if self.left.shape[0] == 0:
            return 0.0
        return float(max(np.abs(self.left).max(), np.abs(self.right).max()))


def frac_integral(f: PiecewiseLinear, alpha: float, tau):
    """Riemann-Liouville integral ``(1/Gamma(alpha)) int_{f.start}^tau f(xi) (tau - xi)**(alpha-1)``.

    Product integration: ``f`` is linear per cell and the kernel moments are
    exact, so the rule is exact for piecewise-linear ``f``.  ``tau`` may be
    a scalar or 1d array; points beyond the sample span integrate over the
    whole span (this is what the tail extension needs).
    """
    scalar = np.ndim(tau) == 0
    taus = np.atleast_1d(np.asarray(tau, dtype=float))
    if np.any(taus < f.start - _NODE_TOL):
        raise OutOfRange(f"tau below the start of the sample span {f.start}")
    out = np.zeros((taus.size, *f.value_shape))
    inside = taus < f.end
    beyond = ~inside
    if f.left.shape[0] and beyond.any():
        wl, wr = left_cell_weights(f.knots, taus[beyond], alpha - 1.0)
        out[beyond] = np.tensordot(wl, f.left, axes=1) + np.tensordot(wr, f.right, axes=1)
    for i in np.flatnonzero(inside):
        g = f.truncate(taus[i])
        if g.left.shape[0]:
            wl, wr = left_cell_weights(g.knots, taus[i : i + 1], alpha - 1.0)
            out[i] = np.tensordot(wl[0], g.left, axes=1) + np.tensordot(wr[0], g.right, axes=1)
    out /= math.gamma(alpha)
    return out[0] if scalar else out


# }}}


# {{{ positions


@dataclass(frozen=True)
class Position:
    """A time ``t`` with a motion history on ``[0, t]``.

    The history is stored as the initial state ``w0`` plus samples of its
    Caputo derivative ``f``; ``w(tau) = w0 + I^alpha f (tau)``.  A trailing
    batch axis on ``w0`` and ``f`` is allowed and carried through.
    """

    alpha: float
    t: float
    w0: np.ndarray
    f: PiecewiseLinear

    def __post_init__(self):
        check_order(self.alpha)
        w0 = np.asarray(self.w0, dtype=float)
        if w0.ndim == 0:
            w0 = w0[None]
        object.__setattr__(self, "w0", w0)
        if self.t < 0:
            raise InvalidArgument("position time must be nonnegative")
        if self.f.start != 0.0 or abs(self.f.end - self.t) > _NODE_TOL * max(self.t, 1.0):
            raise InvalidArgument("history samples must cover exactly [0, t]")
        if self.f.value_shape != w0.shape:
            raise InvalidArgument(f"history samples have shape {self.f.value_shape}, w0 has {w0.shape}")

    @classmethod
    def initial(cls, alpha: float, w0) -> "Position":
        w0 = np.atleast_1d(np.asarray(w0, dtype=float))
        return cls(alpha, 0.0, w0, PiecewiseLinear.empty(0.0, w0.shape))

    @classmethod
    def constant_derivative(cls, alpha: float, t: float, w0, f0, n_cells: int = 1) -> "Position":
        """History on ``[0, t]`` whose Caputo derivative is the constant ``f0``."""
        w0 = np.atleast_1d(np.asarray(w0, dtype=float))
        if t == 0:
            return cls.initial(alpha, w0)
        knots = np.linspace(0.0, t, n_cells + 1)
        return cls(alpha, float(t), w0, PiecewiseLinear.constant(knots, np.broadcast_to(f0, w0.shape)))

    @property
    def n(self) -> int:
        return self.w0.shape[0]

    def extend(self, f_more: PiecewiseLinear) -> "Position":
        """Position at ``f_more.end`` whose history continues with ``f_more``."""
        f = f_more if self.f.knots.size == 1 and f_more.start == 0 else self.f.concat(f_more)
        return Position(self.alpha, f.end, self.w0, f)

    def sup_norm(self, n_check: int = 257) -> float:
        """Approximate ``max_{[0,t]} |w|`` over knots and a uniform sample."""
        if self.t == 0:
            return float(np.linalg.norm(self.w0, axis=0).max())
        taus = np.union1d(self.f.knots, np.linspace(0, self.t, n_check))
        w = eval_history(self, taus)
        return float(np.linalg.norm(w, axis=1).max())


def eval_history(pos: Position, tau):
    """``w(tau)`` for ``tau`` in ``[0, pos.t]``."""
    taus = np.asarray(tau, dtype=float)
    if np.any(taus > pos.t * (1 + _NODE_TOL) + _NODE_TOL):
        raise OutOfRange(f"tau beyond the history end t = {pos.t}")
    if np.any(taus < 0):
        raise OutOfRange("tau must be nonnegative")
    if pos.f.knots.size == 1:
        return np.broadcast_to(pos.w0, taus.shape + pos.w0.shape).copy()
    return pos.w0 + frac_integral(pos.f, pos.alpha, np.minimum(taus, pos.t))


def extend_tail(pos: Position, tau, check: bool = False):
    """Undriven continuation ``a(tau | t, w)`` of the history.

    Equal to ``w(tau)`` on ``[0, t]``; past ``t`` the Caputo derivative is
    frozen at zero, i.e. only the memory of ``[0, t]`` acts.  With
    ``check=True`` the bound ``sup_{[t,T]} |a| <= sup_{[0,t]} |w|`` is
    verified on the requested points.
    """
    scalar = np.ndim(tau) == 0
    taus = np.atleast_1d(np.asarray(tau, dtype=float))
    out = np.empty((taus.size, *pos.w0.shape))
    past = taus <= pos.t
    if past.any():
        out[past] = eval_history(pos, taus[past])
    if (~past).any():
        if pos.f.knots.size == 1:
            out[~past] = pos.w0
        else:
            out[~past] = pos.w0 + frac_integral(pos.f, pos.alpha, taus[~past])
        if check:
            bound = pos.sup_norm()
            tail = np.linalg.norm(out[~past], axis=1).max()
            if tail > bound * (1 + 1e-8) + 1e-12:
                raise AssertionError(f"tail bound violated: {tail} > {bound}")
    return out[0] if scalar else out


def position_distance(p1: Position, p2: Position, nodes=None) -> float:
    """``|t' - t| + max_tau |w'(tau ^ t') - w(tau ^ t)|``, max over sample nodes."""
    t_hi = max(p1.t, p2.t)
    if nodes is None:
        nodes = np.union1d(np.union1d(p1.f.knots, p2.f.knots), np.linspace(0.0, t_hi, 257))
    nodes = np.asarray(nodes, dtype=float)
    nodes = nodes[nodes <= t_hi]
    w1 = eval_history(p1, np.minimum(nodes, p1.t))
    w2 = eval_history(p2, np.minimum(nodes, p2.t))
    return abs(p1.t - p2.t) + float(np.linalg.norm(w1 - w2, axis=1).max())


# }}}


# {{{ problem data


@dataclass(frozen=True)
class MatrixPath:
    """Matrix-valued function of time.

    ``kind`` is ``"constant"`` (``values`` has shape ``(r, c)``),
    ``"polynomial"`` (``values[k]`` multiplies ``tau**k``) or ``"samples"``
    (``values[k]`` is the value at ``times[k]``, linearly interpolated and
    held constant outside the sample range).
    """

    kind: str
    values: np.ndarray
    times: np.ndarray | None = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if self.kind == "constant":
            values = np.atleast_2d(values)
            if values.ndim != 2:
                raise InvalidArgument("constant matrix path needs a 2d value")
        elif self.kind == "polynomial":
            if values.ndim != 3:
                raise InvalidArgument("polynomial coefficients must have shape (deg+1, r, c)")
        elif self.kind == "samples":
            times = np.asarray(self.times, dtype=float)
            if values.ndim != 3 or times.ndim != 1 or times.size != values.shape[0]:
                raise InvalidArgument("samples need times (S,) and values (S, r, c)")
            if np.any(np.diff(times) <= 0):
                raise InvalidArgument("sample times must be strictly increasing")
            object.__setattr__(self, "times", times)
        else:
            raise InvalidArgument(f"unknown matrix path kind {self.kind!r}")
        if not np.all(np.isfinite(values)):
            raise InvalidArgument("matrix path values must be finite")
        object.__setattr__(self, "values", values)

    @classmethod
    def constant(cls, value) -> "MatrixPath":
        return cls("constant", value)

    @classmethod
    def polynomial(cls, coeffs) -> "MatrixPath":
        return cls("polynomial", coeffs)

    @classmethod
    def samples(cls, times, values) -> "MatrixPath":
        return cls("samples", values, times)

    @property
    def shape(self) -> tuple[int, int]:
        return tuple(self.values.shape[-2:])

    def knots(self) -> np.ndarray:
        return self.times if self.kind == "samples" else np.empty(0)

    def __call__(self, tau):
        tau = np.asarray(tau, dtype=float)
        if self.kind == "constant":
            return np.broadcast_to(self.values, tau.shape + self.shape).copy()
        if self.kind == "polynomial":
            out = np.zeros(tau.shape + self.shape)
            for coeff in self.values[::-1]:
                out = out * tau[..., None, None] + coeff
            return out
        k = np.clip(np.searchsorted(self.times, tau, side="right") - 1, 0, self.times.size - 2)
        if self.times.size == 1:
            return np.broadcast_to(self.values[0], tau.shape + self.shape).copy()
        lam = np.clip((tau - self.times[k]) / (self.times[k + 1] - self.times[k]), 0.0, 1.0)
        lam = lam[..., None, None]
        return (1 - lam) * self.values[k] + lam * self.values[k + 1]


def _as_path(value) -> MatrixPath:
    return value if isinstance(value, MatrixPath) else MatrixPath.constant(value)


@dataclass(frozen=True)
class Problem:
    """Data of the fractional linear-quadratic control problem.

    Dynamics ``D^alpha x = A x + B u`` on ``[0, T]``; cost
    ``<x(T), P x(T)> + int (<x, Q x> + <u, R u>)``.  Plain arrays are
    accepted for the matrix paths and treated as constants.
    """

    alpha: float
    T: float
    A: MatrixPath
    B: MatrixPath
    P: np.ndarray
    Q: MatrixPath
    R: MatrixPath
    theta: float | None = None
    check_points: int = 257

    def __post_init__(self):
        object.__setattr__(self, "alpha", check_order(self.alpha))
        if not self.T > 0:
            raise InvalidArgument("horizon T must be positive")
        for name in "ABQR":
            object.__setattr__(self, name, _as_path(getattr(self, name)))
        object.__setattr__(self, "P", np.atleast_2d(np.asarray(self.P, dtype=float)))
        n, m = self.A.shape[0], self.B.shape[1]
        expected = {"A": (n, n), "B": (n, m), "Q": (n, n), "R": (m, m)}
        for name, shp in expected.items():
            if getattr(self, name).shape != shp:
                raise ValidationError(f"{name} has shape {getattr(self, name).shape}, expected {shp}")
        if self.P.shape != (n, n):
            raise ValidationError(f"P has shape {self.P.shape}, expected {(n, n)}")
        self._validate()

    def _validate(self):
        taus = np.linspace(0.0, self.T, self.check_points)
        for path in (self.A, self.B, self.Q, self.R):
            taus = np.union1d(taus, path.knots()[(path.knots() >= 0) & (path.knots() <= self.T)])
        tol = 1e-10

        def _sym_psd(name, mats):
            scale = max(1.0, float(np.abs(mats).max()))
            if np.abs(mats - np.swapaxes(mats, -1, -2)).max() > tol * scale:
                raise ValidationError(f"{name} not symmetric")
            return np.linalg.eigvalsh(mats), scale

        eig_p, scale = _sym_psd("P", self.P[None])
        if eig_p.min() < -1e-9 * scale:
            raise ValidationError("P not positive semi-definite")
        eig_q, scale = _sym_psd("Q", self.Q(taus))
        if eig_q.min() < -1e-9 * scale:
            raise ValidationError("Q not positive semi-definite")
        eig_r, scale = _sym_psd("R", self.R(taus))
        r_min = float(eig_r.min())
        theta = r_min if self.theta is None else float(self.theta)
        if not theta > 0:
            raise ValidationError("R not θ-coercive: need theta > 0")
        if r_min < theta - 1e-9 * scale:
            raise ValidationError(f"R not θ-coercive: smallest eigenvalue {r_min:.6g} < theta = {theta:.6g}")
        object.__setattr__(self, "theta", theta)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    def position(self, w0, t: float = 0.0, f=None) -> Position:
        """Position helper: ``f`` may be None (frozen state), a constant vector or a PiecewiseLinear."""
        w0 = np.atleast_1d(np.asarray(w0, dtype=float))
        if w0.shape[0] != self.n:
            raise InvalidArgument(f"w0 must have {self.n} components")
        if t < 0 or t > self.T:
            raise InvalidArgument("position time must lie in [0, T]")
        if isinstance(f, PiecewiseLinear):
            return Position(self.alpha, float(t), w0, f)
        if t == 0:
            return Position.initial(self.alpha, w0)
        f0 = np.zeros_like(w0) if f is None else np.asarray(f, dtype=float)
        return Position.constant_derivative(self.alpha, t, w0, f0)


# }}}
