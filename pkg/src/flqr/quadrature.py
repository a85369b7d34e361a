"""Product-integration weights for power-law kernels.

Every rule here integrates a *piecewise-linear* factor exactly (or to
Gauss-Jacobi accuracy) against a weakly singular kernel.  The factor is
described cell by cell through its values at the two cell ends, so the
weights come in pairs ``(w_left, w_right)`` per cell.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi

# Gauss points per cell for the double-singular rule.
NEAR_POINTS = 12
FAR_POINTS = 3
# A cell is "near" a singular point closer than this many cell widths.
NEAR_CELLS = 3.0


def power_hat_weights(near, far, beta):
    """Moments of ``d**beta`` against the two hat functions of a cell.

    ``near`` and ``far`` are the distances from the singular point to the
    near and far ends of the cell (``0 <= near < far``).  Returns
    ``(w_near, w_far)`` where ``w_near`` is the integral of the kernel times
    the hat function equal to one at the near end.
    """
    near = np.asarray(near, dtype=float)
    far = np.asarray(far, dtype=float)
    e = beta + 1.0
    h = far - near
    m0 = (far**e - near**e) / e
    m1 = (far ** (e + 1.0) - near ** (e + 1.0)) / (e + 1.0)
    w_near = (far * m0 - m1) / h
    return w_near, m0 - w_near


def left_cell_weights(knots, taus, beta):
    """Weights for ``int g(xi) (tau - xi)**beta dxi`` over the cells of ``knots``.

    ``taus`` must not lie inside any cell; cells to the right of a given
    ``tau`` get zero weight.  Returns two arrays of shape
    ``(len(taus), len(knots) - 1)`` holding the left- and right-end weights.
    """
    knots = np.asarray(knots, dtype=float)
    taus = np.atleast_1d(np.asarray(taus, dtype=float))
    p, q = knots[:-1], knots[1:]
    tt = taus[:, None]
    active = q[None, :] <= tt
    near = np.where(active, tt - q, 0.0)
    far = np.where(active, tt - p, 1.0)
    w_near, w_far = power_hat_weights(near, far, beta)
    wl = np.where(active, w_far, 0.0)
    wr = np.where(active, w_near, 0.0)
    return wl, wr


def right_cell_weights(knots, starts, beta):
    """Weights for ``int g(eta) (eta - s)**beta d eta`` over cells right of ``s``.

    Mirror image of :func:`left_cell_weights`; cells left of a given start
    point get zero weight.
    """
    knots = np.asarray(knots, dtype=float)
    starts = np.atleast_1d(np.asarray(starts, dtype=float))
    p, q = knots[:-1], knots[1:]
    ss = starts[:, None]
    active = p[None, :] >= ss
    near = np.where(active, p - ss, 0.0)
    far = np.where(active, q - ss, 1.0)
    w_near, w_far = power_hat_weights(near, far, beta)
    wl = np.where(active, w_near, 0.0)
    wr = np.where(active, w_far, 0.0)
    return wl, wr


@lru_cache(maxsize=None)
def _jacobi_rule(npts: int, right_exp: float, left_exp: float):
    # weight (1 - x)**right_exp * (1 + x)**left_exp on [-1, 1]
    x, w = roots_jacobi(npts, right_exp, left_exp)
    return x, w


def cell_moments(p, q, singular, beta, near_points=NEAR_POINTS, far_points=FAR_POINTS):
    """Hat moments of ``prod_s |eta - s|**beta`` over cells ``[p, q]``.

    ``singular`` has shape ``p.shape + (k,)``: the singular points of each
    cell, none of which may lie strictly inside it.  Points that coincide
    with a cell end are absorbed into a Gauss-Jacobi weight; the others
    stay in the integrand.  Cells within ``NEAR_CELLS`` widths of a singular
    point get ``near_points`` nodes, the rest ``far_points``.

    Returns ``(w_p, w_q)`` shaped like ``p``.
    """
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    singular = np.asarray(singular, dtype=float)
    shape = p.shape
    p, q = p.ravel(), q.ravel()
    sing = singular.reshape(p.size, -1)
    h = q - p

    at_p = sing == p[:, None]
    at_q = sing == q[:, None]
    n_left = at_p.sum(axis=1)
    n_right = at_q.sum(axis=1)
    gap = np.where(sing <= p[:, None], p[:, None] - sing, sing - q[:, None])
    near = (gap.min(axis=1) < NEAR_CELLS * h)
    contact = at_p | at_q

    w_p = np.empty(p.size)
    w_q = np.empty(p.size)
    keys = near.astype(int) * 100 + n_left * 10 + n_right
    for key in np.unique(keys):
        sel = np.flatnonzero(keys == key)
        is_near, nl, nr = key // 100, (key // 10) % 10, key % 10
        el, er = beta * nl, beta * nr
        x, wg = _jacobi_rule(near_points if is_near else far_points, er, el)
        hs = h[sel]
        eta = p[sel, None] + hs[:, None] * (1.0 + x) / 2.0
        # contact points sit in the Jacobi weight; use distance 1 for them
        s_sel = sing[sel]
        d = np.abs(eta[:, :, None] - s_sel[:, None, :])
        if nl or nr:
            d = np.where(contact[sel][:, None, :], 1.0, d)
        rest = d.prod(axis=-1) ** beta
        base = wg * rest * ((hs / 2.0) ** (1.0 + el + er))[:, None]
        w_q[sel] = base @ ((1.0 + x) / 2.0)
        w_p[sel] = base @ ((1.0 - x) / 2.0)
    return w_p.reshape(shape), w_q.reshape(shape)
