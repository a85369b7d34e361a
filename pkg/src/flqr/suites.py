"""Reusable problem instances: the scalar benchmark and random SPD problems."""

from __future__ import annotations

import numpy as np

from .fracspace import Problem


def benchmark_problem(alpha: float = 0.7, T: float = 1.0, p: float = 1.0, r: float = 1.0) -> Problem:
    """Scalar problem with ``A = 0, B = 1, Q = 0, P = p, R = r``."""
    return Problem(alpha, T, [[0.0]], [[1.0]], [[p]], [[0.0]], [[r]])


def random_problem(seed: int, n: int | None = None, m: int | None = None, alpha: float = 0.7, T: float = 1.0) -> Problem:
    """Random instance with constant data; dimensions drawn from {1, 2, 3} unless given.

    ``A`` and ``B`` are Gaussian, ``P`` and ``Q`` are PSD with a small
    ridge, and ``R`` is SPD with smallest eigenvalue at least 0.5.
    """
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 4)) if n is None else n
    m = int(rng.integers(1, 4)) if m is None else m
    A = 0.5 * rng.standard_normal((n, n))
    B = rng.standard_normal((n, m))

    def spd(k, ridge):
        X = rng.standard_normal((k, k))
        return X @ X.T / k + ridge * np.eye(k)

    return Problem(alpha, T, A, B, spd(n, 0.1), spd(n, 0.1), spd(m, 0.5), theta=0.5)


def random_state(seed: int, n: int) -> np.ndarray:
    return np.random.default_rng(seed + 10_000).uniform(-1.0, 1.0, n)
