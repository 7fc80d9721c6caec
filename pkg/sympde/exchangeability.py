"""Permutation utilities and a brute-force D-exchangeable gradient construction.

``pi[X]`` is ``(x_{pi(i)})_i``: with ``pi`` stored as an index array this is
plain fancy indexing, and ``pi[rho[X]] = (rho o pi)[X]`` with the composite
index array ``rho[pi]``.
"""

from itertools import combinations
from typing import Callable

import numpy as np

from .errors import DomainError, StructuralError

MAX_TELESCOPIC_PARTICLES = 10


def validate_permutation(pi: np.ndarray, n: int) -> np.ndarray:
    pi = np.asarray(pi)
    if pi.shape != (n,):
        raise StructuralError(f"permutation of length {pi.shape} applied to {n} rows")
    if not np.array_equal(np.sort(pi), np.arange(n)):
        raise StructuralError("index array is not a permutation")
    return pi.astype(np.intp)


def permute_vector(X: np.ndarray, pi: np.ndarray) -> np.ndarray:
    """Rows reindexed: ``out[i] = X[pi[i]]``."""
    X = np.asarray(X)
    return X[validate_permutation(pi, X.shape[0])]


def permute_matrix(gamma: np.ndarray, pi: np.ndarray) -> np.ndarray:
    """Block matrix ``(N, N, ...)`` reindexed on both block axes.

    ``out[i, j] = gamma[pi[i], pi[j]]``.
    """
    gamma = np.asarray(gamma)
    if gamma.ndim < 2 or gamma.shape[0] != gamma.shape[1]:
        raise StructuralError(f"expected square block matrix, got shape {gamma.shape}")
    pi = validate_permutation(pi, gamma.shape[0])
    return gamma[np.ix_(pi, pi)]


def compose(rho: np.ndarray, pi: np.ndarray) -> np.ndarray:
    """Index array of ``rho o pi``, so that ``permute_vector(permute_vector(X, rho), pi)``
    equals ``permute_vector(X, compose(rho, pi))``."""
    return np.asarray(rho)[np.asarray(pi)]


def check_exchangeable(
    f: Callable[[np.ndarray], np.ndarray],
    n: int,
    d: int,
    n_samples: int,
    n_perms: int,
    rng: np.random.Generator,
) -> float:
    """Largest ``|f(X) - f(pi[X])|`` over random Gaussian ``X`` and random ``pi``."""
    if n_samples < 1 or n_perms < 1:
        raise DomainError("need at least one sample and one permutation")
    worst = 0.0
    for _ in range(n_samples):
        X = rng.standard_normal((n, d))
        base = np.asarray(f(X), dtype=np.float64)
        for _ in range(n_perms):
            moved = np.asarray(f(permute_vector(X, rng.permutation(n))), dtype=np.float64)
            worst = max(worst, float(np.max(np.abs(base - moved))))
    return worst


def telescopic_gradient(
    partials: Callable[[np.ndarray, int], np.ndarray],
    n: int,
    X: np.ndarray,
    x: np.ndarray,
) -> np.ndarray:
    """Evaluate the D-exchangeable map z(X, x) built from the partials of an exchangeable w.

    ``partials(Y, l)`` returns ``D_{y_l} w(Y)`` for a configuration ``Y`` of
    shape ``(n, d)``. The construction is the alternating sum over subsets S
    of ``{0..n-1}`` with ``|S| = p + 1``: the particles in S are removed, x is
    repeated p times, and x is inserted at every position l, averaged by 1/n.
    It satisfies ``z(X, x_i) = D_{x_i} w(X)``. The cost grows like ``2^n n``.
    """
    if n > MAX_TELESCOPIC_PARTICLES:
        raise DomainError(
            f"telescopic construction refused for N={n} > {MAX_TELESCOPIC_PARTICLES}"
        )
    X = np.asarray(X, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if X.shape[0] != n or X.shape[1:] != x.shape:
        raise StructuralError(f"configuration {X.shape} does not match N={n}, point {x.shape}")

    total = np.zeros_like(x)
    for p in range(n):
        sign = -1.0 if p % 2 else 1.0
        for removed in combinations(range(n), p + 1):
            kept = [X[j] for j in range(n) if j not in removed]
            rest = [x] * p + kept
            for position in range(n):
                Y = np.stack(rest[:position] + [x] + rest[position:])
                total = total + sign * np.asarray(partials(Y, position), dtype=np.float64)
    return total / n
