"""Main variance direction estimators.

Two rank-1 directions are tracked across generations:

* ``P``, the exponentially smoothed displacement of the best individual;
* ``C_ani``, the dominant direction of the best-minus-worse difference
  vectors, taken orthogonal to ``P`` when it is freshly estimated.

Everything here is O(k*n) in memory, with k the number of sampled worse
individuals (4 by default). The dominant direction is found by power
iteration on the k x k Gram matrix, so no n x n (or even n x n_iter)
structure is formed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SMOOTHING = 0.1
POWER_MAX_ITER = 10_000
POWER_TOL = 1e-10
ZERO_NORM = 1e-12


@dataclass
class DirectionState:
    P: np.ndarray
    C_ani: np.ndarray
    mu_ani: float = 0.0
    sigma_ani: float = 0.0

    @classmethod
    def zeros(cls, n: int) -> "DirectionState":
        return cls(P=np.zeros(n), C_ani=np.zeros(n))


def update_p(prev: np.ndarray, x_best: np.ndarray, x_best_prev: np.ndarray) -> np.ndarray:
    """Blend the latest move of the best individual into ``prev``."""
    if not (prev.shape == x_best.shape == x_best_prev.shape):
        raise ValueError(
            f"shape mismatch: prev {prev.shape}, x_best {x_best.shape}, "
            f"x_best_prev {x_best_prev.shape}"
        )
    out = np.subtract(x_best, x_best_prev)
    out *= SMOOTHING
    out += (1.0 - SMOOTHING) * prev
    return out


def _unit(v: np.ndarray) -> np.ndarray | None:
    norm = float(np.linalg.norm(v))
    if norm == 0.0:
        return None
    return v / norm


def _deflate_rows(U: np.ndarray, p_hat: np.ndarray | None) -> None:
    if p_hat is None:
        return
    for row in U:
        row -= float(row @ p_hat) * p_hat


def dominant_gram_eigenvector(gram: np.ndarray) -> np.ndarray:
    """Power iteration on a small symmetric PSD matrix.

    Starts from the normalized all-ones vector and stops once successive
    iterates differ by less than ``POWER_TOL`` (or after ``POWER_MAX_ITER``
    steps). Returns the zero vector when ``gram`` annihilates the iterate.
    """
    k = gram.shape[0]
    w = np.full(k, 1.0 / np.sqrt(k))
    for _ in range(POWER_MAX_ITER):
        y = gram @ w
        norm = np.linalg.norm(y)
        if norm == 0.0:
            return np.zeros(k)
        y /= norm
        done = np.linalg.norm(y - w) < POWER_TOL
        w = y
        if done:
            break
    return w


def anisotropic_direction(U: np.ndarray, P: np.ndarray) -> np.ndarray:
    """Fresh anisotropic estimate from difference vectors.

    ``U`` holds one best-minus-worse difference per ROW (k x n) and is
    deflated against ``P`` in place. Returns a unit vector orthogonal to
    ``P`` (or zeros if the deflated rows carry no energy), signed so that
    it has non-negative dot product with the sum of the rows.
    """
    p_hat = _unit(P)
    _deflate_rows(U, p_hat)
    gram = U @ U.T
    w = dominant_gram_eigenvector(gram)
    c_hat = U.T @ w
    if p_hat is not None:
        c_hat -= float(c_hat @ p_hat) * p_hat
    norm = float(np.linalg.norm(c_hat))
    if norm < ZERO_NORM:
        return np.zeros_like(c_hat)
    c_hat /= norm
    # the Gram route leaves the sign free; point it from the worse rows towards the best
    if sum(float(c_hat @ row) for row in U) < 0.0:
        c_hat *= -1.0
    return c_hat


def projection_stats(X: np.ndarray, ix: np.ndarray, C: np.ndarray) -> tuple[float, float]:
    """Mean and std of (X[ix_j] - X[ix_0]) projected on C/|C|, j >= 1."""
    norm = float(np.linalg.norm(C))
    if norm == 0.0 or len(ix) < 2:
        return 0.0, 0.0
    proj = X @ C
    proj /= norm
    p = proj[ix[1:]] - proj[ix[0]]
    return float(p.mean()), float(p.std())


def estimate_anisotropic(
    X: np.ndarray,
    ix: np.ndarray,
    P: np.ndarray,
    prev_C: np.ndarray,
    worst_sample_count: int,
    rng: np.random.Generator,
) -> tuple[np.ndarray, float, float]:
    """Return the smoothed anisotropic direction and its projection statistics.

    ``worst_sample_count`` distinct individuals are drawn uniformly among the
    ranks 1..lambda-1; the difference of the best individual to each of them
    forms ``U``. One ``rng.choice`` call is consumed per invocation.
    """
    lam, n = X.shape
    if len(ix) != lam or P.shape != (n,) or prev_C.shape != (n,):
        raise ValueError("dimension mismatch between population, ranking and directions")
    if worst_sample_count > lam - 1:
        raise ValueError(
            f"worst_sample_count={worst_sample_count} needs lambda >= {worst_sample_count + 1}, "
            f"got {lam}"
        )
    picks = rng.choice(lam - 1, size=worst_sample_count, replace=False)
    ir = ix[1 + picks]
    U = X[ir]
    np.subtract(X[ix[0]], U, out=U)
    C = anisotropic_direction(U, P)
    C *= SMOOTHING
    scratch = U[0]  # U is spent; reuse a row instead of allocating
    np.multiply(prev_C, 1.0 - SMOOTHING, out=scratch)
    C += scratch
    del U, scratch
    mu_ani, sigma_ani = projection_stats(X, ix, C)
    return C, mu_ani, sigma_ani


def update_directions(
    state: DirectionState,
    X: np.ndarray,
    ix: np.ndarray,
    x_best: np.ndarray,
    x_best_prev: np.ndarray,
    worst_sample_count: int,
    rng: np.random.Generator,
) -> DirectionState:
    P = update_p(state.P, x_best, x_best_prev)
    C, mu_ani, sigma_ani = estimate_anisotropic(X, ix, P, state.C_ani, worst_sample_count, rng)
    return DirectionState(P=P, C_ani=C, mu_ani=mu_ani, sigma_ani=sigma_ani)
