"""Objective wrapper and synthetic benchmark functions (lower is better)."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np


@dataclass
class ObjectiveFn:
    """A scalar objective over length-``n_var`` vectors.

    ``batch`` is optional; when given it must map a (m, n_var) matrix to the
    m objective values, agreeing with ``evaluate`` row by row.
    """

    n_var: int
    evaluate: Callable[[np.ndarray], float]
    batch: Optional[Callable[[np.ndarray], np.ndarray]] = None

    def __call__(self, x: np.ndarray) -> float:
        return self.evaluate(x)


def sphere(x: np.ndarray) -> float:
    x = np.asarray(x, dtype=float)
    return float(x @ x)


def ellipsoid(x: np.ndarray, condition: float = 1e6) -> float:
    x = np.asarray(x, dtype=float)
    n = x.size
    if n == 1:
        return float(x[0] ** 2)
    scales = condition ** (np.arange(n) / (n - 1))
    return float(scales @ (x * x))


def rosenbrock(x: np.ndarray) -> float:
    x = np.asarray(x, dtype=float)
    head, tail = x[:-1], x[1:]
    return float(np.sum(100.0 * (tail - head * head) ** 2 + (1.0 - head) ** 2))


SYNTHETIC = {
    "sphere": sphere,
    "ellipsoid": ellipsoid,
    "rosenbrock": rosenbrock,
}


def synthetic(name: str, n_var: int) -> ObjectiveFn:
    try:
        fn = SYNTHETIC[name]
    except KeyError:
        raise ValueError(f"unknown function {name!r}; choose from {sorted(SYNTHETIC)}") from None
    return ObjectiveFn(n_var=n_var, evaluate=fn)
