"""Target functionals ``theta(L)`` whose mean is estimated."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class FunctionalError(ValueError):
    pass


@dataclass(frozen=True)
class Linear:
    """``theta(L) = a . L + b``.  A single coordinate mean is ``a = e_j``."""

    coef: tuple
    offset: float = 0.0

    is_linear = True

    def __post_init__(self):
        object.__setattr__(self, "coef", tuple(float(v) for v in np.ravel(self.coef)))

    @property
    def a(self) -> np.ndarray:
        return np.asarray(self.coef)

    @property
    def d(self) -> int:
        return len(self.coef)

    def __call__(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.shape[-1] != self.d:
            raise FunctionalError(f"functional expects {self.d} coordinates, got {X.shape[-1]}")
        return X @ self.a + self.offset

    def label(self) -> str:
        return "linear(" + ",".join(f"{v:g}" for v in self.coef) + ")"


@dataclass(frozen=True)
class Indicator:
    """``theta(L) = I(L_j <= c)`` (``j`` zero-based)."""

    column: int
    threshold: float
    d: int

    is_linear = False

    def __call__(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.shape[-1] != self.d:
            raise FunctionalError(f"functional expects {self.d} coordinates, got {X.shape[-1]}")
        return (X[..., self.column] <= self.threshold).astype(float)

    def label(self) -> str:
        return f"indicator(L{self.column + 1}<={self.threshold:g})"


def coordinate_mean(j: int, d: int) -> Linear:
    a = np.zeros(d)
    a[j] = 1.0
    return Linear(a)


def as_functional(theta, d: int):
    """Coerce ``theta`` into a functional.

    Accepts a functional object, ``None`` (mean of the first coordinate),
    an integer column index, or a coefficient vector of length ``d``.
    """
    if isinstance(theta, (Linear, Indicator)):
        if theta.d != d:
            raise FunctionalError(f"functional has dimension {theta.d}, data has {d}")
        return theta
    if theta is None:
        return coordinate_mean(0, d)
    if isinstance(theta, (int, np.integer)):
        if not 0 <= theta < d:
            raise FunctionalError(f"column {theta} out of range")
        return coordinate_mean(int(theta), d)
    if callable(theta):
        raise FunctionalError("arbitrary callables are not supported; use Linear or Indicator")
    a = np.asarray(theta, dtype=float).ravel()
    if len(a) != d:
        raise FunctionalError(f"coefficient vector has length {len(a)}, expected {d}")
    return Linear(a)


def parse_functional(theta: str | None, indicator: str | None, d: int, column_names=None):
    """Build a functional from the CLI strings ``"a1,a2,..."`` or ``"col,c"``."""
    if theta and indicator:
        raise FunctionalError("give either a coefficient vector or an indicator, not both")
    if indicator:
        try:
            col, c = indicator.split(",")
        except ValueError:
            raise FunctionalError(f"indicator must be 'col,c', got {indicator!r}") from None
        col = col.strip()
        if column_names is not None and col in column_names:
            j = list(column_names).index(col)
        else:
            try:
                j = int(col)
            except ValueError:
                raise FunctionalError(f"unknown column {col!r}") from None
        if not 0 <= j < d:
            raise FunctionalError(f"column {j} out of range")
        return Indicator(j, float(c), d)
    if theta:
        try:
            a = [float(v) for v in theta.split(",")]
        except ValueError:
            raise FunctionalError(f"malformed coefficient list {theta!r}") from None
        return as_functional(a, d)
    return coordinate_mean(0, d)
