"""Per-pattern selection odds fitted by logistic regression.

For each non-source node ``r`` the odds ``O_r(l_r) = P(R=r | l_r) /
P(R in PA_r | l_r)`` are modelled as ``exp(beta_r . (1, l_r))``, estimated by
contrasting rows with ``R = r`` against rows whose pattern is a parent of
``r``.  An optional tilt vector ``delta_r`` adds ``delta_r . l_rbar`` to the
log-odds for sensitivity analysis.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path as FilePath
from typing import Mapping

import numpy as np
from scipy.special import expit

from .data import (DEFAULT_MIN_COUNT, IncompleteDataset, PatternIndex, check_positivity)
from .graph import PatternGraph, require_valid
from .patterns import Pattern, as_pattern, canonical_key

BETA_CAP = 30.0

# Elementwise covariate maps for the odds regressors.  Anything other than
# the identity deliberately misspecifies a log-linear truth.
TRANSFORMS = {
    "identity": lambda x: x,
    "square": np.square,
    "abs": np.abs,
}


def _transform(name):
    key = "identity" if name is None else name
    if key not in TRANSFORMS:
        raise ValueError(f"unknown covariate transform {name!r}; choose from {sorted(TRANSFORMS)}")
    return key


class OddsFitError(RuntimeError):
    """Logistic fit impossible (for instance an empty class)."""


class SeparationWarning(UserWarning):
    pass


@dataclass(frozen=True)
class LogisticFit:
    """Result of a single logistic regression.

    Attributes
    ----------
    beta : ndarray
        Coefficients, intercept first.
    se : ndarray
        Standard errors from the inverse observed information.
    """

    beta: np.ndarray
    se: np.ndarray
    n_iter: int
    converged: bool
    loglik: float
    separated: bool = False
    n_case: int = 0
    n_control: int = 0

    @property
    def diagnostics(self) -> dict:
        return {"n_iter": self.n_iter, "converged": self.converged, "loglik": self.loglik,
                "separated": self.separated, "n_case": self.n_case, "n_control": self.n_control}


def _loglik(eta, y):
    return float(np.sum(y * eta - np.logaddexp(0.0, eta)))


def fit_logistic(X, y, ridge: float = 0.0, max_iter: int = 100, tol: float = 1e-8,
                 cap: float = BETA_CAP) -> LogisticFit:
    """Binomial maximum likelihood by iteratively reweighted least squares.

    A column of ones is prepended to ``X``.  Steps that lower the (penalized)
    log-likelihood are halved.  Convergence is declared once the gradient,
    divided by the sample size, has sup-norm below ``tol`` and the last step
    is negligible.  Coefficients that run past ``cap`` in absolute value are
    clipped and the fit is flagged as separated.

    Parameters
    ----------
    X : array-like of shape (n, p)
    y : array-like of shape (n,)
        Binary labels.
    ridge : float
        L2 penalty on the slopes (the intercept is not penalized).
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(y, dtype=float)
    n = len(y)
    n_case = int(y.sum())
    n_control = n - n_case
    if n_case == 0 or n_control == 0:
        raise OddsFitError(f"empty class: {n_case} cases, {n_control} controls")
    Z = np.column_stack([np.ones(n), X])
    p = Z.shape[1]
    pen = np.full(p, ridge, dtype=float)
    pen[0] = 0.0

    beta = np.zeros(p)
    beta[0] = np.log(n_case / n_control)

    def objective(b):
        return _loglik(Z @ b, y) - 0.5 * float(np.sum(pen * b * b))

    obj = objective(beta)
    converged = separated = False
    it = 0
    for it in range(1, max_iter + 1):
        mu = expit(Z @ beta)
        grad = Z.T @ (y - mu) - pen * beta
        w = mu * (1.0 - mu)
        H = (Z * w[:, None]).T @ Z + np.diag(pen)
        try:
            step = np.linalg.solve(H, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(H, grad, rcond=None)[0]
        t = 1.0
        while True:
            cand = beta + t * step
            cand_obj = objective(cand)
            if cand_obj >= obj - 1e-12 * abs(obj) or t < 1e-10:
                break
            t *= 0.5
        beta, obj = cand, cand_obj
        if np.any(np.abs(beta) > cap):
            separated = True
            beta = np.clip(beta, -cap, cap)
            obj = objective(beta)
            break
        gnorm = np.max(np.abs(Z.T @ (y - expit(Z @ beta)) - pen * beta)) / n
        if gnorm < tol and np.max(np.abs(t * step)) < 1e-7:
            converged = True
            break
    eta = Z @ beta
    mu = expit(eta)
    if not separated and (np.all((mu > 0.5) == (y > 0.5)) and np.max(np.abs(beta[1:]), initial=0) > 10):
        separated = True
    w = mu * (1 - mu)
    H = (Z * w[:, None]).T @ Z + np.diag(pen)
    try:
        cov = np.linalg.inv(H)
        se = np.sqrt(np.clip(np.diag(cov), 0, None))
    except np.linalg.LinAlgError:
        se = np.full(p, np.inf)
    if separated:
        warnings.warn("perfect or quasi separation: coefficients capped", SeparationWarning, stacklevel=2)
    return LogisticFit(beta, se, it, converged and not separated, _loglik(eta, y), separated, n_case, n_control)


class OddsModel:
    """Fitted (or specified) selection odds for every non-source node.

    Parameters
    ----------
    d : int
    coefs : mapping Pattern -> array of length ``1 + |r|``
    deltas : mapping Pattern -> array of length ``d - |r|``, optional
    null_patterns : patterns whose odds are identically zero (no rows).
    fits : mapping Pattern -> LogisticFit, optional diagnostics.
    transform : {"identity", "square", "abs"}
        Elementwise map applied to ``l_r`` before the linear predictor.
    """

    def __init__(self, d: int, coefs: Mapping, deltas: Mapping | None = None,
                 null_patterns=(), fits: Mapping | None = None, transform: str | None = None):
        self.d = d
        self.transform = _transform(transform)
        self.coefs = {}
        for r, b in coefs.items():
            r = as_pattern(r)
            b = np.asarray(b, dtype=float).ravel()
            if r.d != d:
                raise ValueError(f"pattern {r} does not have length {d}")
            if r.is_full:
                raise ValueError("the complete pattern carries no odds")
            if len(b) != 1 + r.size:
                raise ValueError(f"beta for {r} must have length {1 + r.size}, got {len(b)}")
            if not np.all(np.isfinite(b)):
                raise ValueError(f"non-finite coefficient for {r}")
            self.coefs[r] = b
        self.deltas = {}
        for r, dl in (deltas or {}).items():
            r = as_pattern(r)
            dl = np.asarray(dl, dtype=float).ravel()
            if len(dl) != d - r.size:
                raise ValueError(f"delta for {r} must have length {d - r.size}, got {len(dl)}")
            if not np.all(np.isfinite(dl)):
                raise ValueError(f"non-finite tilt for {r}")
            self.deltas[r] = dl
        self.null_patterns = frozenset(as_pattern(p) for p in null_patterns)
        self.fits = dict(fits or {})

    # -- evaluation ------------------------------------------------------

    def has(self, r) -> bool:
        r = as_pattern(r)
        return r in self.coefs or r in self.null_patterns

    def delta(self, r) -> np.ndarray:
        r = as_pattern(r)
        return self.deltas.get(r, np.zeros(self.d - r.size))

    def is_tilted(self, r=None) -> bool:
        if r is None:
            return any(np.any(v != 0) for v in self.deltas.values())
        return bool(np.any(self.delta(r) != 0))

    def log_odds(self, r, X) -> np.ndarray:
        """Vectorized ``log O_r`` for rows of ``X`` (shape ``(n, d)`` or ``(d,)``).

        Only the observed coordinates of ``r`` are read, plus the complement
        when a non-zero tilt is set.  Null patterns give ``-inf``.
        """
        r = as_pattern(r)
        X = np.asarray(X, dtype=float)
        single = X.ndim == 1
        X2 = X[None, :] if single else X
        if X2.shape[1] != self.d:
            raise ValueError(f"rows must have {self.d} coordinates, got {X2.shape[1]}")
        if r in self.null_patterns:
            out = np.full(X2.shape[0], -np.inf)
        else:
            if r not in self.coefs:
                raise KeyError(f"no odds fitted for pattern {r}")
            b = self.coefs[r]
            xr = X2[:, r.observed]
            if np.isnan(xr).any():
                raise ValueError(f"odds for {r} need the coordinates observed under {r}")
            out = b[0] + TRANSFORMS[self.transform](xr) @ b[1:]
            dl = self.deltas.get(r)
            if dl is not None and np.any(dl != 0):
                xm = X2[:, r.missing]
                used = xm[:, dl != 0]
                if np.isnan(used).any():
                    raise ValueError(f"tilted odds for {r} need the complement coordinates")
                out = out + used @ dl[dl != 0]
        return out[0] if single else out

    def odds(self, r, X) -> np.ndarray:
        return np.exp(self.log_odds(r, X))

    def embed(self, r) -> np.ndarray:
        """Coefficients on ``(1, L)``: ``beta_r`` placed on the observed
        coordinates of ``r`` and zeros elsewhere."""
        r = as_pattern(r)
        if r.is_full:
            raise ValueError("the complete pattern carries no odds")
        if r not in self.coefs:
            raise KeyError(f"no odds fitted for pattern {r}")
        if self.transform != "identity":
            raise ValueError("embedding is only defined for the identity transform")
        out = np.zeros(1 + self.d)
        b = self.coefs[r]
        out[0] = b[0]
        out[1 + r.observed] = b[1:]
        return out

    # -- derived models --------------------------------------------------

    def with_tilt(self, tilt) -> "OddsModel":
        """Copy with tilt vectors set.  ``tilt`` is a scalar (applied to every
        element of every ``delta_r``) or a mapping pattern -> vector."""
        if np.isscalar(tilt):
            deltas = {r: np.full(self.d - r.size, float(tilt)) for r in self.patterns()}
        else:
            deltas = {as_pattern(r): v for r, v in tilt.items()}
        return OddsModel(self.d, self.coefs, deltas, self.null_patterns, self.fits, self.transform)

    def patterns(self) -> list[Pattern]:
        return sorted(set(self.coefs) | self.null_patterns, key=canonical_key)

    @property
    def separated(self) -> list[Pattern]:
        return [r for r, f in self.fits.items() if f.separated]

    @property
    def nonconverged(self) -> list[Pattern]:
        return [r for r, f in self.fits.items() if not f.converged and not f.separated]

    def __repr__(self):
        return f"OddsModel(d={self.d}, patterns={[str(p) for p in self.patterns()]})"

    # -- serialization ---------------------------------------------------

    def to_text(self) -> str:
        lines = [f"d = {self.d}"]
        if self.transform != "identity":
            lines.append(f"transform = {self.transform}")
        for r in self.patterns():
            if r in self.null_patterns:
                lines.append(f"odds.{r}.null = true")
                continue
            lines.append(f"odds.{r}.beta = " + ",".join(repr(float(v)) for v in self.coefs[r]))
            dl = self.delta(r)
            if len(dl):
                lines.append(f"odds.{r}.delta = " + ",".join(repr(float(v)) for v in dl))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "OddsModel":
        d = None
        transform = None
        coefs, deltas, nulls = {}, {}, []
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"line {lineno}: expected 'key = value'")
            key, val = (s.strip() for s in line.split("=", 1))
            if key == "d":
                d = int(val)
                continue
            if key == "transform":
                transform = val
                continue
            parts = key.split(".")
            if len(parts) != 3 or parts[0] != "odds" or parts[2] not in ("beta", "delta", "null"):
                raise ValueError(f"line {lineno}: unknown key {key!r}")
            r = Pattern.parse(parts[1])
            if parts[2] == "null":
                if val.lower() == "true":
                    nulls.append(r)
                continue
            vec = [float(v) for v in val.split(",")] if val else []
            (coefs if parts[2] == "beta" else deltas)[r] = vec
        if d is None:
            pats = list(coefs) + list(deltas) + nulls
            if not pats:
                raise ValueError("empty odds file")
            d = pats[0].d
        return cls(d, coefs, deltas, nulls, transform=transform)

    def save(self, path) -> None:
        FilePath(path).write_text(self.to_text(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "OddsModel":
        return cls.from_text(FilePath(path).read_text(encoding="utf-8"))


def fit_odds(ds: IncompleteDataset, idx: PatternIndex, g: PatternGraph, r, ridge: float = 0.0,
             transform: str | None = None, **kw) -> LogisticFit:
    """Fit ``log O_r`` by contrasting rows with ``R = r`` against rows with
    ``R`` in ``PA_r`` on covariates ``(1, L_r)``."""
    r = as_pattern(r)
    if r == g.source:
        raise ValueError("the complete pattern carries no odds")
    case = idx.is_pattern(r)
    ctrl = idx.member(g.parents(r))
    rows = np.flatnonzero(case | ctrl)
    if not case.any() or not ctrl.any():
        raise OddsFitError(f"pattern {r}: {int(case.sum())} rows vs {int(ctrl.sum())} parent rows; both classes required")
    X = TRANSFORMS[_transform(transform)](ds.block(rows, r.observed))
    return fit_logistic(X, case[rows].astype(float), ridge=ridge, **kw)


def fit_odds_model(ds: IncompleteDataset, g: PatternGraph, ridge: float = 0.0,
                   min_count: int = DEFAULT_MIN_COUNT, strict: bool = False,
                   transform: str | None = None) -> OddsModel:
    """Fit odds for every non-source node of a regular graph.

    Nodes without rows get identically-zero odds.  Positivity failures of
    category (c) always raise; with ``strict`` every flagged category raises.
    """
    require_valid(g, "regular")
    idx = ds.index
    check_positivity(idx, g, min_count, strict)
    coefs, fits, nulls = {}, {}, []
    for r in g.nodes:
        if r == g.source:
            continue
        if idx.count(r) == 0:
            nulls.append(r)
            continue
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", SeparationWarning)
            fit = fit_odds(ds, idx, g, r, ridge=ridge, transform=transform)
        coefs[r] = fit.beta
        fits[r] = fit
    return OddsModel(g.d, coefs, None, nulls, fits, transform)
