"""Bootstrap intervals and sensitivity sweeps.

Replicate ``b`` draws its resample (and, for Monte Carlo estimators, its
imputation seed) from ``SeedSequence([seed, b])``, so results do not depend
on the number of worker threads.
"""

from __future__ import annotations

import csv
import io
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import clone

from .data import IncompleteDataset
from .estimators import IPWEstimator, RAEstimator, check_incomplete
from .graph import PatternGraph, perturbation_neighborhood

MAX_FAILED_FRACTION = 0.2


class BootstrapError(RuntimeError):
    """Too many bootstrap replicates failed."""


@dataclass
class EstimateReport:
    """Point estimate, percentile interval and diagnostics."""

    method: str
    estimate: float
    replicates: np.ndarray = field(default_factory=lambda: np.empty(0))
    ci_lo: float = float("nan")
    ci_hi: float = float("nan")
    alpha: float = 0.05
    seed: int | None = None
    failed_reps: int = 0
    diagnostics: dict = field(default_factory=dict)

    @property
    def B(self) -> int:
        return len(self.replicates) + self.failed_reps

    def row(self, param) -> dict:
        return {"param": param, "estimate": self.estimate, "ci_lo": self.ci_lo,
                "ci_hi": self.ci_hi, "failed_reps": self.failed_reps}


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def reports_to_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    cols = ["param", "estimate", "ci_lo", "ci_hi", "failed_reps"]
    w.writerow(cols)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in cols])
    return buf.getvalue()


def _replicate_seed(seed: int, b: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([seed, b])


def _fit_replicate(estimator, ds: IncompleteDataset, seed: int, b: int):
    ss = _replicate_seed(seed, b)
    rng = np.random.default_rng(ss)
    rows = rng.integers(0, ds.n, ds.n)
    est = clone(estimator)
    if "random_state" in est.get_params():
        est.set_params(random_state=int(ss.generate_state(1)[0]))
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            est.fit(ds.subset(rows))
        val = float(est.estimate_)
        if not np.isfinite(val):
            return float("nan")
        return val
    except Exception:  # noqa: BLE001 - any failed refit counts as a dropped replicate
        return float("nan")


def bootstrap_replicates(estimator, X, B: int, seed: int, threads: int = 1) -> np.ndarray:
    """Estimates on ``B`` row resamples; NaN marks a failed refit."""
    ds = check_incomplete(X)
    if threads <= 1:
        vals = [_fit_replicate(estimator, ds, seed, b) for b in range(B)]
    else:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            vals = list(ex.map(lambda b: _fit_replicate(estimator, ds, seed, b), range(B)))
    return np.asarray(vals, dtype=float)


def bootstrap_ci(estimator, X, B: int = 500, alpha: float = 0.05, seed: int = 0, threads: int = 1,
                 fitted=None) -> EstimateReport:
    """Nonparametric percentile bootstrap with the full pipeline refit per replicate.

    Parameters
    ----------
    estimator : unfitted estimator
        Cloned for every replicate.
    B : int, default=500
        Number of replicates (at least 100).
    alpha : float, default=0.05
    seed : int
    threads : int, default=1
    fitted : estimator, optional
        Already-fitted copy supplying the point estimate.
    """
    if B < 100:
        raise ValueError("B must be at least 100")
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    ds = check_incomplete(X)
    if fitted is None:
        fitted = clone(estimator).fit(ds)
    reps = bootstrap_replicates(estimator, ds, B, seed, threads)
    ok = reps[np.isfinite(reps)]
    failed = int(B - len(ok))
    if failed > MAX_FAILED_FRACTION * B:
        raise BootstrapError(f"{failed} of {B} bootstrap replicates failed to fit")
    lo, hi = np.quantile(ok, [alpha / 2, 1 - alpha / 2])
    diag = fitted.diagnostics() if hasattr(fitted, "diagnostics") else {}
    diag["failed_reps"] = failed
    return EstimateReport(getattr(fitted, "method", type(fitted).__name__), float(fitted.estimate_), ok,
                          float(lo), float(hi), alpha, seed, failed, diag)


def point_report(estimator, X) -> EstimateReport:
    """Point estimate without an interval."""
    fitted = clone(estimator).fit(X)
    return EstimateReport(fitted.method, float(fitted.estimate_), diagnostics=fitted.diagnostics())


@dataclass
class SweepResult:
    """Ordered ``(param, report-or-error)`` entries."""

    kind: str
    entries: list = field(default_factory=list)

    def params(self) -> list:
        return [p for p, _ in self.entries]

    def get(self, param):
        for p, rep in self.entries:
            if p == param:
                return rep
        raise KeyError(param)

    @property
    def baseline(self) -> EstimateReport:
        return self.get(0.0 if self.kind != "graph" else "baseline")

    def rows(self) -> list[dict]:
        out = []
        for p, rep in self.entries:
            if isinstance(rep, EstimateReport):
                out.append(rep.row(p))
            else:
                out.append({"param": p, "estimate": float("nan"), "ci_lo": float("nan"),
                            "ci_hi": float("nan"), "failed_reps": -1})
        return out

    def to_csv(self) -> str:
        return reports_to_csv(self.rows())


def _run(estimator, ds, B, alpha, seed, threads):
    if B:
        return bootstrap_ci(estimator, ds, B=B, alpha=alpha, seed=seed, threads=threads)
    return point_report(estimator, ds)


def parse_grid(spec: str) -> list[float]:
    """``"lo:hi:step"`` -> inclusive grid; ``0`` is inserted if missing."""
    try:
        lo, hi, step = (float(v) for v in spec.split(":"))
    except ValueError:
        raise ValueError(f"grid must be 'lo:hi:step', got {spec!r}") from None
    if step <= 0 or hi < lo:
        raise ValueError("grid needs lo <= hi and a positive step")
    k = int(np.floor((hi - lo) / step + 1e-9))
    grid = [round(lo + i * step, 12) for i in range(k + 1)]
    if not any(v == 0 for v in grid):
        grid.append(0.0)
    return sorted(set(grid))


def tilt_sweep(estimator, X, kind: str, grid, B: int = 0, alpha: float = 0.05, seed: int = 0,
               threads: int = 1, bounds=None) -> SweepResult:
    """Re-run an analysis across a grid of scalar tilts.

    ``kind="odds"`` tilts the selection odds of an :class:`IPWEstimator`;
    ``kind="pmm"`` tilts the extrapolation densities of an
    :class:`RAEstimator` through rejection-sampled imputation.  The grid must
    contain 0, whose entry is the untilted analysis.
    """
    grid = sorted(float(v) for v in grid)
    if 0.0 not in grid:
        raise ValueError("the tilt grid must contain 0")
    if kind == "odds":
        if not isinstance(estimator, IPWEstimator):
            raise TypeError("odds tilting applies to IPWEstimator")
    elif kind == "pmm":
        if not isinstance(estimator, RAEstimator):
            raise TypeError("pmm tilting applies to RAEstimator")
    else:
        raise ValueError(f"kind must be 'odds' or 'pmm', got {kind!r}")
    ds = check_incomplete(X)
    out = SweepResult(kind)
    for w in grid:
        est = clone(estimator).set_params(tilt=w)
        if kind == "pmm" and bounds is not None:
            est.set_params(tilt_bounds=bounds)
        out.entries.append((w, _run(est, ds, B, alpha, seed, threads)))
    return out


def graph_sweep(estimator, X, B: int = 0, alpha: float = 0.05, seed: int = 0, threads: int = 1) -> SweepResult:
    """Run the analysis on the graph and on every one-edge perturbation of it.

    Entries are keyed ``baseline``, ``+s->r`` and ``-s->r``; a failing graph
    records its exception and the sweep continues.
    """
    g: PatternGraph = estimator.get_params()["graph"]
    ds = check_incomplete(X)
    out = SweepResult("graph")
    out.entries.append(("baseline", _run(estimator, ds, B, alpha, seed, threads)))
    for label, g2 in perturbation_neighborhood(g).graphs():
        est = clone(estimator).set_params(graph=g2)
        try:
            rep = _run(est, ds, B, alpha, seed, threads)
        except Exception as e:  # noqa: BLE001 - recorded, sweep continues
            rep = e
        out.entries.append((label, rep))
    return out
