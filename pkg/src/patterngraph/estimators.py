"""scikit-learn style estimators for the mean of a functional.

Every estimator takes the incomplete data as an array with NaN in
unobserved cells (or an :class:`~patterngraph.data.IncompleteDataset`).
``fit`` computes the point estimate, stored in ``estimate_``.
"""

from __future__ import annotations

import numbers

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .data import DEFAULT_MIN_COUNT, IncompleteDataset, positivity_report
from .functionals import as_functional
from .graph import GraphError, PatternGraph, require_valid
from .imputation import (default_bounds, fit_pattern_densities, ra_estimate,
                         tree_closed_form_estimate, tree_regression)
from .odds import fit_odds_model
from .propensity import recursive_scores
from .semiparametric import MonteCarloSurface, TreeSurface, aipw_estimate


def check_incomplete(X, d: int | None = None) -> IncompleteDataset:
    """Validate input data and wrap it as an :class:`IncompleteDataset`."""
    if isinstance(X, IncompleteDataset):
        ds = X
    else:
        arr = check_array(X, dtype=float, ensure_all_finite="allow-nan", ensure_min_samples=1)
        if np.isinf(arr).any():
            raise ValueError("input contains infinite values")
        ds = IncompleteDataset(arr)
    if d is not None and ds.d != d:
        raise ValueError(f"data has {ds.d} columns, graph expects {d}")
    if ds.n == 0:
        raise ValueError("empty dataset")
    return ds


def _check_graph(graph) -> PatternGraph:
    if not isinstance(graph, PatternGraph):
        raise TypeError(f"graph must be a PatternGraph, got {type(graph).__name__}")
    return graph


def _seed(random_state) -> int:
    if random_state is None:
        return int(np.random.SeedSequence().generate_state(1)[0])
    if isinstance(random_state, numbers.Integral):
        return int(random_state)
    raise TypeError("random_state must be an int or None")


def _scalar_tilt(d: int, patterns, tilt):
    """Expand a scalar tilt to a per-pattern dict; dicts pass through."""
    if tilt is None:
        return None
    if isinstance(tilt, dict):
        return tilt
    return {r: np.full(d - r.size, float(tilt)) for r in patterns if not r.is_full}


class SelectionOdds(TransformerMixin, BaseEstimator):
    """Per-pattern logistic selection odds on a regular pattern graph.

    Parameters
    ----------
    graph : PatternGraph
    ridge : float, default=0.0
        Optional L2 penalty on the slopes.
    min_count : int, default=5
        Threshold for the thin-parent positivity flag.
    strict : bool, default=False
        Raise on any positivity flag instead of only on unknown patterns.
    covariate_transform : {"identity", "square", "abs"}, default="identity"
        Elementwise map of the odds regressors.

    Attributes
    ----------
    model_ : OddsModel
    positivity_ : PositivityReport
    """

    def __init__(self, graph=None, ridge=0.0, min_count=DEFAULT_MIN_COUNT, strict=False, covariate_transform="identity"):
        self.graph = graph
        self.ridge = ridge
        self.min_count = min_count
        self.strict = strict
        self.covariate_transform = covariate_transform

    def fit(self, X, y=None):
        g = _check_graph(self.graph)
        ds = check_incomplete(X, g.d)
        self.model_ = fit_odds_model(ds, g, ridge=self.ridge, min_count=self.min_count,
                                     strict=self.strict, transform=self.covariate_transform)
        self.positivity_ = positivity_report(ds.index, g, self.min_count)
        self.n_features_in_ = g.d
        return self

    def transform(self, X):
        """Propensity ``pi(x)`` for fully observed rows (NaN elsewhere)."""
        check_is_fitted(self, "model_")
        ds = check_incomplete(X, self.graph.d)
        out = np.full(ds.n, np.nan)
        full = ds.mask.all(axis=1)
        if full.any():
            out[full] = recursive_scores(self.graph, self.model_, ds.values[full]).pi
        return out[:, None]


class GaussianPatternDensities(BaseEstimator):
    """Per-pattern Gaussian models for ``L_r | R = r``.

    Attributes
    ----------
    model_ : PatternDensityModel
    """

    def __init__(self, ridge_scale=1e-8):
        self.ridge_scale = ridge_scale

    def fit(self, X, y=None):
        ds = check_incomplete(X)
        self.model_ = fit_pattern_densities(ds, ridge_scale=self.ridge_scale)
        self.n_features_in_ = ds.d
        return self

    def score_samples(self, X):
        """Observed-data log density of each row under its own pattern's law."""
        check_is_fitted(self, "model_")
        ds = check_incomplete(X)
        out = np.zeros(ds.n)
        idx = ds.index
        for r in idx.patterns:
            if r.size == 0:
                continue
            rows = idx.rows(r)
            out[rows] = self.model_.law(r).logpdf(ds.block(rows, r.observed))
        return out


class _MeanEstimator(BaseEstimator):
    method = ""

    def _setup(self, X):
        g = _check_graph(self.graph)
        ds = check_incomplete(X, g.d)
        theta = as_functional(self.theta, g.d)
        self.n_features_in_ = g.d
        return g, ds, theta

    def _check_positivity(self, ds, g):
        rep = positivity_report(ds.index, g, self.min_count)
        self.positivity_ = rep
        if rep.hard_failures(self.strict):
            from .data import PositivityError
            raise PositivityError(rep)

    def predict(self, X=None):
        """The fitted point estimate (the estimand is a single number)."""
        check_is_fitted(self, "estimate_")
        return self.estimate_

    def diagnostics(self) -> dict:
        check_is_fitted(self, "estimate_")
        out = {"method": self.method}
        rep = getattr(self, "positivity_", None)
        if rep is not None:
            out["positivity"] = rep.lines()
        return out


class IPWEstimator(_MeanEstimator):
    """Inverse probability weighting with recursively computed propensities.

    ``estimate_ = mean_i theta(L_i) I(R_i = 1) / pi(L_i)``.

    Parameters
    ----------
    graph : PatternGraph
        Regular pattern graph.
    theta : array-like, int, or functional, default=None
        Coefficient vector, column index, or a functional object.
    tilt : float or dict, default=0.0
        Odds tilt ``delta``: a scalar sets every element of every tilt
        vector.
    ridge, min_count, strict, covariate_transform
        Passed to the odds fit.

    Attributes
    ----------
    estimate_ : float
    odds_ : OddsModel
    weights_ : ndarray of shape (n_complete, 2)
        ``(row_id, pi)`` for each complete case.
    """

    method = "ipw"

    def __init__(self, graph=None, theta=None, tilt=0.0, ridge=0.0, min_count=DEFAULT_MIN_COUNT,
                 strict=False, covariate_transform="identity"):
        self.graph = graph
        self.theta = theta
        self.tilt = tilt
        self.ridge = ridge
        self.min_count = min_count
        self.strict = strict
        self.covariate_transform = covariate_transform

    def fit(self, X, y=None):
        g, ds, theta = self._setup(X)
        require_valid(g, "regular")
        odds = fit_odds_model(ds, g, ridge=self.ridge, min_count=self.min_count,
                              strict=self.strict, transform=self.covariate_transform)
        self.positivity_ = positivity_report(ds.index, g, self.min_count)
        if self.tilt is not None and (isinstance(self.tilt, dict) or self.tilt != 0):
            odds = odds.with_tilt(self.tilt)
        self.odds_ = odds
        full = np.flatnonzero(ds.mask.all(axis=1))
        if not full.size:
            raise ValueError("no complete cases")
        sc = recursive_scores(g, odds, ds.values[full])
        self.n_floored_ = sc.n_floored
        self.weights_ = np.column_stack([full, sc.pi])
        self.estimate_ = float(np.sum(theta(ds.values[full]) / sc.pi) / ds.n)
        return self

    def diagnostics(self):
        out = super().diagnostics()
        out["separated"] = [str(r) for r in self.odds_.separated]
        out["nonconverged"] = [str(r) for r in self.odds_.nonconverged]
        out["near_zero_propensity"] = self.n_floored_
        return out


class RAEstimator(_MeanEstimator):
    """Regression adjustment by multiple donor imputation.

    Parameters
    ----------
    graph : PatternGraph
        Regular or acyclic.
    theta : see :class:`IPWEstimator`
    n_imputations : int, default=20
    tilt : float or dict, default=0.0
        PMM tilt ``omega``; non-zero values switch on rejection sampling.
    tilt_bounds : (lo, hi) or None
        Bounds for the rejection step.  Defaults to observed extremes.
    random_state : int or None

    Attributes
    ----------
    estimate_ : float
    replicates_ : ndarray of the per-imputation plug-in means
    mc_se_ : float
    densities_ : PatternDensityModel
    """

    method = "ra"

    def __init__(self, graph=None, theta=None, n_imputations=20, tilt=0.0, tilt_bounds=None,
                 random_state=None, min_count=DEFAULT_MIN_COUNT, strict=False, ridge_scale=1e-8):
        self.graph = graph
        self.theta = theta
        self.n_imputations = n_imputations
        self.tilt = tilt
        self.tilt_bounds = tilt_bounds
        self.random_state = random_state
        self.min_count = min_count
        self.strict = strict
        self.ridge_scale = ridge_scale

    def fit(self, X, y=None):
        g, ds, theta = self._setup(X)
        require_valid(g, "acyclic")
        self._check_positivity(ds, g)
        self.densities_ = fit_pattern_densities(ds, ridge_scale=self.ridge_scale)
        tilt = None
        if self.tilt is not None and (isinstance(self.tilt, dict) or self.tilt != 0):
            tilt = _scalar_tilt(g.d, g.nodes, self.tilt)
        bounds = self.tilt_bounds
        if tilt and bounds is None:
            bounds = default_bounds(ds)
        res = ra_estimate(ds, g, self.densities_, theta, N=self.n_imputations,
                          rng=np.random.default_rng(_seed(self.random_state)), tilt=tilt, bounds=bounds)
        self.replicates_ = res.replicates
        self.mc_se_ = res.mc_se
        self.estimate_ = res.estimate
        return self


class TreeEstimator(_MeanEstimator):
    """Regression adjustment in closed form for tree graphs and linear theta."""

    method = "tree"

    def __init__(self, graph=None, theta=None, min_count=DEFAULT_MIN_COUNT, strict=False, ridge_scale=1e-8):
        self.graph = graph
        self.theta = theta
        self.min_count = min_count
        self.strict = strict
        self.ridge_scale = ridge_scale

    def fit(self, X, y=None):
        g, ds, theta = self._setup(X)
        if not g.is_tree():
            bad = [str(r) for r in g.nodes if r != g.source and len(g.parents(r)) != 1]
            raise GraphError(f"not a tree graph: node(s) {bad} have more than one parent")
        self._check_positivity(ds, g)
        self.densities_ = fit_pattern_densities(ds, ridge_scale=self.ridge_scale)
        self.regression_ = tree_regression(g, self.densities_, theta)
        self.estimate_ = tree_closed_form_estimate(ds, g, self.densities_, theta)
        return self


class AIPWEstimator(_MeanEstimator):
    """Semi-parametric augmented IPW estimator.

    Parameters
    ----------
    graph : PatternGraph
        Regular pattern graph.
    theta : see :class:`IPWEstimator`
    n_imputations : int, default=20
        Completions per point for the Monte Carlo regression surface.
    surface : {"auto", "mc", "tree"}, default="auto"
        ``auto`` uses the exact tree surface when the graph is a tree and
        theta is linear, the Monte Carlo surface otherwise.
    random_state : int or None
    covariate_transform : odds covariate map (see :class:`SelectionOdds`).

    Attributes
    ----------
    estimate_, ipw_part_, augmentation_part_ : float
    influence_ : ndarray of per-row influence values
    """

    method = "aipw"

    def __init__(self, graph=None, theta=None, n_imputations=20, surface="auto", random_state=None,
                 ridge=0.0, min_count=DEFAULT_MIN_COUNT, strict=False, covariate_transform="identity", ridge_scale=1e-8):
        self.graph = graph
        self.theta = theta
        self.n_imputations = n_imputations
        self.surface = surface
        self.random_state = random_state
        self.ridge = ridge
        self.min_count = min_count
        self.strict = strict
        self.covariate_transform = covariate_transform
        self.ridge_scale = ridge_scale

    def fit(self, X, y=None):
        g, ds, theta = self._setup(X)
        require_valid(g, "regular")
        self.odds_ = fit_odds_model(ds, g, ridge=self.ridge, min_count=self.min_count,
                                    strict=self.strict, transform=self.covariate_transform)
        self.positivity_ = positivity_report(ds.index, g, self.min_count)
        self.densities_ = fit_pattern_densities(ds, ridge_scale=self.ridge_scale)
        kind = self.surface
        if kind == "auto":
            kind = "tree" if g.is_tree() and getattr(theta, "is_linear", False) else "mc"
        if kind == "tree":
            surf = TreeSurface(g, self.densities_, theta)
        elif kind == "mc":
            surf = MonteCarloSurface(g, self.densities_, theta, N=self.n_imputations,
                                     seed=_seed(self.random_state))
        else:
            raise ValueError(f"surface must be 'auto', 'mc' or 'tree', got {self.surface!r}")
        self.surface_kind_ = kind
        res = aipw_estimate(ds, g, self.odds_, surf, theta)
        self.estimate_ = res.estimate
        self.ipw_part_ = res.ipw_part
        self.augmentation_part_ = res.augmentation_part
        self.influence_ = res.influence
        return self


ESTIMATORS = {"ipw": IPWEstimator, "ra": RAEstimator, "aipw": AIPWEstimator, "tree": TreeEstimator}


def make_estimator(method: str, graph: PatternGraph, theta, **kw) -> _MeanEstimator:
    if method not in ESTIMATORS:
        raise ValueError(f"unknown method {method!r}; choose from {sorted(ESTIMATORS)}")
    cls = ESTIMATORS[method]
    params = cls().get_params()
    return cls(graph=graph, theta=theta, **{k: v for k, v in kw.items() if k in params})
