"""Efficient influence function and the augmented IPW estimator.

The augmentation for node ``r`` and ancestor ``s`` is::

    EIF_{s,r} = m(L_s, s) (I(R=s) - O_s(L_s) I(R in PA_s))
                * sum over paths zeta from s to r of prod_{w in zeta, w != s} O_w(L_w)

Summed over ``r`` the path factor telescopes into ``D_s = 1 + sum_{c child
of s} O_c D_c``, which is what :func:`aipw_estimate` uses.  The explicit
per-``(s, r)`` form and the per-path form are kept for checking.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import IncompleteDataset
from .functionals import as_functional
from .graph import PatternGraph, all_paths, enumerate_paths, paths_between, require_valid
from .imputation import DonorImputer, PatternDensityModel, tree_regression, tree_regression_for
from .odds import OddsModel
from .patterns import Pattern, as_pattern
from .propensity import recursive_scores


class RegressionSurface:
    """Regression functions ``m(l_s, s) = E(theta(L) | L_s = l_s, R = s)``.

    Subclasses implement :meth:`m`; :meth:`mu` returns the split of ``m``
    across paths ending at ``s`` (keyed by path) and defaults to a single
    path when the graph is a tree.
    """

    g: PatternGraph

    def m(self, s: Pattern, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def mu(self, s: Pattern, X: np.ndarray) -> dict:
        paths = enumerate_paths(self.g, s)
        if len(paths) != 1:
            raise NotImplementedError("this surface does not split across paths")
        return {paths[0]: self.m(s, X)}


class TreeSurface(RegressionSurface):
    """Exact surface for tree graphs, Gaussian densities and linear theta."""

    def __init__(self, g: PatternGraph, densities: PatternDensityModel, theta):
        self.g = g
        self.theta = as_functional(theta, g.d)
        self._reg = tree_regression(g, densities, self.theta)

    def m(self, s, X):
        s = as_pattern(s)
        alpha, gamma = tree_regression_for(self._reg, s)
        X = np.atleast_2d(X)
        return alpha + X[:, s.observed] @ gamma


class FunctionSurface(RegressionSurface):
    """Surface given directly by callables ``{s: f(X) -> m}`` and optionally
    ``{s: {path: f(X)}}`` for the per-path split."""

    def __init__(self, g: PatternGraph, m_funcs: dict, mu_funcs: dict | None = None):
        self.g = g
        self._m = {as_pattern(k): v for k, v in m_funcs.items()}
        self._mu = {as_pattern(k): v for k, v in (mu_funcs or {}).items()}

    def m(self, s, X):
        return np.asarray(self._m[as_pattern(s)](np.atleast_2d(X)), dtype=float)

    def mu(self, s, X):
        s = as_pattern(s)
        if s in self._mu:
            return {p: np.asarray(f(np.atleast_2d(X)), dtype=float) for p, f in self._mu[s].items()}
        return super().mu(s, X)


class MonteCarloSurface(RegressionSurface):
    """``m~(l_s, s)``: average of ``theta`` over ``N`` donor-chain completions
    started from ``(l_s, s)``.

    Each pattern ``s`` uses its own stream ``SeedSequence([seed, k_s])`` with
    ``k_s`` the canonical node position, so surfaces are reproducible
    regardless of evaluation order.  The per-path split ``mu`` is the
    average of ``theta`` times the indicator that the reversed donor chain
    equals the path; it sums to ``m~`` exactly.
    """

    def __init__(self, g: PatternGraph, densities: PatternDensityModel, theta, N: int = 20, seed: int = 0):
        if N < 1:
            raise ValueError("N must be at least 1")
        self.g = g
        self.theta = as_functional(theta, g.d)
        self.N = int(N)
        self.seed = int(seed)
        self.imputer = DonorImputer(g, densities)
        self._cache: dict = {}

    def _run(self, s: Pattern, X: np.ndarray):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        key = (s, X.shape, hash(X[:, s.observed].tobytes()))
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        n = X.shape[0]
        if s == self.g.source:
            vals = self.theta(X)
            res = (vals, {(s,): vals})
            self._cache[key] = res
            return res
        rng = np.random.default_rng(np.random.SeedSequence([self.seed, self.g.index(s)]))
        Y = np.full((n * self.N, self.g.d), np.nan)
        Y[:, s.observed] = np.tile(X[:, s.observed], (self.N, 1))
        done, chains = self.imputer.complete_pattern(Y, s, rng)
        th = self.theta(done).reshape(self.N, n)
        m = th.mean(axis=0)
        mus = {}
        codes, inv = np.unique(chains, axis=0, return_inverse=True)
        inv = inv.reshape(self.N, n)
        for k, code in enumerate(codes):
            path = tuple(reversed((s,) + self.imputer.chain_patterns(code)))
            mus[path] = np.where(inv == k, th, 0.0).mean(axis=0)
        res = (m, mus)
        self._cache[key] = res
        return res

    def m(self, s, X):
        return self._run(as_pattern(s), X)[0]

    def mu(self, s, X):
        s = as_pattern(s)
        m, mus = self._run(s, X)
        out = {p: np.zeros(len(m)) for p in enumerate_paths(self.g, s)}
        for p, v in mus.items():
            out[p] = out.get(p, 0.0) + v
        return out


@dataclass
class EifComponents:
    """Per-row influence decomposition.

    ``terms`` maps ``(s, r)`` (ancestor mode) or ``(path, s)`` (path mode) to
    per-row arrays.
    """

    ipw_term: np.ndarray
    augmentation: np.ndarray
    terms: dict = field(default_factory=dict)

    @property
    def total(self) -> np.ndarray:
        return self.ipw_term + self.augmentation


@dataclass
class AIPWResult:
    estimate: float
    ipw_part: float
    augmentation_part: float
    influence: np.ndarray


def _prepare(X, patterns, g: PatternGraph):
    X = np.atleast_2d(np.asarray(X, dtype=float))
    pats = [as_pattern(p) for p in patterns]
    codes = np.array([g.index(p) if p in g else -1 for p in pats])
    if np.any(codes < 0):
        bad = sorted({str(p) for p, c in zip(pats, codes) if c < 0})
        raise ValueError(f"row pattern(s) {bad} are not nodes of the graph")
    return X, codes


def _member(codes, g: PatternGraph, ps) -> np.ndarray:
    keep = np.zeros(len(g.nodes), dtype=bool)
    for p in ps:
        keep[g.index(p)] = True
    return keep[codes]


def _ipw_term(X, codes, g, odds, theta):
    n = X.shape[0]
    full = codes == g.index(g.source)
    out = np.zeros(n)
    if full.any():
        sc = recursive_scores(g, odds, X[full])
        out[full] = theta(X[full]) / sc.pi
    return out


def _descendant_factor(g: PatternGraph, odds: OddsModel, s: Pattern, X: np.ndarray, memo: dict) -> np.ndarray:
    """``D_s = 1 + sum_{c in children(s)} O_c D_c`` on rows of ``X``."""
    if s in memo:
        return memo[s]
    acc = np.ones(X.shape[0])
    for c in g.children(s):
        acc = acc + odds.odds(c, X) * _descendant_factor(g, odds, c, X, memo)
    memo[s] = acc
    return acc


def eif_evaluate(X, patterns, g: PatternGraph, odds: OddsModel, surface: RegressionSurface, theta,
                 expr: str = "ancestor") -> EifComponents:
    """Influence values for rows ``X`` (NaN where unobserved) with given patterns.

    ``expr="ancestor"`` sums ``EIF_{s,r}`` over nodes ``r`` and ancestors
    ``s``; ``expr="path"`` sums ``EIF_{path,s}`` over every path and every
    non-source node on it.  Both give the same total.
    """
    require_valid(g, "regular")
    theta = as_functional(theta, g.d)
    X, codes = _prepare(X, patterns, g)
    n = X.shape[0]
    ipw = _ipw_term(X, codes, g, odds, theta)
    aug = np.zeros(n)
    terms = {}
    src = g.source
    if expr == "ancestor":
        for s in g.nodes:
            if s == src:
                continue
            is_s = codes == g.index(s)
            in_pa = _member(codes, g, g.parents(s))
            act = np.flatnonzero(is_s | in_pa)
            if not act.size:
                continue
            Xa = X[act]
            base = odds.odds(s, Xa)
            resid = is_s[act].astype(float) - base * in_pa[act]
            ms = surface.m(s, Xa)
            for r in g.nodes:
                ups = paths_between(g, s, r)
                if not ups:
                    continue
                fac = np.zeros(len(act))
                for zeta in ups:
                    prod = np.ones(len(act))
                    for w in zeta[1:]:
                        prod = prod * odds.odds(w, Xa)
                    fac = fac + prod
                val = np.zeros(n)
                val[act] = ms * resid * fac
                terms[(s, r)] = val
                aug += val
    elif expr == "path":
        mu_cache = {}
        for xi in all_paths(g):
            for k, s in enumerate(xi):
                if s == src:
                    continue
                is_s = codes == g.index(s)
                in_pa = _member(codes, g, g.parents(s))
                act = np.flatnonzero(is_s | in_pa)
                if not act.size:
                    continue
                Xa = X[act]
                if s not in mu_cache:
                    mu_cache[s] = surface.mu(s, Xa)
                mu = mu_cache[s].get(xi[: k + 1])
                if mu is None:
                    continue
                resid = is_s[act].astype(float) - odds.odds(s, Xa) * in_pa[act]
                prod = np.ones(len(act))
                for w in xi[k + 1:]:
                    prod = prod * odds.odds(w, Xa)
                val = np.zeros(n)
                val[act] = mu * resid * prod
                terms[(xi, s)] = val
                aug += val
    else:
        raise ValueError(f"expr must be 'ancestor' or 'path', got {expr!r}")
    return EifComponents(ipw, aug, terms)


def augmentation(X, patterns, g: PatternGraph, odds: OddsModel, surface: RegressionSurface) -> np.ndarray:
    """Per-row augmentation via the telescoped descendant factor."""
    X, codes = _prepare(X, patterns, g)
    n = X.shape[0]
    aug = np.zeros(n)
    for s in g.nodes:
        if s == g.source:
            continue
        is_s = codes == g.index(s)
        in_pa = _member(codes, g, g.parents(s))
        act = np.flatnonzero(is_s | in_pa)
        if not act.size:
            continue
        Xa = X[act]
        resid = is_s[act].astype(float) - odds.odds(s, Xa) * in_pa[act]
        D = _descendant_factor(g, odds, s, Xa, {})
        aug[act] += surface.m(s, Xa) * resid * D
    return aug


def aipw_estimate(ds: IncompleteDataset, g: PatternGraph, odds: OddsModel, surface: RegressionSurface,
                  theta) -> AIPWResult:
    """Semi-parametric (augmented IPW) estimate with its component split."""
    require_valid(g, "regular")
    theta = as_functional(theta, ds.d)
    if ds.n == 0:
        raise ValueError("empty dataset")
    idx = ds.index
    pats = [idx.patterns[c] for c in idx.codes]
    X, codes = _prepare(ds.values, pats, g)
    if not np.any(codes == g.index(g.source)):
        raise ValueError("no complete cases")
    ipw = _ipw_term(X, codes, g, odds, theta)
    aug = augmentation(X, pats, g, odds, surface)
    infl = ipw + aug
    return AIPWResult(float(infl.mean()), float(ipw.mean()), float(aug.mean()), infl)
