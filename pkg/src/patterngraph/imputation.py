"""Pattern-mixture route: Gaussian observed-data densities and donor imputation.

Each observed pattern ``r`` gets a Gaussian model for ``L_r | R = r``.  A row
with pattern ``r`` is completed by repeatedly choosing a donor pattern ``s``
among the parents of ``r`` with probability proportional to
``n_s p(l_r | R = s)`` and drawing the coordinates ``s - r`` from the donor's
conditional law, until the row reaches the complete pattern.

Random numbers are consumed in a fixed order so that results depend only on
the seed: within one pattern level, first one uniform per pending row for the
donor choice, then, donor by donor in canonical order, the normal draws for
that donor group followed by the recursive completion of the group, and
finally (only when that level is tilted) one acceptance uniform per row.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_triangular
from scipy.special import logsumexp

from .data import IncompleteDataset
from .functionals import as_functional
from .graph import GraphError, PatternGraph, require_valid
from .patterns import Pattern, as_pattern, canonical_key

RIDGE_SCALE = 1e-8
MAX_PROPOSALS = 100_000
MIN_ACCEPT_RATE = 1e-4
_LOG2PI = math.log(2.0 * math.pi)


class DensityFitError(ValueError):
    """A pattern group is too small to fit its Gaussian."""


class ImputationError(RuntimeError):
    pass


class TiltAcceptanceError(ImputationError):
    """Rejection sampling for a tilted imputation effectively never accepts."""


class GaussianLaw:
    """Multivariate normal law on an ordered set of data columns.

    Parameters
    ----------
    coords : array of int
        Column ids (sorted) the law lives on.
    mean, cov : arrays
    """

    def __init__(self, coords, mean, cov):
        self.coords = np.asarray(coords, dtype=int)
        self.mean = np.asarray(mean, dtype=float).reshape(len(self.coords))
        cov = np.asarray(cov, dtype=float).reshape(len(self.coords), len(self.coords))
        self.cov = 0.5 * (cov + cov.T)
        if len(self.coords):
            self._chol = np.linalg.cholesky(self.cov)
            self.logdet = 2.0 * float(np.sum(np.log(np.diag(self._chol))))
        else:
            self._chol = np.zeros((0, 0))
            self.logdet = 0.0
        self._cond_cache: dict = {}

    @property
    def dim(self) -> int:
        return len(self.coords)

    def _pos(self, cols) -> np.ndarray:
        lookup = {c: i for i, c in enumerate(self.coords)}
        try:
            return np.array([lookup[c] for c in np.asarray(cols, dtype=int)], dtype=int)
        except KeyError as e:
            raise ValueError(f"column {e.args[0]} not covered by this law") from None

    def covers(self, cols) -> bool:
        return set(np.asarray(cols, dtype=int).tolist()) <= set(self.coords.tolist())

    def marginal(self, cols) -> "GaussianLaw":
        p = self._pos(cols)
        return GaussianLaw(np.asarray(cols, dtype=int), self.mean[p], self.cov[np.ix_(p, p)])

    def logpdf(self, X) -> np.ndarray:
        """Log density at rows of ``X`` (columns ordered as ``coords``)."""
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        if self.dim == 0:
            return np.zeros(X.shape[0])
        z = solve_triangular(self._chol, (X - self.mean).T, lower=True)
        return -0.5 * np.sum(z * z, axis=0) - 0.5 * self.logdet - 0.5 * self.dim * _LOG2PI

    def conditional(self, given, target):
        """Coefficients of ``target | given``: mean ``c + x @ A.T`` and the
        Cholesky factor of the conditional covariance."""
        key = (tuple(np.asarray(given, dtype=int)), tuple(np.asarray(target, dtype=int)))
        hit = self._cond_cache.get(key)
        if hit is not None:
            return hit
        gp, tp = self._pos(given), self._pos(target)
        S_tt = self.cov[np.ix_(tp, tp)]
        if len(gp):
            S_gg = self.cov[np.ix_(gp, gp)]
            S_tg = self.cov[np.ix_(tp, gp)]
            A = cho_solve(cho_factor(S_gg, lower=True), S_tg.T).T
            c = self.mean[tp] - A @ self.mean[gp]
            C = S_tt - A @ S_tg.T
        else:
            A = np.zeros((len(tp), 0))
            c = self.mean[tp].copy()
            C = S_tt
        C = 0.5 * (C + C.T)
        if len(tp):
            jitter = 0.0
            while True:
                try:
                    chol = np.linalg.cholesky(C + jitter * np.eye(len(tp)))
                    break
                except np.linalg.LinAlgError:
                    jitter = max(jitter * 10, 1e-12 * max(1.0, np.trace(S_tt)))
        else:
            chol = np.zeros((0, 0))
        out = (A, c, C, chol)
        self._cond_cache[key] = out
        return out

    def __repr__(self):
        return f"GaussianLaw(coords={self.coords.tolist()})"


class PatternDensityModel:
    """Per-pattern Gaussian laws for ``L_r | R = r``.

    Attributes
    ----------
    laws : dict Pattern -> GaussianLaw
        Only patterns with at least one observed coordinate and at least one
        row carry a law.
    counts : dict Pattern -> int
    flags : list of str
        Conditioning notes (constant columns and the like).
    """

    def __init__(self, d: int, laws: dict, counts: dict, flags=()):
        self.d = d
        self.laws = dict(laws)
        self.counts = {as_pattern(p): int(c) for p, c in counts.items()}
        self.flags = list(flags)
        self._ext: dict = {}

    def count(self, r) -> int:
        return self.counts.get(as_pattern(r), 0)

    def law(self, r) -> GaussianLaw:
        r = as_pattern(r)
        if r not in self.laws:
            raise ImputationError(f"no fitted density for pattern {r}")
        return self.laws[r]

    def shifted(self, shift: float) -> "PatternDensityModel":
        """Copy with every mean moved by ``shift`` (a deliberate misfit)."""
        laws = {r: GaussianLaw(L.coords, L.mean + shift, L.cov) for r, L in self.laws.items()}
        return PatternDensityModel(self.d, laws, self.counts, self.flags + [f"means shifted by {shift:g}"])

    def extended_law(self, g: PatternGraph, s) -> GaussianLaw:
        """Full-data Gaussian law of ``L | R = s`` implied by the graph.

        Available when ``s`` is the complete pattern or every node on the
        way up to it has a single parent; otherwise the law is a mixture
        and an error is raised.
        """
        s = as_pattern(s)
        key = (id(g), s)
        if key in self._ext:
            return self._ext[key]
        full = np.arange(self.d)
        if s == g.source:
            law = self.law(s)
        else:
            pa = g.parents(s)
            if len(pa) != 1:
                raise ImputationError(
                    f"pattern {s} has {len(pa)} parents; its full-data law is not a single Gaussian")
            (t,) = pa
            up = self.extended_law(g, t)
            obs, mis = s.observed, s.missing
            A, c, C, _ = up.conditional(obs, mis)
            if len(obs) == 0:
                law = up
            else:
                own = self.law(s)
                mean = np.empty(self.d)
                cov = np.empty((self.d, self.d))
                mean[obs] = own.mean
                mean[mis] = c + A @ own.mean
                cov[np.ix_(obs, obs)] = own.cov
                cov[np.ix_(mis, obs)] = A @ own.cov
                cov[np.ix_(obs, mis)] = (A @ own.cov).T
                cov[np.ix_(mis, mis)] = C + A @ own.cov @ A.T
                law = GaussianLaw(full, mean, cov)
        self._ext[key] = law
        return law

    def __repr__(self):
        return f"PatternDensityModel(d={self.d}, patterns={[str(p) for p in self.laws]})"


def fit_pattern_densities(ds: IncompleteDataset, ridge_scale: float = RIDGE_SCALE) -> PatternDensityModel:
    """Gaussian maximum likelihood for every observed pattern.

    The MLE covariance receives a ridge ``eps * I`` with
    ``eps = ridge_scale * trace / |r|`` (``ridge_scale`` itself when the
    trace is zero).  Groups with fewer than ``|r| + 2`` rows raise
    :class:`DensityFitError`.
    """
    idx = ds.index
    laws, flags = {}, []
    for r in idx.patterns:
        rows = idx.rows(r)
        k = r.size
        if k == 0:
            continue
        if len(rows) < k + 2:
            raise DensityFitError(f"pattern {r} has {len(rows)} rows; at least {k + 2} needed for a {k}-dim Gaussian")
        X = ds.block(rows, r.observed)
        mu = X.mean(axis=0)
        Xc = X - mu
        S = Xc.T @ Xc / len(rows)
        tr = float(np.trace(S))
        eps = ridge_scale * tr / k if tr > 0 else ridge_scale
        const = np.flatnonzero(np.diag(S) <= 0)
        if len(const):
            flags.append(f"pattern {r}: constant column(s) {[int(r.observed[j]) for j in const]}; ridge applied")
        laws[r] = GaussianLaw(r.observed, mu, S + eps * np.eye(k))
    return PatternDensityModel(ds.d, laws, idx.counts(), flags)


# ---------------------------------------------------------------------------
# donor imputation


@dataclass
class CompletedDataset:
    """Fully imputed data.

    ``imputed`` marks cells that were filled in; ``chains[i]`` lists the
    donor patterns row ``i`` passed through.
    """

    values: np.ndarray
    imputed: np.ndarray
    chains: list
    column_names: list = field(default_factory=list)

    def provenance_lines(self) -> list[str]:
        out = ["row_id,col,source"]
        for i in range(self.values.shape[0]):
            for j in range(self.values.shape[1]):
                out.append(f"{i},{self.column_names[j] if self.column_names else j},"
                           f"{'imputed' if self.imputed[i, j] else 'observed'}")
        return out


def default_bounds(ds: IncompleteDataset):
    """Per-column observed minima and maxima, used as rejection bounds."""
    X = ds.values
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        hi = np.nanmax(X, axis=0) if ds.n else np.zeros(ds.d)
        lo = np.nanmin(X, axis=0) if ds.n else np.zeros(ds.d)
    return lo, hi


class DonorImputer:
    """Vectorized donor-chain completion on a fixed graph and density model.

    Parameters
    ----------
    g : PatternGraph
        Regular or acyclic.
    densities : PatternDensityModel
    tilt : dict Pattern -> array, optional
        Exponential tilt ``omega_r`` over the unobserved coordinates of ``r``.
    bounds : (lo, hi) arrays, optional
        Bounds used by the rejection step; required when ``tilt`` is set.
    """

    def __init__(self, g: PatternGraph, densities: PatternDensityModel, tilt=None, bounds=None,
                 max_proposals: int = MAX_PROPOSALS, min_accept_rate: float = MIN_ACCEPT_RATE):
        require_valid(g, "acyclic")
        self.g = g
        self.dens = densities
        self.src = g.source
        self.nodes = list(g.nodes)
        self.node_id = {p: i for i, p in enumerate(self.nodes)}
        self.depth = len(self.nodes)
        self.tilt = {}
        for r, w in (tilt or {}).items():
            r = as_pattern(r)
            w = np.asarray(w, dtype=float).ravel()
            if len(w) != r.d - r.size:
                raise ValueError(f"tilt for {r} must have length {r.d - r.size}")
            if np.any(w != 0):
                self.tilt[r] = w
        if self.tilt:
            if bounds is None:
                raise ValueError("tilted imputation needs finite bounds")
            lo, hi = (np.asarray(b, dtype=float) for b in bounds)
            for r, w in self.tilt.items():
                b = np.where(w > 0, hi[r.missing], lo[r.missing])
                if not np.all(np.isfinite(b)):
                    raise ValueError(f"non-finite rejection bound for pattern {r}")
            self.lo, self.hi = lo, hi
        self.max_proposals = max_proposals
        self.min_accept_rate = min_accept_rate
        self._donors: dict = {}

    # -- per-pattern donor tables ---------------------------------------

    def _donor_table(self, r: Pattern):
        tab = self._donors.get(r)
        if tab is not None:
            return tab
        rows = []
        for s in self.g.sorted_parents(r):
            n_s = self.dens.count(s)
            covers = s == self.src or s.covers(r)
            if n_s == 0:
                rows.append((s, -np.inf, None, covers))
                continue
            if covers:
                law = self.dens.law(s) if s.size else None
            else:
                law = self.dens.extended_law(self.g, s)
            rows.append((s, math.log(n_s), law, covers))
        if all(np.isneginf(lw) for _, lw, _, _ in rows):
            raise ImputationError(f"every parent of {r} has zero rows; cannot impute")
        tab = rows
        self._donors[r] = tab
        return tab

    def donor_log_weights(self, r, X) -> np.ndarray:
        """Unnormalized log donor weights, shape ``(n, |PA_r|)``."""
        r = as_pattern(r)
        tab = self._donor_table(r)
        X = np.atleast_2d(X)
        xr = X[:, r.observed]
        out = np.empty((X.shape[0], len(tab)))
        for j, (s, lw, law, _) in enumerate(tab):
            if np.isneginf(lw):
                out[:, j] = -np.inf
            elif r.size == 0:
                out[:, j] = lw
            else:
                out[:, j] = lw + law.marginal(r.observed).logpdf(xr)
        return out

    def donor_probabilities(self, r, X) -> np.ndarray:
        lw = self.donor_log_weights(r, X)
        return np.exp(lw - logsumexp(lw, axis=1, keepdims=True))

    def _closed_chain(self, s: Pattern) -> list[int]:
        out = [self.node_id[s]]
        while s != self.src:
            (s,) = self.g.parents(s)
            out.append(self.node_id[s])
        return out

    # -- completion ------------------------------------------------------

    def _accept_prob(self, r: Pattern, Y: np.ndarray) -> np.ndarray:
        w = self.tilt[r]
        mis = r.missing
        b = np.where(w > 0, self.hi[mis], self.lo[mis])
        ex = (Y[:, mis] - b) @ w
        return np.exp(np.minimum(ex, 0.0))

    def _complete(self, X: np.ndarray, r: Pattern, rng: np.random.Generator):
        m = X.shape[0]
        chains = np.full((m, self.depth), -1, dtype=np.int64)
        if r == self.src or m == 0:
            return X, chains
        tab = self._donor_table(r)
        tilted = r in self.tilt
        out = np.empty_like(X)
        pending = np.arange(m)
        proposals = 0
        while pending.size:
            Y = X[pending].copy()
            C = np.full((len(pending), self.depth), -1, dtype=np.int64)
            lw = self.donor_log_weights(r, Y)
            probs = np.exp(lw - logsumexp(lw, axis=1, keepdims=True))
            u = rng.random(len(pending))
            pick = (u[:, None] > np.cumsum(probs, axis=1)).sum(axis=1)
            pick = np.minimum(pick, len(tab) - 1)
            # a NaN-free guard: never pick a zero-weight donor
            for j, (s, lwj, law, covers) in enumerate(tab):
                sel = np.flatnonzero(pick == j)
                if not sel.size:
                    continue
                if np.isneginf(lwj):
                    raise ImputationError(f"donor {s} with zero rows was selected for {r}")
                Ys = Y[sel]
                if covers:
                    target = np.setdiff1d(s.observed, r.observed) if s != self.src else r.missing
                    nxt = s
                    base = law if law is not None else self.dens.law(s)
                else:
                    target = r.missing
                    nxt = self.src
                    base = law
                if target.size:
                    A, c, _, L = base.conditional(r.observed, target)
                    z = rng.standard_normal((len(sel), target.size))
                    Ys[:, target] = c + Ys[:, r.observed] @ A.T + z @ L.T
                if covers:
                    Ys, sub = self._complete(Ys, nxt, rng)
                    C[sel, 0] = self.node_id[s]
                    C[sel, 1:] = sub[:, : self.depth - 1]
                else:
                    cc = self._closed_chain(s)
                    C[sel, : len(cc)] = cc
                Y[sel] = Ys
            if tilted:
                proposals += 1
                acc = rng.random(len(pending)) <= self._accept_prob(r, Y)
                if proposals >= self.max_proposals and not acc.any():
                    raise TiltAcceptanceError(
                        f"pattern {r}: {pending.size} row(s) rejected {proposals} proposals in a row "
                        f"(acceptance below {self.min_accept_rate:g})")
            else:
                acc = np.ones(len(pending), dtype=bool)
            out[pending[acc]] = Y[acc]
            chains[pending[acc]] = C[acc]
            pending = pending[~acc]
        return out, chains

    def complete(self, X, patterns, rng: np.random.Generator):
        """Complete rows ``X`` (NaN where missing) whose patterns are given.

        Returns the completed matrix and an ``(n, depth)`` array of donor
        node ids per row (``-1`` padded).
        """
        X = np.array(X, dtype=float, copy=True)
        pats = [as_pattern(p) for p in patterns]
        out = X
        chains = np.full((X.shape[0], self.depth), -1, dtype=np.int64)
        groups: dict = {}
        for i, p in enumerate(pats):
            groups.setdefault(p, []).append(i)
        for p in sorted(groups, key=canonical_key):
            if p not in self.node_id:
                raise ImputationError(f"pattern {p} is not a node of the graph")
            rows = np.asarray(groups[p])
            Yp, Cp = self._complete(X[rows], p, rng)
            out[rows] = Yp
            chains[rows] = Cp
        return out, chains

    def complete_pattern(self, X, r, rng: np.random.Generator):
        """Complete rows that all share pattern ``r``."""
        return self._complete(np.array(X, dtype=float, copy=True), as_pattern(r), rng)

    def chain_patterns(self, row_chain) -> tuple[Pattern, ...]:
        return tuple(self.nodes[k] for k in row_chain if k >= 0)


def _row_patterns(ds: IncompleteDataset) -> list[Pattern]:
    idx = ds.index
    return [idx.patterns[c] for c in idx.codes]


def impute_dataset(ds: IncompleteDataset, g: PatternGraph, densities: PatternDensityModel,
                   rng, tilt=None, bounds=None) -> CompletedDataset:
    """Complete every row of ``ds`` through the donor chain.

    With ``tilt`` set, each tilted level accepts a completed proposal with
    probability ``exp(omega_r . (L_rbar - B_rbar))`` where ``B`` is the
    upper bound for positive ``omega`` and the lower bound for negative
    ``omega``; rejected rows are re-proposed from that level.  Bounds
    default to observed column extremes, with a warning.
    """
    rng = np.random.default_rng(rng)
    if tilt and bounds is None:
        warnings.warn("no rejection bound given; using observed column extremes, "
                      "which is only approximate for unbounded data", UserWarning, stacklevel=2)
        bounds = default_bounds(ds)
    imp = DonorImputer(g, densities, tilt=tilt, bounds=bounds)
    vals, chains = imp.complete(ds.values, _row_patterns(ds), rng)
    return CompletedDataset(vals, ~ds.mask, [imp.chain_patterns(c) for c in chains], list(ds.column_names))


@dataclass
class RAResult:
    estimate: float
    replicates: np.ndarray

    @property
    def n_imputations(self) -> int:
        return len(self.replicates)

    @property
    def mc_se(self) -> float:
        """Monte Carlo standard error of the average over imputations."""
        k = len(self.replicates)
        return float(np.std(self.replicates, ddof=1) / np.sqrt(k)) if k > 1 else float("nan")


def ra_estimate(ds: IncompleteDataset, g: PatternGraph, densities: PatternDensityModel, theta,
                N: int = 20, rng=None, tilt=None, bounds=None) -> RAResult:
    """Multiple-imputation regression adjustment.

    Completes the data ``N`` times and averages the plug-in means of
    ``theta`` over the completed datasets.
    """
    if N < 1:
        raise ValueError("N must be at least 1")
    theta = as_functional(theta, ds.d)
    rng = np.random.default_rng(rng)
    if tilt and bounds is None:
        warnings.warn("no rejection bound given; using observed column extremes, "
                      "which is only approximate for unbounded data", UserWarning, stacklevel=2)
        bounds = default_bounds(ds)
    if ds.n == 0:
        raise ValueError("empty dataset")
    imp = DonorImputer(g, densities, tilt=tilt, bounds=bounds)
    pats = _row_patterns(ds)
    X = np.tile(ds.values, (N, 1))
    vals, _ = imp.complete(X, pats * N, rng)
    reps = theta(vals).reshape(N, ds.n).mean(axis=1)
    return RAResult(float(reps.mean()), reps)


# ---------------------------------------------------------------------------
# tree graphs: closed form


def _tree_parent(g: PatternGraph, r: Pattern) -> Pattern:
    pa = g.parents(r)
    if len(pa) != 1:
        raise GraphError(f"not a tree graph: node {r} has {len(pa)} parents")
    (t,) = pa
    return t


def tree_regression(g: PatternGraph, densities: PatternDensityModel, theta) -> dict:
    """Linear regression functions ``m(l_r, r) = alpha_r + gamma_r . l_r``.

    Computed top-down by nested Gaussian conditional expectations.  Returns
    ``{r: (alpha_r, gamma_r)}`` with ``gamma_r`` indexed by the observed
    coordinates of ``r``; the value is ``None`` for nodes whose chain runs
    through a pattern without a fitted density.
    """
    require_valid(g, "acyclic")
    for r in g.nodes:
        if r != g.source:
            _tree_parent(g, r)
    theta = as_functional(theta, g.d)
    if not getattr(theta, "is_linear", False):
        raise ValueError("the tree closed form needs a linear functional")
    a = theta.a
    out = {g.source: (theta.offset, a.copy())}
    for r in g.topological_order():
        if r == g.source:
            continue
        t = _tree_parent(g, r)
        if out.get(t) is None:
            out[r] = None
            continue
        try:
            out[r] = _tree_step(g, densities, theta, r, t, out[t])
        except ImputationError:
            # no density for a pattern without rows; only fails if this node is used
            out[r] = None
    return out


def _tree_step(g, densities, theta, r, t, parent_coef):
    a = theta.a
    if t.covers(r):
        alpha_t, gamma_t = parent_coef
        target = np.setdiff1d(t.observed, r.observed)
        pos_t = {c: i for i, c in enumerate(t.observed)}
        g_r = gamma_t[[pos_t[c] for c in r.observed]]
        g_T = gamma_t[[pos_t[c] for c in target]]
        if not target.size:
            return alpha_t, g_r
        A, c, _, _ = densities.law(t).conditional(r.observed, target)
        return alpha_t + float(g_T @ c), g_r + A.T @ g_T
    A, c, _, _ = densities.extended_law(g, t).conditional(r.observed, r.missing)
    a_r, a_m = a[r.observed], a[r.missing]
    return theta.offset + float(a_m @ c), a_r + A.T @ a_m


def tree_regression_for(reg: dict, r: Pattern):
    """Coefficients of node ``r``; raises when its chain lacks fitted densities."""
    coef = reg.get(r)
    if coef is None:
        raise ImputationError(f"regression for pattern {r} needs a density of an ancestor with no rows")
    return coef


def tree_closed_form_estimate(ds: IncompleteDataset, g: PatternGraph, densities: PatternDensityModel,
                              theta) -> float:
    """Regression adjustment without Monte Carlo on a tree graph."""
    reg = tree_regression(g, densities, theta)
    idx = ds.index
    total = 0.0
    for r in idx.patterns:
        if r not in reg:
            raise ImputationError(f"pattern {r} is not a node of the graph")
        rows = idx.rows(r)
        alpha, gamma = tree_regression_for(reg, r)
        total += alpha * len(rows) + float(np.sum(ds.block(rows, r.observed) @ gamma))
    return total / ds.n
