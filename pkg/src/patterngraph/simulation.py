"""Data generation under pattern-graph mechanisms and brute-force oracles.

Three pieces live here:

* :class:`MechanismSpec` and :func:`simulate_dataset`, which draw the full
  data from a Gaussian (or Gaussian-mixture) law and the response pattern
  from the propensity implied by the true selection odds;
* the robustness scenarios ``S1``/``S2``/``S3`` and
  :func:`robustness_experiment`;
* the discrete oracle (:class:`OracleJoint`, :func:`oracle_check`) that
  enumerates binary full-data tables to check the identification results
  exactly.
"""

from __future__ import annotations

import configparser
import itertools
from dataclasses import dataclass, field
from pathlib import Path as FilePath

import numpy as np

from .data import IncompleteDataset
from .functionals import Indicator, Linear, as_functional
from .graph import (GraphError, PatternGraph, ACYCLIC, builtin_graph, enumerate_paths, equivalence_move,
                    load_graph, require_valid)
from .imputation import fit_pattern_densities, ra_estimate, tree_closed_form_estimate
from .odds import OddsModel, fit_odds_model
from .patterns import Pattern, as_pattern
from .propensity import recursive_scores
from .semiparametric import FunctionSurface, TreeSurface, aipw_estimate


class OracleError(ValueError):
    pass


# ---------------------------------------------------------------------------
# continuous mechanisms


@dataclass
class GaussianMixtureLaw:
    """Full-data law ``sum_k w_k N(means_k, covs_k)``; one component is a
    plain Gaussian."""

    weights: np.ndarray
    means: np.ndarray
    covs: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float).ravel()
        self.means = np.atleast_2d(np.asarray(self.means, dtype=float))
        covs = np.asarray(self.covs, dtype=float)
        if covs.ndim == 2:
            covs = np.repeat(covs[None], len(self.weights), axis=0)
        self.covs = covs
        if not np.isclose(self.weights.sum(), 1.0) or np.any(self.weights < 0):
            raise ValueError("mixture weights must be non-negative and sum to 1")
        if self.means.shape != (len(self.weights), self.covs.shape[1]):
            raise ValueError("mixture means have the wrong shape")

    @classmethod
    def gaussian(cls, mean, cov) -> "GaussianMixtureLaw":
        return cls(np.ones(1), np.atleast_2d(mean), np.asarray(cov, dtype=float)[None])

    @property
    def d(self) -> int:
        return self.means.shape[1]

    @property
    def mean(self) -> np.ndarray:
        return self.weights @ self.means

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        comp = rng.choice(len(self.weights), size=n, p=self.weights)
        z = rng.standard_normal((n, self.d))
        out = np.empty((n, self.d))
        for k in range(len(self.weights)):
            sel = comp == k
            L = np.linalg.cholesky(self.covs[k])
            out[sel] = self.means[k] + z[sel] @ L.T
        return out

    def indicator_mean(self, j: int, c: float) -> float:
        from scipy.stats import norm
        return float(sum(w * norm.cdf(c, m[j], np.sqrt(S[j, j]))
                         for w, m, S in zip(self.weights, self.means, self.covs)))


@dataclass
class DiscreteLaw:
    """Full-data law on a finite support: row ``k`` of ``support`` has
    probability ``probs[k]``."""

    support: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        self.support = np.atleast_2d(np.asarray(self.support, dtype=float))
        self.probs = np.asarray(self.probs, dtype=float).ravel()
        if len(self.probs) != len(self.support):
            raise ValueError("one probability per support point is required")
        if np.any(self.probs < 0) or abs(self.probs.sum() - 1.0) > 1e-12:
            raise ValueError("probabilities must be non-negative and sum to 1")

    @classmethod
    def binary(cls, probs) -> "DiscreteLaw":
        probs = np.asarray(probs, dtype=float)
        d = int(np.log2(len(probs)))
        return cls(_grid(d), probs)

    @property
    def d(self) -> int:
        return self.support.shape[1]

    @property
    def mean(self) -> np.ndarray:
        return self.probs @ self.support

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return self.support[rng.choice(len(self.probs), size=n, p=self.probs)]

    def indicator_mean(self, j: int, c: float) -> float:
        return float(self.probs @ (self.support[:, j] <= c))


@dataclass
class MechanismSpec:
    """A complete data-generating mechanism.

    Attributes
    ----------
    graph : PatternGraph
    law : GaussianMixtureLaw or DiscreteLaw
    odds : OddsModel
        True selection odds; the pattern is drawn from the propensity they
        imply at the full data.
    theta : functional
    """

    graph: PatternGraph
    law: GaussianMixtureLaw
    odds: OddsModel
    theta: object = None
    name: str = ""

    def __post_init__(self):
        self.theta = as_functional(self.theta, self.graph.d)
        require_valid(self.graph, "regular")

    @property
    def theta0(self) -> float:
        th = self.theta
        if isinstance(th, Linear):
            return float(th.a @ self.law.mean + th.offset)
        if isinstance(th, Indicator):
            return self.law.indicator_mean(th.column, th.threshold)
        raise TypeError("unsupported functional")


@dataclass
class HiddenTruth:
    """Full data and patterns behind a simulated dataset; never passed to estimators."""

    full: np.ndarray
    patterns: list
    theta0: float


def _probe(spec: MechanismSpec, rng: np.random.Generator) -> None:
    X = spec.law.sample(256, rng)
    sc = recursive_scores(spec.graph, spec.odds, X)
    tot = sum(sc.pattern_probs.values())
    if not np.allclose(tot, 1.0, atol=1e-10):
        raise AssertionError("pattern probabilities do not sum to one")


def simulate_dataset(spec: MechanismSpec, n: int, seed) -> tuple[IncompleteDataset, HiddenTruth]:
    """Draw ``n`` rows: ``L`` from the law, then ``R`` from the propensities
    implied by the true odds; cells outside ``R`` are masked."""
    rng = np.random.default_rng(seed)
    _probe(spec, np.random.default_rng(np.random.SeedSequence([0 if seed is None else int(seed), 99])))
    g = spec.graph
    X = spec.law.sample(n, rng)
    sc = recursive_scores(g, spec.odds, X)
    P = np.column_stack([sc.q[r] * sc.pi for r in g.nodes])
    u = rng.random(n)
    k = (u[:, None] > np.cumsum(P, axis=1)).sum(axis=1)
    k = np.minimum(k, len(g.nodes) - 1)
    masks = np.array([r.mask for r in g.nodes])
    M = masks[k]
    ds = IncompleteDataset(np.where(M, X, np.nan), M)
    return ds, HiddenTruth(X, [g.nodes[i] for i in k], spec.theta0)


def pmm_tree_mechanism(g: PatternGraph, weights: dict, base_mean, cov, pattern_means: dict, theta,
                       name: str = "") -> MechanismSpec:
    """Mechanism whose pattern laws are Gaussians with a common covariance.

    ``L | R=1`` is ``N(base_mean, cov)``; for a child ``r`` of ``t`` the
    observed block ``L_r | R=r`` has mean ``pattern_means[r]`` and the
    extrapolation law is borrowed from ``t``.  Every pattern law is then
    Gaussian with covariance ``cov`` and the true log-odds are exactly
    linear, so both the odds and the density models are correctly
    specified.
    """
    require_valid(g, "regular")
    if not g.is_tree():
        raise GraphError("pmm_tree_mechanism needs a tree graph")
    cov = np.asarray(cov, dtype=float)
    means = {g.source: np.asarray(base_mean, dtype=float)}
    coefs = {}
    w = {as_pattern(k): float(v) for k, v in weights.items()}
    if set(w) != set(g.nodes) or not np.isclose(sum(w.values()), 1.0):
        raise ValueError("weights must cover every node and sum to 1")
    for r in g.topological_order():
        if r == g.source:
            continue
        (t,) = g.parents(r)
        mt = means[t]
        o, m_ = r.observed, r.missing
        a = np.asarray(pattern_means.get(r, mt[o]), dtype=float).reshape(len(o))
        mr = mt.copy()
        if len(o):
            Soo = cov[np.ix_(o, o)]
            B = np.linalg.solve(Soo, cov[np.ix_(o, m_)]).T
            mr[o] = a
            mr[m_] = mt[m_] + B @ (a - mt[o])
            Si = np.linalg.inv(Soo)
            slope = Si @ (a - mt[o])
            icpt = np.log(w[r] / w[t]) - 0.5 * (a @ Si @ a - mt[o] @ Si @ mt[o])
            coefs[r] = np.concatenate([[icpt], slope])
        else:
            coefs[r] = np.array([np.log(w[r] / w[t])])
        means[r] = mr
    order = list(g.nodes)
    law = GaussianMixtureLaw(np.array([w[r] for r in order]), np.array([means[r] for r in order]), cov)
    return MechanismSpec(g, law, OddsModel(g.d, coefs), theta, name)


def s1_graph() -> PatternGraph:
    """Two-level tree on three variables used by the robustness scenarios."""
    return PatternGraph.from_edges(
        ["111", "110", "011", "100", "001"],
        [("111", "110"), ("111", "011"), ("110", "100"), ("011", "001")])


S1_COV = np.array([[1.0, 0.5, 0.3], [0.5, 1.0, 0.5], [0.3, 0.5, 1.0]])


def scenario_mechanism(name: str = "S1") -> MechanismSpec:
    """Data-generating mechanism shared by scenarios S1, S2 and S3.

    The scenarios differ only in which model block is fitted wrongly; the
    data are identical.
    """
    if name not in ("S1", "S2", "S3"):
        raise ValueError(f"unknown scenario {name!r}")
    g = s1_graph()
    weights = {"111": 0.4, "110": 0.2, "011": 0.15, "100": 0.15, "001": 0.1}
    pm = {Pattern.parse("110"): [0.6, 0.5], Pattern.parse("011"): [-0.5, 0.4],
          Pattern.parse("100"): [1.0], Pattern.parse("001"): [-0.8]}
    return pmm_tree_mechanism(g, weights, np.zeros(3), S1_COV, pm, Linear([1.0, 1.0, 1.0]), name)


# Fixed misspecifications: S2 fits the odds on squared covariates, S3 moves
# every fitted Gaussian mean by a constant.
S2_TRANSFORM = "square"
S3_MEAN_SHIFT = 0.5


def scenario_estimates(ds: IncompleteDataset, scenario: str, theta, N: int = 20, seed: int = 0,
                       ra: str = "mc") -> dict:
    """IPW, RA and AIPW point estimates under a scenario's model blocks.

    ``ra="closed"`` replaces the Monte Carlo regression adjustment by its
    tree closed form (the ``N -> infinity`` limit).
    """
    g = s1_graph()
    transform = S2_TRANSFORM if scenario == "S2" else None
    odds = fit_odds_model(ds, g, transform=transform)
    dens = fit_pattern_densities(ds)
    if scenario == "S3":
        dens = dens.shifted(S3_MEAN_SHIFT)
    full = ds.mask.all(axis=1)
    sc = recursive_scores(g, odds, ds.values[full])
    ipw = float(np.sum(theta(ds.values[full]) / sc.pi) / ds.n)
    if ra == "closed":
        ra_val = tree_closed_form_estimate(ds, g, dens, theta)
    else:
        ra_val = ra_estimate(ds, g, dens, theta, N=N, rng=np.random.default_rng(seed)).estimate
    aipw = aipw_estimate(ds, g, odds, TreeSurface(g, dens, theta), theta).estimate
    return {"ipw": ipw, "ra": ra_val, "aipw": aipw}


@dataclass
class RobustnessSummary:
    scenario: str
    n: int
    theta0: float
    estimates: dict

    def bias(self, m) -> float:
        return float(np.mean(self.estimates[m]) - self.theta0)

    def sd(self, m) -> float:
        return float(np.std(self.estimates[m], ddof=1))

    def se_of_bias(self, m) -> float:
        return float(self.sd(m) / np.sqrt(len(self.estimates[m])))

    def rmse(self, m) -> float:
        return float(np.sqrt(np.mean((np.asarray(self.estimates[m]) - self.theta0) ** 2)))

    def table(self) -> str:
        lines = ["estimator,mean_bias,se_of_bias,rmse"]
        for m in self.estimates:
            lines.append(f"{m},{self.bias(m)!r},{self.se_of_bias(m)!r},{self.rmse(m)!r}")
        return "\n".join(lines) + "\n"


def robustness_experiment(scenario: str, n: int, reps: int, seed: int = 0, N: int = 20,
                          ra: str = "mc") -> RobustnessSummary:
    """Repeat simulate-and-estimate ``reps`` times; rep ``k`` uses
    ``SeedSequence([seed, k])``."""
    spec = scenario_mechanism(scenario)
    est = {"ipw": [], "ra": [], "aipw": []}
    for k in range(reps):
        ss = np.random.SeedSequence([seed, k])
        data_seed, imp_seed = ss.generate_state(2)
        ds, _ = simulate_dataset(spec, n, int(data_seed))
        vals = scenario_estimates(ds, scenario, spec.theta, N=N, seed=int(imp_seed), ra=ra)
        for m, v in vals.items():
            est[m].append(v)
    return RobustnessSummary(scenario, n, spec.theta0, {m: np.array(v) for m, v in est.items()})


# ---------------------------------------------------------------------------
# discrete oracle


def _grid(d: int) -> np.ndarray:
    return np.array(list(itertools.product([0, 1], repeat=d)), dtype=float)


class OracleJoint:
    """Finite table ``p(l, r)`` over binary ``l`` in ``{0,1}^d``.

    ``table[r]`` is an array over the rows of :attr:`grid`.
    """

    def __init__(self, g: PatternGraph, table: dict):
        self.g = g
        self.d = g.d
        if self.d > 4:
            raise OracleError("the discrete oracle is limited to d <= 4")
        self.grid = _grid(self.d)
        self.table = {as_pattern(r): np.asarray(v, dtype=float) for r, v in table.items()}
        for r in g.nodes:
            self.table.setdefault(r, np.zeros(len(self.grid)))
        allv = np.concatenate(list(self.table.values()))
        if np.any(allv < -1e-15):
            raise OracleError("negative probability in table")
        if abs(allv.sum() - 1.0) > 1e-12:
            raise OracleError(f"table sums to {allv.sum()!r}, not 1")

    # helpers on the grid
    def _gid(self, r: Pattern) -> np.ndarray:
        o = r.observed
        if not len(o):
            return np.zeros(len(self.grid), dtype=int)
        return (self.grid[:, o] @ (2 ** np.arange(len(o))[::-1])).astype(int)

    def marg(self, r: Pattern, v: np.ndarray) -> np.ndarray:
        """Sum ``v`` over the coordinates unobserved under ``r``, broadcast back."""
        gid = self._gid(r)
        return np.bincount(gid, weights=v, minlength=2 ** r.size)[gid]

    @property
    def full_law(self) -> np.ndarray:
        return sum(self.table.values())

    def observed(self, r) -> np.ndarray:
        """``p(l_r, r)`` broadcast over the grid."""
        r = as_pattern(r)
        return self.marg(r, self.table[r])

    def parents_joint(self, r) -> np.ndarray:
        return sum(self.table[s] for s in self.g.parents(r))

    def max_diff(self, other: "OracleJoint") -> float:
        return max(float(np.max(np.abs(self.table[r] - other.table.get(r, 0.0)))) for r in self.g.nodes)

    def total_variation(self, other: "OracleJoint") -> float:
        return 0.5 * sum(float(np.sum(np.abs(self.table[r] - other.table.get(r, 0.0)))) for r in self.g.nodes)

    def pi(self) -> np.ndarray:
        return self.table[self.g.source] / self.full_law

    def mean(self, theta) -> float:
        th = theta(self.grid)
        return float(th @ self.full_law)

    # exact regression functions for the EIF
    def regression(self, s, theta) -> np.ndarray:
        """``m(l_s, s) = E(theta(L) | L_s = l_s, R = s)`` on the grid."""
        s = as_pattern(s)
        th = theta(self.grid)
        den = self.marg(s, self.table[s])
        return np.divide(self.marg(s, th * self.table[s]), den, out=np.zeros_like(den), where=den > 0)

    def mu(self, path, theta, odds_grid: dict) -> np.ndarray:
        """``mu_{path,s}`` for the last node ``s`` of ``path``:
        ``E(theta I(R=1) prod_{tau before s} O_tau | L_s) / P(R in PA_s | L_s)``."""
        s = path[-1]
        th = theta(self.grid)
        prod = np.ones(len(self.grid))
        for tau in path[1:-1]:
            prod = prod * odds_grid[tau]
        num = self.marg(s, th * self.table[self.g.source] * prod)
        den = self.marg(s, self.parents_joint(s))
        return np.divide(num, den, out=np.zeros_like(den), where=den > 0)

    def observed_odds(self) -> dict:
        """``O_r(l_r) = p(l_r, r) / p(l_r, R in PA_r)`` on the grid (regular graphs)."""
        out = {}
        for r in self.g.nodes:
            if r == self.g.source:
                continue
            den = self.marg(r, self.parents_joint(r))
            num = self.observed(r)
            out[r] = np.divide(num, den, out=np.zeros_like(den), where=den > 0)
        return out

    def surface(self, theta) -> FunctionSurface:
        """Exact regression surface (and per-path split) as lookups on the grid."""
        odds = self.observed_odds()
        codes = 2 ** np.arange(self.d)[::-1]

        def lookup(vals):
            table = np.zeros(2 ** self.d)
            table[(self.grid @ codes).astype(int)] = vals

            def f(X):
                Z = np.nan_to_num(np.asarray(X, dtype=float), nan=0.0)
                return table[(Z @ codes).astype(int)]
            return f

        mfun, mufun = {}, {}
        for s in self.g.nodes:
            if s == self.g.source:
                mfun[s] = lambda X, th=theta: th(np.asarray(X, dtype=float))
                continue
            mfun[s] = lookup(self.regression(s, theta))
            mufun[s] = {p: lookup(self.mu(p, theta, odds)) for p in enumerate_paths(self.g, s)}
        return FunctionSurface(self.g, mfun, mufun)


def random_full_law(d: int, rng: np.random.Generator) -> np.ndarray:
    p = rng.uniform(0.2, 1.0, size=2 ** d)
    return p / p.sum()


def odds_grid_from_coefs(g: PatternGraph, odds: OddsModel, grid: np.ndarray) -> dict:
    return {r: odds.odds(r, grid) for r in g.nodes if r != g.source}


def joint_from_odds(g: PatternGraph, full_law: np.ndarray, odds: OddsModel) -> OracleJoint:
    """``p(l, r) = p(l) P(R=r | l)`` with the propensity from the odds."""
    grid = _grid(g.d)
    sc = recursive_scores(g, odds, grid)
    return OracleJoint(g, {r: full_law * sc.q[r] * sc.pi for r in g.nodes})


def pmm_identify(g: PatternGraph, observed: dict, tilt: dict | None = None) -> OracleJoint:
    """Full joint implied by the observed-data law under the PMM factorization.

    ``observed[r]`` is ``p(l_r, r)`` broadcast over the grid.  Nodes are
    processed parents first; the extrapolation law of ``r`` is that of its
    parents' pooled joint, optionally tilted by ``exp(omega_r . l_rbar)``
    and renormalized.  Works for any acyclic graph.
    """
    require_valid(g, ACYCLIC)
    grid = _grid(g.d)
    helper = OracleJoint.__new__(OracleJoint)
    helper.d, helper.grid, helper.g = g.d, grid, g
    table = {}
    for r in g.topological_order():
        obs = np.asarray(observed[r], dtype=float)
        if r == g.source:
            table[r] = obs
            continue
        pa = sum(table[s] for s in g.parents(r))
        if tilt and r in tilt:
            pa = pa * np.exp(grid[:, r.missing] @ np.asarray(tilt[r], dtype=float))
        den = helper.marg(r, pa)
        cond = np.divide(pa, den, out=np.zeros_like(pa), where=den > 0)
        if np.any((den <= 0) & (obs > 0)):
            raise OracleError(f"positivity fails for pattern {r}")
        table[r] = obs * cond
    return OracleJoint(g, table)


def observed_part(j: OracleJoint) -> dict:
    return {r: j.observed(r) for r in j.g.nodes}


def random_odds(g: PatternGraph, rng: np.random.Generator, scale: float = 0.8) -> OddsModel:
    return OddsModel(g.d, {r: rng.normal(0, scale, 1 + r.size) for r in g.nodes if r != g.source})


@dataclass
class OracleReport:
    """Maximum absolute deviations for the four identification checks."""

    pi_reconstruction: float
    pmm_factorization: float
    equivalence: dict = field(default_factory=dict)
    tilt: float = 0.0
    tol: float = 1e-10

    @property
    def equivalence_max(self) -> float:
        return max(self.equivalence.values(), default=0.0)

    def passed(self) -> dict:
        return {"a": self.pi_reconstruction <= self.tol, "b": self.pmm_factorization <= self.tol,
                "c": self.equivalence_max <= self.tol, "d": self.tilt <= self.tol}

    @property
    def ok(self) -> bool:
        return all(self.passed().values())


def pmm_deviation(j: OracleJoint) -> float:
    """Largest violation of ``p(l_rbar | l_r, r) = p(l_rbar | l_r, R in PA_r)``
    on cells where ``p(l_r, r) > 0``."""
    worst = 0.0
    for r in j.g.nodes:
        if r == j.g.source:
            continue
        obs = j.observed(r)
        lhs = np.divide(j.table[r], obs, out=np.zeros_like(obs), where=obs > 0)
        pa = j.parents_joint(r)
        den = j.marg(r, pa)
        rhs = np.divide(pa, den, out=np.zeros_like(den), where=den > 0)
        worst = max(worst, float(np.max(np.abs(np.where(obs > 0, lhs - rhs, 0.0)))))
    return worst


def equivalent_graphs(g: PatternGraph) -> list:
    """All graphs one equivalence move away from ``g``."""
    out = []
    for r in g.nodes:
        for s in g.nodes:
            if s == r or s in g.parents(r) or r == g.source:
                continue
            try:
                out.append(((s, r), equivalence_move(g, s, r)))
            except GraphError:
                continue
    return out


def oracle_check(g: PatternGraph, odds: OddsModel, full_law: np.ndarray | None = None,
                 tilt: dict | None = None, seed: int = 0, tol: float = 1e-10,
                 extra_pairs=()) -> OracleReport:
    """Run the identification checks on a binary instance.

    (a) the propensity rebuilt from the observable odds by the recursion
    equals the true ``P(R=1 | l)``; (b) the odds-generated joint satisfies
    the PMM factorization; (c) graphs one equivalence move away (plus any
    ``extra_pairs`` of equivalent graphs) identify the same joint from the
    same observed data; (d) tilting the odds by ``exp(omega . l_rbar)``
    gives the same joint as tilting the PMM extrapolation densities.
    """
    require_valid(g, "regular")
    rng = np.random.default_rng(seed)
    if full_law is None:
        full_law = random_full_law(g.d, rng)
    J = joint_from_odds(g, full_law, odds)
    if np.any(J.full_law <= 0):
        raise OracleError("positivity violated")
    for r in g.nodes:
        if np.any(J.observed(r) <= 0):
            raise OracleError(f"positivity violated for pattern {r}")
    # (a)
    obs_odds = J.observed_odds()
    grid = J.grid
    q = {g.source: np.ones(len(grid))}
    for r in g.sweep_order():
        q[r] = obs_odds[r] * sum(q[s] for s in g.parents(r))
    pi_hat = 1.0 / sum(q.values())
    dev_a = float(np.max(np.abs(pi_hat - J.pi())))
    # (b)
    dev_b = pmm_deviation(J)
    # (c)
    obs = observed_part(J)
    base = pmm_identify(g, obs)
    eq = {}
    for (s, r), g2 in equivalent_graphs(g):
        eq[f"{s}->{r}"] = _graph_pair_dev(base, pmm_identify(g2, obs))
    for label, ga, gb in extra_pairs:
        eq[label] = check_equivalent_pair(ga, gb, seed=seed)
    # (d)
    if tilt is None:
        tilt = {r: rng.normal(0, 0.5, g.d - r.size) for r in g.nodes if r != g.source}
    Jt = joint_from_odds(g, full_law, odds.with_tilt(tilt))
    Jp = pmm_identify(g, observed_part(Jt), tilt=tilt)
    dev_d = Jt.max_diff(Jp)
    return OracleReport(dev_a, dev_b, eq, dev_d, tol)


def _graph_pair_dev(a: OracleJoint, b: OracleJoint) -> float:
    return max(float(np.max(np.abs(a.table[r] - b.table[r]))) for r in a.g.nodes)


def random_observed_law(g: PatternGraph, rng: np.random.Generator) -> dict:
    """Random strictly positive observed-data law ``p(l_r, r)``."""
    grid = _grid(g.d)
    helper = OracleJoint.__new__(OracleJoint)
    helper.d, helper.grid, helper.g = g.d, grid, g
    w = rng.uniform(0.5, 1.5, len(g.nodes))
    w = w / w.sum()
    out = {}
    for k, r in enumerate(g.nodes):
        cells = rng.uniform(0.2, 1.0, 2 ** r.size)
        cells = cells / cells.sum() * w[k]
        gid = helper._gid(r)
        # spread each observed cell evenly; only the marginal matters
        out[r] = cells[gid] / (2 ** (g.d - r.size))
        out[r] = helper.marg(r, out[r])
    return out


def check_equivalent_pair(ga: PatternGraph, gb: PatternGraph, seed: int = 0) -> float:
    """Identify the full law from one random observed law under two graphs
    on the same node set; return the largest cell difference."""
    if set(ga.nodes) != set(gb.nodes):
        raise ValueError("graphs must share their node set")
    obs = random_observed_law(ga, np.random.default_rng(seed))
    return _graph_pair_dev(pmm_identify(ga, obs), pmm_identify(gb, obs))


def pmm_violating_joint(g: PatternGraph, odds: OddsModel, seed: int = 0, size: float = 0.05) -> OracleJoint:
    """Negative control: move mass within one pattern's extrapolation law
    (observed margins unchanged), breaking the PMM factorization."""
    rng = np.random.default_rng(seed)
    J = joint_from_odds(g, random_full_law(g.d, rng), odds)
    r = next(p for p in g.sweep_order() if p.size < g.d)
    t = J.table[r].copy()
    gid = J._gid(r)
    first = {}
    for i, k in enumerate(gid):
        if k not in first:
            first[k] = i
        elif first[k] is not None:
            j = first[k]
            amt = size * min(t[i], t[j])
            t[i] += amt
            t[j] -= amt
            first[k] = None
    tab = dict(J.table)
    tab[r] = t
    return OracleJoint(g, tab)


def condmar_identities(J: OracleJoint) -> float:
    """Largest violation of the conditional-MAR equalities of the four-variable
    example graph ``(Z, Y1, Y2, Y3)``: the extrapolation law of pattern 1110
    equals that of 1111; of 0111 equals 1111; of 0110 equals 0111."""
    worst = 0.0
    for r, s in (("1110", "1111"), ("0111", "1111"), ("0110", "0111")):
        r, s = Pattern.parse(r), Pattern.parse(s)
        obs = J.observed(r)
        lhs = np.divide(J.table[r], obs, out=np.zeros_like(obs), where=obs > 0)
        den = J.marg(r, J.table[s])
        rhs = np.divide(J.table[s], den, out=np.zeros_like(den), where=den > 0)
        worst = max(worst, float(np.max(np.abs(np.where(obs > 0, lhs - rhs, 0)))))
    return worst


# ---------------------------------------------------------------------------
# config files


def _vec(text: str) -> np.ndarray:
    return np.array([float(v) for v in text.replace(";", ",").split(",") if v.strip()])


def _mat(text: str, d: int) -> np.ndarray:
    rows = [r for r in text.split(";") if r.strip()]
    M = np.array([[float(v) for v in r.split(",")] for r in rows])
    if M.shape != (d, d):
        raise ValueError(f"covariance must be {d}x{d}, got {M.shape}")
    return M


def parse_mechanism(text: str, base_dir=None) -> tuple[MechanismSpec, dict]:
    """Read a mechanism from the sectioned ``key = value`` config format.

    Returns the spec and the ``[simulate]`` settings (``n``, ``seed``).
    See the README for the grammar.
    """
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",), interpolation=None)
    cp.optionxform = str
    cp.read_string(text)
    if "graph" not in cp:
        raise ValueError("missing [graph] section")
    gs = cp["graph"]
    if "file" in gs:
        path = FilePath(gs["file"])
        if base_dir is not None and not path.is_absolute():
            path = FilePath(base_dir) / path
        g = load_graph(path)
    elif "kind" in gs:
        nodes = gs.get("patterns")
        g = builtin_graph(gs["kind"], nodes=nodes.split() if nodes else None,
                          d=int(gs["d"]) if "d" in gs else None)
    else:
        raise ValueError("[graph] needs 'file' or 'kind'")
    d = g.d
    if "law" not in cp:
        raise ValueError("missing [law] section")
    ls = cp["law"]
    kind = ls.get("type", "gaussian")
    if kind == "gaussian":
        law = GaussianMixtureLaw.gaussian(_vec(ls["mean"]), _mat(ls["cov"], d))
    elif kind == "discrete":
        law = DiscreteLaw.binary(_vec(ls["probs"]))
        if law.d != d:
            raise ValueError(f"discrete law has {law.d} coordinates, graph has {d}")
    elif kind == "mixture":
        w = _vec(ls["weights"])
        means = np.array([_vec(ls[f"mean.{k}"]) for k in range(len(w))])
        cov = _mat(ls["cov"], d)
        law = GaussianMixtureLaw(w, means, cov)
    else:
        raise ValueError(f"unknown law type {kind!r}")
    coefs, deltas = {}, {}
    for sec in cp.sections():
        if sec.startswith("odds."):
            r = Pattern.parse(sec[5:])
            coefs[r] = _vec(cp[sec]["beta"])
            if "delta" in cp[sec]:
                deltas[r] = _vec(cp[sec]["delta"])
    missing = [str(r) for r in g.nodes if r != g.source and r not in coefs]
    if missing:
        raise ValueError(f"no [odds.<pattern>] section for {missing}")
    odds = OddsModel(d, coefs, deltas)
    theta = None
    if "theta" in cp:
        ts = cp["theta"]
        if "indicator" in ts:
            col, c = ts["indicator"].split(",")
            theta = Indicator(int(col), float(c), d)
        elif "coef" in ts:
            theta = Linear(_vec(ts["coef"]), float(ts.get("offset", 0.0)))
    sim = {}
    if "simulate" in cp:
        ss = cp["simulate"]
        if "n" in ss:
            sim["n"] = int(ss["n"])
        if "seed" in ss:
            sim["seed"] = int(ss["seed"])
    return MechanismSpec(g, law, odds, theta, cp.get("meta", "name", fallback="")), sim


def load_mechanism(path) -> tuple[MechanismSpec, dict]:
    path = FilePath(path)
    return parse_mechanism(path.read_text(encoding="utf-8"), base_dir=path.parent)
