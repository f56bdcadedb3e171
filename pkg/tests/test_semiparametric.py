import numpy as np
import pytest
from hypothesis import given, settings

from patterngraph.data import IncompleteDataset
from patterngraph.functionals import Linear
from patterngraph.graph import builtin_graph, enumerate_paths, example_graph
from patterngraph.imputation import GaussianLaw, PatternDensityModel, fit_pattern_densities
from patterngraph.patterns import Pattern
from patterngraph.semiparametric import (FunctionSurface, MonteCarloSurface, TreeSurface,
                                         augmentation, eif_evaluate)
from patterngraph.simulation import (OracleJoint, joint_from_odds, random_full_law, scenario_mechanism,
                                     simulate_dataset)

from conftest import random_odds, random_regular_graph, seeds


def P(s):
    return Pattern.parse(s)


def random_surface(g, rng):
    """Random per-path linear functions; ``m`` is their sum."""
    mu = {}
    for s in g.nodes:
        if s.is_full:
            continue
        mu[s] = {}
        for p in enumerate_paths(g, s):
            w = rng.normal(size=s.size + 1)
            mu[s][p] = (lambda X, w=w, o=s.observed: w[0] + X[:, o] @ w[1:])
    m = {s: (lambda X, fs=tuple(mu[s].values()): sum(f(X) for f in fs)) for s in mu}
    m[g.source] = lambda X: X.sum(axis=1)
    return FunctionSurface(g, m, mu)


def rows_with_patterns(g, rng, n):
    pats = [g.nodes[i] for i in rng.integers(0, len(g.nodes), n)]
    X = rng.normal(size=(n, g.d))
    for i, p in enumerate(pats):
        X[i, p.missing] = np.nan
    return X, pats


@settings(max_examples=200, deadline=None)
@given(seeds)
def test_ancestor_equals_path_mode(seed):
    rng = np.random.default_rng(seed)
    g = random_regular_graph(rng, int(rng.integers(1, 4)))
    m = random_odds(g, rng)
    X, pats = rows_with_patterns(g, rng, 30)
    surf = random_surface(g, rng)
    a = eif_evaluate(X, pats, g, m, surf, Linear(np.ones(g.d)), expr="ancestor")
    b = eif_evaluate(X, pats, g, m, surf, Linear(np.ones(g.d)), expr="path")
    np.testing.assert_allclose(a.total, b.total, atol=1e-8, rtol=0)
    np.testing.assert_allclose(a.augmentation, augmentation(X, pats, g, m, surf), atol=1e-8)


def binary_rows(J: OracleJoint):
    """Every (cell, pattern) pair with its probability, as incomplete rows."""
    X, pats, w = [], [], []
    for r in J.g.nodes:
        for k, cell in enumerate(J.grid):
            row = cell.copy()
            row[r.missing] = np.nan
            X.append(row)
            pats.append(r)
            w.append(J.table[r][k])
    return np.array(X), pats, np.array(w)


def check_example2_five_terms(J, odds, theta):
    """Match the path-mode terms on Example 2 against the five hand-written ones."""
    g = J.g
    X, pats, _ = binary_rows(J)
    surf = J.surface(theta)
    terms = eif_evaluate(X, pats, g, odds, surf, theta, expr="path").terms
    R = np.array([str(p) for p in pats])
    Z = np.nan_to_num(X)
    O = {r: odds.odds(r, Z) for r in ("10", "01", "00")}
    I = {r: (R == r).astype(float) for r in ("11", "10", "01", "00")}
    mu = {k: surf.mu(P(k), Z) for k in ("10", "01", "00")}

    def key(*nodes):
        return tuple(P(x) for x in nodes)

    m10 = mu["10"][key("11", "10")]
    m01 = mu["01"][key("11", "01")]
    m00a = mu["00"][key("11", "00")]
    m00b = mu["00"][key("11", "10", "00")]
    want = {
        (key("11", "10"), P("10")): m10 * (I["10"] - O["10"] * I["11"]),
        (key("11", "01"), P("01")): m01 * (I["01"] - O["01"] * I["11"]),
        (key("11", "00"), P("00")): m00a * (I["00"] - O["00"] * (I["11"] + I["10"])),
        (key("11", "10", "00"), P("10")): m10 * (I["10"] - O["10"] * I["11"]) * O["00"],
        (key("11", "10", "00"), P("00")): m00b * (I["00"] - O["00"] * (I["11"] + I["10"])),
    }
    assert set(terms) == set(want)
    for k, v in want.items():
        np.testing.assert_allclose(terms[k], v, atol=1e-13)


@pytest.fixture(scope="module")
def ex2_joint():
    g = example_graph("example2")
    rng = np.random.default_rng(5)
    odds = random_odds(g, rng)
    return joint_from_odds(g, random_full_law(2, rng), odds), odds


class TestExact:
    theta = Linear([1.0, 2.0])

    def test_example2_five_terms(self, ex2_joint):
        check_example2_five_terms(*ex2_joint, self.theta)

    def test_path_regressions_by_hand(self, ex2_joint):
        J, odds = ex2_joint
        th = self.theta(J.grid)
        p11 = J.table[P("11")]
        pa00 = J.marg(P("00"), J.table[P("11")] + J.table[P("10")])
        o10 = odds.odds("10", J.grid)
        surf = J.surface(self.theta)
        mu = surf.mu(P("00"), J.grid)
        a = J.marg(P("00"), th * p11) / pa00
        b = J.marg(P("00"), th * p11 * o10) / pa00
        np.testing.assert_allclose(mu[(P("11"), P("00"))], a, rtol=1e-12)
        np.testing.assert_allclose(mu[(P("11"), P("10"), P("00"))], b, rtol=1e-12)
        np.testing.assert_allclose(a + b, surf.m(P("00"), J.grid), rtol=1e-12)

    def test_expected_influence_is_theta(self, ex2_joint):
        J, odds = ex2_joint
        X, pats, w = binary_rows(J)
        eif = eif_evaluate(X, pats, J.g, odds, J.surface(self.theta), self.theta)
        assert float(w @ eif.total) == pytest.approx(J.mean(self.theta), abs=1e-12)
        assert float(w @ eif.augmentation) == pytest.approx(0.0, abs=1e-12)

    def test_wrong_surface_right_odds(self, ex2_joint):
        J, odds = ex2_joint
        X, pats, w = binary_rows(J)
        surf = random_surface(J.g, np.random.default_rng(1))
        eif = eif_evaluate(X, pats, J.g, odds, surf, self.theta)
        assert float(w @ eif.total) == pytest.approx(J.mean(self.theta), abs=1e-12)

    def test_wrong_odds_right_surface(self, ex2_joint):
        J, odds = ex2_joint
        X, pats, w = binary_rows(J)
        wrong = random_odds(J.g, np.random.default_rng(2))
        eif = eif_evaluate(X, pats, J.g, wrong, J.surface(self.theta), self.theta)
        assert float(w @ eif.total) == pytest.approx(J.mean(self.theta), abs=1e-12)

    def test_constant_theta(self, ex2_joint):
        J, odds = ex2_joint
        X, pats, w = binary_rows(J)
        c = Linear([0.0, 0.0], offset=2.5)
        eif = eif_evaluate(X, pats, J.g, odds, J.surface(c), c)
        assert float(w @ eif.total) == pytest.approx(2.5, abs=1e-12)


def test_complete_row_ccmv(rng):
    g = builtin_graph("ccmv", d=2)
    m = random_odds(g, rng)
    surf = random_surface(g, rng)
    x = rng.normal(size=(1, 2))
    aug = augmentation(x, [g.source], g, m, surf)
    want = -sum(m.odds(r, x) * surf.m(r, x) for r in g.nodes if not r.is_full)
    np.testing.assert_allclose(aug, want, rtol=1e-12)


def s1_true_densities(spec):
    laws = {}
    for k, r in enumerate(spec.graph.nodes):
        if r.size:
            o = r.observed
            laws[r] = GaussianLaw(o, spec.law.means[k][o], spec.law.covs[k][np.ix_(o, o)])
    return PatternDensityModel(3, laws, {r: 1 for r in spec.graph.nodes})


@pytest.fixture(scope="module")
def s1_big():
    spec = scenario_mechanism("S1")
    ds, _ = simulate_dataset(spec, 200_000, 17)
    return spec, ds


def test_mean_zero_augmentation_s1(s1_big):
    spec, ds = s1_big
    surf = TreeSurface(spec.graph, s1_true_densities(spec), spec.theta)
    pats = [ds.index.patterns[c] for c in ds.index.codes]
    aug = augmentation(ds.values, pats, spec.graph, spec.odds, surf)
    assert abs(aug.mean()) < 3 * aug.std() / np.sqrt(ds.n)


def test_augmentation_space_terms_mean_zero(s1_big):
    spec, ds = s1_big
    g = spec.graph
    idx = ds.index
    rng = np.random.default_rng(8)
    for _ in range(3):
        for r in g.nodes:
            if r.is_full:
                continue
            w = rng.normal(size=r.size)
            rows = np.flatnonzero(idx.member([r] + list(g.parents(r))))
            Xr = ds.block(rows, r.observed)
            psi = np.tanh(Xr @ w + rng.normal()) if r.size else np.full(len(rows), rng.normal())
            Z = np.zeros((len(rows), 3))
            Z[:, r.observed] = Xr
            term = np.zeros(ds.n)
            term[rows] = (idx.is_pattern(r)[rows] - spec.odds.odds(r, Z) * idx.member(g.parents(r))[rows]) * psi
            assert abs(term.mean()) < 4 * term.std() / np.sqrt(ds.n), r


def test_mc_surface_sums_paths(rng):
    g = example_graph("example2")
    X = rng.multivariate_normal([0, 0], [[1, 0.4], [0.4, 1]], size=300)
    X[100:200, 1] = np.nan
    X[200:250, 0] = np.nan
    X[250:, :] = np.nan
    dens = fit_pattern_densities(IncompleteDataset(X))
    surf = MonteCarloSurface(g, dens, [1.0, 1.0], N=50, seed=3)
    pts = np.zeros((4, 2))
    mus = surf.mu(P("00"), pts)
    assert set(mus) == set(enumerate_paths(g, "00"))
    np.testing.assert_allclose(sum(mus.values()), surf.m(P("00"), pts), atol=1e-12)
    assert np.array_equal(surf.m(P("11"), X[:3]), X[:3].sum(axis=1))
