import time

import numpy as np
import pytest
from hypothesis import given, settings

from patterngraph.graph import PathExplosionError, PatternGraph, count_paths
from patterngraph.odds import OddsModel
from patterngraph.patterns import Pattern, all_patterns
from patterngraph.propensity import path_propensity_oracle, path_scores, recursive_scores

from conftest import random_odds, random_regular_graph, seeds


def P(s):
    return Pattern.parse(s)


def unit_odds(g):
    return OddsModel(g.d, {r: np.zeros(1 + r.size) for r in g.nodes if not r.is_full})


class TestExample2:
    def test_unit_odds(self, example2):
        sc = recursive_scores(example2, unit_odds(example2), np.zeros(2))
        assert {str(r): v for r, v in sc.q.items()} == {"11": 1, "10": 1, "01": 1, "00": 2}
        assert sc.pi == pytest.approx(0.2, abs=1e-12)
        assert sc.probability("00") == pytest.approx(0.4, abs=1e-12)

    def test_symbolic_pi(self, example2, rng):
        m = random_odds(example2, rng)
        X = rng.normal(size=(6, 2))
        o = {r: m.odds(r, X) for r in ("10", "01", "00")}
        want = 1 / (1 + o["10"] + o["01"] + o["00"] + o["10"] * o["00"])
        sc = recursive_scores(example2, m, X)
        np.testing.assert_allclose(sc.pi, want, rtol=1e-12)
        np.testing.assert_allclose(sc.probability("00"), want * (o["00"] + o["10"] * o["00"]), rtol=1e-12)

    def test_kappa(self, example2, rng):
        m = random_odds(example2, rng)
        X = rng.normal(size=(4, 2))
        sc = recursive_scores(example2, m, X)
        ks = {tuple(map(str, p.path)): p.kappa for p in path_scores(example2, m, X)}
        np.testing.assert_allclose(ks[("11", "10")], sc.pi * m.odds("10", X), rtol=1e-12)
        np.testing.assert_allclose(ks[("11",)], sc.pi, rtol=1e-12)

    def test_unit_kappa_fifths(self, example2):
        ks = path_scores(example2, unit_odds(example2), np.zeros(2))
        assert len(ks) == 5
        assert all(k.kappa == pytest.approx(0.2, abs=1e-12) for k in ks)


def test_single_node_graph():
    g = PatternGraph(["111"], {})
    sc = recursive_scores(g, OddsModel(3, {}), np.ones(3))
    assert sc.pi == 1.0


def test_source_q_is_one(example2, rng):
    sc = recursive_scores(example2, random_odds(example2, rng), rng.normal(size=(5, 2)))
    assert np.all(sc.q[example2.source] == 1)
    np.testing.assert_allclose(sum(sc.pattern_probs.values()), 1, atol=1e-12)


@settings(max_examples=500, deadline=None)
@given(seeds)
def test_recursion_matches_path_oracle(seed):
    rng = np.random.default_rng(seed)
    g = random_regular_graph(rng, int(rng.integers(1, 5)))
    m = random_odds(g, rng, scale=1.0)
    X = rng.normal(size=(10, g.d))
    a = recursive_scores(g, m, X)
    b = path_propensity_oracle(g, m, X)
    np.testing.assert_allclose(a.pi, b.pi, rtol=1e-10, atol=0)
    ks = path_scores(g, m, X)
    np.testing.assert_allclose(sum(k.kappa for k in ks), 1.0, atol=1e-10)
    for r in g.nodes:
        mine = sum((k.kappa for k in ks if k.path[-1] == r), np.zeros(10))
        np.testing.assert_allclose(mine, a.q[r] * a.pi, atol=1e-10)


def test_log_space_switch(example2):
    m = OddsModel(2, {"10": [40.0, 0.0], "01": [0.0, 0.0], "00": [45.0]})
    sc = recursive_scores(example2, m, np.zeros((2, 2)), floor=0.0)
    assert sc.log_space
    ref = path_propensity_oracle(example2, m, np.zeros((2, 2)))
    np.testing.assert_allclose(sc.pi, ref.pi, rtol=1e-10)


def test_floor_counts(example2):
    m = OddsModel(2, {"10": [40.0, 0.0], "01": [0.0, 0.0], "00": [45.0]})
    sc = recursive_scores(example2, m, np.zeros((3, 2)))
    assert sc.n_floored == 3
    assert np.all(sc.pi == 1e-12)


def _saturated(nodes):
    return PatternGraph(nodes, {r: [s for s in nodes if s.dominates(r)] for r in nodes if not r.is_full})


def test_recursion_beats_path_sum():
    # coarse benchmark: 638 nodes with more than 10^5 paths
    g = _saturated([p for p in all_patterns(10) if p.size >= 5])
    m = random_odds(g, np.random.default_rng(0), scale=0.05)
    X = np.random.default_rng(1).normal(size=(3, 10))
    t0 = time.perf_counter()
    a = recursive_scores(g, m, X)
    t1 = time.perf_counter()
    b = path_propensity_oracle(g, m, X)
    t2 = time.perf_counter()
    np.testing.assert_allclose(a.pi, b.pi, rtol=1e-10)
    assert (t2 - t1) > 5 * (t1 - t0)


def test_saturated_d10_recursion_only():
    g = _saturated(all_patterns(10))
    m = random_odds(g, np.random.default_rng(0), scale=0.05)
    sc = recursive_scores(g, m, np.zeros((2, 10)))
    np.testing.assert_allclose(sum(sc.pattern_probs.values()), 1.0, atol=1e-10)
    assert count_paths(g)[Pattern.parse("0" * 10)] == 102247563
    with pytest.raises(PathExplosionError):
        path_propensity_oracle(g, m, np.zeros((2, 10)))
