import numpy as np
import pytest
from sklearn.base import clone

from patterngraph.data import IncompleteDataset, PositivityError
from patterngraph.estimators import (AIPWEstimator, GaussianPatternDensities, IPWEstimator, RAEstimator,
                                     SelectionOdds, TreeEstimator, make_estimator)
from patterngraph.functionals import Indicator
from patterngraph.graph import GraphError, builtin_graph, example_graph
from patterngraph.simulation import scenario_mechanism, simulate_dataset

ALL = [IPWEstimator, RAEstimator, AIPWEstimator, TreeEstimator]


@pytest.fixture(scope="module")
def s1():
    spec = scenario_mechanism("S1")
    ds, truth = simulate_dataset(spec, 3000, 21)
    return spec, ds, truth


@pytest.mark.parametrize("cls", ALL)
def test_complete_data_gives_sample_mean(cls, rng):
    X = rng.normal(size=(80, 3))
    est = cls(graph=builtin_graph("tree_chain", d=3), theta=[1.0, -1.0, 0.5])
    if "random_state" in est.get_params():
        est.set_params(random_state=0)
    est.fit(X)
    assert est.estimate_ == pytest.approx(float(np.mean(X @ [1.0, -1.0, 0.5])), abs=1e-12)
    assert est.predict() == est.estimate_


@pytest.mark.parametrize("cls", ALL)
def test_clone_and_params(cls, s1):
    spec, ds, _ = s1
    est = cls(graph=spec.graph, theta=[1, 1, 1])
    c = clone(est)
    assert c.get_params()["graph"] == spec.graph
    assert c.get_params()["theta"] == [1, 1, 1]


def test_nan_array_input_equals_dataset(s1):
    spec, ds, _ = s1
    a = IPWEstimator(graph=spec.graph, theta=[1, 1, 1]).fit(ds).estimate_
    b = IPWEstimator(graph=spec.graph, theta=[1, 1, 1]).fit(np.array(ds.values)).estimate_
    assert a == b


def test_hidden_truth_not_needed(s1):
    spec, ds, truth = s1
    before = AIPWEstimator(graph=spec.graph, theta=[1, 1, 1]).fit(ds).estimate_
    del truth
    fresh = IncompleteDataset(np.array(ds.values))
    assert AIPWEstimator(graph=spec.graph, theta=[1, 1, 1]).fit(fresh).estimate_ == before


def test_input_validation(s1):
    spec, _, _ = s1
    est = IPWEstimator(graph=spec.graph, theta=[1, 1, 1])
    with pytest.raises(ValueError):
        est.fit(np.ones((5, 2)))
    with pytest.raises(ValueError):
        est.fit(np.array([[1.0, np.inf, 0.0]]))
    with pytest.raises(TypeError):
        IPWEstimator(graph="11 -> 10", theta=[1, 1]).fit(np.ones((3, 2)))


def test_tree_estimator_names_violating_node(s1):
    _, ds, _ = s1
    g = example_graph("example2")
    X = np.ones((10, 2))
    with pytest.raises(GraphError, match="00"):
        TreeEstimator(graph=g, theta=[1, 1]).fit(X)


def test_unknown_pattern_is_hard_failure(s1):
    spec, ds, _ = s1
    X = np.array(ds.values)
    X[0] = [1.0, np.nan, 2.0]
    with pytest.raises(PositivityError):
        RAEstimator(graph=spec.graph, theta=[1, 1, 1], random_state=0).fit(X)


def test_estimators_agree_on_s1():
    spec = scenario_mechanism("S1")
    ds, truth = simulate_dataset(spec, 20_000, 5)
    vals = {m: make_estimator(m, spec.graph, spec.theta, random_state=3).fit(ds).estimate_
            for m in ("ipw", "ra", "aipw", "tree")}
    for v in vals.values():
        assert abs(v - truth.theta0) < 0.1
    assert vals["ra"] == pytest.approx(vals["tree"], abs=0.01)


def test_aipw_mc_surface_for_indicator(s1):
    spec, ds, _ = s1
    est = AIPWEstimator(graph=spec.graph, theta=Indicator(0, 0.0, 3), random_state=1, n_imputations=5).fit(ds)
    assert est.surface_kind_ == "mc"
    assert 0 < est.estimate_ < 1
    assert est.influence_.shape == (ds.n,)


def test_selection_odds_transformer(s1):
    spec, ds, _ = s1
    so = SelectionOdds(graph=spec.graph).fit(ds)
    pi = so.transform(ds)
    full = ds.mask.all(axis=1)
    assert pi.shape == (ds.n, 1)
    assert np.all((pi[full] > 0) & (pi[full] <= 1))
    assert np.isnan(pi[~full]).all()


def test_density_scores(s1):
    _, ds, _ = s1
    s = GaussianPatternDensities().fit(ds).score_samples(ds)
    assert s.shape == (ds.n,) and np.all(np.isfinite(s))


def test_make_estimator_unknown():
    with pytest.raises(ValueError):
        make_estimator("em", builtin_graph("ccmv", d=2), [1, 1])
