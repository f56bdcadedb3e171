import numpy as np
import pytest
from hypothesis import strategies as st

from patterngraph.graph import PatternGraph, example_graph
from patterngraph.odds import OddsModel
from patterngraph.patterns import Pattern, all_patterns


def random_regular_graph(rng: np.random.Generator, d: int, keep: float = 0.7) -> PatternGraph:
    """Random node subset containing ``1_d``; each node gets a non-empty
    random set of strictly dominating parents."""
    pats = all_patterns(d)
    full = Pattern.full(d)
    nodes = [full] + [p for p in pats if p != full and rng.random() < keep]
    parents = {}
    for r in nodes[1:]:
        cand = [s for s in nodes if s.dominates(r)]
        k = rng.integers(1, len(cand) + 1)
        parents[r] = [cand[i] for i in rng.choice(len(cand), size=k, replace=False)]
    return PatternGraph(nodes, parents)


def random_acyclic_graph(rng: np.random.Generator, d: int, keep: float = 0.7) -> PatternGraph:
    """Random DAG over a pattern subset: nodes are shuffled after ``1_d`` and
    each later node draws parents among the earlier ones."""
    pats = [p for p in all_patterns(d) if not p.is_full]
    full = Pattern.full(d)
    rest = [p for p in pats if rng.random() < keep]
    rng.shuffle(rest)
    nodes = [full] + rest
    parents = {}
    for i, r in enumerate(nodes[1:], start=1):
        k = rng.integers(1, i + 1)
        parents[r] = [nodes[j] for j in rng.choice(i, size=k, replace=False)]
    return PatternGraph(nodes, parents)


def random_odds(g: PatternGraph, rng: np.random.Generator, scale: float = 0.7) -> OddsModel:
    return OddsModel(g.d, {r: rng.normal(0, scale, 1 + r.size) for r in g.nodes if not r.is_full})


seeds = st.integers(min_value=0, max_value=2**32 - 1)


@pytest.fixture
def example2():
    return example_graph("example2")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance criteria report: tests marked ``criterion(k, title)`` get one
# PASS/FAIL line each in the terminal summary
_CRITERIA = {}


def pytest_runtest_makereport(item, call):
    mark = item.get_closest_marker("criterion")
    if mark is None or call.when != "call":
        return
    k, title = mark.args
    detail = "; ".join(v for n, v in item.user_properties if n == "detail")
    ok = call.excinfo is None
    prev = _CRITERIA.get(k)
    if prev is not None:
        ok = ok and prev[1]
        detail = "; ".join(x for x in (prev[2], detail) if x)
    _CRITERIA[k] = (title, ok, detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_CRITERIA):
        title, ok, detail = _CRITERIA[k]
        line = f"C{k:<2} {'PASS' if ok else 'FAIL'}  {title}"
        terminalreporter.write_line(line + (f"  [{detail}]" if detail else ""))
