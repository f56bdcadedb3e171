"""Propensity scores induced by selection odds.

The recursion ``Q_1 = 1``, ``Q_r = O_r * sum_{s in PA_r} Q_s`` gives
``pi = 1 / sum_r Q_r`` and ``P(R = r | l) = Q_r pi``.  A path-sum oracle,
which enumerates every path from the source, is provided for checking.
All functions are vectorized over rows.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .graph import PathExplosionError, PatternGraph, all_paths, count_paths, enumerate_paths
from .odds import OddsModel
from .patterns import as_pattern

LOG_SPACE_THRESHOLD = 30.0
PI_FLOOR = 1e-12


@dataclass
class PropensityScores:
    """``Q_r`` per node, ``pi`` and pattern probabilities, one value per row.

    Attributes
    ----------
    q : dict Pattern -> ndarray
    pi : ndarray
    n_floored : int
        Rows whose propensity fell below the floor and were clipped.
    """

    q: dict
    pi: np.ndarray
    n_floored: int = 0
    log_space: bool = False

    @property
    def pattern_probs(self) -> dict:
        return {r: qr * self.pi for r, qr in self.q.items()}

    def probability(self, r) -> np.ndarray:
        return pattern_probability(self, r)


@dataclass
class PathScore:
    path: tuple
    kappa: np.ndarray


def _rows(X) -> tuple[np.ndarray, bool]:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        return X[None, :], True
    return X, False


def _squeeze(scores: PropensityScores, single: bool) -> PropensityScores:
    if not single:
        return scores
    return PropensityScores({r: float(v[0]) for r, v in scores.q.items()}, float(scores.pi[0]),
                            scores.n_floored, scores.log_space)


def log_odds_table(g: PatternGraph, m: OddsModel, X) -> dict:
    return {r: m.log_odds(r, X) for r in g.nodes if r != g.source}


def recursive_scores(g: PatternGraph, m: OddsModel, X, floor: float = PI_FLOOR) -> PropensityScores:
    """Propensity by the parent-set recursion.

    Nodes are visited in decreasing ``|r|`` for regular graphs and in
    increasing generation number otherwise.  The recursion switches to log
    space when any finite ``|log O_r|`` exceeds 30.

    Parameters
    ----------
    X : array-like of shape (n, d) or (d,)
        Rows with every coordinate the odds need.
    """
    X2, single = _rows(X)
    n = X2.shape[0]
    src = g.source
    order = g.sweep_order()
    lo = {r: m.log_odds(r, X2) for r in order}
    finite = [np.abs(v[np.isfinite(v)]) for v in lo.values()]
    use_log = any(len(f) and f.max() > LOG_SPACE_THRESHOLD for f in finite)
    if use_log:
        lq = {src: np.zeros(n)}
        for r in order:
            lq[r] = lo[r] + logsumexp(np.vstack([lq[s] for s in g.parents(r)]), axis=0)
        ltot = logsumexp(np.vstack(list(lq.values())), axis=0)
        log_pi = -ltot
        pi = np.exp(log_pi)
        q = {r: np.exp(v) for r, v in lq.items()}
    else:
        q = {src: np.ones(n)}
        for r in order:
            acc = np.zeros(n)
            for s in g.parents(r):
                acc = acc + q[s]
            q[r] = np.exp(lo[r]) * acc
        tot = np.zeros(n)
        for v in q.values():
            tot = tot + v
        pi = 1.0 / tot
    low = pi < floor
    nfl = int(low.sum())
    if nfl:
        pi = np.where(low, floor, pi)
    q = {r: q[r] for r in g.nodes}
    return _squeeze(PropensityScores(q, pi, nfl, use_log), single)


def _path_products(g: PatternGraph, lo: dict, paths, n: int) -> list[np.ndarray]:
    out = []
    for p in paths:
        acc = np.zeros(n)
        for s in p[1:]:
            acc = acc + lo[s]
        out.append(np.exp(acc))
    return out


def path_propensity_oracle(g: PatternGraph, m: OddsModel, X) -> PropensityScores:
    """Propensity from the closed form ``pi = 1 / sum_paths prod O``.

    Raises :class:`~patterngraph.graph.PathExplosionError` up front when the
    graph has more than ``path_cap`` paths in total.
    """
    total = sum(count_paths(g).values())
    if total > g.path_cap:
        raise PathExplosionError(f"{total} paths in graph, more than path_cap={g.path_cap}")
    X2, single = _rows(X)
    n = X2.shape[0]
    lo = log_odds_table(g, m, X2)
    q = {}
    for r in g.nodes:
        prods = _path_products(g, lo, enumerate_paths(g, r), n)
        q[r] = np.sum(prods, axis=0) if prods else np.zeros(n)
    tot = np.sum(list(q.values()), axis=0)
    return _squeeze(PropensityScores(q, 1.0 / tot), single)


def path_scores(g: PatternGraph, m: OddsModel, X) -> list[PathScore]:
    """``kappa(path | x) = pi(x) prod_{s in path} O_s(x_s)`` for every path."""
    X2, single = _rows(X)
    n = X2.shape[0]
    lo = log_odds_table(g, m, X2)
    paths = all_paths(g)
    prods = _path_products(g, lo, paths, n)
    tot = np.sum(prods, axis=0)
    out = []
    for p, v in zip(paths, prods):
        k = v / tot
        out.append(PathScore(p, float(k[0]) if single else k))
    return out


def pattern_probability(scores: PropensityScores, r) -> np.ndarray:
    r = as_pattern(r)
    if r not in scores.q:
        raise KeyError(f"pattern {r} not in scores")
    return scores.q[r] * scores.pi
