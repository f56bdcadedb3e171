"""Pattern graphs for nonignorable missing data.

Selection-odds and pattern-mixture modelling on a graph of response
patterns, with IPW, regression adjustment and augmented IPW estimators of
full-data means.
"""

__version__ = "0.1.0"

from .patterns import Pattern, PatternError, all_patterns
from .graph import (GraphError, PatternGraph, ValidationReport, builtin_graph, count_regular_graphs,
                    enumerate_paths, equivalence_move, example_graph, generation_numbers, load_graph,
                    perturbation_neighborhood, validate)
from .data import IncompleteDataset, PositivityError, load_dataset, positivity_report, write_dataset
from .odds import OddsModel, fit_odds_model
from .propensity import path_scores, recursive_scores
from .functionals import Indicator, Linear
from .imputation import DonorImputer, fit_pattern_densities, ra_estimate
from .semiparametric import aipw_estimate, eif_evaluate
from .estimators import (AIPWEstimator, GaussianPatternDensities, IPWEstimator, RAEstimator, SelectionOdds,
                         TreeEstimator, make_estimator)
from .inference import bootstrap_ci, graph_sweep, tilt_sweep

__all__ = [
    "Pattern", "PatternError", "all_patterns", "GraphError", "PatternGraph", "ValidationReport",
    "builtin_graph", "count_regular_graphs", "enumerate_paths", "equivalence_move", "example_graph",
    "generation_numbers", "load_graph", "perturbation_neighborhood", "validate", "IncompleteDataset",
    "PositivityError", "load_dataset", "positivity_report", "write_dataset", "OddsModel", "fit_odds_model",
    "path_scores", "recursive_scores", "Indicator", "Linear", "DonorImputer", "fit_pattern_densities",
    "ra_estimate", "aipw_estimate", "eif_evaluate", "AIPWEstimator", "GaussianPatternDensities",
    "IPWEstimator", "RAEstimator", "SelectionOdds", "TreeEstimator", "make_estimator", "bootstrap_ci",
    "graph_sweep", "tilt_sweep",
]
