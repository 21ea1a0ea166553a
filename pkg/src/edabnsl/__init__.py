"""Bayesian network structure learning with estimation-of-distribution algorithms.

Individuals are n x n binary adjacency matrices; the search models are the
arc-frequency probability matrix (univariate / PBIL) and a MIMIC chain over
arc positions. Mutation is either bitwise flipping or the pairwise transpose
operator that reverses arc directions.
"""

from edabnsl.bayesnet import (
    BayesNetwork,
    CyclicGraph,
    Dataset,
    ParseError,
    ValidationError,
    asia_fixture,
    forward_sample,
    is_acyclic,
    load_network,
    topological_order,
)
from edabnsl.eda import EdaConfig, RunResult, run_eda
from edabnsl.metrics import ArcClassification, classify_arcs, precision
from edabnsl.mutation import bitwise_mutation, transpose_mutation
from edabnsl.scoring import BDeScorer, bde_family_score, bde_score, family_counts

__version__ = "0.1.0"

__all__ = [
    "ArcClassification",
    "BDeScorer",
    "BayesNetwork",
    "CyclicGraph",
    "Dataset",
    "EdaConfig",
    "ParseError",
    "RunResult",
    "ValidationError",
    "asia_fixture",
    "bde_family_score",
    "bde_score",
    "bitwise_mutation",
    "classify_arcs",
    "family_counts",
    "forward_sample",
    "is_acyclic",
    "load_network",
    "precision",
    "run_eda",
    "topological_order",
    "transpose_mutation",
]
