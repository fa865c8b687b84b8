"""Structure and parameter learning."""
from .params import CfdObjective, FitResult, OptimizerConfig, ParameterMap, circuit_gradient, fit_parameters
from .structure import (
    GTEST,
    RDC,
    LearnInfo,
    LearnResult,
    StructureConfig,
    build_random_structure,
    g_test,
    independence_partition,
    kmeans_partition,
    learn_structure,
    rdc,
)

__all__ = [
    "CfdObjective", "FitResult", "OptimizerConfig", "ParameterMap", "circuit_gradient", "fit_parameters",
    "GTEST", "RDC", "LearnInfo", "LearnResult", "StructureConfig", "build_random_structure", "g_test",
    "independence_partition", "kmeans_partition", "learn_structure", "rdc",
]
