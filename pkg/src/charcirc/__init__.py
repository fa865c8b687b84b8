"""Characteristic circuits: tractable models over characteristic functions."""
from .circuit import (
    Circuit,
    CircuitBuilder,
    LeafNode,
    ProductNode,
    SumNode,
    ValidationReport,
    Violation,
    circuit_from_dict,
    circuit_to_dict,
    from_json,
    load_circuit,
    save_circuit,
    to_json,
    validate,
)
from .data import Dataset, generate_bn, generate_mm, load_bundled_sample, load_csv, save_csv, split
from .distance import CfdConfig, EcfModel, analytic_cfd, cfd_profile, compatibility_check, mc_cfd
from .errors import (
    CharCircError,
    ConfigError,
    DataError,
    DimensionError,
    IncompatibleCircuitsError,
    InvalidParameterError,
    MomentDoesNotExistError,
    NumericError,
    QuadratureUnderflowError,
    QuadratureUnderflowWarning,
    StructuralError,
    UnsupportedAnalyticError,
)
from .estimator import CharacteristicCircuitDensity
from .inference import evaluate_cf, log_density, marginal_cf, marginal_log_density, moment
from .leaves import AlphaStable, Categorical, EmpiricalCF, Gaussian, fit_leaf
from .learning import OptimizerConfig, StructureConfig, build_random_structure, fit_parameters, learn_structure
from .quadrature import QuadratureConfig

__all__ = [
    "Circuit", "CircuitBuilder", "LeafNode", "ProductNode", "SumNode", "ValidationReport", "Violation",
    "circuit_from_dict", "circuit_to_dict", "from_json", "load_circuit", "save_circuit", "to_json", "validate",
    "Dataset", "generate_bn", "generate_mm", "load_bundled_sample", "load_csv", "save_csv", "split",
    "CfdConfig", "EcfModel", "analytic_cfd", "cfd_profile", "compatibility_check", "mc_cfd",
    "CharCircError", "ConfigError", "DataError", "DimensionError", "IncompatibleCircuitsError",
    "InvalidParameterError", "MomentDoesNotExistError", "NumericError", "QuadratureUnderflowError",
    "QuadratureUnderflowWarning", "StructuralError", "UnsupportedAnalyticError",
    "CharacteristicCircuitDensity",
    "evaluate_cf", "log_density", "marginal_cf", "marginal_log_density", "moment",
    "AlphaStable", "Categorical", "EmpiricalCF", "Gaussian", "fit_leaf",
    "OptimizerConfig", "StructureConfig", "build_random_structure", "fit_parameters", "learn_structure",
    "QuadratureConfig",
]
