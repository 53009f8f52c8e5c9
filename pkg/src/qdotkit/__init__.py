"""Detector overlapping tomography and correlated readout-noise modeling."""

from .povm import (
    Povm,
    QubitSubset,
    StochasticMatrix,
    ValidationError,
    ac_distance,
    born_probabilities,
    ideal_povm,
    measurement_choi,
    reduce_povm,
    tensor_povm,
    tvd,
    wc_distance,
    wc_distance_stochastic,
)
from .circuits import (
    DDOT,
    QDOT,
    CircuitCollection,
    ComplexityQuery,
    generate_collection,
    required_circuits_choi,
    required_circuits_matrix_elements,
)
from .simulate import CnModel, Cluster, ExperimentRecords, QuantumDeviceSpec, planted_model_library, sample_cn, sample_quantum

__version__ = "0.1.0"
