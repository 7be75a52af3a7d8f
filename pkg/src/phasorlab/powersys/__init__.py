from .estimation import (
    EstimationReport,
    Singular,
    chi2_cdf,
    chi_square_threshold,
    degrees_of_freedom,
    detect_and_identify,
    estimate,
    objective_j,
    residual,
)
from .model import (
    ModelError,
    NetworkModel,
    RankDeficient,
    build_H,
    feeder_phase_a,
    load_model,
    model_from_dict,
    offset,
)
from .noise import MeasurementSet, NoiseSpec, add_noise, measurements_from_state

__all__ = [
    "EstimationReport", "MeasurementSet", "ModelError", "NetworkModel", "NoiseSpec", "RankDeficient",
    "Singular", "add_noise", "build_H", "chi2_cdf", "chi_square_threshold", "degrees_of_freedom",
    "detect_and_identify", "estimate", "feeder_phase_a", "load_model", "measurements_from_state",
    "model_from_dict", "objective_j", "offset", "residual",
]
