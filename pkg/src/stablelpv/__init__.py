"""Stable LPV input-output models by unconstrained parameterization."""

from .coeff import Affine, FunctionCoefficients, Mlp, MlpSpec, Polynomial, init_params
from .model import (
    CoefficientVector,
    LpvIoModel,
    LpvIoStructure,
    SchedulingPoint,
    SignalSequence,
    build_max_ss,
    frozen_response,
    simulate_io,
    simulate_ss,
)
from .stabparam import StableLpvIoModel, XwFactor, solve_structured_riccati

__version__ = "0.1.0"

__all__ = [
    "Affine",
    "FunctionCoefficients",
    "Mlp",
    "MlpSpec",
    "Polynomial",
    "init_params",
    "CoefficientVector",
    "LpvIoModel",
    "LpvIoStructure",
    "SchedulingPoint",
    "SignalSequence",
    "build_max_ss",
    "frozen_response",
    "simulate_io",
    "simulate_ss",
    "StableLpvIoModel",
    "XwFactor",
    "solve_structured_riccati",
]
