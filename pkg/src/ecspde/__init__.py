"""Pseudo-spectral simulation and verification toolkit for a stochastic
electroconvection model (surface charge density coupled to incompressible
flow) on the 2D torus."""

from . import constants
from .coupling import CouplingConfig, run_coupling_experiment
from .diagnostics import EnergyLedger, energy_balance_residual, poincare_l4_ratio
from .dynamics import (
    BlowUpError,
    ModelParams,
    StepSchedule,
    SystemState,
    compute_drift,
    integrate,
    integrate_pathwise,
    step,
)
from .ergodicity import moment_bound_suite, stationarity_test, time_average
from .noise import IncrementStream, NoiseConfig, build_noise_basis
from .spectral import (
    FourierGrid,
    ScalarField,
    VectorField,
    apply_lambda,
    dealias,
    gradient,
    leray_project,
    norms,
    riesz,
)

__all__ = [
    "constants",
    "BlowUpError",
    "CouplingConfig",
    "EnergyLedger",
    "FourierGrid",
    "IncrementStream",
    "ModelParams",
    "NoiseConfig",
    "ScalarField",
    "StepSchedule",
    "SystemState",
    "VectorField",
    "apply_lambda",
    "build_noise_basis",
    "compute_drift",
    "dealias",
    "energy_balance_residual",
    "gradient",
    "integrate",
    "integrate_pathwise",
    "leray_project",
    "moment_bound_suite",
    "norms",
    "poincare_l4_ratio",
    "riesz",
    "run_coupling_experiment",
    "stationarity_test",
    "step",
    "time_average",
]
