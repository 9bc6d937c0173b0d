"""Discrete-time modulator plants and the feedback measurement chain."""
from modlin.plant.aom import (
    AcoustoOpticMaterial,
    AomGeometry,
    AomGeometryReport,
    AomParams,
    AomPlant,
    Regime,
    aom_geometry_report,
    aom_output_power,
    bessel_j0,
    bragg_angle,
    bragg_efficiency,
    delta_n,
    diffraction_angles,
    eta_from_acoustic_power,
    figure_of_merit_m2,
    phase_mismatch_psi,
    raman_nath_zero_order,
    regime_classify,
    transit_kernel,
)
from modlin.plant.drift import DriftKind, DriftProcess, drift_advance
from modlin.plant.eom import (
    DriveMode,
    EomParams,
    EomPlant,
    UnbalancedError,
    halfwave_voltage,
    mzm_output_power,
    mzm_transmittance,
)
from modlin.plant.feedback import FeedbackChain, FeedbackPath, feedback_measure
from modlin.plant.describe import describe

__all__ = [name for name in dir() if not name.startswith("_")]
