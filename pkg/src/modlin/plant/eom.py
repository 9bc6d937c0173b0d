"""Mach-Zehnder electro-optic modulator plant."""
from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import lfilter

from modlin.plant.drift import DriftKind, DriftProcess
from modlin.signal import Waveform


class DriveMode(enum.Enum):
    SINGLE = "SINGLE"
    PUSH_PULL = "PUSH_PULL"


class UnbalancedError(ValueError):
    """The balanced-only transmittance was asked about an unbalanced device."""


def halfwave_voltage(d, lambda0, l, n0, r_pockels) -> float:
    """Half-wave voltage ``d * lambda0 / (l * n0**3 * r)`` of a Pockels cell.

    Parameters
    ----------
    d : float
        Electrode gap [m].
    lambda0 : float
        Free-space wavelength [m].
    l : float
        Electrode (interaction) length [m].
    n0 : float
        Unperturbed refractive index.
    r_pockels : float
        Linear electro-optic coefficient [m/V].
    """
    vals = dict(d=d, lambda0=lambda0, l=l, n0=n0, r_pockels=r_pockels)
    for k, v in vals.items():
        if not (math.isfinite(v) and v > 0):
            raise ValueError(f"{k} must be > 0, got {v!r}")
    return d * lambda0 / (l * n0**3 * r_pockels)


@dataclass(frozen=True)
class EomParams:
    """Physical parameters of a Mach-Zehnder modulator.

    ``p1``/``p2`` are the optical powers in the two interferometer arms and
    default to an even split of ``p_in``. ``frontend_tau`` is the RC time
    constant of the electrode's capacitive front end (0 disables it).
    """

    v_pi: float
    phi0: float = 0.0
    p_in: float = 1e-3
    p1: float | None = None
    p2: float | None = None
    drive_mode: DriveMode = DriveMode.SINGLE
    frontend_tau: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.v_pi) and self.v_pi > 0):
            raise ValueError("v_pi must be > 0")
        if not (math.isfinite(self.p_in) and self.p_in > 0):
            raise ValueError("p_in must be > 0")
        if not math.isfinite(self.phi0):
            raise ValueError("phi0 must be finite")
        p1, p2 = self.p1, self.p2
        if p1 is None and p2 is None:
            p1 = p2 = 0.5 * self.p_in
        elif p1 is None:
            p1 = self.p_in - p2
        elif p2 is None:
            p2 = self.p_in - p1
        if p1 < 0 or p2 < 0:
            raise ValueError("branch powers must be >= 0")
        if not math.isclose(p1 + p2, self.p_in, rel_tol=1e-12, abs_tol=0.0):
            raise ValueError(f"p1 + p2 = {p1 + p2!r} must equal p_in = {self.p_in!r}")
        if self.frontend_tau < 0:
            raise ValueError("frontend_tau must be >= 0")
        object.__setattr__(self, "p1", float(p1))
        object.__setattr__(self, "p2", float(p2))
        object.__setattr__(self, "drive_mode", DriveMode(self.drive_mode))

    @property
    def balanced(self) -> bool:
        return self.p1 == self.p2

    @property
    def imbalance(self) -> float:
        """``sqrt(p1 * p2)``, the interference amplitude."""
        return math.sqrt(self.p1 * self.p2)

    @property
    def p_max(self) -> float:
        return 0.5 * self.p_in + self.imbalance

    @property
    def p_min(self) -> float:
        return 0.5 * self.p_in - self.imbalance

    @property
    def extinction_ratio(self) -> float:
        if self.p_min <= 0.0:
            return math.inf
        return self.p_max / self.p_min

    @property
    def extinction_ratio_db(self) -> float:
        er = self.extinction_ratio
        return math.inf if math.isinf(er) else 10.0 * math.log10(er)


def drive_phase(v, params: EomParams):
    """Differential optical phase ``pi * v / v_pi`` imposed by drive voltage ``v``.

    In push-pull mode each arm receives half of the phase with opposite
    signs, so the differential phase is the same as for single drive.
    """
    v = np.asarray(v, dtype=float)
    if params.drive_mode is DriveMode.PUSH_PULL:
        arm1 = np.pi * v / (2.0 * params.v_pi)
        arm2 = -arm1
        return arm1 - arm2
    return np.pi * v / params.v_pi


def mzm_transmittance(v, params: EomParams, phi_drift=0.0):
    """Balanced transmittance ``cos^2(phi0/2 + phi_drift/2 - pi v / (2 v_pi))``.

    Evaluated as ``(1 + cos(2 arg)) / 2`` so the reference points ``T = 1``,
    ``0`` and ``1/2`` come out exact in floating point.
    """
    if not params.balanced:
        raise UnbalancedError("mzm_transmittance is defined for p1 == p2; use mzm_output_power")
    v = np.asarray(v, dtype=float)
    if not np.all(np.isfinite(v)):
        raise ValueError("drive voltage must be finite")
    phase = params.phi0 + np.asarray(phi_drift) - drive_phase(v, params)
    out = 0.5 + 0.5 * np.cos(phase)
    return float(out) if out.ndim == 0 else out


def static_power(v, params: EomParams, phi_drift=0.0):
    """Output power for an already filtered drive (no front-end memory)."""
    phase = params.phi0 + np.asarray(phi_drift) - drive_phase(v, params)
    return 0.5 * params.p_in + params.imbalance * np.cos(phase)


@dataclass
class EomPlant:
    """Stateful discrete-time MZM: RC front end, drift, interference law.

    Calling :meth:`process` on consecutive blocks is equivalent to one call
    on their concatenation (filter memory and drift carry over).
    """

    params: EomParams
    sample_rate_hz: float
    drift: DriftProcess = field(default_factory=DriftProcess)
    v_filtered: float | None = None
    last_drift: np.ndarray = field(default=None, init=False, repr=False)

    def __post_init__(self):
        tau = self.params.frontend_tau
        if tau > 0 and self.sample_rate_hz * tau < 2:
            warnings.warn(
                f"fs * frontend_tau = {self.sample_rate_hz * tau:.3g} < 2; the RC front end is under-sampled",
                RuntimeWarning,
                stacklevel=2,
            )
        self._a = math.exp(-1.0 / (self.sample_rate_hz * tau)) if tau > 0 else 0.0

    def filter_drive(self, v: np.ndarray) -> np.ndarray:
        if self._a == 0.0:
            return v
        a = self._a
        y0 = v[0] if self.v_filtered is None else self.v_filtered
        y, _ = lfilter([1.0 - a], [1.0, -a], v, zi=[a * y0])
        self.v_filtered = float(y[-1])
        return y

    def process(self, v) -> Waveform:
        v = np.asarray(v.samples if isinstance(v, Waveform) else v, dtype=float)
        if not np.all(np.isfinite(v)):
            raise ValueError("drive voltage must be finite")
        vf = self.filter_drive(v)
        phi = self.drift.trajectory(v.size, 1.0 / self.sample_rate_hz)
        self.last_drift = phi
        p = static_power(vf, self.params, phi)
        return Waveform(self.sample_rate_hz, p)


def mzm_output_power(v: Waveform, params: EomParams, drift: DriftProcess | None = None) -> Waveform:
    """Optical output power for drive ``v`` (front end, drift and finite extinction).

    ``drift`` is advanced in place, one step per sample. The RC front end
    starts settled at the first drive sample.
    """
    if drift is None:
        drift = DriftProcess(DriftKind.NONE)
    plant = EomPlant(params, v.sample_rate_hz, drift)
    return plant.process(v)
