"""Acousto-optic modulator physics and a discrete-time power-envelope plant."""
from __future__ import annotations

import enum
import functools
import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize
from scipy.signal import butter, lfilter

from modlin.signal import Waveform

# 10-90 % rise of the diffracted intensity, in units of the transit time
RISE_TIME_FACTOR = 0.85
# small-signal half-intensity modulation frequency, times the transit time
MODULATION_BANDWIDTH_FACTOR = 0.7


class Regime(enum.Enum):
    RAMAN_NATH = "RAMAN_NATH"
    NEAR_BRAGG = "NEAR_BRAGG"
    BRAGG = "BRAGG"


@dataclass(frozen=True)
class AcoustoOpticMaterial:
    n: float
    p_pe: float
    rho: float
    v_a: float

    def __post_init__(self):
        for k in ("n", "p_pe", "rho", "v_a"):
            v = getattr(self, k)
            if not (math.isfinite(v) and v > 0):
                raise ValueError(f"material.{k} must be > 0, got {v!r}")


@dataclass(frozen=True)
class AomGeometry:
    l: float
    h: float
    d: float

    def __post_init__(self):
        for k in ("l", "h", "d"):
            v = getattr(self, k)
            if not (math.isfinite(v) and v > 0):
                raise ValueError(f"geometry.{k} must be > 0, got {v!r}")


@dataclass(frozen=True)
class AomParams:
    """Bulk travelling-wave AOM.

    ``drive_gain`` converts the squared RF envelope voltage into acoustic
    power [W/V^2]; ``transducer_bw_hz`` is the -3 dB bandwidth of the
    transducer/matching surrogate.
    """

    material: AcoustoOpticMaterial
    geometry: AomGeometry
    lambda0: float
    f0_hz: float
    drive_gain: float
    transducer_bw_hz: float

    def __post_init__(self):
        for k in ("lambda0", "f0_hz", "drive_gain"):
            v = getattr(self, k)
            if not (math.isfinite(v) and v > 0):
                raise ValueError(f"{k} must be > 0, got {v!r}")
        if not self.transducer_bw_hz > 0:
            raise ValueError("transducer_bw_hz must be > 0 (inf leaves the transducer wide open)")

    @property
    def big_lambda(self) -> float:
        """Acoustic wavelength ``v_a / f0``."""
        return self.material.v_a / self.f0_hz

    @property
    def tau_a(self) -> float:
        """Acoustic transit time across the optical beam."""
        return self.geometry.d / self.material.v_a

    @property
    def m2(self) -> float:
        return figure_of_merit_m2(self.material)

    def drive_for_eta(self, eta) -> float:
        """RF envelope voltage whose steady state produces ``eta``."""
        p_a = eta / eta_from_acoustic_power(1.0, self)
        return math.sqrt(p_a / self.drive_gain)


def _positive(**kw):
    for k, v in kw.items():
        if not (math.isfinite(v) and v > 0):
            raise ValueError(f"{k} must be > 0, got {v!r}")


def figure_of_merit_m2(material: AcoustoOpticMaterial) -> float:
    """Acousto-optic figure of merit ``n^6 p^2 / (rho v_a^3)`` [s^3/kg]."""
    _positive(n=material.n, p_pe=material.p_pe, rho=material.rho, v_a=material.v_a)
    return material.n**6 * material.p_pe**2 / (material.rho * material.v_a**3)


def delta_n(p_a, m2, l, h) -> float:
    """Peak refractive-index change ``sqrt(M2 * p_a / (2 l h))`` of the acoustic column."""
    _positive(l=l, h=h)
    if p_a < 0:
        raise ValueError("acoustic power must be >= 0")
    return math.sqrt(0.5 * m2 * p_a / (l * h))


def regime_classify(l, lambda_in_medium, big_lambda, threshold_ratio=10.0) -> Regime:
    """Compare the interaction length with ``Lambda^2 / lambda``.

    Shorter than the characteristic length by more than ``threshold_ratio``
    is Raman-Nath, longer by more than ``threshold_ratio`` is Bragg.
    """
    _positive(l=l, lambda_in_medium=lambda_in_medium, big_lambda=big_lambda)
    if not threshold_ratio > 1:
        raise ValueError("threshold_ratio must be > 1")
    l_char = big_lambda**2 / lambda_in_medium
    if l < l_char / threshold_ratio:
        return Regime.RAMAN_NATH
    if l > l_char * threshold_ratio:
        return Regime.BRAGG
    return Regime.NEAR_BRAGG


def bessel_j0(x):
    """Bessel function of the first kind, order 0.

    Miller's backward recurrence normalized with
    ``J0 + 2 * sum J_2k = 1``; accurate to a few ulps of 1 on ``|x| <= 100``.
    """
    x = np.abs(np.asarray(x, dtype=float))
    out = np.empty_like(x)
    flat_x = x.reshape(-1)
    flat = out.reshape(-1)
    for i, xi in enumerate(flat_x):
        flat[i] = _j0_scalar(float(xi))
    return float(out) if out.ndim == 0 else out


def _j0_scalar(x: float) -> float:
    if x == 0.0:
        return 1.0
    if x > 100.0:
        raise ValueError("bessel_j0 supports |x| <= 100")
    # start order well above x; even start keeps the normalization sum aligned
    m = 2 * ((int(x) + 30 + int(3.0 * math.sqrt(x + 1.0) * 4)) // 2)
    j_next = 0.0
    j_cur = 1e-300
    norm = 0.0
    j0 = 0.0
    for k in range(m, 0, -1):
        j_prev = 2.0 * k / x * j_cur - j_next
        j_next, j_cur = j_cur, j_prev
        if (k - 1) % 2 == 0 and k - 1 > 0:
            norm += 2.0 * j_cur
        if abs(j_cur) > 1e250:
            j_cur *= 1e-250
            j_next *= 1e-250
            norm *= 1e-250
        if k - 1 == 0:
            j0 = j_cur
    norm += j0
    return j0 / norm


def raman_nath_zero_order(delta_phi):
    """Zero-order intensity ``|J0(delta_phi)|^2`` of a thin phase grating."""
    j = bessel_j0(delta_phi)
    return j * j


def diffraction_angles(m, lambda0, big_lambda):
    """Raman-Nath order angles ``arcsin(m lambda0 / Lambda)``."""
    _positive(lambda0=lambda0, big_lambda=big_lambda)
    s = np.asarray(m, dtype=float) * lambda0 / big_lambda
    if np.any(np.abs(s) > 1.0):
        raise ValueError("evanescent order: |m lambda0 / Lambda| > 1")
    out = np.arcsin(s)
    return float(out) if out.ndim == 0 else out


def bragg_angle(lambda0, n, big_lambda) -> float:
    """Bragg incidence angle ``arcsin(lambda0 / (2 n Lambda))`` (inside the medium)."""
    if lambda0 < 0:
        raise ValueError("lambda0 must be >= 0")
    _positive(n=n, big_lambda=big_lambda)
    s = lambda0 / (2.0 * n * big_lambda)
    if s > 1.0:
        raise ValueError("no Bragg solution: lambda0 / (2 n Lambda) > 1")
    return math.asin(s)


def bragg_efficiency(eta, psi=0.0):
    """First-order diffraction efficiency ``sin^2(sqrt(eta)) sinc^2(pi psi)``."""
    eta = np.asarray(eta, dtype=float)
    if np.any(eta < 0):
        raise ValueError("eta must be >= 0")
    s = np.sin(np.sqrt(eta))
    # np.sinc(psi) == sin(pi psi) / (pi psi)
    sc = np.sinc(np.asarray(psi, dtype=float))
    out = s * s * sc * sc
    return float(out) if out.ndim == 0 else out


def eta_from_acoustic_power(p_a, params: AomParams):
    """Coupling strength ``pi^2 / (2 lambda0^2) * M2 * p_a * l / h``."""
    g = params.geometry
    k = math.pi**2 / (2.0 * params.lambda0**2) * params.m2 * g.l / g.h
    out = k * np.asarray(p_a, dtype=float)
    return float(out) if out.ndim == 0 else out


def phase_mismatch_psi(theta_i, params: AomParams, n_i, n_d, big_lambda=None):
    """Normalized momentum mismatch at incidence angle ``theta_i``.

    ``(l / (2 lambda0 n_d)) * ((lambda0/Lambda)^2 - 2 n_i (lambda0/Lambda) sin(theta_i) + n_i^2 - n_d^2)``
    """
    _positive(n_i=n_i, n_d=n_d)
    lam = params.big_lambda if big_lambda is None else big_lambda
    q = params.lambda0 / lam
    l = params.geometry.l
    out = l / (2.0 * params.lambda0 * n_d) * (q * q - 2.0 * n_i * q * np.sin(theta_i) + n_i * n_i - n_d * n_d)
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class AomGeometryReport:
    tau_a: float
    delta_theta0: float
    delta_theta_a: float
    a_ratio: float
    f3db_hz: float
    f3db_in_table: bool
    f0_ok: bool


def aom_geometry_report(params: AomParams) -> AomGeometryReport:
    """Transit time, divergences, divergence ratio, modulation bandwidth, carrier check.

    The modulation bandwidth is tabulated only for ``a < 0.67`` (0.75 / tau)
    and ``0.67 < a < 1.5`` (0.7 / tau). Outside, the 0.7 / tau value is
    reported with ``f3db_in_table = False``.
    """
    n = params.material.n
    d = params.geometry.d
    l = params.geometry.l
    lam = params.big_lambda
    tau = params.tau_a
    dth0 = 4.0 * params.lambda0 / (math.pi * n * d)
    dtha = lam / l
    a = dth0 / dtha
    if a < 0.67:
        f3db, in_table = 0.75 / tau, True
    elif a < 1.5:
        f3db, in_table = 0.7 / tau, True
    else:
        f3db, in_table = 0.7 / tau, False
    f0_ok = params.f0_hz > 8.0 / (math.pi * tau)
    return AomGeometryReport(tau, dth0, dtha, a, f3db, in_table, f0_ok)


# -- transit-time memory ----------------------------------------------------


def _kernel(sigma_s, tail_s, fs, span_s):
    n = int(round(span_s * fs))
    t = np.arange(n + 1) / fs
    core = np.exp(-0.5 * ((t - 3.0 * sigma_s) / sigma_s) ** 2)
    tail = np.exp(-t / tail_s)
    w = np.convolve(core, tail)[: n + 1]
    return w / np.sum(w)


def step_rise_time(step_response, fs, lo=0.1, hi=0.9) -> float:
    """10-90 % rise of a monotone step response normalized to its final value, linear interpolation."""
    s = np.asarray(step_response, dtype=float)
    s = s / s[-1]
    idx = np.arange(s.size) / fs
    i_lo = int(np.argmax(s >= lo))
    i_hi = int(np.argmax(s >= hi))

    def cross(i, level):
        if i == 0:
            return 0.0
        s0, s1 = s[i - 1], s[i]
        return idx[i - 1] + (level - s0) / (s1 - s0) / fs

    return cross(i_hi, hi) - cross(i_lo, lo)


def half_intensity_frequency(kernel, fs) -> float:
    """Lowest frequency where the kernel's magnitude response falls to 0.5."""
    kernel = np.asarray(kernel, dtype=float)
    k = np.arange(kernel.size)

    def mag(f):
        return abs(np.sum(kernel * np.exp(-2j * np.pi * f / fs * k)))

    grid = np.linspace(0.0, fs / 2, 4097)
    mags = np.abs(np.exp(-2j * np.pi * np.outer(grid / fs, k)) @ kernel)
    i = int(np.argmax(mags < 0.5))
    if i == 0:
        return math.inf
    return optimize.brentq(lambda f: mag(f) - 0.5, grid[i - 1], grid[i])


@functools.lru_cache(maxsize=64)
def transit_kernel(tau_a, fs) -> np.ndarray:
    """FIR weights of the acoustic transit memory, spanning ``2 tau_a``.

    A Gaussian core (beam profile swept by the acoustic wavefront) convolved
    with a one-pole tail (transducer response time). The two widths are
    solved so that a step in ``eta`` rises 10-90 % in ``0.85 tau_a`` and the
    small-signal response halves at ``0.7 / tau_a``.
    """
    if fs * tau_a < 8.0 - 1e-9:
        raise ValueError(f"fs * tau_a = {fs * tau_a:.3g}; need >= 8 samples per transit time")
    target_rise = RISE_TIME_FACTOR * tau_a
    target_f = MODULATION_BANDWIDTH_FACTOR / tau_a

    def residual(p):
        w = _kernel(p[0] * tau_a, p[1] * tau_a, fs, 2.0 * tau_a)
        return [
            step_rise_time(np.cumsum(w), fs) / target_rise - 1.0,
            half_intensity_frequency(w, fs) / target_f - 1.0,
        ]

    sol = optimize.least_squares(residual, [0.05, 0.38], bounds=([0.5 / (fs * tau_a) / 3, 0.05], [0.5, 2.0]), xtol=1e-12, ftol=1e-12)
    w = _kernel(sol.x[0] * tau_a, sol.x[1] * tau_a, fs, 2.0 * tau_a)
    w.setflags(write=False)
    return w


@dataclass
class AomPlant:
    """Stateful AOM power-envelope plant.

    Per sample: acoustic power ``drive_gain * v^2`` through a second-order
    transducer low-pass, coupling ``eta``, transit-time FIR on ``eta``, then
    ``p_in * sin^2(sqrt(eta))``. Consecutive :meth:`process` calls behave as
    one call on the concatenated drive.
    """

    params: AomParams
    p_in: float
    sample_rate_hz: float

    def __post_init__(self):
        fs = self.sample_rate_hz
        self.kernel = transit_kernel(self.params.tau_a, fs)
        bw = self.params.transducer_bw_hz
        if bw < 0.45 * fs:
            self._b, self._a = butter(2, bw / (0.5 * fs))
        else:
            self._b, self._a = np.array([1.0]), np.array([1.0])
        self._zi = np.zeros(max(len(self._a), len(self._b)) - 1)
        self._eta_hist = np.zeros(self.kernel.size - 1)

    def process(self, v) -> Waveform:
        v = np.asarray(v.samples if isinstance(v, Waveform) else v, dtype=float)
        if np.any(v < 0) or not np.all(np.isfinite(v)):
            raise ValueError("RF envelope must be finite and >= 0")
        p_a = self.params.drive_gain * v * v
        if self._zi.size:
            p_a, self._zi = lfilter(self._b, self._a, p_a, zi=self._zi)
            p_a = np.maximum(p_a, 0.0)
        eta = eta_from_acoustic_power(p_a, self.params)
        eta = np.atleast_1d(eta)
        full = np.concatenate([self._eta_hist, eta])
        eta_mem = np.convolve(full, self.kernel, mode="valid")
        if self._eta_hist.size:
            self._eta_hist = full[-self._eta_hist.size :]
        s = np.sin(np.sqrt(eta_mem))
        return Waveform(self.sample_rate_hz, self.p_in * s * s)


def aom_output_power(v_rf_envelope: Waveform, p_in, params: AomParams) -> Waveform:
    """Diffracted first-order power for an RF envelope drive, from rest."""
    return AomPlant(params, p_in, v_rf_envelope.sample_rate_hz).process(v_rf_envelope)
