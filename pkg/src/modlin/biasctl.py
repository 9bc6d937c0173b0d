"""Bias operating-point servos for the Mach-Zehnder modulator.

Phase convention: the total phase is ``theta = phi0 + phi_drift - pi V / V_pi``
and the output power ``P = P_in / 2 + sqrt(P1 P2) cos(theta)``. MAX is
``theta = 0``, MIN ``pi``, QUAD_PLUS (rising with ``V``) ``pi/2`` and
QUAD_MINUS ``-pi/2``.

With a pilot ``a sin(w k)`` added to the bias the detector sees, per the
Jacobi-Anger expansion with ``beta = pi a / V_pi``,

    fundamental  2 c J1(beta) sin(theta) sin(w k)
    2nd harmonic 2 c J2(beta) cos(theta) cos(2 w k)

so the signed bin amplitudes (referred to the pilot phase) give
``theta = atan2(H1 / J1, -H2 / J2)`` independently of detector gain.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np
from scipy.signal import lfilter
from scipy.special import jv

from modlin.plant.eom import EomParams
from modlin.signal import Waveform

LOCK_BLOCKS = 3


class OperatingPoint(enum.Enum):
    QUAD_PLUS = "QUAD_PLUS"
    QUAD_MINUS = "QUAD_MINUS"
    MIN = "MIN"
    MAX = "MAX"

    @property
    def target_phase(self) -> float:
        return _TARGET[self]


_TARGET = {
    OperatingPoint.QUAD_PLUS: 0.5 * math.pi,
    OperatingPoint.QUAD_MINUS: -0.5 * math.pi,
    OperatingPoint.MAX: 0.0,
    OperatingPoint.MIN: math.pi,
}


def wrap_phase(x):
    """Map to ``[-pi, pi)``."""
    return (np.asarray(x) + math.pi) % (2.0 * math.pi) - math.pi


def total_phase(v, params: EomParams, phi_drift=0.0):
    return params.phi0 + np.asarray(phi_drift) - math.pi * np.asarray(v) / params.v_pi


# -- single-bin analysis -----------------------------------------------------


@dataclass(frozen=True)
class Harmonic:
    """One DFT bin: ``power = |X|^2`` with ``X = sum x e^{-jwk} / N``.

    ``phase`` is relative to the ``n``-th multiple of the pilot phase, and
    ``amplitude`` is the signed in-phase amplitude ``2 |X| cos(phase)``.
    """

    power: float
    phase: float
    amplitude: float


def goertzel(x, f_norm) -> complex:
    """``sum_k x[k] exp(-2 pi j f_norm k)`` by the second-order recursion."""
    x = np.asarray(x, dtype=float)
    w = 2.0 * math.pi * f_norm
    s = lfilter([1.0], [1.0, -2.0 * math.cos(w), 1.0], x)
    n = x.size
    prev = s[-2] if n > 1 else 0.0
    return complex(np.exp(-1j * w * (n - 1)) * (s[-1] - np.exp(-1j * w) * prev))


def harmonic_power(v_fb: Waveform, f_hz, n=1, pilot_phase=-0.5 * math.pi) -> Harmonic:
    """Power and phase of the ``n``-th harmonic of ``f_hz`` in ``v_fb``.

    ``pilot_phase`` is the phase of the pilot written as ``cos(w k + phase)``
    at the first sample; the default ``-pi/2`` is a sine pilot. A pure sine
    pilot of amplitude ``A`` gives ``power = (A/2)^2`` and ``phase = 0`` at
    ``n = 1``.
    """
    n = int(n)
    if n < 1:
        raise ValueError("harmonic number must be >= 1")
    fs = v_fb.sample_rate_hz
    fn = n * float(f_hz)
    if not 0 < fn < 0.5 * fs:
        raise ValueError(f"harmonic {n} of {f_hz} Hz aliases at fs = {fs} Hz")
    if len(v_fb) < 4.0 * fs / fn:
        raise ValueError(f"block of {len(v_fb)} samples spans fewer than 4 periods of {fn} Hz")
    X = goertzel(v_fb.samples, fn / fs) / len(v_fb)
    phase = float(wrap_phase(np.angle(X) - n * pilot_phase)) if X != 0 else 0.0
    mag = abs(X)
    return Harmonic(mag * mag, phase, 2.0 * mag * math.cos(phase))


def detrend_periods(x, period_samples):
    """Remove a straight line fitted through the per-period means.

    Slow bias drift within a block is a ramp; the period means see it
    without pilot content, so the line leaves the harmonics untouched.
    """
    x = np.asarray(x, dtype=float)
    p = int(period_samples)
    n_per = x.size // p
    if p < 1 or n_per < 2:
        return x - np.mean(x)
    means = x[: n_per * p].reshape(n_per, p).mean(axis=1)
    centres = np.arange(n_per) * p + 0.5 * (p - 1)
    slope, icpt = np.polyfit(centres, means, 1)
    return x - (icpt + slope * np.arange(x.size))


# -- servo state -------------------------------------------------------------


@dataclass(frozen=True)
class ServoState:
    """Bias servo state.

    The loop is type 2: ``integrator`` holds the voltage rate and
    ``v_dc += loop_gain * e + integrator`` with ``integrator +=
    loop_gain * integral_ratio * e``. ``window_center`` anchors the
    ``2 V_pi`` wrap window of ``v_dc``.
    """

    v_dc: float
    loop_gain: float = 0.8
    pilot_freq_hz: float = 1e6 / 64
    pilot_amp_v: float = 0.02
    integrator: float = 0.0
    locked: bool = False
    lock_threshold: float = 0.01
    integral_ratio: float = 0.25
    window_center: float | None = None
    in_threshold: int = 0
    phase_err_est: float = math.nan
    h1_power: float = math.nan
    h2_power: float = math.nan

    def __post_init__(self):
        if self.loop_gain < 0:
            raise ValueError("loop_gain must be >= 0")
        if self.window_center is None:
            object.__setattr__(self, "window_center", float(self.v_dc))

    def check(self, params: EomParams):
        if self.pilot_amp_v > 0.05 * params.v_pi * (1 + 1e-12):
            raise ValueError(f"pilot amplitude {self.pilot_amp_v} V exceeds 0.05 V_pi = {0.05 * params.v_pi} V")


def default_servo(params: EomParams, sample_rate_hz, v_dc=0.0, **kw) -> ServoState:
    kw.setdefault("pilot_freq_hz", sample_rate_hz / 64.0)
    kw.setdefault("pilot_amp_v", 0.02 * params.v_pi)
    return ServoState(v_dc=v_dc, **kw)


def pilot_waveform(state: ServoState, n, sample_rate_hz, start_index=0) -> np.ndarray:
    k = np.arange(start_index, start_index + int(n))
    return state.pilot_amp_v * np.sin(2.0 * math.pi * state.pilot_freq_hz * k / sample_rate_hz)


def _close_loop(state: ServoState, err_phase, params: EomParams, **meas) -> ServoState:
    e_v = err_phase * params.v_pi / math.pi
    g = state.loop_gain
    rate = state.integrator + g * state.integral_ratio * e_v
    v = state.v_dc + g * e_v + rate
    lo = state.window_center - params.v_pi
    v = lo + (v - lo) % (2.0 * params.v_pi)
    count = state.in_threshold + 1 if abs(err_phase) < state.lock_threshold else 0
    return replace(
        state,
        v_dc=float(v),
        integrator=float(rate),
        in_threshold=count,
        locked=count >= LOCK_BLOCKS,
        phase_err_est=float(err_phase),
        **meas,
    )


def estimate_phase(state: ServoState, v_fb_block: Waveform, params: EomParams, pilot_phase=-0.5 * math.pi):
    """Total-phase estimate from the pilot fundamental and second harmonic."""
    fs = v_fb_block.sample_rate_hz
    x = detrend_periods(v_fb_block.samples, round(fs / state.pilot_freq_hz))
    blk = v_fb_block.with_samples(x)
    h1 = harmonic_power(blk, state.pilot_freq_hz, 1, pilot_phase)
    h2 = harmonic_power(blk, state.pilot_freq_hz, 2, pilot_phase)
    beta = math.pi * state.pilot_amp_v / params.v_pi
    theta = math.atan2(h1.amplitude / jv(1, beta), -h2.amplitude / jv(2, beta))
    return theta, h1, h2


def pilot_servo_step(state: ServoState, target: OperatingPoint, v_fb_block: Waveform, params: EomParams,
                     pilot_phase=-0.5 * math.pi) -> ServoState:
    """One servo update from a feedback block recorded with the pilot on.

    Near quadrature the error is carried by the second harmonic (zero where
    the curve is locally odd) and its sign by the fundamental; near MIN/MAX
    the roles swap. Both are combined into one phase estimate.
    """
    state.check(params)
    target = OperatingPoint(target)
    theta, h1, h2 = estimate_phase(state, v_fb_block, params, pilot_phase)
    err = float(wrap_phase(theta - target.target_phase))
    return _close_loop(state, err, params, h1_power=h1.power, h2_power=h2.power)


def target_ratio(target: OperatingPoint, params: EomParams) -> float:
    """Output/input power ratio at the operating point."""
    c = params.imbalance / params.p_in
    return 0.5 + c * math.cos(OperatingPoint(target).target_phase)


def power_based_step(state: ServoState, target: OperatingPoint, p_in_monitor, p_out_mean, params: EomParams,
                     probe: Callable[[float], float] | None = None, probe_step=None) -> ServoState:
    """One update from mean input/output power monitors.

    ``cos(theta)`` follows from the ratio; the sign of ``sin(theta)`` (slope
    of the transfer curve) comes from ``probe``, a callable returning the
    ratio at a trial bias ``v_dc + eps``. Without a probe the slope is
    assumed to have the target's sign (positive for MIN/MAX).
    """
    if not p_in_monitor > 0:
        raise ValueError("p_in_monitor must be > 0")
    target = OperatingPoint(target)
    ratio = float(p_out_mean) / float(p_in_monitor)
    c = params.imbalance / params.p_in
    if c == 0:
        raise ValueError("no interference (p1 * p2 = 0); the ratio carries no phase")
    cos_t = min(1.0, max(-1.0, (ratio - 0.5) / c))
    mag = math.acos(cos_t)
    if probe is not None:
        eps = 1e-3 * params.v_pi if probe_step is None else probe_step
        slope = (float(probe(state.v_dc + eps)) - ratio) / eps
        sign = 1.0 if slope >= 0 else -1.0
    else:
        sign = -1.0 if target is OperatingPoint.QUAD_MINUS else 1.0
    theta = sign * mag
    err = float(wrap_phase(theta - target.target_phase))
    return _close_loop(state, err, params)


# -- block simulation --------------------------------------------------------

LOG_FIELDS = ("block", "v_dc", "phase_err_est", "h1_power", "h2_power", "locked")


def log_record(block, state: ServoState) -> dict:
    return {
        "block": int(block),
        "v_dc": state.v_dc,
        "phase_err_est": state.phase_err_est,
        "h1_power": state.h1_power,
        "h2_power": state.h2_power,
        "locked": int(state.locked),
    }


def run_pilot_servo(plant, chain, state: ServoState, target, blocks, block_size, true_phase_log=None):
    """Advance an :class:`EomPlant` / :class:`FeedbackChain` pair for ``blocks`` servo blocks.

    Returns ``(state, log)``. If ``true_phase_log`` is a list, the true
    phase error (mean over each block, wrapped) is appended to it.
    """
    fs = plant.sample_rate_hz
    target = OperatingPoint(target)
    log = []
    k0 = 0
    for b in range(int(blocks)):
        v = state.v_dc + pilot_waveform(state, block_size, fs, k0)
        p = plant.process(v)
        v_fb = chain.process(p.samples)
        if true_phase_log is not None:
            th = total_phase(state.v_dc, plant.params, plant.last_drift)
            true_phase_log.append(float(np.max(np.abs(wrap_phase(th - target.target_phase)))))
        phase0 = 2.0 * math.pi * state.pilot_freq_hz * k0 / fs - 0.5 * math.pi
        state = pilot_servo_step(state, target, v_fb, plant.params, pilot_phase=phase0)
        log.append(log_record(b, state))
        k0 += block_size
    return state, log
