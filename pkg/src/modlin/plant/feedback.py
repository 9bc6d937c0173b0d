"""Beam splitter, photodiode and ADC chain feeding the adaptation algorithm."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import lfilter

from modlin.signal import Waveform


@dataclass(frozen=True)
class FeedbackPath:
    """Splitter ratio, detector responsivity and ADC settings.

    ``r_split`` is the power ratio ``P_fb / P_target``. ``lpf_cutoff_hz`` of
    ``None`` (or at/above Nyquist) leaves the anti-alias filter open.
    """

    r_split: float = 0.1
    responsivity_k: float = 1e4
    noise_sigma: float = 0.0
    lpf_cutoff_hz: float | None = None
    adc_bits: int = 14
    adc_fullscale: float = 1.0
    adc_rate_hz: float | None = None
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.r_split < 1.0:
            raise ValueError("r_split must lie in (0, 1)")
        if not self.responsivity_k > 0:
            raise ValueError("responsivity_k must be > 0")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if int(self.adc_bits) < 4:
            raise ValueError("adc_bits must be >= 4")
        if not self.adc_fullscale > 0:
            raise ValueError("adc_fullscale must be > 0")
        if self.lpf_cutoff_hz is not None and not self.lpf_cutoff_hz > 0:
            raise ValueError("lpf_cutoff_hz must be > 0 or None")

    @property
    def lsb(self) -> float:
        return self.adc_fullscale / (2 ** int(self.adc_bits) - 1)

    def split(self, p_out):
        """Return ``(p_target, p_fb)``; their sum reproduces ``p_out`` exactly.

        ``p_target = p_out / (1 + r)`` and ``p_fb = p_out - p_target``; since
        ``r < 1`` the subtraction is exact (Sterbenz).
        """
        p_out = np.asarray(p_out, dtype=float)
        p_target = p_out / (1.0 + self.r_split)
        return p_target, p_out - p_target

    def volts_per_target_watt(self) -> float:
        """Ideal ``V_fb / P_target`` of the chain."""
        return self.responsivity_k * self.r_split

    def quantize(self, v):
        code = np.clip(np.rint(np.asarray(v) / self.lsb), 0, 2 ** int(self.adc_bits) - 1)
        return code * self.lsb


class FeedbackChain:
    """Stateful feedback measurement (filter memory, noise stream, decimation phase)."""

    def __init__(self, path: FeedbackPath, sample_rate_hz):
        self.path = path
        self.sample_rate_hz = float(sample_rate_hz)
        rate = self.sample_rate_hz if path.adc_rate_hz is None else float(path.adc_rate_hz)
        if rate > self.sample_rate_hz:
            raise ValueError("adc_rate_hz must not exceed the simulation rate")
        ratio = self.sample_rate_hz / rate
        if abs(ratio - round(ratio)) > 1e-9 * ratio:
            raise ValueError(f"sample rate / adc rate = {ratio!r} is not an integer")
        self.decimation = int(round(ratio))
        self.adc_rate_hz = self.sample_rate_hz / self.decimation
        fc = path.lpf_cutoff_hz
        if fc is None or fc >= 0.5 * self.sample_rate_hz:
            self._a = 0.0
        else:
            self._a = math.exp(-2.0 * math.pi * fc / self.sample_rate_hz)
        self._y = None
        self._phase = 0
        self._rng = np.random.default_rng(path.seed)

    def analog(self, p_out) -> np.ndarray:
        """Detector voltage at the simulation rate, before sampling."""
        _, p_fb = self.path.split(p_out)
        v = self.path.responsivity_k * p_fb
        if self._a:
            a = self._a
            y0 = v[0] if self._y is None else self._y
            v, _ = lfilter([1.0 - a], [1.0, -a], v, zi=[a * y0])
            self._y = float(v[-1])
        if self.path.noise_sigma:
            v = v + self.path.noise_sigma * self._rng.standard_normal(v.size)
        return v

    def process(self, p_out) -> Waveform:
        p = np.asarray(p_out.samples if isinstance(p_out, Waveform) else p_out, dtype=float)
        v = self.analog(p)
        take = np.arange(self._phase, v.size, self.decimation)
        self._phase = (self._phase - v.size) % self.decimation
        if take.size == 0:
            raise ValueError("block shorter than one ADC sample period")
        return Waveform(self.adc_rate_hz, self.path.quantize(v[take]))


def feedback_measure(p_out: Waveform, path: FeedbackPath) -> Waveform:
    """Photodiode voltage samples ``V_fb[k]`` for modulator output ``p_out``."""
    return FeedbackChain(path, p_out.sample_rate_hz).process(p_out)
