"""Uniformly sampled waveforms, test/target waveform generators and error metrics.

A :class:`Waveform` carries everything that flows through the linearization
loop: desired shapes, drive voltages, optical powers and ADC feedback samples.
"""
from __future__ import annotations

import enum
import io
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "Waveform",
    "MetricKind",
    "ErrorMetric",
    "EstimationKind",
    "gen_pulse",
    "gen_pulse_train",
    "gen_estimation_waveform",
    "nmse_db",
    "max_abs_error",
    "best_scale",
    "write_csv",
    "read_csv",
    "write_binary",
    "read_binary",
]


@dataclass(frozen=True, eq=False)
class Waveform:
    """Real-valued sequence sampled at ``sample_rate_hz``.

    ``warmup`` counts leading samples computed from zero-padded history
    (set by model evaluation); it is bookkeeping only and never alters the
    samples.
    """

    sample_rate_hz: float
    samples: np.ndarray
    warmup: int = field(default=0)

    def __post_init__(self):
        fs = float(self.sample_rate_hz)
        if not math.isfinite(fs) or fs <= 0:
            raise ValueError(f"sample_rate_hz must be positive and finite, got {self.sample_rate_hz!r}")
        x = np.array(self.samples, dtype=np.float64).reshape(-1)
        if x.size < 1:
            raise ValueError("a waveform needs at least one sample")
        if not np.all(np.isfinite(x)):
            raise ValueError("waveform samples must be finite")
        x.setflags(write=False)
        object.__setattr__(self, "sample_rate_hz", fs)
        object.__setattr__(self, "samples", x)
        object.__setattr__(self, "warmup", int(self.warmup))

    def __len__(self):
        return self.samples.size

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.samples, dtype=dtype)

    @property
    def dt(self) -> float:
        return 1.0 / self.sample_rate_hz

    @property
    def duration_s(self) -> float:
        return len(self) / self.sample_rate_hz

    def times(self) -> np.ndarray:
        return np.arange(len(self)) / self.sample_rate_hz

    def energy(self) -> float:
        return float(np.sum(self.samples * self.samples))

    def with_samples(self, samples, warmup=0) -> "Waveform":
        return Waveform(self.sample_rate_hz, samples, warmup=warmup)

    def check_rate(self, other: "Waveform"):
        """Raise unless ``other`` shares this waveform's sample rate exactly."""
        if other.sample_rate_hz != self.sample_rate_hz:
            raise ValueError(
                f"sample rate mismatch: {self.sample_rate_hz!r} Hz vs {other.sample_rate_hz!r} Hz"
            )

    def same_as(self, other: "Waveform") -> bool:
        return (
            self.sample_rate_hz == other.sample_rate_hz
            and self.samples.shape == other.samples.shape
            and np.array_equal(self.samples, other.samples)
        )


class MetricKind(enum.Enum):
    NMSE_DB = "NMSE_DB"
    MAX_ABS = "MAX_ABS"


@dataclass(frozen=True)
class ErrorMetric:
    kind: MetricKind
    value: float

    def __float__(self):
        return float(self.value)

    @property
    def exact(self) -> bool:
        """True for the exact-equality sentinel of NMSE (-inf dB)."""
        return self.kind is MetricKind.NMSE_DB and self.value == -math.inf


class EstimationKind(enum.Enum):
    AMP_SWEEP = "AMP_SWEEP"
    MULTITONE = "MULTITONE"
    CHIRP = "CHIRP"
    PULSES = "PULSES"


def _check_duration(name, value):
    value = float(value)
    if not math.isfinite(value) or value < 0:
        raise ValueError(f"{name} must be finite and >= 0, got {value!r}")
    return value


def _check_rate(sample_rate_hz):
    fs = float(sample_rate_hz)
    if not math.isfinite(fs) or fs <= 0:
        raise ValueError(f"sample_rate_hz must be positive and finite, got {sample_rate_hz!r}")
    return fs


def gen_pulse(amplitude, t_rise, t_hold, t_fall, sample_rate_hz, guard_samples=16) -> Waveform:
    """Trapezoidal pulse with raised-cosine edges.

    Parameters
    ----------
    amplitude : float
        Peak value in [0, 1].
    t_rise, t_hold, t_fall : float
        Edge and plateau durations in seconds. Each is rounded to a whole
        number of samples.
    sample_rate_hz : float
        Sample rate.
    guard_samples : int
        Zero samples prepended and appended.

    Returns
    -------
    Waveform
        ``guard | rise | hold | fall | guard``. The rise sample ``i`` equals
        ``amplitude * (1 - cos(pi * i / n_rise)) / 2`` for ``i = 0..n_rise-1``;
        the fall mirrors it and ends on an exact zero.
    """
    amplitude = float(amplitude)
    if not math.isfinite(amplitude) or not 0.0 <= amplitude <= 1.0:
        raise ValueError(f"amplitude must lie in [0, 1], got {amplitude!r}")
    fs = _check_rate(sample_rate_hz)
    t_rise = _check_duration("t_rise", t_rise)
    t_hold = _check_duration("t_hold", t_hold)
    t_fall = _check_duration("t_fall", t_fall)
    if int(guard_samples) < 0:
        raise ValueError("guard_samples must be >= 0")

    n_rise = int(round(t_rise * fs))
    n_hold = int(round(t_hold * fs))
    n_fall = int(round(t_fall * fs))
    guard = np.zeros(int(guard_samples))
    rise = 0.5 * amplitude * (1.0 - np.cos(np.pi * np.arange(n_rise) / max(n_rise, 1)))
    hold = np.full(n_hold, amplitude)
    fall = 0.5 * amplitude * (1.0 + np.cos(np.pi * np.arange(1, n_fall + 1) / max(n_fall, 1)))
    x = np.concatenate([guard, rise, hold, fall, guard])
    if x.size == 0:
        x = np.zeros(1)
    return Waveform(fs, x)


def gen_pulse_train(pulse: Waveform, count, gap) -> Waveform:
    """``count`` copies of ``pulse`` separated by ``round(gap * fs)`` zeros."""
    count = int(count)
    if count < 1:
        raise ValueError("count must be >= 1")
    gap = _check_duration("gap", gap)
    n_gap = int(round(gap * pulse.sample_rate_hz))
    parts = []
    spacer = np.zeros(n_gap)
    for i in range(count):
        if i:
            parts.append(spacer)
        parts.append(pulse.samples)
    return Waveform(pulse.sample_rate_hz, np.concatenate(parts))


# Square roots of distinct primes are pairwise incommensurate.
_MULTITONE_PRIMES = (2, 3, 5, 7, 11, 13, 17, 19, 23, 29)


def gen_estimation_waveform(kind, span, duration, sample_rate_hz, seed=0) -> Waveform:
    """Excitation for parameter estimation.

    ``AMP_SWEEP`` ramps linearly from ``span[0]`` to ``span[1]`` and back,
    exposing hysteresis. ``MULTITONE`` sums ten incommensurate tones up to
    ``fs / 16`` with seeded random phases and maps the result onto ``span``.
    ``CHIRP`` is a sinusoid centred on the span whose instantaneous
    frequency rises linearly from 0 to ``fs / 8``. ``PULSES`` is a seeded
    train of raised-cosine pulses standing on ``span[0]`` with peaks drawn
    uniformly from the span, edges of 16-80 samples and plateaus of 20-120
    samples, matching the pulse-shaped operation class.
    """
    kind = EstimationKind(kind) if not isinstance(kind, EstimationKind) else kind
    lo, hi = (float(v) for v in span)
    if not (0.0 <= lo <= hi <= 1.0):
        raise ValueError(f"span must satisfy 0 <= lo <= hi <= 1, got {span!r}")
    fs = _check_rate(sample_rate_hz)
    duration = float(duration)
    if not math.isfinite(duration) or duration <= 0:
        raise ValueError("duration must be > 0")
    n = max(int(round(duration * fs)), 2)

    if kind is EstimationKind.AMP_SWEEP:
        n_up = n - n // 2
        up = np.linspace(lo, hi, n_up)
        x = np.concatenate([up, up[::-1][: n - n_up]])
        return Waveform(fs, x)

    if kind is EstimationKind.PULSES:
        rng = np.random.default_rng(seed)
        parts, total = [], 0
        while total < n:
            a = rng.uniform(0.0, 1.0)
            n_r, n_h, n_f = rng.integers(16, 81), rng.integers(20, 121), rng.integers(16, 81)
            p = gen_pulse(a, n_r / fs, n_h / fs, n_f / fs, fs, guard_samples=8).samples
            parts.append(p)
            total += p.size
        x = lo + (hi - lo) * np.concatenate(parts)[:n]
        return Waveform(fs, x)

    centre = 0.5 * (lo + hi)
    half = 0.5 * (hi - lo)
    t = np.arange(n) / fs
    if kind is EstimationKind.MULTITONE:
        rng = np.random.default_rng(seed)
        phases = rng.uniform(0.0, 2.0 * np.pi, size=len(_MULTITONE_PRIMES))
        f_max = fs / 16.0
        s = np.zeros(n)
        for p, ph in zip(_MULTITONE_PRIMES, phases):
            f = f_max * math.sqrt(p / _MULTITONE_PRIMES[-1])
            s += np.cos(2.0 * np.pi * f * t + ph)
        s /= np.max(np.abs(s))
    else:
        f_end = fs / 8.0
        s = np.sin(np.pi * f_end * t * t / (n / fs))
    x = np.clip(centre + half * s, lo, hi)
    return Waveform(fs, x)


def _overlap(reference: Waveform, actual: Waveform, alignment: int):
    reference.check_rate(actual)
    a = int(alignment)
    r = reference.samples
    x = actual.samples
    # reference[n] is compared with actual[n + a]
    start = max(0, -a)
    stop = min(r.size, x.size - a)
    if stop - start < 8:
        raise ValueError(f"overlap after alignment {a} is {max(stop - start, 0)} samples; need >= 8")
    return r[start:stop], x[start + a : stop + a]


def nmse_db(reference: Waveform, actual: Waveform, alignment=0) -> ErrorMetric:
    """Normalized mean squared error ``10 log10(sum (r - a)^2 / sum r^2)``.

    ``actual[n + alignment]`` is compared with ``reference[n]`` over the
    overlap. Exactly equal sequences give ``-inf``.
    """
    r, x = _overlap(reference, actual, alignment)
    ref_energy = float(np.sum(r * r))
    if ref_energy == 0.0:
        raise ValueError("reference has zero energy over the overlap; NMSE undefined")
    d = r - x
    err = float(np.sum(d * d))
    if err == 0.0:
        return ErrorMetric(MetricKind.NMSE_DB, -math.inf)
    return ErrorMetric(MetricKind.NMSE_DB, 10.0 * math.log10(err / ref_energy))


def max_abs_error(reference: Waveform, actual: Waveform, alignment=0) -> ErrorMetric:
    r, x = _overlap(reference, actual, alignment)
    return ErrorMetric(MetricKind.MAX_ABS, float(np.max(np.abs(r - x))))


def best_scale(reference: Waveform, actual: Waveform) -> float:
    """Least-squares gain ``C`` minimizing ``||actual - C * reference||^2``."""
    reference.check_rate(actual)
    if len(reference) != len(actual):
        raise ValueError("best_scale needs equal-length waveforms")
    r = reference.samples
    den = float(np.dot(r, r))
    if den == 0.0:
        raise ValueError("reference has zero energy")
    return float(np.dot(r, actual.samples)) / den


# -- serialization ---------------------------------------------------------

CSV_HEADER = "index,time_s,value"


def write_csv(waveform: Waveform, path):
    """Write ``index,time_s,value`` rows.

    The sample rate travels in a leading ``# sample_rate_hz=`` comment so the
    file round-trips exactly; values use the shortest repr that parses back
    to the same double.
    """
    buf = io.StringIO()
    buf.write(f"# sample_rate_hz={waveform.sample_rate_hz!r}\n")
    buf.write(CSV_HEADER + "\n")
    fs = waveform.sample_rate_hz
    for i, v in enumerate(waveform.samples.tolist()):
        buf.write(f"{i},{i / fs!r},{v!r}\n")
    Path(path).write_text(buf.getvalue())


def read_csv(path, sample_rate_hz=None) -> Waveform:
    fs = None if sample_rate_hz is None else float(sample_rate_hz)
    values = []
    times = []
    header_seen = False
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, _, val = line[1:].strip().partition("=")
                if key.strip() == "sample_rate_hz" and fs is None:
                    fs = float(val)
                continue
            if not header_seen:
                if line != CSV_HEADER:
                    raise ValueError(f"{path}:{lineno}: expected header {CSV_HEADER!r}, got {line!r}")
                header_seen = True
                continue
            parts = line.split(",")
            if len(parts) != 3:
                raise ValueError(f"{path}:{lineno}: expected 3 fields, got {len(parts)}")
            times.append(float(parts[1]))
            values.append(float(parts[2]))
    if not header_seen:
        raise ValueError(f"{path}: missing header {CSV_HEADER!r}")
    if fs is None:
        if len(times) < 2 or times[1] <= 0:
            raise ValueError(f"{path}: cannot infer sample rate; pass sample_rate_hz")
        fs = 1.0 / times[1]
    return Waveform(fs, np.array(values))


def write_binary(waveform: Waveform, path):
    """Little-endian float64 sample rate followed by float64 samples."""
    with open(path, "wb") as fh:
        fh.write(struct.pack("<d", waveform.sample_rate_hz))
        fh.write(waveform.samples.astype("<f8").tobytes())


def read_binary(path) -> Waveform:
    raw = Path(path).read_bytes()
    if len(raw) < 16 or len(raw) % 8:
        raise ValueError(f"{path}: not a float64 waveform file")
    (fs,) = struct.unpack("<d", raw[:8])
    return Waveform(fs, np.frombuffer(raw[8:], dtype="<f8").astype(np.float64))
