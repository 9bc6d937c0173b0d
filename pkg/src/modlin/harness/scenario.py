"""Scenario documents: versioned YAML schema, validation with line diagnostics, round-trip dump."""
from __future__ import annotations

import dataclasses
import enum
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from modlin.biasctl import OperatingPoint
from modlin.estimator import PolicyKind, UpdatePolicy
from modlin.models import ModelFamily, ModelStructure
from modlin.plant.aom import AcoustoOpticMaterial, AomGeometry, AomParams
from modlin.plant.drift import DriftKind
from modlin.plant.eom import DriveMode, EomParams
from modlin.plant.feedback import FeedbackPath
from modlin.signal import (
    EstimationKind,
    Waveform,
    gen_estimation_waveform,
    gen_pulse,
    gen_pulse_train,
    read_binary,
    read_csv,
)

SCHEMA_VERSION = 1


class ScenarioError(ValueError):
    """Invalid scenario document; carries the offending field path and source line."""

    def __init__(self, message, path=(), line=None):
        self.path = tuple(path)
        self.line = line
        where = ".".join(str(p) for p in self.path)
        prefix = f"line {line}: " if line else ""
        prefix += f"{where}: " if where else ""
        super().__init__(prefix + message)


class PlantKind(enum.Enum):
    EOM = "EOM"
    AOM = "AOM"
    IDENTITY = "IDENTITY"


class SegmentKind(enum.Enum):
    OPERATION = "OPERATION"
    ESTIMATION = "ESTIMATION"
    BIAS_MAINTENANCE = "BIAS_MAINTENANCE"


class WaveformKind(enum.Enum):
    PULSE = "PULSE"
    PULSE_TRAIN = "PULSE_TRAIN"
    ESTIMATION = "ESTIMATION"
    CONSTANT = "CONSTANT"
    FILE = "FILE"


class PredistortionMode(enum.Enum):
    BLOCK = "BLOCK"
    STREAM = "STREAM"


class FitMode(enum.Enum):
    SYNC = "SYNC"
    THREAD = "THREAD"


@dataclass(frozen=True)
class DriftConfig:
    kind: DriftKind = DriftKind.NONE
    amplitude: float = 0.0
    period_s: float = 1.0
    walk_sigma: float = 0.0
    seed: int = 0


@dataclass(frozen=True)
class PlantConfig:
    kind: PlantKind
    eom: EomParams | None = None
    aom: AomParams | None = None
    p_in: float = 1e-3  # AOM / IDENTITY optical input power


@dataclass(frozen=True)
class PredistortionConfig:
    """Predistorter settings.

    Before the first fit the drive is ``initial_offset + initial_gain * W``.
    ``conversion_c`` is the target power [W] represented by ``W = 1``;
    ``None`` selects the plant's full-scale power reaching the target.
    ``delay_search`` is an inclusive ``[lo, hi]`` range.
    """

    drive_min: float = -math.inf
    drive_max: float = math.inf
    initial_offset: float = 0.0
    initial_gain: float = 1.0
    ridge_lambda: float | None = None
    delay_search: tuple = (0, 16)
    lookahead: int = 0
    condition_ceiling: float = 1e12
    conversion_c: float | None = None
    mode: PredistortionMode = PredistortionMode.BLOCK
    fit_mode: FitMode = FitMode.SYNC
    max_updates: int | None = None


@dataclass(frozen=True)
class BiasServoConfig:
    target: OperatingPoint = OperatingPoint.QUAD_PLUS
    loop_gain: float = 0.8
    integral_ratio: float = 0.25
    pilot_freq_hz: float | None = None
    pilot_amp_v: float | None = None
    lock_threshold: float = 0.01
    initial_v_dc: float = 0.0


@dataclass(frozen=True)
class WaveformSpec:
    """Named waveform; final samples are ``offset + scale * base``."""

    kind: WaveformKind
    options: tuple = ()  # sorted (key, value) pairs of kind-specific options
    offset: float = 0.0
    scale: float = 1.0

    def opt(self, key, default=None):
        return dict(self.options).get(key, default)


@dataclass(frozen=True)
class ScheduleEntry:
    kind: SegmentKind
    start_s: float
    waveform: str | None = None
    duration_s: float | None = None  # BIAS_MAINTENANCE length
    repeat: int = 1
    every_s: float | None = None


@dataclass(frozen=True)
class Segment:
    """One expanded schedule occurrence, in samples."""

    index: int
    kind: SegmentKind
    start: int
    length: int
    waveform: str | None
    entry: int

    @property
    def stop(self) -> int:
        return self.start + self.length


@dataclass(frozen=True)
class Scenario:
    plant: PlantConfig
    model: ModelStructure
    schedule: tuple
    waveforms: tuple  # sorted (name, WaveformSpec) pairs
    feedback: FeedbackPath = FeedbackPath()
    drift: DriftConfig = DriftConfig()
    predistortion: PredistortionConfig = PredistortionConfig()
    update_policy: UpdatePolicy = UpdatePolicy()
    bias_servo: BiasServoConfig | None = None
    events_s: tuple = ()
    name: str = "scenario"
    schema_version: int = SCHEMA_VERSION
    sample_rate_hz: float = 1e6
    block_size: int = 1024
    duration_s: float | None = None
    seed: int = 0
    output_dir: str | None = None
    base_dir: str = field(default=".", compare=False)

    def waveform_spec(self, name) -> WaveformSpec:
        return dict(self.waveforms)[name]

    @property
    def conversion_c(self) -> float:
        """Target power at ``W = 1``."""
        c = self.predistortion.conversion_c
        if c is not None:
            return c
        r = self.feedback.r_split
        if self.plant.kind is PlantKind.EOM:
            return self.plant.eom.p_max / (1.0 + r)
        return self.plant.p_in / (1.0 + r)

    def effective_seed(self, component_seed) -> int:
        """Mix a component seed with the scenario seed."""
        return int(np.random.SeedSequence([int(component_seed), int(self.seed)]).generate_state(1)[0])

    def with_seed(self, seed) -> "Scenario":
        return dataclasses.replace(self, seed=int(seed))

    def with_output_dir(self, out) -> "Scenario":
        return dataclasses.replace(self, output_dir=None if out is None else str(out))


# -- waveform materialization ------------------------------------------------


def build_waveform(spec: WaveformSpec, fs, base_dir=".") -> Waveform:
    o = dict(spec.options)
    k = spec.kind
    if k is WaveformKind.PULSE or k is WaveformKind.PULSE_TRAIN:
        w = gen_pulse(o.get("amplitude", 1.0), o.get("t_rise_s", 0.0), o.get("t_hold_s", 0.0),
                      o.get("t_fall_s", 0.0), fs, o.get("guard_samples", 16))
        if k is WaveformKind.PULSE_TRAIN:
            w = gen_pulse_train(w, o.get("count", 1), o.get("gap_s", 0.0))
    elif k is WaveformKind.ESTIMATION:
        w = gen_estimation_waveform(EstimationKind(o.get("estimation", "AMP_SWEEP")), tuple(o.get("span", (0.0, 1.0))),
                                    o.get("duration_s"), fs, o.get("seed", 0))
    elif k is WaveformKind.CONSTANT:
        n = max(int(round(o["duration_s"] * fs)), 1)
        w = Waveform(fs, np.full(n, float(o.get("value", 0.0))))
    else:
        path = Path(base_dir) / o["path"]
        w = read_binary(path) if str(path).endswith(".bin") else read_csv(path)
        if w.sample_rate_hz != fs:
            raise ScenarioError(f"file {path} has fs = {w.sample_rate_hz!r}, scenario fs = {fs!r}")
    if spec.offset == 0.0 and spec.scale == 1.0:
        return w
    return w.with_samples(spec.offset + spec.scale * w.samples)


_WAVEFORM_OPTIONS = {
    WaveformKind.PULSE: {"amplitude", "t_rise_s", "t_hold_s", "t_fall_s", "guard_samples"},
    WaveformKind.PULSE_TRAIN: {"amplitude", "t_rise_s", "t_hold_s", "t_fall_s", "guard_samples", "count", "gap_s"},
    WaveformKind.ESTIMATION: {"estimation", "span", "duration_s", "seed"},
    WaveformKind.CONSTANT: {"value", "duration_s"},
    WaveformKind.FILE: {"path"},
}
_WAVEFORM_REQUIRED = {
    WaveformKind.ESTIMATION: {"duration_s"},
    WaveformKind.CONSTANT: {"duration_s"},
    WaveformKind.FILE: {"path"},
}


# -- parsing -----------------------------------------------------------------


class _Doc:
    """Parsed YAML plus a map from field path to source line."""

    def __init__(self, text):
        try:
            node = yaml.compose(text, Loader=yaml.SafeLoader)
            self.data = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            mark = getattr(exc, "problem_mark", None)
            raise ScenarioError(f"YAML parse error: {getattr(exc, 'problem', exc)}",
                                line=None if mark is None else mark.line + 1) from None
        self.lines = {}
        if node is not None:
            self._walk(node, ())

    def _walk(self, node, path):
        self.lines[path] = node.start_mark.line + 1
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                key = k.value
                self.lines[path + (key,)] = k.start_mark.line + 1
                self._walk(v, path + (key,))
        elif isinstance(node, yaml.SequenceNode):
            for i, v in enumerate(node.value):
                self._walk(v, path + (i,))

    def line(self, path):
        path = tuple(path)
        while path and path not in self.lines:
            path = path[:-1]
        return self.lines.get(path)

    def error(self, path, message):
        return ScenarioError(message, path, self.line(path))


def _mapping(doc, d, path, allowed, required=()):
    if d is None:
        d = {}
    if not isinstance(d, dict):
        raise doc.error(path, f"expected a mapping, got {type(d).__name__}")
    for k in d:
        if k not in allowed:
            raise doc.error(tuple(path) + (k,), f"unknown key {k!r} (allowed: {', '.join(sorted(allowed))})")
    for k in required:
        if k not in d:
            raise doc.error(path, f"missing required key {k!r}")
    return d


def _num(doc, d, key, path, default=None, kind=float):
    v = d.get(key)
    if v is None:
        return default
    p = tuple(path) + (key,)
    if isinstance(v, str):
        # YAML 1.1 reads exponents without a sign (1.0e6) as strings
        try:
            v = float(v)
        except ValueError:
            pass
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise doc.error(p, f"expected a number, got {v!r}")
    if kind is int:
        if not math.isfinite(v) or float(v) != int(v):
            raise doc.error(p, f"expected an integer, got {v!r}")
        return int(v)
    return float(v)


def _enum(doc, d, key, path, cls, default):
    if key not in d:
        return default
    try:
        return cls(str(d[key]).upper())
    except ValueError:
        raise doc.error(tuple(path) + (key,),
                        f"{d[key]!r} is not one of {', '.join(m.value for m in cls)}") from None


def _build(doc, path, fn):
    try:
        return fn()
    except ScenarioError:
        raise
    except (ValueError, TypeError, KeyError) as exc:
        raise doc.error(path, str(exc)) from None


_TOP = {
    "schema_version", "name", "sample_rate_hz", "block_size", "duration_s", "seed", "output_dir",
    "plant", "drift", "feedback", "model", "predistortion", "update_policy", "bias_servo",
    "waveforms", "schedule", "events_s",
}


def _parse_plant(doc, d):
    path = ("plant",)
    d = _mapping(doc, d, path, {"kind", "eom", "aom", "p_in"}, ("kind",))
    kind = _enum(doc, d, "kind", path, PlantKind, None)
    p_in = _num(doc, d, "p_in", path, 1e-3)
    eom = aom = None
    if kind is PlantKind.EOM:
        pe = path + ("eom",)
        e = _mapping(doc, d.get("eom"), pe, {"v_pi", "phi0", "p_in", "p1", "p2", "drive_mode", "frontend_tau"}, ("v_pi",))
        eom = _build(doc, pe, lambda: EomParams(
            v_pi=_num(doc, e, "v_pi", pe),
            phi0=_num(doc, e, "phi0", pe, 0.0),
            p_in=_num(doc, e, "p_in", pe, 1e-3),
            p1=_num(doc, e, "p1", pe, None),
            p2=_num(doc, e, "p2", pe, None),
            drive_mode=_enum(doc, e, "drive_mode", pe, DriveMode, DriveMode.SINGLE),
            frontend_tau=_num(doc, e, "frontend_tau", pe, 0.0),
        ))
        p_in = eom.p_in
    elif kind is PlantKind.AOM:
        pa = path + ("aom",)
        a = _mapping(doc, d.get("aom"), pa, {"material", "geometry", "lambda0", "f0_hz", "drive_gain", "transducer_bw_hz"},
                     ("material", "geometry", "lambda0", "f0_hz"))
        pm, pg = pa + ("material",), pa + ("geometry",)
        m = _mapping(doc, a["material"], pm, {"n", "p_pe", "rho", "v_a"}, ("n", "p_pe", "rho", "v_a"))
        g = _mapping(doc, a["geometry"], pg, {"l", "h", "d"}, ("l", "h", "d"))
        mat = _build(doc, pm, lambda: AcoustoOpticMaterial(*(_num(doc, m, k, pm) for k in ("n", "p_pe", "rho", "v_a"))))
        geo = _build(doc, pg, lambda: AomGeometry(*(_num(doc, g, k, pg) for k in ("l", "h", "d"))))
        aom = _build(doc, pa, lambda: AomParams(
            mat, geo, _num(doc, a, "lambda0", pa), _num(doc, a, "f0_hz", pa),
            _num(doc, a, "drive_gain", pa, 1.0), _num(doc, a, "transducer_bw_hz", pa, math.inf),
        ))
    return PlantConfig(kind, eom, aom, p_in)


def _parse_waveforms(doc, d):
    path = ("waveforms",)
    if not isinstance(d, dict) or not d:
        raise doc.error(path, "expected a non-empty mapping of named waveforms")
    out = []
    for name, w in d.items():
        p = path + (name,)
        if not isinstance(w, dict) or "kind" not in w:
            raise doc.error(p, "waveform needs a 'kind'")
        kind = _enum(doc, w, "kind", p, WaveformKind, None)
        allowed = _WAVEFORM_OPTIONS[kind] | {"kind", "offset", "scale"}
        _mapping(doc, w, p, allowed, _WAVEFORM_REQUIRED.get(kind, ()))
        opts = []
        for k in sorted(_WAVEFORM_OPTIONS[kind]):
            if k not in w:
                continue
            v = w[k]
            if k == "span":
                if not (isinstance(v, (list, tuple)) and len(v) == 2):
                    raise doc.error(p + (k,), "span must be [lo, hi]")
                v = (float(v[0]), float(v[1]))
            elif k == "estimation":
                v = _enum(doc, w, k, p, EstimationKind, None).value
            elif k == "path":
                v = str(v)
            elif k in ("guard_samples", "count", "seed"):
                v = _num(doc, w, k, p, kind=int)
            else:
                v = _num(doc, w, k, p)
            opts.append((k, v))
        out.append((str(name), WaveformSpec(kind, tuple(opts), _num(doc, w, "offset", p, 0.0), _num(doc, w, "scale", p, 1.0))))
    return tuple(sorted(out))


def _parse_schedule(doc, d, names):
    path = ("schedule",)
    if not isinstance(d, list) or not d:
        raise doc.error(path, "expected a non-empty list of segments")
    out = []
    for i, e in enumerate(d):
        p = path + (i,)
        e = _mapping(doc, e, p, {"kind", "waveform", "start_s", "duration_s", "repeat", "every_s"}, ("kind", "start_s"))
        kind = _enum(doc, e, "kind", p, SegmentKind, None)
        wf = e.get("waveform")
        if kind is SegmentKind.BIAS_MAINTENANCE:
            if "duration_s" not in e:
                raise doc.error(p, "BIAS_MAINTENANCE needs duration_s")
        elif wf is None:
            raise doc.error(p, f"{kind.value} needs a waveform")
        if wf is not None and wf not in names:
            raise doc.error(p + ("waveform",), f"unresolved waveform {wf!r}")
        repeat = _num(doc, e, "repeat", p, 1, kind=int)
        every = _num(doc, e, "every_s", p, None)
        if repeat < 1:
            raise doc.error(p + ("repeat",), "repeat must be >= 1")
        if repeat > 1 and every is None:
            raise doc.error(p, "repeat > 1 needs every_s")
        start = _num(doc, e, "start_s", p)
        if start < 0:
            raise doc.error(p + ("start_s",), "start_s must be >= 0")
        out.append(ScheduleEntry(kind, start, None if wf is None else str(wf), _num(doc, e, "duration_s", p, None), repeat, every))
    return tuple(out)


def scenario_from_text(text: str, base_dir=".") -> Scenario:
    doc = _Doc(text)
    d = _mapping(doc, doc.data, (), _TOP, ("plant", "model", "waveforms", "schedule"))
    version = _num(doc, d, "schema_version", (), SCHEMA_VERSION, kind=int)
    if version != SCHEMA_VERSION:
        raise doc.error(("schema_version",), f"unsupported schema_version {version} (expected {SCHEMA_VERSION})")
    fs = _num(doc, d, "sample_rate_hz", (), 1e6)
    if not fs > 0:
        raise doc.error(("sample_rate_hz",), "must be > 0")
    block = _num(doc, d, "block_size", (), 1024, kind=int)
    if block < 1:
        raise doc.error(("block_size",), "must be >= 1")

    plant = _parse_plant(doc, d["plant"])

    pd = ("drift",)
    dr = _mapping(doc, d.get("drift"), pd, {"kind", "amplitude", "period_s", "walk_sigma", "seed"})
    drift = DriftConfig(_enum(doc, dr, "kind", pd, DriftKind, DriftKind.NONE), _num(doc, dr, "amplitude", pd, 0.0),
                        _num(doc, dr, "period_s", pd, 1.0), _num(doc, dr, "walk_sigma", pd, 0.0),
                        _num(doc, dr, "seed", pd, 0, kind=int))

    pf = ("feedback",)
    fb = _mapping(doc, d.get("feedback"), pf, {f.name for f in dataclasses.fields(FeedbackPath)})
    feedback = _build(doc, pf, lambda: FeedbackPath(
        r_split=_num(doc, fb, "r_split", pf, 0.1),
        responsivity_k=_num(doc, fb, "responsivity_k", pf, 1e4),
        noise_sigma=_num(doc, fb, "noise_sigma", pf, 0.0),
        lpf_cutoff_hz=_num(doc, fb, "lpf_cutoff_hz", pf, None),
        adc_bits=_num(doc, fb, "adc_bits", pf, 14, kind=int),
        adc_fullscale=_num(doc, fb, "adc_fullscale", pf, 1.0),
        adc_rate_hz=_num(doc, fb, "adc_rate_hz", pf, None),
        seed=_num(doc, fb, "seed", pf, 0, kind=int),
    ))
    if feedback.adc_rate_hz is not None and feedback.adc_rate_hz != fs:
        raise doc.error(pf + ("adc_rate_hz",),
                        f"the closed loop needs adc_rate_hz == sample_rate_hz ({fs!r}), got {feedback.adc_rate_hz!r}")

    pm = ("model",)
    m = _mapping(doc, d["model"], pm, {"family", "order_k", "memory_m", "include_dc_term"}, ("family", "order_k", "memory_m"))
    dc = m.get("include_dc_term", False)
    if not isinstance(dc, bool):
        raise doc.error(pm + ("include_dc_term",), "expected true/false")
    model = _build(doc, pm, lambda: ModelStructure(_enum(doc, m, "family", pm, ModelFamily, None),
                                                  _num(doc, m, "order_k", pm, kind=int),
                                                  _num(doc, m, "memory_m", pm, kind=int), dc))
    if not model.linear_in_parameters:
        raise doc.error(pm + ("family",), f"{model.family.value} cannot be fitted by linear least squares")

    pp = ("predistortion",)
    pr = _mapping(doc, d.get("predistortion"), pp, {f.name for f in dataclasses.fields(PredistortionConfig)})
    ds = pr.get("delay_search", [0, 16])
    if not (isinstance(ds, (list, tuple)) and len(ds) == 2 and all(isinstance(v, int) for v in ds) and 0 <= ds[0] <= ds[1]):
        raise doc.error(pp + ("delay_search",), "expected [lo, hi] with 0 <= lo <= hi integers")
    default_min = 0.0 if plant.kind is PlantKind.AOM else -math.inf
    pred = PredistortionConfig(
        drive_min=_num(doc, pr, "drive_min", pp, default_min),
        drive_max=_num(doc, pr, "drive_max", pp, math.inf),
        initial_offset=_num(doc, pr, "initial_offset", pp, 0.0),
        initial_gain=_num(doc, pr, "initial_gain", pp, 1.0),
        ridge_lambda=_num(doc, pr, "ridge_lambda", pp, None),
        delay_search=(int(ds[0]), int(ds[1])),
        lookahead=_num(doc, pr, "lookahead", pp, 0, kind=int),
        condition_ceiling=_num(doc, pr, "condition_ceiling", pp, 1e12),
        conversion_c=_num(doc, pr, "conversion_c", pp, None),
        mode=_enum(doc, pr, "mode", pp, PredistortionMode, PredistortionMode.BLOCK),
        fit_mode=_enum(doc, pr, "fit_mode", pp, FitMode, FitMode.SYNC),
        max_updates=_num(doc, pr, "max_updates", pp, None, kind=int),
    )
    if not pred.drive_min < pred.drive_max:
        raise doc.error(pp, "drive_min must be < drive_max")
    if plant.kind is PlantKind.AOM and pred.drive_min < 0:
        raise doc.error(pp + ("drive_min",), "AOM RF envelope cannot be negative; drive_min must be >= 0")
    if pred.initial_offset != 0.0 and not model.include_dc_term:
        raise doc.error(pp + ("initial_offset",), "a nonzero initial_offset needs model.include_dc_term")

    pu = ("update_policy",)
    up = _mapping(doc, d.get("update_policy"), pu, {"kind", "period_s", "threshold_db", "armed"})
    armed = up.get("armed", True)
    if not isinstance(armed, bool):
        raise doc.error(pu + ("armed",), "expected true/false")
    policy = _build(doc, pu, lambda: UpdatePolicy(_enum(doc, up, "kind", pu, PolicyKind, PolicyKind.ERROR_METRIC),
                                                  _num(doc, up, "period_s", pu, 1.0),
                                                  _num(doc, up, "threshold_db", pu, -30.0), armed))

    servo = None
    if d.get("bias_servo") is not None:
        pb = ("bias_servo",)
        if plant.kind is not PlantKind.EOM:
            raise doc.error(pb, "the bias servo applies to EOM plants only")
        b = _mapping(doc, d["bias_servo"], pb, {f.name for f in dataclasses.fields(BiasServoConfig)})
        servo = BiasServoConfig(
            target=_enum(doc, b, "target", pb, OperatingPoint, OperatingPoint.QUAD_PLUS),
            loop_gain=_num(doc, b, "loop_gain", pb, 0.8),
            integral_ratio=_num(doc, b, "integral_ratio", pb, 0.25),
            pilot_freq_hz=_num(doc, b, "pilot_freq_hz", pb, None),
            pilot_amp_v=_num(doc, b, "pilot_amp_v", pb, None),
            lock_threshold=_num(doc, b, "lock_threshold", pb, 0.01),
            initial_v_dc=_num(doc, b, "initial_v_dc", pb, 0.0),
        )
        amp = servo.pilot_amp_v if servo.pilot_amp_v is not None else 0.02 * plant.eom.v_pi
        if amp > 0.05 * plant.eom.v_pi:
            raise doc.error(pb + ("pilot_amp_v",), f"pilot amplitude must be <= 0.05 V_pi = {0.05 * plant.eom.v_pi!r}")

    waveforms = _parse_waveforms(doc, d["waveforms"])
    schedule = _parse_schedule(doc, d["schedule"], dict(waveforms))
    if any(e.kind is SegmentKind.BIAS_MAINTENANCE for e in schedule) and servo is None:
        raise doc.error(("schedule",), "BIAS_MAINTENANCE segments need a bias_servo section")

    ev = d.get("events_s", [])
    if not isinstance(ev, list) or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in ev):
        raise doc.error(("events_s",), "expected a list of times")

    sc = Scenario(
        plant=plant, model=model, schedule=schedule, waveforms=waveforms, feedback=feedback, drift=drift,
        predistortion=pred, update_policy=policy, bias_servo=servo, events_s=tuple(sorted(float(v) for v in ev)),
        name=str(d.get("name", "scenario")), schema_version=version, sample_rate_hz=fs, block_size=block,
        duration_s=_num(doc, d, "duration_s", (), None), seed=_num(doc, d, "seed", (), 0, kind=int),
        output_dir=None if d.get("output_dir") is None else str(d["output_dir"]), base_dir=str(base_dir),
    )
    try:
        expand_schedule(sc)
    except ScenarioError as exc:
        raise doc.error(exc.path, str(exc).split(": ", 1)[-1] if exc.path else str(exc)) from None
    return sc


def load_scenario(path) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ScenarioError(f"cannot read {path}: {exc.strerror}") from None
    return scenario_from_text(text, base_dir=path.parent)


# -- schedule expansion ------------------------------------------------------


def segment_lengths(sc: Scenario) -> dict:
    fs = sc.sample_rate_hz
    return {name: len(build_waveform(spec, fs, sc.base_dir)) for name, spec in sc.waveforms}


def expand_schedule(sc: Scenario, lengths=None) -> list[Segment]:
    """Occurrences sorted by start; raises naming both entries on overlap."""
    fs = sc.sample_rate_hz
    if lengths is None:
        try:
            lengths = segment_lengths(sc)
        except (ValueError, KeyError, TypeError, OSError) as exc:
            raise ScenarioError(f"cannot build waveform: {exc}", ("waveforms",)) from None
    occ = []
    for i, e in enumerate(sc.schedule):
        for r in range(e.repeat):
            t0 = e.start_s + r * (e.every_s or 0.0)
            start = int(round(t0 * fs))
            if e.kind is SegmentKind.BIAS_MAINTENANCE:
                n = int(round(e.duration_s * fs))
            else:
                n = lengths[e.waveform]
            if n < 1:
                raise ScenarioError("segment has no samples", ("schedule", i))
            occ.append((start, i, r, e, n))
    occ.sort(key=lambda o: (o[0], o[1], o[2]))
    segs = []
    for j, (start, i, r, e, n) in enumerate(occ):
        segs.append(Segment(j, e.kind, start, n, e.waveform, i))
    for a, b in zip(segs, segs[1:]):
        if b.start < a.stop:
            raise ScenarioError(
                f"segment overlap: schedule[{a.entry}] ({a.kind.value} {a.waveform or ''} occurrence at "
                f"{a.start / fs!r} s, ends {a.stop / fs!r} s) and schedule[{b.entry}] ({b.kind.value} "
                f"{b.waveform or ''} at {b.start / fs!r} s)",
                ("schedule", b.entry),
            )
    if sc.duration_s is not None and segs and segs[-1].stop > int(round(sc.duration_s * fs)):
        raise ScenarioError(f"schedule runs past duration_s = {sc.duration_s!r}", ("duration_s",))
    return segs


def total_samples(sc: Scenario, segments) -> int:
    if sc.duration_s is not None:
        return int(round(sc.duration_s * sc.sample_rate_hz))
    return segments[-1].stop if segments else 0


# -- dump --------------------------------------------------------------------


def _f(v):
    return v


def scenario_to_dict(sc: Scenario) -> dict:
    """Fully explicit document (all defaults filled)."""
    out = {
        "schema_version": sc.schema_version,
        "name": sc.name,
        "sample_rate_hz": sc.sample_rate_hz,
        "block_size": sc.block_size,
        "duration_s": sc.duration_s,
        "seed": sc.seed,
        "output_dir": sc.output_dir,
    }
    pl = {"kind": sc.plant.kind.value, "p_in": sc.plant.p_in}
    if sc.plant.eom is not None:
        e = sc.plant.eom
        pl["eom"] = {"v_pi": e.v_pi, "phi0": e.phi0, "p_in": e.p_in, "p1": e.p1, "p2": e.p2,
                     "drive_mode": e.drive_mode.value, "frontend_tau": e.frontend_tau}
    if sc.plant.aom is not None:
        a = sc.plant.aom
        pl["aom"] = {"material": dataclasses.asdict(a.material), "geometry": dataclasses.asdict(a.geometry),
                     "lambda0": a.lambda0, "f0_hz": a.f0_hz, "drive_gain": a.drive_gain,
                     "transducer_bw_hz": _f(a.transducer_bw_hz)}
    out["plant"] = pl
    dr = sc.drift
    out["drift"] = {"kind": dr.kind.value, "amplitude": dr.amplitude, "period_s": dr.period_s,
                    "walk_sigma": dr.walk_sigma, "seed": dr.seed}
    out["feedback"] = dataclasses.asdict(sc.feedback)
    m = sc.model
    out["model"] = {"family": m.family.value, "order_k": m.order_k, "memory_m": m.memory_m,
                    "include_dc_term": m.include_dc_term}
    p = sc.predistortion
    out["predistortion"] = {
        "drive_min": _f(p.drive_min), "drive_max": _f(p.drive_max), "initial_offset": p.initial_offset,
        "initial_gain": p.initial_gain, "ridge_lambda": p.ridge_lambda, "delay_search": list(p.delay_search),
        "lookahead": p.lookahead, "condition_ceiling": p.condition_ceiling, "conversion_c": p.conversion_c,
        "mode": p.mode.value, "fit_mode": p.fit_mode.value, "max_updates": p.max_updates,
    }
    u = sc.update_policy
    out["update_policy"] = {"kind": u.kind.value, "period_s": u.period_s, "threshold_db": u.threshold_db, "armed": u.armed}
    if sc.bias_servo is not None:
        b = sc.bias_servo
        out["bias_servo"] = {"target": b.target.value, "loop_gain": b.loop_gain, "integral_ratio": b.integral_ratio,
                             "pilot_freq_hz": b.pilot_freq_hz, "pilot_amp_v": b.pilot_amp_v,
                             "lock_threshold": b.lock_threshold, "initial_v_dc": b.initial_v_dc}
    wf = {}
    for name, spec in sc.waveforms:
        w = {"kind": spec.kind.value}
        for k, v in spec.options:
            w[k] = list(v) if isinstance(v, tuple) else v
        w["offset"] = spec.offset
        w["scale"] = spec.scale
        wf[name] = w
    out["waveforms"] = wf
    sched = []
    for e in sc.schedule:
        s = {"kind": e.kind.value, "start_s": e.start_s}
        if e.waveform is not None:
            s["waveform"] = e.waveform
        if e.duration_s is not None:
            s["duration_s"] = e.duration_s
        s["repeat"] = e.repeat
        if e.every_s is not None:
            s["every_s"] = e.every_s
        sched.append(s)
    out["schedule"] = sched
    out["events_s"] = list(sc.events_s)
    return out


def dump_scenario(sc: Scenario) -> str:
    return yaml.safe_dump(scenario_to_dict(sc), sort_keys=False, default_flow_style=None)
