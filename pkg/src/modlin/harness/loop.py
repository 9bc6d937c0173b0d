"""Closed-loop simulation: predistorter, plant, splitter, feedback chain, parameter updates, bias servo."""
from __future__ import annotations

import collections
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from modlin import biasctl
from modlin.estimator import (
    FitReport,
    InsufficientExcitationError,
    PolicyKind,
    RankDeficientError,
    fit_inverse_indirect,
    should_update,
)
from modlin.harness.scenario import (
    PlantKind,
    PredistortionMode,
    Scenario,
    SegmentKind,
    FitMode,
    build_waveform,
    expand_schedule,
    segment_lengths,
    total_samples,
)
from modlin.models import ModelFamily, ModelStructure, ParamVector, evaluate_array, identity_params
from modlin.plant.aom import AomPlant
from modlin.plant.drift import DriftProcess
from modlin.plant.eom import EomPlant
from modlin.plant.feedback import FeedbackChain
from modlin.signal import Waveform, nmse_db


class NumericalFailure(RuntimeError):
    """Simulation produced non-finite values."""


# -- predistortion -----------------------------------------------------------


def linear_params(structure: ModelStructure, gain=1.0, offset=0.0) -> ParamVector:
    """Model realizing ``y = offset + gain * x``."""
    p = identity_params(structure)
    c = p.coefficients.copy()
    s = structure
    if s.family in (ModelFamily.VOLTERRA, ModelFamily.MEMORY_POLYNOMIAL):
        c[0] = gain
    else:
        c[s.memory_m] = gain
    if offset != 0.0:
        if not s.include_dc_term:
            raise ValueError("an offset needs include_dc_term")
        c[-1] = offset
    return ParamVector(s, c)


class StreamPredistorter:
    """Sample-at-a-time predistorter holding the last ``span`` inputs."""

    def __init__(self, structure: ModelStructure, params: ParamVector):
        self.structure = structure
        self.params = params
        self._hist = collections.deque([0.0] * structure.span, maxlen=structure.span)

    def push(self, w: float) -> float:
        self._hist.append(float(w))
        return float(evaluate_array(self.structure, self.params, np.fromiter(self._hist, float, self.structure.span))[-1])


def apply_predistortion(w: Waveform, structure: ModelStructure, params: ParamVector, mode="BLOCK",
                        clamp=(-math.inf, math.inf)):
    """Drive waveform for desired shape ``w``.

    Returns ``(drive, clamped)`` where ``clamped`` counts samples limited to
    the ``clamp`` range. STREAM and BLOCK give bit-identical drives.
    """
    mode = PredistortionMode(mode)
    if mode is PredistortionMode.BLOCK:
        y = evaluate_array(structure, params, w.samples)
    else:
        sp = StreamPredistorter(structure, params)
        y = np.array([sp.push(v) for v in w.samples.tolist()])
    lo, hi = clamp
    clamped = int(np.count_nonzero((y < lo) | (y > hi)))
    return w.with_samples(np.clip(y, lo, hi)), clamped


# -- plants ------------------------------------------------------------------


class IdentityPlant:
    """Transparent modulator surrogate: ``P_out = p_in * v``."""

    def __init__(self, p_in, sample_rate_hz):
        self.p_in = p_in
        self.sample_rate_hz = sample_rate_hz

    def process(self, v) -> Waveform:
        return Waveform(self.sample_rate_hz, self.p_in * np.asarray(v, dtype=float))


def make_plant(sc: Scenario):
    fs = sc.sample_rate_hz
    k = sc.plant.kind
    if k is PlantKind.EOM:
        d = sc.drift
        drift = DriftProcess(d.kind, d.amplitude, d.period_s, d.walk_sigma, sc.effective_seed(d.seed))
        return EomPlant(sc.plant.eom, fs, drift)
    if k is PlantKind.AOM:
        return AomPlant(sc.plant.aom, sc.plant.p_in, fs)
    return IdentityPlant(sc.plant.p_in, fs)


def make_chain(sc: Scenario) -> FeedbackChain:
    import dataclasses

    path = dataclasses.replace(sc.feedback, seed=sc.effective_seed(sc.feedback.seed))
    return FeedbackChain(path, sc.sample_rate_hz)


# -- run records -------------------------------------------------------------


@dataclass
class SegmentResult:
    index: int
    kind: str
    waveform: str | None
    start_s: float
    length: int
    versions: tuple
    alignment: int = 0
    nmse_db: float | None = None
    true_nmse_db: float | None = None
    clamped: int = 0


@dataclass
class UpdateRecord:
    block: int
    time_s: float
    trigger: str
    status: str
    version: int | None = None
    activated_block: int | None = None
    residual_nmse_db: float | None = None
    condition_estimate: float | None = None
    delay: int | None = None
    message: str = ""


@dataclass
class RunReport:
    scenario: Scenario
    segments: list
    updates: list
    bias_log: list
    params_history: list  # (version, activated_block, ParamVector, FitReport | None)
    final_fit: FitReport | None
    timeline: dict
    clamped_total: int
    energy_max_error: float
    wall_clock: dict = field(default_factory=dict)

    def operation_segments(self):
        return [s for s in self.segments if s.kind == SegmentKind.OPERATION.value]

    def nmse_after_first_update(self, true=False):
        """OPERATION NMSE values of segments run entirely on fitted parameters."""
        out = []
        for s in self.operation_segments():
            if min(s.versions) >= 1:
                out.append(s.true_nmse_db if true else s.nmse_db)
        return out

    @property
    def final_params(self) -> ParamVector:
        return self.params_history[-1][2]


# -- the loop ----------------------------------------------------------------


class _Fit:
    def __init__(self, future=None, result=None, error=None):
        self.future, self.result, self.error = future, result, error

    def get(self):
        if self.future is not None:
            try:
                self.result = self.future.result()
            except Exception as exc:  # noqa: BLE001 - recorded as a failed update
                self.error = exc
            self.future = None
        return self.result, self.error


def _fit_job(x, y, fs, structure, ridge, delays, ceiling, lookahead):
    return fit_inverse_indirect(Waveform(fs, x), Waveform(fs, y), structure, ridge_lambda=ridge,
                                delay_search=delays, condition_ceiling=ceiling, lookahead=lookahead)


_FIT_ERRORS = (InsufficientExcitationError, RankDeficientError, np.linalg.LinAlgError, ValueError)


def run_scenario(sc: Scenario, fit_mode=None) -> RunReport:
    """Simulate the scenario end to end (deterministic given its seeds)."""
    t_wall = time.perf_counter()
    fs = sc.sample_rate_hz
    B = sc.block_size
    lengths = segment_lengths(sc)
    segs = expand_schedule(sc, lengths)
    N = total_samples(sc, segs)
    if N < 1:
        raise ValueError("scenario has no samples")
    waves = {name: build_waveform(spec, fs, sc.base_dir).samples for name, spec in sc.waveforms}
    pd = sc.predistortion
    fit_mode = FitMode(fit_mode) if fit_mode is not None else pd.fit_mode
    structure = sc.model
    span = structure.span
    C = sc.conversion_c
    chain = make_chain(sc)
    y_gain = 1.0 / (chain.path.responsivity_k * chain.path.r_split * C)
    plant = make_plant(sc)

    W = np.zeros(N)
    seg_of = np.full(N, -1, dtype=np.int64)
    for s in segs:
        if s.kind is not SegmentKind.BIAS_MAINTENANCE:
            W[s.start : s.stop] = waves[s.waveform]
        seg_of[s.start : s.stop] = s.index

    drive = np.zeros(N)
    x_pd = np.zeros(N)
    p_out = np.zeros(N)
    p_target = np.zeros(N)
    p_target_true = np.zeros(N)
    v_fb = np.zeros(N)
    energy_err = 0.0
    clamped_total = 0

    params = linear_params(structure, pd.initial_gain, pd.initial_offset)
    version = 0
    history = [(0, 0, params, None)]
    current_fit: FitReport | None = None
    alignment = 0
    seg_versions = collections.defaultdict(set)
    seg_clamped = collections.Counter()

    servo = None
    if sc.bias_servo is not None:
        b = sc.bias_servo
        servo = biasctl.default_servo(
            sc.plant.eom, fs, v_dc=b.initial_v_dc, loop_gain=b.loop_gain, integral_ratio=b.integral_ratio,
            lock_threshold=b.lock_threshold,
            **({"pilot_freq_hz": b.pilot_freq_hz} if b.pilot_freq_hz is not None else {}),
            **({"pilot_amp_v": b.pilot_amp_v} if b.pilot_amp_v is not None else {}),
        )
    v_dc = servo.v_dc if servo is not None else 0.0
    bias_log = []
    servo_block = 0

    dmax = pd.delay_search[1] + pd.lookahead
    delays = range(pd.delay_search[0], pd.delay_search[1] + 1)
    est_ready = []  # completed ESTIMATION segments, in order
    est_used = -1  # index into est_ready already fitted
    pending_metrics = [s for s in segs if s.kind is SegmentKind.OPERATION]
    pending_est = [s for s in segs if s.kind is SegmentKind.ESTIMATION]
    results = {s.index: SegmentResult(s.index, s.kind.value, s.waveform, s.start / fs, s.length, ()) for s in segs}
    last_metric = None
    last_update_s = 0.0
    n_launched = 0
    in_flight: tuple | None = None  # (_Fit, activate_block, UpdateRecord)
    updates = []
    events = list(sc.events_s)
    event_pending = False
    executor = ThreadPoolExecutor(max_workers=1) if fit_mode is FitMode.THREAD else None

    cuts = set(range(0, N, B)) | {N}
    for s in segs:
        cuts.add(min(s.start, N))
        cuts.add(min(s.stop, N))
    cuts = sorted(cuts)

    def finish_segments(done):
        nonlocal last_metric
        while pending_metrics:
            s = pending_metrics[0]
            a = results[s.index].alignment
            if min(s.stop + a, N) > done:
                break
            pending_metrics.pop(0)
            res = results[s.index]
            ref = Waveform(fs, W[s.start : s.stop])
            hi = min(s.stop + a, N)
            meas = Waveform(fs, v_fb[s.start + a : hi] * y_gain)
            true = Waveform(fs, p_target_true[s.start + a : hi] / C)
            try:
                res.nmse_db = float(nmse_db(ref, meas).value)
                res.true_nmse_db = float(nmse_db(ref, true).value)
            except ValueError:
                continue
            res.versions = tuple(sorted(seg_versions[s.index]))
            res.clamped = seg_clamped[s.index]
            if len(res.versions) == 1 and res.versions[0] == version:
                last_metric = res.nmse_db
        while pending_est:
            s = pending_est[0]
            if min(s.stop + dmax, N) > done:
                break
            pending_est.pop(0)
            hi = min(s.stop + dmax, N)
            est_ready.append((s, x_pd[s.start : s.stop].copy(), (v_fb[s.start : hi] * y_gain).copy()))
            res = results[s.index]
            res.versions = tuple(sorted(seg_versions[s.index]))
            res.clamped = seg_clamped[s.index]
            # the test waveform also probes the error metric (never enters OPERATION statistics)
            a = alignment
            if s.stop + a <= N:
                try:
                    res.alignment = a
                    res.nmse_db = float(nmse_db(Waveform(fs, W[s.start : s.stop]),
                                                Waveform(fs, v_fb[s.start + a : s.stop + a] * y_gain)).value)
                except ValueError:
                    continue
                if len(res.versions) == 1 and res.versions[0] == version:
                    last_metric = res.nmse_db

    for a, b in zip(cuts, cuts[1:]):
        if a % B == 0:
            blk = a // B
            now = a / fs
            finish_segments(a)
            # publish a fit launched at the previous boundary
            if in_flight is not None and in_flight[1] <= blk:
                job, _, rec = in_flight
                rep, err = job.get()
                in_flight = None
                if err is not None:
                    rec.status, rec.message = "failed", f"{type(err).__name__}: {err}"
                elif not np.all(np.isfinite(rep.params.coefficients)):
                    rec.status, rec.message = "failed", "non-finite coefficients"
                else:
                    version += 1
                    params, current_fit, alignment = rep.params, rep, rep.delay
                    history.append((version, blk, params, rep))
                    rec.status, rec.version, rec.activated_block = "applied", version, blk
                    rec.residual_nmse_db, rec.condition_estimate, rec.delay = (
                        rep.residual_nmse_db, rep.condition_estimate, rep.delay)
                    last_metric = None
            while events and events[0] <= now:
                events.pop(0)
                event_pending = True
            limit_ok = pd.max_updates is None or n_launched < pd.max_updates
            if in_flight is None and limit_ok and sc.update_policy.kind is not PolicyKind.NEVER:
                trig = should_update(sc.update_policy, now, last_update_s, last_metric, event_pending)
                if trig and len(est_ready) - 1 > est_used:
                    est_used = len(est_ready) - 1
                    seg, xs, ys = est_ready[est_used]
                    args = (xs, ys, fs, structure, pd.ridge_lambda, delays, pd.condition_ceiling, pd.lookahead)
                    if executor is not None:
                        job = _Fit(future=executor.submit(_fit_job, *args))
                    else:
                        try:
                            job = _Fit(result=_fit_job(*args))
                        except _FIT_ERRORS as exc:
                            job = _Fit(error=exc)
                    rec = UpdateRecord(blk, now, sc.update_policy.kind.value, "pending",
                                       message=f"estimation segment {seg.index}")
                    updates.append(rec)
                    in_flight = (job, blk + 1, rec)
                    n_launched += 1
                    last_update_s = now
                    event_pending = False

        si = int(seg_of[a])
        seg = segs[si] if si >= 0 else None
        if seg is not None:
            seg_versions[si].add(version)
            if seg.kind is SegmentKind.OPERATION and results[si].alignment != alignment and a == seg.start:
                results[si].alignment = alignment
        if seg is not None and seg.kind is SegmentKind.BIAS_MAINTENANCE:
            k0 = a - seg.start
            x = np.zeros(b - a)
            d = v_dc + biasctl.pilot_waveform(servo, b - a, fs, k0)
        else:
            lo = max(0, a - (span - 1))
            if pd.mode is PredistortionMode.STREAM:
                sp = StreamPredistorter(structure, params)
                y = np.array([sp.push(v) for v in W[lo:b].tolist()])
            else:
                y = evaluate_array(structure, params, W[lo:b])
            y = y[a - lo :]
            n_clip = int(np.count_nonzero((y < pd.drive_min) | (y > pd.drive_max)))
            clamped_total += n_clip
            if seg is not None:
                seg_clamped[si] += n_clip
            x = np.clip(y, pd.drive_min, pd.drive_max)
            d = x + v_dc
        if not np.all(np.isfinite(d)):
            raise NumericalFailure(f"non-finite drive at t = {a / fs!r} s")
        x_pd[a:b] = x
        drive[a:b] = d
        p = plant.process(d).samples
        pt, pf = chain.path.split(p)
        energy_err = max(energy_err, float(np.max(np.abs(pt + pf - p))))
        vf = chain.process(p).samples
        p_out[a:b] = p
        p_target_true[a:b] = pt
        p_target[a:b] = 0.0 if (seg is not None and seg.kind is SegmentKind.ESTIMATION) else pt
        v_fb[a:b] = vf

        if seg is not None and seg.kind is SegmentKind.BIAS_MAINTENANCE:
            period = fs / servo.pilot_freq_hz
            n_use = int(math.floor((b - a) / period + 1e-9) * period + 0.5)  # whole pilot periods only
            if n_use >= 4 * period:
                phase0 = 2.0 * math.pi * servo.pilot_freq_hz * (a - seg.start) / fs - 0.5 * math.pi
                servo = biasctl.pilot_servo_step(servo, sc.bias_servo.target, Waveform(fs, vf[:n_use]), sc.plant.eom,
                                                 pilot_phase=phase0)
                v_dc = servo.v_dc
                rec = biasctl.log_record(servo_block, servo)
                rec["t_s"] = a / fs
                bias_log.append(rec)
                servo_block += 1

    finish_segments(N)
    if in_flight is not None:
        job, _, rec = in_flight
        rep, err = job.get()
        rec.status = "not_applied" if err is None else "failed"
        rec.message = "run ended before the next block boundary" if err is None else f"{type(err).__name__}: {err}"
    if executor is not None:
        executor.shutdown(wait=True)

    timeline = {
        "t_s": np.arange(N) / fs,
        "w": W,
        "drive_v": drive,
        "p_out_w": p_out,
        "p_target_w": p_target,
        "v_fb": v_fb,
    }
    return RunReport(
        scenario=sc,
        segments=[results[s.index] for s in segs],
        updates=updates,
        bias_log=bias_log,
        params_history=history,
        final_fit=current_fit,
        timeline=timeline,
        clamped_total=clamped_total,
        energy_max_error=energy_err,
        wall_clock={"run_s": time.perf_counter() - t_wall, "samples": N},
    )
