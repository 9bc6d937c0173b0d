"""Run outputs: report.txt, timeline.csv, params_*.txt, bias_servo.csv."""
from __future__ import annotations

import io
import math
from pathlib import Path

import numpy as np

from modlin.biasctl import LOG_FIELDS
from modlin.estimator import fit_report_to_text
from modlin.harness.loop import RunReport
from modlin.harness.scenario import dump_scenario
from modlin.models import params_to_text

TIMELINE_COLUMNS = ("t_s", "w", "drive_v", "p_out_w", "p_target_w", "v_fb")


def _g(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_timeline(report: RunReport, path):
    cols = np.column_stack([report.timeline[c] for c in TIMELINE_COLUMNS])
    with open(path, "w") as fh:
        fh.write(",".join(TIMELINE_COLUMNS) + "\n")
        np.savetxt(fh, cols, fmt="%.17g", delimiter=",")


def write_bias_log(report: RunReport, path):
    with open(path, "w") as fh:
        fh.write(",".join(LOG_FIELDS) + "\n")
        for r in report.bias_log:
            fh.write(",".join(_g(r[k]) for k in LOG_FIELDS) + "\n")


def summary(report: RunReport) -> dict:
    ops = [s.nmse_db for s in report.operation_segments() if s.nmse_db is not None]
    after = [v for v in report.nmse_after_first_update() if v is not None]
    thr = report.scenario.update_policy.threshold_db
    return {
        "operation_segments": len(report.operation_segments()),
        "operation_nmse_median_db": float(np.median(ops)) if ops else None,
        "operation_nmse_max_db": float(np.max(ops)) if ops else None,
        "segments_after_first_update": len(after),
        "fraction_after_update_at_or_below_threshold": (
            float(np.mean(np.asarray(after) <= thr)) if after else None),
        "updates_applied": sum(u.status == "applied" for u in report.updates),
        "updates_failed": sum(u.status == "failed" for u in report.updates),
        "clamped_total": report.clamped_total,
        "energy_max_error": report.energy_max_error,
        "bias_locked": (bool(report.bias_log[-1]["locked"]) if report.bias_log else None),
    }


def report_text(report: RunReport, include_wall_clock=True) -> str:
    out = io.StringIO()
    out.write("# modlin run report\n\n[scenario]\n")
    out.write(dump_scenario(report.scenario))
    out.write("\n[segments]\nindex,kind,waveform,start_s,length,versions,alignment,nmse_db,true_nmse_db,clamped\n")
    for s in report.segments:
        out.write(",".join([
            str(s.index), s.kind, s.waveform or "", repr(s.start_s), str(s.length),
            "|".join(str(v) for v in s.versions), str(s.alignment), _g(s.nmse_db), _g(s.true_nmse_db), str(s.clamped),
        ]) + "\n")
    out.write("\n[updates]\nblock,time_s,trigger,status,version,activated_block,residual_nmse_db,condition_estimate,delay,message\n")
    for u in report.updates:
        out.write(",".join([
            str(u.block), repr(u.time_s), u.trigger, u.status, _g(u.version), _g(u.activated_block),
            _g(u.residual_nmse_db), _g(u.condition_estimate), _g(u.delay), u.message.replace(",", ";"),
        ]) + "\n")
    out.write("\n[summary]\n")
    for k, v in summary(report).items():
        out.write(f"{k} = {_g(v)}\n")
    if report.final_fit is not None:
        out.write("\n[final_fit]\n")
        out.write(fit_report_to_text(report.final_fit))
    if include_wall_clock:
        out.write("\n[wall_clock]\n")
        for k, v in report.wall_clock.items():
            out.write(f"{k} = {_g(v)}\n")
    return out.getvalue()


def write_outputs(report: RunReport, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.txt").write_text(report_text(report))
    write_timeline(report, out / "timeline.csv")
    for version, block, params, fit in report.params_history:
        text = params_to_text(params) if fit is None else fit_report_to_text(fit)
        (out / f"params_{version:03d}.txt").write_text(f"# activated at block {block}\n" + text)
    if report.bias_log:
        write_bias_log(report, out / "bias_servo.csv")
    return out
