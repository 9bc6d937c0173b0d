"""Key-value dumps of derived plant quantities."""
from __future__ import annotations

from modlin.plant.aom import AomParams, aom_geometry_report, regime_classify
from modlin.plant.eom import EomParams
from modlin.plant.feedback import FeedbackPath


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def describe_items(params) -> list[tuple[str, object]]:
    if isinstance(params, EomParams):
        return [
            ("plant", "EOM"),
            ("v_pi", params.v_pi),
            ("phi0", params.phi0),
            ("p_in", params.p_in),
            ("p1", params.p1),
            ("p2", params.p2),
            ("drive_mode", params.drive_mode.value),
            ("frontend_tau", params.frontend_tau),
            ("p_max", params.p_max),
            ("p_min", params.p_min),
            ("extinction_ratio_db", params.extinction_ratio_db),
        ]
    if isinstance(params, AomParams):
        rep = aom_geometry_report(params)
        lam_medium = params.lambda0 / params.material.n
        return [
            ("plant", "AOM"),
            ("m2", params.m2),
            ("big_lambda", params.big_lambda),
            ("regime", regime_classify(params.geometry.l, lam_medium, params.big_lambda).value),
            ("tau_a", rep.tau_a),
            ("delta_theta0", rep.delta_theta0),
            ("delta_theta_a", rep.delta_theta_a),
            ("a_ratio", rep.a_ratio),
            ("f3db_hz", rep.f3db_hz),
            ("f3db_in_table", rep.f3db_in_table),
            ("f0_ok", rep.f0_ok),
            ("transducer_bw_hz", params.transducer_bw_hz),
            ("drive_gain", params.drive_gain),
        ]
    if isinstance(params, FeedbackPath):
        return [
            ("r_split", params.r_split),
            ("responsivity_k", params.responsivity_k),
            ("noise_sigma", params.noise_sigma),
            ("lpf_cutoff_hz", params.lpf_cutoff_hz),
            ("adc_bits", params.adc_bits),
            ("adc_fullscale", params.adc_fullscale),
            ("adc_lsb", params.lsb),
            ("adc_rate_hz", params.adc_rate_hz),
        ]
    raise TypeError(f"cannot describe {type(params).__name__}")


def describe(*params) -> str:
    """``key = value`` text for one or more parameter records."""
    lines = []
    for p in params:
        lines.extend(f"{k} = {_fmt(v)}" for k, v in describe_items(p))
    return "\n".join(lines) + "\n"
