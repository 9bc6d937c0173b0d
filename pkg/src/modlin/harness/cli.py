"""Command line: ``modlin run | describe-plant | fit | gen-waveform``.

Exit codes: 0 success, 2 validation failure, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from modlin.estimator import InsufficientExcitationError, RankDeficientError, fit_inverse_indirect, fit_report_to_text
from modlin.harness.loop import NumericalFailure, run_scenario
from modlin.harness.report import summary, write_outputs
from modlin.harness.scenario import PlantKind, ScenarioError, load_scenario
from modlin.models import ModelFamily, ModelStructure
from modlin.plant.describe import describe
from modlin.signal import (
    EstimationKind,
    gen_estimation_waveform,
    gen_pulse,
    gen_pulse_train,
    read_binary,
    read_csv,
    write_binary,
    write_csv,
)

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 2, 3


def _read_waveform(path):
    return read_binary(path) if str(path).endswith(".bin") else read_csv(path)


def _cmd_run(args):
    sc = load_scenario(args.scenario)
    if args.seed is not None:
        sc = sc.with_seed(args.seed)
    out = args.out or sc.output_dir or f"out_{sc.name}"
    out = Path(out) if Path(out).is_absolute() or args.out else Path(sc.base_dir) / out
    sc = sc.with_output_dir(str(out))
    rep = run_scenario(sc)
    write_outputs(rep, out)
    if not args.quiet:
        for k, v in summary(rep).items():
            print(f"{k} = {v}")
        print(f"outputs written to {out}")
    return EXIT_OK


def _cmd_describe(args):
    sc = load_scenario(args.scenario)
    plant = sc.plant.eom if sc.plant.kind is PlantKind.EOM else sc.plant.aom
    items = [p for p in (plant, sc.feedback) if p is not None]
    text = f"plant_kind = {sc.plant.kind.value}\n" if plant is None else ""
    sys.stdout.write(text + describe(*items))
    return EXIT_OK


def _cmd_fit(args):
    x = _read_waveform(args.x)
    y = _read_waveform(args.y)
    s = ModelStructure(ModelFamily(args.family.upper()), args.order, args.memory, args.dc)
    rep = fit_inverse_indirect(x, y, s, ridge_lambda=args.ridge, delay_search=range(args.delay_min, args.delay_max + 1),
                               condition_ceiling=args.condition_ceiling, lookahead=args.lookahead)
    text = fit_report_to_text(rep)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _cmd_gen(args):
    fs = args.fs
    if args.kind == "pulse":
        w = gen_pulse(args.amplitude, args.t_rise, args.t_hold, args.t_fall, fs)
        if args.count > 1 or args.gap > 0:
            w = gen_pulse_train(w, args.count, args.gap)
    else:
        w = gen_estimation_waveform(EstimationKind(args.kind.upper()), (args.lo, args.hi), args.duration, fs, args.seed)
    if args.offset or args.scale != 1.0:
        w = w.with_samples(args.offset + args.scale * w.samples)
    if str(args.out).endswith(".bin"):
        write_binary(w, args.out)
    else:
        write_csv(w, args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="modlin", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="simulate a scenario and write outputs")
    r.add_argument("scenario")
    r.add_argument("--out", help="output directory")
    r.add_argument("--seed", type=int, help="scenario seed override")
    r.add_argument("--quiet", action="store_true")
    r.set_defaults(func=_cmd_run)

    d = sub.add_parser("describe-plant", help="print derived plant quantities")
    d.add_argument("scenario")
    d.set_defaults(func=_cmd_describe)

    f = sub.add_parser("fit", help="fit an inverse model from drive/response waveform files")
    f.add_argument("x", help="applied drive (CSV or .bin)")
    f.add_argument("y", help="observed response in waveform units (CSV or .bin)")
    f.add_argument("--family", required=True, choices=[m.value.lower() for m in ModelFamily] + [m.value for m in ModelFamily])
    f.add_argument("--order", type=int, required=True)
    f.add_argument("--memory", type=int, required=True)
    f.add_argument("--dc", action="store_true", help="include a DC term")
    f.add_argument("--ridge", type=float, default=None)
    f.add_argument("--delay-min", type=int, default=0)
    f.add_argument("--delay-max", type=int, default=0)
    f.add_argument("--lookahead", type=int, default=0)
    f.add_argument("--condition-ceiling", type=float, default=1e12)
    f.add_argument("--out")
    f.set_defaults(func=_cmd_fit)

    g = sub.add_parser("gen-waveform", help="write a pulse or estimation waveform")
    g.add_argument("kind", choices=["pulse"] + [k.value.lower() for k in EstimationKind])
    g.add_argument("--fs", type=float, default=1e6)
    g.add_argument("--out", required=True, help="CSV path, or .bin for binary")
    g.add_argument("--amplitude", type=float, default=1.0)
    g.add_argument("--t-rise", type=float, default=10e-6)
    g.add_argument("--t-hold", type=float, default=50e-6)
    g.add_argument("--t-fall", type=float, default=10e-6)
    g.add_argument("--count", type=int, default=1)
    g.add_argument("--gap", type=float, default=0.0)
    g.add_argument("--lo", type=float, default=0.0)
    g.add_argument("--hi", type=float, default=1.0)
    g.add_argument("--duration", type=float, default=1e-3)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--offset", type=float, default=0.0)
    g.add_argument("--scale", type=float, default=1.0)
    g.set_defaults(func=_cmd_gen)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (InsufficientExcitationError, RankDeficientError, NumericalFailure, np.linalg.LinAlgError,
            FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ScenarioError, ValueError, OSError) as exc:
        print(f"validation failure: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
