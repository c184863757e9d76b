"""Command-line front end.

Subcommands:
  simulate        run a scenario config and write all artifacts
  analyze         extract the feedback series from a WAV recording
  metrics         recompute run metrics from trace/telemetry CSVs
  list-scenarios  show the bundled scenario configs

Exit codes: 0 success, 1 configuration error, 2 runtime assertion failure,
3 I/O error. The ECHOLOOP_OUT environment variable sets the default output
directory (falls back to the current directory).
"""

import argparse
import json
import os
import sys

from . import harness
from . import io as elio
from .dsp import DEFAULT_FRAME_LENGTH, BandSpec
from .victim import ConfigError

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2
EXIT_IO = 3

OUT_ENV_VAR = "ECHOLOOP_OUT"


def _default_out():
    return os.environ.get(OUT_ENV_VAR, ".")


def _parse_band(text) -> BandSpec:
    try:
        low, high = text.split(":")
        return BandSpec(float(low), float(high))
    except (ValueError, ConfigError) as exc:
        raise ConfigError(f"bad band {text!r} (expected LOW:HIGH in Hz): {exc}")


def cmd_simulate(args):
    if args.scenario.endswith((".yaml", ".yml")) or os.path.exists(args.scenario):
        scenario = harness.load_scenario(args.scenario)
    else:
        scenario = harness.load_bundled_scenario(args.scenario)
    report = harness.run_scenario(scenario, args.out, seed=args.seed)
    print(f"scenario {report.scenario!r} (seed {report.seed}) complete")
    for key, path in report.artifacts.items():
        print(f"  {key}: {path}")
    for key, value in report.metrics.items():
        print(f"  metric {key} = {value}")
    return EXIT_OK


def cmd_analyze(args):
    out_dir = args.out
    os.makedirs(out_dir, exist_ok=True)
    stem = os.path.splitext(os.path.basename(args.recording))[0]
    feedback_csv = os.path.join(out_dir, f"{stem}_feedback.csv")
    spectral_csv = os.path.join(out_dir, f"{stem}_spectral.csv")
    series = harness.analyze_recording(
        args.recording, _parse_band(args.band), frame_length=args.frame,
        feedback_csv=feedback_csv, spectral_csv=spectral_csv,
    )
    print(f"extracted {len(series.raw)} feedback frames "
          f"({series.chunk_duration:.6g} s each)")
    print(f"  feedback: {feedback_csv}")
    print(f"  spectral summary: {spectral_csv}")
    return EXIT_OK


def cmd_metrics(args):
    trace = elio.read_trace_csv(args.trace)
    telemetry = elio.read_telemetry_csv(args.telemetry) if args.telemetry else None
    metrics = harness.compute_metrics(trace, telemetry,
                                      analysis_start=args.analysis_start)
    print(json.dumps(metrics, indent=2, default=harness._json_default))
    return EXIT_OK


def cmd_list_scenarios(args):
    for name in harness.bundled_scenario_names():
        scenario = harness.load_bundled_scenario(name)
        print(f"{name}: mode={scenario.attack['mode']}, "
              f"duration={scenario.duration:g} s, seed={scenario.seed}")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="echoloop",
        description="Closed-loop acoustic sensor-spoofing simulation toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run a scenario and write artifacts")
    p.add_argument("scenario",
                   help="path to a scenario YAML, or a bundled scenario name")
    p.add_argument("--seed", type=int, default=None,
                   help="override the scenario seed")
    p.add_argument("--out", default=_default_out(),
                   help=f"output directory (default: ${OUT_ENV_VAR} or '.')")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("analyze", help="extract feedback from a WAV recording")
    p.add_argument("recording", help="input WAV file")
    p.add_argument("--band", required=True,
                   help="analysis band as LOW:HIGH in Hz, e.g. 14600:16900")
    p.add_argument("--frame", type=int, default=DEFAULT_FRAME_LENGTH,
                   help="spectral frame length in samples")
    p.add_argument("--out", default=_default_out(),
                   help=f"output directory (default: ${OUT_ENV_VAR} or '.')")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("metrics", help="recompute metrics from run CSVs")
    p.add_argument("trace", help="trace.csv from a simulation run")
    p.add_argument("telemetry", nargs="?", default=None,
                   help="telemetry.csv from the same run (optional)")
    p.add_argument("--analysis-start", type=float, default=0.0,
                   help="ignore samples before this time (s)")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("list-scenarios", help="show bundled scenario configs")
    p.set_defaults(func=cmd_list_scenarios)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ValueError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except AssertionError as exc:
        print(f"runtime assertion failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
