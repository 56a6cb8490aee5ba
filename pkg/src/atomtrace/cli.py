"""Command-line driver: simulate | analyze | scan | report.

Pipelines a run config through stream synthesis, persistence and
analysis, writing plot-ready delimited text (or JSON with --format json).
Outputs depend only on the config and seed, never on the wall clock, so
identical invocations produce byte-identical files.

Set ATOMTRACE_LOG=debug|info|warning to control verbosity.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import analysis as ana
from . import config as cfg
from . import streamfile
from .events import simulate_stream
from .physics import detuning_scan, fluorescence_duration_scan

log = logging.getLogger("atomtrace.cli")

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_CONFIG = 2
EXIT_STREAM = 3
EXIT_ANALYSIS = 4


def _configure_logging():
    level = os.environ.get("ATOMTRACE_LOG", "warning").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def _echo_lines(run: cfg.RunConfig):
    """Config echo as comment lines, sufficient to re-run the experiment."""
    doc = streamfile.config_to_dict(run.simulation)
    flat = []

    def walk(prefix, node):
        if isinstance(node, dict):
            for k in sorted(node):
                walk(f"{prefix}{k}.", node[k])
        else:
            flat.append(f"# {prefix[:-1]} = {node}")

    walk("", doc)
    flat.append(f"# analysis.bin_width = {run.analysis.bin_width}")
    flat.append(f"# analysis.max_lag = {run.analysis.max_lag}")
    flat.append(f"# analysis.window = {run.analysis.window}")
    flat.append(f"# analysis.threshold = {run.analysis.threshold or 'auto'}")
    return flat


def _write_csv(path, header_lines, columns, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        for line in header_lines:
            fh.write(line + "\n")
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([repr(v) if isinstance(v, float) else v for v in row])


def cmd_simulate(args) -> int:
    run = cfg.load_run_config(args.config)
    sim = run.simulation
    if args.seed is not None:
        sim = dataclasses.replace(sim, seed=args.seed)
    stream = simulate_stream(sim)
    streamfile.write_stream(stream, args.out)
    print(f"wrote {len(stream)} events over {stream.duration:g} s to {args.out}")
    return EXIT_OK


def _analyze(stream, run: cfg.RunConfig):
    """Analysis pipeline shared by the CLI and the report files."""
    pars = run.analysis
    noise_rate = run.simulation.noise_rate
    total_rate = stream.total_rate
    result = {
        "n_events": int(len(stream)),
        "duration_s": stream.duration,
        "total_rate_hz": total_rate,
        "noise_rate_hz": noise_rate,
    }
    g2 = ana.estimate_g2(stream, pars.bin_width, pars.max_lag)
    fit = None
    try:
        fit = ana.fit_g2(g2, noise_rate, total_rate)
        result.update(
            no_atom_signal=False,
            g2_zero=fit.g2_zero,
            delta_tau_us=fit.delta_tau * 1e6,
            n_per_atom=fit.n_per_atom,
            n_per_atom_stderr=fit.stderr_n_per_atom,
            atom_rate_hz=fit.atom_rate,
            burst_event_rate_hz=fit.event_rate,
        )
    except ana.NoAtomSignalError as exc:
        result.update(no_atom_signal=True, no_atom_signal_reason=str(exc))

    threshold = pars.threshold
    if threshold is None:
        lam_noise = noise_rate * pars.window
        lam_signal = fit.n_per_atom if fit is not None else None
        if lam_signal is None or not lam_signal > lam_noise:
            threshold = 1  # nothing above background; any event is of interest
        else:
            threshold = ana.optimal_threshold(lam_noise, lam_signal)
    result["threshold"] = int(threshold)

    counts = ana.sliding_count(stream, pars.window)
    report = ana.detect_atoms(
        stream,
        pars.window,
        threshold,
        lambda_noise=noise_rate * pars.window,
        lambda_signal=fit.n_per_atom if fit is not None else None,
    )
    result.update(
        n_detected=report.n_detected,
        predicted_fake_prob=report.predicted_fake_prob,
        predicted_miss_prob=report.predicted_miss_prob,
    )
    return result, g2, fit, counts, report


def cmd_analyze(args) -> int:
    run = cfg.load_run_config(args.config)
    stream = streamfile.read_stream(args.stream)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    summary, g2, fit, counts, report = _analyze(stream, run)
    echo = _echo_lines(run)

    if args.format == "json":
        doc = dict(summary)
        doc["g2"] = {
            "lag_us": (g2.lags * 1e6).tolist(),
            "value": g2.values.tolist(),
            "pair_count": g2.pair_counts.tolist(),
        }
        if fit is not None:
            doc["g2"]["fit"] = ana.triangular_g2(
                g2.lags, fit.event_rate, fit.delta_tau, fit.noise_rate, fit.total_rate
            ).tolist()
        doc["transient_count"] = {
            "time_us": (counts.times * 1e6).tolist(),
            "count": counts.counts.tolist(),
        }
        doc["detections"] = {
            "arrival_us": (report.atom_arrivals * 1e6).tolist(),
            "peak_height": report.peak_heights.tolist(),
        }
        doc["peak_histogram"] = report.histogram.tolist()
        (outdir / "report.json").write_text(
            json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
    else:
        _write_csv(outdir / "summary.csv", echo, ["key", "value"],
                   sorted(summary.items()))
        if fit is not None:
            fit_col = ana.triangular_g2(
                g2.lags, fit.event_rate, fit.delta_tau, fit.noise_rate, fit.total_rate
            )
            rows = zip(g2.lags * 1e6, g2.values, g2.pair_counts, fit_col)
            _write_csv(outdir / "g2.csv", echo,
                       ["lag_us", "g2", "pair_count", "fit"], rows)
        else:
            rows = zip(g2.lags * 1e6, g2.values, g2.pair_counts)
            _write_csv(outdir / "g2.csv", echo, ["lag_us", "g2", "pair_count"], rows)
        _write_csv(outdir / "transient_count.csv", echo, ["time_us", "count"],
                   zip(counts.times * 1e6, counts.counts))
        _write_csv(outdir / "detections.csv", echo, ["arrival_us", "peak_height"],
                   zip(report.atom_arrivals * 1e6, report.peak_heights))
        _write_csv(outdir / "peak_histogram.csv", echo, ["height", "count"],
                   enumerate(report.histogram))

    n = summary["n_detected"]
    if summary.get("no_atom_signal"):
        print(f"no atom signal in correlation; {n} excursions above threshold "
              f"{summary['threshold']}")
    else:
        print(
            f"{n} atoms detected; g2(0)={summary['g2_zero']:.2f}, "
            f"burst duration {summary['delta_tau_us']:.1f} us, "
            f"{summary['n_per_atom']:.1f} events/atom"
        )
    return EXIT_OK


def cmd_scan(args) -> int:
    run = cfg.load_run_config(args.config)
    if run.scan is None:
        raise cfg.ConfigError("missing section 'scan'")
    sim, spec = run.simulation, run.scan
    grid = np.linspace(spec.start, spec.stop, spec.points)
    echo = _echo_lines(run)
    if spec.kind == "detuning":
        result = detuning_scan(
            sim.transition, sim.beam, sim.kinematics,
            spec.interaction_time_us * 1e-6, grid * cfg.MHZ,
        )
        _write_csv(args.out, echo + [f"# optimal_detuning_mhz = {result.optimal_detuning / cfg.MHZ!r}"],
                   ["detuning_mhz", "photon_yield"],
                   zip(result.detunings / cfg.MHZ, result.yields))
        print(f"detuning scan: optimum at {result.optimal_detuning / cfg.MHZ:.3f} MHz, "
              f"peak yield {result.peak_yield:.1f}")
    else:
        if spec.start <= 0:
            raise cfg.ConfigError("scan.start must be positive for a height scan")
        result = fluorescence_duration_scan(
            sim.transition, sim.beam, sim.kinematics, grid * cfg.MM,
            exit_fraction=spec.exit_fraction,
        )
        _write_csv(args.out, echo, ["height_mm", "interaction_time_us", "duration_us"],
                   zip(result.heights / cfg.MM, result.interaction_times * 1e6,
                       result.durations * 1e6))
        print(f"height scan: duration saturates at {result.durations.max() * 1e6:.1f} us")
    return EXIT_OK


def cmd_report(args) -> int:
    outdir = Path(args.dir)
    summary_csv = outdir / "summary.csv"
    summary_json = outdir / "report.json"
    if summary_json.exists():
        doc = json.loads(summary_json.read_text(encoding="utf-8"))
        items = {k: v for k, v in doc.items() if not isinstance(v, (dict, list))}
    elif summary_csv.exists():
        items = {}
        with open(summary_csv, encoding="utf-8") as fh:
            for row in csv.reader(ln for ln in fh if not ln.startswith("#")):
                if row and row[0] != "key":
                    items[row[0]] = row[1]
    else:
        raise FileNotFoundError(f"no summary.csv or report.json in {outdir}")
    for key in sorted(items):
        print(f"{key}: {items[key]}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="atomtrace",
        description="Simulate and analyze time-tagged single-atom fluorescence streams.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="synthesize a photon stream")
    p_sim.add_argument("--config", required=True)
    p_sim.add_argument("--out", required=True, help="output stream file")
    p_sim.add_argument("--seed", type=int, default=None, help="override the config seed")
    p_sim.set_defaults(func=cmd_simulate)

    p_ana = sub.add_parser("analyze", help="correlate, fit and detect atoms")
    p_ana.add_argument("--config", required=True)
    p_ana.add_argument("--stream", required=True)
    p_ana.add_argument("--out", required=True, help="report directory")
    p_ana.add_argument("--format", choices=("csv", "json"), default="csv")
    p_ana.set_defaults(func=cmd_analyze)

    p_scan = sub.add_parser("scan", help="sweep detuning or beam height")
    p_scan.add_argument("--config", required=True)
    p_scan.add_argument("--out", required=True, help="output CSV")
    p_scan.set_defaults(func=cmd_scan)

    p_rep = sub.add_parser("report", help="print a report summary")
    p_rep.add_argument("--dir", required=True)
    p_rep.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    _configure_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except cfg.ConfigError as exc:
        print(f"error:config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except streamfile.StreamFileError as exc:
        print(f"error:stream-format: {exc}", file=sys.stderr)
        return EXIT_STREAM
    except (FileNotFoundError, OSError) as exc:
        print(f"error:io: {exc}", file=sys.stderr)
        return EXIT_STREAM
    except (ana.NoAtomSignalError, RuntimeError, ValueError) as exc:
        print(f"error:analysis: {exc}", file=sys.stderr)
        return EXIT_ANALYSIS


if __name__ == "__main__":
    sys.exit(main())
