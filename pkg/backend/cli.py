"""Command-line entry point: `python -m backend.cli <command> ...`.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 criterion not
violated, 1 anything else.
"""

import argparse
import json
import logging
import math
import sys

import numpy as np

from backend import __version__, config
from backend.cascade_simulator import (
    ChannelConfig,
    QdSourceConfig,
    SpdcSourceConfig,
    rabi_curve,
    simulate,
)
from backend.errors import ConfigError, CriterionNotViolated, DataError, NoHeraldsError, QngError
from backend.estimators import (
    g2_from_peaks,
    hbt_counts,
    pair_click_stats,
    photon_stats,
    prep_diagnostic,
)
from backend.photon_number_models import gaussian_oracle_grid
from backend.polarization_entanglement import (
    TomographyCounts,
    chsh_from_counts,
    fidelity,
    phase_optimized_fidelity,
    read_chsh_csv,
    tomography_reconstruct,
)
from backend.qng_criteria import (
    PairClickStats,
    PhotonNumberStats,
    boundary_curve,
    depth_curve,
    pair_depth,
    pair_violation,
    sps_depth,
)
from backend import reports
from backend.timetag_coincidence import (
    PHOTON_ROLES,
    auto_offsets,
    correlation_histogram,
    fold_pulses,
    fold_pulses_multi,
    read_csv,
    read_stream,
    summed_peak_areas,
    sweep_rows,
    window_sweep,
    write_csv,
    write_stream,
)

logger = logging.getLogger(__name__)

DEFAULT_T_GRID = [10 ** (-x / 20.0) for x in range(0, 401)]  # 0 .. 20 dB in 0.05 dB steps


# -----------------------------
# Helpers
# -----------------------------
def _json_default(value):
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"not JSON serializable: {type(value).__name__}")


def emit(data, out=None):
    text = json.dumps(data, indent=2, default=_json_default)
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
        logger.info("wrote %s", out)
    else:
        print(text)


def _run_config(args):
    path = getattr(args, "config", None)
    return config.load_run_config(path) if path else config.RunConfig.defaults()


def _open_stream(path):
    if path.lower().endswith(".csv"):
        return read_csv(path)[1]
    return read_stream(path)[1]


def _parse_offsets(text, stream):
    if text is None or text.strip().lower() == "auto":
        offsets = auto_offsets(stream)
        logger.info("calibrated offsets [ps]: %s",
                    ", ".join(f"{r}={v:.1f}" for r, v in offsets.items()))
        return offsets
    offsets = {}
    try:
        for item in text.split(","):
            role, value = item.split("=")
            offsets[role.strip()] = float(value)
    except ValueError:
        raise ConfigError(f"offsets must be 'auto' or role=ps pairs, got {text!r}") from None
    unknown = set(offsets) - set(PHOTON_ROLES)
    if unknown:
        raise ConfigError(f"unknown roles in offsets: {sorted(unknown)}")
    return offsets


def _analysis(args, name):
    """Command-line value if given, otherwise the [analysis] value of the run config."""
    value = getattr(args, name, None)
    return _run_config(args).analysis[name] if value is None else value


def _herald(args):
    herald = _analysis(args, "herald")
    return None if herald in (None, "none") else herald


def _load_json(path, key):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read statistics {path}: {exc}") from None
    if not isinstance(data, dict):
        raise DataError(f"{path}: expected a JSON object, got {type(data).__name__}")
    if not data:
        raise DataError(f"no data in {path}")
    return data.get(key, data)


def _ps_window(ns):
    return float(ns) * 1000.0


# -----------------------------
# simulate
# -----------------------------
def build_source(cfg):
    kind = cfg.source["kind"]
    src = QdSourceConfig.from_run_config(cfg) if kind == "qd" else SpdcSourceConfig.from_run_config(cfg)
    return kind, src


def cmd_simulate(args):
    cfg = _run_config(args)
    pulses = args.pulses if args.pulses is not None else cfg.run["pulses"]
    seed = args.seed if args.seed is not None else cfg.run["seed"]
    out = args.out or cfg.run["out"]
    kind, src = build_source(cfg)
    chain = ChannelConfig.from_run_config(cfg)
    print(f"seed: {seed}")
    logger.info("simulating %d pulses of a %s source with seed %d", pulses, kind, seed)
    stream = simulate(kind, src, chain, pulses, seed, threads=args.threads)
    if out.lower().endswith(".csv"):
        write_csv(stream, out)
        count = stream.tag_count()
    else:
        count = write_stream(stream.header, stream, out).tag_count
    logger.info("wrote %d tags to %s", count, out)
    return 0


# -----------------------------
# analyze
# -----------------------------
def cmd_fold(args):
    stream = _open_stream(args.stream)
    offsets = _parse_offsets(_analysis(args, "offsets"), stream)
    table = fold_pulses(stream, _ps_window(_analysis(args, "window_ns")), offsets)
    emit({"n_pulses": table.n_pulses, "window_ns": table.window_ps / 1000.0, "offsets_ps": offsets,
          "clicks": {role: table.count(role) for role in table.roles}}, args.out)
    return 0


def cmd_correlate(args):
    stream = _open_stream(args.stream)
    hist = correlation_histogram(stream, args.a, args.b, _analysis(args, "bin_ps"),
                                 _ps_window(_analysis(args, "range_ns")))
    if args.out:
        reports.write_bundle(args.out, "correlation", reports.correlation_rows(hist))
    else:
        emit({"bin_ps": hist.bin_width_ps, "range_ps": hist.range_ps, "counts": hist.counts})
    return 0


def cmd_sweep(args):
    stream = _open_stream(args.stream)
    windows = [_ps_window(w) for w in _analysis(args, "windows_ns")]
    offsets = _parse_offsets(_analysis(args, "offsets"), stream)
    rows, _ = window_sweep(stream, windows, tuple(args.roles.split(",")), _herald(args), offsets)
    if args.out:
        reports.write_bundle(args.out, "window_rates", reports.window_rate_rows(rows))
    else:
        emit([row.to_dict() for row in rows])
    return 0


def _hbt(stream, args, window_ps, offsets):
    table = fold_pulses(stream, window_ps, offsets)
    counts = hbt_counts(table, _herald(args))
    return counts, photon_stats(counts, _analysis(args, "bs_ratio"), exclusive=args.exclusive)


def cmd_hbt(args):
    stream = _open_stream(args.stream)
    offsets = _parse_offsets(_analysis(args, "offsets"), stream)
    counts, stats = _hbt(stream, args, _ps_window(_analysis(args, "window_ns")), offsets)
    emit({"counts": counts.to_dict(), "stats": stats.to_dict()}, args.out)
    return 0


def cmd_pairs(args):
    stream = _open_stream(args.stream)
    offsets = _parse_offsets(_analysis(args, "offsets"), stream)
    window_ps = _ps_window(_analysis(args, "window_ns"))
    table = fold_pulses(stream, window_ps, offsets)
    stats = pair_click_stats(table, _analysis(args, "pair_convention"), _analysis(args, "pe_aggregation"))
    emit({"window_ns": window_ps / 1000.0, "convention": _analysis(args, "pair_convention"),
          "stats": stats.to_dict()}, args.out)
    return 0


def _peak_window(args):
    """Peak integration window in ps, or None for the default fraction of the period."""
    value = _analysis(args, "peak_window_ns")
    return None if value is None else _ps_window(value)


def cmd_g2(args):
    stream = _open_stream(args.stream)
    pair = ("x1", "x2") if args.arm == "x" else ("xx1", "xx2")
    _, zero, peaks = summed_peak_areas(stream, [pair], _analysis(args, "bin_ps"),
                                        _peak_window(args), _analysis(args, "side_peaks"))
    emit({"arm": args.arm, "zero_delay_ps": zero, "peaks": peaks.to_dict(),
          "g2": g2_from_peaks(peaks).to_dict()}, args.out)
    return 0


def cmd_prep(args):
    stream = _open_stream(args.stream)
    pairs = [(a, b) for a in ("xx1", "xx2") for b in ("x1", "x2")]
    _, zero, peaks = summed_peak_areas(stream, pairs, _analysis(args, "bin_ps"),
                                        _peak_window(args), args.far_max)
    diag = prep_diagnostic(peaks, far=tuple(range(args.far_min, args.far_max + 1)))
    if diag.ratio > 1.0 + 3.0 * diag.far.sigma / max(diag.far.value, 1e-300):
        logger.warning("near/far preparation ratio %.3f suggests blinking", diag.ratio)
    emit({"zero_delay_ps": zero, "prep_efficiency": diag.near.to_dict(), **diag.to_dict()}, args.out)
    return 0


def cmd_tomography(args):
    counts = TomographyCounts.read_csv(args.counts)
    rho = tomography_reconstruct(counts)
    if args.out_dir:
        reports.write_bundle(reports.bundle_path(args.out_dir, "density_matrix"), "density_matrix",
                             reports.density_rows(rho))
    emit({"real": rho.matrix.real, "imag": rho.matrix.imag, "fidelity": fidelity(rho),
          "fidelity_phase_optimized": phase_optimized_fidelity(rho), "purity": rho.purity(),
          "concurrence": rho.concurrence()}, args.out)
    return 0


def cmd_chsh(args):
    result = chsh_from_counts(read_chsh_csv(args.counts))
    emit(result.to_dict(), args.out)
    return 0


# -----------------------------
# certify
# -----------------------------
def cmd_certify_sps(args):
    if args.stats:
        stats_list = [(None, PhotonNumberStats.from_dict(_load_json(args.stats, "stats")))]
    else:
        stream = _open_stream(args.stream)
        offsets = _parse_offsets(_analysis(args, "offsets"), stream)
        stats_list = [(_ps_window(w), _hbt(stream, args, _ps_window(w), offsets)[1])
                      for w in _analysis(args, "windows_ns")]
    rows = []
    for window_ps, stats in stats_list:
        depth = sps_depth(stats)
        rows.append({"window_ns": None if window_ps is None else window_ps / 1000.0,
                     "stats": stats.to_dict(), "depth": depth.to_dict()})
    best = max(rows, key=lambda r: math.inf if r["depth"]["kind"] == "unbounded" else r["depth"]["db"])
    emit({"mode": "sps", "windows": rows, "best": best}, args.out)
    if best["depth"]["kind"] != "unbounded" and best["depth"]["db"] <= 0.0:
        raise CriterionNotViolated("single-photon criterion not violated in any window")
    return 0


def _pair_entry(window_ps, stats):
    try:
        report = pair_depth(stats)
    except CriterionNotViolated:
        report = pair_violation(stats)
    return {"window_ns": None if window_ps is None else window_ps / 1000.0,
            "stats": stats.to_dict(), "report": report.to_dict()}


def cmd_certify_pairs(args):
    if args.stats:
        entries = [_pair_entry(None, PairClickStats.from_dict(_load_json(args.stats, "stats")))]
    else:
        stream = _open_stream(args.stream)
        offsets = _parse_offsets(_analysis(args, "offsets"), stream)
        windows = [_ps_window(w) for w in _analysis(args, "windows_ns")]
        tables = fold_pulses_multi(stream, windows, offsets)
        convention, aggregation = _analysis(args, "pair_convention"), _analysis(args, "pe_aggregation")
        entries = [_pair_entry(w, pair_click_stats(t, convention, aggregation)) for w, t in zip(windows, tables)]

    def score(entry):
        report = entry["report"]
        sig = report["significance"]
        return (sig if sig is not None else -math.inf, report["difference"])

    best = max(entries, key=score)
    emit({"mode": "pairs", "windows": entries, "best": best}, args.out)
    if not best["report"]["certified"]:
        raise CriterionNotViolated("pair criterion not violated in any window")
    return 0


# -----------------------------
# oracle and report
# -----------------------------
def cmd_oracle(args):
    rows = gaussian_oracle_grid(args.mus, args.modes, args.etas, args.darks,
                                args.convention, args.aggregation)
    if not rows:
        raise DataError("no data: the oracle grid is empty")
    columns = list(rows[0].to_dict())
    lines = [",".join(columns)] + [",".join(repr(v) for v in r.to_dict().values()) for r in rows]
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")
        logger.info("wrote %d oracle rows to %s", len(rows), args.out)
    else:
        print("\n".join(lines))
    violating = sum(r.margin < 0 for r in rows)
    logger.info("%d of %d Gaussian points above the pair threshold", violating, len(rows))
    return 0


def cmd_report(args):
    written = []
    out_dir = args.out_dir
    if args.rabi_powers_nw:
        path = reports.bundle_path(out_dir, "rabi_curve")
        written.append(reports.write_bundle(path, "rabi_curve", reports.rabi_rows(rabi_curve(args.rabi_powers_nw))))
    if args.tomography:
        rho = tomography_reconstruct(TomographyCounts.read_csv(args.tomography))
        written.append(reports.write_bundle(reports.bundle_path(out_dir, "density_matrix"),
                                            "density_matrix", reports.density_rows(rho)))
    if args.chsh:
        written.append(reports.write_bundle(reports.bundle_path(out_dir, "chsh"), "chsh",
                                            reports.chsh_rows(chsh_from_counts(read_chsh_csv(args.chsh)))))
    if args.stats:
        stats = PairClickStats.from_dict(_load_json(args.stats, "stats"))
        written.append(_trajectory_bundle(out_dir, stats))
    if args.stream:
        written += _stream_bundles(args, out_dir)
    if not written:
        raise DataError("no data: give at least one of --stream, --stats, --tomography, --chsh, --rabi-powers-nw")
    emit({"bundles": written})
    return 0


def _trajectory_bundle(out_dir, stats, suffix=""):
    curve = depth_curve(stats, DEFAULT_T_GRID)
    boundary = boundary_curve(reports.boundary_grid(stats.pe))
    return reports.write_bundle(reports.bundle_path(out_dir, "pair_depth_trajectory", suffix),
                                "pair_depth_trajectory", reports.trajectory_rows(stats, curve, boundary))


REPORT_HERALD = "xx"


def _sps_bundles(out_dir, windows, tables, rep_rate_hz, herald, bs_ratio, suffix):
    sweep = sweep_rows(tables, rep_rate_hz, ("x1", "x2"), herald)
    sps_stats, depths = [], []
    for table in tables:
        stats = photon_stats(hbt_counts(table, herald), bs_ratio)
        sps_stats.append(stats)
        depths.append(sps_depth(stats) if stats.p1 > 0 else None)
    return [
        reports.write_bundle(reports.bundle_path(out_dir, "window_rates", suffix), "window_rates",
                             reports.window_rate_rows(sweep)),
        reports.write_bundle(reports.bundle_path(out_dir, "sps_depth_vs_window", suffix),
                             "sps_depth_vs_window", reports.sps_window_rows(windows, sps_stats, depths)),
    ]


def _stream_bundles(args, out_dir):
    stream = _open_stream(args.stream)
    period = stream.header.period_ps
    offsets = _parse_offsets(_analysis(args, "offsets"), stream)
    windows = [_ps_window(w) for w in _analysis(args, "windows_ns")]
    bs_ratio = _analysis(args, "bs_ratio")
    written = []

    # unheralded and heralded HBT bundles share one fold
    _, tables = window_sweep(stream, windows, ("x1", "x2"), None, offsets)
    rep_rate = stream.header.rep_rate_hz
    written.extend(_sps_bundles(out_dir, windows, tables, rep_rate, None, bs_ratio, ""))
    try:
        written.extend(_sps_bundles(out_dir, windows, tables, rep_rate, _herald(args) or REPORT_HERALD,
                                    bs_ratio, "_heralded"))
    except NoHeraldsError as exc:
        logger.warning("heralded bundles skipped: %s", exc)

    convention, aggregation = _analysis(args, "pair_convention"), _analysis(args, "pe_aggregation")
    pair_stats = [pair_click_stats(t, convention, aggregation) for t in tables]
    written.append(reports.write_bundle(reports.bundle_path(out_dir, "pair_criterion_vs_window"),
                                        "pair_criterion_vs_window",
                                        reports.pair_window_rows(windows, pair_stats,
                                                                 [pair_violation(s) for s in pair_stats])))

    bin_ps, side = _analysis(args, "bin_ps"), _analysis(args, "side_peaks")
    window_ps = _peak_window(args)
    cross, zero, _ = summed_peak_areas(stream, [("xx1", "x1")], bin_ps, window_ps, side)
    written.append(reports.write_bundle(reports.bundle_path(out_dir, "correlation", "_xx_x"), "correlation",
                                        reports.correlation_rows(cross)))
    for arm, pair in (("x", ("x1", "x2")), ("xx", ("xx1", "xx2"))):
        _, zero, peaks = summed_peak_areas(stream, [pair], bin_ps, window_ps, side)
        written.append(reports.write_bundle(reports.bundle_path(out_dir, "peak_areas", f"_{arm}"),
                                            "peak_areas", reports.peak_rows(peaks, period, zero)))

    best = max(pair_stats, key=lambda s: s.ps - pair_violation(s).threshold)
    if best.pe > 0:
        written.append(_trajectory_bundle(out_dir, best))
    return written


# -----------------------------
# Parser
# -----------------------------
def _float_list(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _int_list(text):
    return [int(v) for v in _float_list(text)]


def _add_analysis_options(parser, window=True):
    parser.add_argument("--config", help="Run configuration (INI); supplies [analysis] defaults.")
    parser.add_argument("--offsets", default=None, help="'auto' or role=ps pairs, e.g. x1=120,x2=130.")
    parser.add_argument("--herald", default=None, choices=["none", "x", "x1", "x2", "xx", "xx1", "xx2"])
    parser.add_argument("--bs-ratio", dest="bs_ratio", type=float, default=None)
    parser.add_argument("--bin-ps", dest="bin_ps", type=float, default=None)
    parser.add_argument("--range-ns", dest="range_ns", type=float, default=None)
    parser.add_argument("--side-peaks", dest="side_peaks", type=int, default=None)
    parser.add_argument("--peak-window-ns", dest="peak_window_ns", type=float, default=None,
                        help="Peak integration window for g2 and prep; 0.75 of the period by default.")
    parser.add_argument("--convention", dest="pair_convention", default=None, choices=["detector_pair", "arm"])
    parser.add_argument("--aggregation", dest="pe_aggregation", default=None, choices=["mean", "sum", "max"])
    parser.add_argument("--exclusive", action="store_true", help="Exclusive singles for P1.")
    if window:
        parser.add_argument("--window-ns", dest="window_ns", type=float, default=None)
    parser.add_argument("--windows-ns", dest="windows_ns", type=_float_list, default=None)
    parser.add_argument("-o", "--out", help="Output path; stdout if omitted.")


def create_cli_parser():
    parser = argparse.ArgumentParser(
        prog="backend.cli",
        description="Simulate, analyze and certify pulsed entangled photon-pair sources.",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("--verbosity", choices=["DEBUG", "INFO", "WARNING", "ERROR"], default=None,
                        help="Logging level; defaults to QNG_LOG_LEVEL.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="Generate a time-tag stream.")
    p.add_argument("--config", help="Run configuration (INI).")
    p.add_argument("--pulses", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None, help="Output file (.qtt binary or .csv).")
    p.add_argument("--threads", type=int, default=None, help="Worker processes; defaults to QNG_THREADS.")
    p.set_defaults(func=cmd_simulate)

    analyze = sub.add_parser("analyze", help="Analyze a time-tag stream or count table.")
    asub = analyze.add_subparsers(dest="analysis", required=True)
    for name, func, helptext in (("fold", cmd_fold, "Per-pulse click table summary."),
                                 ("hbt", cmd_hbt, "P0/P1/P2+ from the X-arm HBT."),
                                 ("pairs", cmd_pairs, "P_s and P_e in one window.")):
        p = asub.add_parser(name, help=helptext)
        p.add_argument("stream")
        _add_analysis_options(p)
        p.set_defaults(func=func)

    p = asub.add_parser("correlate", help="Correlation histogram of two channels.")
    p.add_argument("stream")
    p.add_argument("--a", default="x1")
    p.add_argument("--b", default="x2")
    _add_analysis_options(p)
    p.set_defaults(func=cmd_correlate)

    p = asub.add_parser("sweep", help="Singles and doubles versus coincidence window.")
    p.add_argument("stream")
    p.add_argument("--roles", default="x1,x2")
    _add_analysis_options(p)
    p.set_defaults(func=cmd_sweep)

    p = asub.add_parser("g2", help="g2 of one arm from peak areas.")
    p.add_argument("stream")
    p.add_argument("--arm", choices=["x", "xx"], default="x")
    _add_analysis_options(p)
    p.set_defaults(func=cmd_g2)

    p = asub.add_parser("prep", help="Preparation efficiency from the X-XX cross-correlation.")
    p.add_argument("stream")
    p.add_argument("--far-min", type=int, default=20)
    p.add_argument("--far-max", type=int, default=40)
    _add_analysis_options(p)
    p.set_defaults(func=cmd_prep)

    for name, func in (("tomography", cmd_tomography), ("chsh", cmd_chsh)):
        p = asub.add_parser(name, help=f"{name} from a CSV count table.")
        p.add_argument("counts")
        p.add_argument("-o", "--out")
        if name == "tomography":
            p.add_argument("--out-dir", default=None, help="Also write the density-matrix bundle.")
        p.set_defaults(func=func)

    certify = sub.add_parser("certify", help="Certify quantum non-Gaussianity.")
    csub = certify.add_subparsers(dest="mode", required=True)
    for name, func in (("sps", cmd_certify_sps), ("pairs", cmd_certify_pairs)):
        p = csub.add_parser(name)
        source = p.add_mutually_exclusive_group(required=True)
        source.add_argument("--stats", help="Statistics JSON from `analyze hbt` or `analyze pairs`.")
        source.add_argument("--stream", help="Time-tag stream; every window is analyzed.")
        _add_analysis_options(p, window=False)
        p.set_defaults(func=func)

    p = sub.add_parser("oracle", help="Click statistics of Gaussian sources over a grid.")
    p.add_argument("--mus", type=_float_list, default=[0.001, 0.01, 0.1, 0.5, 1.0, 2.0])
    p.add_argument("--modes", type=_int_list, default=[1, 2, 10, 1_000_000])
    p.add_argument("--etas", type=_float_list, default=[0.01, 0.1, 0.5, 0.9])
    p.add_argument("--darks", type=_float_list, default=[0.0, 1e-6, 1e-4])
    p.add_argument("--convention", choices=["detector_pair", "arm"], default="detector_pair")
    p.add_argument("--aggregation", choices=["mean", "sum", "max"], default="mean")
    p.add_argument("-o", "--out")
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("report", help="Write plot-ready CSV bundles.")
    p.add_argument("--stream")
    p.add_argument("--stats", help="Pair statistics JSON for the depth trajectory.")
    p.add_argument("--tomography", help="Tomography count CSV.")
    p.add_argument("--chsh", help="CHSH count CSV.")
    p.add_argument("--rabi-powers-nw", type=_float_list, default=None)
    p.add_argument("--out-dir", default="report")
    _add_analysis_options(p)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None):
    parser = create_cli_parser()
    args = parser.parse_args(argv)
    try:
        config.configure_logging(args.verbosity)
        return args.func(args)
    except QngError as exc:
        logger.error("%s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except Exception as exc:
        logger.critical("unexpected error: %s", exc, exc_info=True)
        return 1


if __name__ == "__main__":
    sys.exit(main())
