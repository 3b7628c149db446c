"""Plot-ready CSV bundles.

Every bundle starts with `# bundle=<name> version=<n>` followed by a fixed column
header; BUNDLE_COLUMNS pins the schema of each bundle.
"""

import csv
import logging
import os

import numpy as np

from backend.errors import DataError

logger = logging.getLogger(__name__)

REPORT_VERSION = 1

BUNDLE_COLUMNS = {
    "rabi_curve": ("power_nw", "pulse_area_rad", "prep_probability"),
    "density_matrix": ("row", "col", "real", "imag"),
    "chsh": ("setting_x", "setting_xx", "correlator", "sigma"),
    "window_rates": ("window_ns", "n_trials", "r1a", "r1b", "r2",
                     "singles_rate_hz", "r2_rate_hz"),
    "sps_depth_vs_window": ("window_ns", "p1", "sigma_p1", "p2plus", "sigma_p2plus",
                            "depth_db", "sigma_db", "unbounded"),
    "correlation": ("delay_ns", "counts"),
    "peak_areas": ("peak_index", "delay_ns", "counts"),
    "pair_criterion_vs_window": ("window_ns", "ps", "sigma_ps", "pe", "sigma_pe", "pe_x", "pe_xx",
                                 "threshold", "difference", "significance"),
    "pair_depth_trajectory": ("kind", "transmissivity", "pe", "ps", "threshold"),
}


def write_bundle(path, name, rows):
    """Write one bundle; rows are sequences in BUNDLE_COLUMNS[name] order."""
    if name not in BUNDLE_COLUMNS:
        raise DataError(f"unknown report bundle {name!r}")
    rows = list(rows)
    if not rows:
        raise DataError(f"no data for bundle {name}")
    with open(path, "w", newline="") as fh:
        fh.write(f"# bundle={name} version={REPORT_VERSION}\n")
        writer = csv.writer(fh)
        writer.writerow(BUNDLE_COLUMNS[name])
        writer.writerows(rows)
    logger.info("wrote %s bundle (%d rows) to %s", name, len(rows), path)
    return path


def read_bundle(path):
    """(name, version, columns, rows as string lists)."""
    with open(path, newline="") as fh:
        first = fh.readline().strip()
        if not first.startswith("# bundle="):
            raise DataError(f"{path} is not a report bundle")
        meta = dict(item.split("=", 1) for item in first[2:].split())
        reader = csv.reader(fh)
        columns = tuple(next(reader))
        return meta["bundle"], int(meta["version"]), columns, list(reader)


# -----------------------------
# Row builders
# -----------------------------
def rabi_rows(curve):
    return [list(row) for row in curve]


def density_rows(rho):
    m = rho.matrix
    return [[i, j, float(m[i, j].real), float(m[i, j].imag)] for i in range(4) for j in range(4)]


def chsh_rows(result):
    rows = [[i, j, result.correlators[2 * i + j], result.sigmas[2 * i + j]]
            for i in range(2) for j in range(2)]
    rows.append(["S", "S", result.s_value, result.sigma_s])
    return rows


def window_rate_rows(sweep):
    return [[r.window_ps / 1000.0, r.n_trials, r.r1a, r.r1b, r.r2,
             r.rate(r.r1a + r.r1b), r.rate(r.r2)] for r in sweep]


def sps_window_rows(windows_ps, stats_list, depths):
    rows = []
    for w, stats, depth in zip(windows_ps, stats_list, depths):
        rows.append([w / 1000.0, stats.p1, stats.sigma_p1, stats.p2plus, stats.sigma_p2plus,
                     "" if depth is None or depth.is_unbounded else depth.db,
                     "" if depth is None or depth.is_unbounded else depth.sigma_db,
                     int(depth is not None and depth.is_unbounded)])
    return rows


def correlation_rows(hist):
    return [[c / 1000.0, int(n)] for c, n in zip(hist.centers_ps, hist.counts)]


def peak_rows(peaks, period_ps, zero_delay_ps=0.0):
    rows = [[0, zero_delay_ps / 1000.0, peaks.zero_peak_counts]]
    for k, counts in sorted(zip(peaks.side_peak_indices, peaks.side_peak_counts)):
        rows.append([k, (k * period_ps + zero_delay_ps) / 1000.0, counts])
    return rows


def pair_window_rows(windows_ps, stats_list, reports):
    return [[w / 1000.0, s.ps, s.sigma_ps, s.pe, s.sigma_pe, s.pe_x, s.pe_xx,
             r.threshold, r.difference, "" if r.significance is None else r.significance]
            for w, s, r in zip(windows_ps, stats_list, reports)]


def trajectory_rows(stats, curve, boundary):
    """Gaussian boundary samples, the measured point and its loss trajectory."""
    rows = [["boundary", "", pe, thr, thr] for pe, thr, _ in boundary]
    rows += [["poisson_boundary", "", pe, poisson, thr] for pe, thr, poisson in boundary]
    rows.append(["measured", 1.0, stats.pe, stats.ps, ""])
    for point in curve:
        rows.append(["critical" if point.critical else "trajectory", point.transmissivity,
                     point.pe, point.ps, point.threshold])
    return rows


def boundary_grid(pe_max, n=200):
    """Log-spaced pe samples up to pe_max."""
    if not pe_max > 0:
        raise DataError("no data: measured P_e must be positive to sample the boundary")
    return list(np.logspace(np.log10(pe_max) - 4.0, np.log10(min(1.0, 10.0 * pe_max)), n))


def bundle_path(out_dir, name, suffix=""):
    os.makedirs(out_dir, exist_ok=True)
    return os.path.join(out_dir, f"{name}{suffix}.csv")
