"""Physical quantities from click tables and peak areas, with Poisson uncertainties."""

import logging
import math
from dataclasses import asdict, dataclass

from backend.errors import DataError, NoHeraldsError, ParameterError
from backend.qng_criteria import PairClickStats, PhotonNumberStats, aggregate_pe
from backend.timetag_coincidence import PHOTON_ROLES, ROLE_BITS, role_bits

logger = logging.getLogger(__name__)

UNBALANCED_BS_TOL = 0.10
THIRD_ORDER_P2PLUS = 0.01
POISSON_UPPER_95 = -math.log(0.05)  # one-sided 95 % bound on a zero count
NEAR_PEAKS = tuple(range(1, 6))
FAR_PEAKS = tuple(range(20, 41))


@dataclass(frozen=True)
class ClickCounts:
    n: int
    r1a: int
    r1b: int
    r2: int
    heralded: bool = False

    def __post_init__(self):
        if min(self.n, self.r1a, self.r1b, self.r2) < 0:
            raise DataError("click counts must be non-negative")
        if self.r2 > min(self.r1a, self.r1b):
            raise DataError("double clicks exceed single clicks")
        if max(self.r1a, self.r1b) > self.n:
            raise DataError("single clicks exceed the number of trials")

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class Estimate:
    value: float
    sigma: float
    upper_bound: float = None

    def to_dict(self):
        return asdict(self)


def hbt_counts(table, herald=None, roles=("x1", "x2")):
    """Singles and doubles of one HBT pair, optionally restricted to heralded pulses."""
    table.require(*roles)
    if herald is not None:
        table.require(*[r for r in PHOTON_ROLES if ROLE_BITS[r] & role_bits(herald)])
    n, r1a, r1b, r2 = table.click_counts(roles[0], roles[1], herald)
    if herald is not None and n == 0:
        raise NoHeraldsError(f"no heralds: detector(s) {herald} never clicked")
    return ClickCounts(n, r1a, r1b, r2, heralded=herald is not None)


def photon_stats(counts, bs_ratio=0.5, exclusive=False):
    """P1, P2+ and P0 from HBT clicks; P2+ corrected by 2R(1-R) for the splitting ratio.

    With `exclusive` the singles exclude pulses where both detectors clicked.
    """
    if not 0.0 < bs_ratio < 1.0:
        raise ParameterError(f"beam-splitter ratio must lie in (0, 1), got {bs_ratio!r}")
    if counts.n <= 0:
        raise DataError("no trials to estimate photon-number statistics from")
    split = 2.0 * bs_ratio * (1.0 - bs_ratio)
    singles = counts.r1a + counts.r1b - (2 * counts.r2 if exclusive else 0)
    p1 = singles / counts.n
    p2 = counts.r2 / (counts.n * split)
    flags = []
    if abs(split - 0.5) / 0.5 > UNBALANCED_BS_TOL:
        flags.append("unbalanced_bs")
        logger.warning("splitting ratio %.3f changes the P2+ correction by more than 10%%", bs_ratio)
    if p2 > THIRD_ORDER_P2PLUS:
        flags.append("third_order")
        logger.warning("P2+ = %.3g: third-order photon terms are not negligible", p2)
    if p1 + p2 > 1.0 + 1e-9:
        raise DataError(f"P1 + P2+ = {p1 + p2:.6g} exceeds 1; check the splitting ratio")
    return PhotonNumberStats(p0=max(1.0 - p1 - p2, 0.0), p1=p1, p2plus=p2,
                             sigma_p1=math.sqrt(singles) / counts.n,
                             sigma_p2plus=math.sqrt(counts.r2) / (counts.n * split),
                             heralded=counts.heralded, n_trials=counts.n, flags=tuple(flags))


def _side_total(peaks, minimum=2):
    if len(peaks.side_peak_counts) < minimum:
        raise ParameterError(f"need at least {minimum} side peaks")
    return sum(peaks.side_peak_counts), len(peaks.side_peak_counts)


def g2_from_peaks(peaks):
    """Zero-peak area over the mean side-peak area."""
    total, count = _side_total(peaks)
    if total == 0:
        raise DataError("side peaks are empty; g2 undefined")
    mean_side = total / count
    zero = peaks.zero_peak_counts
    if zero == 0:
        return Estimate(0.0, 0.0, upper_bound=POISSON_UPPER_95 / mean_side)
    g2 = zero / mean_side
    return Estimate(g2, g2 * math.sqrt(1.0 / zero + 1.0 / total))


def prep_efficiency(peaks, indices=NEAR_PEAKS):
    """Mean side-peak area over the zero-peak area of the X-XX cross-correlation."""
    selected = peaks.select(indices)
    total, count = _side_total(selected, minimum=1)
    zero = peaks.zero_peak_counts
    if zero == 0:
        raise DataError("zero-delay peak is empty; preparation efficiency undefined")
    value = (total / count) / zero
    sigma = value * math.sqrt(1.0 / zero + (1.0 / total if total else 0.0))
    return Estimate(value, sigma)


@dataclass(frozen=True)
class PrepDiagnostic:
    near: Estimate
    far: Estimate
    ratio: float

    def to_dict(self):
        return {"near": self.near.to_dict(), "far": self.far.to_dict(), "near_far_ratio": self.ratio}


def prep_diagnostic(peaks, near=NEAR_PEAKS, far=FAR_PEAKS):
    """Near- and far-peak preparation efficiency; a ratio above 1 indicates blinking."""
    near_est = prep_efficiency(peaks, near)
    far_est = prep_efficiency(peaks, far)
    ratio = near_est.value / far_est.value if far_est.value > 0 else math.inf
    return PrepDiagnostic(near_est, far_est, ratio)


def pair_click_stats(table, convention="detector_pair", aggregation="mean"):
    """P_s and P_e per pulse with Poisson uncertainties.

    `detector_pair` averages the four (X_i, XX_j) coincidence probabilities;
    `arm` counts pulses with a click in both arms.
    """
    table.require(*PHOTON_ROLES)
    n = table.n_pulses
    if n <= 0:
        raise DataError("click table holds no pulses")
    if convention == "detector_pair":
        coincidences = sum(table.count(a, b) for a in ("x1", "x2") for b in ("xx1", "xx2"))
        ps, sigma_ps = coincidences / (4.0 * n), math.sqrt(coincidences) / (4.0 * n)
    elif convention == "arm":
        coincidences = table.count("x", "xx")
        ps, sigma_ps = coincidences / n, math.sqrt(coincidences) / n
    else:
        raise ParameterError(f"unknown pair convention {convention!r}")

    e_x, e_xx = table.count("x1", "x2"), table.count("xx1", "xx2")
    pe = aggregate_pe(e_x / n, e_xx / n, aggregation)
    if aggregation == "mean":
        sigma_pe = math.sqrt(e_x + e_xx) / (2.0 * n)
    elif aggregation == "sum":
        sigma_pe = math.sqrt(e_x + e_xx) / n
    else:
        sigma_pe = math.sqrt(max(e_x, e_xx)) / n
    return PairClickStats(ps=ps, pe=pe, sigma_ps=sigma_ps, sigma_pe=sigma_pe, n_pulses=n,
                          pe_x=e_x / n, pe_xx=e_xx / n)
