"""Quantum non-Gaussianity criteria and depths.

Single-photon depth from photon-number probabilities, the pair-coincidence
threshold, the coincidence depth under symmetric loss, violation significance
and the loss trajectory of a measured point.
"""

import logging
import math
from dataclasses import asdict, dataclass, replace
from enum import Enum

from scipy.optimize import bisect

from backend.errors import DataError, DepthUndefinedError, ParameterError

logger = logging.getLogger(__name__)

DB_PER_LN = 10.0 / math.log(10.0)
PROB_TOL = 1e-9
BISECT_LOW = 1e-12
BISECT_XTOL = 1e-12


def _check_probability(name, value):
    if not (math.isfinite(value) and 0.0 <= value <= 1.0):
        raise ParameterError(f"{name} must be a probability in [0, 1], got {value!r}")


# -----------------------------
# Data types
# -----------------------------
@dataclass(frozen=True)
class PhotonNumberStats:
    p0: float
    p1: float
    p2plus: float
    sigma_p1: float = 0.0
    sigma_p2plus: float = 0.0
    heralded: bool = False
    n_trials: int = 0
    flags: tuple = ()

    def __post_init__(self):
        for name in ("p0", "p1", "p2plus"):
            value = getattr(self, name)
            if not (-PROB_TOL <= value <= 1.0 + PROB_TOL):
                raise ParameterError(f"{name}={value!r} is not a probability")
        if abs(self.p0 + self.p1 + self.p2plus - 1.0) > PROB_TOL:
            raise ParameterError("p0 + p1 + p2plus must equal 1")
        if self.sigma_p1 < 0 or self.sigma_p2plus < 0:
            raise ParameterError("standard deviations must be non-negative")

    @classmethod
    def from_p1_p2plus(cls, p1, p2plus, **kwargs):
        return cls(p0=1.0 - p1 - p2plus, p1=p1, p2plus=p2plus, **kwargs)

    def attenuated(self, transmissivity):
        """Leading-order loss map P1 -> P1*T, P2+ -> P2+*T^2."""
        t = transmissivity
        return replace(self, p0=1.0 - self.p1 * t - self.p2plus * t * t,
                       p1=self.p1 * t, p2plus=self.p2plus * t * t,
                       sigma_p1=self.sigma_p1 * t, sigma_p2plus=self.sigma_p2plus * t * t)

    def to_dict(self):
        data = asdict(self)
        data["flags"] = list(self.flags)
        return data

    @classmethod
    def from_dict(cls, data):
        known = {k: data[k] for k in cls.__dataclass_fields__ if k in data}
        try:
            known.setdefault("p0", 1.0 - known["p1"] - known["p2plus"])
            known["flags"] = tuple(known.get("flags", ()))
            return cls(**known)
        except KeyError as exc:
            raise DataError(f"photon-number statistics lack {exc}") from None
        except DataError:
            raise
        except (TypeError, ValueError) as exc:
            raise DataError(f"invalid photon-number statistics: {exc}") from None


@dataclass(frozen=True)
class PairClickStats:
    ps: float
    pe: float
    sigma_ps: float = 0.0
    sigma_pe: float = 0.0
    n_pulses: int = 0
    pe_x: float = None
    pe_xx: float = None

    def __post_init__(self):
        _check_probability("ps", self.ps)
        _check_probability("pe", self.pe)
        if self.sigma_ps < 0 or self.sigma_pe < 0:
            raise ParameterError("standard deviations must be non-negative")
        if self.n_pulses < 0:
            raise ParameterError("n_pulses must be non-negative")

    def attenuated(self, transmissivity):
        """Both modes through a channel of transmissivity T: P(T) = P*T^2."""
        t2 = transmissivity * transmissivity
        scale = lambda v: None if v is None else v * t2
        return replace(self, ps=self.ps * t2, pe=self.pe * t2,
                       sigma_ps=self.sigma_ps * t2, sigma_pe=self.sigma_pe * t2,
                       pe_x=scale(self.pe_x), pe_xx=scale(self.pe_xx))

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        known = {k: data[k] for k in cls.__dataclass_fields__ if k in data}
        try:
            return cls(**known)
        except TypeError as exc:
            raise DataError(f"invalid pair statistics: {exc}") from None


class DepthKind(Enum):
    FINITE = "finite"
    UNBOUNDED = "unbounded"


@dataclass(frozen=True)
class DepthResult:
    """A QNG depth in dB, or the explicit unbounded variant."""

    kind: DepthKind
    db: float = None
    sigma_db: float = None

    @classmethod
    def finite(cls, db, sigma_db):
        return cls(DepthKind.FINITE, db, sigma_db)

    @classmethod
    def unbounded(cls):
        return cls(DepthKind.UNBOUNDED)

    @property
    def is_unbounded(self):
        return self.kind is DepthKind.UNBOUNDED

    def to_dict(self):
        return {"kind": self.kind.value, "db": self.db, "sigma_db": self.sigma_db}


@dataclass(frozen=True)
class QngPairReport:
    ps: float
    pe: float
    threshold: float
    difference: float
    significance: float = None
    significance_one_sided: bool = False
    t_coin_db: float = None
    t_coin_exact_db: float = None
    t_coin_sigma_db: float = None
    depth_unbounded: bool = False

    @property
    def certified(self):
        return self.difference > 0.0

    def to_dict(self):
        data = asdict(self)
        data["certified"] = self.certified
        return data


@dataclass(frozen=True)
class CurvePoint:
    transmissivity: float
    pe: float
    ps: float
    threshold: float
    critical: bool = False


# -----------------------------
# Single-photon criterion
# -----------------------------
def sps_depth(stats):
    """Depth -10 log10(3 P2+ / (2 P1^3)) with first-order uncertainty."""
    if stats.p1 < 0 or stats.p2plus < 0:
        raise ParameterError("negative photon-number probability")
    if stats.p1 <= 0.0:
        raise DataError("no single-photon signal (P1 = 0)")
    if stats.p2plus <= 0.0:
        return DepthResult.unbounded()
    depth = -10.0 * math.log10(3.0 * stats.p2plus / (2.0 * stats.p1 ** 3))
    sigma = DB_PER_LN * math.hypot(stats.sigma_p2plus / stats.p2plus, 3.0 * stats.sigma_p1 / stats.p1)
    return DepthResult.finite(depth, sigma)


# -----------------------------
# Pair-coincidence criterion
# -----------------------------
def pair_threshold(pe):
    """Largest P_s reachable by multimode Gaussian pair sources at error probability pe."""
    _check_probability("pe", pe)
    root = math.sqrt(pe)
    return 0.5 * root + 0.375 * pe + pe * root / 16.0


def threshold_slope(pe):
    """d threshold / d pe; singular at pe = 0."""
    root = math.sqrt(pe)
    return 0.25 / root + 0.375 + 3.0 * root / 32.0


def poisson_pair_boundary(pe):
    """P_s traced by lossless, infinitely multimode pair generation.

    pair_threshold is the cubic truncation of this curve in sqrt(pe).
    """
    _check_probability("pe", pe)
    s = math.sqrt(pe)
    return 2.0 * s - 1.0 + (1.0 - s) ** 1.5


def poisson_excess_bound(pe):
    """Upper bound of poisson_pair_boundary(pe) - pair_threshold(pe)."""
    s = math.sqrt(pe)
    if s >= 1.0:
        return math.inf
    return 3.0 / 128.0 * pe * pe * (1.0 - s) ** -2.5


def aggregate_pe(pe_x, pe_xx, mode="mean"):
    """Combine per-arm same-mode double-click probabilities."""
    if mode == "mean":
        return 0.5 * (pe_x + pe_xx)
    if mode == "sum":
        return pe_x + pe_xx
    if mode == "max":
        return max(pe_x, pe_xx)
    raise ParameterError(f"unknown P_e aggregation {mode!r}")


def pair_violation(stats):
    """Threshold, difference and significance of a measured (P_s, P_e)."""
    threshold = pair_threshold(stats.pe)
    difference = stats.ps - threshold
    significance = None
    one_sided = False

    if stats.pe == 0.0 and stats.sigma_pe > 0.0:
        # slope diverges; compare against the threshold at the 1-sigma upper bound of pe
        one_sided = True
        upper = min(stats.sigma_pe, 1.0)
        if stats.sigma_ps > 0.0:
            significance = (stats.ps - pair_threshold(upper)) / stats.sigma_ps
        logger.warning("P_e = 0 with nonzero uncertainty: significance is a one-sided bound")
    else:
        slope_term = threshold_slope(stats.pe) * stats.sigma_pe if stats.pe > 0.0 else 0.0
        denominator = math.hypot(stats.sigma_ps, slope_term)
        if denominator > 0.0:
            significance = difference / denominator

    return QngPairReport(ps=stats.ps, pe=stats.pe, threshold=threshold, difference=difference,
                         significance=significance, significance_one_sided=one_sided)


def _scaled_margin(t, ps, pe):
    # (ps T^2 - threshold(pe T^2)) / T
    return (ps - 0.375 * pe) * t - 0.5 * math.sqrt(pe) - pe * math.sqrt(pe) * t * t / 16.0


def critical_transmissivity(ps, pe):
    """Smallest T in (0, 1] with ps T^2 = threshold(pe T^2)."""
    if ps <= pair_threshold(pe):
        raise DepthUndefinedError(
            f"criterion not violated at T=1 (ps={ps:.6g} <= threshold {pair_threshold(pe):.6g})")
    if pe == 0.0:
        return 0.0
    low, high = BISECT_LOW, 1.0
    if not (_scaled_margin(low, ps, pe) < 0.0 < _scaled_margin(high, ps, pe)):
        raise DataError("no sign change of the criterion margin on the transmissivity bracket")
    return bisect(_scaled_margin, low, high, args=(ps, pe), xtol=BISECT_XTOL, maxiter=200)


def pair_depth(stats):
    """Coincidence depth: approximate closed form and exact root, in dB."""
    report = pair_violation(stats)
    if not report.certified:
        raise DepthUndefinedError(
            f"criterion not violated at T=1: difference {report.difference:.6g}")
    if stats.pe == 0.0:
        return replace(report, depth_unbounded=True)

    approx = -10.0 * math.log10(math.sqrt(stats.pe) / (2.0 * stats.ps))
    exact = -10.0 * math.log10(critical_transmissivity(stats.ps, stats.pe))
    sigma = DB_PER_LN * math.hypot(stats.sigma_ps / stats.ps, stats.sigma_pe / (2.0 * stats.pe))
    return replace(report, t_coin_db=approx, t_coin_exact_db=exact, t_coin_sigma_db=sigma)


def depth_curve(stats, t_grid):
    """Loss trajectory (pe T^2, ps T^2); the exact critical point is inserted and marked."""
    grid = []
    for t in t_grid:
        if not (0.0 < t <= 1.0):
            raise ParameterError(f"transmissivity must lie in (0, 1], got {t!r}")
        grid.append(float(t))

    critical = None
    if stats.ps > pair_threshold(stats.pe) and stats.pe > 0.0:
        critical = critical_transmissivity(stats.ps, stats.pe)

    points = []
    for t in grid:
        pe_t = stats.pe * t * t
        points.append(CurvePoint(t, pe_t, stats.ps * t * t, pair_threshold(pe_t)))
    if critical is not None:
        pe_c = stats.pe * critical * critical
        points.append(CurvePoint(critical, pe_c, stats.ps * critical * critical,
                                 pair_threshold(pe_c), critical=True))
    points.sort(key=lambda p: p.transmissivity, reverse=True)
    return points


def boundary_curve(pe_values):
    """Samples of the Gaussian threshold and the exact Poisson boundary."""
    return [(pe, pair_threshold(pe), poisson_pair_boundary(pe)) for pe in pe_values]
