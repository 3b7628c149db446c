"""Photon-number laws of Gaussian pair sources and their detected click statistics.

The pair law is mapped through lossy arms with a beam splitter, two threshold
detectors and independent dark clicks per arm. Photons are routed one by one
(Bernoulli), so the per-arm no-click probabilities have closed forms:

    P(no click A | n)        = (1 - d) (1 - eta R)^n
    P(no click B | n)        = (1 - d) (1 - eta (1 - R))^n
    P(no click A, B | n)     = (1 - d)^2 (1 - eta)^n
"""

import logging
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import nbinom

from backend import config
from backend.errors import DataError, ParameterError
from backend.qng_criteria import PairClickStats, aggregate_pe, pair_threshold, poisson_pair_boundary
from backend.timetag_coincidence import PHOTON_ROLES, ROLE_BITS, PulseClickTable

logger = logging.getLogger(__name__)

TAIL_TOL = 1e-9
DEFAULT_N_MAX = 20
PAIR_CONVENTIONS = ("detector_pair", "arm")


@dataclass(frozen=True, eq=False)
class PhotonPairDistribution:
    """Joint law of (signal, idler) photon numbers truncated at n_max."""

    n_max: int
    probs: np.ndarray
    tail_mass: float = 0.0

    def __post_init__(self):
        if self.probs.shape != (self.n_max + 1, self.n_max + 1):
            raise ParameterError("probability table must be (n_max+1, n_max+1)")
        if np.any(self.probs < 0):
            raise ParameterError("negative photon-number probability")
        total = float(self.probs.sum())
        if abs(total - 1.0) > TAIL_TOL:
            raise DataError(f"photon-number law is not normalized (sum = {total!r})")

    @classmethod
    def from_pairs(cls, pairs, n_max=None):
        """Build from a mapping {(n, m): probability}."""
        top = max(max(n, m) for n, m in pairs)
        n_max = top if n_max is None else n_max
        probs = np.zeros((n_max + 1, n_max + 1))
        for (n, m), p in pairs.items():
            probs[n, m] = p
        return cls(n_max, probs)

    @property
    def signal_marginal(self):
        return self.probs.sum(axis=1)

    @property
    def idler_marginal(self):
        return self.probs.sum(axis=0)

    @property
    def is_diagonal(self):
        return bool(np.all(self.probs[~np.eye(self.n_max + 1, dtype=bool)] == 0.0))


def _diagonal(pmf, tail):
    if tail > TAIL_TOL:
        raise ParameterError(
            f"truncation too small: tail mass {tail:.3g} exceeds {TAIL_TOL:g}; raise n_max")
    n_max = len(pmf) - 1
    pmf = pmf / pmf.sum()
    return PhotonPairDistribution(n_max, np.diag(pmf), float(tail))


def n_max_for(mu, modes=1, tol=TAIL_TOL):
    """Smallest truncation order whose neglected tail stays below tol."""
    if mu <= 0.0:
        return 1
    p = 1.0 / (1.0 + mu / modes)
    n = int(nbinom.isf(tol, modes, p))
    while nbinom.sf(n, modes, p) > tol:
        n += 1
    return max(n, 1)


def tmsv_distribution(mu, n_max=DEFAULT_N_MAX):
    """Single-mode pair source: thermal P(n) = mu^n / (1 + mu)^(n+1) on the diagonal."""
    if mu < 0 or not math.isfinite(mu):
        raise ParameterError(f"mean photon number must be >= 0, got {mu!r}")
    if n_max < 1:
        raise ParameterError("n_max must be >= 1")
    n = np.arange(n_max + 1)
    if mu == 0.0:
        pmf = (n == 0).astype(float)
        return _diagonal(pmf, 0.0)
    ratio = mu / (1.0 + mu)
    pmf = ratio ** n / (1.0 + mu)
    return _diagonal(pmf, ratio ** (n_max + 1))


def multimode_distribution(mu_total, modes, n_max=DEFAULT_N_MAX):
    """K identical pair modes: negative-binomial marginal, perfectly correlated arms."""
    if mu_total < 0 or not math.isfinite(mu_total):
        raise ParameterError(f"mean photon number must be >= 0, got {mu_total!r}")
    if modes < 1:
        raise ParameterError("number of modes must be >= 1")
    if n_max < 1:
        raise ParameterError("n_max must be >= 1")
    if mu_total == 0.0:
        return tmsv_distribution(0.0, n_max)
    p = 1.0 / (1.0 + mu_total / modes)
    n = np.arange(n_max + 1)
    return _diagonal(nbinom.pmf(n, modes, p), float(nbinom.sf(n_max, modes, p)))


@dataclass(frozen=True)
class DetectionChainParams:
    eta_x: float
    eta_xx: float
    bs_ratio_x: float = 0.5
    bs_ratio_xx: float = 0.5
    dark_prob: float = 0.0

    def __post_init__(self):
        for name, value in asdict(self).items():
            if not (math.isfinite(value) and 0.0 <= value <= 1.0):
                raise ParameterError(f"{name} must lie in [0, 1], got {value!r}")

    @classmethod
    def symmetric(cls, eta, dark_prob=0.0, bs_ratio=0.5):
        return cls(eta, eta, bs_ratio, bs_ratio, dark_prob)


def _arm_click_tables(n_max, eta, ratio, dark):
    """Per photon number: P(A clicks), P(B clicks), P(both), P(any)."""
    n = np.arange(n_max + 1)
    q_a = (1.0 - dark) * (1.0 - eta * ratio) ** n
    q_b = (1.0 - dark) * (1.0 - eta * (1.0 - ratio)) ** n
    q_ab = (1.0 - dark) ** 2 * (1.0 - eta) ** n
    return 1.0 - q_a, 1.0 - q_b, 1.0 - q_a - q_b + q_ab, 1.0 - q_ab


def detected_pair_click_probs(dist, chain, convention="detector_pair", aggregation="mean"):
    """Exact click probabilities (P_s, P_e) of a pair law behind the detection chain.

    `detector_pair`: P_s is the mean over the four (X_i, XX_j) detector pairs of
    the probability that both click. `arm`: P_s is the probability of at least one
    click in each arm. P_e aggregates the per-arm double-click probabilities.
    """
    if convention not in PAIR_CONVENTIONS:
        raise ParameterError(f"unknown pair convention {convention!r}")
    total = float(dist.probs.sum())
    if abs(total - 1.0) > TAIL_TOL:
        raise DataError("photon-number law is not normalized")

    xa, xb, x_both, x_any = _arm_click_tables(dist.n_max, chain.eta_x, chain.bs_ratio_x, chain.dark_prob)
    ya, yb, y_both, y_any = _arm_click_tables(dist.n_max, chain.eta_xx, chain.bs_ratio_xx, chain.dark_prob)

    if convention == "arm":
        ps = float(x_any @ dist.probs @ y_any)
    else:
        ps = float(np.mean([cx @ dist.probs @ cy for cx in (xa, xb) for cy in (ya, yb)]))
    pe_x = float(dist.signal_marginal @ x_both)
    pe_xx = float(dist.idler_marginal @ y_both)

    clip = lambda v: min(max(v, 0.0), 1.0)
    return PairClickStats(ps=clip(ps), pe=clip(aggregate_pe(pe_x, pe_xx, aggregation)),
                          pe_x=clip(pe_x), pe_xx=clip(pe_xx))


# -----------------------------
# Gaussian oracle grid
# -----------------------------
@dataclass(frozen=True)
class OracleRow:
    mu: float
    modes: int
    eta: float
    dark_prob: float
    ps: float
    pe: float
    threshold: float
    margin: float
    poisson_margin: float

    def to_dict(self):
        return asdict(self)


def oracle_point(mu, modes, eta, dark_prob, convention="detector_pair", aggregation="mean"):
    # never below DEFAULT_N_MAX: at mu ~ 1e-3 the n = 3 term is a visible share of P_e
    dist = multimode_distribution(mu, modes, max(DEFAULT_N_MAX, n_max_for(mu, modes)))
    stats = detected_pair_click_probs(dist, DetectionChainParams.symmetric(eta, dark_prob),
                                      convention, aggregation)
    threshold = pair_threshold(stats.pe)
    return OracleRow(mu, modes, eta, dark_prob, stats.ps, stats.pe, threshold,
                     threshold - stats.ps, poisson_pair_boundary(stats.pe) - stats.ps)


def gaussian_oracle_grid(mus, modes, etas, dark_probs, convention="detector_pair", aggregation="mean"):
    """(P_s, P_e) of Gaussian sources over a parameter grid with margins to both boundaries.

    A positive `margin` means the point lies below the pair threshold.
    """
    rows = [oracle_point(mu, k, eta, d, convention, aggregation)
            for mu in mus for k in modes for eta in etas for d in dark_probs]
    violating = sum(row.margin < 0 for row in rows)
    if violating:
        logger.warning("%d of %d Gaussian grid points exceed the pair threshold", violating, len(rows))
    return rows


# -----------------------------
# Monte-Carlo sampler
# -----------------------------
def _sample_arm(rng, n, eta, ratio, dark):
    detected = rng.binomial(n, eta)
    to_a = rng.binomial(detected, ratio)
    click_a = (to_a > 0) | (rng.random(len(n)) < dark)
    click_b = (detected - to_a > 0) | (rng.random(len(n)) < dark)
    return click_a, click_b


def sample_click_patterns(dist, chain, n_pulses, rng, chunk=None):
    """Monte-Carlo click table of the detection chain, without time tags."""
    if n_pulses < 0:
        raise ParameterError("number of pulses must be non-negative")
    chunk = chunk or config.CHUNK_PULSES
    flat = dist.probs.ravel() / dist.probs.sum()
    width = dist.n_max + 1
    weights = np.array([ROLE_BITS[r] for r in PHOTON_ROLES], dtype=np.uint8)
    indices, patterns = [], []
    for start in range(0, n_pulses, chunk):
        size = min(chunk, n_pulses - start)
        joint = rng.choice(len(flat), size=size, p=flat)
        n, m = np.divmod(joint, width)
        x1, x2 = _sample_arm(rng, n, chain.eta_x, chain.bs_ratio_x, chain.dark_prob)
        xx1, xx2 = _sample_arm(rng, m, chain.eta_xx, chain.bs_ratio_xx, chain.dark_prob)
        bits = (np.stack([x1, x2, xx1, xx2], axis=1) * weights).sum(axis=1).astype(np.uint8)
        hit = np.flatnonzero(bits)
        indices.append(hit + start)
        patterns.append(bits[hit])
        logger.debug("sampled pulses %d..%d", start, start + size)
    index = np.concatenate(indices) if indices else np.empty(0, np.int64)
    pattern = np.concatenate(patterns) if patterns else np.empty(0, np.uint8)
    return PulseClickTable(n_pulses, index.astype(np.int64), pattern)
