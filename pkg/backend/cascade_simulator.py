"""Monte-Carlo time-tag generation for quantum-dot cascades and pair sources.

Pulses are processed in chunks of config.CHUNK_PULSES. Every chunk draws from its
own generator, SeedSequence(seed, spawn_key=(chunk,)), so the stream is identical
whether chunks run in one process or in a ProcessPoolExecutor. Chunks are merged
in order and per-channel dead time is applied on the merged stream.
"""

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from backend import config
from backend.errors import ParameterError
from backend.polarization_entanglement import (
    CHSH_X_SETTINGS,
    CHSH_XX_SETTINGS,
    PHI_MINUS,
    PHI_PLUS,
    KET_HH,
    SIGMA_X,
    SIGMA_Y,
    SIGMA_Z,
    DensityMatrix,
    MeasurementSetting,
    TOMOGRAPHY_LABELS,
    TomographyCounts,
    sample_phase_rotated_pairs,
)
from backend.timetag_coincidence import (
    DEFAULT_CHANNELS,
    PHOTON_ROLES,
    StreamHeader,
    TimeTagStream,
    fold_pulses,
)

logger = logging.getLogger(__name__)

HBAR_UEV_PS = 658.2119569  # hbar in ueV * ps
PI_PULSE_POWER_NW = 32.0
JITTER_GUARD_SIGMAS = 12.0


# -----------------------------
# Rabi driving
# -----------------------------
def rabi_preparation_probability(pulse_area_rad, damping=0.0):
    """sin^2(area/2) * exp(-damping * area)."""
    if pulse_area_rad < 0 or damping < 0:
        raise ParameterError("pulse area and damping must be non-negative")
    return math.sin(pulse_area_rad / 2.0) ** 2 * math.exp(-damping * pulse_area_rad)


def pulse_area_from_power(power_ratio):
    """Pulse area for a power given relative to the pi-pulse power."""
    if power_ratio < 0:
        raise ParameterError("power ratio must be non-negative")
    return math.pi * math.sqrt(power_ratio)


def rabi_curve(powers_nw, pi_power_nw=PI_PULSE_POWER_NW, damping=0.0):
    """(power, pulse area, preparation probability) rows for a power scan."""
    if pi_power_nw <= 0:
        raise ParameterError("pi-pulse power must be positive")
    rows = []
    for power in powers_nw:
        area = pulse_area_from_power(power / pi_power_nw)
        rows.append((float(power), area, rabi_preparation_probability(area, damping)))
    return rows


# -----------------------------
# Configuration
# -----------------------------
def _check_unit(name, value):
    if not (math.isfinite(value) and 0.0 <= value <= 1.0):
        raise ParameterError(f"{name} must lie in [0, 1], got {value!r}")


def _check_time(name, value):
    if not (math.isfinite(value) and value >= 0.0):
        raise ParameterError(f"{name} must be non-negative, got {value!r}")


def state_from_name(name, werner_p=1.0):
    if name == "phi_plus":
        return DensityMatrix.from_pure(PHI_PLUS)
    if name == "phi_minus":
        return DensityMatrix.from_pure(PHI_MINUS)
    if name == "werner":
        return DensityMatrix.werner(werner_p)
    if name == "hh":
        return DensityMatrix.from_pure(KET_HH)
    raise ParameterError(f"unknown pair state {name!r}")


@dataclass(frozen=True)
class QdSourceConfig:
    rep_rate_hz: float = 75.84e6
    pulse_area_rad: float = math.pi
    power_ratio: float = None
    rabi_damping: float = 0.0
    tau_xx_ps: float = 120.0
    tau_x_ps: float = 230.0
    blink_on_prob: float = 1.0
    blink_switch_prob: float = 0.0
    rho: DensityMatrix = field(default_factory=lambda: DensityMatrix.from_pure(PHI_PLUS))
    fss_ueV: float = 0.0
    eps_x: float = 0.0
    eps_xx: float = 0.0

    def __post_init__(self):
        if not self.rep_rate_hz > 0:
            raise ParameterError("repetition rate must be positive")
        for name in ("blink_on_prob", "blink_switch_prob", "eps_x", "eps_xx"):
            _check_unit(name, getattr(self, name))
        for name in ("tau_xx_ps", "tau_x_ps", "rabi_damping", "pulse_area_rad"):
            _check_time(name, getattr(self, name))
        if self.power_ratio is not None:
            _check_time("power_ratio", self.power_ratio)

    @property
    def preparation_probability(self):
        area = self.pulse_area_rad if self.power_ratio is None else pulse_area_from_power(self.power_ratio)
        return rabi_preparation_probability(area, self.rabi_damping)

    @classmethod
    def from_run_config(cls, cfg):
        src = cfg.source
        return cls(rep_rate_hz=src["rep_rate_hz"], pulse_area_rad=src["pulse_area_rad"],
                   power_ratio=src["power_ratio"], rabi_damping=src["rabi_damping"],
                   tau_xx_ps=src["tau_xx_ps"], tau_x_ps=src["tau_x_ps"],
                   blink_on_prob=src["blink_on_prob"], blink_switch_prob=src["blink_switch_prob"],
                   rho=state_from_name(src["state"], src["werner_p"]), fss_ueV=src["fss_uev"],
                   eps_x=src["eps_x"], eps_xx=src["eps_xx"])


@dataclass(frozen=True)
class SpdcSourceConfig:
    mu: float = 0.1
    modes: int = 1
    rep_rate_hz: float = 75.84e6
    tau_ps: float = 50.0
    rho: DensityMatrix = field(default_factory=lambda: DensityMatrix.from_pure(PHI_PLUS))

    def __post_init__(self):
        if not (math.isfinite(self.mu) and self.mu >= 0):
            raise ParameterError("mu must be >= 0")
        if self.modes < 1:
            raise ParameterError("number of modes must be >= 1")
        if not self.rep_rate_hz > 0:
            raise ParameterError("repetition rate must be positive")
        _check_time("tau_ps", self.tau_ps)

    @classmethod
    def from_run_config(cls, cfg):
        src = cfg.source
        return cls(mu=src["mu"], modes=src["modes"], rep_rate_hz=src["rep_rate_hz"],
                   tau_ps=src["tau_ps"], rho=state_from_name(src["state"], src["werner_p"]))


@dataclass(frozen=True)
class DetectorConfig:
    efficiency: float = 0.8
    dark_rate_hz: float = 100.0
    jitter_sigma_ps: float = 20.0
    dead_time_ps: float = 10_000.0
    delay_ps: float = 0.0

    def __post_init__(self):
        _check_unit("efficiency", self.efficiency)
        for name in ("dark_rate_hz", "jitter_sigma_ps", "dead_time_ps", "delay_ps"):
            _check_time(name, getattr(self, name))


@dataclass(frozen=True)
class ChannelConfig:
    x1: DetectorConfig = field(default_factory=DetectorConfig)
    x2: DetectorConfig = field(default_factory=DetectorConfig)
    xx1: DetectorConfig = field(default_factory=DetectorConfig)
    xx2: DetectorConfig = field(default_factory=DetectorConfig)
    bs_ratio_x: float = 0.5
    bs_ratio_xx: float = 0.5
    channels: dict = field(default_factory=lambda: dict(DEFAULT_CHANNELS))
    sync_divider: int = 1
    implicit_sync: bool = False
    analyzer_x: MeasurementSetting = None
    analyzer_xx: MeasurementSetting = None

    def __post_init__(self):
        _check_unit("bs_ratio_x", self.bs_ratio_x)
        _check_unit("bs_ratio_xx", self.bs_ratio_xx)
        if self.sync_divider < 1:
            raise ParameterError("sync divider must be >= 1")
        missing = [r for r in ("sync",) + PHOTON_ROLES if r not in self.channels]
        if missing:
            raise ParameterError(f"channel map lacks roles {missing}")
        if len(set(self.channels.values())) != len(self.channels):
            raise ParameterError("channel ids must be unique")

    @classmethod
    def uniform(cls, **kwargs):
        """Four identical detectors; remaining keywords go to ChannelConfig."""
        det_keys = {k: kwargs.pop(k) for k in list(kwargs) if k in DetectorConfig.__dataclass_fields__}
        det = DetectorConfig(**det_keys)
        return cls(x1=det, x2=det, xx1=det, xx2=det, **kwargs)

    @classmethod
    def from_run_config(cls, cfg):
        chain = cfg.chain
        detectors = {role: DetectorConfig(**{name: cfg.detector_value(role, name)
                                             for name in DetectorConfig.__dataclass_fields__})
                     for role in PHOTON_ROLES}
        analyzer = lambda v: None if v is None else MeasurementSetting(v)
        return cls(bs_ratio_x=chain["bs_ratio_x"], bs_ratio_xx=chain["bs_ratio_xx"],
                   sync_divider=chain["sync_divider"], implicit_sync=chain["implicit_sync"],
                   analyzer_x=analyzer(chain["analyzer_x"]), analyzer_xx=analyzer(chain["analyzer_xx"]),
                   **detectors)

    def detector(self, role):
        return getattr(self, role)

    def header(self, rep_rate_hz, n_pulses):
        channels = dict(self.channels)
        if self.implicit_sync:
            channels.pop("sync")
        return StreamHeader(rep_rate_hz=rep_rate_hz, channels=channels, pulse_count=n_pulses,
                            implicit_sync=self.implicit_sync, sync_divider=self.sync_divider)


# -----------------------------
# Per-chunk generation
# -----------------------------
def blinking_states(n, on_prob, switch_prob, rng):
    """Two-state telegraph per pulse, started from its stationary law.

    P(on -> off) = switch_prob * (1 - on_prob), P(off -> on) = switch_prob * on_prob.
    """
    if on_prob >= 1.0:
        return np.ones(n, dtype=bool)
    if on_prob <= 0.0:
        return np.zeros(n, dtype=bool)
    state = bool(rng.random() < on_prob)
    if switch_prob <= 0.0:
        return np.full(n, state)
    leave = {True: switch_prob * (1.0 - on_prob), False: switch_prob * on_prob}
    states = np.empty(n, dtype=bool)
    pos = 0
    batch = 64
    while pos < n:
        runs = np.empty(2 * batch, dtype=np.int64)
        runs[0::2] = rng.geometric(leave[state], batch)
        runs[1::2] = rng.geometric(leave[not state], batch)
        values = np.empty(2 * batch, dtype=bool)
        values[0::2] = state
        values[1::2] = not state
        take = np.repeat(values, runs)[: n - pos]
        states[pos:pos + len(take)] = take
        pos += len(take)
    return states


def _route_arm(times, outcomes, ratio, analyzer, det_a, det_b, role_a, role_b, channels, rng):
    if analyzer is not None and outcomes is not None:
        to_a = outcomes > 0
    else:
        to_a = rng.random(len(times)) < ratio
    out_c, out_t = [], []
    for mask, det, role in ((to_a, det_a, role_a), (~to_a, det_b, role_b)):
        t = times[mask]
        t = t[rng.random(len(t)) < det.efficiency]
        if det.jitter_sigma_ps > 0:
            t = t + rng.normal(0.0, det.jitter_sigma_ps, len(t))
        out_t.append(t + det.delay_ps)
        out_c.append(np.full(len(t), channels[role], dtype=np.uint8))
    return out_c, out_t


def _unpolarized(n, rng):
    return np.where(rng.random(n) < 0.5, 1, -1)


def _emit(src_rho, chain, x_times, xx_times, x_delay, fss_ueV, rng):
    """Polarization outcomes of correlated pairs, if analyzers are fitted."""
    if chain.analyzer_x is None and chain.analyzer_xx is None:
        return None, None
    phases = fss_ueV * x_delay / HBAR_UEV_PS if x_delay is not None else np.zeros(len(x_times))
    return sample_phase_rotated_pairs(src_rho, chain.analyzer_x or SIGMA_Z,
                                      chain.analyzer_xx or SIGMA_Z, phases, rng)


def _finish_chunk(chain, start, stop, period, x, xx, rng):
    """Detect both arms, add dark counts and sync tags; sort by (time, channel)."""
    (x_t, x_o), (xx_t, xx_o) = x, xx
    chans, times = [], []
    for (t, o, ratio, analyzer, ra, rb) in ((x_t, x_o, chain.bs_ratio_x, chain.analyzer_x, "x1", "x2"),
                                           (xx_t, xx_o, chain.bs_ratio_xx, chain.analyzer_xx, "xx1", "xx2")):
        c, tt = _route_arm(t, o, ratio, analyzer, chain.detector(ra), chain.detector(rb), ra, rb,
                           chain.channels, rng)
        chans += c
        times += tt

    t_lo, t_hi = start * period, stop * period
    span_s = (t_hi - t_lo) * 1e-12
    for role in PHOTON_ROLES:
        n_dark = rng.poisson(chain.detector(role).dark_rate_hz * span_s)
        times.append(rng.uniform(t_lo, t_hi, n_dark))
        chans.append(np.full(n_dark, chain.channels[role], dtype=np.uint8))

    if not chain.implicit_sync:
        first = -(-start // chain.sync_divider) * chain.sync_divider
        k_sync = np.arange(first, stop, chain.sync_divider)
        times.append(k_sync * period)
        chans.append(np.full(len(k_sync), chain.channels["sync"], dtype=np.uint8))

    t_all = np.rint(np.concatenate(times)).clip(0, None).astype(np.int64)
    c_all = np.concatenate(chans).astype(np.uint8)
    order = np.lexsort((c_all, t_all))
    return c_all[order], t_all[order]


def _qd_chunk(src, chain, start, stop, seed, index):
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index,)))
    n = stop - start
    period = 1e12 / src.rep_rate_hz
    t_pulse = np.arange(start, stop) * period

    on = blinking_states(n, src.blink_on_prob, src.blink_switch_prob, rng)
    prepared = on & (rng.random(n) < src.preparation_probability)
    base = t_pulse[prepared]
    t_xx = base + rng.exponential(src.tau_xx_ps, len(base)) if src.tau_xx_ps > 0 else base
    x_delay = rng.exponential(src.tau_x_ps, len(base)) if src.tau_x_ps > 0 else np.zeros(len(base))
    t_x = t_xx + x_delay
    out_x, out_xx = _emit(src.rho, chain, t_x, t_xx, x_delay, src.fss_ueV, rng)

    extra_x = t_pulse[rng.random(n) < src.eps_x]
    extra_xx = t_pulse[rng.random(n) < src.eps_xx]
    extra_x = extra_x + (rng.exponential(src.tau_x_ps, len(extra_x)) if src.tau_x_ps > 0 else 0.0)
    extra_xx = extra_xx + (rng.exponential(src.tau_xx_ps, len(extra_xx)) if src.tau_xx_ps > 0 else 0.0)

    def join(t_pair, o_pair, t_extra):
        if o_pair is None:
            return np.concatenate([t_pair, t_extra]), None
        return np.concatenate([t_pair, t_extra]), np.concatenate([o_pair, _unpolarized(len(t_extra), rng)])

    logger.debug("qd chunk %d: %d prepared of %d pulses", index, len(base), n)
    return _finish_chunk(chain, start, stop, period, join(t_x, out_x, extra_x),
                         join(t_xx, out_xx, extra_xx), rng)


def _spdc_chunk(src, chain, start, stop, seed, index):
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index,)))
    n = stop - start
    period = 1e12 / src.rep_rate_hz
    t_pulse = np.arange(start, stop) * period
    if src.mu > 0:
        pairs = rng.negative_binomial(src.modes, 1.0 / (1.0 + src.mu / src.modes), n)
    else:
        pairs = np.zeros(n, dtype=np.int64)
    t_pair = np.repeat(t_pulse, pairs)
    if src.tau_ps > 0:
        t_pair = t_pair + rng.exponential(src.tau_ps, len(t_pair))
    out_x, out_xx = _emit(src.rho, chain, t_pair, t_pair, None, 0.0, rng)
    logger.debug("spdc chunk %d: %d pairs over %d pulses", index, len(t_pair), n)
    return _finish_chunk(chain, start, stop, period, (t_pair, out_x), (t_pair, out_xx), rng)


_CHUNK_WORKERS = {"qd": _qd_chunk, "spdc": _spdc_chunk}


def _run_chunk(args):
    kind, src, chain, start, stop, seed, index = args
    return _CHUNK_WORKERS[kind](src, chain, start, stop, seed, index)


# -----------------------------
# Merging and dead time
# -----------------------------
def _dead_time_mask(times, dead_ps, last):
    """Non-paralyzable dead time on one sorted channel; `last` is the previous kept tag."""
    keep = np.ones(len(times), dtype=bool)
    if dead_ps <= 0 or len(times) == 0:
        return keep
    if last is not None:
        keep &= times - last >= dead_ps
    while True:
        idx = np.flatnonzero(keep)
        gaps = np.diff(times[idx])
        viol = gaps < dead_ps
        if not viol.any():
            return keep
        # drop the right tag of each violation whose left tag is certainly kept
        first = viol & ~np.r_[False, viol[:-1]]
        keep[idx[1:][first]] = False


def _chunk_results(kind, src, chain, bounds, seed, threads):
    jobs = [(kind, src, chain, start, stop, seed, i) for i, (start, stop) in enumerate(bounds)]
    if threads <= 1 or len(jobs) <= 1:
        for job in jobs:
            yield _run_chunk(job)
        return
    with ProcessPoolExecutor(max_workers=threads) as pool:
        for lo in range(0, len(jobs), 2 * threads):
            yield from pool.map(_run_chunk, jobs[lo:lo + 2 * threads])


def _tag_blocks(kind, src, chain, n_pulses, seed, threads, chunk):
    period = 1e12 / src.rep_rate_hz
    bounds = [(s, min(s + chunk, n_pulses)) for s in range(0, n_pulses, chunk)]
    guard = max(det.delay_ps + JITTER_GUARD_SIGMAS * det.jitter_sigma_ps
                for det in (chain.x1, chain.x2, chain.xx1, chain.xx2)) + period
    dead = {chain.channels[r]: chain.detector(r).dead_time_ps for r in PHOTON_ROLES}
    last = dict.fromkeys(dead)
    pend_c = np.empty(0, dtype=np.uint8)
    pend_t = np.empty(0, dtype=np.int64)
    total = 0

    def settle(c, t):
        keep = np.ones(len(t), dtype=bool)
        for cid, dead_ps in dead.items():
            sel = np.flatnonzero(c == cid)
            if len(sel) == 0:
                continue
            mask = _dead_time_mask(t[sel], dead_ps, last[cid])
            keep[sel[~mask]] = False
            kept = sel[mask]
            if len(kept):
                last[cid] = int(t[kept[-1]])
        return c[keep], t[keep].astype(np.uint64)

    for i, ((start, stop), (c, t)) in enumerate(zip(bounds, _chunk_results(kind, src, chain, bounds, seed, threads))):
        c = np.concatenate([pend_c, c])
        t = np.concatenate([pend_t, t])
        order = np.lexsort((c, t))
        c, t = c[order], t[order]
        cutoff = math.inf if i == len(bounds) - 1 else stop * period - guard
        done = t < cutoff
        pend_c, pend_t = c[~done], t[~done]
        out_c, out_t = settle(c[done], t[done])
        total += len(out_t)
        yield out_c, out_t
    if len(pend_t):
        out_c, out_t = settle(pend_c, pend_t)
        total += len(out_t)
        yield out_c, out_t
    logger.info("simulated %d pulses (%s source, seed %d): %d tags", n_pulses, kind, seed, total)


def _simulate(kind, src, chain, n_pulses, seed, threads=None, chunk=None):
    if n_pulses < 1:
        raise ParameterError("number of pulses must be >= 1")
    threads = config.THREADS if threads is None else threads
    chunk = chunk or config.CHUNK_PULSES
    header = chain.header(src.rep_rate_hz, n_pulses)
    return TimeTagStream(header, lambda: _tag_blocks(kind, src, chain, n_pulses, seed, threads, chunk))


def simulate_qd(src, chain, n_pulses, seed, threads=None, chunk=None):
    """Time tags of a pulsed biexciton-exciton cascade; regenerated on each iteration."""
    return _simulate("qd", src, chain, n_pulses, seed, threads, chunk)


def simulate_spdc(src, chain, n_pulses, seed, threads=None, chunk=None):
    """Time tags of a pulsed pair source with negative-binomial pair numbers."""
    return _simulate("spdc", src, chain, n_pulses, seed, threads, chunk)


def simulate(kind, src, chain, n_pulses, seed, threads=None, chunk=None):
    if kind not in _CHUNK_WORKERS:
        raise ParameterError(f"unknown source kind {kind!r}")
    return _simulate(kind, src, chain, n_pulses, seed, threads, chunk)


def attenuate_stream(stream, transmissivity, roles=PHOTON_ROLES, seed=0):
    """Keep each photon tag on the selected roles with probability T; sync is untouched."""
    if not (math.isfinite(transmissivity) and 0.0 <= transmissivity <= 1.0):
        raise ParameterError(f"transmissivity must lie in [0, 1], got {transmissivity!r}")
    header = stream.header
    selected = np.zeros(256, dtype=bool)
    for role in roles:
        if role == "sync":
            raise ParameterError("the sync channel cannot be attenuated")
        selected[header.channel(role)] = True

    def blocks():
        for index, (channels, times) in enumerate(stream.blocks()):
            rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index,)))
            keep = ~selected[channels] | (rng.random(len(times)) < transmissivity)
            yield channels[keep], times[keep]

    return TimeTagStream(header, blocks)


# -----------------------------
# Polarization-resolved runs
# -----------------------------
def _derived_seed(seed, index):
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def _single_outcome(table, role_plus, role_minus):
    plus = table.has(role_plus)
    minus = table.has(role_minus)
    return plus & ~minus, minus & ~plus


def _analyzer_run(kind, src, chain, setting_x, setting_xx, n_pulses, seed, window_ps):
    run_chain = replace(chain, analyzer_x=setting_x, analyzer_xx=setting_xx)
    stream = simulate(kind, src, run_chain, n_pulses, seed)
    table = fold_pulses(stream, window_ps)
    xp, xm = _single_outcome(table, "x1", "x2")
    yp, ym = _single_outcome(table, "xx1", "xx2")
    return np.array([[(xp & yp).sum(), (xp & ym).sum()], [(xm & yp).sum(), (xm & ym).sum()]])


def simulate_chsh_counts(kind, src, chain, n_pulses, seed, window_ps=800.0):
    """Coincidence table [x setting, xx setting, x outcome, xx outcome] for the CHSH settings."""
    counts = np.zeros((2, 2, 2, 2))
    for i, sx in enumerate(CHSH_X_SETTINGS):
        for j, sxx in enumerate(CHSH_XX_SETTINGS):
            counts[i, j] = _analyzer_run(kind, src, chain, sx, sxx, n_pulses,
                                         _derived_seed(seed, 2 * i + j), window_ps)
    return counts


_TOMO_BASES = {"H": (SIGMA_Z, 0), "V": (SIGMA_Z, 1), "D": (SIGMA_X, 0), "R": (SIGMA_Y, 0)}


def simulate_tomography_counts(kind, src, chain, n_pulses, seed, window_ps=800.0):
    """Projector-pair counts over {H,V,D,R}^2 from nine analyzer-basis runs."""
    runs = {}
    for a, sa in enumerate((SIGMA_Z, SIGMA_X, SIGMA_Y)):
        for b, sb in enumerate((SIGMA_Z, SIGMA_X, SIGMA_Y)):
            runs[(sa, sb)] = _analyzer_run(kind, src, chain, sa, sb, n_pulses,
                                           _derived_seed(seed, 3 * a + b), window_ps)
    counts = np.zeros((4, 4))
    for i, lx in enumerate(TOMOGRAPHY_LABELS):
        for j, lxx in enumerate(TOMOGRAPHY_LABELS):
            (sa, oa), (sb, ob) = _TOMO_BASES[lx], _TOMO_BASES[lxx]
            counts[i, j] = runs[(sa, sb)][oa, ob]
    return TomographyCounts(counts)
