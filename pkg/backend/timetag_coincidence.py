"""Time-tag stream I/O and the coincidence engine.

Binary layout (little-endian):
    header  "QTT1", u16 version, u16 flags, u64 rep rate [mHz], u64 t0 [ps],
            u64 pulse count, u32 sync divider, u64 tag count,
            u8 role count, then (u8 role code, u8 channel) per role
    records packed (u8 channel, u64 time [ps]), 9 bytes each, time non-decreasing

Flag bit 0 marks an implicit sync: pulse k is at t0 + k / rep_rate and the
stream carries no sync tags.
"""

import csv
import logging
import math
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from backend import config
from backend.errors import DataError, ParameterError, StreamFormatError

logger = logging.getLogger(__name__)

MAGIC = b"QTT1"
VERSION = 1
FLAG_IMPLICIT_SYNC = 0x1

_HEADER_PREFIX = struct.Struct("<4sHHQQQIQB")
_ROLE_ENTRY = struct.Struct("<BB")
_TAG_COUNT_OFFSET = struct.calcsize("<4sHHQQQI")

RECORD_DTYPE = np.dtype([("channel", "u1"), ("time_ps", "<u8")])

ROLE_CODES = {"sync": 0, "x1": 1, "x2": 2, "xx1": 3, "xx2": 4}
CODE_ROLES = {code: role for role, code in ROLE_CODES.items()}
PHOTON_ROLES = ("x1", "x2", "xx1", "xx2")
ROLE_BITS = {"x1": 1, "x2": 2, "xx1": 4, "xx2": 8}
ARM_BITS = {"x": 1 | 2, "xx": 4 | 8}
DEFAULT_CHANNELS = {"sync": 0, "x1": 1, "x2": 2, "xx1": 3, "xx2": 4}


def role_bits(spec):
    """Bit mask of a role ('x1', ...) or an arm ('x', 'xx')."""
    if spec in ROLE_BITS:
        return ROLE_BITS[spec]
    if spec in ARM_BITS:
        return ARM_BITS[spec]
    raise ParameterError(f"unknown detector role or arm {spec!r}")


# -----------------------------
# Stream types
# -----------------------------
@dataclass(frozen=True)
class StreamHeader:
    rep_rate_hz: float
    channels: dict = field(default_factory=lambda: dict(DEFAULT_CHANNELS))
    tag_count: int = 0
    pulse_count: int = 0
    implicit_sync: bool = False
    t0_ps: int = 0
    sync_divider: int = 1
    version: int = VERSION

    def __post_init__(self):
        if not self.rep_rate_hz > 0:
            raise StreamFormatError("repetition rate must be positive")
        unknown = set(self.channels) - set(ROLE_CODES)
        if unknown:
            raise StreamFormatError(f"unknown roles in channel map: {sorted(unknown)}")
        ids = list(self.channels.values())
        if len(set(ids)) != len(ids):
            raise StreamFormatError("channel ids must be unique per role")
        if any(not 0 <= cid <= 255 for cid in ids):
            raise StreamFormatError("channel ids must fit in one byte")
        if self.sync_divider < 1:
            raise StreamFormatError("sync divider must be >= 1")
        if self.implicit_sync and self.pulse_count <= 0:
            raise StreamFormatError("implicit sync requires a pulse count")
        if not self.implicit_sync and "sync" not in self.channels:
            raise StreamFormatError("stream without implicit sync needs a sync channel")

    @property
    def period_ps(self):
        return 1e12 / self.rep_rate_hz

    def channel(self, role):
        if isinstance(role, (int, np.integer)):
            if int(role) not in self.channels.values():
                raise DataError(f"channel {role} not in stream header")
            return int(role)
        try:
            return self.channels[role]
        except KeyError:
            raise DataError(f"role {role!r} not present in stream") from None

    def encode(self):
        flags = FLAG_IMPLICIT_SYNC if self.implicit_sync else 0
        out = [_HEADER_PREFIX.pack(MAGIC, self.version, flags, int(round(self.rep_rate_hz * 1000)),
                                   self.t0_ps, self.pulse_count, self.sync_divider, self.tag_count,
                                   len(self.channels))]
        for role, cid in sorted(self.channels.items(), key=lambda item: ROLE_CODES[item[0]]):
            out.append(_ROLE_ENTRY.pack(ROLE_CODES[role], cid))
        return b"".join(out)

    @classmethod
    def decode(cls, fh):
        raw = fh.read(_HEADER_PREFIX.size)
        if len(raw) < _HEADER_PREFIX.size:
            raise StreamFormatError("file too short for a stream header")
        magic, version, flags, rate_mhz, t0, pulses, divider, count, n_roles = _HEADER_PREFIX.unpack(raw)
        if magic != MAGIC:
            raise StreamFormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
        if version != VERSION:
            raise StreamFormatError(f"unsupported stream version {version}")
        channels = {}
        for _ in range(n_roles):
            entry = fh.read(_ROLE_ENTRY.size)
            if len(entry) < _ROLE_ENTRY.size:
                raise StreamFormatError("truncated channel-role table")
            code, cid = _ROLE_ENTRY.unpack(entry)
            if code not in CODE_ROLES:
                raise StreamFormatError(f"unknown role code {code}")
            role = CODE_ROLES[code]
            if role in channels:
                raise StreamFormatError(f"duplicate role {role}")
            channels[role] = cid
        header = cls(rep_rate_hz=rate_mhz / 1000.0, channels=channels, tag_count=count,
                     pulse_count=pulses, implicit_sync=bool(flags & FLAG_IMPLICIT_SYNC),
                     t0_ps=t0, sync_divider=divider, version=version)
        return header, _HEADER_PREFIX.size + n_roles * _ROLE_ENTRY.size


class TimeTagStream:
    """Re-iterable, block-wise view of a time-sorted tag stream.

    `block_source` is a zero-argument callable returning an iterator of
    (channels uint8, times uint64) array pairs.
    """

    def __init__(self, header, block_source):
        self.header = header
        self._block_source = block_source

    @classmethod
    def from_arrays(cls, header, channels, times, block_size=None):
        channels = np.ascontiguousarray(channels, dtype=np.uint8)
        times = np.ascontiguousarray(times, dtype=np.uint64)
        if channels.shape != times.shape:
            raise DataError("channel and time arrays differ in length")
        size = block_size or config.BLOCK_TAGS

        def blocks():
            for start in range(0, len(times), size):
                yield channels[start:start + size], times[start:start + size]

        return cls(replace(header, tag_count=len(times)), blocks)

    def blocks(self):
        known = np.zeros(256, dtype=bool)
        known[list(self.header.channels.values())] = True
        last = None
        for channels, times in self._block_source():
            if len(times) == 0:
                continue
            if not known[channels].all():
                bad = int(channels[~known[channels]][0])
                raise StreamFormatError(f"unknown channel {bad} in stream")
            if last is not None and times[0] < last:
                raise StreamFormatError("time stamps are not monotone across blocks")
            if len(times) > 1 and np.any(times[1:] < times[:-1]):
                raise StreamFormatError("time stamps are not monotone")
            last = times[-1]
            yield channels, times

    def to_arrays(self):
        parts = list(self.blocks())
        if not parts:
            return np.empty(0, np.uint8), np.empty(0, np.uint64)
        return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])

    def channel_times(self, role):
        cid = self.header.channel(role)
        parts = [times[channels == cid] for channels, times in self.blocks()]
        return np.concatenate(parts) if parts else np.empty(0, np.uint64)

    def tag_count(self):
        return sum(len(times) for _, times in self.blocks())


# -----------------------------
# Binary and CSV I/O
# -----------------------------
def _iter_blocks(tags):
    if isinstance(tags, TimeTagStream):
        yield from tags.blocks()
    else:
        yield from tags


def write_stream(header, tags, path):
    """Write header and tag blocks; the tag count is patched in afterwards."""
    count = 0
    last = None
    with open(path, "wb") as fh:
        fh.write(replace(header, tag_count=0).encode())
        for channels, times in _iter_blocks(tags):
            if len(times) == 0:
                continue
            if (last is not None and times[0] < last) or np.any(times[1:] < times[:-1]):
                raise StreamFormatError("refusing to write non-monotone time stamps")
            records = np.empty(len(times), dtype=RECORD_DTYPE)
            records["channel"] = channels
            records["time_ps"] = times
            records.tofile(fh)
            count += len(times)
            last = times[-1]
        fh.seek(_TAG_COUNT_OFFSET)
        fh.write(struct.pack("<Q", count))
    logger.debug("wrote %d tags to %s", count, path)
    return replace(header, tag_count=count)


def read_stream(path, block_size=None):
    """Open a stream file; tags are read lazily, one block at a time."""
    size = block_size or config.BLOCK_TAGS
    try:
        with open(path, "rb") as fh:
            header, data_offset = StreamHeader.decode(fh)
            fh.seek(0, 2)
            payload = fh.tell() - data_offset
    except OSError as exc:
        raise StreamFormatError(f"cannot read stream {path}: {exc}") from None
    if payload != header.tag_count * RECORD_DTYPE.itemsize:
        raise StreamFormatError(
            f"{path}: header announces {header.tag_count} tags, payload holds {payload} bytes")

    def blocks():
        with open(path, "rb") as fh:
            fh.seek(data_offset)
            remaining = header.tag_count
            while remaining > 0:
                records = np.fromfile(fh, dtype=RECORD_DTYPE, count=min(size, remaining))
                if len(records) == 0:
                    raise StreamFormatError(f"{path}: truncated record payload")
                remaining -= len(records)
                yield records["channel"].copy(), records["time_ps"].copy()

    return header, TimeTagStream(header, blocks)


def write_csv(stream, path):
    header = stream.header
    with open(path, "w", newline="") as fh:
        fh.write(f"# rep_rate_hz={header.rep_rate_hz!r}\n")
        fh.write("# channels=" + ",".join(f"{r}:{c}" for r, c in header.channels.items()) + "\n")
        fh.write(f"# implicit_sync={int(header.implicit_sync)}\n")
        fh.write(f"# t0_ps={header.t0_ps}\n")
        fh.write(f"# pulse_count={header.pulse_count}\n")
        fh.write(f"# sync_divider={header.sync_divider}\n")
        writer = csv.writer(fh)
        writer.writerow(["channel", "time_ps"])
        for channels, times in stream.blocks():
            writer.writerows(zip(channels.tolist(), times.tolist()))


def read_csv(path):
    meta = {}
    rows = []
    try:
        with open(path, "r", newline="") as fh:
            reader = csv.reader(fh)
            for record in reader:
                if not any(cell.strip() for cell in record):
                    continue
                if record[0].startswith("#"):
                    key, _, value = ",".join(record)[1:].partition("=")
                    meta[key.strip()] = value.strip()
                    continue
                if record[0].strip() == "channel":
                    continue
                if len(record) != 2:
                    raise ValueError(f"line {reader.line_num} has {len(record)} fields, expected 2")
                rows.append((int(record[0]), int(record[1])))
    except (OSError, ValueError, csv.Error) as exc:
        raise StreamFormatError(f"cannot parse tag CSV {path}: {exc}") from None
    try:
        channels = {role: int(cid) for role, cid in
                    (item.split(":") for item in meta["channels"].split(",") if item)}
        header = StreamHeader(rep_rate_hz=float(meta["rep_rate_hz"]), channels=channels,
                              implicit_sync=bool(int(meta.get("implicit_sync", 0))),
                              t0_ps=int(meta.get("t0_ps", 0)),
                              pulse_count=int(meta.get("pulse_count", 0)),
                              sync_divider=int(meta.get("sync_divider", 1)))
    except (KeyError, ValueError) as exc:
        raise StreamFormatError(f"{path}: incomplete CSV metadata ({exc})") from None
    data = np.array(rows, dtype=np.uint64).reshape(-1, 2)
    return header, TimeTagStream.from_arrays(header, data[:, 0].astype(np.uint8), data[:, 1])


# -----------------------------
# Pulse folding
# -----------------------------
@dataclass(frozen=True, eq=False)
class PulseClickTable:
    """Click patterns of the four photon detectors, stored for clicked pulses only.

    `patterns[i]` holds the ROLE_BITS of pulse `pulse_index[i]`; pulses not listed
    did not click at all.
    """

    n_pulses: int
    pulse_index: np.ndarray
    patterns: np.ndarray
    window_ps: float = 0.0
    roles: tuple = PHOTON_ROLES

    @classmethod
    def from_dense(cls, clicks, window_ps=0.0):
        """Build from a (N, 4) boolean array in PHOTON_ROLES column order."""
        clicks = np.asarray(clicks, dtype=bool)
        weights = np.array([ROLE_BITS[r] for r in PHOTON_ROLES], dtype=np.uint8)
        patterns = (clicks * weights).sum(axis=1).astype(np.uint8)
        index = np.flatnonzero(patterns)
        return cls(len(clicks), index.astype(np.int64), patterns[index], window_ps)

    def dense(self):
        out = np.zeros((self.n_pulses, len(PHOTON_ROLES)), dtype=bool)
        for col, role in enumerate(PHOTON_ROLES):
            out[self.pulse_index, col] = (self.patterns & ROLE_BITS[role]) > 0
        return out

    def require(self, *roles):
        missing = [r for r in roles if r not in self.roles]
        if missing:
            raise DataError(f"click table lacks detector roles {missing}")

    def has(self, spec):
        """Mask over stored pulses: any detector of `spec` clicked."""
        return (self.patterns & role_bits(spec)) > 0

    def count(self, *specs):
        """Number of pulses in which every listed role/arm clicked."""
        mask = np.ones(len(self.patterns), dtype=bool)
        for spec in specs:
            mask &= self.has(spec)
        return int(mask.sum())

    def click_counts(self, role_a="x1", role_b="x2", herald=None):
        """(trials, singles A, singles B, doubles) with optional heralding."""
        if herald is None:
            trials = np.ones(len(self.patterns), dtype=bool)
            n = self.n_pulses
        else:
            trials = self.has(herald)
            n = int(trials.sum())
        a = self.has(role_a) & trials
        b = self.has(role_b) & trials
        return n, int(a.sum()), int(b.sum()), int((a & b).sum())


class _PulseClock:
    """Maps photon tags to the nearest pulse, streaming over blocks.

    After iteration `n_pulses` holds the pulse count of the stream.
    """

    def __init__(self, stream, offsets):
        self.header = stream.header
        self.stream = stream
        self.n_pulses = self.header.pulse_count
        self.bit_lut = np.zeros(256, dtype=np.uint8)
        self.offset_lut = np.zeros(256, dtype=np.float64)
        for role in PHOTON_ROLES:
            if role in self.header.channels:
                cid = self.header.channels[role]
                self.bit_lut[cid] = ROLE_BITS[role]
                self.offset_lut[cid] = float(offsets.get(role, 0.0))
        self.max_offset = max((abs(v) for v in offsets.values()), default=0.0)

    def deltas(self):
        """Yield (pulse index, role bit, delta to pulse time in ps) per batch."""
        if self.header.implicit_sync:
            yield from self._implicit()
        else:
            yield from self._physical()

    def _photons(self, channels, times):
        bits = self.bit_lut[channels]
        mask = bits > 0
        u = times[mask].astype(np.float64) - self.offset_lut[channels[mask]]
        return u, bits[mask]

    def _implicit(self):
        period = self.header.period_ps
        for channels, times in self.stream.blocks():
            u, bits = self._photons(channels, times)
            u -= self.header.t0_ps
            k = np.rint(u / period)
            delta = u - k * period
            keep = (k >= 0) & (k < self.n_pulses)
            yield k[keep].astype(np.int64), bits[keep], delta[keep]

    def _physical(self):
        period = self.header.period_ps
        divider = self.header.sync_divider
        sync_id = self.header.channels["sync"]
        margin = self.max_offset + (divider + 1) * period
        sync_buf = np.empty(0, dtype=np.float64)
        sync_base = 0
        n_sync = 0
        pend_u = np.empty(0, dtype=np.float64)
        pend_bits = np.empty(0, dtype=np.uint8)

        def resolve(u, bits):
            s = np.searchsorted(sync_buf, u, side="right") - 1
            s = np.clip(s, 0, None)
            ts = sync_buf[s]
            j = np.rint((u - ts) / period)
            delta = u - ts - j * period
            k = (sync_base + s) * divider + j.astype(np.int64)
            keep = k >= 0
            return k[keep], bits[keep], delta[keep]

        for channels, times in self.stream.blocks():
            new_sync = times[channels == sync_id].astype(np.float64)
            n_sync += len(new_sync)
            sync_buf = np.concatenate([sync_buf, new_sync])
            u, bits = self._photons(channels, times)
            pend_u = np.concatenate([pend_u, u])
            pend_bits = np.concatenate([pend_bits, bits])
            if len(sync_buf) == 0:
                continue
            safe = pend_u < sync_buf[-1]
            if safe.any():
                yield resolve(pend_u[safe], pend_bits[safe])
            pend_u, pend_bits = pend_u[~safe], pend_bits[~safe]
            floor = min(pend_u.min() if len(pend_u) else sync_buf[-1], sync_buf[-1]) - margin
            keep_from = max(int(np.searchsorted(sync_buf, floor, side="right")) - 1, 0)
            sync_base += keep_from
            sync_buf = sync_buf[keep_from:]

        if len(pend_u) and len(sync_buf):
            yield resolve(pend_u, pend_bits)
        if self.n_pulses == 0:
            self.n_pulses = n_sync * divider


def _check_window(window_ps, header):
    if not window_ps > 0:
        raise ParameterError("coincidence window must be positive")
    if window_ps > header.period_ps:
        raise DataError(
            f"window {window_ps} ps exceeds the repetition period {header.period_ps:.2f} ps")


def fold_pulses_multi(stream, windows_ps, offsets=None):
    """Fold a stream once and build one PulseClickTable per window (centered windows)."""
    windows = [float(w) for w in windows_ps]
    if not windows:
        raise ParameterError("no coincidence windows given")
    for w in windows:
        _check_window(w, stream.header)
    offsets = auto_offsets(stream) if offsets is None else offsets
    half_max = max(windows) / 2.0

    clock = _PulseClock(stream, offsets)
    roles = tuple(r for r in PHOTON_ROLES if r in stream.header.channels)
    ks, bits, dist = [], [], []
    for k, b, delta in clock.deltas():
        near = np.abs(delta) <= half_max
        ks.append(k[near])
        bits.append(b[near])
        dist.append(np.abs(delta[near]))
    n_pulses = clock.n_pulses

    k = np.concatenate(ks) if ks else np.empty(0, np.int64)
    b = np.concatenate(bits) if bits else np.empty(0, np.uint8)
    d = np.concatenate(dist) if dist else np.empty(0, np.float64)
    valid = k < n_pulses
    order = np.argsort(k[valid], kind="stable")
    k, b, d = k[valid][order], b[valid][order], d[valid][order]

    tables = []
    for w in windows:
        inside = d <= w / 2.0
        kw, bw = k[inside], b[inside]
        if len(kw):
            starts = np.flatnonzero(np.r_[True, kw[1:] != kw[:-1]])
            index = kw[starts]
            patterns = np.bitwise_or.reduceat(bw, starts).astype(np.uint8)
        else:
            index, patterns = np.empty(0, np.int64), np.empty(0, np.uint8)
        tables.append(PulseClickTable(n_pulses, index, patterns, w, roles))
    return tables


def fold_pulses(stream, window_ps, offsets=None):
    """Click table for one centered coincidence window around each channel offset."""
    return fold_pulses_multi(stream, [window_ps], offsets)[0]


def auto_offsets(stream, bin_ps=10.0):
    """Per-channel arrival offset after the pulse: mode of the folded arrival phase.

    Ties resolve to the earliest bin.
    """
    header = stream.header
    period = header.period_ps
    n_bins = int(math.ceil(period / bin_ps))
    hist = {role: np.zeros(n_bins, dtype=np.int64) for role in PHOTON_ROLES}
    clock = _PulseClock(stream, {})
    for _, bits, delta in clock.deltas():
        phase = np.mod(delta, period)
        idx = np.minimum((phase // bin_ps).astype(np.int64), n_bins - 1)
        for role in PHOTON_ROLES:
            sel = bits == ROLE_BITS[role]
            if sel.any():
                hist[role] += np.bincount(idx[sel], minlength=n_bins)
    offsets = {}
    for role, counts in hist.items():
        if role not in header.channels:
            continue
        if counts.sum() == 0:
            logger.warning("no tags on %s; offset defaults to 0 ps", role)
            offsets[role] = 0.0
            continue
        offsets[role] = (int(np.argmax(counts)) + 0.5) * bin_ps
    return offsets


# -----------------------------
# Correlation histograms
# -----------------------------
@dataclass(frozen=True, eq=False)
class CorrelationHistogram:
    bin_width_ps: int
    range_ps: int
    counts: np.ndarray
    channel_a: int = 0
    channel_b: int = 0

    @property
    def edges_ps(self):
        return np.arange(-self.range_ps, self.range_ps + self.bin_width_ps, self.bin_width_ps)

    @property
    def centers_ps(self):
        return -self.range_ps + (np.arange(len(self.counts)) + 0.5) * self.bin_width_ps


def _pair_deltas(a, b, range_ps):
    """All differences b - a with |b - a| <= range_ps; a and b sorted int64."""
    if len(a) == 0 or len(b) == 0:
        return np.empty(0, dtype=np.int64)
    lo = np.searchsorted(a, b - range_ps, side="left")
    hi = np.searchsorted(a, b + range_ps, side="right")
    counts = hi - lo
    total = int(counts.sum())
    if total == 0:
        return np.empty(0, dtype=np.int64)
    firsts = np.cumsum(counts) - counts
    a_idx = np.repeat(lo, counts) + (np.arange(total) - np.repeat(firsts, counts))
    return np.repeat(b, counts) - a[a_idx]


def correlation_histogram(stream, ch_a, ch_b, bin_width_ps, range_ps):
    """Histogram of t_B - t_A within +-range, two-cursor sweep over blocks."""
    bin_width = int(round(bin_width_ps))
    span = int(round(range_ps))
    if bin_width <= 0 or span <= 0 or bin_width != bin_width_ps or span != range_ps:
        raise ParameterError("bin width and range must be positive integers in ps")
    if (2 * span) % bin_width:
        raise ParameterError("bin width must divide twice the range")
    n_bins = 2 * span // bin_width
    header = stream.header
    cid_a, cid_b = header.channel(ch_a), header.channel(ch_b)
    auto = cid_a == cid_b
    zero_bin = min(span // bin_width, n_bins - 1)

    counts = np.zeros(n_bins, dtype=np.int64)
    prev_a = np.empty(0, dtype=np.int64)
    prev_b = np.empty(0, dtype=np.int64)

    def accumulate(deltas):
        idx = np.minimum((deltas + span) // bin_width, n_bins - 1)
        counts[:] += np.bincount(idx, minlength=n_bins)

    for channels, times in stream.blocks():
        a_blk = times[channels == cid_a].astype(np.int64)
        b_blk = a_blk if auto else times[channels == cid_b].astype(np.int64)
        a_all = np.concatenate([prev_a, a_blk])
        accumulate(_pair_deltas(a_all, b_blk, span))
        accumulate(_pair_deltas(a_blk, prev_b, span))
        if auto:
            counts[zero_bin] -= len(b_blk)
        horizon = int(times[-1]) - span
        prev_a = a_all[a_all >= horizon]
        b_all = np.concatenate([prev_b, b_blk])
        prev_b = b_all[b_all >= horizon]

    return CorrelationHistogram(bin_width, span, counts, cid_a, cid_b)


@dataclass(frozen=True)
class PeakAreas:
    zero_peak_counts: int
    side_peak_counts: tuple
    side_peak_indices: tuple
    window_ps: float

    def __post_init__(self):
        if self.zero_peak_counts < 0 or any(c < 0 for c in self.side_peak_counts):
            raise DataError("peak counts must be non-negative")
        if len(self.side_peak_counts) != len(self.side_peak_indices):
            raise DataError("side peak counts and indices differ in length")

    def select(self, indices):
        """Restrict side peaks to |k| in `indices`."""
        wanted = set(indices)
        pairs = [(k, c) for k, c in zip(self.side_peak_indices, self.side_peak_counts)
                 if abs(k) in wanted]
        return replace(self, side_peak_indices=tuple(k for k, _ in pairs),
                       side_peak_counts=tuple(c for _, c in pairs))

    def to_dict(self):
        return {"zero_peak_counts": self.zero_peak_counts,
                "side_peak_counts": list(self.side_peak_counts),
                "side_peak_indices": list(self.side_peak_indices),
                "window_ps": self.window_ps}


def integrate_peaks(hist, rep_period_ps, window_ps, n_side_peaks, zero_delay_ps=0.0):
    """Sum counts of bins centered within +-window/2 of k*period + zero_delay."""
    if window_ps <= 0:
        raise ParameterError("peak window must be positive")
    if window_ps >= rep_period_ps:
        raise DataError("peak windows overlap: window must be shorter than the period")
    if n_side_peaks < 0:
        raise ParameterError("number of side peaks must be non-negative")
    reach = abs(zero_delay_ps) + n_side_peaks * rep_period_ps + window_ps / 2.0
    if reach > hist.range_ps:
        raise DataError(f"histogram range {hist.range_ps} ps does not cover {n_side_peaks} side peaks")

    centers = hist.centers_ps

    def area(k):
        c = k * rep_period_ps + zero_delay_ps
        inside = np.abs(centers - c) <= window_ps / 2.0
        return int(hist.counts[inside].sum())

    indices = [k for n in range(1, n_side_peaks + 1) for k in (-n, n)]
    return PeakAreas(area(0), tuple(area(k) for k in indices), tuple(indices), float(window_ps))


def zero_peak_delay(hist, rep_period_ps):
    """Position of the tallest bin within half a period of zero delay."""
    centers = hist.centers_ps
    near = np.abs(centers) <= rep_period_ps / 2.0
    if not near.any() or hist.counts[near].sum() == 0:
        return 0.0
    return float(centers[near][int(np.argmax(hist.counts[near]))])


PEAK_WINDOW_FRACTION = 0.75


def summed_peak_areas(stream, pairs, bin_ps, window_ps=None, n_side_peaks=5):
    """Correlation histograms summed over detector pairs, the zero-delay position and peak areas.

    `window_ps` defaults to PEAK_WINDOW_FRACTION of the period.
    """
    if not pairs:
        raise ParameterError("at least one detector pair is required")
    period = stream.header.period_ps
    window = PEAK_WINDOW_FRACTION * period if window_ps is None else float(window_ps)
    bin_width = int(round(bin_ps))
    range_ps = int(math.ceil(((n_side_peaks + 1) * period + window / 2.0) / bin_width)) * bin_width
    total = None
    for a, b in pairs:
        hist = correlation_histogram(stream, a, b, bin_width, range_ps)
        total = hist if total is None else replace(total, counts=total.counts + hist.counts)
    zero = zero_peak_delay(total, period)
    return total, zero, integrate_peaks(total, period, window, n_side_peaks, zero_delay_ps=zero)


# -----------------------------
# Coincidence-window sweep
# -----------------------------
@dataclass(frozen=True)
class SweepRow:
    window_ps: float
    n_pulses: int
    n_trials: int
    r1a: int
    r1b: int
    r2: int
    acquisition_s: float

    def rate(self, count):
        return count / self.acquisition_s if self.acquisition_s > 0 else 0.0

    def to_dict(self):
        return {"window_ns": self.window_ps / 1000.0, "n_pulses": self.n_pulses,
                "n_trials": self.n_trials, "r1a": self.r1a, "r1b": self.r1b, "r2": self.r2,
                "r1a_rate_hz": self.rate(self.r1a), "r1b_rate_hz": self.rate(self.r1b),
                "singles_rate_hz": self.rate(self.r1a + self.r1b), "r2_rate_hz": self.rate(self.r2)}


def window_sweep(stream, windows_ps, roles=("x1", "x2"), herald=None, offsets=None):
    """Singles and doubles of an HBT pair for every window; tables are returned too."""
    windows = [float(w) for w in windows_ps]
    if any(b < a for a, b in zip(windows, windows[1:])):
        raise ParameterError("windows must be sorted ascending")
    tables = fold_pulses_multi(stream, windows, offsets)
    return sweep_rows(tables, stream.header.rep_rate_hz, roles, herald), tables


def sweep_rows(tables, rep_rate_hz, roles=("x1", "x2"), herald=None):
    """Sweep rows from already folded tables, one per window."""
    rows = []
    for table in tables:
        n, r1a, r1b, r2 = table.click_counts(roles[0], roles[1], herald)
        rows.append(SweepRow(table.window_ps, table.n_pulses, n, r1a, r1b, r2, table.n_pulses / rep_rate_hz))
    return rows
