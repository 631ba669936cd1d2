"""Carrier-modulated overlay transmitter.

The overlay rides on the dominant bits of the data field. Symbols are
pulse shaped per dominant run (filter memory flushed at each run start),
upconverted with a free-running carrier, scaled by ``a_p`` so the composite
never dips below the recessive-detection threshold, and added to the CAN
drive level.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np

from .frame import CanFrame, StuffedFrame, as_bits, dominant_schedule, stuff_frame
from .waveform import BitTiming, Waveform, differential, synthesize_single_ended

_QPSK = {
    (0, 0): 1 + 1j,
    (0, 1): -1 + 1j,
    (1, 1): -1 - 1j,
    (1, 0): 1 - 1j,
}


def _gray(n: int) -> list[int]:
    return [i ^ (i >> 1) for i in range(n)]


def _pam_levels(bits_per_axis: int) -> np.ndarray:
    """Amplitude level for each axis bit pattern (pattern read MSB first)."""
    m = 2**bits_per_axis
    levels = np.empty(m)
    for position, code in enumerate(_gray(m)):
        levels[code] = 2 * position - (m - 1)
    return levels


def _build_constellation(modulation: str) -> np.ndarray:
    """Points indexed by the integer value of their bit label."""
    if modulation == "QPSK":
        pts = np.array([_QPSK[((k >> 1) & 1, k & 1)] for k in range(4)])
    elif modulation == "8PSK":
        pts = np.empty(8, dtype=complex)
        for position, code in enumerate(_gray(8)):
            pts[code] = np.exp(1j * (np.pi / 4) * position)
    elif modulation in ("16QAM", "64QAM"):
        half = 2 if modulation == "16QAM" else 3
        levels = _pam_levels(half)
        m = 2**half
        pts = np.array([levels[k >> half] + 1j * levels[k & (m - 1)] for k in range(m * m)])
    else:
        raise ValueError(f"unknown modulation {modulation!r}")
    return pts / np.sqrt(np.mean(np.abs(pts) ** 2))


BITS_PER_SYMBOL = {"QPSK": 2, "8PSK": 3, "16QAM": 4, "64QAM": 6}
CONSTELLATIONS = {name: _build_constellation(name) for name in BITS_PER_SYMBOL}


@dataclass(frozen=True)
class OverlayConfig:
    modulation: str = "16QAM"
    carrier_freq: float = 24e6
    symbol_rate: float = 36e6
    rrc_rolloff: float = 0.25
    rrc_span: int = 8
    training_bits: int = 15
    v_offset: float = 1.0
    v_threshold: float = 0.5
    a_p: float | None = None

    def __post_init__(self):
        if self.modulation not in BITS_PER_SYMBOL:
            raise ValueError(f"unknown modulation {self.modulation!r}")

    @property
    def bits_per_symbol(self) -> int:
        return BITS_PER_SYMBOL[self.modulation]

    def samples_per_symbol(self, sample_rate: float) -> int:
        sps = sample_rate / self.symbol_rate
        if abs(sps - round(sps)) > 1e-9 or round(sps) < 1:
            raise ValueError(f"sample rate {sample_rate} is not an integer multiple of the symbol rate")
        return int(round(sps))

    def symbols_per_bit(self, timing: BitTiming) -> int:
        spb = self.symbol_rate / timing.bit_rate
        if abs(spb - round(spb)) > 1e-9:
            raise ValueError("symbol rate must be an integer multiple of the CAN bit rate")
        return int(round(spb))

    def check_band(self, sample_rate: float) -> None:
        top = self.carrier_freq + self.symbol_rate * (1 + self.rrc_rolloff) / 2
        if top >= sample_rate / 2:
            raise ValueError(f"overlay band edge {top / 1e6:.1f} MHz aliases at {sample_rate / 1e6:.0f} MHz")


@dataclass
class SymbolLog:
    training_symbols: np.ndarray
    payload_symbols: np.ndarray
    symbols_per_bit: int
    payload_bits: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.uint8))

    @property
    def all_symbols(self) -> np.ndarray:
        return np.concatenate([self.training_symbols, self.payload_symbols])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["index", "segment", "i", "q"])
            n_train = len(self.training_symbols)
            for k, s in enumerate(self.all_symbols):
                writer.writerow([k, "training" if k < n_train else "payload", f"{s.real:.9f}", f"{s.imag:.9f}"])


def map_symbols(bits, modulation: str) -> np.ndarray:
    """Gray-mapped unit-energy symbols; the first bit of each group is the MSB of the label."""
    bits = as_bits(bits)
    n = BITS_PER_SYMBOL[modulation]
    if bits.size % n:
        raise ValueError(f"{bits.size} bits do not split into {n}-bit {modulation} symbols")
    groups = bits.reshape(-1, n).astype(np.int64)
    labels = groups @ (1 << np.arange(n - 1, -1, -1))
    return CONSTELLATIONS[modulation][labels]


@lru_cache(maxsize=16)
def rrc_taps(rolloff: float, span: int, sps: int) -> np.ndarray:
    """Root-raised-cosine impulse response, normalised to a DC gain of ``sps``.

    With that scaling a zero-stuffed symbol stream comes out at unit
    amplitude; dividing the same taps by ``sps`` gives the matched filter.
    """
    n = span * sps
    t = (np.arange(n + 1) - n / 2) / sps
    b = rolloff
    h = np.empty_like(t)
    for k, tk in enumerate(t):
        if np.isclose(tk, 0.0):
            h[k] = 1 - b + 4 * b / np.pi
        elif b > 0 and np.isclose(abs(tk), 1 / (4 * b)):
            h[k] = (b / np.sqrt(2)) * (
                (1 + 2 / np.pi) * np.sin(np.pi / (4 * b)) + (1 - 2 / np.pi) * np.cos(np.pi / (4 * b))
            )
        else:
            num = np.sin(np.pi * tk * (1 - b)) + 4 * b * tk * np.cos(np.pi * tk * (1 + b))
            h[k] = num / (np.pi * tk * (1 - (4 * b * tk) ** 2))
    h *= sps / h.sum()
    h.setflags(write=False)
    return h


def pulse_shape(symbols, cfg: OverlayConfig, sample_rate: float, n_samples: int | None = None) -> tuple[Waveform, Waveform]:
    """RRC-filtered baseband I and Q.

    Symbol ``k`` is centred half a symbol into slot ``k``. The output spans
    exactly ``n_samples`` (default: one slot per symbol); filter tails that
    fall outside are dropped.
    """
    symbols = np.asarray(symbols, dtype=complex)
    sps = cfg.samples_per_symbol(sample_rate)
    if n_samples is None:
        n_samples = symbols.size * sps
    taps = rrc_taps(cfg.rrc_rolloff, cfg.rrc_span, sps)
    x = _shape(symbols, taps, sps, n_samples)
    return Waveform(x.real, sample_rate), Waveform(x.imag, sample_rate)


def _shape(symbols: np.ndarray, taps: np.ndarray, sps: int, n_samples: int) -> np.ndarray:
    up = np.zeros(n_samples, dtype=complex)
    up[sps // 2 :: sps][: symbols.size] = symbols
    half = (len(taps) - 1) // 2
    return np.convolve(up, taps)[half : half + n_samples]


def upconvert(i: Waveform, q: Waveform, carrier_freq: float) -> Waveform:
    if len(i) != len(q) or i.sample_rate != q.sample_rate:
        raise ValueError("I and Q waveforms must share length and sample rate")
    phase = 2 * np.pi * carrier_freq * i.time
    return i.with_samples(i.samples * np.cos(phase) - q.samples * np.sin(phase))


def window_mask(n_samples: int, windows, samples_per_bit: int) -> np.ndarray:
    """Boolean sample mask of the dominant bit windows ``(start_bit, n_bits)``."""
    mask = np.zeros(n_samples, dtype=bool)
    for start, n in windows:
        mask[start * samples_per_bit : (start + n) * samples_per_bit] = True
    return mask


def compute_ap(s_p: Waveform, dominant_windows, v_offset: float = 1.0, v_threshold: float = 0.5,
               samples_per_bit: int | None = None) -> float:
    """Largest scale keeping ``v_offset + a_p * s_p`` at or above ``v_threshold``.

    ``dominant_windows`` is either a boolean sample mask or a list of
    ``(start_bit, n_bits)`` windows (then ``samples_per_bit`` is required).
    """
    mask = np.asarray(dominant_windows)
    if mask.dtype != bool:
        mask = window_mask(len(s_p), dominant_windows, samples_per_bit)
    if not mask.any():
        raise ValueError("no dominant windows to scale over")
    peak = np.max(np.abs(s_p.samples[mask]))
    if peak == 0:
        raise ValueError("overlay signal is zero inside the dominant windows")
    return (v_offset - v_threshold) / peak


@dataclass
class TxResult:
    q_d: Waveform
    log: SymbolLog
    schedule: list[tuple[int, int]]
    stuffed: StuffedFrame
    a_p: float
    baseline_d: Waveform
    overlay_d: Waveform
    timing: BitTiming

    @property
    def active_mask(self) -> np.ndarray:
        return window_mask(len(self.q_d), self.schedule, self.timing.samples_per_bit)


def training_symbols(n_symbols: int, seed) -> np.ndarray:
    """Seeded QPSK training sequence known to both ends of the link."""
    rng = np.random.default_rng(seed)
    return map_symbols(rng.integers(0, 2, 2 * n_symbols, dtype=np.uint8), "QPSK")


def payload_capacity(frame: CanFrame, cfg: OverlayConfig, timing: BitTiming) -> int:
    """Number of payload bits the dominant windows of ``frame`` carry."""
    dominant = sum(n for _, n in dominant_schedule(stuff_frame(frame)))
    n_sym = max(0, dominant - cfg.training_bits) * cfg.symbols_per_bit(timing)
    return n_sym * cfg.bits_per_symbol


def build_tx(frame: CanFrame, payload_bits, cfg: OverlayConfig, seed,
             timing: BitTiming = BitTiming()) -> TxResult:
    """Composite differential transmit signal for one frame."""
    fs = timing.sample_rate
    cfg.check_band(fs)
    if np.any(frame.data != 0):
        raise ValueError("the overlay needs an all-dominant data field")
    sps = cfg.samples_per_symbol(fs)
    sym_per_bit = cfg.symbols_per_bit(timing)
    spb = timing.samples_per_bit

    stuffed = stuff_frame(frame)
    schedule = dominant_schedule(stuffed)
    n_dominant = sum(n for _, n in schedule)
    if n_dominant < cfg.training_bits:
        raise ValueError(f"{n_dominant} dominant data bits cannot hold {cfg.training_bits} training bits")

    n_train = cfg.training_bits * sym_per_bit
    n_payload = (n_dominant - cfg.training_bits) * sym_per_bit
    payload_bits = as_bits(payload_bits)
    if payload_bits.size != n_payload * cfg.bits_per_symbol:
        raise ValueError(
            f"payload has {payload_bits.size} bits, the dominant windows carry {n_payload * cfg.bits_per_symbol}"
        )
    train = training_symbols(n_train, seed)
    payload = map_symbols(payload_bits, cfg.modulation)
    symbols = np.concatenate([train, payload])

    baseline = synthesize_single_ended(stuffed.bits, timing)
    n_samples = len(baseline)
    taps = rrc_taps(cfg.rrc_rolloff, cfg.rrc_span, sps)
    bb = np.zeros(n_samples, dtype=complex)
    k = 0
    for start, n in schedule:
        count = n * sym_per_bit
        lo = start * spb
        bb[lo : lo + n * spb] = _shape(symbols[k : k + count], taps, sps, n * spb)
        k += count
    s_p = upconvert(Waveform(bb.real, fs), Waveform(bb.imag, fs), cfg.carrier_freq)

    mask = window_mask(n_samples, schedule, spb)
    a_p = cfg.a_p if cfg.a_p is not None else compute_ap(s_p, mask, cfg.v_offset, cfg.v_threshold)
    if a_p <= 0:
        raise ValueError("a_p must be positive")
    overlay = a_p * s_p.samples
    composite = baseline.samples + overlay

    settled = mask & (baseline.samples >= cfg.v_offset)
    if cfg.a_p is None and settled.any() and composite[settled].min() < cfg.v_threshold - 1e-9:
        raise ValueError("overlay drives the dominant level below the detection threshold")

    log = SymbolLog(train, payload, sym_per_bit, payload_bits)
    return TxResult(
        q_d=differential(baseline.with_samples(composite)),
        log=log,
        schedule=schedule,
        stuffed=stuffed,
        a_p=float(a_p),
        baseline_d=differential(baseline),
        overlay_d=Waveform(2 * overlay, fs),
        timing=timing,
    )


def with_ap(cfg: OverlayConfig, a_p: float | None) -> OverlayConfig:
    return replace(cfg, a_p=a_p)
