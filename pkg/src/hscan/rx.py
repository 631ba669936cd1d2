"""High-speed receiver: bandpass, gating tracker, I/Q downconversion, DFE-LMS, demapper."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from numba import njit
from scipy import signal

from .frame import HEADER_BITS, STUFF_RUN, StuffingError
from .overlay import BITS_PER_SYMBOL, CONSTELLATIONS, OverlayConfig, rrc_taps
from .waveform import BitTiming, Waveform, threshold_detect

BANDPASS_TAPS = 257
BANDPASS_EDGES = (2e6, 47e6)
BANDPASS_ATTEN_DB = 60.0


class EqualizerDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class EqualizerConfig:
    ff_taps: int = 24
    fb_taps: int = 8
    mu_train: float = 2e-2
    mu_dd: float = 8e-3
    center_tap_index: int | None = None

    def __post_init__(self):
        if self.ff_taps < 1 or self.fb_taps < 0:
            raise ValueError("equalizer needs ff_taps > 0 and fb_taps >= 0")
        for mu in (self.mu_train, self.mu_dd):
            if not 0 < mu <= 1:
                raise ValueError("LMS step sizes must lie in (0, 1]")
        if not 0 <= self.center < self.ff_taps:
            raise ValueError("center tap outside the feed-forward filter")

    @property
    def center(self) -> int:
        return self.ff_taps // 2 if self.center_tap_index is None else self.center_tap_index


@dataclass
class EqualizerState:
    ff_weights: np.ndarray
    fb_weights: np.ndarray
    decision_history: np.ndarray

    @classmethod
    def initial(cls, cfg: EqualizerConfig) -> "EqualizerState":
        ff = np.zeros(cfg.ff_taps, dtype=complex)
        ff[cfg.center] = 1.0
        return cls(ff, np.zeros(cfg.fb_taps, dtype=complex), np.zeros(cfg.fb_taps, dtype=complex))


@dataclass
class RxOutput:
    training_mse: np.ndarray
    equalized_symbols: np.ndarray
    decisions: np.ndarray
    payload_bits: np.ndarray
    state: EqualizerState | None = None
    modulation: str = "16QAM"
    training_output: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=complex))

    def to_csv(self, path, reference=None) -> None:
        """Constellation dump: symbol index, I, Q, decision, reference."""
        pts = CONSTELLATIONS[self.modulation]
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["index", "i", "q", "decision", "reference"])
            for k, (y, d) in enumerate(zip(self.equalized_symbols, self.decisions)):
                ref = "" if reference is None else f"{reference[k].real:.6f}{reference[k].imag:+.6f}j"
                writer.writerow([k, f"{y.real:.6f}", f"{y.imag:.6f}", f"{pts[d].real:.6f}{pts[d].imag:+.6f}j", ref])


# ---------------------------------------------------------------- bandpass

@lru_cache(maxsize=8)
def bandpass_taps(sample_rate: float, numtaps: int = BANDPASS_TAPS) -> np.ndarray:
    """Linear-phase Kaiser-window bandpass. Group delay is ``(numtaps - 1) / 2`` samples."""
    beta = signal.kaiser_beta(BANDPASS_ATTEN_DB)
    # cutoffs sit outside the passband by half the Kaiser transition width
    width = (BANDPASS_ATTEN_DB - 7.95) / (14.36 * (numtaps - 1)) * sample_rate
    lo = max(BANDPASS_EDGES[0] - 0.5 * width, 0.5 * width)
    hi = BANDPASS_EDGES[1] + 0.5 * width
    taps = signal.firwin(numtaps, [lo, hi], window=("kaiser", beta), pass_zero=False, fs=sample_rate)
    taps.setflags(write=False)
    return taps


def bandpass(x: Waveform) -> tuple[Waveform, int]:
    """Returns the delay-compensated filtered waveform and the removed group delay."""
    taps = bandpass_taps(x.sample_rate)
    delay = (len(taps) - 1) // 2
    y = signal.oaconvolve(x.samples, taps)[delay : delay + len(x)]
    return x.with_samples(y), delay


# ---------------------------------------------------------------- gating

def _smooth(x: np.ndarray, n: int) -> np.ndarray:
    kernel = np.ones(n) / n
    return np.convolve(x, kernel, mode="same")


def locate_data_field(bits: np.ndarray, data_field_bits: int, header_bits: int = HEADER_BITS) -> tuple[int, int]:
    """Stuffed-stream span ``[start, stop)`` of the data field, found by destuffing."""
    run_bit, run_len = -1, 0
    skip = False
    unstuffed = 0
    start = stop = None
    first, last = header_bits, header_bits + data_field_bits - 1
    for i, bit in enumerate(bits.tolist()):
        if skip:
            if bit == run_bit:
                raise StuffingError(i)
            skip = False
            run_bit, run_len = bit, 1
            if stop is not None and i == stop:
                stop += 1
                break
            continue
        if stop is not None:
            break
        if unstuffed == first:
            start = i
        if unstuffed == last:
            stop = i + 1
        unstuffed += 1
        if bit == run_bit:
            run_len += 1
        else:
            run_bit, run_len = bit, 1
        if run_len == STUFF_RUN:
            skip = True
    if data_field_bits == 0:
        return (start or 0), (start or 0)
    if start is None or stop is None:
        raise ValueError("data field not found in detected bit stream")
    return start, stop


def track_gating(q_d: Waveform, timing: BitTiming, data_field_bits: int,
                 n_bits: int | None = None) -> list[tuple[int, int]]:
    """Active sample windows ``[start, stop)`` of the high-speed demodulator.

    Bits come from the standard detector after a quarter-bit moving average
    that strips the overlay. Inside the data field each recessive-to-dominant
    transition opens a window that stays on for the dominant run (at most
    five bits under stuffing); the stuff bit that follows is a hold period.
    """
    spb = timing.samples_per_bit
    if n_bits is None:
        n_bits = len(q_d) // spb
    smoothed = q_d.with_samples(_smooth(q_d.samples[: n_bits * spb], spb // 4))
    bits = threshold_detect(smoothed, timing, n_bits)
    start, stop = locate_data_field(bits, data_field_bits)
    windows = []
    run = None
    for i in range(start, stop):
        if bits[i] == 0 and run is None:
            run = i
        elif bits[i] == 1 and run is not None:
            windows.append((run * spb, i * spb))
            run = None
    if run is not None:
        windows.append((run * spb, stop * spb))
    return windows


# ---------------------------------------------------------------- downconversion

@dataclass
class SymbolGrid:
    """Matched-filter outputs on the symbol grid spanning the data field."""
    samples: np.ndarray  # complex, one per symbol slot, padded by `lead`/`lag`
    active: np.ndarray  # bool per unpadded slot
    lead: int
    lag: int

    @property
    def active_samples(self) -> np.ndarray:
        return self.samples[self.lead : len(self.samples) - self.lag][self.active]


def symbol_grid(x: Waveform, cfg: OverlayConfig, windows, lead: int = 0, lag: int = 0) -> SymbolGrid:
    """Mix to baseband with the transmitter's carrier phase, matched filter, sample every slot."""
    fs = x.sample_rate
    sps = cfg.samples_per_symbol(fs)
    if not windows:
        return SymbolGrid(np.zeros(lead + lag, dtype=complex), np.zeros(0, dtype=bool), lead, lag)
    first, last = windows[0][0], windows[-1][1]
    n_slots = (last - first) // sps
    taps = rrc_taps(cfg.rrc_rolloff, cfg.rrc_span, sps) / sps
    half = (len(taps) - 1) // 2
    margin = half + sps * (max(lead, lag) + 1)
    lo = max(first - margin, 0)
    hi = min(last + margin, len(x))
    seg = np.zeros(last - first + 2 * margin)
    seg[lo - (first - margin) : hi - (first - margin)] = x.samples[lo:hi]
    t = x.t0 + (np.arange(seg.size) + first - margin) / fs
    bb = 2 * seg * np.exp(-2j * np.pi * cfg.carrier_freq * t)
    mf = signal.oaconvolve(bb, taps)[half : half + seg.size]
    slots = np.arange(-lead, n_slots + lag)
    idx = margin + sps // 2 + slots * sps
    active = np.zeros(n_slots, dtype=bool)
    centers = first + sps // 2 + np.arange(n_slots) * sps
    for a, b in windows:
        active |= (centers >= a) & (centers < b)
    return SymbolGrid(mf[idx], active, lead, lag)


def downconvert(x: Waveform, cfg: OverlayConfig, windows) -> np.ndarray:
    """Matched-filtered symbols at the instants inside the active windows."""
    return symbol_grid(x, cfg, windows).active_samples


# ---------------------------------------------------------------- equalizer

@njit(cache=True)
def _slice(y, points):
    best = 0
    dist = np.inf
    for k in range(points.size):
        d = (y.real - points[k].real) ** 2 + (y.imag - points[k].imag) ** 2
        if d < dist:
            dist = d
            best = k
    return best


@njit(cache=True)
def _dfe_run(rg, active, training, points, w, b, hist, mu_train, mu_dd):
    n_ff = w.size
    n_fb = b.size
    n_slots = active.size
    n_train = training.size
    n_active = 0
    for m in range(n_slots):
        if active[m]:
            n_active += 1
    out = np.zeros(n_active, dtype=np.complex128)
    err = np.zeros(n_active, dtype=np.float64)
    dec = np.zeros(n_active, dtype=np.int64)
    k = 0
    in_power = 0.0
    out_power = 0.0
    for m in range(n_slots):
        if not active[m]:
            # nothing was transmitted in this slot
            for j in range(n_fb - 1, 0, -1):
                hist[j] = hist[j - 1]
            if n_fb:
                hist[0] = 0.0
            continue
        y = 0.0 + 0.0j
        for i in range(n_ff):
            y += w[i] * rg[m + n_ff - 1 - i]
        for j in range(n_fb):
            y += b[j] * hist[j]
        if k < n_train:
            ref = training[k]
            mu = mu_train
        else:
            d = _slice(y, points)
            dec[k] = d
            ref = points[d]
            mu = mu_dd
        e = ref - y
        for i in range(n_ff):
            w[i] += mu * e * np.conj(rg[m + n_ff - 1 - i])
        for j in range(n_fb):
            b[j] += mu * e * np.conj(hist[j])
        for j in range(n_fb - 1, 0, -1):
            hist[j] = hist[j - 1]
        if n_fb:
            hist[0] = ref
        out[k] = y
        err[k] = e.real * e.real + e.imag * e.imag
        in_power += rg[m + n_ff - 1 - (n_ff // 2)].real ** 2 + rg[m + n_ff - 1 - (n_ff // 2)].imag ** 2
        out_power += y.real * y.real + y.imag * y.imag
        k += 1
    return out, err, dec, in_power, out_power


def dfe_equalize(symbols, training, cfg: EqualizerConfig = EqualizerConfig(),
                 modulation: str = "16QAM", active=None, lead: int | None = None) -> RxOutput:
    """Decision-feedback equalizer with data-aided then decision-directed LMS.

    ``symbols`` is the symbol-spaced receive sequence. When ``active`` is
    given, ``symbols`` covers every slot of the data field (gaps included,
    plus ``lead``/``lag`` padding for the feed-forward span) and only active
    slots produce outputs; gap slots feed zeros into the feedback history.
    """
    symbols = np.asarray(symbols, dtype=np.complex128)
    training = np.asarray(training, dtype=np.complex128)
    n_ff, c = cfg.ff_taps, cfg.center
    # regressor for output m is rg[m : m + n_ff] reversed, centre tap on slot m
    pre, post = n_ff - 1 - c, c
    if active is None:
        active = np.ones(symbols.size, dtype=bool)
        rg = np.concatenate([np.zeros(pre), symbols, np.zeros(post)])
    else:
        active = np.asarray(active, dtype=bool)
        lead = pre if lead is None else lead
        if lead < pre or symbols.size - lead - active.size < post:
            raise ValueError("symbol grid padding is shorter than the feed-forward span")
        rg = symbols[lead - pre : lead + active.size + post]
    if int(active.sum()) < training.size:
        raise ValueError("fewer received symbols than training symbols")

    state = EqualizerState.initial(cfg)
    points = CONSTELLATIONS[modulation].astype(np.complex128)
    out, err, dec, p_in, p_out = _dfe_run(
        rg, active, training, points, state.ff_weights, state.fb_weights, state.decision_history,
        cfg.mu_train, cfg.mu_dd,
    )
    if not np.isfinite(p_out) or (p_out > 100 * p_in and p_out > 0):
        raise EqualizerDiverged(f"equalizer output power {p_out / max(p_in, 1e-300):.1f}x its input")
    n_train = training.size
    equalized = out[n_train:]
    decisions = dec[n_train:]
    return RxOutput(
        training_mse=err[:n_train],
        equalized_symbols=equalized,
        decisions=decisions,
        payload_bits=_labels_to_bits(decisions, BITS_PER_SYMBOL[modulation]),
        state=state,
        modulation=modulation,
        training_output=out[:n_train],
    )


# ---------------------------------------------------------------- demapper

def _labels_to_bits(labels: np.ndarray, n: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    shifts = np.arange(n - 1, -1, -1)
    return ((labels[:, None] >> shifts[None, :]) & 1).astype(np.uint8).ravel()


def decide(symbols, modulation: str) -> np.ndarray:
    """Nearest-point labels."""
    symbols = np.asarray(symbols, dtype=complex)
    pts = CONSTELLATIONS[modulation]
    if symbols.size == 0:
        return np.zeros(0, dtype=np.int64)
    return np.argmin(np.abs(symbols[:, None] - pts[None, :]), axis=1)


def demap(symbols, modulation: str) -> np.ndarray:
    return _labels_to_bits(decide(symbols, modulation), BITS_PER_SYMBOL[modulation])
