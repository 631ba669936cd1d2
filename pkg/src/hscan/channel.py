"""Bus channel models: flat, lossy twisted pair (A), twisted pair with tapped nodes (B).

Insertion loss follows the usual UTP form ``k1*sqrt(f) + k2*f`` dB per
100 m with ``f`` in MHz. Channel B cascades ABCD matrices of line sections
and shunt stubs terminated in the node input impedance.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import fft as sfft

from .waveform import Waveform

C0 = 299_792_458.0
NP_PER_DB = np.log(10) / 20


@dataclass(frozen=True)
class ChannelSpec:
    kind: str = "flat"  # flat | A | B
    length_m: float = 100.0
    tap_count: int = 9
    tap_spacing_m: float = 10.0
    stub_len_m: float = 0.3
    tap_load_ohm: float = 20e3
    k1: float = 2.32
    k2: float = 0.238
    z0_ohm: float = 100.0
    velocity_factor: float = 0.6

    def __post_init__(self):
        kind = {"flat": "flat", "a": "A", "channela": "A", "b": "B", "channelb": "B"}.get(self.kind.lower())
        if kind is None:
            raise ValueError(f"unknown channel kind {self.kind!r}")
        object.__setattr__(self, "kind", kind)

    @property
    def bulk_delay(self) -> float:
        if self.kind == "flat":
            return 0.0
        return self.length_m / (self.velocity_factor * C0)

    def response(self, f) -> np.ndarray:
        if self.kind == "flat":
            return np.ones_like(np.asarray(f, dtype=float), dtype=complex)
        if self.kind == "A":
            return channel_a_response(f, self)
        return channel_b_response(f, self)


@dataclass(frozen=True)
class NoiseSpec:
    input_snr_db: float
    rng_seed: int
    # symbol-rate band around the carrier, so input SNR reads as Es/N0
    noise_band: tuple[float, float] = (6e6, 42e6)


def cable_loss_db(f, spec: ChannelSpec, length_m: float | None = None) -> np.ndarray:
    """Insertion loss in dB (positive) of ``length_m`` metres of cable."""
    f_mhz = np.abs(np.asarray(f, dtype=float)) / 1e6
    length = spec.length_m if length_m is None else length_m
    return (length / 100.0) * (spec.k1 * np.sqrt(f_mhz) + spec.k2 * f_mhz)


def channel_a_response(f, spec: ChannelSpec) -> np.ndarray:
    f = np.asarray(f, dtype=float)
    mag = 10 ** (-cable_loss_db(f, spec) / 20)
    return mag * np.exp(-2j * np.pi * f * spec.length_m / (spec.velocity_factor * C0))


def _propagation(f: np.ndarray, spec: ChannelSpec) -> np.ndarray:
    """Per-metre propagation constant consistent with the cable loss model."""
    alpha = cable_loss_db(f, spec, length_m=1.0) * NP_PER_DB
    beta = 2 * np.pi * f / (spec.velocity_factor * C0)
    return alpha + 1j * beta


def _line(gamma_l: np.ndarray, z0: float) -> np.ndarray:
    ch, sh = np.cosh(gamma_l), np.sinh(gamma_l)
    return np.array([[ch, z0 * sh], [sh / z0, ch]])


def _matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.einsum("ij...,jk...->ik...", a, b)


def stub_input_impedance(f, spec: ChannelSpec) -> np.ndarray:
    f = np.asarray(f, dtype=float)
    t = np.tanh(_propagation(f, spec) * spec.stub_len_m)
    z0, zl = spec.z0_ohm, spec.tap_load_ohm
    return z0 * (zl + z0 * t) / (z0 + zl * t)


def channel_b_response(f, spec: ChannelSpec) -> np.ndarray:
    """Source-EMF to load-voltage transfer, doubled so a lossless matched line has unit gain."""
    f = np.atleast_1d(np.asarray(f, dtype=float))
    z0 = spec.z0_ohm
    gamma = _propagation(f, spec)
    n = spec.tap_count
    if n == 0:
        sections = [spec.length_m]
    else:
        inner = (n - 1) * spec.tap_spacing_m
        end = (spec.length_m - inner) / 2
        if end < 0:
            raise ValueError("taps do not fit on the bus")
        sections = [end] + [spec.tap_spacing_m] * (n - 1) + [end]

    abcd = _line(gamma * sections[0], z0)
    if n:
        y_stub = 1.0 / stub_input_impedance(f, spec)
        shunt = np.array([[np.ones_like(y_stub), np.zeros_like(y_stub)], [y_stub, np.ones_like(y_stub)]])
        for length in sections[1:]:
            abcd = _matmul(_matmul(abcd, shunt), _line(gamma * length, z0))
    a, b, c, d = abcd[0, 0], abcd[0, 1], abcd[1, 0], abcd[1, 1]
    zs = zl = z0
    h = 2 * zl / (a * zl + b + c * zs * zl + d * zs)
    return h


def response_tail(spec: ChannelSpec, sample_rate: float) -> int:
    """Zero padding that keeps frequency-domain filtering linear."""
    if spec.kind == "flat":
        return 0
    return int(np.ceil(spec.bulk_delay * sample_rate)) + 4096


@lru_cache(maxsize=32)
def _sampled_response(spec: ChannelSpec, n_fft: int, sample_rate: float) -> np.ndarray:
    f = sfft.rfftfreq(n_fft, 1 / sample_rate)
    h = np.empty(f.size, dtype=complex)
    h[0] = 1.0
    h[1:] = spec.response(f[1:])
    # the real-valued impulse response needs a real Nyquist bin
    if n_fft % 2 == 0:
        h[-1] = np.abs(h[-1])
    h.setflags(write=False)
    return h


def apply_channel(x: Waveform, spec: ChannelSpec) -> Waveform:
    """Filter ``x`` by the channel; output is longer than the input by the response tail."""
    if spec.kind == "flat":
        return x.with_samples(np.array(x.samples, dtype=float))
    tail = response_tail(spec, x.sample_rate)
    n_out = len(x) + tail
    n_fft = sfft.next_fast_len(n_out, real=True)
    h = _sampled_response(spec, n_fft, x.sample_rate)
    y = sfft.irfft(sfft.rfft(x.samples, n_fft) * h, n_fft)[:n_out]
    return x.with_samples(y)


def noise_sigma(noise: NoiseSpec, overlay_power_ref: float, sample_rate: float) -> float:
    """Per-sample deviation of white noise giving the requested in-band SNR."""
    if overlay_power_ref <= 0:
        raise ValueError("overlay power reference must be positive")
    lo, hi = noise.noise_band
    if not 0 <= lo < hi <= sample_rate / 2:
        raise ValueError("noise band must lie inside (0, fs/2)")
    in_band_fraction = (hi - lo) / (sample_rate / 2)
    noise_in_band = overlay_power_ref / 10 ** (noise.input_snr_db / 10)
    return float(np.sqrt(noise_in_band / in_band_fraction))


def add_awgn(x: Waveform, noise: NoiseSpec, overlay_power_ref: float) -> Waveform:
    if np.isinf(noise.input_snr_db) and noise.input_snr_db > 0:
        return x.with_samples(np.array(x.samples, dtype=float))
    sigma = noise_sigma(noise, overlay_power_ref, x.sample_rate)
    rng = np.random.default_rng(noise.rng_seed)
    return x.with_samples(x.samples + sigma * rng.standard_normal(len(x)))


def write_response_csv(path, spec: ChannelSpec, freqs) -> None:
    freqs = np.asarray(freqs, dtype=float)
    gain = 20 * np.log10(np.abs(spec.response(freqs)))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["f_Hz", "gain_dB"])
        for f, g in zip(freqs, gain):
            writer.writerow([f"{f:.6e}", f"{g:.6f}"])
