"""Sampled bus signals and the standard CAN bit detector."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .frame import as_bits

RECESSIVE_LEVEL = 2.5  # common-mode level of CAN_H and CAN_L, volts
DOMINANT_SWING = 1.0  # single-ended excursion of each line when dominant
SAMPLE_POINT = 0.75
DIFF_THRESHOLD = 1.0  # volts, equals 0.5 V single-ended


@dataclass(frozen=True)
class Waveform:
    samples: np.ndarray
    sample_rate: float
    t0: float = 0.0

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("waveform samples must be finite")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def time(self) -> np.ndarray:
        return self.t0 + np.arange(len(self.samples)) / self.sample_rate

    def with_samples(self, samples: np.ndarray) -> "Waveform":
        return Waveform(samples, self.sample_rate, self.t0)

    def to_csv(self, path) -> None:
        """Two-column (time, value) dump for debugging."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["time_s", "value"])
            for t, v in zip(self.time, self.samples):
                writer.writerow([f"{t:.12e}", f"{v:.9e}"])


@dataclass(frozen=True)
class BitTiming:
    bit_rate: float = 1e6
    samples_per_bit: int = 288
    rise_fall_time: float = 500e-9  # slope-controlled edges keep CAN energy out of the overlay band

    @property
    def sample_rate(self) -> float:
        return self.bit_rate * self.samples_per_bit

    @property
    def sample_index(self) -> int:
        """Offset of the bit sample point inside a bit period."""
        return int(SAMPLE_POINT * self.samples_per_bit)


def synthesize_single_ended(bits, timing: BitTiming, t0: float = 0.0) -> Waveform:
    """Single-ended drive level: 1 V while dominant, 0 V while recessive.

    Each level change is a linear ramp of ``rise_fall_time`` that starts on
    the bit boundary. The bus is idle (recessive) before the first bit.
    """
    bits = as_bits(bits)
    if bits.size == 0:
        raise ValueError("cannot synthesize an empty bit stream")
    spb = timing.samples_per_bit
    level = (bits == 0).astype(float) * DOMINANT_SWING
    previous = np.concatenate([[0.0], level[:-1]])
    t_in_bit = np.arange(spb) / timing.sample_rate
    if timing.rise_fall_time > 0:
        frac = np.clip(t_in_bit / timing.rise_fall_time, 0.0, 1.0)
    else:
        frac = np.ones(spb)
    samples = previous[:, None] + (level - previous)[:, None] * frac[None, :]
    return Waveform(samples.ravel(), timing.sample_rate, t0)


def to_differential(q: Waveform) -> tuple[Waveform, Waveform]:
    """CAN_H and CAN_L swing symmetrically about the 2.5 V common mode."""
    return (
        q.with_samples(RECESSIVE_LEVEL + q.samples),
        q.with_samples(RECESSIVE_LEVEL - q.samples),
    )


def differential(q: Waveform) -> Waveform:
    can_h, can_l = to_differential(q)
    return q.with_samples(can_h.samples - can_l.samples)


def threshold_detect(q_d: Waveform, timing: BitTiming, n_bits: int | None = None) -> np.ndarray:
    """Standard CAN receiver: one decision per bit at the 75 % sample point."""
    spb = timing.samples_per_bit
    if n_bits is None:
        if len(q_d) % spb:
            raise ValueError("waveform does not span a whole number of bits")
        n_bits = len(q_d) // spb
    idx = np.arange(n_bits) * spb + timing.sample_index
    return np.where(q_d.samples[idx] > DIFF_THRESHOLD, 0, 1).astype(np.uint8)
