"""One frame through transmitter, channel, noise and receiver."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import ChannelSpec, NoiseSpec, add_awgn, apply_channel
from .frame import all_dominant_frame
from .metrics import error_counts, output_snr
from .overlay import OverlayConfig, TxResult, build_tx, payload_capacity
from .rx import EqualizerConfig, RxOutput, bandpass, dfe_equalize, symbol_grid, track_gating
from .waveform import BitTiming, Waveform

DEFAULT_IDENTIFIER = 0x123
NOISE_BAND = NoiseSpec.__dataclass_fields__["noise_band"].default


@dataclass
class FrameOutcome:
    output_snr_db: float
    bit_errors: int
    symbol_errors: int
    bits: int
    symbols: int
    tx: TxResult
    rx: RxOutput
    received: Waveform
    windows: list[tuple[int, int]]

    @property
    def post_training_mse_db(self) -> float:
        err = self.rx.equalized_symbols - self.tx.log.payload_symbols
        return float(10 * np.log10(np.mean(np.abs(err) ** 2) + 1e-300))


def frame_seeds(seed: int) -> tuple[np.random.SeedSequence, ...]:
    """Independent streams for training symbols, payload bits and noise."""
    return tuple(np.random.SeedSequence(seed).spawn(3))


def overlay_power(tx: TxResult, spec: ChannelSpec, delay: int) -> float:
    """Mean square of the post-channel overlay over the active windows."""
    post = apply_channel(tx.overlay_d, spec).samples[delay : delay + len(tx.q_d)]
    return float(np.mean(post[tx.active_mask] ** 2))


def simulate_frame(
    seed: int,
    channel: ChannelSpec = ChannelSpec(),
    input_snr_db: float = float("inf"),
    data_field_bits: int = 1024,
    overlay: OverlayConfig = OverlayConfig(),
    equalizer: EqualizerConfig = EqualizerConfig(),
    timing: BitTiming = BitTiming(),
    identifier: int = DEFAULT_IDENTIFIER,
    noise_band: tuple[float, float] = NOISE_BAND,
) -> FrameOutcome:
    train_seed, payload_seed, noise_seed = frame_seeds(seed)
    frame = all_dominant_frame(identifier, data_field_bits)
    n_payload = payload_capacity(frame, overlay, timing)
    payload = np.random.default_rng(payload_seed).integers(0, 2, n_payload, dtype=np.uint8)
    tx = build_tx(frame, payload, overlay, train_seed, timing)

    fs = timing.sample_rate
    delay = int(round(channel.bulk_delay * fs))
    received = apply_channel(tx.q_d, channel)
    if np.isfinite(input_snr_db):
        ref = overlay_power(tx, channel, delay)
        noise_seed_int = int(noise_seed.generate_state(1)[0])
        received = add_awgn(received, NoiseSpec(input_snr_db, noise_seed_int, noise_band), ref)
    # timing is assumed perfectly recovered: strip the known bulk delay
    aligned = received.with_samples(received.samples[delay : delay + len(tx.q_d)])

    windows = track_gating(aligned, timing, data_field_bits)
    filtered, _ = bandpass(aligned)
    pad = equalizer.ff_taps
    grid = symbol_grid(filtered, overlay, windows, lead=pad, lag=pad)
    n_expected = len(tx.log.training_symbols) + len(tx.log.payload_symbols)
    if int(grid.active.sum()) != n_expected:
        raise RuntimeError(f"gating found {int(grid.active.sum())} symbol slots, expected {n_expected}")
    gain = np.sqrt(np.mean(np.abs(grid.active_samples) ** 2))
    rx = dfe_equalize(grid.samples / gain, tx.log.training_symbols, equalizer, overlay.modulation,
                      active=grid.active, lead=pad)

    bit_err, sym_err = error_counts(rx.payload_bits, tx.log.payload_bits, overlay.bits_per_symbol)
    return FrameOutcome(
        output_snr_db=output_snr(rx.equalized_symbols, tx.log.payload_symbols),
        bit_errors=bit_err,
        symbol_errors=sym_err,
        bits=int(tx.log.payload_bits.size),
        symbols=int(tx.log.payload_symbols.size),
        tx=tx,
        rx=rx,
        received=aligned,
        windows=windows,
    )
