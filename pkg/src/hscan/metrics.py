"""Link figures of merit: equalizer output SNR, error rates, net rate, CAN compatibility."""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import asdict, dataclass, fields, is_dataclass

import numpy as np

from .frame import OVERHEAD_BITS, STUFF_RUN, as_bits
from .overlay import OverlayConfig
from .waveform import BitTiming, Waveform, threshold_detect

SNR_CAP_DB = 60.0


@dataclass(frozen=True)
class SweepResult:
    channel_kind: str
    input_snr_db: float
    output_snr_db: float
    symbol_errors: int
    bit_errors: int
    symbols_total: int
    bits_total: int
    frames: int
    seed: int
    config_digest: str

    @property
    def ber(self) -> float:
        return self.bit_errors / self.bits_total if self.bits_total else 0.0

    @property
    def ser(self) -> float:
        return self.symbol_errors / self.symbols_total if self.symbols_total else 0.0


SWEEP_COLUMNS = [f.name for f in fields(SweepResult)] + ["ber", "ser"]


def output_snr(equalized, truth) -> float:
    """10*log10(mean|truth|^2 / mean|equalized - truth|^2), capped at 60 dB."""
    equalized = np.asarray(equalized, dtype=complex)
    truth = np.asarray(truth, dtype=complex)
    if equalized.size == 0:
        raise ValueError("output_snr of an empty sequence")
    if equalized.shape != truth.shape:
        raise ValueError("equalized and truth sequences differ in length")
    noise = np.mean(np.abs(equalized - truth) ** 2)
    sig = np.mean(np.abs(truth) ** 2)
    if noise == 0:
        return SNR_CAP_DB
    return float(min(10 * np.log10(sig / noise), SNR_CAP_DB))


def error_counts(decisions, truth, bits_per_symbol: int) -> tuple[int, int]:
    """(bit errors, symbol errors)."""
    d, t = as_bits(decisions), as_bits(truth)
    if d.size != t.size:
        raise ValueError("bit streams differ in length")
    wrong = d != t
    n_sym = d.size // bits_per_symbol
    sym_wrong = wrong[: n_sym * bits_per_symbol].reshape(n_sym, bits_per_symbol).any(axis=1)
    return int(wrong.sum()), int(sym_wrong.sum())


def error_rates(decisions, truth, bits_per_symbol: int = 4) -> tuple[float, float]:
    d = as_bits(decisions)
    if d.size == 0:
        return 0.0, 0.0
    bit_err, sym_err = error_counts(d, truth, bits_per_symbol)
    n_sym = d.size // bits_per_symbol
    return bit_err / d.size, (sym_err / n_sym if n_sym else 0.0)


def net_rate_ratio(data_field_bits: int, training_bits: int = 15, overhead_bits: int = OVERHEAD_BITS) -> float:
    """Payload-bearing bit periods over all on-bus bit periods of an all-dominant frame."""
    L = int(data_field_bits)
    if L < 0:
        raise ValueError("data field length must be non-negative")
    payload = max(0, L - training_bits)
    return payload / (overhead_bits + L + L // STUFF_RUN)


def net_rate_bps(ratio: float, cfg: OverlayConfig = OverlayConfig()) -> float:
    if not 0 <= ratio <= 1:
        raise ValueError("ratio must lie in [0, 1]")
    return ratio * cfg.symbol_rate * cfg.bits_per_symbol


@dataclass(frozen=True)
class Compatibility:
    passed: bool
    first_mismatch: int | None

    def __bool__(self) -> bool:
        return self.passed


def compatibility_check(tx_composite: Waveform, tx_baseline: Waveform, timing: BitTiming = BitTiming()) -> Compatibility:
    """Does a standard CAN receiver read the same bits with and without the overlay?"""
    a = threshold_detect(tx_composite, timing)
    b = threshold_detect(tx_baseline, timing)
    diff = np.flatnonzero(a != b)
    if diff.size:
        return Compatibility(False, int(diff[0]))
    return Compatibility(True, None)


def _plain(obj):
    if is_dataclass(obj):
        return {k: _plain(v) for k, v in asdict(obj).items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, float) and not np.isfinite(obj):
        return repr(obj)
    return obj


def config_digest(*configs) -> str:
    """Short stable hash of configuration objects."""
    blob = json.dumps([_plain(c) for c in configs], sort_keys=True, default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def write_sweep_csv(path, results, digest: str, append: bool = False) -> None:
    """Full SweepResult rows, column order ``SWEEP_COLUMNS``."""
    mode = "a" if append else "w"
    with open(path, mode, newline="") as fh:
        if not append:
            fh.write(f"# config_digest: {digest}\n")
            csv.writer(fh).writerow(SWEEP_COLUMNS)
        writer = csv.writer(fh)
        for r in results:
            writer.writerow([
                r.channel_kind, _fmt(r.input_snr_db), _fmt(r.output_snr_db), r.symbol_errors, r.bit_errors,
                r.symbols_total, r.bits_total, r.frames, r.seed, r.config_digest, f"{r.ber:.6e}", f"{r.ser:.6e}",
            ])


def _fmt(x: float) -> str:
    return "inf" if np.isinf(x) else f"{x:.4f}"
