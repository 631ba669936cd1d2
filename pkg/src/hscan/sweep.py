"""Seeded Monte Carlo sweeps over (channel, input SNR) and the net-rate table.

A plan is a YAML mapping with every physical quantity in SI units::

    base_seed: 20240611
    frames_per_point: 20
    data_field_bits: 1024
    snr_points_db: [16, 17, 18]
    channels:
      - {kind: flat}
      - {kind: A, length_m: 100.0}
    overlay: {modulation: 16QAM, carrier_freq: 24.0e+6}
    equalizer: {ff_taps: 24, fb_taps: 8}
    timing: {rise_fall_time: 5.0e-7}
    noise_band: [6.0e+6, 42.0e+6]
    rate_table_L: [0, 64, 1024]

Omitted keys take the library defaults.
"""

from __future__ import annotations

import csv
import dataclasses
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from .channel import ChannelSpec
from .link import DEFAULT_IDENTIFIER, NOISE_BAND, simulate_frame
from .metrics import SweepResult, config_digest, net_rate_bps, net_rate_ratio, write_sweep_csv
from .overlay import CONSTELLATIONS, OverlayConfig
from .rx import EqualizerConfig
from .waveform import BitTiming

DEFAULT_RATE_L = (0, 64, 128, 256, 512, 1024, 2048, 4096)


class SweepError(RuntimeError):
    """A frame failed; the message carries channel, SNR, frame index and seed."""


@dataclass(frozen=True)
class SweepPlan:
    channels: tuple[ChannelSpec, ...] = (ChannelSpec("flat"), ChannelSpec("A"), ChannelSpec("B"))
    snr_points_db: tuple[float, ...] = tuple(float(s) for s in range(16, 27))
    frames_per_point: int = 20
    data_field_bits: int = 1024
    overlay: OverlayConfig = field(default_factory=OverlayConfig)
    equalizer: EqualizerConfig = field(default_factory=EqualizerConfig)
    timing: BitTiming = field(default_factory=BitTiming)
    base_seed: int = 20240611
    identifier: int = DEFAULT_IDENTIFIER
    noise_band: tuple[float, float] = NOISE_BAND
    rate_table_L: tuple[int, ...] = DEFAULT_RATE_L

    def __post_init__(self):
        if not self.snr_points_db:
            raise ValueError("plan needs at least one SNR point")
        if self.frames_per_point < 1:
            raise ValueError("frames_per_point must be >= 1")
        if not self.channels:
            raise ValueError("plan needs at least one channel")
        if self.data_field_bits % 8:
            raise ValueError("data_field_bits must be a multiple of 8")

    @property
    def digest(self) -> str:
        return config_digest(self)

    def points(self, channels=None, snrs=None) -> list[tuple[int, int]]:
        """(channel index, SNR index) pairs in plan order, optionally filtered.

        Indices always refer to the full plan, so a filtered run reproduces
        the matching rows of a full run exactly.
        """
        wanted_ch = {ChannelSpec(c).kind for c in channels} if channels else None
        wanted_snr = [float(s) for s in snrs] if snrs else None
        out = []
        for ci, ch in enumerate(self.channels):
            if wanted_ch is not None and ch.kind not in wanted_ch:
                continue
            for si, snr in enumerate(self.snr_points_db):
                if wanted_snr is not None and not any(np.isclose(snr, w) for w in wanted_snr):
                    continue
                out.append((ci, si))
        return out


def _coerce(cls, raw: dict | None):
    """Build a frozen config dataclass from a mapping, casting to the default's type."""
    raw = dict(raw or {})
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name not in raw:
            continue
        value = raw.pop(f.name)
        default = f.default
        if value is not None and isinstance(default, bool):
            value = bool(value)
        elif value is not None and isinstance(default, int):
            value = int(value)
        elif value is not None and (isinstance(default, float) or f.name == "a_p"):
            value = float(value)
        kwargs[f.name] = value
    if raw:
        raise ValueError(f"unknown {cls.__name__} keys: {sorted(raw)}")
    return cls(**kwargs)


def plan_from_dict(raw: dict) -> SweepPlan:
    raw = dict(raw)
    kw = {}
    if "channels" in raw:
        kw["channels"] = tuple(_coerce(ChannelSpec, c if isinstance(c, dict) else {"kind": c})
                               for c in raw.pop("channels"))
    if "snr_points_db" in raw:
        kw["snr_points_db"] = tuple(float(s) for s in raw.pop("snr_points_db"))
    for key, cls in (("overlay", OverlayConfig), ("equalizer", EqualizerConfig), ("timing", BitTiming)):
        if key in raw:
            kw[key] = _coerce(cls, raw.pop(key))
    for key in ("frames_per_point", "data_field_bits", "base_seed", "identifier"):
        if key in raw:
            kw[key] = int(raw.pop(key))
    if "noise_band" in raw:
        lo, hi = raw.pop("noise_band")
        kw["noise_band"] = (float(lo), float(hi))
    if "rate_table_L" in raw:
        kw["rate_table_L"] = tuple(int(v) for v in raw.pop("rate_table_L"))
    if raw:
        raise ValueError(f"unknown plan keys: {sorted(raw)}")
    return SweepPlan(**kw)


def load_plan(path=None) -> SweepPlan:
    """Read a YAML plan; ``None`` loads the packaged default."""
    if path is None:
        text = resources.files("hscan").joinpath("plans/default.yaml").read_text()
    else:
        text = Path(path).read_text()
    return plan_from_dict(yaml.safe_load(text) or {})


def frame_seed(base_seed: int, channel_index: int, snr_index: int, frame_index: int) -> int:
    """Per-frame seed: first 32-bit word of SeedSequence([base, channel, snr, frame]).

    Distinct index tuples give independent entropy pools, so adding points or
    frames to a plan never changes the seeds of existing ones.
    """
    ss = np.random.SeedSequence([base_seed, channel_index, snr_index, frame_index])
    return int(ss.generate_state(1, dtype=np.uint32)[0])


@dataclass(frozen=True)
class _Item:
    plan: SweepPlan
    channel_index: int
    snr_index: int
    frame_index: int
    keep_constellation: bool = False


def _run_item(item: _Item):
    plan = item.plan
    channel = plan.channels[item.channel_index]
    snr = plan.snr_points_db[item.snr_index]
    seed = frame_seed(plan.base_seed, item.channel_index, item.snr_index, item.frame_index)
    try:
        out = simulate_frame(
            seed, channel, snr, plan.data_field_bits, plan.overlay, plan.equalizer,
            plan.timing, plan.identifier, plan.noise_band,
        )
    except Exception as exc:
        raise SweepError(
            f"channel={channel.kind} snr={snr:g} dB frame={item.frame_index} seed={seed}: {exc}"
        ) from exc
    constellation = None
    if item.keep_constellation:
        constellation = (out.rx.equalized_symbols, out.rx.decisions, out.tx.log.payload_symbols)
    return out.output_snr_db, out.bit_errors, out.symbol_errors, out.bits, out.symbols, constellation


def run_sweep(plan: SweepPlan, jobs: int = 1, constellation_dir=None, progress=None,
              channels=None, snrs=None) -> list[SweepResult]:
    """One SweepResult per (channel, SNR) in plan order.

    Output SNR is the mean over frames of the per-frame dB value; error
    counts are pooled. ``jobs > 1`` farms frames out to worker processes,
    which does not change any number.
    """
    digest = plan.digest
    points = plan.points(channels, snrs)
    if not points:
        raise ValueError("selection filters match no sweep point")
    keep = constellation_dir is not None
    items = [_Item(plan, ci, si, fi, keep and fi == 0) for ci, si in points for fi in range(plan.frames_per_point)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_run_item, items, chunksize=max(1, len(items) // (8 * jobs))))
    else:
        outcomes = []
        for k, item in enumerate(items):
            outcomes.append(_run_item(item))
            if progress is not None:
                progress(k + 1, len(items))

    results = []
    n = plan.frames_per_point
    for p, (ci, si) in enumerate(points):
        chunk = outcomes[p * n : (p + 1) * n]
        channel, snr = plan.channels[ci], plan.snr_points_db[si]
        results.append(SweepResult(
            channel_kind=channel.kind,
            input_snr_db=snr,
            output_snr_db=float(np.mean([c[0] for c in chunk])),
            symbol_errors=sum(c[2] for c in chunk),
            bit_errors=sum(c[1] for c in chunk),
            symbols_total=sum(c[4] for c in chunk),
            bits_total=sum(c[3] for c in chunk),
            frames=n,
            seed=plan.base_seed,
            config_digest=digest,
        ))
        if constellation_dir is not None and chunk[0][5] is not None:
            write_constellation_csv(
                Path(constellation_dir) / f"constellation_{channel.kind}_{snr:g}dB.csv",
                *chunk[0][5], plan.overlay.modulation, digest,
            )
    return results


def write_constellation_csv(path, equalized, decisions, truth, modulation: str, digest: str) -> None:
    pts = CONSTELLATIONS[modulation]
    with open(path, "w", newline="") as fh:
        fh.write(f"# config_digest: {digest}\n")
        writer = csv.writer(fh)
        writer.writerow(["index", "i", "q", "decided_i", "decided_q", "sent_i", "sent_q"])
        for k, (y, d, t) in enumerate(zip(equalized, decisions, truth)):
            writer.writerow([k, f"{y.real:.6f}", f"{y.imag:.6f}", f"{pts[d].real:.6f}", f"{pts[d].imag:.6f}",
                             f"{t.real:.6f}", f"{t.imag:.6f}"])


def rate_table(L_values, cfg: OverlayConfig = OverlayConfig()) -> list[tuple[int, float, float]]:
    rows = []
    for L in L_values:
        ratio = net_rate_ratio(int(L), cfg.training_bits)
        rows.append((int(L), ratio, net_rate_bps(ratio, cfg)))
    return rows


def write_rate_csv(path, rows, digest: str) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# config_digest: {digest}\n")
        writer = csv.writer(fh)
        writer.writerow(["L", "ratio", "net_rate_bps"])
        for L, ratio, bps in rows:
            writer.writerow([L, f"{ratio:.6f}", f"{bps:.1f}"])


def write_fig8_csv(path, results, digest: str) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# config_digest: {digest}\n")
        writer = csv.writer(fh)
        writer.writerow(["channel", "input_snr_db", "mean_output_snr_db", "ber"])
        for r in results:
            writer.writerow([r.channel_kind, f"{r.input_snr_db:.4f}", f"{r.output_snr_db:.4f}", f"{r.ber:.6e}"])


def write_outputs(out_dir, plan: SweepPlan, results) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    digest = plan.digest
    paths = {
        "fig8": out / "fig8.csv",
        "fig9": out / "fig9.csv",
        "sweep": out / "sweep_results.csv",
    }
    write_fig8_csv(paths["fig8"], results, digest)
    write_rate_csv(paths["fig9"], rate_table(plan.rate_table_L, plan.overlay), digest)
    write_sweep_csv(paths["sweep"], results, digest)
    return paths


def default_jobs() -> int:
    return max(1, min(os.cpu_count() or 1, 8))
