import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hscan.frame import all_dominant_frame, build_frame
from hscan.overlay import (
    BITS_PER_SYMBOL,
    CONSTELLATIONS,
    OverlayConfig,
    build_tx,
    compute_ap,
    map_symbols,
    payload_capacity,
    pulse_shape,
    rrc_taps,
    upconvert,
    with_ap,
)
from hscan.waveform import BitTiming, Waveform, threshold_detect

FS = 288e6
CFG = OverlayConfig()
TIMING = BitTiming()


def _tx(L=64, seed=1, cfg=CFG, timing=TIMING, identifier=0x123):
    frame = all_dominant_frame(identifier, L)
    n = payload_capacity(frame, cfg, timing)
    payload = np.random.default_rng(seed + 1000).integers(0, 2, n, dtype=np.uint8)
    return build_tx(frame, payload, cfg, seed, timing)


# ---------------------------------------------------------------- mapping

def test_qpsk_table():
    expect = {"00": 1 + 1j, "01": -1 + 1j, "11": -1 - 1j, "10": 1 - 1j}
    for label, point in expect.items():
        sym = map_symbols([int(c) for c in label], "QPSK")
        assert sym[0] == pytest.approx(point / np.sqrt(2))


def test_16qam_corner():
    assert map_symbols([0, 0, 0, 0], "16QAM")[0] == pytest.approx((-3 - 3j) / np.sqrt(10))


def test_16qam_axes():
    # I from the first two bits, Q from the last two, Gray order -3, -1, +1, +3
    levels = {(0, 0): -3, (0, 1): -1, (1, 1): 1, (1, 0): 3}
    for (a, b), (c, d) in itertools.product(levels, repeat=2):
        sym = map_symbols([a, b, c, d], "16QAM")[0] * np.sqrt(10)
        assert sym == pytest.approx(levels[(a, b)] + 1j * levels[(c, d)])


@pytest.mark.parametrize("modulation", sorted(CONSTELLATIONS))
def test_unit_energy(modulation):
    pts = CONSTELLATIONS[modulation]
    assert pts.size == 2 ** BITS_PER_SYMBOL[modulation]
    assert np.mean(np.abs(pts) ** 2) == pytest.approx(1.0)
    assert len(set(np.round(pts, 9))) == pts.size


@pytest.mark.parametrize("modulation", sorted(CONSTELLATIONS))
def test_gray_neighbours(modulation):
    pts = CONSTELLATIONS[modulation]
    d = np.abs(pts[:, None] - pts[None, :])
    dmin = d[d > 1e-9].min()
    for a, b in zip(*np.nonzero(np.isclose(d, dmin))):
        assert bin(int(a) ^ int(b)).count("1") == 1


def test_map_rejects_partial_symbol():
    with pytest.raises(ValueError):
        map_symbols([0, 1, 1], "16QAM")


# ---------------------------------------------------------------- pulse shaping

def test_rrc_normalisation():
    taps = rrc_taps(0.25, 8, 8)
    assert taps.size == 65
    assert taps.sum() == pytest.approx(8.0)
    assert np.argmax(taps) == 32
    assert np.allclose(taps, taps[::-1])


def test_single_symbol_peaks_at_centre():
    sym = np.zeros(9, dtype=complex)
    sym[4] = 1.0
    i, q = pulse_shape(sym, CFG, FS)
    assert np.argmax(i.samples) == 4 * 8 + 4
    assert np.allclose(q.samples, 0)


def test_dc_gain():
    i, _ = pulse_shape(np.ones(64, dtype=complex), CFG, FS)
    mid = i.samples[8 * 8 : -8 * 8]
    # unit gain on average over every symbol period
    assert np.allclose(mid.reshape(-1, 8).mean(axis=1), 1.0, atol=1e-9)
    # truncating the pulse to 8 symbols leaves a small periodic ripple
    assert np.all(np.abs(mid - 1.0) < 0.02)


def test_dc_ripple_is_truncation():
    i, _ = pulse_shape(np.ones(96, dtype=complex), OverlayConfig(rrc_span=16), FS)
    mid = i.samples[16 * 8 : -16 * 8]
    assert np.all(np.abs(mid - 1.0) < 0.01)


def test_matched_filter_isi():
    rng = np.random.default_rng(5)
    sym = map_symbols(rng.integers(0, 2, 4 * 400, dtype=np.uint8), "16QAM")
    i, q = pulse_shape(sym, CFG, FS)
    x = i.samples + 1j * q.samples
    mf = rrc_taps(0.25, 8, 8) / 8
    y = np.convolve(x, mf)[32 : 32 + x.size][4::8]
    core = slice(16, -16)
    err = np.sqrt(np.mean(np.abs(y[core] - sym[core]) ** 2))
    assert err < 0.01


def test_non_integer_sps():
    with pytest.raises(ValueError):
        pulse_shape(np.ones(4), OverlayConfig(symbol_rate=35e6), FS)


def test_alias_check():
    with pytest.raises(ValueError):
        OverlayConfig(carrier_freq=130e6).check_band(FS)
    CFG.check_band(FS)


# ---------------------------------------------------------------- upconversion

def test_upconvert_tone():
    n = 240
    i = Waveform(np.ones(n), FS)
    q = Waveform(np.zeros(n), FS)
    s = upconvert(i, q, 24e6).samples
    assert np.allclose(s, np.cos(2 * np.pi * 24e6 * np.arange(n) / FS))
    assert np.allclose(upconvert(q, q, 24e6).samples, 0)


def test_upconvert_length_mismatch():
    with pytest.raises(ValueError):
        upconvert(Waveform(np.ones(3), FS), Waveform(np.ones(4), FS), 24e6)


def test_passband_energy():
    rng = np.random.default_rng(11)
    sym = map_symbols(rng.integers(0, 2, 2 * 2000, dtype=np.uint8), "QPSK")
    i, q = pulse_shape(sym, CFG, FS)
    s = upconvert(i, q, 24e6).samples
    e_bb = np.sum(i.samples**2) + np.sum(q.samples**2)
    assert np.sum(s**2) == pytest.approx(e_bb / 2, rel=0.01)


# ---------------------------------------------------------------- a_p

def test_compute_ap_algebra():
    mask = np.ones(4, dtype=bool)
    assert compute_ap(Waveform(np.array([0.2, -1.0, 0.5, 0.0]), FS), mask) == pytest.approx(0.5)
    assert compute_ap(Waveform(np.array([0.2, 2.0, -0.5, 0.0]), FS), mask) == pytest.approx(0.25)


def test_compute_ap_bit_windows():
    s = np.zeros(3 * 288)
    s[300] = 4.0
    s[700] = 10.0  # outside the window
    assert compute_ap(Waveform(s, FS), [(1, 1)], samples_per_bit=288) == pytest.approx(0.125)


def test_compute_ap_zero_signal():
    with pytest.raises(ValueError):
        compute_ap(Waveform(np.zeros(8), FS), np.ones(8, dtype=bool))


def test_ap_regression_1024():
    frame = all_dominant_frame(0x123, 1024)
    payload = np.random.default_rng(7).integers(0, 2, payload_capacity(frame, CFG, TIMING), dtype=np.uint8)
    tx = build_tx(frame, payload, CFG, 7, TIMING)
    assert tx.a_p == pytest.approx(0.2437978, abs=1e-6)


# ---------------------------------------------------------------- transmitter

def test_symbol_counts_64():
    tx = _tx(64)
    assert tx.log.training_symbols.size == 540
    assert tx.log.payload_symbols.size == 1764
    assert tx.log.symbols_per_bit == 36


@given(st.sampled_from([16, 64, 256]), st.integers(0, 2**11 - 1), st.integers(0, 2**32 - 1))
def test_tx_invariants(L, identifier, seed):
    tx = _tx(L, seed, identifier=identifier)
    mask = tx.active_mask
    dominant_bits = sum(n for _, n in tx.schedule)
    # symbol accounting
    assert tx.log.training_symbols.size + tx.log.payload_symbols.size == 36 * dominant_bits
    # gating: overlay vanishes outside the dominant data windows
    extra = tx.q_d.samples - tx.baseline_d.samples
    assert np.all(extra[~mask] == 0)
    # amplitude: settled dominant level never falls below 0.5 V single-ended
    single = tx.q_d.samples / 2
    settled = mask & (tx.baseline_d.samples / 2 >= 1.0)
    assert single[settled].min() >= 0.5 - 1e-12
    # compatibility with the standard detector
    assert np.array_equal(threshold_detect(tx.q_d, TIMING), threshold_detect(tx.baseline_d, TIMING))
    assert np.array_equal(threshold_detect(tx.q_d, TIMING), tx.stuffed.bits)


def test_ap_uses_full_headroom():
    tx = _tx(64, 3)
    excursion = np.abs(tx.overlay_d.samples[tx.active_mask]) / 2
    assert excursion.max() == pytest.approx(0.5, rel=1e-12)


def test_training_is_qpsk_and_seeded():
    a, b, c = _tx(64, 9), _tx(64, 9), _tx(64, 10)
    assert np.array_equal(a.log.training_symbols, b.log.training_symbols)
    assert not np.array_equal(a.log.training_symbols, c.log.training_symbols)
    assert np.allclose(np.abs(a.log.training_symbols), 1.0)
    assert np.array_equal(a.q_d.samples, b.q_d.samples)


def test_payload_size_mismatch():
    frame = all_dominant_frame(0x123, 64)
    with pytest.raises(ValueError):
        build_tx(frame, np.zeros(10, dtype=np.uint8), CFG, 0)


def test_non_dominant_data_rejected():
    frame = build_frame(0x123, [0, 1, 0, 0, 0, 0, 0, 0])
    with pytest.raises(ValueError):
        build_tx(frame, [], CFG, 0)


def test_fixed_ap_is_honoured():
    tx = _tx(64, cfg=with_ap(CFG, 0.1))
    assert tx.a_p == 0.1


def test_symbol_log_csv(tmp_path):
    tx = _tx(64)
    tx.log.to_csv(tmp_path / "log.csv")
    rows = (tmp_path / "log.csv").read_text().splitlines()
    assert rows[0] == "index,segment,i,q"
    assert len(rows) == 1 + 540 + 1764
    assert rows[1].split(",")[1] == "training" and rows[-1].split(",")[1] == "payload"
