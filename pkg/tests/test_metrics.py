import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hscan.frame import all_dominant_frame
from hscan.metrics import (
    SNR_CAP_DB,
    SWEEP_COLUMNS,
    SweepResult,
    compatibility_check,
    config_digest,
    error_counts,
    error_rates,
    net_rate_bps,
    net_rate_ratio,
    output_snr,
    write_sweep_csv,
)
from hscan.overlay import OverlayConfig, build_tx, payload_capacity, with_ap
from hscan.waveform import BitTiming

TIMING = BitTiming()


def test_output_snr_examples():
    x = np.exp(1j * np.linspace(0, 6, 50))
    assert output_snr(x, x) == SNR_CAP_DB == 60.0
    assert output_snr(np.zeros(50), x) == pytest.approx(0.0)
    assert output_snr(x * 1.1, x) == pytest.approx(20.0)


def test_output_snr_errors():
    with pytest.raises(ValueError):
        output_snr([], [])
    with pytest.raises(ValueError):
        output_snr([1, 2], [1])


def test_error_rate_examples():
    rng = np.random.default_rng(0)
    bits = rng.integers(0, 2, 10_000, dtype=np.uint8)
    assert error_rates(bits, bits) == (0.0, 0.0)
    assert error_rates(1 - bits, bits)[0] == 1.0
    one = bits.copy()
    one[1234] ^= 1
    ber, ser = error_rates(one, bits, 4)
    assert ber == pytest.approx(1e-4)
    assert ser == pytest.approx(1 / 2500)
    with pytest.raises(ValueError):
        error_rates(bits[:-1], bits)


def test_error_counts_group_symbols():
    truth = np.zeros(8, dtype=np.uint8)
    got = truth.copy()
    got[[0, 1, 6]] = 1
    assert error_counts(got, truth, 4) == (3, 2)


def test_net_rate_examples():
    assert net_rate_ratio(0) == 0
    assert net_rate_ratio(1024) == pytest.approx(1009 / 1274)
    assert net_rate_ratio(1024) == pytest.approx(0.792, abs=5e-4)
    assert net_rate_ratio(64) == pytest.approx(49 / 122)
    assert net_rate_ratio(8) == 0


def test_net_rate_strictly_increasing_to_1288():
    ratios = [net_rate_ratio(L) for L in range(16, 1289, 8)]
    assert np.all(np.diff(ratios) > 0)
    grid = [net_rate_ratio(2**k) for k in range(4, 21)]
    assert np.all(np.diff(grid) > 0)


@given(st.integers(2, 200_000))
def test_net_rate_monotone_and_bounded(k):
    L = 8 * k
    # floor(L/5) steps unevenly across bytes, so beyond 1288 bits the
    # ratio can dip by a few 1e-5 from one byte to the next
    assert net_rate_ratio(L) > net_rate_ratio(L - 8) - 1e-4
    assert net_rate_ratio(L) < 5 / 6


def test_net_rate_bps():
    cfg = OverlayConfig()
    assert net_rate_bps(1.0, cfg) == pytest.approx(144e6)
    assert net_rate_bps(0.0, cfg) == 0
    assert net_rate_bps(net_rate_ratio(1024), cfg) == pytest.approx(114.0e6, rel=2e-3)
    assert net_rate_bps(1.0, OverlayConfig(modulation="QPSK")) == pytest.approx(72e6)
    with pytest.raises(ValueError):
        net_rate_bps(1.5, cfg)


def _tx(cfg, L=1024, seed=4):
    frame = all_dominant_frame(0x123, L)
    bits = np.random.default_rng(seed).integers(0, 2, payload_capacity(frame, cfg, TIMING), dtype=np.uint8)
    return build_tx(frame, bits, cfg, seed, TIMING)


def test_compatibility_pass():
    tx = _tx(OverlayConfig())
    assert compatibility_check(tx.q_d, tx.baseline_d, TIMING)
    assert compatibility_check(tx.baseline_d, tx.baseline_d, TIMING).first_mismatch is None


def test_compatibility_fails_with_doubled_ap():
    ok = _tx(OverlayConfig())
    bad = _tx(with_ap(OverlayConfig(), 2 * ok.a_p))
    result = compatibility_check(bad.q_d, bad.baseline_d, TIMING)
    assert not result.passed
    assert bad.stuffed.data_start <= result.first_mismatch < bad.stuffed.data_stop


def test_sweep_result_rates():
    r = SweepResult("A", 20.0, 16.0, 3, 4, 300, 1200, 2, 1, "x")
    assert r.ber == pytest.approx(4 / 1200)
    assert r.ser == pytest.approx(3 / 300)
    assert SWEEP_COLUMNS[-2:] == ["ber", "ser"]


def test_config_digest():
    a = config_digest(OverlayConfig(), TIMING)
    assert a == config_digest(OverlayConfig(), BitTiming())
    assert a != config_digest(OverlayConfig(symbol_rate=18e6), TIMING)
    assert len(a) == 16
    assert config_digest({"snr": float("inf")}) == config_digest({"snr": float("inf")})


def test_sweep_csv_append(tmp_path):
    r = SweepResult("flat", 20.0, 19.2, 0, 0, 10, 40, 1, 5, "d")
    path = tmp_path / "s.csv"
    write_sweep_csv(path, [r], "d")
    write_sweep_csv(path, [r], "d", append=True)
    lines = path.read_text().splitlines()
    assert lines[0] == "# config_digest: d"
    assert lines[1] == ",".join(SWEEP_COLUMNS)
    assert lines[2] == lines[3]
    assert len(lines) == 4
