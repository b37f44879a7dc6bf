from pathlib import Path

import numpy as np
import pytest

from app.core.errors import DomainError, FormatError, RangeError
from app.core.sigio import (
    SampleBuffer,
    SignalSpec,
    generate_synthetic,
    input_bandwidth,
    load_signal,
    load_window_dir,
    schedule_acquisition,
    store_signal,
)
from app.services.pipelines import DEFAULT_CONFIGS, AppConfig

ROOT = Path(__file__).resolve().parent.parent

EXPECTED_BANDWIDTH = {
    "HCL": 1536,
    "SeizDetSVM": 128,
    "SeizDetCNN": 11776,
    "CWM": 4096,
    "GCL": 192000,
    "CoughDet": 65200,
    "ECL": 822,
}


def spec(name="x", rate=100, bits=16, channels=1):
    return SignalSpec(name=name, sample_rate=rate, bits_per_sample=bits, channels=channels)


@pytest.mark.parametrize("app", sorted(EXPECTED_BANDWIDTH))
def test_input_bandwidth_per_app(app):
    cfg = AppConfig.model_validate(DEFAULT_CONFIGS[app])
    assert input_bandwidth(cfg.signals) == EXPECTED_BANDWIDTH[app]


def test_sample_widths():
    s = spec(bits=24, channels=16, rate=4000)
    assert s.bytes_per_sample == 3
    assert s.container_bytes == 4
    assert s.bandwidth == 192000
    with pytest.raises(DomainError):
        input_bandwidth([])


def test_samples_for_whole_windows_only():
    assert spec(rate=16000).samples_for(0.3) == 4800
    with pytest.raises(DomainError):
        spec(rate=5).samples_for(0.3)


def test_schedule_full_batches():
    schedule = schedule_acquisition([spec("ecg", 256, 16, 3)], 15.0, buffer_bytes=768)
    assert schedule.window_bytes == 23040
    assert schedule.batches_per_window == 30
    assert schedule.batch_period == pytest.approx(0.5)
    fills = schedule.fill_instants()
    assert len(fills) == 30
    assert fills[-1] == (15.0, 768)


def test_schedule_partial_last_batch():
    schedule = schedule_acquisition([spec()], 3.0, buffer_bytes=256)
    assert schedule.batches_per_window == 3
    assert schedule.fill_instants()[-1] == (3.0, 88)


def test_schedule_window_smaller_than_buffer():
    schedule = schedule_acquisition([spec()], 1.0, buffer_bytes=768)
    assert schedule.batches_per_window == 1
    assert schedule.fill_instants() == [(1.0, 200)]


def test_synthetic_is_deterministic():
    s = spec()
    params = {"amplitude": 1000.0, "frequency": 5.0, "noise_std": 50.0}
    a = generate_synthetic(s, "sine_plus_noise", params, seed=3, window_seconds=2.0)
    b = generate_synthetic(s, "sine_plus_noise", params, seed=3, window_seconds=2.0)
    c = generate_synthetic(s, "sine_plus_noise", params, seed=4, window_seconds=2.0)
    assert a.equals(b)
    assert not a.equals(c)
    assert a.data.dtype == np.int16


def test_synthetic_constant_and_range():
    buf = generate_synthetic(spec(), "constant", {"value": 5}, window_seconds=1.0)
    assert np.all(buf.data == 5)
    with pytest.raises(RangeError):
        generate_synthetic(spec(), "sine", {"amplitude": 40000.0}, window_seconds=1.0)
    with pytest.raises(DomainError):
        generate_synthetic(spec(), "square", window_seconds=1.0)


def test_buffer_shape_checks():
    with pytest.raises(DomainError):
        SampleBuffer(spec(channels=2), np.zeros((1, 100), dtype=np.int16), 1.0)
    with pytest.raises(DomainError):
        SampleBuffer(spec(), np.zeros(99, dtype=np.int16), 1.0)
    buf = SampleBuffer(spec(), np.arange(300, dtype=np.int16), 3.0)
    part = buf.slice_seconds(1.0, 1.0)
    assert part.data[0, 0] == 100
    assert part.window_samples == 100


def test_store_and_load(tmp_path):
    s = spec(channels=2)
    buf = generate_synthetic(s, "sine", {"amplitude": 1000.0, "frequency": 2.0}, window_seconds=1.0)
    for fmt, name in (("csv", "x.csv"), ("raw_le", "x.raw")):
        path = store_signal(buf, tmp_path / name, fmt)
        assert load_signal(path, fmt, s, 1.0).equals(buf)


def test_load_rejects_mismatches(tmp_path):
    s = spec(channels=2)
    buf = generate_synthetic(s, "constant", {"value": 1}, window_seconds=1.0)
    path = store_signal(buf, tmp_path / "x.csv")
    with pytest.raises(FormatError):
        load_signal(path, "csv", spec(channels=3))
    with pytest.raises(FormatError):
        load_signal(path, "csv", s, window_seconds=2.0)

    truncated = tmp_path / "x.raw"
    truncated.write_bytes(b"\x01\x02\x03")
    with pytest.raises(FormatError):
        load_signal(truncated, "raw_le", spec())
    with pytest.raises(FormatError):
        load_signal(tmp_path / "missing.csv", "csv", spec())


def test_load_window_dir_fixture():
    cfg = AppConfig.model_validate(DEFAULT_CONFIGS["HCL"])
    buffers = load_window_dir(cfg.signals, ROOT / "fixtures" / "hcl", cfg.window_seconds)
    assert len(buffers) == 1
    assert buffers[0].data.shape == (3, 3840)
    with pytest.raises(FormatError):
        load_window_dir([spec("ppg")], ROOT / "fixtures" / "hcl")
