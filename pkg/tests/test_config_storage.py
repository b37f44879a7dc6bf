import json
from pathlib import Path

import pytest

import biobench
from app.core.config import config, parse_log_max_size, reload_config
from app.core.errors import BenchError, ConfigError, DataError, FormatError, RangeError, RealTimeViolation
from app.core.storage import GoldenStore, JSONStorage, canonical_json, stable_hash, write_csv
from biobench import api


@pytest.fixture
def restore_config():
    saved = dict(config.__dict__)
    yield config
    config.__dict__.clear()
    config.__dict__.update(saved)


def test_canonical_json_is_order_free():
    assert canonical_json({"b": 1, "a": [1, 2]}) == '{"a":[1,2],"b":1}'
    assert stable_hash({"b": 1, "a": 2}) == stable_hash({"a": 2, "b": 1})
    assert stable_hash({"a": 1}) != stable_hash({"a": 1.5})


@pytest.mark.parametrize("file_format", ["json", "jsonl", "csv"])
def test_export_formats(tmp_path, file_format):
    rows = [{"app": "HCL", "total": 1.5}, {"app": "ECL", "total": 2.0}]
    path = JSONStorage().export(rows, tmp_path / "rows.txt", file_format)
    assert path.suffix == "." + file_format
    text = path.read_text(encoding="utf-8")
    if file_format == "json":
        assert json.loads(text) == rows
    elif file_format == "jsonl":
        assert [json.loads(line) for line in text.splitlines()] == rows
    else:
        assert text.splitlines() == ["app,total", "HCL,1.5", "ECL,2.0"]


def test_export_rejects_unknown_format(tmp_path):
    with pytest.raises(FormatError):
        JSONStorage().export([], tmp_path / "rows", "xml")


def test_load_malformed_json(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{", encoding="utf-8")
    with pytest.raises(FormatError):
        JSONStorage().load(path)


def test_write_csv_blanks_missing_values(tmp_path):
    path = write_csv([{"a": 1, "b": None}, {"a": 2, "c": "x"}], tmp_path / "nested" / "t.csv")
    assert path.read_text(encoding="utf-8").splitlines() == ["a,b,c", "1,,", "2,,x"]


def test_golden_store(tmp_path):
    store = GoldenStore(tmp_path)
    assert store.check_or_record("HCL", "run", [{"label": "normal", "score": 0.1}])
    assert store.path_for("HCL", "run") == tmp_path / "hcl" / "run.json"
    assert store.check_or_record("HCL", "run", [{"label": "normal", "score": 0.1}])
    assert not store.check_or_record("HCL", "run", [{"label": "abnormal", "score": 0.1}])


@pytest.mark.parametrize(
    "value, expected",
    [(None, "10 MB"), ("10MB", "10 MB"), ("5 KB", "5 KB"), (10485760, "10 MB"), ("2097152", "2 MB"),
     ("lots", "10 MB")],
)
def test_parse_log_max_size(value, expected):
    assert parse_log_max_size(value) == expected


def test_environment_overrides(monkeypatch, restore_config, tmp_path):
    monkeypatch.setenv("BIOBENCH_CLOCK_HZ", "80e6")
    monkeypatch.setenv("BIOBENCH_DATA", str(tmp_path))
    monkeypatch.setenv("BIOBENCH_ENERGY_TABLE", "energy.csv")
    reloaded = reload_config()
    assert reloaded is config
    assert config.REFERENCE_CLOCK_HZ == 80e6
    assert config.energy_table_path == tmp_path / "energy.csv"


def test_api_overrides(restore_config, tmp_path):
    api._apply_overrides(clock_hz=60e6, adc_buffer_bytes=512, data_dir=tmp_path, jobs=2)
    assert config.REFERENCE_CLOCK_HZ == 60e6
    assert config.ADC_BUFFER_BYTES == 512
    assert config.DATA_DIR == Path(tmp_path)
    assert config.MAX_JOBS == 2
    with pytest.raises(DataError):
        api.compare(["HCL"])


def test_api_run_with_clock(restore_config):
    report = biobench.run("SeizDetSVM", clock_hz=60e6)
    assert report.metrics.clock_hz == 60e6
    assert report.metrics.duty_ratio == pytest.approx(2.3e6 / 60e6 / 60.0)


def test_error_exit_codes():
    assert BenchError.exit_code == 3
    assert ConfigError.exit_code == 2
    assert issubclass(RangeError, ValueError)
    assert RealTimeViolation.exit_code == 3
    assert str(DataError("bad value", row=4, context="HCL")) == "[row 4, HCL] bad value"
    assert str(DataError("bad value")) == "bad value"
