"""Sensor description, synthetic/loaded input signals and ADC-buffer batch acquisition."""

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, PositiveInt

from app.core.config import config
from app.core.errors import DomainError, FormatError, RangeError
from app.core.logger import logger

SignalKind = Literal["sine", "sine_plus_noise", "ecg_like", "constant"]
SignalFormat = Literal["csv", "raw_le"]


class SignalSpec(BaseModel):
    """One sensor stream: rate, sample width and channel count."""

    model_config = ConfigDict(frozen=True)

    name: str
    sample_rate: PositiveInt
    bits_per_sample: Literal[16, 24, 32]
    channels: PositiveInt

    @property
    def bytes_per_sample(self) -> int:
        return math.ceil(self.bits_per_sample / 8)

    @property
    def container_bytes(self) -> int:
        # 24-bit samples live in 32-bit containers
        return 2 if self.bits_per_sample == 16 else 4

    @property
    def dtype(self) -> np.dtype:
        return np.dtype(np.int16) if self.bits_per_sample == 16 else np.dtype(np.int32)

    @property
    def max_code(self) -> int:
        return 2 ** (self.bits_per_sample - 1) - 1

    @property
    def min_code(self) -> int:
        return -(2 ** (self.bits_per_sample - 1))

    @property
    def bandwidth(self) -> int:
        return self.sample_rate * self.bytes_per_sample * self.channels

    def samples_for(self, window_seconds: float) -> int:
        n = self.sample_rate * window_seconds
        if window_seconds <= 0 or abs(n - round(n)) > 1e-6:
            raise DomainError(
                f"{self.name}: {window_seconds} s at {self.sample_rate} Hz is not a whole number of samples"
            )
        return int(round(n))


@dataclass(frozen=True)
class SampleBuffer:
    spec: SignalSpec
    data: np.ndarray
    window_seconds: float

    def __post_init__(self):
        data = np.array(self.data, copy=True)
        if data.ndim == 1 and self.spec.channels == 1:
            data = data.reshape(1, -1)
        if data.ndim != 2 or data.shape[0] != self.spec.channels:
            raise DomainError(
                f"{self.spec.name}: expected {self.spec.channels} channels, got array of shape {data.shape}"
            )
        expected = self.spec.samples_for(self.window_seconds)
        if data.shape[1] != expected:
            raise DomainError(f"{self.spec.name}: expected {expected} samples per channel, got {data.shape[1]}")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def window_samples(self) -> int:
        return self.data.shape[1]

    @property
    def is_integer(self) -> bool:
        return np.issubdtype(self.data.dtype, np.integer)

    def as_float(self) -> np.ndarray:
        return self.data.astype(np.float64)

    def slice_seconds(self, start_s: float, length_s: float) -> "SampleBuffer":
        start = int(round(start_s * self.spec.sample_rate))
        count = self.spec.samples_for(length_s)
        return SampleBuffer(self.spec, self.data[:, start:start + count], length_s)

    def equals(self, other: "SampleBuffer") -> bool:
        return (
            self.spec == other.spec
            and abs(self.window_seconds - other.window_seconds) < 1e-12
            and self.data.dtype.kind == other.data.dtype.kind
            and np.array_equal(self.data, other.data)
        )


class AcquisitionSchedule(BaseModel):
    """Batches in which one window of samples reaches the MCU through the ADC buffer."""

    model_config = ConfigDict(frozen=True)

    buffer_bytes: PositiveInt
    batch_period: float
    batches_per_window: PositiveInt
    window_seconds: float
    window_bytes: int
    bandwidth: int

    def fill_instants(self) -> List[Tuple[float, int]]:
        """(time, bytes) of each buffer-full transfer; the last batch may be partial."""
        instants = []
        for k in range(1, self.batches_per_window):
            instants.append((k * self.batch_period, self.buffer_bytes))
        last = self.window_bytes - (self.batches_per_window - 1) * self.buffer_bytes
        instants.append((self.window_seconds, last))
        return instants


def input_bandwidth(specs: Sequence[SignalSpec]) -> int:
    """Sensor data rate in B/s: sum of rate x sample bytes x channels."""
    if not specs:
        raise DomainError("input_bandwidth needs at least one signal spec")
    return sum(spec.bandwidth for spec in specs)


def schedule_acquisition(specs: Sequence[SignalSpec], window_seconds: float,
                         buffer_bytes: Optional[int] = None) -> AcquisitionSchedule:
    buffer_bytes = buffer_bytes or config.ADC_BUFFER_BYTES
    if window_seconds <= 0:
        raise DomainError("window_seconds must be positive")
    bandwidth = input_bandwidth(specs)
    if bandwidth <= 0:
        raise DomainError("acquisition needs a positive input bandwidth")

    raw_bytes = bandwidth * window_seconds
    window_bytes = int(round(raw_bytes)) if abs(raw_bytes - round(raw_bytes)) < 1e-6 else math.ceil(raw_bytes)

    if window_bytes <= buffer_bytes:
        period, batches = float(window_seconds), 1
    else:
        period = buffer_bytes / bandwidth
        batches = -(-window_bytes // buffer_bytes)
    return AcquisitionSchedule(
        buffer_bytes=buffer_bytes,
        batch_period=period,
        batches_per_window=batches,
        window_seconds=float(window_seconds),
        window_bytes=window_bytes,
        bandwidth=bandwidth,
    )


def _gaussian_train(t: np.ndarray, centers: np.ndarray, width: float) -> np.ndarray:
    if centers.size == 0:
        return np.zeros_like(t)
    d = t[None, :] - centers[:, None]
    return np.exp(-0.5 * (d / width) ** 2).sum(axis=0)


def _ecg_wave(t: np.ndarray, params: Dict[str, Any]) -> np.ndarray:
    rate = float(params.get("heart_rate_bpm", 60.0))
    if rate <= 0:
        raise DomainError("heart_rate_bpm must be positive")
    rr = 60.0 / rate
    first = float(params.get("first_beat_s", rr / 2))
    qrs = float(params.get("qrs_width_s", 0.01))
    beats = np.arange(first, t[-1] + rr if t.size else first, rr) if t.size else np.zeros(0)
    # (offset s, relative amplitude, width s) of the P, Q, R, S, T waves
    waves = (
        (-0.20, 0.15, 0.025),
        (-0.03, -0.10, qrs * 0.8),
        (0.00, 1.00, qrs),
        (0.03, -0.15, qrs * 0.8),
        (0.30, 0.30, 0.04),
    )
    out = np.zeros_like(t)
    for offset, amp, width in waves:
        out += amp * _gaussian_train(t, beats + offset, width)
    return out


def generate_synthetic(spec: SignalSpec, kind: SignalKind, params: Optional[Dict[str, Any]] = None,
                       seed: int = 0, window_seconds: float = 1.0, integer: bool = True) -> SampleBuffer:
    """Deterministic synthetic input; integer kinds produce ADC codes of the signal's bit width."""
    params = dict(params or {})
    for key, value in params.items():
        if isinstance(value, (int, float)) and not math.isfinite(value):
            raise DomainError(f"parameter {key} is not finite")
    n = spec.samples_for(window_seconds)
    t = np.arange(n) / spec.sample_rate
    rng = np.random.default_rng(seed)
    amplitude = float(params.get("amplitude", 1000.0))
    offset = float(params.get("offset", 0.0))
    gains = params.get("channel_gains") or [1.0]
    phase_step = float(params.get("channel_phase_step", 0.0))

    rows = []
    for ch in range(spec.channels):
        gain = float(gains[ch % len(gains)])
        if kind == "constant":
            row = np.full(n, float(params.get("value", 0.0)))
        elif kind in ("sine", "sine_plus_noise"):
            freq = float(params.get("frequency", 10.0))
            phase = float(params.get("phase", 0.0)) + ch * phase_step
            row = offset + gain * amplitude * np.sin(2 * np.pi * freq * t + phase)
            if kind == "sine_plus_noise":
                row = row + rng.normal(0.0, float(params.get("noise_std", 0.1 * amplitude)), n)
        elif kind == "ecg_like":
            row = offset + gain * amplitude * _ecg_wave(t, params)
            wander = float(params.get("baseline_amplitude", 0.0))
            if wander:
                row = row + wander * np.sin(2 * np.pi * 0.3 * t)
            noise = float(params.get("noise_std", 0.0))
            if noise:
                row = row + rng.normal(0.0, noise, n)
        else:
            raise DomainError(f"unknown signal kind: {kind}")
        rows.append(row)
    data = np.vstack(rows) if rows else np.zeros((spec.channels, n))

    if integer:
        data = np.rint(data)
        if data.size and (data.max() > spec.max_code or data.min() < spec.min_code):
            raise RangeError(
                f"{spec.name}: values span [{data.min():.0f}, {data.max():.0f}], "
                f"outside the {spec.bits_per_sample}-bit range"
            )
        data = data.astype(spec.dtype)
    return SampleBuffer(spec, data, window_seconds)


def _format_cell(value) -> str:
    if isinstance(value, (np.integer, int)):
        return str(int(value))
    return repr(float(value))


def store_signal(buffer: SampleBuffer, path: Union[str, Path], fmt: SignalFormat = "csv") -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rate = buffer.spec.sample_rate
    if fmt == "csv":
        with open(path, "w", encoding="utf-8", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(["t"] + [f"ch{c}" for c in range(buffer.spec.channels)])
            for i in range(buffer.window_samples):
                writer.writerow([repr(i / rate)] + [_format_cell(v) for v in buffer.data[:, i]])
    elif fmt == "raw_le":
        if not buffer.is_integer:
            raise FormatError("raw_le stores integer ADC codes only")
        dtype = "<i2" if buffer.spec.container_bytes == 2 else "<i4"
        path.write_bytes(buffer.data.T.astype(dtype).tobytes())
    else:
        raise FormatError(f"unsupported signal format: {fmt}")
    return path


def _check_window(spec: SignalSpec, n: int, window_seconds: Optional[float], path: Path) -> float:
    if n == 0:
        raise FormatError(f"{path}: no samples")
    if window_seconds is not None:
        expected = spec.samples_for(window_seconds)
        if n != expected:
            raise FormatError(f"{path}: {n} samples per channel, spec expects {expected}")
        return float(window_seconds)
    return n / spec.sample_rate


def load_signal(path: Union[str, Path], fmt: SignalFormat, spec: SignalSpec,
                window_seconds: Optional[float] = None) -> SampleBuffer:
    """Read a stored buffer and check it against the declared spec."""
    path = Path(path)
    if not path.exists():
        raise FormatError(f"{path}: file not found")

    if fmt == "csv":
        with open(path, "r", encoding="utf-8", newline="") as f:
            rows = list(csv.reader(f))
        if not rows or not rows[0] or rows[0][0] != "t":
            raise FormatError(f"{path}: missing 't,ch0,...' header")
        n_cols = len(rows[0]) - 1
        if n_cols != spec.channels:
            raise FormatError(f"{path}: {n_cols} channel columns, spec {spec.name} has {spec.channels}")
        body = [r for r in rows[1:] if r]
        for lineno, r in enumerate(body, start=2):
            if len(r) != n_cols + 1:
                raise FormatError(f"{path}: line {lineno} has {len(r)} cells, expected {n_cols + 1}")
        cells = [r[1:] for r in body]
        try:
            data = np.array([[int(v) for v in r] for r in cells], dtype=spec.dtype).T
        except ValueError:
            try:
                data = np.array([[float(v) for v in r] for r in cells], dtype=np.float64).T
            except ValueError as e:
                raise FormatError(f"{path}: non-numeric cell ({e})") from e
        window = _check_window(spec, len(body), window_seconds, path)
        return SampleBuffer(spec, data.reshape(spec.channels, -1), window)

    if fmt == "raw_le":
        raw = path.read_bytes()
        frame = spec.container_bytes * spec.channels
        if len(raw) % frame:
            raise FormatError(f"{path}: {len(raw)} bytes is not a whole number of {frame}-byte frames (truncated)")
        dtype = "<i2" if spec.container_bytes == 2 else "<i4"
        flat = np.frombuffer(raw, dtype=dtype).astype(spec.dtype)
        n = flat.size // spec.channels
        window = _check_window(spec, n, window_seconds, path)
        return SampleBuffer(spec, flat.reshape(n, spec.channels).T, window)

    raise FormatError(f"unsupported signal format: {fmt}")


def load_window_dir(specs: Sequence[SignalSpec], directory: Union[str, Path],
                    window_seconds: Optional[float] = None) -> List[SampleBuffer]:
    """Load ``<signal>.csv`` (or ``<signal>.raw``) for every spec from a fixture directory."""
    directory = Path(directory)
    buffers = []
    for spec in specs:
        csv_path, raw_path = directory / f"{spec.name}.csv", directory / f"{spec.name}.raw"
        if csv_path.exists():
            buffers.append(load_signal(csv_path, "csv", spec, window_seconds))
        elif raw_path.exists():
            buffers.append(load_signal(raw_path, "raw_le", spec, window_seconds))
        else:
            raise FormatError(f"{directory}: no {spec.name}.csv or {spec.name}.raw")
        logger.debug(f"Loaded {spec.name} from {directory}")
    return buffers
