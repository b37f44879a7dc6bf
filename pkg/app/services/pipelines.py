"""The eight benchmark applications assembled from the kernels.

Each application is a ``Pipeline`` built from an ``AppConfig``. Pipelines
count the work of every window into the ``KernelContext`` they are handed,
grouped by stage, and account their working buffers in its memory ledger.
"""

from pathlib import Path
from typing import Any, ClassVar, Dict, List, Literal, Optional, Sequence, Tuple, Type, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from app.core.config import config
from app.core.dsp import (
    band_powers,
    butter_bandpass,
    delineate,
    detect_r_peaks,
    fft,
    hrv_features,
    iir_biquad_cascade,
    lomb_scargle,
    lorenz_features,
    lpc,
    mfcc,
    morph_filter,
    moving_average_subtract,
    odd_window,
    power_spectral_density,
    psd_from_spectrum,
    relative_energy,
    spectral_entropy,
    spectral_stats,
    stat_features,
)
from app.core.errors import ConfigError, DomainError, NumericError
from app.core.infer import (
    Cnn1dModel,
    ForestModel,
    KnnTrainingSet,
    SvmModel,
    calibrate_q15,
    cnn_forward,
    fastica_unmix,
    forest_predict,
    knn_fear_predict,
    mlp_forward,
    rp_classify,
    svm_predict,
)
from app.core.instrument import KernelContext
from app.core.logger import logger
from app.core.models import (
    default_cnn,
    default_forest,
    default_knn,
    default_mlp,
    default_svm,
    load_model,
)
from app.core.reference import APP_IDS, resolve_app
from app.core.sigio import (
    AcquisitionSchedule,
    SampleBuffer,
    SignalSpec,
    generate_synthetic,
    input_bandwidth,
    schedule_acquisition,
)
from app.core.storage import stable_hash, storage
from app.core.train import SampleBatch, bpfree_train_epoch

AppId = Literal["HCL", "SeizDetSVM", "SeizDetCNN", "CWM", "GCL", "CoughDet", "ECL", "BPfree"]

# Code-size allowance charged per pipeline stage in the static footprint
STAGE_CODE_BYTES = 8 * 1024

# Stored forest node: int16 feature, float32 threshold, two int16 children, float32 leaf value
TREE_NODE_BYTES = 2 + 4 + 2 + 2 + 4

PipelineInput = Union[SampleBuffer, Sequence[SampleBuffer], SampleBatch, None]


class AppConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    app_id: AppId
    signals: Tuple[SignalSpec, ...] = ()
    window_seconds: Optional[float] = None
    batch_seconds: Optional[float] = None
    arithmetic: Literal["fp32", "fxp16", "fxp32"] = "fp32"
    params: Dict[str, Any] = Field(default_factory=dict)
    model_path: Optional[str] = None
    seed: int = 0

    @model_validator(mode="after")
    def _check(self):
        if self.signals:
            if self.window_seconds is None or self.window_seconds <= 0:
                raise ValueError("apps with signals need a positive window_seconds")
            names = [s.name for s in self.signals]
            if len(set(names)) != len(names):
                raise ValueError(f"duplicate signal names: {names}")
            for spec in self.signals:
                spec.samples_for(self.window_seconds)
        if self.batch_seconds is not None:
            if self.window_seconds is None or self.batch_seconds <= 0:
                raise ValueError("batch_seconds needs a window")
            batches = self.window_seconds / self.batch_seconds
            if abs(batches - round(batches)) > 1e-9:
                raise ValueError(f"window {self.window_seconds} s is not a whole number of "
                                 f"{self.batch_seconds} s batches")
        return self

    @property
    def batches(self) -> int:
        if self.batch_seconds is None or self.window_seconds is None:
            return 1
        return int(round(self.window_seconds / self.batch_seconds))

    def config_hash(self) -> str:
        return stable_hash(self.model_dump(mode="json"))


def _spec(name: str, rate: int, bits: int, channels: int) -> SignalSpec:
    return SignalSpec(name=name, sample_rate=rate, bits_per_sample=bits, channels=channels)


DEFAULT_CONFIGS: Dict[str, Dict[str, Any]] = {
    "HCL": {
        "app_id": "HCL",
        "signals": [_spec("ecg", 256, 16, 3)],
        "window_seconds": 15.0,
        "arithmetic": "fxp16",
        "params": {
            "baseline_ms": 200.0,
            "relen_short_ms": 25.0,
            "relen_long_ms": 95.0,
            "refractory_ms": 200.0,
            "theta": 2.0,
            "min_relative_amplitude": 0.5,
            "isqrt_iterations": 8,
        },
    },
    "SeizDetSVM": {
        "app_id": "SeizDetSVM",
        "signals": [_spec("ecg", 64, 16, 1)],
        "window_seconds": 60.0,
        "arithmetic": "fxp32",
        "params": {
            "ma_window_s": 1.0,
            "min_relative_amplitude": 0.5,
            "lomb_bins": 256,
            "lomb_band": [0.04, 0.4],
            "lf_hf_split": 0.15,
            "lpc_order": 8,
            "n_support": 24,
        },
    },
    "SeizDetCNN": {
        "app_id": "SeizDetCNN",
        "signals": [_spec("eeg", 256, 16, 23)],
        "window_seconds": 4.0,
        "arithmetic": "fxp16",
        "params": {
            "cnn_arithmetic": "q15",
            "channels": [23, 16, 16, 16],
            "kernel": 5,
            "pools": [4, 4, 4],
            "hidden": 128,
        },
    },
    "CWM": {
        "app_id": "CWM",
        "signals": [_spec("eeg", 256, 32, 4)],
        "window_seconds": 56.0,
        "batch_seconds": 4.0,
        "arithmetic": "fxp32",
        "params": {
            "ma_window_s": 1.0,
            "band": [0.5, 40.0],
            "filter_order": 4,
            "fft_arithmetic": "q31",
            "bands": [[0.5, 4.0], [4.0, 8.0], [8.0, 13.0], [13.0, 30.0], [30.0, 40.0]],
            "n_trees": 10,
            "tree_depth": 4,
        },
    },
    "GCL": {
        "app_id": "GCL",
        "signals": [_spec("semg", 4000, 24, 16)],
        "window_seconds": 0.2,
        "arithmetic": "fp32",
        "params": {"n_components": 8, "max_iter": 200, "tol": 1e-4, "hidden": 64, "n_classes": 8},
    },
    "CoughDet": {
        "app_id": "CoughDet",
        "signals": [_spec("audio", 16000, 32, 1), _spec("imu", 100, 16, 6)],
        "window_seconds": 0.3,
        "arithmetic": "fp32",
        "params": {"frame": 512, "hop": 256, "n_mels": 32, "n_coeffs": 13, "n_trees": 10, "tree_depth": 4},
    },
    "ECL": {
        "app_id": "ECL",
        "signals": [_spec("ppg", 200, 32, 1), _spec("gsr", 5, 32, 1), _spec("st", 1, 16, 1)],
        "window_seconds": 10.0,
        "batch_seconds": 1.0,
        "arithmetic": "fp32",
        "params": {"n_points": 685},
    },
    "BPfree": {
        "app_id": "BPfree",
        "arithmetic": "fp32",
        "params": {
            "labels": [0, 1, 0, 1],
            "eta": 1e-3,
            "margin": 1.0,
            "channels": [23, 16, 16, 16],
            "kernel": 5,
            "pools": [4, 4, 4],
            "length": 1024,
            "hidden": 128,
        },
    },
}


def default_app_config(app_id: str) -> AppConfig:
    app = resolve_app(app_id)
    if app is None:
        raise ConfigError(f"unknown app: {app_id!r} (known: {', '.join(APP_IDS)})")
    return AppConfig.model_validate(DEFAULT_CONFIGS[app])


def load_app_config(source: Union[str, Path, None] = None, app_id: Optional[str] = None) -> AppConfig:
    """Config from a JSON file, or the shipped ``configs/<app>.json``, or the built-in default.

    Any invalid content surfaces as ConfigError.
    """
    if source is not None:
        path = Path(source)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
    else:
        app = resolve_app(app_id or "")
        if app is None:
            raise ConfigError(f"unknown app: {app_id!r} (known: {', '.join(APP_IDS)})")
        path = config.CONFIG_DIR / f"{app.lower()}.json"
        if not path.exists():
            logger.debug(f"{path} not found, using the built-in {app} defaults")
            return default_app_config(app)
    try:
        doc = storage.load(path)
        cfg = AppConfig.model_validate(doc)
    except (ValidationError, ValueError) as e:
        raise ConfigError(f"invalid app config {path}: {e}") from e
    if app_id is not None and resolve_app(app_id) != cfg.app_id:
        raise ConfigError(f"{path} configures {cfg.app_id}, not {app_id}")
    return cfg


class WindowResult(BaseModel):
    app: str
    label: str
    scores: Dict[str, float] = Field(default_factory=dict)
    details: Dict[str, Any] = Field(default_factory=dict)


def _codes_to_unit(buffer: SampleBuffer) -> np.ndarray:
    """ADC codes scaled to [-1, 1)."""
    return buffer.as_float() / float(2 ** (buffer.spec.bits_per_sample - 1))


class Pipeline:
    """One benchmark application; subclasses implement ``_process`` and ``synthesize_input``."""

    app_id: ClassVar[str]
    stages: ClassVar[Tuple[str, ...]]

    def __init__(self, cfg: AppConfig, model: Any = None):
        if cfg.app_id != self.app_id:
            raise ConfigError(f"{type(self).__name__} cannot run a {cfg.app_id} config")
        self.config = cfg
        self.params = cfg.params
        self.model = model if model is not None else self._load_model()

    # ------------------------------------------------------------ model
    def _load_model(self) -> Any:
        if self.config.model_path:
            return load_model(self.config.model_path, expected_type=self.model_type)
        return self.default_model()

    model_type: ClassVar[Optional[str]] = None

    def default_model(self) -> Any:
        return None

    def parameter_bytes(self) -> int:
        return 0

    def lookup_table_bytes(self) -> int:
        return 0

    # ------------------------------------------------------------ acquisition
    @property
    def specs(self) -> Tuple[SignalSpec, ...]:
        return self.config.signals

    def input_bandwidth(self) -> Optional[int]:
        return input_bandwidth(self.specs) if self.specs else None

    def schedule(self, buffer_bytes: Optional[int] = None) -> Optional[AcquisitionSchedule]:
        if not self.specs:
            return None
        return schedule_acquisition(self.specs, self.config.window_seconds, buffer_bytes)

    def new_context(self) -> KernelContext:
        return KernelContext(arithmetic=self.config.arithmetic)

    def static_items(self) -> Dict[str, int]:
        return {
            "parameters": self.parameter_bytes(),
            "lookup_tables": self.lookup_table_bytes(),
            "code": STAGE_CODE_BYTES * len(self.stages),
        }

    # ------------------------------------------------------------ windows
    def synthesize_input(self, seed: int = 0) -> Any:
        raise NotImplementedError

    def _buffers(self, inputs: PipelineInput) -> Dict[str, SampleBuffer]:
        if isinstance(inputs, SampleBuffer):
            inputs = [inputs]
        if inputs is None:
            raise DomainError(f"{self.app_id} needs an input window")
        by_name = {b.spec.name: b for b in inputs}
        for spec in self.specs:
            buf = by_name.get(spec.name)
            if buf is None:
                raise DomainError(f"{self.app_id}: missing {spec.name} input")
            if buf.spec != spec:
                raise DomainError(f"{self.app_id}: {spec.name} input is {buf.spec}, expected {spec}")
            if abs(buf.window_seconds - self.config.window_seconds) > 1e-9:
                raise DomainError(f"{self.app_id}: {spec.name} covers {buf.window_seconds} s, "
                                  f"window is {self.config.window_seconds} s")
        return by_name

    def process_window(self, inputs: PipelineInput, ctx: Optional[KernelContext] = None) -> WindowResult:
        ctx = ctx if ctx is not None else self.new_context()
        ctx.ledger.static_items.update(self.static_items())
        return self._process(self._buffers(inputs), ctx)

    def _process(self, buffers: Dict[str, SampleBuffer], ctx: KernelContext) -> WindowResult:
        raise NotImplementedError


# ================================================================ HCL

class HclPipeline(Pipeline):
    """Heartbeat classifier: morphological filtering, RelEn R-peak detection, delineation, fuzzy beats."""

    app_id = "HCL"
    stages = ("morph_filter", "rms_combine", "relative_energy", "r_peak_detection", "delineation",
              "classification")

    def synthesize_input(self, seed: int = 0) -> List[SampleBuffer]:
        spec = self.specs[0]
        params = {"heart_rate_bpm": 60.0, "amplitude": 1000.0, "channel_gains": [1.0, 0.8, 0.6],
                  "baseline_amplitude": 200.0, "noise_std": 5.0}
        return [generate_synthetic(spec, "ecg_like", params, seed=seed, window_seconds=self.config.window_seconds)]

    def lookup_table_bytes(self) -> int:
        # three fuzzy rules of four trapezoid corners
        return 3 * 4 * 2

    def _process(self, buffers, ctx):
        p = self.params
        ecg = buffers["ecg"]
        fs = ecg.spec.sample_rate
        n = ecg.window_samples
        eb = ctx.element_bytes
        ledger = ctx.ledger

        with ledger.buffer("ecg_window", ecg.data.size * ecg.spec.container_bytes):
            with ctx.stage("morph_filter"), ledger.buffer("morph_scratch", 2 * n * eb):
                k = odd_window(p["baseline_ms"], fs)
                corrected = np.vstack([morph_filter(lead, k, "baseline_correct", ctx) for lead in ecg.data])

            with ctx.stage("rms_combine"):
                ledger.alloc("combined", n * eb)
                combined = np.sqrt(np.mean(corrected ** 2, axis=0))
                ctx.mul(corrected.size)
                # integer square root: one compare per result bit
                ctx.branch(int(p["isqrt_iterations"]) * n)
                ctx.mem(corrected.size + n)

            with ctx.stage("relative_energy"), ledger.buffer("relen", n * eb):
                relen = relative_energy(combined, odd_window(p["relen_short_ms"], fs),
                                        odd_window(p["relen_long_ms"], fs), ctx)
                enhanced = relen * combined ** 2
                ctx.mul(2 * n)

                with ctx.stage("r_peak_detection"):
                    peaks = detect_r_peaks(enhanced, fs, refractory_ms=p["refractory_ms"], theta=p["theta"],
                                           signal=combined, min_relative_amplitude=p["min_relative_amplitude"],
                                           ctx=ctx)

            with ctx.stage("delineation"):
                beats = delineate(combined, peaks, fs, ctx=ctx)

            with ctx.stage("classification"):
                decisions = [rp_classify(b, ctx=ctx) for b in beats if b.rr_samples]
            ledger.free("combined")

        abnormal = sum(1 for d in decisions if d.label != "normal")
        rr = np.diff(peaks) / fs if len(peaks) > 1 else np.zeros(0)
        heart_rate = float(60.0 / rr.mean()) if rr.size else 0.0
        return WindowResult(
            app=self.app_id,
            label="abnormal" if abnormal else "normal",
            scores={"heart_rate_bpm": heart_rate, "abnormal_fraction": abnormal / len(decisions) if decisions else 0.0},
            details={"beats": int(len(peaks)), "abnormal_beats": abnormal, "r_peaks": [int(i) for i in peaks]},
        )


# ================================================================ SeizDetSVM

SVM_FEATURES = (
    "mean_rr", "sdnn", "rmssd", "pnn50", "sd1", "sd2", "sd_ratio",
    "rr_lf", "rr_hf", "rr_lf_hf", "edr_lf", "edr_hf",
)


class SeizDetSvmPipeline(Pipeline):
    """Seizure detection from one ECG lead: RR/EDR series, HRV, Lorenz, LPC and Lomb periodograms, SVM."""

    app_id = "SeizDetSVM"
    stages = ("ma_subtract", "r_peak_detection", "rri_edr", "hrv_lorenz", "lpc", "lomb_scargle", "svm")
    model_type = "svm"

    @property
    def n_features(self) -> int:
        return len(SVM_FEATURES) + int(self.params["lpc_order"])

    def default_model(self) -> SvmModel:
        return default_svm(self.n_features, seed=self.config.seed, n_support=int(self.params["n_support"]))

    def parameter_bytes(self) -> int:
        m, d = self.model.support_vectors.shape
        return 4 * (m * d + m + 2 * d + 1)

    def lookup_table_bytes(self) -> int:
        return 4 * int(self.params["lomb_bins"])

    def synthesize_input(self, seed: int = 0) -> List[SampleBuffer]:
        spec = self.specs[0]
        window = self.config.window_seconds
        base = generate_synthetic(spec, "ecg_like", {"heart_rate_bpm": 72.0, "amplitude": 1000.0,
                                                     "qrs_width_s": 0.02, "noise_std": 5.0},
                                  seed=seed, window_seconds=window, integer=False)
        t = np.arange(base.window_samples) / spec.sample_rate
        # respiration modulates the R-wave amplitude
        data = np.rint(base.data * (1.0 + 0.1 * np.sin(2 * np.pi * 0.25 * t))).astype(spec.dtype)
        return [SampleBuffer(spec, data, window)]

    def _process(self, buffers, ctx):
        p = self.params
        ecg = buffers["ecg"]
        fs = ecg.spec.sample_rate
        n = ecg.window_samples
        eb = ctx.element_bytes
        ledger = ctx.ledger
        features: Dict[str, float] = {name: 0.0 for name in SVM_FEATURES}
        order = int(p["lpc_order"])
        lpc_coeffs = np.zeros(order)

        with ledger.buffer("ecg_window", n * eb):
            x = ecg.as_float()[0]
            with ctx.stage("ma_subtract"):
                y = moving_average_subtract(x, max(1, int(round(p["ma_window_s"] * fs))), ctx)

            with ctx.stage("r_peak_detection"), ledger.buffer("relen", n * eb):
                relen = relative_energy(y, odd_window(25.0, fs), odd_window(95.0, fs), ctx)
                enhanced = relen * y * y
                ctx.mul(2 * n)
                peaks = detect_r_peaks(enhanced, fs, signal=y, min_relative_amplitude=p["min_relative_amplitude"],
                                       ctx=ctx)

        with ctx.stage("rri_edr"), ledger.buffer("rr_edr", 3 * max(1, len(peaks)) * eb):
            rr = np.diff(peaks) / fs
            t_rr = peaks[1:] / fs
            edr = y[peaks[1:]] if len(peaks) > 1 else np.zeros(0)
            ctx.mul(2 * len(rr))
            ctx.mem(3 * len(rr))

            if len(rr) >= 3:
                with ctx.stage("hrv_lorenz"):
                    features.update(hrv_features(rr, ctx))
                    features.update(lorenz_features(rr, ctx))
                with ctx.stage("lpc"):
                    if len(edr) > order:
                        try:
                            lpc_coeffs = lpc(edr - edr.mean(), order, ctx).coefficients
                        except NumericError:
                            logger.debug("Constant EDR series, LPC coefficients left at 0")
                with ctx.stage("lomb_scargle"), ledger.buffer("periodogram", 2 * int(p["lomb_bins"]) * eb):
                    lo, hi = p["lomb_band"]
                    freqs = np.linspace(lo, hi, int(p["lomb_bins"]))
                    df = freqs[1] - freqs[0]
                    split = freqs < p["lf_hf_split"]
                    rr_power = lomb_scargle(t_rr, rr, freqs, ctx)
                    edr_power = lomb_scargle(t_rr, edr, freqs, ctx)
                    features["rr_lf"] = float(rr_power[split].sum() * df)
                    features["rr_hf"] = float(rr_power[~split].sum() * df)
                    features["rr_lf_hf"] = features["rr_lf"] / features["rr_hf"] if features["rr_hf"] > 0 else 0.0
                    features["edr_lf"] = float(edr_power[split].sum() * df)
                    features["edr_hf"] = float(edr_power[~split].sum() * df)
            else:
                logger.warning(f"{self.app_id}: {len(peaks)} beats detected, HRV features left at 0")

        with ctx.stage("svm"):
            vector = np.array([features[name] for name in SVM_FEATURES] + list(lpc_coeffs))
            decision = svm_predict(self.model, vector, ctx)
        return WindowResult(
            app=self.app_id,
            label="seizure" if decision.label > 0 else "no_seizure",
            scores={"svm_score": decision.score},
            details={"beats": int(len(peaks)), "features": {k: float(v) for k, v in features.items()}},
        )


# ================================================================ SeizDetCNN

class SeizDetCnnPipeline(Pipeline):
    """Seizure detection from 23 EEG channels with a quantized 1D CNN."""

    app_id = "SeizDetCNN"
    stages = ("normalize", "cnn")
    model_type = "cnn"

    def _architecture(self) -> Dict[str, Any]:
        p = self.params
        return {"channels": tuple(p["channels"]), "kernel": int(p["kernel"]), "pools": tuple(p["pools"]),
                "hidden": int(p["hidden"]), "length": self.specs[0].samples_for(self.config.window_seconds)}

    def default_model(self) -> Cnn1dModel:
        return default_cnn(seed=self.config.seed, **self._architecture())

    def _load_model(self) -> Cnn1dModel:
        model = super()._load_model()
        if self.params.get("cnn_arithmetic", "fp32") == "q15" and model.quantization is None:
            calibration = [_codes_to_unit(b) for b in self.synthesize_input(self.config.seed)]
            model = calibrate_q15(model, calibration)
        return model

    def parameter_bytes(self) -> int:
        width = 2 if self.model.arithmetic == "q15" else 4
        return width * self.model.parameter_count()

    def synthesize_input(self, seed: int = 0) -> List[SampleBuffer]:
        params = {"amplitude": 2000.0, "frequency": 3.0, "channel_phase_step": 0.3, "noise_std": 300.0}
        return [generate_synthetic(self.specs[0], "sine_plus_noise", params, seed=seed,
                                   window_seconds=self.config.window_seconds)]

    def _process(self, buffers, ctx):
        eeg = buffers["eeg"]
        ledger = ctx.ledger
        width = 2 if self.model.arithmetic == "q15" else 4
        lengths = self.model.layer_lengths()
        activations = [b.out_channels * b.conv_length(n) for b, n in zip(self.model.blocks, lengths)]

        with ledger.buffer("eeg_window", eeg.data.size * width):
            with ctx.stage("normalize"):
                x = _codes_to_unit(eeg)
                ctx.mul(x.size)
                ctx.mem(x.size)
            with ctx.stage("cnn"), ledger.buffer("activation_a", max(activations) * width), \
                    ledger.buffer("activation_b", max(activations) * width):
                scores = cnn_forward(self.model, x, ctx)
        winner = int(np.argmax(scores))
        return WindowResult(
            app=self.app_id,
            label="seizure" if winner == 1 else "no_seizure",
            scores={f"class{i}": float(s) for i, s in enumerate(scores)},
            details={"arithmetic": self.model.arithmetic, "predicted_class": winner},
        )


# ================================================================ CWM

class CwmPipeline(Pipeline):
    """Cognitive workload monitoring: per-batch EEG features over 14 batches, then a random forest."""

    app_id = "CWM"
    stages = ("baseline_removal", "bandpass", "time_features", "frequency_features", "entropy", "forest")
    model_type = "forest"

    @property
    def n_features(self) -> int:
        # 9 statistics, 5 band powers, 3 spectral statistics and the entropy, per channel
        return self.specs[0].channels * (9 + len(self.params["bands"]) + 3 + 1)

    def default_model(self) -> ForestModel:
        p = self.params
        return default_forest(self.n_features, seed=self.config.seed, n_trees=int(p["n_trees"]),
                              depth=int(p["tree_depth"]))

    def parameter_bytes(self) -> int:
        return TREE_NODE_BYTES * sum(t.feature.size for t in self.model.trees)

    def lookup_table_bytes(self) -> int:
        n = self.specs[0].samples_for(self.config.batch_seconds)
        sections = len(self.filter_sections)
        return 4 * (n // 2) * 2 + 4 * 5 * sections

    @property
    def filter_sections(self):
        low, high = self.params["band"]
        return butter_bandpass(low, high, self.specs[0].sample_rate, int(self.params["filter_order"]))

    def synthesize_input(self, seed: int = 0) -> List[SampleBuffer]:
        params = {"amplitude": 1.0e6, "frequency": 10.0, "channel_phase_step": 0.5, "noise_std": 2.0e5}
        return [generate_synthetic(self.specs[0], "sine_plus_noise", params, seed=seed,
                                   window_seconds=self.config.window_seconds)]

    def _batch_features(self, x: np.ndarray, fs: int, sections, ctx: KernelContext) -> List[float]:
        p = self.params
        with ctx.stage("baseline_removal"):
            x = moving_average_subtract(x, max(1, int(round(p["ma_window_s"] * fs))), ctx)
        with ctx.stage("bandpass"):
            x = iir_biquad_cascade(x, sections, ctx=ctx)
        with ctx.stage("time_features"):
            stats = stat_features(x, ctx).as_vector()
        with ctx.stage("frequency_features"):
            psd = power_spectral_density(x, fs, arithmetic=p["fft_arithmetic"], ctx=ctx)
            bands = band_powers(psd, [tuple(b) for b in p["bands"]], ctx).tolist()
            shape = spectral_stats(psd, ctx) if psd.bins.sum() > 0 else None
            spectral = [shape.centroid, shape.spread, shape.dominant_frequency] if shape else [0.0, 0.0, 0.0]
        with ctx.stage("entropy"):
            entropy = spectral_entropy(psd, ctx) if psd.bins.sum() > 0 else 0.0
        return stats + bands + spectral + [entropy]

    def _process(self, buffers, ctx):
        eeg = buffers["eeg"]
        spec = eeg.spec
        batch_s = self.config.batch_seconds
        n_batch = spec.samples_for(batch_s)
        sections = self.filter_sections
        ledger = ctx.ledger
        eb = ctx.element_bytes

        per_batch = []
        with ledger.buffer("feature_accumulator", self.n_features * 4):
            for b in range(self.config.batches):
                batch = eeg.slice_seconds(b * batch_s, batch_s)
                with ledger.buffer("eeg_batch", batch.data.size * spec.container_bytes), \
                        ledger.buffer("channel_scratch", n_batch * eb), \
                        ledger.buffer("spectrum", n_batch * 2 * eb):
                    x = _codes_to_unit(batch)
                    per_batch.append([f for ch in x for f in self._batch_features(ch, spec.sample_rate, sections,
                                                                                   ctx)])
            features = np.mean(np.array(per_batch), axis=0)
            ctx.mul(features.size)
            with ctx.stage("forest"):
                decision = forest_predict(self.model, features, ctx)
        return WindowResult(
            app=self.app_id,
            label="high_workload" if decision.label == 1 else "low_workload",
            scores={"probability": decision.probability},
            details={"batches": self.config.batches, "n_features": int(features.size)},
        )


# ================================================================ GCL

class GclPipeline(Pipeline):
    """Gesture classification: FastICA source separation of 16-channel sEMG, per-source features, MLP."""

    app_id = "GCL"
    stages = ("fastica", "features", "mlp")
    model_type = "mlp"

    def default_model(self):
        p = self.params
        n_in = int(p["n_components"]) * 4
        return default_mlp((n_in, int(p["hidden"]), int(p["n_classes"])), seed=self.config.seed)

    def parameter_bytes(self) -> int:
        return 4 * sum(layer.weights.size + layer.bias.size for layer in self.model)

    def synthesize_input(self, seed: int = 0) -> List[SampleBuffer]:
        params = {"amplitude": 1.0e5, "frequency": 150.0, "channel_phase_step": 0.4, "noise_std": 2.0e4}
        return [generate_synthetic(self.specs[0], "sine_plus_noise", params, seed=seed,
                                   window_seconds=self.config.window_seconds)]

    def _process(self, buffers, ctx):
        p = self.params
        semg = buffers["semg"]
        n_comp = int(p["n_components"])
        n = semg.window_samples
        ledger = ctx.ledger

        with ledger.buffer("semg_window", semg.data.size * 4):
            with ctx.stage("fastica"), ledger.buffer("whitened", n_comp * n * 4), \
                    ledger.buffer("sources", n_comp * n * 4):
                ica = fastica_unmix(_codes_to_unit(semg), n_comp, max_iter=int(p["max_iter"]), tol=float(p["tol"]),
                                    seed=self.config.seed, ctx=ctx)
                with ctx.stage("features"):
                    features = []
                    for source in ica.sources:
                        stats = stat_features(source, ctx)
                        waveform_length = float(np.abs(np.diff(source)).sum())
                        ctx.mem(len(source))
                        features += [stats.rms, stats.variance, stats.zero_crossing_rate, waveform_length]
        with ctx.stage("mlp"):
            probabilities = mlp_forward(self.model, np.array(features), ctx)
        gesture = int(np.argmax(probabilities))
        return WindowResult(
            app=self.app_id,
            label=f"gesture_{gesture}",
            scores={f"gesture_{i}": float(v) for i, v in enumerate(probabilities)},
            details={"ica_converged": ica.converged, "ica_iterations": ica.n_iter},
        )


# ================================================================ CoughDet

class CoughDetPipeline(Pipeline):
    """Cough detection from chest audio and IMU: spectral statistics, PSD, MFCC, random forest."""

    app_id = "CoughDet"
    stages = ("imu_features", "spectral_features", "mfcc", "forest")
    model_type = "forest"

    @property
    def n_features(self) -> int:
        imu = self.specs[1].channels
        # IMU stats, FFT magnitude stats, PSD stats, PSD entropy, MFCC means and deviations
        return imu * 9 + 3 + 3 + 1 + 2 * int(self.params["n_coeffs"])

    def default_model(self) -> ForestModel:
        p = self.params
        return default_forest(self.n_features, seed=self.config.seed, n_trees=int(p["n_trees"]),
                              depth=int(p["tree_depth"]))

    def parameter_bytes(self) -> int:
        return TREE_NODE_BYTES * sum(t.feature.size for t in self.model.trees)

    def lookup_table_bytes(self) -> int:
        p = self.params
        frame = int(p["frame"])
        n_fft = 1 << (self.specs[0].samples_for(self.config.window_seconds) - 1).bit_length()
        return 4 * (frame + int(p["n_mels"]) * (frame // 2 + 1) + n_fft)

    def synthesize_input(self, seed: int = 0) -> List[SampleBuffer]:
        window = self.config.window_seconds
        audio = generate_synthetic(self.specs[0], "sine_plus_noise",
                                   {"amplitude": 1.0e6, "frequency": 440.0, "noise_std": 1.0e5},
                                   seed=seed, window_seconds=window)
        imu = generate_synthetic(self.specs[1], "sine_plus_noise",
                                 {"amplitude": 2000.0, "frequency": 2.0, "channel_phase_step": 0.7,
                                  "noise_std": 100.0},
                                 seed=seed + 1, window_seconds=window)
        return [audio, imu]

    def _process(self, buffers, ctx):
        p = self.params
        audio, imu = buffers["audio"], buffers["imu"]
        fs = audio.spec.sample_rate
        n = audio.window_samples
        n_fft = 1 << (n - 1).bit_length()
        ledger = ctx.ledger

        with ledger.buffer("audio_window", n * 4), ledger.buffer("imu_window", imu.data.size * 2):
            with ctx.stage("imu_features"):
                imu_features = [f for axis in _codes_to_unit(imu) for f in stat_features(axis, ctx).as_vector()]
            x = _codes_to_unit(audio)[0]
            with ctx.stage("spectral_features"), ledger.buffer("spectrum", n_fft * 8):
                spectrum = fft(x, n_fft, "fp32", fs, ctx)
                psd = psd_from_spectrum(spectrum, ctx=ctx)
                if psd.bins.sum() > 0:
                    magnitude = spectral_stats(spectrum, ctx)
                    shape = spectral_stats(psd, ctx)
                    spectral = [magnitude.centroid, magnitude.spread, magnitude.dominant_frequency,
                                shape.centroid, shape.spread, shape.dominant_frequency, spectral_entropy(psd, ctx)]
                else:
                    spectral = [0.0] * 7
            with ctx.stage("mfcc"), ledger.buffer("mfcc_frame", int(p["frame"]) * 8):
                coeffs = mfcc(x, fs, int(p["frame"]), int(p["n_mels"]), int(p["n_coeffs"]), hop=int(p["hop"]),
                              ctx=ctx)
                mfcc_features = list(coeffs.mean(axis=0)) + list(coeffs.std(axis=0))
                ctx.mul(2 * coeffs.size)
        with ctx.stage("forest"):
            decision = forest_predict(self.model, np.array(imu_features + spectral + mfcc_features), ctx)
        return WindowResult(
            app=self.app_id,
            label="cough" if decision.label == 1 else "no_cough",
            scores={"probability": decision.probability},
            details={"mfcc_frames": int(coeffs.shape[0])},
        )


# ================================================================ ECL

# KNN feature layout of the training points
ECL_FEATURE_ORDER = ("gsr", "ppg", "st")


class EclPipeline(Pipeline):
    """Emotion (fear) classification: per-second PPG/GSR/ST averages, KNN partial votes, majority."""

    app_id = "ECL"
    stages = ("averaging", "knn", "decision")
    model_type = "knn"

    def default_model(self) -> KnnTrainingSet:
        return default_knn(seed=self.config.seed, n_points=int(self.params["n_points"]))

    def parameter_bytes(self) -> int:
        points = self.model.points
        return points.size * 4 + points.shape[0]

    def synthesize_input(self, seed: int = 0) -> List[SampleBuffer]:
        window = self.config.window_seconds
        ppg, gsr, st = self.specs
        return [
            generate_synthetic(ppg, "sine_plus_noise",
                               {"amplitude": 1.0e8, "frequency": 1.2, "offset": 2.0e8, "noise_std": 1.0e6},
                               seed=seed, window_seconds=window),
            generate_synthetic(gsr, "sine_plus_noise",
                               {"amplitude": 1.0e7, "frequency": 0.1, "offset": 3.0e8, "noise_std": 1.0e6},
                               seed=seed + 1, window_seconds=window),
            generate_synthetic(st, "constant", {"value": 6000}, seed=seed + 2, window_seconds=window),
        ]

    def _process(self, buffers, ctx):
        batch_s = self.config.batch_seconds
        ledger = ctx.ledger
        votes = []
        fractions = []
        specs = {spec.name: spec for spec in self.specs}
        for b in range(self.config.batches):
            with ctx.stage("averaging"):
                averages = []
                for name in ECL_FEATURE_ORDER:
                    spec = specs[name]
                    batch = buffers[spec.name].slice_seconds(b * batch_s, batch_s)
                    with ledger.buffer(f"{spec.name}_batch", batch.data.size * spec.container_bytes):
                        averages.append(float(_codes_to_unit(batch).mean()))
                        ctx.mem(batch.data.size)
                        ctx.mul(1)
            with ctx.stage("knn"), ledger.buffer("distances", self.model.points.shape[0] * 4):
                decision = knn_fear_predict(self.model, np.array(averages), ctx)
            votes.append(decision.fear)
            fractions.append(decision.fear_fraction)
        with ctx.stage("decision"):
            fear_votes = sum(votes)
            ctx.branch(len(votes) + 1)
            # ties go to no-fear
            fear = fear_votes * 2 > len(votes)
        return WindowResult(
            app=self.app_id,
            label="fear" if fear else "no_fear",
            scores={"fear_votes": float(fear_votes), "mean_fear_fraction": float(np.mean(fractions))},
            details={"votes": [bool(v) for v in votes]},
        )


# ================================================================ BPfree

class BpFreePipeline(Pipeline):
    """On-device training of the seizure CNN, one backpropagation-free epoch per call."""

    app_id = "BPfree"
    stages = ("train_layer0", "train_layer1", "train_layer2")
    model_type = "cnn"

    def default_model(self) -> Cnn1dModel:
        p = self.params
        return default_cnn(seed=self.config.seed, channels=tuple(p["channels"]), kernel=int(p["kernel"]),
                           pools=tuple(p["pools"]), length=int(p["length"]), hidden=int(p["hidden"]))

    def parameter_bytes(self) -> int:
        # weights plus one gradient buffer per trainable tensor
        conv = sum(b.weight.size + 2 * b.out_channels for b in self.model.blocks)
        return 4 * (self.model.parameter_count() + conv)

    def input_bandwidth(self) -> Optional[int]:
        return None

    def schedule(self, buffer_bytes: Optional[int] = None) -> Optional[AcquisitionSchedule]:
        return None

    def synthesize_input(self, seed: int = 0) -> SampleBatch:
        labels = np.array(self.params["labels"], dtype=np.int64)
        rng = np.random.default_rng(seed)
        shape = self.model.input_shape
        inputs = [rng.normal(0.0, 0.5, shape) + 0.2 * label for label in labels]
        return SampleBatch(inputs=inputs, labels=labels)

    def process_window(self, inputs: PipelineInput, ctx: Optional[KernelContext] = None) -> WindowResult:
        ctx = ctx if ctx is not None else self.new_context()
        ctx.ledger.static_items.update(self.static_items())
        batch = inputs if isinstance(inputs, SampleBatch) else self.synthesize_input(self.config.seed)
        sample_bytes = int(np.prod(self.model.input_shape)) * 4
        lengths = self.model.layer_lengths()
        cached = max(b.out_channels * b.conv_length(n) for b, n in zip(self.model.blocks, lengths))
        with ctx.ledger.buffer("samples", len(batch.inputs) * sample_bytes), \
                ctx.ledger.buffer("layer_cache", 3 * len(batch.inputs) * cached * 4):
            result = bpfree_train_epoch(self.model, batch, float(self.params["eta"]),
                                        margin=float(self.params["margin"]), ctx=ctx)
        self.trained_model = result.model
        return WindowResult(
            app=self.app_id,
            label="trained",
            scores={f"layer{t.layer}_loss": t.loss_after for t in result.trace},
            details={"trace": [{"layer": t.layer, "loss_before": t.loss_before, "loss_after": t.loss_after,
                                "eta": t.eta, "updated": t.updated} for t in result.trace]},
        )


PIPELINES: Dict[str, Type[Pipeline]] = {
    cls.app_id: cls
    for cls in (HclPipeline, SeizDetSvmPipeline, SeizDetCnnPipeline, CwmPipeline, GclPipeline, CoughDetPipeline,
                EclPipeline, BpFreePipeline)
}


def build_app(cfg: Union[AppConfig, str], model: Any = None) -> Pipeline:
    """Pipeline for a config (or an app id with its default config)."""
    if isinstance(cfg, str):
        cfg = load_app_config(app_id=cfg)
    cls = PIPELINES.get(cfg.app_id)
    if cls is None:
        raise ConfigError(f"unknown app: {cfg.app_id!r}")
    pipeline = cls(cfg, model=model)
    logger.debug(f"Built {cfg.app_id} pipeline ({len(cls.stages)} stages, config {cfg.config_hash()[:12]})")
    return pipeline


def synthesize_input(pipeline: Pipeline, seed: Optional[int] = None):
    return pipeline.synthesize_input(config.DEFAULT_SEED if seed is None else seed)
