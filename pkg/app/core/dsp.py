"""Signal-processing kernels shared by the eight pipelines.

Every kernel takes an optional ``KernelContext`` and charges the operations
it performs to it. Memory traffic is counted as one access per element per
pass; arithmetic is counted per multiply or multiply-accumulate.
"""

import math
from collections import deque
from dataclasses import dataclass
from typing import Dict, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import fft as sp_fft
from scipy import signal as sp_signal

from app.core.errors import DomainError, NumericError
from app.core.fxp import QFormat, Q15, Q31, block_exponent, saturate_array, shift_round, to_fixed
from app.core.instrument import KernelContext, ensure_context

FftArithmetic = Literal["fp32", "q15", "q31"]
MorphMode = Literal["erode", "dilate", "open", "close", "baseline_correct"]

MEL_LOG_FLOOR = 1e-10
RELEN_EPS = 1e-12


@dataclass(frozen=True)
class SpectralResult:
    bins: np.ndarray
    resolution: float
    n_points: int
    kind: Literal["spectrum", "psd"] = "spectrum"

    @property
    def frequencies(self) -> np.ndarray:
        return np.arange(len(self.bins)) * self.resolution


@dataclass(frozen=True)
class Biquad:
    """One second-order section, a0 normalized to 1."""

    b0: float
    b1: float
    b2: float
    a1: float
    a2: float

    def __post_init__(self):
        if not all(math.isfinite(c) for c in self.coefficients):
            raise DomainError("biquad coefficients must be finite")

    @property
    def coefficients(self) -> Tuple[float, float, float, float, float]:
        return (self.b0, self.b1, self.b2, self.a1, self.a2)

    def is_stable(self) -> bool:
        poles = np.roots([1.0, self.a1, self.a2])
        return bool(np.all(np.abs(poles) < 1.0))

    def sos_row(self) -> List[float]:
        return [self.b0, self.b1, self.b2, 1.0, self.a1, self.a2]

    @classmethod
    def from_sos_row(cls, row: Sequence[float]) -> "Biquad":
        a0 = float(row[3])
        return cls(*(float(c) / a0 for c in (row[0], row[1], row[2], row[4], row[5])))


@dataclass(frozen=True)
class StatFeatures:
    mean: float
    rms: float
    variance: float
    skewness: Optional[float]
    kurtosis: Optional[float]
    zero_crossing_rate: float
    hjorth_activity: float
    hjorth_mobility: Optional[float]
    hjorth_complexity: Optional[float]

    def as_vector(self) -> List[float]:
        """Feature vector with undefined entries replaced by 0."""
        values = (self.mean, self.rms, self.variance, self.skewness, self.kurtosis,
                  self.zero_crossing_rate, self.hjorth_activity, self.hjorth_mobility, self.hjorth_complexity)
        return [0.0 if v is None else float(v) for v in values]


@dataclass(frozen=True)
class SpectralStats:
    centroid: float
    spread: float
    dominant_frequency: float


@dataclass(frozen=True)
class BeatFiducials:
    """Fiducial sample indices of one beat plus its RR context (samples)."""

    r: Optional[int]
    p: Optional[int] = None
    q: Optional[int] = None
    s: Optional[int] = None
    t: Optional[int] = None
    rr_samples: Optional[float] = None
    reference_rr: Optional[float] = None


@dataclass(frozen=True)
class LpcResult:
    coefficients: np.ndarray
    error: float
    reflection: np.ndarray


def _vector(x, name: str = "x") -> np.ndarray:
    arr = np.asarray(x)
    if arr.ndim != 1:
        raise DomainError(f"{name} must be one-dimensional")
    return arr


def _is_power_of_two(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


def odd_window(ms: float, sample_rate: float) -> int:
    """Window length in samples for a duration, forced odd."""
    return max(1, int(round(ms * sample_rate / 1000.0))) | 1


def moving_average_subtract(x, window: int, ctx: Optional[KernelContext] = None) -> np.ndarray:
    """y[n] = x[n] - mean of the trailing window, the left edge replicated."""
    ctx = ensure_context(ctx)
    x = _vector(x).astype(np.float64)
    if window < 1 or window > len(x):
        raise DomainError(f"window {window} outside [1, {len(x)}]")
    padded = np.concatenate([np.full(window - 1, x[0] if len(x) else 0.0), x])
    csum = np.concatenate([[0.0], np.cumsum(padded)])
    means = (csum[window:] - csum[:-window]) / window
    ctx.mul(len(x))
    ctx.mem(2 * len(x))
    return x - means


def _sliding_extreme(x: np.ndarray, k: int, take_max: bool, ctx: KernelContext) -> np.ndarray:
    half = k // 2
    vals = np.concatenate([np.repeat(x[:1], half), x, np.repeat(x[-1:], half)]).tolist()
    out = [None] * len(x)
    window: deque = deque()
    comparisons = 0
    for i, v in enumerate(vals):
        while window:
            comparisons += 1
            tail = vals[window[-1]]
            if (tail <= v) if take_max else (tail >= v):
                window.pop()
            else:
                break
        window.append(i)
        comparisons += 1
        if window[0] <= i - k:
            window.popleft()
        if i >= k - 1:
            out[i - k + 1] = vals[window[0]]
    ctx.branch(comparisons)
    ctx.mem(len(x))
    return np.array(out, dtype=x.dtype)


def morph_filter(x, k: int, mode: MorphMode, ctx: Optional[KernelContext] = None) -> np.ndarray:
    """Flat-structuring-element morphology with a monotonic deque, O(n) per pass."""
    ctx = ensure_context(ctx)
    x = _vector(x)
    if k % 2 == 0:
        raise DomainError(f"structuring element length must be odd, got {k}")
    if k < 1 or k > len(x):
        raise DomainError(f"structuring element length {k} outside [1, {len(x)}]")

    def erode(v):
        return _sliding_extreme(v, k, False, ctx)

    def dilate(v):
        return _sliding_extreme(v, k, True, ctx)

    if mode == "erode":
        return erode(x)
    if mode == "dilate":
        return dilate(x)
    if mode == "open":
        return dilate(erode(x))
    if mode == "close":
        return erode(dilate(x))
    if mode == "baseline_correct":
        opened = dilate(erode(x))
        closed = erode(dilate(x))
        ctx.mem(len(x))
        return x.astype(np.float64) - (opened.astype(np.float64) + closed.astype(np.float64)) / 2.0
    raise DomainError(f"unknown morphological mode: {mode}")


def iir_biquad_cascade(x, sections: Sequence[Union[Biquad, Sequence[float]]], check_stability: bool = True,
                       ctx: Optional[KernelContext] = None) -> np.ndarray:
    """Direct-form-II-transposed cascade with zero initial state."""
    ctx = ensure_context(ctx)
    x = _vector(x).astype(np.float64)
    quads = [s if isinstance(s, Biquad) else Biquad(*s) for s in sections]
    if not quads:
        return x.copy()
    if check_stability:
        for i, q in enumerate(quads):
            if not q.is_stable():
                raise DomainError(f"section {i} has poles on or outside the unit circle")
    sos = np.array([q.sos_row() for q in quads], dtype=np.float64)
    ctx.mul(5 * len(quads) * len(x))
    ctx.mem(2 * len(quads) * len(x))
    return sp_signal.sosfilt(sos, x)


def butter_bandpass(low: float, high: float, sample_rate: float, order: int = 4) -> List[Biquad]:
    if not 0 < low < high < sample_rate / 2:
        raise DomainError(f"band edges ({low}, {high}) must satisfy 0 < low < high < fs/2")
    sos = sp_signal.butter(order, [low, high], btype="bandpass", fs=sample_rate, output="sos")
    return [Biquad.from_sos_row(row) for row in sos]


def _bit_reverse(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


def _fft_float(x: np.ndarray) -> np.ndarray:
    n = x.size
    out = x[_bit_reverse(n)].astype(np.complex128)
    m = 2
    while m <= n:
        half = m // 2
        w = np.exp(-2j * np.pi * np.arange(half) / m)
        blocks = out.reshape(-1, m)
        even = blocks[:, :half]
        odd = blocks[:, half:] * w
        out = np.concatenate([even + odd, even - odd], axis=1).reshape(-1)
        m *= 2
    return out


def _fft_fixed(x: np.ndarray, fmt: QFormat) -> Tuple[np.ndarray, int]:
    """Radix-2 DIT with a 1/2 scaling per stage and one rounding per butterfly output."""
    n = x.size
    f = fmt.frac_bits
    # 32-bit products are pre-shifted so sums stay inside int64
    pre = 16 if fmt.total_bits == 32 else 0
    sh = f - pre
    exponent = block_exponent(x)
    re, saturated = to_fixed(x * 2.0 ** (-exponent), fmt)
    re = re[_bit_reverse(n)]
    im = np.zeros(n, dtype=np.int64)

    stages = 0
    m = 2
    while m <= n:
        half = m // 2
        k = np.arange(half)
        wr = np.floor(np.cos(2 * np.pi * k / m) * fmt.scale + 0.5).astype(np.int64)
        wi = np.floor(-np.sin(2 * np.pi * k / m) * fmt.scale + 0.5).astype(np.int64)
        re_b, im_b = re.reshape(-1, m), im.reshape(-1, m)
        ar, ai = re_b[:, :half], im_b[:, :half]
        br, bi = re_b[:, half:], im_b[:, half:]
        tr = ((br * wr) >> pre) - ((bi * wi) >> pre)
        ti = ((br * wi) >> pre) + ((bi * wr) >> pre)
        ar_w, ai_w = ar << sh, ai << sh
        yr0, s0 = saturate_array(shift_round(ar_w + tr, sh + 1), fmt.total_bits)
        yr1, s1 = saturate_array(shift_round(ar_w - tr, sh + 1), fmt.total_bits)
        yi0, s2 = saturate_array(shift_round(ai_w + ti, sh + 1), fmt.total_bits)
        yi1, s3 = saturate_array(shift_round(ai_w - ti, sh + 1), fmt.total_bits)
        saturated += s0 + s1 + s2 + s3
        re = np.concatenate([yr0, yr1], axis=1).reshape(-1)
        im = np.concatenate([yi0, yi1], axis=1).reshape(-1)
        stages += 1
        m *= 2

    scale = 2.0 ** (exponent + stages - f)
    return (re.astype(np.float64) + 1j * im.astype(np.float64)) * scale, saturated


def fft(x, n: Optional[int] = None, arithmetic: FftArithmetic = "fp32", sample_rate: float = 1.0,
        ctx: Optional[KernelContext] = None) -> SpectralResult:
    """Forward radix-2 DIT transform, unnormalized; ``x`` is zero-padded to ``n``.

    The q15/q31 variants return bins rescaled to the floating-point
    magnitude so both arithmetics are directly comparable.
    """
    ctx = ensure_context(ctx)
    x = _vector(x)
    n = n or (1 << max(0, (len(x) - 1).bit_length()))
    if not _is_power_of_two(n):
        raise DomainError(f"FFT length {n} is not a power of two")
    if len(x) > n:
        raise DomainError(f"input length {len(x)} exceeds FFT length {n}")

    padded = np.zeros(n, dtype=np.complex128 if np.iscomplexobj(x) else np.float64)
    padded[:len(x)] = x
    butterflies = (n // 2) * (n.bit_length() - 1)

    if arithmetic == "fp32":
        bins = _fft_float(padded)
        ctx.mul(4 * butterflies, "fp32")
    elif arithmetic in ("q15", "q31"):
        if np.iscomplexobj(padded):
            raise DomainError("fixed-point FFT takes real input")
        bins, _ = _fft_fixed(padded, Q15 if arithmetic == "q15" else Q31)
        ctx.mul(4 * butterflies, "fxp")
    else:
        raise DomainError(f"unknown FFT arithmetic: {arithmetic}")
    ctx.mem(2 * butterflies)
    return SpectralResult(bins=bins, resolution=sample_rate / n, n_points=n)


def power_spectral_density(x, sample_rate: float, n: Optional[int] = None, arithmetic: FftArithmetic = "fp32",
                           ctx: Optional[KernelContext] = None) -> SpectralResult:
    """One-sided periodogram |X|^2 / (n * fs) with doubled interior bins."""
    ctx = ensure_context(ctx)
    return psd_from_spectrum(fft(x, n, arithmetic, sample_rate, ctx), arithmetic, ctx)


def psd_from_spectrum(spectrum: SpectralResult, arithmetic: FftArithmetic = "fp32",
                      ctx: Optional[KernelContext] = None) -> SpectralResult:
    """Same periodogram as power_spectral_density, from an already computed spectrum."""
    ctx = ensure_context(ctx)
    if spectrum.kind != "spectrum":
        raise DomainError(f"expected an FFT spectrum, got {spectrum.kind}")
    n = spectrum.n_points
    sample_rate = spectrum.resolution * n
    power = np.abs(spectrum.bins[: n // 2 + 1]) ** 2 / (n * sample_rate)
    if n > 1:
        power[1: n - n // 2] *= 2.0
    ctx.mul(2 * len(power), "fxp" if arithmetic != "fp32" else "fp32")
    return SpectralResult(bins=power, resolution=spectrum.resolution, n_points=n, kind="psd")


def lomb_scargle(t, x, freqs, ctx: Optional[KernelContext] = None) -> np.ndarray:
    """Normalized Lomb periodogram with the per-frequency time offset; ``freqs`` in Hz."""
    ctx = ensure_context(ctx)
    t = _vector(t, "t").astype(np.float64)
    x = _vector(x).astype(np.float64)
    freqs = _vector(freqs, "freqs").astype(np.float64)
    if len(t) != len(x) or len(t) < 2:
        raise DomainError("t and x need equal length of at least 2")
    if freqs.size == 0:
        raise DomainError("frequency grid is empty")
    if np.any(freqs <= 0):
        raise DomainError("frequencies must be positive")
    diffs = np.diff(t)
    if np.any(diffs == 0):
        raise DomainError("duplicate timestamps")
    if np.any(diffs < 0):
        raise DomainError("timestamps must be strictly increasing")

    n, nf = len(t), len(freqs)
    ctx.transcendental(4 * n * nf)
    ctx.mac(6 * n * nf)
    ctx.mem(n * nf)

    xc = x - x.mean()
    variance = np.var(x, ddof=1)
    if variance == 0:
        return np.zeros(nf)
    omega = 2 * np.pi * freqs[:, None]
    tau = np.arctan2(np.sin(2 * omega * t).sum(axis=1), np.cos(2 * omega * t).sum(axis=1))[:, None] / (2 * omega)
    arg = omega * (t - tau)
    c, s = np.cos(arg), np.sin(arg)
    power = (c @ xc) ** 2 / (c * c).sum(axis=1) + (s @ xc) ** 2 / (s * s).sum(axis=1)
    return power / (2 * variance)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_mels: int, frame: int, sample_rate: float) -> np.ndarray:
    """Triangular HTK filters over bins 0..frame/2, spanning 0 Hz to Nyquist."""
    n_bins = frame // 2 + 1
    edges = mel_to_hz(np.linspace(0.0, hz_to_mel(sample_rate / 2.0), n_mels + 2))
    freqs = np.arange(n_bins) * sample_rate / frame
    bank = np.zeros((n_mels, n_bins))
    for m in range(n_mels):
        left, center, right = edges[m], edges[m + 1], edges[m + 2]
        rising = (freqs - left) / (center - left)
        falling = (right - freqs) / (right - center)
        bank[m] = np.maximum(0.0, np.minimum(rising, falling))
    return bank


def mfcc(audio, sample_rate: float, frame: int, n_mels: int, n_coeffs: int, hop: Optional[int] = None,
         ctx: Optional[KernelContext] = None) -> np.ndarray:
    """MFCC matrix of shape (frames, n_coeffs).

    Per frame: periodic Hann window, power spectrum, HTK mel filterbank,
    natural log floored at MEL_LOG_FLOOR, orthonormal DCT-II.
    """
    ctx = ensure_context(ctx)
    audio = _vector(audio, "audio").astype(np.float64)
    hop = hop or frame
    if not _is_power_of_two(frame) or frame > len(audio):
        raise DomainError(f"frame {frame} must be a power of two no longer than the audio")
    if n_mels > frame // 2:
        raise DomainError(f"n_mels {n_mels} exceeds frame/2")
    if not 1 <= n_coeffs <= n_mels:
        raise DomainError(f"n_coeffs {n_coeffs} outside [1, n_mels]")

    window = 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(frame) / frame)
    bank = mel_filterbank(n_mels, frame, sample_rate)
    n_frames = 1 + (len(audio) - frame) // hop
    rows = []
    for i in range(n_frames):
        segment = audio[i * hop: i * hop + frame] * window
        spectrum = fft(segment, frame, "fp32", sample_rate, ctx).bins[: frame // 2 + 1]
        power = spectrum.real ** 2 + spectrum.imag ** 2
        energies = bank @ power
        logs = np.log(np.maximum(energies, MEL_LOG_FLOOR))
        rows.append(sp_fft.dct(logs, type=2, norm="ortho")[:n_coeffs])
    ctx.mul(n_frames * (frame + 2 * (frame // 2 + 1)))
    ctx.mac(n_frames * (int(np.count_nonzero(bank)) + n_mels * n_coeffs))
    ctx.transcendental(n_frames * n_mels)
    return np.vstack(rows)


def stat_features(x, ctx: Optional[KernelContext] = None) -> StatFeatures:
    """Population moments, zero-crossing rate and Hjorth parameters.

    Skewness and kurtosis (non-excess) are ``None`` for a constant input.
    """
    ctx = ensure_context(ctx)
    x = _vector(x).astype(np.float64)
    n = len(x)
    if n < 2:
        raise DomainError("stat_features needs at least 2 samples")
    ctx.mul(4 * n)
    ctx.branch(n - 1)
    ctx.mem(n)

    mean = float(x.mean())
    centered = x - mean
    m2 = float(np.mean(centered ** 2))
    rms = float(np.sqrt(np.mean(x ** 2)))
    if m2 > 0:
        skewness = float(np.mean(centered ** 3) / m2 ** 1.5)
        kurtosis = float(np.mean(centered ** 4) / m2 ** 2)
    else:
        skewness = kurtosis = None
    zcr = float(np.count_nonzero(x[:-1] * x[1:] < 0)) / (n - 1)

    dx = np.diff(x)
    var_dx = float(np.var(dx))
    mobility = complexity = None
    if m2 > 0:
        mobility = math.sqrt(var_dx / m2)
        if var_dx > 0 and n > 2:
            mobility_dx = math.sqrt(float(np.var(np.diff(dx))) / var_dx)
            complexity = mobility_dx / mobility
    return StatFeatures(mean=mean, rms=rms, variance=m2, skewness=skewness, kurtosis=kurtosis,
                        zero_crossing_rate=zcr, hjorth_activity=m2, hjorth_mobility=mobility,
                        hjorth_complexity=complexity)


def spectral_entropy(psd: SpectralResult, ctx: Optional[KernelContext] = None) -> float:
    """Shannon entropy of the normalized PSD divided by log(n_bins), in [0, 1]."""
    ctx = ensure_context(ctx)
    p = np.asarray(psd.bins, dtype=np.float64)
    if np.any(p < 0):
        raise DomainError("PSD has negative bins")
    total = p.sum()
    if total <= 0:
        raise DomainError("PSD is all zero")
    if len(p) == 1:
        return 0.0
    p = p / total
    nz = p[p > 0]
    ctx.transcendental(len(nz))
    ctx.mul(len(nz))
    return float(-(nz * np.log(nz)).sum() / np.log(len(p)))


def band_powers(psd: SpectralResult, bands: Sequence[Tuple[float, float]],
                ctx: Optional[KernelContext] = None) -> np.ndarray:
    """Integrated PSD over half-open [low, high) bands."""
    ctx = ensure_context(ctx)
    freqs = psd.frequencies
    out = []
    for low, high in bands:
        if high <= low:
            raise DomainError(f"empty band ({low}, {high})")
        mask = (freqs >= low) & (freqs < high)
        out.append(float(psd.bins[mask].sum() * psd.resolution))
        ctx.branch(len(freqs))
    return np.array(out)


def spectral_stats(spectrum: SpectralResult, ctx: Optional[KernelContext] = None) -> SpectralStats:
    """Magnitude-weighted centroid, spread and peak frequency of a spectrum or PSD."""
    ctx = ensure_context(ctx)
    if spectrum.kind == "psd":
        weights = np.asarray(spectrum.bins, dtype=np.float64)
    else:
        weights = np.abs(spectrum.bins[: spectrum.n_points // 2 + 1])
    total = weights.sum()
    if total <= 0:
        raise DomainError("spectrum has no energy")
    freqs = np.arange(len(weights)) * spectrum.resolution
    centroid = float((freqs * weights).sum() / total)
    spread = float(np.sqrt(((freqs - centroid) ** 2 * weights).sum() / total))
    ctx.mul(3 * len(weights))
    ctx.branch(len(weights))
    return SpectralStats(centroid=centroid, spread=spread, dominant_frequency=float(freqs[np.argmax(weights)]))


def _centered_energy(x: np.ndarray, w: int) -> np.ndarray:
    half = w // 2
    sq = np.concatenate([np.repeat(x[:1], half), x, np.repeat(x[-1:], half)]) ** 2
    csum = np.concatenate([[0.0], np.cumsum(sq)])
    return csum[w:] - csum[:-w]


def relative_energy(x, w_short: int, w_long: int, ctx: Optional[KernelContext] = None) -> np.ndarray:
    """Short-window energy over long-window energy, both windows centered."""
    ctx = ensure_context(ctx)
    x = _vector(x).astype(np.float64)
    if w_short % 2 == 0 or w_long % 2 == 0:
        raise DomainError("RelEn windows must be odd")
    if not 1 <= w_short < w_long <= len(x):
        raise DomainError(f"windows must satisfy 1 <= {w_short} < {w_long} <= {len(x)}")
    ctx.mul(len(x))
    ctx.mem(3 * len(x))
    return _centered_energy(x, w_short) / (_centered_energy(x, w_long) + RELEN_EPS)


def detect_r_peaks(relen, sample_rate: float, refractory_ms: float = 200.0, theta: float = 2.0,
                   signal=None, min_relative_amplitude: float = 0.0, mean_window_s: float = 2.0,
                   ctx: Optional[KernelContext] = None) -> np.ndarray:
    """Indices of beats whose enhanced signal exceeds theta x its trailing mean.

    Each above-threshold run yields one candidate: the argmax of ``signal``
    when given, otherwise the center of the run's maximal plateau. Candidates
    closer than the refractory period keep the larger one.
    """
    ctx = ensure_context(ctx)
    if refractory_ms <= 0:
        raise DomainError("refractory_ms must be positive")
    relen = _vector(relen, "relen").astype(np.float64)
    if relen.size == 0:
        return np.zeros(0, dtype=np.int64)
    amp = relen if signal is None else np.asarray(signal, dtype=np.float64)
    if amp.shape != relen.shape:
        raise DomainError("signal and relen lengths differ")

    n = len(relen)
    w = max(1, int(round(mean_window_s * sample_rate)))
    padded = np.concatenate([np.full(w - 1, relen[0]), relen])
    csum = np.concatenate([[0.0], np.cumsum(padded)])
    running = (csum[w:] - csum[:-w]) / w
    above = relen > theta * running
    ctx.branch(2 * n)
    ctx.mem(n)

    candidates: List[int] = []
    i = 0
    while i < n:
        if not above[i]:
            i += 1
            continue
        j = i
        while j < n and above[j]:
            j += 1
        if signal is not None:
            candidates.append(i + int(np.argmax(amp[i:j])))
        else:
            run = relen[i:j]
            plateau = np.flatnonzero(run == run.max())
            candidates.append(i + int(plateau[len(plateau) // 2]))
        i = j

    refractory = refractory_ms * sample_rate / 1000.0
    peaks: List[int] = []
    for c in candidates:
        if peaks and c - peaks[-1] < refractory:
            if amp[c] > amp[peaks[-1]]:
                peaks[-1] = c
            continue
        peaks.append(c)
    ctx.branch(len(candidates))

    if peaks and min_relative_amplitude > 0:
        top = max(amp[p] for p in peaks)
        peaks = [p for p in peaks if amp[p] >= min_relative_amplitude * top]
    return np.array(peaks, dtype=np.int64)


def _arg_extreme(signal: np.ndarray, lo: int, hi: int, take_max: bool) -> Optional[int]:
    lo, hi = max(0, lo), min(len(signal), hi)
    if hi <= lo:
        return None
    seg = signal[lo:hi]
    return lo + int(np.argmax(seg) if take_max else np.argmin(seg))


def delineate(signal, r_peaks, sample_rate: float, history: int = 8,
              ctx: Optional[KernelContext] = None) -> List[BeatFiducials]:
    """Windowed extremum search for P, Q, S and T around each R peak.

    Q/S are minima within 60 ms before/after R, P the maximum 250..80 ms
    before R, T the maximum 100..400 ms after R. The reference RR is the
    median of the last ``history`` intervals.
    """
    ctx = ensure_context(ctx)
    signal = _vector(signal, "signal").astype(np.float64)
    r_peaks = [int(r) for r in r_peaks]

    def sec(s):
        return int(round(s * sample_rate))

    beats = []
    intervals: List[int] = []
    for i, r in enumerate(r_peaks):
        rr = None
        if i > 0:
            rr = float(r - r_peaks[i - 1])
            intervals.append(int(rr))
        reference = float(np.median(intervals[-history:])) if intervals else None
        beats.append(BeatFiducials(
            r=r,
            q=_arg_extreme(signal, r - sec(0.06), r, False),
            s=_arg_extreme(signal, r + 1, r + sec(0.06) + 1, False),
            p=_arg_extreme(signal, r - sec(0.25), r - sec(0.08) + 1, True),
            t=_arg_extreme(signal, r + sec(0.10), r + sec(0.40) + 1, True),
            rr_samples=rr,
            reference_rr=reference,
        ))
    ctx.branch(len(r_peaks) * (sec(0.06) * 2 + sec(0.17) + sec(0.30)))
    ctx.mem(len(r_peaks) * 5)
    return beats


def hrv_features(rr_s, ctx: Optional[KernelContext] = None) -> Dict[str, float]:
    """Time-domain HRV over RR intervals in seconds: mean_rr, sdnn, rmssd, pnn50."""
    ctx = ensure_context(ctx)
    rr = _vector(rr_s, "rr").astype(np.float64)
    if len(rr) < 3:
        raise DomainError("HRV needs at least 3 RR intervals")
    diff = np.diff(rr)
    ctx.mul(2 * len(rr))
    ctx.branch(len(diff))
    return {
        "mean_rr": float(rr.mean()),
        "sdnn": float(np.std(rr, ddof=1)),
        "rmssd": float(np.sqrt(np.mean(diff ** 2))),
        "pnn50": float(np.mean(np.abs(diff) > 0.05)),
    }


def lorenz_features(rr_s, ctx: Optional[KernelContext] = None) -> Dict[str, float]:
    """Poincare (Lorenz) plot descriptors SD1, SD2 and their ratio."""
    ctx = ensure_context(ctx)
    rr = _vector(rr_s, "rr").astype(np.float64)
    if len(rr) < 3:
        raise DomainError("Lorenz features need at least 3 RR intervals")
    var_diff = float(np.var(np.diff(rr), ddof=1))
    var_rr = float(np.var(rr, ddof=1))
    sd1 = math.sqrt(var_diff / 2.0)
    sd2 = math.sqrt(max(0.0, 2.0 * var_rr - var_diff / 2.0))
    ctx.mul(2 * len(rr))
    ctx.transcendental(2)
    return {"sd1": sd1, "sd2": sd2, "sd_ratio": sd1 / sd2 if sd2 > 0 else 0.0}


def lpc(x, order: int = 8, ctx: Optional[KernelContext] = None) -> LpcResult:
    """Levinson-Durbin recursion on the biased autocorrelation.

    ``coefficients`` are a[1..order] of A(z) = 1 + sum a_k z^-k.
    """
    ctx = ensure_context(ctx)
    x = _vector(x).astype(np.float64)
    if order < 1 or order >= len(x):
        raise DomainError(f"LPC order {order} outside [1, {len(x) - 1}]")
    r = np.array([np.dot(x[: len(x) - k], x[k:]) for k in range(order + 1)]) / len(x)
    ctx.mac(len(x) * (order + 1))
    if r[0] <= 0:
        raise NumericError("LPC of a zero-energy signal")

    a = np.zeros(order + 1)
    a[0] = 1.0
    err = r[0]
    reflection = np.zeros(order)
    for i in range(1, order + 1):
        acc = r[i] + np.dot(a[1:i], r[i - 1:0:-1])
        k = -acc / err
        reflection[i - 1] = k
        a[1:i] = a[1:i] + k * a[i - 1:0:-1]
        a[i] = k
        err *= 1.0 - k * k
        ctx.mac(2 * i)
        ctx.mul(2)
    return LpcResult(coefficients=a[1:].copy(), error=float(err), reflection=reflection)
