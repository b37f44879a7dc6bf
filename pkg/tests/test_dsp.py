import numpy as np
import pytest
from scipy import linalg as sp_linalg
from scipy import ndimage
from scipy import signal as sp_signal

from app.core.dsp import (
    MEL_LOG_FLOOR,
    Biquad,
    SpectralResult,
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
    mel_filterbank,
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
from app.core.errors import DomainError, NumericError
from app.core.instrument import KernelContext


def test_odd_window():
    assert odd_window(200.0, 256) == 51
    assert odd_window(25.0, 256) == 7


def test_moving_average_subtract():
    assert np.allclose(moving_average_subtract(np.full(50, 3.0), 10), 0.0)
    with pytest.raises(DomainError):
        moving_average_subtract(np.zeros(5), 6)


def test_morph_filter_matches_grey_morphology(rng):
    x = rng.integers(-100, 100, 200)
    assert np.array_equal(morph_filter(x, 5, "erode"), ndimage.grey_erosion(x, size=5, mode="nearest"))
    assert np.array_equal(morph_filter(x, 5, "dilate"), ndimage.grey_dilation(x, size=5, mode="nearest"))
    assert morph_filter([3, 1, 4, 1, 5], 3, "dilate").tolist() == [3, 4, 4, 5, 5]


def test_morph_filter_counts_comparisons():
    ctx = KernelContext(arithmetic="fxp16")
    morph_filter(np.arange(100), 11, "baseline_correct", ctx)
    assert ctx.counters.dominant() == "branches"


def test_morph_filter_baseline_and_errors():
    assert np.allclose(morph_filter(np.full(64, 7.0), 9, "baseline_correct"), 0.0)
    with pytest.raises(DomainError):
        morph_filter(np.zeros(10), 4, "erode")
    with pytest.raises(DomainError):
        morph_filter(np.zeros(10), 11, "erode")
    with pytest.raises(DomainError):
        morph_filter(np.zeros(10), 3, "smooth")


def test_biquad_cascade_matches_sosfilt(rng):
    sections = butter_bandpass(0.5, 40.0, 256, 4)
    x = rng.standard_normal(512)
    sos = np.array([s.sos_row() for s in sections])
    assert np.allclose(iir_biquad_cascade(x, sections), sp_signal.sosfilt(sos, x))
    assert np.array_equal(iir_biquad_cascade(x, []), x)


def test_biquad_stability_and_band_checks():
    with pytest.raises(DomainError):
        iir_biquad_cascade(np.ones(4), [Biquad(1.0, 0.0, 0.0, 0.0, 1.5)])
    with pytest.raises(DomainError):
        butter_bandpass(10.0, 5.0, 256)
    with pytest.raises(DomainError):
        Biquad(float("inf"), 0.0, 0.0, 0.0, 0.0)


def test_fft_float_matches_numpy(rng):
    x = rng.standard_normal(64)
    assert np.allclose(fft(x).bins, np.fft.fft(x))
    padded = fft(x[:50], n=64)
    assert np.allclose(padded.bins, np.fft.fft(x[:50], 64))
    with pytest.raises(DomainError):
        fft(x, n=48)
    with pytest.raises(DomainError):
        fft(x, n=32)


@pytest.mark.parametrize("arithmetic, tolerance", [("q15", 1e-2), ("q31", 1e-6)])
def test_fixed_point_fft_tracks_float(arithmetic, tolerance):
    t = np.arange(64) / 64
    x = 0.9 * np.sin(2 * np.pi * 5 * t) + 0.2 * np.cos(2 * np.pi * 12 * t)
    ref = np.fft.fft(x)
    ctx = KernelContext()
    got = fft(x, arithmetic=arithmetic, ctx=ctx).bins
    assert np.max(np.abs(got - ref)) <= tolerance * np.max(np.abs(ref))
    assert ctx.counters.fxp_mul > 0
    assert ctx.counters.fp_mul == 0


def test_psd_parseval(rng):
    x = rng.standard_normal(256)
    psd = power_spectral_density(x, 128.0)
    assert psd.kind == "psd"
    assert len(psd.bins) == 129
    assert psd.bins.sum() * psd.resolution == pytest.approx(np.mean(x ** 2))


def test_psd_from_existing_spectrum(rng):
    x = rng.standard_normal(200)
    spectrum = fft(x, 256, sample_rate=128.0)
    psd = psd_from_spectrum(spectrum)
    np.testing.assert_allclose(psd.bins, power_spectral_density(x, 128.0, 256).bins, rtol=1e-12)
    assert psd.resolution == spectrum.resolution
    with pytest.raises(DomainError):
        psd_from_spectrum(psd)


def test_lomb_scargle_finds_frequency_on_uneven_grid(rng):
    t = np.sort(rng.uniform(0.0, 120.0, 150))
    x = np.sin(2 * np.pi * 0.25 * t)
    freqs = np.linspace(0.05, 0.5, 91)
    power = lomb_scargle(t, x, freqs)
    assert freqs[np.argmax(power)] == pytest.approx(0.25, abs=0.01)
    assert np.allclose(lomb_scargle(t, np.ones_like(t), freqs), 0.0)


def test_lomb_scargle_rejects_bad_timestamps():
    freqs = np.array([0.1, 0.2])
    with pytest.raises(DomainError):
        lomb_scargle([0.0, 1.0, 1.0], [1.0, 2.0, 3.0], freqs)
    with pytest.raises(DomainError):
        lomb_scargle([0.0, 2.0, 1.0], [1.0, 2.0, 3.0], freqs)
    with pytest.raises(DomainError):
        lomb_scargle([0.0, 1.0, 2.0], [1.0, 2.0, 3.0], [])


def test_mfcc_shape_and_silence():
    coeffs = mfcc(np.zeros(4800), 16000, 512, 32, 13, hop=256)
    assert coeffs.shape == (17, 13)
    assert np.allclose(coeffs[:, 0], np.log(MEL_LOG_FLOOR) * np.sqrt(32))
    assert np.allclose(coeffs[:, 1:], 0.0, atol=1e-9)
    with pytest.raises(DomainError):
        mfcc(np.zeros(4800), 16000, 512, 32, 40)
    with pytest.raises(DomainError):
        mfcc(np.zeros(4800), 16000, 500, 32, 13)


def test_mel_filterbank():
    bank = mel_filterbank(32, 512, 16000)
    assert bank.shape == (32, 257)
    assert np.all(bank >= 0.0)
    assert np.all(bank.max(axis=1) > 0.0)


def test_stat_features_of_alternating_signal():
    s = stat_features([1.0, -1.0, 1.0, -1.0])
    assert s.mean == 0.0
    assert s.rms == pytest.approx(1.0)
    assert s.variance == pytest.approx(1.0)
    assert s.skewness == pytest.approx(0.0)
    assert s.kurtosis == pytest.approx(1.0)
    assert s.zero_crossing_rate == 1.0


def test_stat_features_of_constant_signal():
    s = stat_features(np.full(10, 2.0))
    assert s.skewness is None
    assert s.hjorth_mobility is None
    assert len(s.as_vector()) == 9
    with pytest.raises(DomainError):
        stat_features([1.0])


def test_spectral_entropy_bounds():
    flat = SpectralResult(bins=np.ones(16), resolution=1.0, n_points=30, kind="psd")
    peak = SpectralResult(bins=np.eye(16)[3], resolution=1.0, n_points=30, kind="psd")
    assert spectral_entropy(flat) == pytest.approx(1.0)
    assert spectral_entropy(peak) == 0.0
    with pytest.raises(DomainError):
        spectral_entropy(SpectralResult(bins=np.zeros(4), resolution=1.0, n_points=6, kind="psd"))


def test_band_powers_are_half_open():
    psd = SpectralResult(bins=np.ones(8), resolution=1.0, n_points=14, kind="psd")
    assert band_powers(psd, [(1.0, 3.0), (3.0, 4.0)]).tolist() == [2.0, 1.0]
    with pytest.raises(DomainError):
        band_powers(psd, [(3.0, 3.0)])


def test_spectral_stats_single_bin():
    psd = SpectralResult(bins=np.eye(8)[4], resolution=0.5, n_points=14, kind="psd")
    stats = spectral_stats(psd)
    assert stats.centroid == pytest.approx(2.0)
    assert stats.spread == pytest.approx(0.0)
    assert stats.dominant_frequency == pytest.approx(2.0)


def test_relative_energy_windows():
    out = relative_energy(np.ones(50), 3, 9)
    assert out.shape == (50,)
    assert np.allclose(out, 3.0 / 9.0)
    with pytest.raises(DomainError):
        relative_energy(np.ones(50), 4, 9)
    with pytest.raises(DomainError):
        relative_energy(np.ones(50), 9, 3)


def _spiky(n=1024, spikes=None):
    x = np.full(n, 0.01)
    for index, value in (spikes or {}).items():
        x[index] = value
    return x


def test_r_peaks_on_spike_train():
    relen = _spiky(spikes={100: 10.0, 356: 10.0, 612: 10.0})
    assert detect_r_peaks(relen, 256).tolist() == [100, 356, 612]


def test_r_peaks_refractory_keeps_larger():
    relen = _spiky(spikes={100: 10.0, 120: 20.0})
    assert detect_r_peaks(relen, 256).tolist() == [120]


def test_r_peaks_relative_amplitude():
    relen = _spiky(spikes={100: 10.0, 500: 2.0})
    assert detect_r_peaks(relen, 256).tolist() == [100, 500]
    assert detect_r_peaks(relen, 256, min_relative_amplitude=0.5).tolist() == [100]


def test_r_peaks_edge_cases():
    assert detect_r_peaks(np.zeros(0), 256).size == 0
    with pytest.raises(DomainError):
        detect_r_peaks(np.ones(10), 256, refractory_ms=0.0)


def test_delineate_rr_context():
    beats = delineate(np.zeros(1024), [100, 356, 612], 256)
    assert beats[0].rr_samples is None
    assert beats[1].rr_samples == 256.0
    assert beats[2].reference_rr == 256.0
    assert all(b.q is not None and b.t is not None for b in beats)


def test_hrv_features():
    hrv = hrv_features([1.0, 1.1, 0.9, 1.0])
    assert hrv["mean_rr"] == pytest.approx(1.0)
    assert hrv["rmssd"] == pytest.approx(np.sqrt(0.02))
    assert hrv["pnn50"] == 1.0
    with pytest.raises(DomainError):
        hrv_features([1.0, 1.0])


def test_lorenz_features_constant_rhythm():
    lorenz = lorenz_features([1.0, 1.0, 1.0, 1.0])
    assert lorenz == {"sd1": 0.0, "sd2": 0.0, "sd_ratio": 0.0}


def test_lpc_matches_yule_walker(rng):
    x = np.zeros(5000)
    noise = rng.standard_normal(5000)
    for i in range(1, len(x)):
        x[i] = 0.9 * x[i - 1] + noise[i]
    assert lpc(x, 1).coefficients[0] == pytest.approx(-0.9, abs=0.05)

    order = 4
    r = np.array([np.dot(x[: len(x) - k], x[k:]) for k in range(order + 1)]) / len(x)
    expected = sp_linalg.solve_toeplitz(r[:order], -r[1:])
    assert np.allclose(lpc(x, order).coefficients, expected)


def test_lpc_errors():
    with pytest.raises(NumericError):
        lpc(np.zeros(32), 4)
    with pytest.raises(DomainError):
        lpc(np.ones(4), 4)
