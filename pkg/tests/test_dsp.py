import numpy as np
import pytest

from prosotts import dsp
from oracles import (dct2_ortho, dft_magnitudes, mcd_by_formula,
                     min_warp_by_enumeration)


def sine(freq, seconds=0.5, sr=22050, amp=0.5):
    t = np.arange(int(seconds * sr)) / sr
    return amp * np.sin(2 * np.pi * freq * t)


# --- stft ---

def test_stft_zero_wave_gives_zero_magnitudes():
    mags = dsp.stft(np.zeros(4096))
    assert mags.shape == ((4096 - 1024) // 256 + 1, 513)
    assert (mags == 0).all()


def test_stft_rejects_short_signal():
    with pytest.raises(ValueError):
        dsp.stft(np.zeros(1000))


def test_stft_sine_peak_bin_matches_dft_oracle():
    wave = sine(440.0)
    mags = dsp.stft(wave)
    assert (mags >= 0).all()
    # independent direct-DFT oracle on the first frame
    frame = wave[:1024] * dsp.hann(1024)
    oracle = dft_magnitudes(frame, 1024)
    np.testing.assert_allclose(mags[0], oracle, atol=1e-6)
    expected_bin = round(440 * 1024 / 22050)
    assert expected_bin == 20
    assert (mags.argmax(axis=1) == expected_bin).all()


def test_frame_count_invariant():
    wave = np.zeros(30 * 256 + 768)
    assert dsp.stft(wave).shape[0] == (len(wave) - 1024) // 256 + 1 == 30


# --- mel filterbank ---

def test_filterbank_single_band_is_one_triangle():
    fb = dsp.mel_filterbank(bands=1, fmin=100.0, fmax=8000.0)
    assert fb.shape == (1, 513)
    bin_freqs = np.arange(513) * 22050 / 1024
    inside = (bin_freqs > 100.0) & (bin_freqs < 8000.0)
    assert (fb[0][inside] > 0).all()
    assert (fb[0][~inside] == 0).all()
    peak = bin_freqs[fb[0].argmax()]
    center = dsp.filter_centers(bands=1, fmin=100.0, fmax=8000.0)[0]
    assert abs(peak - center) < 22050 / 1024  # peak at the mel midpoint


def test_filterbank_rows_all_positive():
    fb = dsp.mel_filterbank(bands=80, fmin=0.0, fmax=8000.0)
    assert (fb.sum(axis=1) > 0).all()


def test_filter_centers_monotonic():
    centers = dsp.filter_centers(bands=80)
    assert (np.diff(centers) > 0).all()


@pytest.mark.parametrize("kwargs", [
    {"bands": 0}, {"fmin": 4000.0, "fmax": 1000.0}, {"fmax": 20000.0},
])
def test_filterbank_invalid_ranges(kwargs):
    with pytest.raises(ValueError):
        dsp.mel_filterbank(**kwargs)


# --- mel spectrogram ---

def test_mel_zero_wave_is_log_floor():
    mel = dsp.mel_spectrogram(np.zeros(4096))
    assert mel.bands == 80
    np.testing.assert_allclose(mel.values, np.log(1e-5))


def test_mel_sine_peak_band_matches_filterbank_dft_oracle():
    wave = sine(440.0)
    mel = dsp.mel_spectrogram(wave)
    frame = wave[:1024] * dsp.hann(1024)
    fb = dsp.mel_filterbank()
    oracle_band = int(np.argmax(fb @ dft_magnitudes(frame, 1024)))
    assert (mel.values.argmax(axis=1) == oracle_band).all()


def test_mel_deterministic():
    wave = np.random.default_rng(1).normal(size=8192)
    a = dsp.mel_spectrogram(wave).values
    b = dsp.mel_spectrogram(wave).values
    assert (a == b).all()


# --- pitch and energy ---

def test_pitch_sine_within_5hz():
    f0 = dsp.pitch_track(sine(220.0))
    assert (f0 > 0).all()
    assert np.abs(f0 - 220.0).max() < 5.0


def test_pitch_white_noise_mostly_unvoiced():
    wave = np.random.default_rng(7).normal(scale=0.3, size=22050)
    f0 = dsp.pitch_track(wave)
    assert (f0 == 0).mean() >= 0.8


def test_pitch_silence_all_unvoiced():
    assert (dsp.pitch_track(np.zeros(8192)) == 0).all()


def test_pitch_range_invariant():
    for seed in range(3):
        wave = np.random.default_rng(seed).normal(size=22050) + sine(150.0, 1.0)
        f0 = dsp.pitch_track(wave)
        voiced = f0[f0 > 0]
        assert ((voiced >= 50.0) & (voiced <= 600.0)).all()


def test_energy_zero_wave_at_floor():
    mel = dsp.mel_spectrogram(np.zeros(4096))
    np.testing.assert_allclose(dsp.energy_track(mel), np.log(1e-5))


def test_energy_monotone_in_amplitude():
    quiet = dsp.energy_track(dsp.mel_spectrogram(sine(330.0, amp=0.2)))
    loud = dsp.energy_track(dsp.mel_spectrogram(sine(330.0, amp=0.4)))
    assert (loud > quiet).all()


def test_energy_matches_direct_formula():
    rng = np.random.default_rng(11)
    mel = dsp.MelSpectrogram(values=rng.normal(size=(9, 80)))
    want = np.array([np.log(np.mean(np.exp(row))) for row in mel.values])
    np.testing.assert_allclose(dsp.energy_track(mel), want)


# --- mcd ---

def test_mcd_identical_is_zero():
    c = np.random.default_rng(12).normal(size=(5, 13))
    assert dsp.mcd(c, c) == 0.0


def test_mcd_single_unit_difference_closed_form():
    a = np.zeros((1, 13))
    b = np.zeros((1, 13))
    b[0, 4] = 1.0
    assert abs(dsp.mcd(a, b) - 10.0 / np.log(10.0) * np.sqrt(2.0)) < 1e-12
    assert abs(dsp.mcd(a, b) - 6.1421) < 1e-3


def test_mcd_matches_formula_oracle():
    rng = np.random.default_rng(13)
    a, b = rng.normal(size=(5, 13)), rng.normal(size=(5, 13))
    assert abs(dsp.mcd(a, b) - mcd_by_formula(a, b)) < 1e-12


def test_mcd_length_mismatch_rejected():
    with pytest.raises(ValueError):
        dsp.mcd(np.zeros((4, 13)), np.zeros((5, 13)))


def test_cepstra_match_direct_dct_oracle():
    rng = np.random.default_rng(14)
    mel = dsp.MelSpectrogram(values=rng.normal(size=(3, 20)))
    got = dsp.cepstra(mel, n_coeffs=13)
    for t in range(3):
        np.testing.assert_allclose(got[t], dct2_ortho(mel.values[t])[1:14], atol=1e-9)


# --- dtw ---

def test_dtw_single_cell():
    path = dsp.dtw_path(np.array([[2.0]]))
    np.testing.assert_array_equal(path, [[0, 0]])


def test_dtw_diagonal_dominant():
    cost = np.ones((3, 3)) - np.eye(3)
    path = dsp.dtw_path(cost)
    np.testing.assert_array_equal(path, [[0, 0], [1, 1], [2, 2]])


def test_dtw_total_matches_enumeration():
    rng = np.random.default_rng(15)
    for _ in range(10):
        cost = rng.random((6, 7))
        path = dsp.dtw_path(cost)
        total = cost[path[:, 0], path[:, 1]].sum()
        want_total, want_path = min_warp_by_enumeration(cost)
        assert abs(total - want_total) < 1e-9
        np.testing.assert_array_equal(path, want_path)


def test_dtw_rejects_empty_and_negative():
    with pytest.raises(ValueError):
        dsp.dtw_path(np.zeros((0, 3)))
    with pytest.raises(ValueError):
        dsp.dtw_path(np.array([[-1.0]]))


def test_dtw_path_monotonic_property():
    rng = np.random.default_rng(16)
    for _ in range(50):
        cost = rng.random((int(rng.integers(1, 9)), int(rng.integers(1, 9))))
        path = dsp.dtw_path(cost)
        steps = np.diff(path, axis=0)
        assert (steps >= 0).all() and (steps.sum(axis=1) >= 1).all()
        assert tuple(path[0]) == (0, 0)
        assert tuple(path[-1]) == (cost.shape[0] - 1, cost.shape[1] - 1)


# --- mcd_dtw ---

def _random_mel(seed, frames):
    rng = np.random.default_rng(seed)
    return dsp.MelSpectrogram(values=rng.normal(size=(frames, 80)))


def test_mcd_dtw_identical_zero():
    mel = _random_mel(17, 9)
    assert dsp.mcd_dtw(mel, mel) == 0.0


def test_mcd_dtw_absorbs_uniform_stretch():
    mel = _random_mel(18, 6)
    doubled = dsp.MelSpectrogram(values=np.repeat(mel.values, 2, axis=0))
    assert dsp.mcd_dtw(mel, doubled) < 1e-12


def test_mcd_dtw_matches_enumeration():
    for seed in range(5):
        a, b = _random_mel(seed, 6), _random_mel(seed + 100, 7)
        ca, cb = dsp.cepstra(a), dsp.cepstra(b)
        dist = np.array([[mcd_by_formula(ca[i:i + 1], cb[j:j + 1])
                          for j in range(7)] for i in range(6)])
        total, path = min_warp_by_enumeration(dist)
        assert abs(dsp.mcd_dtw(a, b) - total / len(path)) < 1e-9


def test_mcd_dtw_symmetry():
    for seed in range(5):
        a, b = _random_mel(seed + 30, 5), _random_mel(seed + 60, 8)
        assert abs(dsp.mcd_dtw(a, b) - dsp.mcd_dtw(b, a)) < 1e-9


# --- file formats ---

def test_wav_round_trip(tmp_path):
    wave = sine(200.0, 0.1)
    path = tmp_path / "a.wav"
    dsp.write_wav(path, wave)
    back, rate = dsp.read_wav(path)
    assert rate == 22050
    assert len(back) == len(wave)
    assert np.abs(back - wave).max() < 1.0 / 32000


def test_mel_round_trip(tmp_path):
    mel = _random_mel(19, 7)
    path = tmp_path / "a.mel"
    dsp.save_mel(path, mel)
    back = dsp.load_mel(path)
    assert (back.values == mel.values).all()
    assert path.stat().st_size == 16 + 7 * 80 * 8


def test_mel_bad_magic_rejected(tmp_path):
    path = tmp_path / "bad.mel"
    path.write_bytes(b"nope" + b"\x00" * 20)
    with pytest.raises(ValueError):
        dsp.load_mel(path)
