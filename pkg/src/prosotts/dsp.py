"""Deterministic DSP: STFT, mel analysis, pitch/energy targets, MCD-DTW.

All functions are pure (no learned state, no RNG) and operate on float64
numpy arrays, so they double as training-target extractors and as the
evaluation metric. File I/O: PCM16 mono RIFF WAV and a small binary mel
format ("MEL0", documented in the README).
"""

import struct
import wave as wavemod
from dataclasses import dataclass

import numpy as np
from scipy.fft import dct

from . import kernels

SAMPLE_RATE = 22050
N_FFT = 1024
WIN_LENGTH = 1024
HOP_LENGTH = 256
N_BANDS = 80
FMIN = 0.0
FMAX = 8000.0
LOG_FLOOR = 1e-5

PITCH_FMIN = 50.0
PITCH_FMAX = 600.0
PITCH_FRAME = 1024
VOICING_THRESHOLD = 0.3

# Kubichek mel-cepstral distortion scale, 13 DCT-II coefficients after c0
MCD_SCALE = 10.0 / np.log(10.0) * np.sqrt(2.0)
MCD_COEFFS = 13


@dataclass
class MelSpectrogram:
    """T x bands matrix of log-mel energies plus frame metadata."""

    values: np.ndarray
    sample_rate: int = SAMPLE_RATE
    hop: int = HOP_LENGTH

    @property
    def frames(self):
        return self.values.shape[0]

    @property
    def bands(self):
        return self.values.shape[1]


@dataclass
class ProsodyTargets:
    """Per-frame pitch in Hz (0 for unvoiced) and log-RMS energy."""

    pitch: np.ndarray
    energy: np.ndarray


def hann(win_length):
    n = np.arange(win_length)
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * n / win_length)


def frame_count(num_samples, win=WIN_LENGTH, hop=HOP_LENGTH):
    return (num_samples - win) // hop + 1


def _frames(wave, win, hop):
    if len(wave) < win:
        raise ValueError(f"signal of {len(wave)} samples shorter than one window ({win})")
    t_len = frame_count(len(wave), win, hop)
    idx = hop * np.arange(t_len)[:, None] + np.arange(win)[None, :]
    return wave[idx]


def stft(wave, n_fft=N_FFT, win=WIN_LENGTH, hop=HOP_LENGTH):
    """Hann-windowed magnitude STFT without center padding, (T, n_fft//2+1)."""
    wave = np.asarray(wave, dtype=np.float64)
    frames = _frames(wave, win, hop) * hann(win)
    return np.abs(np.fft.rfft(frames, n=n_fft, axis=1))


def _hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def _mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_fft=N_FFT, bands=N_BANDS, sr=SAMPLE_RATE, fmin=FMIN, fmax=FMAX):
    """Overlapping triangular filters on the mel scale, (bands, n_fft//2+1)."""
    if bands < 1:
        raise ValueError(f"bands must be >= 1, got {bands}")
    if not (0 <= fmin < fmax <= sr / 2):
        raise ValueError(f"need 0 <= fmin < fmax <= sr/2, got fmin={fmin} fmax={fmax} sr={sr}")
    edges = _mel_to_hz(np.linspace(_hz_to_mel(fmin), _hz_to_mel(fmax), bands + 2))
    bin_freqs = np.arange(n_fft // 2 + 1) * sr / n_fft
    fb = np.zeros((bands, n_fft // 2 + 1))
    for m in range(bands):
        lo, mid, hi = edges[m], edges[m + 1], edges[m + 2]
        rising = (bin_freqs - lo) / (mid - lo)
        falling = (hi - bin_freqs) / (hi - mid)
        fb[m] = np.maximum(0.0, np.minimum(rising, falling))
    return fb


def filter_centers(bands=N_BANDS, fmin=FMIN, fmax=FMAX):
    """Center frequency (Hz) of each triangular filter."""
    edges = _mel_to_hz(np.linspace(_hz_to_mel(fmin), _hz_to_mel(fmax), bands + 2))
    return edges[1:-1]


def mel_spectrogram(wave, sr=SAMPLE_RATE):
    """log(clamp(filterbank @ |STFT|, floor)) as a MelSpectrogram."""
    mags = stft(wave)
    fb = mel_filterbank(sr=sr)
    values = np.log(np.maximum(fb @ mags.T, LOG_FLOOR)).T
    return MelSpectrogram(values=values, sample_rate=sr, hop=HOP_LENGTH)


def pitch_track(wave, hop=HOP_LENGTH, sr=SAMPLE_RATE):
    """Frame-level f0 by normalized autocorrelation; 0 marks unvoiced.

    Searches lags between sr/600 and sr/50 samples; a frame whose best
    normalized peak falls below 0.3 is unvoiced. Among near-maximal local
    peaks the shortest lag wins, which resolves period multiples.
    """
    wave = np.asarray(wave, dtype=np.float64)
    frames = _frames(wave, PITCH_FRAME, hop)
    lag_min = int(np.ceil(sr / PITCH_FMAX))
    lag_max = int(np.floor(sr / PITCH_FMIN))
    f0 = np.zeros(frames.shape[0])
    n = PITCH_FRAME
    for t, frame in enumerate(frames):
        x = frame - frame.mean()
        r0 = float(x @ x)
        if r0 <= 0.0:
            continue
        spec = np.fft.rfft(x, 2 * n)
        r = np.fft.irfft(spec * np.conj(spec))[:lag_max + 2] / r0
        seg = r[lag_min:lag_max + 1]
        vmax = seg.max()
        if vmax < VOICING_THRESHOLD:
            continue
        level = max(VOICING_THRESHOLD, 0.85 * vmax)
        best_lag = 0
        for lag in range(lag_min, lag_max + 1):
            if r[lag] >= level and r[lag] >= r[lag - 1] and r[lag] >= r[lag + 1]:
                best_lag = lag
                break
        if best_lag == 0:
            best_lag = lag_min + int(np.argmax(seg))
        f0[t] = sr / best_lag
    return f0


def energy_track(mel: MelSpectrogram):
    """Per-frame log of the mean mel-band energy."""
    return np.log(np.exp(mel.values).mean(axis=1))


def prosody_targets(wave, sr=SAMPLE_RATE):
    mel = mel_spectrogram(wave, sr)
    return ProsodyTargets(pitch=pitch_track(wave, sr=sr), energy=energy_track(mel))


def cepstra(mel: MelSpectrogram, n_coeffs=MCD_COEFFS):
    """DCT-II (orthogonal) cepstra of log-mels, coefficients 1..n (c0 dropped)."""
    return dct(mel.values, type=2, axis=1, norm="ortho")[:, 1:n_coeffs + 1]


def mcd(a, b):
    """Mel-cepstral distortion in dB between equal-length cepstra matrices."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"cepstra shapes differ: {a.shape} vs {b.shape}; use mcd_dtw")
    return MCD_SCALE * float(np.sqrt(((a - b) ** 2).sum(axis=1)).mean())


def dtw_path(cost):
    """Minimum-total-cost monotonic warping path through a cost matrix.

    Steps are {(1,0),(0,1),(1,1)} from (0,0) to the opposite corner; ties
    prefer the diagonal step, then (1,0). Returns an int64 (P, 2) array.
    """
    cost = np.ascontiguousarray(cost, dtype=np.float64)
    if cost.ndim != 2 or cost.size == 0:
        raise ValueError(f"cost matrix must be non-empty 2-D, got shape {cost.shape}")
    if cost.min() < 0:
        raise ValueError("cost matrix must be nonnegative")
    _, path = kernels.dtw_accum(cost)
    return path


def mcd_dtw(mel_a: MelSpectrogram, mel_b: MelSpectrogram):
    """MCD in dB averaged along the DTW-optimal frame pairing."""
    ca = cepstra(mel_a)
    cb = cepstra(mel_b)
    if ca.shape[0] == 0 or cb.shape[0] == 0:
        raise ValueError("mcd_dtw: empty mel input")
    # direct differences: exact zeros for identical frames
    diff = ca[:, None, :] - cb[None, :, :]
    dist = MCD_SCALE * np.sqrt((diff ** 2).sum(axis=2))
    path = dtw_path(dist)
    return float(dist[path[:, 0], path[:, 1]].mean())


# --- file formats ---

def read_wav(path):
    """Read PCM16 mono RIFF WAV; returns (float64 samples in [-1, 1], rate)."""
    with wavemod.open(str(path), "rb") as f:
        if f.getnchannels() != 1:
            raise ValueError(f"{path}: expected mono, got {f.getnchannels()} channels")
        if f.getsampwidth() != 2:
            raise ValueError(f"{path}: expected 16-bit PCM, got {8 * f.getsampwidth()}-bit")
        rate = f.getframerate()
        raw = f.readframes(f.getnframes())
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32767.0
    return samples, rate


def write_wav(path, samples, sr=SAMPLE_RATE):
    data = np.clip(np.asarray(samples, dtype=np.float64), -1.0, 1.0)
    pcm = np.round(data * 32767.0).astype("<i2")
    with wavemod.open(str(path), "wb") as f:
        f.setnchannels(1)
        f.setsampwidth(2)
        f.setframerate(sr)
        f.writeframes(pcm.tobytes())


MEL_MAGIC = b"MEL0"


def save_mel(path, mel: MelSpectrogram):
    """16-byte header (magic, T, bands, reserved as little-endian u32) then
    row-major float64 values."""
    header = MEL_MAGIC + struct.pack("<III", mel.frames, mel.bands, 0)
    with open(path, "wb") as f:
        f.write(header)
        f.write(np.ascontiguousarray(mel.values, dtype="<f8").tobytes())


def load_mel(path):
    with open(path, "rb") as f:
        header = f.read(16)
        if len(header) != 16 or header[:4] != MEL_MAGIC:
            raise ValueError(f"{path}: not a MEL0 file")
        t_len, bands, _ = struct.unpack("<III", header[4:])
        values = np.frombuffer(f.read(t_len * bands * 8), dtype="<f8")
    if values.size != t_len * bands:
        raise ValueError(f"{path}: truncated mel data")
    return MelSpectrogram(values=values.reshape(t_len, bands).copy())
