"""Synthetic corpus generation and corpus manifests.

Utterances are rendered as phase-continuous harmonic tones: each phoneme
id owns a fixed base pitch and harmonic amplitude profile (so every
occurrence sounds alike), a base duration derived from its id, and a
per-occurrence pitch contour (constant, rising, or falling). Ground-truth
durations and frame pitch are written next to the WAVs so tests can check
the aligner and duration predictor against known answers.

Manifest format (UTF-8, tab-separated, one utterance per line):
    id <TAB> space-separated phoneme ids <TAB> wave path <TAB> split
Wave paths are relative to the manifest's directory.
"""

import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import dsp

N_HARMONICS = 5


@dataclass
class SyntheticSpec:
    utterances: int = 110
    test_utterances: int = 10
    vocab_size: int = 40
    min_phonemes: int = 3
    max_phonemes: int = 8
    dur_min: int = 4          # per-phoneme base duration range, frames
    dur_max: int = 12
    duration_jitter: float = 0.2
    contours: tuple = ("constant", "rising", "falling")
    noise_level: float = 0.003
    seed: int = 1234

    def __post_init__(self):
        if self.dur_min < 1 or self.dur_max < self.dur_min:
            raise ValueError("need 1 <= dur_min <= dur_max")
        if self.test_utterances >= self.utterances:
            raise ValueError("test_utterances must leave at least one training utterance")


def phoneme_voice(phoneme_id):
    """Fixed (base_f0, harmonic amplitudes) for a phoneme id."""
    rng = np.random.default_rng(77000 + int(phoneme_id))
    f0 = rng.uniform(120.0, 280.0)
    raw = rng.uniform(0.1, 1.0, size=N_HARMONICS)
    level = rng.uniform(0.25, 0.45)
    return f0, level * raw / raw.sum()


def base_duration(phoneme_id, spec: SyntheticSpec):
    """Deterministic per-id base duration spread across the configured range."""
    if spec.vocab_size == 1:
        return float(spec.dur_min)
    frac = phoneme_id / (spec.vocab_size - 1)
    return spec.dur_min + frac * (spec.dur_max - spec.dur_min)


def _render(ids, durations, contours, rng, spec, hop, sr):
    """Phase-continuous harmonic rendering; returns (wave, frame_pitch)."""
    total_frames = int(np.sum(durations))
    n_samples = total_frames * hop + (dsp.WIN_LENGTH - hop)
    f0_at = np.zeros(n_samples)
    amp_at = np.zeros((n_samples, N_HARMONICS))
    pos = 0
    for pid, d, contour in zip(ids, durations, contours):
        f0, amps = phoneme_voice(pid)
        span = d * hop
        t_rel = np.arange(span) / span
        if contour == "rising":
            seg_f0 = f0 * (1.0 + 0.15 * t_rel)
        elif contour == "falling":
            seg_f0 = f0 * (1.0 - 0.15 * t_rel)
        else:
            seg_f0 = np.full(span, f0)
        f0_at[pos:pos + span] = seg_f0
        amp_at[pos:pos + span] = amps
        pos += span
    # the analysis tail continues the last phoneme
    f0_at[pos:] = f0_at[pos - 1]
    amp_at[pos:] = amp_at[pos - 1]

    phase = 2.0 * np.pi * np.cumsum(f0_at) / sr
    wave = np.zeros(n_samples)
    for h in range(N_HARMONICS):
        wave += amp_at[:, h] * np.sin((h + 1) * phase)
    ramp = min(64, n_samples // 4)
    envelope = np.ones(n_samples)
    envelope[:ramp] = np.linspace(0.0, 1.0, ramp)
    envelope[-ramp:] = np.linspace(1.0, 0.0, ramp)
    wave = wave * envelope + spec.noise_level * rng.standard_normal(n_samples)
    # ground-truth pitch sampled at window centers, one value per frame
    centers = hop * np.arange(total_frames) + dsp.WIN_LENGTH // 2
    return np.clip(wave, -1.0, 1.0), f0_at[np.minimum(centers, n_samples - 1)]


@dataclass
class ManifestEntry:
    utt_id: str
    phoneme_ids: np.ndarray
    wave_path: str  # relative to the manifest directory
    split: str


@dataclass
class CorpusManifest:
    entries: list
    root: Path = field(default_factory=Path)

    def split(self, name):
        return [e for e in self.entries if e.split == name]

    def validate(self):
        seen = set()
        for e in self.entries:
            if e.utt_id in seen:
                raise ValueError(f"duplicate utterance id {e.utt_id!r}")
            seen.add(e.utt_id)
            path = self.root / e.wave_path
            if not path.is_file():
                raise FileNotFoundError(f"wave file missing: {path}")

    def write(self, path):
        path = Path(path)
        with open(path, "w", encoding="utf-8") as f:
            for e in self.entries:
                ids = " ".join(str(int(i)) for i in e.phoneme_ids)
                f.write(f"{e.utt_id}\t{ids}\t{e.wave_path}\t{e.split}\n")

    @classmethod
    def read(cls, path):
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(f"manifest not found: {path}")
        entries = []
        with open(path, encoding="utf-8") as f:
            for ln, line in enumerate(f, 1):
                line = line.rstrip("\n")
                if not line:
                    continue
                parts = line.split("\t")
                if len(parts) != 4:
                    raise ValueError(f"{path}:{ln}: expected 4 tab-separated fields, "
                                     f"got {len(parts)}")
                utt_id, ids, wave_path, split = parts
                entries.append(ManifestEntry(
                    utt_id=utt_id,
                    phoneme_ids=np.array([int(t) for t in ids.split()], dtype=np.int64),
                    wave_path=wave_path,
                    split=split))
        return cls(entries=entries, root=path.parent)


def gen_corpus(spec: SyntheticSpec, out_dir):
    """Render a synthetic corpus into out_dir; returns its CorpusManifest.

    Layout: wavs/<id>.wav, truth/<id>.dur.txt (frame durations) and
    truth/<id>.f0.txt (per-frame pitch), manifest.tsv at the root.
    """
    out_dir = Path(out_dir)
    try:
        (out_dir / "wavs").mkdir(parents=True, exist_ok=True)
        (out_dir / "truth").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create corpus directory {out_dir}: {exc}")
    if not os.access(out_dir, os.W_OK):
        raise OSError(f"corpus directory {out_dir} is not writable")
    rng = np.random.default_rng(spec.seed)
    entries = []
    for i in range(spec.utterances):
        utt_id = f"utt{i:04d}"
        n_ph = int(rng.integers(spec.min_phonemes, spec.max_phonemes + 1))
        ids = rng.integers(0, spec.vocab_size, size=n_ph)
        durations = np.array([
            max(1, round(base_duration(pid, spec)
                         * (1.0 + rng.uniform(-spec.duration_jitter, spec.duration_jitter))))
            for pid in ids], dtype=np.int64)
        contours = [spec.contours[int(rng.integers(len(spec.contours)))] for _ in ids]
        wave, frame_pitch = _render(ids, durations, contours, rng, spec,
                                    dsp.HOP_LENGTH, dsp.SAMPLE_RATE)
        rel = f"wavs/{utt_id}.wav"
        dsp.write_wav(out_dir / rel, wave)
        np.savetxt(out_dir / "truth" / f"{utt_id}.dur.txt", durations[None], fmt="%d")
        np.savetxt(out_dir / "truth" / f"{utt_id}.f0.txt", frame_pitch[None], fmt="%.4f")
        split = "test" if i >= spec.utterances - spec.test_utterances else "train"
        entries.append(ManifestEntry(utt_id, ids, rel, split))
    manifest = CorpusManifest(entries=entries, root=out_dir)
    manifest.write(out_dir / "manifest.tsv")
    return manifest


@dataclass
class Utterance:
    """Loaded training example with DSP targets attached."""

    utt_id: str
    ids: np.ndarray
    wave: np.ndarray
    mel: dsp.MelSpectrogram
    pitch: np.ndarray    # Hz per frame, 0 unvoiced (tracker output, not truth)
    energy: np.ndarray
    gt_durations: np.ndarray = None
    gt_pitch: np.ndarray = None

    @property
    def frames(self):
        return self.mel.frames


def load_utterances(manifest: CorpusManifest, split):
    """Load waves and compute mel/pitch/energy targets for one split."""
    utts = []
    for e in manifest.split(split):
        wave, rate = dsp.read_wav(manifest.root / e.wave_path)
        mel = dsp.mel_spectrogram(wave, sr=rate)
        utt = Utterance(
            utt_id=e.utt_id,
            ids=e.phoneme_ids.copy(),
            wave=wave,
            mel=mel,
            pitch=dsp.pitch_track(wave, sr=rate),
            energy=dsp.energy_track(mel))
        dur_path = manifest.root / "truth" / f"{e.utt_id}.dur.txt"
        f0_path = manifest.root / "truth" / f"{e.utt_id}.f0.txt"
        if dur_path.is_file():
            utt.gt_durations = np.atleast_1d(np.loadtxt(dur_path, dtype=np.int64))
        if f0_path.is_file():
            utt.gt_pitch = np.atleast_1d(np.loadtxt(f0_path))
        utts.append(utt)
    return utts


def pitch_stats(utterances):
    """Mean/std of voiced-frame pitch across a corpus, for normalization."""
    voiced = np.concatenate([u.pitch[u.pitch > 0] for u in utterances]) if utterances else []
    voiced = np.asarray(voiced)
    if voiced.size == 0:
        return 0.0, 1.0
    return float(voiced.mean()), float(max(voiced.std(), 1e-6))


def ljspeech_manifest(metadata_path, wav_dir, out_path, vocab_size=40):
    """Build a manifest from an LJSpeech-style layout (metadata.csv plus a
    WAV directory). Characters of the normalized transcript stand in for
    phonemes (grapheme-to-phoneme conversion is out of scope); the
    character table is frozen into <out_path>.chars for reference.
    """
    metadata_path = Path(metadata_path)
    wav_dir = Path(wav_dir)
    rows = []
    charset = set()
    with open(metadata_path, encoding="utf-8") as f:
        for line in f:
            parts = line.rstrip("\n").split("|")
            if len(parts) < 2:
                continue
            utt_id = parts[0]
            text = parts[-1].lower()
            rows.append((utt_id, text))
            charset.update(text)
    table = {c: i for i, c in enumerate(sorted(charset))}
    if len(table) > vocab_size:
        raise ValueError(f"transcripts use {len(table)} symbols, vocabulary holds {vocab_size}")
    out_path = Path(out_path)
    entries = []
    for utt_id, text in rows:
        ids = np.array([table[c] for c in text], dtype=np.int64)
        rel = os.path.relpath(wav_dir / f"{utt_id}.wav", out_path.parent)
        entries.append(ManifestEntry(utt_id, ids, rel, "train"))
    manifest = CorpusManifest(entries=entries, root=out_path.parent)
    manifest.write(out_path)
    with open(str(out_path) + ".chars", "w", encoding="utf-8") as f:
        for c, i in table.items():
            f.write(f"{i}\t{c!r}\n")
    return manifest
