"""Synthetic labeled corpus, WAV framing, and manifest handling.

Each corpus class is band-limited Gaussian noise with a fixed amplitude
modulation rate, so the spectral band is a ground truth for the acoustic
relevance weights and the AM rate for the modulation relevance weights.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, InsufficientSamples
from .wav_io import Waveform, write_wav

EDGE_WIDTH_HZ = 50.0  # raised-cosine band-edge rolloff
AM_DEPTH = 0.8
PEAK_LEVEL = 0.9


@dataclass
class FramePatch:
    """t x s matrix of raw sample frames plus the class of its clip."""

    frames: np.ndarray
    hop: int
    center_label: int = -1

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def frame_len(self) -> int:
        return self.frames.shape[1]


@dataclass
class ClassSpec:
    name: str
    band_low_hz: float
    band_high_hz: float
    am_rate_hz: float


@dataclass
class CorpusSpec:
    classes: list[ClassSpec]
    clips_per_class: int = 200
    clip_seconds: float = 1.2
    sample_rate: int = 16000
    seed: int = 0

    def __post_init__(self):
        if not self.classes:
            raise ConfigError("corpus needs at least one class")
        if self.clips_per_class <= 0 or self.clip_seconds <= 0 or self.sample_rate <= 0:
            raise ConfigError("clips_per_class, clip_seconds, sample_rate must be positive")
        nyquist = self.sample_rate / 2
        for c in self.classes:
            if not (0 <= c.band_low_hz < c.band_high_hz <= nyquist):
                raise ConfigError(f"class {c.name}: band [{c.band_low_hz}, {c.band_high_hz}] "
                                  f"must satisfy 0 <= low < high <= {nyquist}")
            if c.am_rate_hz < 0:
                raise ConfigError(f"class {c.name}: am_rate_hz must be >= 0")

    @property
    def clip_samples(self) -> int:
        return int(round(self.clip_seconds * self.sample_rate))

    def to_dict(self) -> dict:
        return {
            "classes": [vars(c) for c in self.classes],
            "clips_per_class": self.clips_per_class,
            "clip_seconds": self.clip_seconds,
            "sample_rate": self.sample_rate,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CorpusSpec":
        known = {"classes", "clips_per_class", "clip_seconds", "sample_rate", "seed"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown corpus spec keys: {sorted(unknown)}")
        try:
            classes = [ClassSpec(**c) for c in d["classes"]]
        except TypeError as exc:
            raise ConfigError(f"bad class entry: {exc}") from exc
        rest = {k: v for k, v in d.items() if k != "classes"}
        return cls(classes=classes, **rest)

    @classmethod
    def from_json_file(cls, path) -> "CorpusSpec":
        with open(path) as fh:
            try:
                d = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        return cls.from_dict(d)


def default_corpus_spec(clips_per_class: int = 200, seed: int = 0) -> CorpusSpec:
    """Four disjoint bands crossed with alternating 4/16 Hz AM rates."""
    bands = [(100.0, 1000.0), (1000.0, 2500.0), (2500.0, 5000.0), (5000.0, 7800.0)]
    rates = [4.0, 16.0, 4.0, 16.0]
    classes = [
        ClassSpec(name=f"b{int(lo)}-{int(hi)}_am{int(r)}",
                  band_low_hz=lo, band_high_hz=hi, am_rate_hz=r)
        for (lo, hi), r in zip(bands, rates)
    ]
    return CorpusSpec(classes=classes, clips_per_class=clips_per_class, seed=seed)


def band_mask(freqs_hz: np.ndarray, lo: float, hi: float,
              edge_width: float = EDGE_WIDTH_HZ) -> np.ndarray:
    """Unity inside [lo, hi], half-cosine rolloff over edge_width outside."""
    up = np.clip((freqs_hz - (lo - edge_width)) / edge_width, 0.0, 1.0)
    down = np.clip(((hi + edge_width) - freqs_hz) / edge_width, 0.0, 1.0)
    return (0.5 - 0.5 * np.cos(np.pi * up)) * (0.5 - 0.5 * np.cos(np.pi * down))


def synth_clip(spec: CorpusSpec, class_index: int, clip_index: int) -> Waveform:
    """One clip; a pure function of (spec, seed, class, clip index)."""
    cls = spec.classes[class_index]
    n = spec.clip_samples
    rng = np.random.default_rng([spec.seed, class_index, clip_index])
    white = rng.standard_normal(n)
    spectrum = np.fft.rfft(white)
    freqs = np.fft.rfftfreq(n, 1.0 / spec.sample_rate)
    shaped = np.fft.irfft(spectrum * band_mask(freqs, cls.band_low_hz, cls.band_high_hz), n=n)
    tau = np.arange(n) / spec.sample_rate
    envelope = (1.0 + AM_DEPTH * np.sin(2 * np.pi * cls.am_rate_hz * tau)) / (1.0 + AM_DEPTH)
    clip = shaped * envelope
    peak = np.max(np.abs(clip))
    if peak > 0:
        clip = clip * (PEAK_LEVEL / peak)
    return Waveform(samples=clip, sample_rate=spec.sample_rate)


def split_of_clip(clip_index: int, clips_per_class: int) -> str:
    """80/10/10 train/dev/test by clip index."""
    if clip_index < int(0.8 * clips_per_class):
        return "train"
    if clip_index < int(0.9 * clips_per_class):
        return "dev"
    return "test"


@dataclass
class ManifestRow:
    path: str
    class_index: int
    class_name: str
    split: str


def synth_corpus(spec: CorpusSpec, out_dir) -> list[ManifestRow]:
    """Write all clips as WAVs under out_dir and return the manifest rows."""
    out_dir = Path(out_dir)
    rows = []
    for ci, cls in enumerate(spec.classes):
        cls_dir = out_dir / cls.name
        cls_dir.mkdir(parents=True, exist_ok=True)
        for k in range(spec.clips_per_class):
            wav = synth_clip(spec, ci, k)
            rel = f"{cls.name}/clip_{k:04d}.wav"
            write_wav(out_dir / rel, wav.samples, wav.sample_rate)
            rows.append(ManifestRow(rel, ci, cls.name, split_of_clip(k, spec.clips_per_class)))
    write_manifest(out_dir / "manifest.csv", rows)
    with open(out_dir / "corpus_spec.json", "w") as fh:
        json.dump(spec.to_dict(), fh, indent=2)
    return rows


def write_manifest(path, rows: list[ManifestRow]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["path", "class_index", "class_name", "split"])
        for r in rows:
            writer.writerow([r.path, r.class_index, r.class_name, r.split])


def read_manifest(data_dir) -> list[ManifestRow]:
    data_dir = Path(data_dir)
    manifest = data_dir / "manifest.csv"
    if not manifest.exists():
        raise ConfigError(f"{manifest} not found; run synth-data first")
    rows = []
    with open(manifest, newline="") as fh:
        for rec in csv.DictReader(fh):
            rows.append(ManifestRow(rec["path"], int(rec["class_index"]),
                                    rec["class_name"], rec["split"]))
    return rows


def frame_signal(w: Waveform, frame_len: int, hop: int, num_frames: int,
                 offset: int = 0) -> FramePatch:
    """Slice num_frames rectangular frames of frame_len samples, hop apart.

    No analysis window is applied; the learned kernels provide the spectral
    shaping.
    """
    needed = offset + frame_len + (num_frames - 1) * hop
    if len(w.samples) < needed:
        raise InsufficientSamples(
            f"need {needed} samples for {num_frames} frames of {frame_len} at hop {hop}, "
            f"got {len(w.samples)}")
    idx = offset + np.arange(num_frames)[:, None] * hop + np.arange(frame_len)[None, :]
    return FramePatch(frames=w.samples[idx], hop=hop)


def extract_patches(w: Waveform, frame_len: int, hop: int, num_frames: int,
                    stride_seconds: float = 0.5) -> list[FramePatch]:
    """All patches available at the given start stride (clip-global labels)."""
    stride = max(1, int(round(stride_seconds * w.sample_rate)))
    span = frame_len + (num_frames - 1) * hop
    patches = []
    start = 0
    while start + span <= len(w.samples):
        patches.append(frame_signal(w, frame_len, hop, num_frames, offset=start))
        start += stride
    return patches
