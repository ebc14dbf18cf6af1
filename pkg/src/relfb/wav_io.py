"""16-bit PCM mono WAV reading and writing."""

from __future__ import annotations

import wave
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, UnsupportedFormat

INT16_SCALE = 32768.0


@dataclass
class Waveform:
    samples: np.ndarray  # float64, scaled to [-1, 1)
    sample_rate: int

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


def read_wav(path) -> Waveform:
    """Read a 16-bit PCM mono WAV file, scaling samples by 1/32768."""
    try:
        with wave.open(str(path), "rb") as wf:
            channels = wf.getnchannels()
            width = wf.getsampwidth()
            comp = wf.getcomptype()
            rate = wf.getframerate()
            raw = wf.readframes(wf.getnframes())
    except (wave.Error, EOFError) as exc:
        raise FormatError(f"{path}: not a valid RIFF/WAVE file ({exc})") from exc
    if comp != "NONE":
        raise UnsupportedFormat(f"{path}: compressed WAV ({comp}) not supported")
    if channels != 1:
        raise UnsupportedFormat(f"{path}: expected mono, got {channels} channels")
    if width != 2:
        raise UnsupportedFormat(f"{path}: expected 16-bit samples, got {8 * width}-bit")
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / INT16_SCALE
    return Waveform(samples=samples, sample_rate=rate)


def write_wav(path, samples: np.ndarray, sample_rate: int) -> None:
    """Write float samples in [-1, 1] as 16-bit PCM mono; values are clipped."""
    quantized = np.clip(np.rint(np.asarray(samples) * INT16_SCALE), -32768, 32767)
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(int(sample_rate))
        wf.writeframes(quantized.astype("<i2").tobytes())
