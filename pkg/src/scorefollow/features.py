"""Normalized constant-Q magnitude features.

Each frame is 128 ms of 16 kHz audio taken every 20 ms.  Bin ``d`` is the
magnitude of the frame's inner product with a Hann-windowed complex
exponential at ``55 * 2**(d/12)`` Hz; the window spans ``Q * sr / f``
samples (Q = 16), truncated to the frame and centred in it.  Magnitudes
are scaled to sum to one, which removes the overall loudness.
"""
from __future__ import annotations

import csv
import json
import math
import wave
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

EPS = 1e-12


class FeatureError(ValueError):
    pass


@dataclass(frozen=True)
class CqtConfig:
    sample_rate: int = 16000
    frame_s: float = 0.128
    hop_s: float = 0.020
    f_min: float = 55.0
    f_max: float = 7040.0
    bins_per_octave: int = 12
    quality: float = 16.0

    def __post_init__(self):
        if self.f_max >= self.sample_rate / 2:
            raise FeatureError("f_max must lie below the Nyquist frequency")
        if self.f_min <= 0 or self.f_max <= self.f_min:
            raise FeatureError("need 0 < f_min < f_max")

    @property
    def D(self) -> int:
        return int(round(self.bins_per_octave * math.log2(self.f_max / self.f_min))) + 1

    @property
    def frame_len(self) -> int:
        return int(round(self.frame_s * self.sample_rate))

    @property
    def hop_len(self) -> int:
        return int(round(self.hop_s * self.sample_rate))

    @property
    def frequencies(self) -> np.ndarray:
        return self.f_min * 2.0 ** (np.arange(self.D) / self.bins_per_octave)

    @cached_property
    def kernel(self) -> np.ndarray:
        """Complex analysis kernel, shape ``(D, frame_len)``, window-sum normalized."""
        n = self.frame_len
        K = np.zeros((self.D, n), dtype=np.complex128)
        for d, f in enumerate(self.frequencies):
            width = min(n, math.ceil(self.quality * self.sample_rate / f))
            start = (n - width) // 2
            win = np.hanning(width)
            t = np.arange(width)
            K[d, start : start + width] = win * np.exp(-2j * np.pi * f * t / self.sample_rate) / win.sum()
        return K

    def bin_of(self, freq: float) -> int:
        """Nearest CQT bin for ``freq`` (may fall outside ``0..D-1``)."""
        return int(round(self.bins_per_octave * math.log2(freq / self.f_min)))


DEFAULT_CQT = CqtConfig()


@dataclass(frozen=True, eq=False)
class FeatureFrame:
    values: np.ndarray
    t: int = 0

    def time_s(self, hop_s: float = DEFAULT_CQT.hop_s) -> float:
        return self.t * hop_s

    @property
    def D(self) -> int:
        return len(self.values)


def cqt_frame(samples, cfg: CqtConfig = DEFAULT_CQT, t: int = 0) -> FeatureFrame:
    """Unnormalized CQT magnitudes of one frame of exactly ``cfg.frame_len`` samples."""
    x = np.asarray(samples, dtype=np.float64)
    if x.shape != (cfg.frame_len,):
        raise FeatureError(f"expected {cfg.frame_len} samples, got {x.shape}")
    return FeatureFrame(np.abs(cfg.kernel @ x), t)


def normalize_values(v: np.ndarray) -> np.ndarray:
    """Scale rows of ``v`` to unit sum; rows summing below 1e-12 become uniform."""
    v = np.asarray(v, dtype=np.float64)
    total = v.sum(axis=-1, keepdims=True)
    uniform = np.full_like(v, 1.0 / v.shape[-1])
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(total < EPS, uniform, v / np.where(total < EPS, 1.0, total))


def normalize(frame: FeatureFrame) -> FeatureFrame:
    return FeatureFrame(normalize_values(frame.values), frame.t)


def n_frames(n_samples: int, cfg: CqtConfig = DEFAULT_CQT) -> int:
    """Frames produced for ``n_samples``: every frame whose start lies inside the signal."""
    if n_samples <= 0:
        return 0
    return -(-n_samples // cfg.hop_len)


def frame_signal(x: np.ndarray, cfg: CqtConfig = DEFAULT_CQT) -> np.ndarray:
    """Cut ``x`` into overlapping frames, zero-padding the tail."""
    x = np.asarray(x, dtype=np.float64)
    T = n_frames(len(x), cfg)
    if T == 0:
        return np.zeros((0, cfg.frame_len))
    padded = np.zeros((T - 1) * cfg.hop_len + cfg.frame_len)
    padded[: len(x)] = x
    idx = np.arange(T)[:, None] * cfg.hop_len + np.arange(cfg.frame_len)[None, :]
    return padded[idx]


def extract_features(x, cfg: CqtConfig = DEFAULT_CQT) -> np.ndarray:
    """Normalized CQT of a whole signal, shape ``(T, D)``."""
    frames = frame_signal(x, cfg)
    if len(frames) == 0:
        return np.zeros((0, cfg.D))
    return normalize_values(np.abs(frames @ cfg.kernel.T))


def stream_frames(
    audio: Iterable | np.ndarray,
    cfg: CqtConfig = DEFAULT_CQT,
    sample_rate: int | None = None,
) -> Iterator[FeatureFrame]:
    """Yield normalized frames as soon as their samples have arrived.

    ``audio`` is either a 1-D array or an iterable of sample chunks.  The
    frames are identical to :func:`extract_features` on the concatenated
    signal.
    """
    if sample_rate is not None and sample_rate != cfg.sample_rate:
        raise FeatureError(f"sample rate {sample_rate} Hz, expected {cfg.sample_rate} Hz")
    if isinstance(audio, np.ndarray):
        audio = [audio]
    flen, hop = cfg.frame_len, cfg.hop_len
    buf = np.zeros(0)
    t = 0
    consumed = 0  # absolute sample index of buf[0]
    total = 0
    for chunk in audio:
        chunk = np.asarray(chunk, dtype=np.float64).ravel()
        total += len(chunk)
        buf = np.concatenate([buf, chunk])
        while t * hop + flen <= consumed + len(buf):
            start = t * hop - consumed
            yield normalize(cqt_frame(buf[start : start + flen], cfg, t))
            t += 1
        drop = t * hop - consumed
        if drop > 0:
            buf = buf[drop:]
            consumed += drop
    while t * hop < total:
        start = t * hop - consumed
        seg = np.zeros(flen)
        avail = buf[start:]
        seg[: len(avail)] = avail[:flen]
        yield normalize(cqt_frame(seg, cfg, t))
        t += 1


def read_wav(path, cfg: CqtConfig = DEFAULT_CQT) -> np.ndarray:
    """Read 16-bit PCM mono audio at ``cfg.sample_rate`` as floats in [-1, 1)."""
    with wave.open(str(path), "rb") as w:
        if w.getnchannels() != 1:
            raise FeatureError("only mono WAV files are supported")
        if w.getsampwidth() != 2:
            raise FeatureError("only 16-bit PCM WAV files are supported")
        if w.getframerate() != cfg.sample_rate:
            raise FeatureError(
                f"sample rate {w.getframerate()} Hz, expected {cfg.sample_rate} Hz (no resampling)"
            )
        data = w.readframes(w.getnframes())
    return np.frombuffer(data, dtype="<i2").astype(np.float64) / 32768.0


def write_wav(path, x: np.ndarray, sample_rate: int = DEFAULT_CQT.sample_rate) -> None:
    pcm = np.clip(np.round(np.asarray(x) * 32767.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(sample_rate)
        w.writeframes(pcm.tobytes())


def write_features(path, Y: np.ndarray) -> None:
    """Dump frames as JSONL (``{"t", "y"}`` per line) or CSV by file suffix."""
    path = Path(path)
    Y = np.asarray(Y)
    if path.suffix == ".csv":
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + [f"y{d}" for d in range(Y.shape[1])])
            for t, row in enumerate(Y):
                w.writerow([t] + [repr(float(v)) for v in row])
    else:
        with path.open("w") as fh:
            for t, row in enumerate(Y):
                fh.write(json.dumps({"t": t, "y": [float(v) for v in row]}) + "\n")


def parse_feature_line(line: str) -> np.ndarray:
    obj = json.loads(line)
    if isinstance(obj, dict):
        obj = obj["y"]
    return np.asarray(obj, dtype=np.float64)


def read_features(path) -> np.ndarray:
    path = Path(path)
    if path.suffix == ".csv":
        with path.open(newline="") as fh:
            rows = list(csv.reader(fh))
        return np.array([[float(v) for v in r[1:]] for r in rows[1:]], dtype=np.float64)
    rows = [parse_feature_line(line) for line in path.read_text().splitlines() if line.strip()]
    if not rows:
        return np.zeros((0, DEFAULT_CQT.D))
    return np.vstack(rows)
