"""Waveform-to-feature extraction aligned to the video frame rate.

Every extractor obeys the same frame-count law: a waveform of n samples
at rate r produces exactly floor(fps * n / r) feature rows. Two
extractors are provided: a self-contained log-mel filterbank (default,
no pretrained weights) and a file-backed reader for features precomputed
by an external speech model.
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.io.wavfile

from .errors import DataError, EmptyAudio, FeatureMismatch
from .io import read_features

LOG_FLOOR = 1e-10


@dataclass(frozen=True)
class Waveform:
    """Mono audio samples in [-1, 1] plus their sample rate in Hz."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64).reshape(-1)
        if self.sample_rate <= 0:
            raise DataError("sample rate must be positive")
        if not np.all(np.isfinite(samples)):
            raise DataError("waveform contains non-finite samples")
        object.__setattr__(self, "samples", samples)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass(frozen=True)
class AudioFeatureSequence:
    """Per-video-frame feature matrix [frames, dim] at a given fps."""

    features: np.ndarray
    fps: float

    def __post_init__(self):
        features = np.asarray(self.features, dtype=np.float64)
        if features.ndim != 2:
            raise DataError(f"features must be 2-D, got shape {features.shape}")
        if not np.all(np.isfinite(features)):
            raise DataError("features contain non-finite values")
        object.__setattr__(self, "features", features)

    @property
    def frames(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]


def frame_count(n_samples: int, sample_rate: float, fps: float) -> int:
    """The frame-count law: floor(fps * n / r)."""
    return int(np.floor(fps * n_samples / sample_rate))


def load_wav(path) -> Waveform:
    """Read a PCM WAV file, averaging channels to mono."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"audio file not found: {path}")
    rate, data = scipy.io.wavfile.read(path)
    data = np.asarray(data)
    if data.ndim == 2:
        data = data.mean(axis=1)
    if np.issubdtype(data.dtype, np.integer):
        data = data.astype(np.float64) / float(np.iinfo(data.dtype).max + 1)
    return Waveform(samples=data, sample_rate=int(rate))


def save_wav(path, waveform: Waveform):
    pcm = np.clip(waveform.samples, -1.0, 1.0)
    scipy.io.wavfile.write(Path(path), waveform.sample_rate, (pcm * 32767).astype(np.int16))


def _mel(hz):
    return 2595.0 * np.log10(1.0 + np.asarray(hz, dtype=np.float64) / 700.0)


def _mel_inv(mel):
    return 700.0 * (10.0 ** (np.asarray(mel, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_mels: int, n_fft: int, sample_rate: float) -> np.ndarray:
    """Triangular mel filters over the rFFT bins, [n_mels, n_fft//2 + 1]."""
    n_bins = n_fft // 2 + 1
    fft_freqs = np.arange(n_bins) * sample_rate / n_fft
    mel_edges = np.linspace(_mel(0.0), _mel(sample_rate / 2.0), n_mels + 2)
    hz_edges = _mel_inv(mel_edges)
    bank = np.zeros((n_mels, n_bins))
    for m in range(n_mels):
        lo, center, hi = hz_edges[m], hz_edges[m + 1], hz_edges[m + 2]
        up = (fft_freqs - lo) / max(center - lo, 1e-12)
        down = (hi - fft_freqs) / max(hi - center, 1e-12)
        bank[m] = np.clip(np.minimum(up, down), 0.0, None)
    return bank


class LogMelExtractor:
    """Log-compressed mel filterbank energies, one window per video frame.

    Each analysis window (default 25 ms, Hann) is centered on its video
    frame; boundary windows are zero-padded so the frame-count law holds.
    """

    def __init__(self, n_mels: int = 80, window_seconds: float = 0.025):
        if n_mels < 1:
            raise DataError("n_mels must be >= 1")
        self.n_mels = n_mels
        self.window_seconds = window_seconds

    @property
    def dim(self) -> int:
        return self.n_mels

    def cache_token(self) -> str:
        return f"logmel-{self.n_mels}-{self.window_seconds}"

    def compute(self, waveform: Waveform, fps: float) -> np.ndarray:
        samples = waveform.samples
        rate = waveform.sample_rate
        n_frames = frame_count(len(samples), rate, fps)
        win = max(2, int(round(self.window_seconds * rate)))
        n_fft = 1 << int(np.ceil(np.log2(win)))
        bank = mel_filterbank(self.n_mels, n_fft, rate)
        hann = np.hanning(win)
        hop = rate / fps

        feats = np.empty((n_frames, self.n_mels))
        half = win // 2
        for t in range(n_frames):
            center = int(round((t + 0.5) * hop))
            lo, hi = center - half, center - half + win
            chunk = np.zeros(win)
            src_lo, src_hi = max(lo, 0), min(hi, len(samples))
            if src_hi > src_lo:
                chunk[src_lo - lo : src_hi - lo] = samples[src_lo:src_hi]
            spectrum = np.abs(np.fft.rfft(chunk * hann, n=n_fft)) ** 2
            feats[t] = np.log(bank @ spectrum + LOG_FLOOR)
        return feats


class FileBackedExtractor:
    """Reads features precomputed by an external model (.bin + .json)."""

    def __init__(self, path):
        self.path = Path(path)
        if not self.path.exists():
            raise DataError(f"feature file not found: {self.path}")
        self._features, self._fps = read_features(self.path)

    @property
    def dim(self) -> int:
        return self._features.shape[1]

    def cache_token(self):
        return None

    def compute(self, waveform: Waveform, fps: float) -> np.ndarray:
        if abs(self._fps - fps) > 1e-9:
            raise FeatureMismatch(f"{self.path}: stored fps {self._fps} != requested {fps}")
        n_frames = frame_count(len(waveform.samples), waveform.sample_rate, fps)
        if self._features.shape[0] < n_frames:
            raise FeatureMismatch(
                f"{self.path}: {self._features.shape[0]} stored frames < {n_frames} required"
            )
        return self._features[:n_frames]


def extract_features(waveform: Waveform, fps: float, extractor=None) -> AudioFeatureSequence:
    """Run an extractor and enforce the frame-count law on its output.

    Honors the MODA_CACHE env var: when set, self-computed features are
    cached there keyed by waveform content and extractor settings.
    """
    if fps <= 0:
        raise DataError("fps must be positive")
    if extractor is None:
        extractor = LogMelExtractor()
    n = len(waveform.samples)
    if n < waveform.sample_rate / fps:
        raise EmptyAudio(f"waveform has {n} samples, less than one video frame")
    n_frames = frame_count(n, waveform.sample_rate, fps)

    cache_dir = os.environ.get("MODA_CACHE")
    token = extractor.cache_token()
    cache_path = None
    if cache_dir and token:
        digest = hashlib.sha256(
            np.ascontiguousarray(waveform.samples, dtype="<f8").tobytes()
            + f"|{waveform.sample_rate}|{fps}|{token}".encode()
        ).hexdigest()
        cache_path = Path(cache_dir) / f"{digest}.npy"
        if cache_path.exists():
            cached = np.load(cache_path)
            if cached.shape == (n_frames, extractor.dim):
                return AudioFeatureSequence(features=cached, fps=fps)

    feats = extractor.compute(waveform, fps)
    if feats.shape[0] < n_frames:
        raise FeatureMismatch(f"extractor produced {feats.shape[0]} rows, expected {n_frames}")
    feats = feats[:n_frames]

    if cache_path is not None:
        cache_path.parent.mkdir(parents=True, exist_ok=True)
        tmp = cache_path.with_name(cache_path.name + ".tmp.npy")
        np.save(tmp, feats)
        os.replace(tmp, cache_path)
    return AudioFeatureSequence(features=feats, fps=fps)
