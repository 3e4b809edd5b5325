"""Power spectra, log-Mel spectrograms, MFCCs and chroma."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.fft import dct, idct

from .audio_io import AudioClip
from .errors import ParameterError, ResolutionError, ShapeError
from .preprocess import FrameSequence, PreprocessConfig, frame_signal, drop_invalid_frames

N_CHROMA = 12
FEATURE_KINDS = ("mel", "mfcc", "chroma", "combined")


@dataclass(frozen=True)
class FeatureConfig:
    n_fft: int = 512
    n_mels: int = 64
    n_mfcc: int = 13
    fmin: float = 50.0
    fmax: float = 8000.0
    floor: float = 1e-10
    ref_a4: float = 440.0
    chroma_fmin: float = 30.0
    rate: int = 16000


@dataclass
class FeatureMatrix:
    data: np.ndarray
    feature_kind: str
    params: dict = field(default_factory=dict)
    clip_id: str = ""

    def __post_init__(self):
        if self.feature_kind not in FEATURE_KINDS:
            raise ParameterError(f"unknown feature_kind {self.feature_kind!r}")
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2:
            raise ShapeError("FeatureMatrix data must be 2-D (frames x features)")
        if not np.all(np.isfinite(self.data)):
            raise ParameterError("FeatureMatrix entries must be finite")

    @property
    def n_frames(self) -> int:
        return self.data.shape[0]

    @property
    def column_names(self) -> list:
        F = self.data.shape[1]
        if self.feature_kind == "combined":
            return combined_column_names(self.params["n_mels"], self.params["n_mfcc"])
        return [f"{self.feature_kind}_{i:02d}" for i in range(F)]


def combined_column_names(n_mels: int, n_mfcc: int) -> list:
    return (
        [f"mel_{i:02d}" for i in range(n_mels)]
        + [f"mfcc_{i:02d}" for i in range(n_mfcc)]
        + [f"chroma_{i:02d}" for i in range(N_CHROMA)]
    )


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def power_spectrogram(frames, n_fft: int = 512) -> np.ndarray:
    """|rfft|^2 of each (already windowed) frame, zero-padded to ``n_fft``."""
    f = frames.frames if isinstance(frames, FrameSequence) else np.atleast_2d(frames)
    if n_fft < 1 or n_fft & (n_fft - 1):
        raise ParameterError(f"n_fft must be a power of two, got {n_fft}")
    if n_fft < f.shape[1]:
        raise ParameterError(f"n_fft {n_fft} shorter than frame length {f.shape[1]}")
    return np.abs(np.fft.rfft(f, n=n_fft, axis=1)) ** 2


def mel_filterbank(n_fft: int, n_mels: int, rate: float, fmin: float = 0.0, fmax: float = None) -> np.ndarray:
    """Triangular filters with peak weight 1, centers equally spaced in mel.

    Filter m rises from edge m to center m+1 and falls to edge m+2 of the
    ``n_mels + 2`` mel-spaced break points.
    """
    fmax = rate / 2 if fmax is None else fmax
    if not 0 <= fmin < fmax <= rate / 2:
        raise ParameterError(f"need 0 <= fmin < fmax <= rate/2, got fmin={fmin} fmax={fmax}")
    if n_mels < 2:
        raise ParameterError("n_mels must be >= 2")
    bin_hz = rate / n_fft
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    if np.min(edges[2:] - edges[:-2]) < bin_hz:
        raise ResolutionError(
            f"{n_mels} mel bands too narrow for n_fft={n_fft}: narrowest filter spans "
            f"{np.min(edges[2:] - edges[:-2]):.2f} Hz < one bin ({bin_hz:.2f} Hz)"
        )
    freqs = np.arange(n_fft // 2 + 1) * bin_hz
    lo, ctr, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs - lo) / (ctr - lo)
    falling = (hi - freqs) / (hi - ctr)
    fb = np.maximum(0.0, np.minimum(rising, falling))
    if np.any(fb.sum(axis=1) <= 0):
        raise ResolutionError("a mel filter covers no FFT bin; reduce n_mels or raise n_fft")
    return fb


def mel_spectrogram(power: np.ndarray, fb: np.ndarray, floor: float = 1e-10, clip_id: str = "", params=None) -> FeatureMatrix:
    """Log mel energies in dB: ``10 log10(max(power @ fb.T, floor))``."""
    power = np.atleast_2d(power)
    if power.shape[1] != fb.shape[1]:
        raise ShapeError(f"power has {power.shape[1]} bins, filterbank expects {fb.shape[1]}")
    if floor <= 0:
        raise ParameterError("floor must be positive")
    energies = power @ fb.T
    return FeatureMatrix(10.0 * np.log10(np.maximum(energies, floor)), "mel", dict(params or {}), clip_id)


def mfcc(mel: FeatureMatrix, n_mfcc: int = 13) -> FeatureMatrix:
    """Orthonormal DCT-II of each log-mel frame, first ``n_mfcc`` coefficients."""
    n_mels = mel.data.shape[1]
    if not 1 <= n_mfcc <= n_mels:
        raise ParameterError(f"n_mfcc must lie in [1, {n_mels}], got {n_mfcc}")
    c = dct(mel.data, type=2, norm="ortho", axis=1)[:, :n_mfcc]
    return FeatureMatrix(c, "mfcc", dict(mel.params), mel.clip_id)


def inverse_mfcc(coeffs: np.ndarray) -> np.ndarray:
    return idct(coeffs, type=2, norm="ortho", axis=1)


def chroma(power: np.ndarray, rate: float, n_fft: int, ref_a4: float = 440.0, fmin: float = 30.0,
           clip_id: str = "", silence: float = 1e-12) -> FeatureMatrix:
    """Pitch-class energy per frame, max-normalized; class 0 is C, 9 is A."""
    if not 400 <= ref_a4 <= 480:
        raise ParameterError(f"ref_a4 must lie in [400, 480], got {ref_a4}")
    power = np.atleast_2d(power)
    if power.shape[1] != n_fft // 2 + 1:
        raise ShapeError(f"power has {power.shape[1]} bins, n_fft={n_fft} implies {n_fft // 2 + 1}")
    freqs = np.arange(power.shape[1]) * rate / n_fft
    keep = freqs >= fmin
    pc = (np.round(12.0 * np.log2(freqs[keep] / ref_a4)).astype(int) + 9) % 12
    assign = np.zeros((power.shape[1], N_CHROMA))
    assign[np.flatnonzero(keep), pc] = 1.0
    c = power @ assign
    peak = c.max(axis=1, keepdims=True)
    out = np.where(peak > silence, c / np.where(peak > silence, peak, 1.0), 0.0)
    return FeatureMatrix(out, "chroma", {"rate": rate, "n_fft": n_fft, "ref_a4": ref_a4}, clip_id)


@dataclass
class FeatureSet:
    mel: FeatureMatrix
    mfcc: FeatureMatrix
    chroma: FeatureMatrix
    combined: FeatureMatrix


def extract_from_frames(frames: FrameSequence, cfg: FeatureConfig = FeatureConfig(), clip_id: str = "") -> FeatureSet:
    rate = frames.origin_rate
    fmax = min(cfg.fmax, rate / 2)
    params = {**asdict(cfg), "rate": rate, "fmax": fmax}
    power = power_spectrogram(frames, cfg.n_fft)
    fb = mel_filterbank(cfg.n_fft, cfg.n_mels, rate, cfg.fmin, fmax)
    mel = mel_spectrogram(power, fb, cfg.floor, clip_id, params)
    mf = mfcc(mel, cfg.n_mfcc)
    ch = chroma(power, rate, cfg.n_fft, cfg.ref_a4, cfg.chroma_fmin, clip_id)
    ch.params = params
    combined = FeatureMatrix(np.hstack([mel.data, mf.data, ch.data]), "combined", params, clip_id)
    return FeatureSet(mel, mf, ch, combined)


def extract_all(clip: AudioClip, cfg: FeatureConfig = FeatureConfig(),
                pre: PreprocessConfig = PreprocessConfig()) -> FeatureSet:
    """Frame an already-conditioned clip and compute mel, MFCC, chroma and
    their frame-aligned concatenation ``[mel | mfcc | chroma]``."""
    frames = drop_invalid_frames(frame_signal(clip, pre.frame_ms, pre.hop_ms, pre.window_kind))
    return extract_from_frames(frames, cfg, clip.source_id)


class Standardizer:
    """Per-column z-scoring fit on training frames only."""

    def __init__(self, mean=None, std=None):
        self.mean = None if mean is None else np.asarray(mean, dtype=np.float64)
        self.std = None if std is None else np.asarray(std, dtype=np.float64)

    def fit(self, matrices) -> "Standardizer":
        stacked = np.vstack([np.asarray(m.data if isinstance(m, FeatureMatrix) else m) for m in matrices])
        self.mean = stacked.mean(axis=0)
        std = stacked.std(axis=0)
        # constant columns pass through centred instead of dividing by zero
        self.std = np.where(std > 1e-12, std, 1.0)
        return self

    def transform(self, x: np.ndarray) -> np.ndarray:
        if self.mean is None:
            raise ParameterError("Standardizer used before fit")
        return (np.asarray(x) - self.mean) / self.std

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d) -> "Standardizer":
        return cls(d["mean"], d["std"])

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "Standardizer":
        return cls.from_dict(json.loads(Path(path).read_text()))


def write_feature_csv(path, data: np.ndarray, names) -> None:
    """One frame per row; header carries the column-name contract."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for row in np.atleast_2d(data):
            w.writerow([repr(float(v)) for v in row])


def read_feature_csv(path) -> tuple:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], np.array([[float(v) for v in r] for r in rows[1:]])
