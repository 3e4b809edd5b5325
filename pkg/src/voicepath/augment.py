"""Class-balancing augmentation: additive noise, phase-vocoder time
stretching and pitch shifting."""

from __future__ import annotations

import hashlib
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import signal as sps

from .audio_io import AudioClip, LabeledSample
from .errors import DegenerateInputError, ParameterError, PolicyError

log = logging.getLogger(__name__)

STRETCH_RANGE = (0.8, 1.25)
MAX_SEMITONES = 12.0
VOCODER_N_FFT = 1024
VOCODER_HOP = 256


def derive_seed(seed: int, *parts) -> int:
    """Deterministic 63-bit sub-seed from a root seed and any labels."""
    h = hashlib.sha256(repr((int(seed),) + tuple(parts)).encode()).digest()
    return int.from_bytes(h[:8], "little") >> 1


def add_gaussian_noise(clip: AudioClip, snr_db: float, seed: int) -> AudioClip:
    """Add white noise at exactly ``snr_db`` (before re-clipping to [-1, 1]).

    ``snr_db = inf`` returns the clip unchanged. The clip's ``n_clipped``
    counts samples that had to be clipped.
    """
    if math.isnan(snr_db) or snr_db == -math.inf:
        raise ParameterError(f"snr_db must be finite or +inf, got {snr_db}")
    if snr_db == math.inf:
        return clip
    x = clip.samples
    p_sig = float(np.mean(x**2))
    if p_sig == 0:
        raise DegenerateInputError(f"{clip.source_id}: cannot set an SNR on a silent clip")
    noise = np.random.default_rng(seed).standard_normal(x.size)
    noise *= math.sqrt(p_sig / 10 ** (snr_db / 10) / np.mean(noise**2))
    return clip.with_samples(x + noise)


def _stft(x, n_fft, hop, window):
    pad = n_fft // 2
    xp = np.pad(x, (pad, pad + n_fft), mode="constant")
    n_frames = 1 + (xp.size - n_fft) // hop
    frames = np.lib.stride_tricks.sliding_window_view(xp, n_fft)[::hop][:n_frames]
    return np.fft.rfft(frames * window, axis=1)


def _istft(spec, n_fft, hop, window, length):
    frames = np.fft.irfft(spec, n=n_fft, axis=1) * window
    n = n_fft + hop * (frames.shape[0] - 1)
    y = np.zeros(n)
    wsum = np.zeros(n)
    w2 = window**2
    for i, f in enumerate(frames):
        y[i * hop : i * hop + n_fft] += f
        wsum[i * hop : i * hop + n_fft] += w2
    nz = wsum > 1e-8
    y[nz] /= wsum[nz]
    pad = n_fft // 2
    y = y[pad : pad + length]
    return np.pad(y, (0, max(0, length - y.size)))


def phase_vocoder(x: np.ndarray, factor: float, n_fft: int = VOCODER_N_FFT, hop: int = VOCODER_HOP) -> np.ndarray:
    """Stretch ``x`` to ``round(len / factor)`` samples without changing pitch.

    Magnitudes are interpolated between analysis frames at a step of
    ``factor`` frames; phases advance by the measured instantaneous frequency.
    """
    if factor <= 0:
        raise ParameterError("stretch factor must be positive")
    window = sps.get_window("hann", n_fft, fftbins=True)
    S = _stft(np.asarray(x, dtype=np.float64), n_fft, hop, window)
    steps = np.arange(0, S.shape[0] - 1, factor)
    omega = 2 * np.pi * hop * np.arange(S.shape[1]) / n_fft
    phase = np.angle(S[0])
    out = np.empty((steps.size, S.shape[1]), dtype=complex)
    S = np.vstack([S, np.zeros((1, S.shape[1]))])
    for i, step in enumerate(steps):
        k = int(step)
        a = step - k
        mag = (1 - a) * np.abs(S[k]) + a * np.abs(S[k + 1])
        out[i] = mag * np.exp(1j * phase)
        dphi = np.angle(S[k + 1]) - np.angle(S[k]) - omega
        dphi -= 2 * np.pi * np.round(dphi / (2 * np.pi))
        phase = phase + omega + dphi
    return _istft(out, n_fft, hop, window, int(round(len(x) / factor)))


def time_stretch(clip: AudioClip, factor: float) -> AudioClip:
    """Change duration to ``duration / factor``; ``factor`` in [0.8, 1.25]."""
    lo, hi = STRETCH_RANGE
    if not lo <= factor <= hi:
        raise ParameterError(f"stretch factor {factor} outside [{lo}, {hi}]")
    if factor == 1.0:
        return clip
    return clip.with_samples(phase_vocoder(clip.samples, factor))


def pitch_shift(clip: AudioClip, semitones: float) -> AudioClip:
    """Shift pitch by ``semitones`` keeping duration.

    The clip is stretched to ``r`` times its length (``r = 2**(s/12)``) and
    then resampled back to the original length, which raises every frequency
    by ``r``.
    """
    if not abs(semitones) <= MAX_SEMITONES:
        raise ParameterError(f"|semitones| must be <= {MAX_SEMITONES}, got {semitones}")
    if semitones == 0:
        return clip
    r = 2.0 ** (semitones / 12.0)
    n = clip.samples.size
    stretched = phase_vocoder(clip.samples, 1.0 / r)
    y = sps.resample(stretched, n)
    return clip.with_samples(y)


@dataclass(frozen=True)
class AugmentPolicy:
    """Which transforms may be used and how far to rebalance.

    ``target_ratio`` is minority/majority after augmentation; ``tolerance``
    is the allowed shortfall in samples.
    """

    target_ratio: float = 1.0
    tolerance: int = 0
    semitones: tuple = (-2.0, -1.0, 1.0, 2.0)
    stretch: tuple = (0.9, 1.1)
    snr_db: tuple = (20.0, 25.0, 30.0)
    max_semitones: float = 4.0

    def __post_init__(self):
        if not 0 < self.target_ratio <= 1:
            raise PolicyError("target_ratio must lie in (0, 1]")
        if any(abs(s) > self.max_semitones for s in self.semitones):
            raise PolicyError(f"semitone grid exceeds +/-{self.max_semitones}")
        lo, hi = STRETCH_RANGE
        if any(not lo <= f <= hi for f in self.stretch):
            raise PolicyError(f"stretch grid must lie in [{lo}, {hi}]")

    def transforms(self) -> list:
        return (
            [("pitch", float(s)) for s in self.semitones]
            + [("stretch", float(f)) for f in self.stretch]
            + [("noise", float(d)) for d in self.snr_db]
        )


def apply_transform(clip: AudioClip, transform: tuple, seed: int) -> AudioClip:
    kind, value = transform
    if kind == "pitch":
        out = pitch_shift(clip, value)
    elif kind == "stretch":
        out = time_stretch(clip, value)
    elif kind == "noise":
        out = add_gaussian_noise(clip, value, seed)
    else:
        raise PolicyError(f"unknown transform {kind!r}")
    return out.with_samples(out.samples, source_id=f"{clip.source_id}|{kind}{value:+g}")


def plan_augmentation(labels, policy: AugmentPolicy, seed: int) -> list:
    """Choose ``(source index, transform)`` pairs that rebalance ``labels``.

    Each source gets each transform at most once; pairs are drawn in a
    seed-determined order. Raises :class:`PolicyError` if the grid cannot
    reach the target.
    """
    labels = np.asarray(labels)
    counts = {c: int(np.count_nonzero(labels == c)) for c in (0, 1)}
    minority = min(counts, key=lambda c: (counts[c], c))
    majority = 1 - minority
    target = int(math.ceil(policy.target_ratio * counts[majority]))
    needed = target - counts[minority]
    if needed <= policy.tolerance:
        return []
    sources = np.flatnonzero(labels == minority)
    grid = policy.transforms()
    pairs = [(int(i), t) for i in sources for t in grid]
    if len(pairs) < needed - policy.tolerance:
        raise PolicyError(
            f"need {needed} augmented class-{minority} samples but the grid allows only {len(pairs)}"
        )
    order = np.random.default_rng(seed).permutation(len(pairs))
    chosen = [pairs[j] for j in order[: min(needed, len(pairs))]]
    return sorted(chosen, key=lambda p: (p[0], grid.index(p[1])))


def augment_dataset(samples: list, policy: AugmentPolicy, seed: int) -> list:
    """Return originals (unchanged, same order) followed by augmented copies of
    the minority class. Augmented samples keep label and speaker."""
    plan = plan_augmentation([s.label for s in samples], policy, seed)
    out = list(samples)
    for idx, transform in plan:
        src = samples[idx]
        clip = apply_transform(src.clip, transform, derive_seed(seed, idx, transform))
        out.append(replace(src, clip=clip, augmented=True))
    if plan:
        log.info("augmented %d samples of class %d", len(plan), samples[plan[0][0]].label)
    return out


def transform_key(transform: tuple) -> str:
    kind, value = transform
    return f"{kind}{value:+g}"


def augment_pool(samples: list, policy: AugmentPolicy, seed: int) -> list:
    """Every grid transform of every minority-class sample, for selecting
    from after a split. Each copy's ``source_id`` is ``"<source>|<key>"``
    and its noise seed depends only on that pair. Empty when the corpus is
    already balanced within tolerance."""
    if not plan_augmentation([s.label for s in samples], policy, seed):
        return []
    counts = np.bincount([s.label for s in samples], minlength=2)
    minority = 0 if counts[0] <= counts[1] else 1
    out = []
    for s in samples:
        if s.label != minority or s.augmented:
            continue
        for t in policy.transforms():
            sid = f"{s.source_id}|{transform_key(t)}"
            clip = apply_transform(s.clip, t, derive_seed(seed, s.source_id, t))
            out.append(replace(s, clip=clip, augmented=True, source_id=sid))
    log.info("augmentation pool: %d copies of class %d", len(out), minority)
    return out
