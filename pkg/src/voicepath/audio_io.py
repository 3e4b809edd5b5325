"""WAV decoding/encoding, resampling, manifest-driven corpus loading and
synthetic phonation generation."""

from __future__ import annotations

import csv
import logging
import math
import struct
from collections import Counter
from dataclasses import dataclass, field
from math import gcd
from pathlib import Path
from typing import Iterable

import numpy as np
from scipy import signal as sps

from .errors import (
    CorpusLoadError,
    FormatError,
    ParameterError,
    UnsupportedFormatError,
)

log = logging.getLogger(__name__)

LABELS = ("normal", "nodule")
SEXES = ("M", "F")
MANIFEST_HEADER = ("path", "speaker_id", "sex", "label", "phonation_type")

MIN_RATE = 8000
MAX_RATE = 96000
MIN_TARGET_RATE = 4000
PCM_SCALE = 32768.0


@dataclass(frozen=True)
class AudioClip:
    samples: np.ndarray
    sample_rate: int
    source_id: str = ""
    n_clipped: int = 0
    # names of conditioning stages already applied, in order
    history: tuple = ()

    def __post_init__(self):
        x = np.asarray(self.samples, dtype=np.float64)
        if x.ndim != 1 or x.size == 0:
            raise ParameterError("AudioClip needs a nonempty 1-D sample array")
        if int(self.sample_rate) <= 0:
            raise ParameterError(f"sample_rate must be positive, got {self.sample_rate}")
        if not np.all(np.isfinite(x)):
            raise ParameterError("AudioClip samples must be finite")
        if np.max(np.abs(x)) > 1.0:
            raise ParameterError(
                "AudioClip samples exceed [-1, 1]; use AudioClip.from_array(clip=True)"
            )
        object.__setattr__(self, "samples", x)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    @classmethod
    def from_array(cls, x, sample_rate, source_id="", clip=True, history=()):
        """Build a clip, clipping out-of-range values and counting them."""
        x = np.asarray(x, dtype=np.float64)
        n_clipped = 0
        if clip:
            over = np.abs(x) > 1.0
            n_clipped = int(np.count_nonzero(over))
            if n_clipped:
                x = np.clip(x, -1.0, 1.0)
        return cls(x, sample_rate, source_id, n_clipped, tuple(history))

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sample_rate

    @property
    def clip_fraction(self) -> float:
        return self.n_clipped / self.samples.size

    def with_samples(self, x, **changes) -> "AudioClip":
        return AudioClip.from_array(
            x,
            changes.pop("sample_rate", self.sample_rate),
            changes.pop("source_id", self.source_id),
            history=changes.pop("history", self.history),
        )


# ---------------------------------------------------------------------------
# WAV container
# ---------------------------------------------------------------------------

def _chunks(data: bytes):
    pos = 12
    while pos + 8 <= len(data):
        cid, size = struct.unpack_from("<4sI", data, pos)
        body = data[pos + 8 : pos + 8 + size]
        if len(body) < size:
            raise FormatError(f"chunk {cid!r} truncated: header says {size} bytes, {len(body)} present")
        yield cid, body
        pos += 8 + size + (size & 1)


def decode_wav(data: bytes, source_id: str = "") -> AudioClip:
    """Decode a 16-bit PCM RIFF/WAVE byte string into a mono clip.

    Stereo is downmixed by averaging. The header's channel count, rate and
    bit depth are appended to ``source_id`` as ``#ch=..,rate=..,bits=16``.
    """
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise FormatError("not a RIFF/WAVE container")
    fmt = None
    pcm = None
    for cid, body in _chunks(data):
        if cid == b"fmt ":
            if len(body) < 16:
                raise FormatError("fmt chunk shorter than 16 bytes")
            fmt = struct.unpack_from("<HHIIHH", body, 0)
            if fmt[0] == 0xFFFE and len(body) >= 26:
                # WAVE_FORMAT_EXTENSIBLE: the real codec is the subformat GUID prefix
                fmt = (struct.unpack_from("<H", body, 24)[0],) + fmt[1:]
        elif cid == b"data":
            pcm = body
    if fmt is None:
        raise FormatError("missing fmt chunk")
    if pcm is None:
        raise FormatError("missing data chunk")
    audio_format, channels, rate, _byte_rate, block_align, bits = fmt
    if audio_format != 1:
        raise UnsupportedFormatError("audio_format", audio_format, "1 (integer PCM)")
    if bits != 16:
        raise UnsupportedFormatError("bits_per_sample", bits, "16")
    if channels not in (1, 2):
        raise UnsupportedFormatError("num_channels", channels, "1 or 2")
    if not MIN_RATE <= rate <= MAX_RATE:
        raise UnsupportedFormatError("sample_rate", rate, f"{MIN_RATE}..{MAX_RATE}")
    if block_align != 2 * channels:
        raise FormatError(f"block_align {block_align} inconsistent with {channels} channels of 16 bit")
    n_frames = len(pcm) // block_align
    if n_frames == 0:
        raise FormatError("data chunk holds no sample frames")
    ints = np.frombuffer(pcm[: n_frames * block_align], dtype="<i2").astype(np.float64)
    if channels == 2:
        ints = ints.reshape(-1, 2).mean(axis=1)
    meta = f"#ch={channels},rate={rate},bits={bits}"
    return AudioClip(ints / PCM_SCALE, rate, f"{source_id}{meta}")


def encode_wav(clip: AudioClip) -> bytes:
    """Encode a clip as mono 16-bit PCM."""
    ints = np.clip(np.round(clip.samples * PCM_SCALE), -32768, 32767).astype("<i2")
    payload = ints.tobytes()
    rate = clip.sample_rate
    fmt = struct.pack("<HHIIHH", 1, 1, rate, rate * 2, 2, 16)
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt
    body += b"data" + struct.pack("<I", len(payload)) + payload
    return b"RIFF" + struct.pack("<I", len(body)) + body


def read_wav(path) -> AudioClip:
    path = Path(path)
    return decode_wav(path.read_bytes(), source_id=path.name)


def write_wav(path, clip: AudioClip) -> None:
    Path(path).write_bytes(encode_wav(clip))


def base_source_id(source_id: str) -> str:
    """Strip the ``#ch=..`` header suffix added by :func:`decode_wav`."""
    return source_id.split("#", 1)[0]


# ---------------------------------------------------------------------------
# Resampling
# ---------------------------------------------------------------------------

def resample(clip: AudioClip, target_rate: int) -> AudioClip:
    """Polyphase windowed-sinc resampling to ``target_rate``.

    Output length is ``round(len * target / source)``.
    """
    target_rate = int(target_rate)
    if not MIN_TARGET_RATE <= target_rate <= MAX_RATE:
        raise ParameterError(f"target_rate {target_rate} outside {MIN_TARGET_RATE}..{MAX_RATE}")
    src = clip.sample_rate
    if target_rate == src:
        return clip
    g = gcd(src, target_rate)
    up, down = target_rate // g, src // g
    y = sps.resample_poly(clip.samples, up, down, window=("kaiser", 8.0))
    n_out = int(round(clip.samples.size * target_rate / src))
    if y.size >= n_out:
        y = y[:n_out]
    else:
        y = np.pad(y, (0, n_out - y.size))
    return AudioClip.from_array(y, target_rate, clip.source_id, history=clip.history)


# ---------------------------------------------------------------------------
# Corpus manifest
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ManifestEntry:
    path: str
    speaker_id: str
    sex: str
    label: str
    phonation_type: str = "a"

    @property
    def label_id(self) -> int:
        return LABELS.index(self.label)


@dataclass
class CorpusManifest:
    entries: list = field(default_factory=list)

    def __post_init__(self):
        seen = set()
        for e in self.entries:
            if e.label not in LABELS:
                raise FormatError(f"label {e.label!r} for {e.path} not in {LABELS}")
            if e.sex not in SEXES:
                raise FormatError(f"sex {e.sex!r} for {e.path} not in {SEXES}")
            if e.path in seen:
                raise FormatError(f"duplicate manifest path {e.path}")
            seen.add(e.path)

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)


def read_manifest(path) -> CorpusManifest:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError(f"{path}: empty manifest (header row required)") from None
        if tuple(h.strip() for h in header) != MANIFEST_HEADER:
            raise FormatError(f"{path}: header must be {','.join(MANIFEST_HEADER)}, got {','.join(header)}")
        entries = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(MANIFEST_HEADER):
                raise FormatError(f"{path}:{lineno}: expected 5 fields, got {len(row)}")
            entries.append(ManifestEntry(*(c.strip() for c in row)))
    return CorpusManifest(entries)


def write_manifest(path, manifest: CorpusManifest) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MANIFEST_HEADER)
        for e in manifest:
            w.writerow([e.path, e.speaker_id, e.sex, e.label, e.phonation_type])


@dataclass
class LabeledSample:
    """A classification unit. ``clip`` holds audio or, after extraction, features."""

    clip: object
    label: int
    speaker_id: str
    augmented: bool = False
    sex: str = ""
    source_id: str = ""

    def __post_init__(self):
        if self.label not in (0, 1):
            raise ParameterError(f"label must be 0 or 1, got {self.label!r}")


def class_counts(samples: Iterable[LabeledSample]) -> dict:
    c = Counter(s.label for s in samples)
    return {name: c.get(i, 0) for i, name in enumerate(LABELS)}


def load_corpus(root, manifest: CorpusManifest) -> list:
    """Load every manifest entry under ``root`` in manifest order.

    All missing files are collected and reported in one :class:`CorpusLoadError`.
    """
    root = Path(root)
    if not root.is_dir():
        raise CorpusLoadError([str(root)])
    missing = [e.path for e in manifest if not (root / e.path).is_file()]
    if missing:
        raise CorpusLoadError(missing)
    samples = []
    for e in manifest:
        clip = decode_wav((root / e.path).read_bytes(), source_id=e.path)
        samples.append(LabeledSample(clip, e.label_id, e.speaker_id, False, e.sex, e.path))
    log.info("loaded %d clips: %s", len(samples), class_counts(samples))
    return samples


# ---------------------------------------------------------------------------
# Synthetic phonation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SynthesisParams:
    f0_hz: float = 150.0
    jitter_pct: float = 0.3
    shimmer_pct: float = 1.0
    noise_snr_db: float = 35.0
    n_harmonics: int = 12
    duration_s: float = 1.0
    sample_rate: int = 16000

    def __post_init__(self):
        if self.jitter_pct < 0 or self.shimmer_pct < 0:
            raise ParameterError("jitter_pct and shimmer_pct must be >= 0")
        if int(self.n_harmonics) < 1:
            raise ParameterError("n_harmonics must be >= 1")
        if self.duration_s <= 0:
            raise ParameterError("duration_s must be > 0")
        if self.f0_hz <= 0 or self.sample_rate <= 0:
            raise ParameterError("f0_hz and sample_rate must be > 0")
        if math.isnan(self.noise_snr_db):
            raise ParameterError("noise_snr_db is NaN")


def normal_preset(**overrides) -> SynthesisParams:
    return SynthesisParams(**{"jitter_pct": 0.3, "shimmer_pct": 1.0, "noise_snr_db": 35.0, **overrides})


def nodule_preset(**overrides) -> SynthesisParams:
    return SynthesisParams(**{"jitter_pct": 2.0, "shimmer_pct": 6.0, "noise_snr_db": 15.0, **overrides})


PEAK_LEVEL = 0.9


def synthesize_phonation(params: SynthesisParams, seed: int) -> AudioClip:
    """Harmonic source with per-cycle jitter and shimmer plus white noise.

    Each glottal cycle k gets frequency ``f0 * (1 + jitter/100 * z_k)`` and
    amplitude ``1 + shimmer/100 * w_k`` with z, w standard normal. Harmonic
    h has amplitude 1/h. The result is peak-normalized to 0.9.
    """
    rng = np.random.default_rng(seed)
    rate = int(params.sample_rate)
    n = int(round(params.duration_s * rate))
    n_cycles = int(math.ceil(params.duration_s * params.f0_hz * 1.5)) + 16

    f = params.f0_hz * (1.0 + params.jitter_pct / 100.0 * rng.standard_normal(n_cycles))
    f = np.maximum(f, 0.25 * params.f0_hz)
    amp = 1.0 + params.shimmer_pct / 100.0 * rng.standard_normal(n_cycles)
    period = rate / f
    starts = np.concatenate(([0.0], np.cumsum(period)))
    while starts[-1] < n:  # pathological jitter can make cycles short
        extra = params.f0_hz * np.ones(n_cycles)
        period = np.concatenate((period, rate / extra))
        amp = np.concatenate((amp, np.ones(n_cycles)))
        starts = np.concatenate(([0.0], np.cumsum(period)))

    t = np.arange(n, dtype=np.float64)
    k = np.searchsorted(starts, t, side="right") - 1
    phase = 2.0 * np.pi * (t - starts[k]) / period[k]
    h = np.arange(1, int(params.n_harmonics) + 1)
    # only harmonics below Nyquist for the nominal pitch
    h = h[h * params.f0_hz < rate / 2]
    x = np.sin(np.outer(phase, h)) @ (1.0 / h)
    x *= amp[k]

    if math.isfinite(params.noise_snr_db):
        p_sig = np.mean(x**2)
        noise = rng.standard_normal(n)
        noise *= math.sqrt(p_sig / 10 ** (params.noise_snr_db / 10.0) / np.mean(noise**2))
        x = x + noise
    x *= PEAK_LEVEL / np.max(np.abs(x))
    return AudioClip(x, rate, f"synth-seed{seed}")


def synth_corpus(
    root,
    n_clips: int,
    seed: int,
    nodule_fraction: float = 0.5,
    duration_s: float = 1.0,
    sample_rate: int = 16000,
    clips_per_speaker: int = 2,
) -> CorpusManifest:
    """Write a labeled synthetic corpus (WAV files + ``manifest.csv``) to ``root``.

    Speakers get a fixed sex and base pitch; each clip draws its own pitch
    around it. Output is a pure function of the arguments.
    """
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    n_nodule = int(round(n_clips * nodule_fraction))
    labels = np.array([0] * (n_clips - n_nodule) + [1] * n_nodule)
    labels = labels[rng.permutation(n_clips)]
    entries = []
    speakers = {}
    per_label_count = Counter()
    for i, lab in enumerate(labels):
        lab = int(lab)
        spk_no = per_label_count[lab] // clips_per_speaker
        per_label_count[lab] += 1
        spk = f"{LABELS[lab][:3]}{spk_no:03d}"
        if spk not in speakers:
            sex = "M" if rng.random() < 0.5 else "F"
            base = rng.uniform(100, 140) if sex == "M" else rng.uniform(180, 240)
            speakers[spk] = (sex, base)
        sex, base = speakers[spk]
        f0 = float(base * (1 + 0.03 * rng.standard_normal()))
        preset = nodule_preset if lab else normal_preset
        params = preset(f0_hz=f0, duration_s=duration_s, sample_rate=sample_rate)
        clip = synthesize_phonation(params, seed=int(rng.integers(2**31)))
        rel = f"{LABELS[lab]}/{i:04d}_{spk}.wav"
        (root / rel).parent.mkdir(parents=True, exist_ok=True)
        write_wav(root / rel, clip)
        entries.append(ManifestEntry(rel, spk, sex, LABELS[lab], "a"))
    manifest = CorpusManifest(entries)
    write_manifest(root / "manifest.csv", manifest)
    return manifest


def spectral_flatness(x: np.ndarray, n_fft: int = 512, hop: int = 256) -> float:
    """Frame-averaged spectral flatness (geometric / arithmetic mean of power)."""
    frames = np.lib.stride_tricks.sliding_window_view(x, n_fft)[::hop] * np.hanning(n_fft)
    p = np.abs(np.fft.rfft(frames, axis=1)) ** 2 + 1e-20
    return float(np.mean(np.exp(np.mean(np.log(p), axis=1)) / np.mean(p, axis=1)))


def tone(freq: float, duration_s: float, rate: int, amplitude: float = 0.5, source_id: str = "tone") -> AudioClip:
    t = np.arange(int(round(duration_s * rate))) / rate
    return AudioClip(amplitude * np.sin(2 * np.pi * freq * t), rate, source_id)


def dominant_frequency(x: np.ndarray, rate: int) -> float:
    """Peak-picked DFT frequency with parabolic interpolation on log magnitude."""
    w = np.hanning(x.size)
    mag = np.abs(np.fft.rfft(x * w))
    k = int(np.argmax(mag[1:])) + 1
    if 0 < k < mag.size - 1:
        a, b, c = np.log(mag[k - 1 : k + 2] + 1e-300)
        denom = a - 2 * b + c
        delta = 0.5 * (a - c) / denom if denom != 0 else 0.0
    else:
        delta = 0.0
    return (k + delta) * rate / x.size
