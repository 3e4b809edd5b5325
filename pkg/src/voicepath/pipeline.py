"""Clip-level feature extraction: conditioned audio -> frame features plus
clip-level scaling exponents, and the padded datasets built from them."""

from __future__ import annotations

import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .audio_io import AudioClip, LabeledSample
from .errors import FormatError, ParameterError
from .models import SequenceData
from .preprocess import PreprocessConfig, condition_clip
from .scaling import ScalingConfig, ScalingError, scaling_summary
from .spectral import FeatureConfig, Standardizer, combined_column_names, extract_all

log = logging.getLogger(__name__)

EXPONENT_NAMES = ("hurst", "holder_mean")


@dataclass
class FeatureRecord:
    source_id: str
    label: int
    speaker_id: str
    frames: np.ndarray  # (T, n_mels + n_mfcc + 12)
    exponents: np.ndarray  # (2,), NaN where an estimator failed
    augmented: bool = False
    sex: str = ""


@dataclass(frozen=True)
class ExtractionConfig:
    preprocess: PreprocessConfig = PreprocessConfig()
    features: FeatureConfig = FeatureConfig()
    scaling: ScalingConfig = ScalingConfig()


def extract_record(sample: LabeledSample, cfg: ExtractionConfig = ExtractionConfig()) -> FeatureRecord:
    clip = condition_clip(sample.clip, cfg.preprocess)
    fs = extract_all(clip, cfg.features, cfg.preprocess)
    try:
        summ = scaling_summary(clip, cfg.scaling)
        exps = np.array([summ.hurst, summ.holder_mean])
    except ScalingError:
        exps = np.full(2, np.nan)
    return FeatureRecord(sample.source_id or clip.source_id, sample.label, sample.speaker_id,
                         fs.combined.data, exps, sample.augmented, sample.sex)


def _extract_star(args):
    return extract_record(*args)


def extract_records(samples, cfg: ExtractionConfig = ExtractionConfig(), workers: int = 1) -> list:
    """Extract every sample, preserving order. Clips whose exponents both fail
    keep NaN exponents (imputed later) rather than being dropped."""
    jobs = [(s, cfg) for s in samples]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(_extract_star, jobs, chunksize=8))
    return [extract_record(*j) for j in jobs]


def feature_names(cfg: FeatureConfig = FeatureConfig()) -> list:
    return combined_column_names(cfg.n_mels, cfg.n_mfcc) + list(EXPONENT_NAMES)


def record_matrix(rec: FeatureRecord) -> np.ndarray:
    """Frames with the exponents broadcast as trailing columns."""
    T = rec.frames.shape[0]
    return np.hstack([rec.frames, np.broadcast_to(rec.exponents, (T, rec.exponents.size))])


def fit_standardizer(records) -> Standardizer:
    """Z-scoring fit on training records; NaN exponents are ignored."""
    stacked = np.vstack([record_matrix(r) for r in records])
    mean = np.nanmean(stacked, axis=0)
    std = np.nanstd(stacked, axis=0)
    mean = np.where(np.isfinite(mean), mean, 0.0)
    std = np.where(np.isfinite(std) & (std > 1e-12), std, 1.0)
    return Standardizer(mean, std)


def to_sequence_data(records, standardizer: Standardizer, n_frames: int, names=None) -> SequenceData:
    """Standardize, impute missing exponents with the training mean (0 after
    z-scoring), then crop or right-pad every clip to ``n_frames``."""
    if n_frames < 2:
        raise ParameterError("n_frames must be >= 2")
    records = list(records)
    F = records[0].frames.shape[1] + records[0].exponents.size if records else 0
    X = np.zeros((len(records), n_frames, F))
    mask = np.zeros((len(records), n_frames))
    for i, r in enumerate(records):
        z = standardizer.transform(record_matrix(r))
        z = np.where(np.isnan(z), 0.0, z)
        t = min(n_frames, z.shape[0])
        X[i, :t] = z[:t]
        mask[i, :t] = 1.0
    y = np.array([r.label for r in records], dtype=np.int64)
    return SequenceData(X, mask, y, list(names or []), len(EXPONENT_NAMES), [r.source_id for r in records])


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

def save_records(path, records) -> None:
    records = list(records)
    meta = [{"source_id": r.source_id, "label": r.label, "speaker_id": r.speaker_id,
             "augmented": r.augmented, "sex": r.sex, "n_frames": int(r.frames.shape[0])} for r in records]
    frames = np.vstack([r.frames for r in records]) if records else np.zeros((0, 0))
    exps = np.vstack([r.exponents for r in records]) if records else np.zeros((0, 2))
    with open(path, "wb") as fh:
        np.savez(fh, frames=frames, exponents=exps, meta=np.frombuffer(json.dumps(meta).encode(), np.uint8))


def load_records(path) -> list:
    try:
        z = np.load(path)
        meta = json.loads(z["meta"].tobytes().decode())
        frames, exps = z["frames"], z["exponents"]
    except (OSError, KeyError, ValueError) as exc:
        raise FormatError(f"cannot read feature records {path}: {exc}") from None
    out, pos = [], 0
    for i, m in enumerate(meta):
        n = m.pop("n_frames")
        out.append(FeatureRecord(frames=frames[pos : pos + n].copy(), exponents=exps[i].copy(), **m))
        pos += n
    return out


def save_samples(path, samples) -> None:
    """Labelled audio clips (samples, rates, history) in one ``.npz``."""
    samples = list(samples)
    meta = [{"source_id": s.source_id, "label": s.label, "speaker_id": s.speaker_id, "sex": s.sex,
             "augmented": s.augmented, "rate": s.clip.sample_rate, "clip_id": s.clip.source_id,
             "n_clipped": s.clip.n_clipped, "history": list(s.clip.history), "n": int(s.clip.samples.size)}
            for s in samples]
    audio = np.concatenate([s.clip.samples for s in samples]) if samples else np.zeros(0)
    with open(path, "wb") as fh:
        np.savez(fh, audio=audio, meta=np.frombuffer(json.dumps(meta).encode(), np.uint8))


def load_samples(path) -> list:
    try:
        z = np.load(path)
        meta = json.loads(z["meta"].tobytes().decode())
        audio = z["audio"]
    except (OSError, KeyError, ValueError) as exc:
        raise FormatError(f"cannot read audio archive {path}: {exc}") from None
    out, pos = [], 0
    for m in meta:
        n = m["n"]
        clip = AudioClip(audio[pos : pos + n].copy(), m["rate"], m["clip_id"], m["n_clipped"], tuple(m["history"]))
        out.append(LabeledSample(clip, m["label"], m["speaker_id"], m["augmented"], m["sex"], m["source_id"]))
        pos += n
    return out
