"""Hurst exponent by detrended fluctuation analysis and windowed Hölder
exponents by oscillation scaling."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import maximum_filter1d, minimum_filter1d

from .audio_io import AudioClip
from .errors import ParameterError, TooShortError, VoicepathError, ZeroVarianceError
from .preprocess import frame_count

log = logging.getLogger(__name__)


class ScalingError(VoicepathError):
    """Both estimators failed on a clip; the clip should be excluded."""


@dataclass(frozen=True)
class ScalingConfig:
    holder_window_ms: float = 250.0
    holder_hop_ms: float = 125.0
    min_scale: int = 16


@dataclass(frozen=True)
class HolderPoint:
    window_index: int
    exponent: float  # NaN marks a flat window
    r2: float = math.nan

    @property
    def flat(self) -> bool:
        return math.isnan(self.exponent)


@dataclass(frozen=True)
class ScalingSummary:
    hurst: float
    holder_series: tuple
    holder_mean: float
    fit_r2: float

    @property
    def complement(self) -> float:
        """``2 - hurst``: the graph-dimension style complement of H."""
        return 2.0 - self.hurst

    @property
    def hurst_valid(self) -> bool:
        return 0.0 < self.hurst < 1.5


def _loglog_fit(x, y) -> tuple:
    lx, ly = np.log(x), np.log(y)
    slope, intercept = np.polyfit(lx, ly, 1)
    resid = ly - (slope * lx + intercept)
    ss_tot = np.sum((ly - ly.mean()) ** 2)
    r2 = 1.0 - np.sum(resid**2) / ss_tot if ss_tot > 0 else 1.0
    return float(slope), float(r2)


def dyadic_scales(n: int, smallest: int = 16) -> list:
    scales = []
    s = smallest
    while s <= n // 8:
        scales.append(s)
        s *= 2
    return scales


def dfa_fluctuation(signal, scales) -> np.ndarray:
    """RMS of order-1 detrended profile boxes at each scale.

    Boxes are taken from both ends of the profile so no samples are wasted.
    """
    x = np.asarray(signal, dtype=np.float64)
    profile = np.cumsum(x - x.mean())
    out = []
    for s in scales:
        nb = profile.size // s
        boxes = np.concatenate([
            profile[: nb * s].reshape(nb, s),
            profile[profile.size - nb * s :].reshape(nb, s),
        ])
        t = np.arange(s, dtype=np.float64)
        tc = t - t.mean()
        # closed-form least-squares line per box
        slope = boxes @ tc / (tc @ tc)
        resid = boxes - boxes.mean(axis=1, keepdims=True) - slope[:, None] * tc
        out.append(math.sqrt(np.mean(resid**2)))
    return np.array(out)


def hurst_dfa(signal, scales=None) -> tuple:
    """Return ``(H, r2)``: the log-log slope of DFA fluctuation vs box size."""
    x = np.asarray(signal, dtype=np.float64)
    if scales is None:
        scales = dyadic_scales(x.size)
    scales = sorted(int(s) for s in scales)
    if len(scales) < 4 or scales[0] < 2 or scales[-1] / scales[0] < 10:
        raise ParameterError(f"DFA needs >= 4 scales spanning a decade, got {scales}")
    if x.size < 4 * scales[-1]:
        raise TooShortError(f"DFA needs >= {4 * scales[-1]} samples, got {x.size}")
    if np.ptp(x) == 0:
        raise ZeroVarianceError("DFA of a constant signal is undefined")
    fl = dfa_fluctuation(x, scales)
    if np.any(fl <= 0):
        raise ZeroVarianceError("zero fluctuation at some scale (piecewise-linear profile)")
    return _loglog_fit(np.array(scales, dtype=np.float64), fl)


def fractional_gaussian_noise(n: int, hurst: float, seed: int) -> np.ndarray:
    """Exact fGn via circulant embedding of the autocovariance (Davies-Harte)."""
    if not 0 < hurst < 1:
        raise ParameterError("hurst must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    k = np.arange(n + 1, dtype=np.float64)
    h2 = 2 * hurst
    gamma = 0.5 * (np.abs(k + 1) ** h2 - 2 * k**h2 + np.abs(k - 1) ** h2)
    row = np.concatenate([gamma, gamma[-2:0:-1]])
    lam = np.fft.fft(row).real
    lam = np.maximum(lam, 0.0)
    m = row.size
    z = rng.standard_normal(m) + 1j * rng.standard_normal(m)
    w = np.fft.fft(np.sqrt(lam / m) * z)
    return w.real[:n]


def _oscillation_profile(seg: np.ndarray, taus) -> np.ndarray:
    osc = []
    for tau in taus:
        size = tau + 1  # tau sample steps -> tau + 1 points
        hi = maximum_filter1d(seg, size, mode="nearest")
        lo = minimum_filter1d(seg, size, mode="nearest")
        half = size // 2
        valid = slice(half, seg.size - (size - 1 - half))
        osc.append(np.max(hi[valid] - lo[valid]))
    return np.array(osc)


def holder_exponent(segment, taus=None) -> tuple:
    """Local regularity of one window: slope of log oscillation vs log scale.

    Oscillation at scale tau is the largest max-min range over the window's
    sub-intervals spanning tau samples, so the window is scored by its least
    regular point. Returns ``(exponent, r2)``; NaN exponent for a flat window.
    """
    seg = np.asarray(segment, dtype=np.float64)
    if taus is None:
        taus = []
        t = 2
        while t <= seg.size // 4:
            taus.append(t)
            t *= 2
    if len(taus) < 2:
        raise TooShortError(f"window of {seg.size} samples too short for a scaling fit")
    if np.ptp(seg) == 0:
        return math.nan, math.nan
    osc = _oscillation_profile(seg, taus)
    if np.any(osc <= 0):
        return math.nan, math.nan
    return _loglog_fit(np.array(taus, dtype=np.float64), osc)


def holder_windowed(signal, rate: float, window_ms: float = 250.0, hop_ms: float = 125.0) -> list:
    """Hölder exponent of each analysis window, framed like ``frame_signal``."""
    x = np.asarray(signal, dtype=np.float64)
    if window_ms < 20:
        raise ParameterError("window_ms must be >= 20")
    if not 0 < hop_ms:
        raise ParameterError("hop_ms must be positive")
    W = int(round(window_ms * rate / 1000))
    H = int(round(hop_ms * rate / 1000))
    n_win = frame_count(x.size, W, H)
    if n_win < 2:
        raise TooShortError(f"signal spans {n_win} window(s) of {window_ms} ms; need >= 2")
    out = []
    for i in range(n_win):
        e, r2 = holder_exponent(x[i * H : i * H + W])
        out.append(HolderPoint(i, e, r2))
    return out


def scaling_summary(clip: AudioClip, cfg: ScalingConfig = ScalingConfig()) -> ScalingSummary:
    """Hurst and mean Hölder exponent of a conditioned clip.

    A failing estimator contributes NaN; if both fail :class:`ScalingError`
    is raised so the caller can exclude the clip.
    """
    x = clip.samples
    reasons = []
    try:
        hurst, r2 = hurst_dfa(x, dyadic_scales(x.size, cfg.min_scale))
    except (ParameterError, TooShortError, ZeroVarianceError) as exc:
        hurst, r2 = math.nan, math.nan
        reasons.append(f"hurst: {exc}")
    try:
        series = holder_windowed(x, clip.sample_rate, cfg.holder_window_ms, cfg.holder_hop_ms)
        defined = [p.exponent for p in series if not p.flat]
        holder_mean = float(np.mean(defined)) if defined else math.nan
        if not defined:
            reasons.append("holder: every window flat")
    except (ParameterError, TooShortError) as exc:
        series, holder_mean = [], math.nan
        reasons.append(f"holder: {exc}")
    if math.isnan(hurst) and math.isnan(holder_mean):
        log.warning("excluding %s: %s", clip.source_id, "; ".join(reasons))
        raise ScalingError(f"{clip.source_id}: " + "; ".join(reasons))
    return ScalingSummary(hurst, tuple(series), holder_mean, r2)
