import numpy as np
import pytest
from hypothesis import given, strategies as st

from voicepath.audio_io import AudioClip, nodule_preset, synthesize_phonation, tone
from voicepath.errors import (
    DegenerateInputError, EmptyOutputError, ParameterError, SilentClipError, TooShortError,
)
from voicepath.preprocess import (
    FrameSequence, PreprocessConfig, condition_clip, drop_invalid_frames, frame_count,
    frame_signal, noise_filter, normalize_amplitude, preprocess, smooth_spectrum, trim_silence,
)

RATE = 16000


def bin_power(x, freq, rate=RATE):
    spec = np.abs(np.fft.rfft(x * np.hanning(x.size))) ** 2
    k = int(round(freq * x.size / rate))
    return spec[max(k - 2, 0) : k + 3].sum()


class TestNoiseFilter:
    def test_dc_removed(self):
        clip = AudioClip(np.full(RATE, 0.2), RATE)
        y = noise_filter(clip, 30.0).samples
        assert abs(y[RATE // 2 :].mean()) < 1e-3

    def test_passband_tone_preserved(self):
        x = tone(440, 1.0, RATE).samples
        y = noise_filter(AudioClip(x, RATE), 30.0).samples
        core = slice(2000, -2000)
        loss_db = 20 * np.log10(np.std(x[core]) / np.std(y[core]))
        assert loss_db < 1.0

    def test_drift_attenuated(self):
        t = np.arange(4 * RATE) / RATE
        drift = 0.3 * np.sin(2 * np.pi * 5 * t)
        x = drift + 0.3 * np.sin(2 * np.pi * 440 * t)
        y = noise_filter(AudioClip(x, RATE), 30.0).samples
        assert 10 * np.log10(bin_power(x, 5) / bin_power(y, 5)) >= 20
        assert abs(10 * np.log10(bin_power(x, 440) / bin_power(y, 440))) < 1

    @pytest.mark.parametrize("cutoff", [0, 8000, -5])
    def test_cutoff_range(self, cutoff):
        with pytest.raises(ParameterError):
            noise_filter(tone(440, 0.1, RATE), cutoff)


class TestTrimSilence:
    def test_zero_padding_removed(self):
        x = np.concatenate([np.zeros(RATE // 2), tone(300, 1.0, RATE).samples, np.zeros(RATE // 2)])
        out = trim_silence(AudioClip(x, RATE), -40, 100)
        assert abs(out.samples.size - RATE) <= 160

    def test_no_quiet_run_is_identity(self):
        clip = tone(300, 0.5, RATE)
        assert trim_silence(clip) is clip

    def test_all_zero(self):
        with pytest.raises(SilentClipError):
            trim_silence(AudioClip(np.zeros(RATE), RATE))

    def test_short_edge_run_kept(self):
        x = np.concatenate([np.zeros(800), tone(300, 0.5, RATE).samples])  # 50 ms < 100 ms
        assert trim_silence(AudioClip(x, RATE), -40, 100).samples.size == x.size

    @given(st.integers(0, 6000), st.integers(0, 6000), st.integers(1000, 8000))
    def test_output_is_contiguous_slice(self, lead, trail, body):
        rng = np.random.default_rng(lead + 7 * trail + body)
        x = np.concatenate([np.zeros(lead), 0.5 * rng.uniform(-1, 1, body), np.zeros(trail)])
        y = trim_silence(AudioClip(x, RATE), -40, 100).samples
        starts = [i for i in range(x.size - y.size + 1) if x[i] == y[0] and np.array_equal(x[i : i + y.size], y)]
        assert starts


class TestNormalize:
    def test_scalar_gain(self):
        x = tone(300, 0.1, RATE, amplitude=0.3).samples
        y = normalize_amplitude(AudioClip(x, RATE), 0.99).samples
        assert np.max(np.abs(y)) == pytest.approx(0.99, abs=1e-6)
        np.testing.assert_allclose(y, x * 0.99 / np.max(np.abs(x)), atol=1e-12)

    def test_idempotent(self):
        a = normalize_amplitude(tone(300, 0.1, RATE), 0.99)
        b = normalize_amplitude(a, 0.99)
        np.testing.assert_allclose(a.samples, b.samples, atol=1e-6)

    def test_peak_one_to_half(self):
        x = np.array([0.0, 1.0, -0.25])
        assert np.max(np.abs(normalize_amplitude(AudioClip(x, RATE), 0.5).samples)) == 0.5

    def test_silent(self):
        with pytest.raises(DegenerateInputError):
            normalize_amplitude(AudioClip(np.zeros(10), RATE))


class TestFraming:
    def test_count_for_one_second(self):
        fs = frame_signal(AudioClip(np.zeros(RATE), RATE), 25, 10)
        assert fs.frames.shape == (98, 400)

    def test_rectangular_partition_reconstructs(self):
        x = np.linspace(-0.5, 0.5, 1000)
        fs = frame_signal(AudioClip(x, RATE), 25, 25, "rectangular")
        np.testing.assert_array_equal(fs.frames.ravel(), x[: fs.frames.size])

    def test_hann_on_constant(self):
        fs = frame_signal(AudioClip(np.ones(2000), RATE), 25, 10, "hann")
        for row in fs.frames:
            np.testing.assert_allclose(row, fs.frames[0])
        assert fs.frames[0, 0] == 0.0 and fs.frames[0].max() == pytest.approx(1.0)

    def test_too_short(self):
        with pytest.raises(TooShortError):
            frame_signal(AudioClip(np.zeros(100), RATE))

    @pytest.mark.parametrize("ms", [10, 50])
    def test_frame_range_enforced(self, ms):
        with pytest.raises(ParameterError):
            frame_signal(AudioClip(np.zeros(RATE), RATE), ms, 5)

    def test_override_allows_other_lengths(self):
        fs = frame_signal(AudioClip(np.zeros(RATE), RATE), 10, 5, allow_any_length=True)
        assert fs.frames.shape[1] == 160

    @given(st.integers(1, 5000), st.integers(1, 400), st.integers(1, 400))
    def test_frame_count_formula(self, n, L, H):
        expected = 1 + (n - L) // H if n >= L else 0
        assert frame_count(n, L, H) == expected

    @given(st.integers(400, 4000), st.sampled_from([20, 25, 30, 40]), st.integers(1, 20))
    def test_frames_start_at_hops(self, n, frame_ms, hop_ms):
        hop_ms = min(hop_ms, frame_ms)
        x = np.arange(n) / (2.0 * n)
        if n < frame_ms * 16:
            return
        fs = frame_signal(AudioClip(x, RATE), frame_ms, hop_ms, "rectangular")
        L, H = frame_ms * 16, hop_ms * 16
        assert fs.frames.shape[0] == frame_count(n, L, H)
        for t in (0, fs.frames.shape[0] - 1):
            np.testing.assert_array_equal(fs.frames[t], x[t * H : t * H + L])


class TestDropInvalid:
    def _fs(self, frames):
        return FrameSequence(frames, 25, 10, "hann", RATE)

    def test_identity(self):
        f = np.zeros((98, 400))
        out = drop_invalid_frames(self._fs(f))
        assert out.frames.shape == f.shape and out.n_dropped == 0

    def test_one_nan(self):
        f = np.tile(np.arange(98.0)[:, None] / 1000, (1, 400))
        f[40, 3] = np.nan
        out = drop_invalid_frames(self._fs(f))
        assert out.frames.shape[0] == 97 and out.n_dropped == 1
        assert np.array_equal(out.frames[:, 0], np.delete(f[:, 0], 40))

    def test_all_invalid(self):
        with pytest.raises(EmptyOutputError):
            drop_invalid_frames(self._fs(np.full((3, 400), 2.0)))


class TestSmoothing:
    def test_width_one_identity(self):
        s = np.array([3.0, 1.0, 4.0])
        np.testing.assert_array_equal(smooth_spectrum(s, 1), s)

    def test_impulse(self):
        np.testing.assert_allclose(smooth_spectrum([0, 0, 1, 0, 0], 3), [0, 1 / 3, 1 / 3, 1 / 3, 0])

    def test_constant(self):
        np.testing.assert_allclose(smooth_spectrum(np.full(10, 2.5), 5), 2.5)

    def test_width_too_large(self):
        with pytest.raises(ParameterError):
            smooth_spectrum(np.ones(3), 5)

    @given(st.lists(st.floats(0, 10), min_size=8, max_size=64), st.sampled_from([1, 3, 5, 7]))
    def test_energy_change_bounded(self, values, width):
        s = np.array(values)
        if s.sum() == 0:
            return
        change = abs(smooth_spectrum(s, width).sum() - s.sum()) / s.sum()
        assert change < width / s.size + 1e-12


class TestPipeline:
    def test_idempotent(self):
        raw = synthesize_phonation(nodule_preset(), 3)
        cfg = PreprocessConfig()
        once = condition_clip(raw, cfg)
        twice = condition_clip(once, cfg)
        np.testing.assert_allclose(once.samples, twice.samples, atol=1e-6)
        assert once.history == twice.history
        assert [h.split("(")[0] for h in once.history] == ["noise_filter", "trim_silence", "normalize_amplitude"]

    def test_preprocess_returns_frames(self):
        clip, frames = preprocess(tone(220, 1.0, 50000))
        assert clip.sample_rate == 16000
        assert frames.frames.shape == (98, 400)
