"""
The signal front-end: framing, DFT features, global mean and variance
normalization (GMVN) and low-frame-rate (LFR) stacking.

Feature sequences are numpy arrays whose first axis is the frame index. A
sequence of multi-channel spectra has shape (T, M, K), complex, where M is the
channel count and K = fft_size/2 - 1 is the number of bins left once the DC and
Nyquist bins are removed; a single frame is the (M, K) slice at one t. LFR
stacks add an axis: (S, lfr_factor, M, K).

>>> import numpy as np
>>> cfg = FrameConfig()
>>> frame_and_transform(np.zeros((1, 16000)), cfg).shape
(99, 1, 127)
"""

import logging

import numpy as np
import scipy.signal

from fanfront.options import Options, OptionError
from fanfront import static

logger = logging.getLogger(__name__)


class FrontendError(ValueError):
    pass


WINDOWS = ("hann", "boxcar")


class FrameConfig(Options):
    """
    Framing parameters. The defaults are a 12.5 ms window every 10 ms at
    16 kHz, zero-padded to a 256-point DFT, with frames stacked three at a
    time for the low frame rate. window is "hann" (periodic) or "boxcar";
    the latter exists for energy-preservation checks.
    """
    defaults = {
        "sample_rate_hz": 16000,
        "window_len_samples": 200,
        "hop_samples": 160,
        "fft_size": 256,
        "lfr_factor": 3,
        "window": "hann",
        "variance_floor": 1e-8,
    }

    def check(self):
        for name in ("sample_rate_hz", "window_len_samples", "hop_samples",
                     "fft_size", "lfr_factor"):
            value = self[name]
            self.require(isinstance(value, (int, np.integer)) and value >= 1,
                    "%s must be a positive integer, not %r" % (name, value))
        self.require(self.fft_size >= 4 and self.fft_size & (self.fft_size - 1) == 0,
                "fft_size must be a power of two of at least 4, not %d" % self.fft_size)
        self.require(self.window_len_samples <= self.fft_size,
                "window_len_samples (%d) exceeds fft_size (%d)" %
                (self.window_len_samples, self.fft_size))
        self.require(self.window in WINDOWS,
                "window must be one of %s, not %r" % (", ".join(WINDOWS), self.window))
        self.require(self.variance_floor > 0, "variance_floor must be positive")

    @property
    def bins(self):
        return self.fft_size // 2 - 1

    def bin_frequencies(self):
        """
        Center frequencies in Hz of the bins kept by frame_and_transform
        (bins 1..K of the DFT).
        """
        k = np.arange(1, self.bins + 1)
        return k * float(self.sample_rate_hz) / self.fft_size

    def bin_omegas(self):
        """
        Same as bin_frequencies, in radians per second.
        """
        return 2 * np.pi * self.bin_frequencies()

    def frame_count(self, length):
        if length < self.window_len_samples:
            return 0
        return (length - self.window_len_samples) // self.hop_samples + 1


def _as_channels(pcm):
    if isinstance(pcm, np.ndarray):
        if pcm.ndim == 1:
            pcm = pcm[np.newaxis, :]
        if pcm.ndim != 2:
            raise FrontendError("pcm must be a (channels, samples) array, not "
                    "an array of shape %s" % (pcm.shape,))
        channels = pcm.astype(np.float64, copy=False)
    else:
        rows = [np.asarray(c, dtype=np.float64) for c in pcm]
        if not rows:
            raise FrontendError("pcm has no channels")
        if len(set(r.shape for r in rows)) != 1:
            raise FrontendError("ragged channels: lengths %s" %
                    ", ".join(str(len(r)) for r in rows))
        channels = np.stack(rows)
    if channels.shape[0] == 0:
        raise FrontendError("pcm has no channels")
    if not np.all(np.isfinite(channels)):
        raise FrontendError("pcm contains NaN or infinite samples")
    if channels.size and np.max(np.abs(channels)) > 1.0:
        raise FrontendError("pcm samples must lie in [-1, 1]")
    return channels


def frame_signal(pcm, cfg):
    """
    Cuts pcm into windowed frames zero-padded to cfg.fft_size. Returns a real
    array of shape (T, M, fft_size); T is zero when the signal is shorter
    than one window.
    """
    channels = _as_channels(pcm)
    count = cfg.frame_count(channels.shape[1])
    frames = np.zeros((count, channels.shape[0], cfg.fft_size))
    if count == 0:
        return frames
    window = scipy.signal.get_window(cfg.window, cfg.window_len_samples)
    views = np.lib.stride_tricks.sliding_window_view(
            channels, cfg.window_len_samples, axis=1)[:, ::cfg.hop_samples][:, :count]
    frames[:, :, :cfg.window_len_samples] = np.transpose(views * window, (1, 0, 2))
    return frames


def frame_and_transform(pcm, cfg):
    """
    Frames, windows, zero-pads and transforms multi-channel audio. pcm is
    either a (M, L) array or a sequence of M per-channel sample sequences,
    all of the same length, with samples in [-1, 1]. The result has shape
    (T, M, K) with T = floor((L - window_len)/hop) + 1 and K = fft_size/2 - 1.
    """
    frames = frame_signal(pcm, cfg)
    if frames.shape[0] == 0:
        return np.zeros((0, frames.shape[1], cfg.bins), dtype=np.complex128)
    spectra = np.fft.rfft(frames, n=cfg.fft_size, axis=-1)
    return spectra[..., 1:cfg.bins + 1]


class GmvnStats(object):
    """
    Per-channel, per-bin statistics for GMVN, with the real and imaginary
    parts tracked separately. mean and raw_variance have shape (M, K, 2); the
    last axis is (real, imaginary). raw_variance is the population variance
    before flooring; variance applies the floor. Two stats objects over
    disjoint frame sets merge into the stats of their union.
    """
    def __init__(self, mean, raw_variance, frame_count, variance_floor=1e-8):
        static.check_shapes(mean=(mean, static.Array("f", ("M", "K", 2))),
                raw_variance=(raw_variance, static.Array("f", ("M", "K", 2))))
        self.mean = np.asarray(mean, dtype=np.float64)
        self.raw_variance = np.asarray(raw_variance, dtype=np.float64)
        self.frame_count = int(frame_count)
        self.variance_floor = float(variance_floor)

    @property
    def variance(self):
        return np.maximum(self.raw_variance, self.variance_floor)

    @property
    def channels(self):
        return self.mean.shape[0]

    @property
    def bins(self):
        return self.mean.shape[1]

    def merge(self, other):
        """
        Combines two stats objects with the pairwise update of Chan et al.
        so that partial statistics can be fitted in parallel.
        """
        if self.mean.shape != other.mean.shape:
            raise FrontendError("cannot merge stats of shape %s with stats of "
                    "shape %s" % (self.mean.shape, other.mean.shape))
        n_a, n_b = self.frame_count, other.frame_count
        n = n_a + n_b
        if n_a == 0 or n_b == 0:
            return other if n_a == 0 else self
        delta = other.mean - self.mean
        mean = self.mean + delta * (float(n_b) / n)
        m2 = (self.raw_variance * n_a + other.raw_variance * n_b +
              delta ** 2 * (float(n_a) * n_b / n))
        return GmvnStats(mean, m2 / n, n, self.variance_floor)

    def __eq__(self, other):
        return (isinstance(other, GmvnStats) and self.frame_count == other.frame_count
                and np.array_equal(self.mean, other.mean)
                and np.array_equal(self.raw_variance, other.raw_variance))

    def __ne__(self, other):
        return not self == other

    def __repr__(self):
        return "GmvnStats(channels=%d, bins=%d, frame_count=%d)" % (
                self.channels, self.bins, self.frame_count)


def _components(frames):
    frames = np.asarray(frames)
    return np.stack([frames.real, frames.imag], axis=-1)


def gmvn_fit(frames, variance_floor=1e-8):
    """
    Fits GMVN statistics to a (T, M, K) complex frame sequence using the
    two-pass population formula.
    """
    frames = np.asarray(frames)
    if frames.ndim == 0 or frames.shape[0] < 2:
        raise FrontendError("insufficient statistics: need at least 2 frames, got %d"
                % (frames.shape[0] if frames.ndim else 0))
    if frames.ndim != 3:
        raise FrontendError("frames must have shape (T, M, K), not %s" % (frames.shape,))
    parts = _components(frames)
    mean = parts.mean(axis=0)
    raw_variance = ((parts - mean) ** 2).mean(axis=0)
    logger.debug("fitted GMVN statistics over %d frames", frames.shape[0])
    return GmvnStats(mean, raw_variance, frames.shape[0], variance_floor)


def _check_stats_shape(frames, stats):
    frames = np.asarray(frames)
    if frames.ndim < 2 or frames.shape[-2:] != stats.mean.shape[:2]:
        raise FrontendError("frames of shape %s don't match stats for %d channels "
                "and %d bins" % (frames.shape, stats.channels, stats.bins))
    return frames


def gmvn_apply(frames, stats):
    """
    Normalizes a frame (M, K) or any array of frames (..., M, K): each real
    and imaginary component becomes (x - mean)/sqrt(variance).
    """
    frames = _check_stats_shape(frames, stats)
    scale = np.sqrt(stats.variance)
    real = (frames.real - stats.mean[..., 0]) / scale[..., 0]
    imag = (frames.imag - stats.mean[..., 1]) / scale[..., 1]
    return real + 1j * imag


def gmvn_invert(frames, stats):
    """
    Undoes gmvn_apply with the same statistics.
    """
    frames = _check_stats_shape(frames, stats)
    scale = np.sqrt(stats.variance)
    real = frames.real * scale[..., 0] + stats.mean[..., 0]
    imag = frames.imag * scale[..., 1] + stats.mean[..., 1]
    return real + 1j * imag


def lfr_stack(frames, lfr_factor):
    """
    Groups consecutive frames into stacks of lfr_factor. Works for any array
    whose first axis is the frame index; trailing frames that don't fill a
    stack are dropped.

    >>> lfr_stack(np.arange(10), 3).tolist()
    [[0, 1, 2], [3, 4, 5], [6, 7, 8]]
    """
    if int(lfr_factor) < 1:
        raise OptionError("lfr_factor must be at least 1, not %r" % lfr_factor)
    frames = np.asarray(frames)
    count = frames.shape[0] // lfr_factor
    return frames[:count * lfr_factor].reshape((count, lfr_factor) + frames.shape[1:])
