"""Resampling and the two log-mel frontends.

Two frontend variants share one code path: the classifier variant (25 ms
Hann windows, 64 mel bins, 96-frame patches) and the recognizer-style
variant (32 ms windows, 128 mel bins, frame stacking + subsampling).
Both use a 10 ms hop at 16 kHz, a triangular mel filterbank on magnitude
spectra, and log(x + 0.01).
"""

from __future__ import annotations

import functools
import math
import struct
from dataclasses import dataclass

import numpy as np
from scipy.io import wavfile
from scipy.signal import upfirdn

from .errors import ConfigError, FormatError, InsufficientInputError
from .validation import as_float_array

SAMPLE_RATE = 16000
HOP_SECONDS = 0.010
PATCH_FRAMES = 96          # 96 frames x 10 ms hop = 960 ms segments
PATCH_BINS = 64
LOG_OFFSET = 0.01
LOG_SILENCE = math.log(LOG_OFFSET)

FEATURE_MAGIC = b"IGF1"

# Resampler quality: Kaiser beta 8, 64 taps per polyphase branch.
_RESAMPLE_BETA = 8.0
_RESAMPLE_HALF_TAPS = 32


@dataclass(frozen=True)
class FrontendConfig:
    """STFT + mel filterbank parameters for one frontend variant."""

    sample_rate: int = SAMPLE_RATE
    window_samples: int = 400
    hop_samples: int = 160
    n_mels: int = 64
    fft_size: int = 512
    mel_low_hz: float = 125.0
    mel_high_hz: float = 7500.0
    log_offset: float = LOG_OFFSET

    def __post_init__(self):
        if not 0 < self.mel_low_hz < self.mel_high_hz < self.sample_rate / 2:
            raise ConfigError("need 0 < mel_low_hz < mel_high_hz < Nyquist")
        if self.fft_size < self.window_samples:
            raise ConfigError("fft_size must be >= window length in samples")
        if self.window_samples <= 0 or self.hop_samples <= 0 or self.n_mels <= 0:
            raise ConfigError("window, hop and mel-bin counts must be positive")

    @classmethod
    def cnn(cls):
        """25 ms window, 64 mel bins: input to patching and the CNN."""
        return cls(window_samples=400, hop_samples=160, n_mels=64, fft_size=512)

    @classmethod
    def asr(cls):
        """32 ms window, 128 mel bins: input to stacking/subsampling.

        fft_size 1024 rather than the minimal 512: at 512 the lowest of the
        128 narrow triangles contains no FFT bin and its filter row would
        be all-zero.
        """
        return cls(window_samples=512, hop_samples=160, n_mels=128, fft_size=1024)


@dataclass(frozen=True)
class LogMelPatch:
    """One 96x64 log-mel segment of an utterance."""

    patch: np.ndarray
    utterance_id: str
    segment_index: int

    def __post_init__(self):
        if self.patch.shape != (PATCH_FRAMES, PATCH_BINS):
            raise ValueError(f"patch must be {PATCH_FRAMES}x{PATCH_BINS}, got {self.patch.shape}")
        if not np.all(np.isfinite(self.patch)):
            raise ValueError("patch contains non-finite values")
        if self.segment_index < 0:
            raise ValueError("segment_index must be >= 0")


def hz_to_mel(hz):
    return 2595.0 * np.log10(1.0 + np.asarray(hz, dtype=np.float64) / 700.0)


def mel_to_hz(mel):
    return 700.0 * (10.0 ** (np.asarray(mel, dtype=np.float64) / 2595.0) - 1.0)


@functools.lru_cache(maxsize=8)
def mel_filterbank(config: FrontendConfig) -> np.ndarray:
    """Triangular mel filterbank, shape (n_mels, fft_size//2 + 1).

    Rows are nonnegative and each row has positive sum; an empty row means
    the FFT resolution cannot support the band layout and is rejected.
    """
    n_bins = config.fft_size // 2 + 1
    bin_hz = np.linspace(0.0, config.sample_rate / 2.0, n_bins)
    edges_hz = mel_to_hz(
        np.linspace(hz_to_mel(config.mel_low_hz), hz_to_mel(config.mel_high_hz), config.n_mels + 2)
    )
    lower = edges_hz[:-2, None]
    center = edges_hz[1:-1, None]
    upper = edges_hz[2:, None]
    up_slope = (bin_hz[None, :] - lower) / (center - lower)
    down_slope = (upper - bin_hz[None, :]) / (upper - center)
    weights = np.maximum(0.0, np.minimum(up_slope, down_slope))
    row_sums = weights.sum(axis=1)
    if np.any(row_sums <= 0.0):
        empty = int(np.flatnonzero(row_sums <= 0.0)[0])
        raise ConfigError(
            f"mel band {empty} is empty at fft_size {config.fft_size}; increase the FFT size"
        )
    weights.setflags(write=False)
    return weights


def _hann_periodic(n):
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def frame_count(n_samples, window, hop):
    """T = 1 + floor((N - W) / H); requires N >= W."""
    if n_samples < window:
        raise InsufficientInputError(
            f"need at least {window} samples for one window, got {n_samples}; pad first"
        )
    return 1 + (n_samples - window) // hop


def log_mel(samples, config: FrontendConfig) -> np.ndarray:
    """Log-mel frames of a 16 kHz waveform, shape (T, n_mels).

    Hann-windowed magnitude STFT, triangular mel integration, then
    log(x + log_offset).
    """
    x = as_float_array(samples, name="samples", ndim=1)
    n_frames = frame_count(x.size, config.window_samples, config.hop_samples)
    frames = np.lib.stride_tricks.sliding_window_view(x, config.window_samples)
    frames = frames[:: config.hop_samples][:n_frames]
    windowed = frames * _hann_periodic(config.window_samples)
    spectrum = np.abs(np.fft.rfft(windowed, n=config.fft_size, axis=1))
    mel = spectrum @ mel_filterbank(config).T
    return np.log(mel + config.log_offset)


def make_patches(frames, utterance_id=""):
    """Partition 64-bin frames into non-overlapping 96-frame patches.

    A trailing partial block is dropped, unless it is the only block, in
    which case it is padded with silence-level rows (log of the offset).
    """
    frames = as_float_array(frames, name="frames", ndim=2)
    if frames.shape[1] != PATCH_BINS:
        raise ValueError(f"patching expects {PATCH_BINS}-bin frames, got {frames.shape[1]}")
    if frames.shape[0] == 0:
        raise ValueError("frames must be non-empty")
    n_full = frames.shape[0] // PATCH_FRAMES
    if n_full == 0:
        padded = np.full((PATCH_FRAMES, PATCH_BINS), LOG_SILENCE)
        padded[: frames.shape[0]] = frames
        return [LogMelPatch(padded, utterance_id, 0)]
    return [
        LogMelPatch(frames[i * PATCH_FRAMES:(i + 1) * PATCH_FRAMES].copy(), utterance_id, i)
        for i in range(n_full)
    ]


def stack_subsample_asr(frames):
    """Stack 4 contiguous frames and keep every 3rd stacked row.

    (T, B) -> (ceil((T-3)/3), 4*B); output frame rate 30 ms.
    """
    frames = as_float_array(frames, name="frames", ndim=2)
    n_frames = frames.shape[0]
    if n_frames < 4:
        raise InsufficientInputError(f"stacking needs at least 4 frames, got {n_frames}")
    stacked = np.concatenate([frames[t: n_frames - 3 + t] for t in range(4)], axis=1)
    return stacked[::3].copy()


def resample_to_mono_16k(samples, sample_rate):
    """Mono 16 kHz version of a 1- or 2-channel waveform.

    Stereo is averaged to mono first; rate conversion is a Kaiser
    windowed-sinc polyphase filter.  Source rates outside 8-96 kHz and
    channel counts above 2 are rejected.
    """
    arr = as_float_array(samples, name="samples")
    if arr.ndim == 2:
        if arr.shape[1] not in (1, 2):
            raise FormatError(f"unsupported channel count {arr.shape[1]}")
        arr = arr.mean(axis=1)
    elif arr.ndim != 1:
        raise FormatError("samples must be (N,) or (N, channels)")
    if arr.size == 0:
        raise FormatError("empty waveform")
    rate = int(sample_rate)
    if rate != sample_rate or not 8000 <= rate <= 96000:
        raise FormatError(f"unsupported sample rate {sample_rate!r}")
    if rate == SAMPLE_RATE:
        return arr.copy()

    g = math.gcd(SAMPLE_RATE, rate)
    up, down = SAMPLE_RATE // g, rate // g
    n_taps = 2 * _RESAMPLE_HALF_TAPS * up + 1
    center = _RESAMPLE_HALF_TAPS * up
    # Cutoff as a fraction of the upsampled rate; gain 'up' restores level.
    f_c = min(1.0, SAMPLE_RATE / rate) / (2.0 * up)
    t = np.arange(n_taps) - center
    h = 2.0 * f_c * np.sinc(2.0 * f_c * t) * np.kaiser(n_taps, _RESAMPLE_BETA) * up
    # Pad so the filter delay lands on the decimation grid.
    pad = (-center) % down
    if pad:
        h = np.concatenate([np.zeros(pad), h])
    skip = (center + pad) // down
    out_len = -(-arr.size * up // down)
    filtered = upfirdn(h, arr, up=up, down=down)
    out = np.zeros(out_len)
    seg = filtered[skip: skip + out_len]
    out[: seg.size] = seg
    return out


def read_wav(path):
    """Read a PCM WAV file: returns (samples scaled to [-1, 1], rate).

    Accepts 16-bit integer or 32-bit float data with 1 or 2 channels.
    """
    try:
        rate, data = wavfile.read(path)
    except ValueError as exc:
        raise FormatError(f"{path}: unreadable WAV ({exc})") from exc
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32:
        samples = data.astype(np.float64)
    else:
        raise FormatError(f"{path}: unsupported WAV sample format {data.dtype}")
    if samples.ndim == 2 and samples.shape[1] > 2:
        raise FormatError(f"{path}: unsupported channel count {samples.shape[1]}")
    return samples, rate


def write_wav(path, samples, sample_rate=SAMPLE_RATE, fmt="int16"):
    arr = as_float_array(samples, name="samples", ndim=1)
    if fmt == "int16":
        scaled = np.clip(np.round(arr * 32767.0), -32768, 32767).astype(np.int16)
    elif fmt == "float32":
        scaled = arr.astype(np.float32)
    else:
        raise ConfigError(f"unsupported WAV format {fmt!r}")
    wavfile.write(path, sample_rate, scaled)


def write_feature_cache(path, frames):
    """Binary feature cache: magic, u32 T, u32 B, little-endian f32 rows."""
    arr = as_float_array(frames, name="frames", ndim=2)
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<II", arr.shape[0], arr.shape[1]))
        fh.write(arr.astype("<f4").tobytes(order="C"))


def read_feature_cache(path):
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != FEATURE_MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}")
        header = fh.read(8)
        if len(header) != 8:
            raise FormatError(f"{path}: truncated header")
        n_frames, n_bins = struct.unpack("<II", header)
        payload = fh.read(4 * n_frames * n_bins)
        if len(payload) != 4 * n_frames * n_bins:
            raise FormatError(f"{path}: truncated payload")
    frames = np.frombuffer(payload, dtype="<f4").reshape(n_frames, n_bins)
    return frames.astype(np.float64)
