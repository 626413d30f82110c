"""Speech features: log-mel spectrograms, per-video-frame windows and contextual providers."""

from dataclasses import dataclass
import math
import struct
import wave

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .exceptions import InvalidInputError

SAMPLE_RATE = 16000
FPS = 25
HOP = 200  # 12.5 ms
WIN = 800  # 50 ms
N_MELS = 80
MEL_PER_FRAME = SAMPLE_RATE / HOP / FPS  # 3.2
WINDOW_ROWS = 16  # 0.2 s
CHUNK_SECONDS = 3
CHUNK_FRAMES = CHUNK_SECONDS * FPS  # 75
LOG_FLOOR = 1e-5


def num_mel_frames(num_samples):
    return (num_samples - WIN) // HOP + 1


def _hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def _mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_mels=N_MELS, n_fft=WIN, sr=SAMPLE_RATE, fmin=55.0, fmax=7600.0):
    """Triangular filters on the HTK mel scale, shape (n_mels, n_fft // 2 + 1)."""
    freqs = np.linspace(0.0, sr / 2, n_fft // 2 + 1)
    edges = _mel_to_hz(np.linspace(_hz_to_mel(fmin), _hz_to_mel(fmax), n_mels + 2))
    lower, center, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rise = (freqs[None] - lower) / (center - lower)
    fall = (upper - freqs[None]) / (upper - center)
    return np.maximum(0.0, np.minimum(rise, fall))


_FILTERS = mel_filterbank()
_WINDOW = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(WIN) / WIN)  # periodic Hann


def compute_mel(waveform, sample_rate=SAMPLE_RATE):
    """Log-mel spectrogram, shape ``(T_mel, 80)``; no centering padding is applied."""
    if sample_rate != SAMPLE_RATE:
        raise InvalidInputError(f"expected {SAMPLE_RATE} Hz audio, got {sample_rate} Hz")
    x = np.asarray(waveform, dtype=np.float64)
    if x.ndim != 1:
        raise InvalidInputError(f"expected mono samples, got shape {x.shape}")
    if x.size < WIN:
        raise InvalidInputError(f"need at least {WIN} samples, got {x.size}")
    frames = np.lib.stride_tricks.sliding_window_view(x, WIN)[::HOP]
    spec = np.abs(np.fft.rfft(frames * _WINDOW, axis=1))
    mel = spec @ _FILTERS.T
    return np.log(np.maximum(mel, LOG_FLOOR)).astype(np.float32)


class MelSpectrogramTransformer(TransformerMixin, BaseEstimator):
    """Stateless transformer turning waveforms into log-mel matrices."""

    def __init__(self, sample_rate=SAMPLE_RATE):
        self.sample_rate = sample_rate

    def fit(self, X=None, y=None):
        return self

    def transform(self, X):
        if isinstance(X, np.ndarray) and X.ndim == 1:
            return compute_mel(X, self.sample_rate)
        return [compute_mel(x, self.sample_rate) for x in X]


def _round_half_up(x):
    return int(math.floor(x + 0.5))


@dataclass(frozen=True)
class AudioWindow:
    segment: np.ndarray
    center_video_frame: int
    start: int
    padded: bool


def window_for_frame(mel, frame_idx):
    """The 16-row mel slice starting at ``round(3.2 * frame_idx)``.

    Rows past the end are zero-filled and flagged; a window lying entirely
    outside the spectrogram is an error.
    """
    if frame_idx < 0:
        raise InvalidInputError(f"frame index must be >= 0, got {frame_idx}")
    return _window_at(mel, _round_half_up(frame_idx * MEL_PER_FRAME), frame_idx)


def centered_window(mel, frame_idx):
    """Window whose span is centered on ``frame_idx`` (covers frames t-2 .. t+2)."""
    return _window_at(mel, _round_half_up((frame_idx - 2) * MEL_PER_FRAME), frame_idx)


def _window_at(mel, start, frame_idx):
    mel = np.asarray(mel)
    t_mel = mel.shape[0]
    if start >= t_mel or start + WINDOW_ROWS <= 0:
        raise InvalidInputError(f"window for frame {frame_idx} lies outside {t_mel} mel rows")
    seg = np.zeros((WINDOW_ROWS, mel.shape[1]), dtype=np.float32)
    lo, hi = max(start, 0), min(start + WINDOW_ROWS, t_mel)
    seg[lo - start:hi - start] = mel[lo:hi]
    return AudioWindow(seg, frame_idx, start, padded=(lo != start or hi != start + WINDOW_ROWS))


def pad_value():
    """Mel value of digital silence, used when padding windows for model input."""
    return math.log(LOG_FLOOR)


def split_chunks(waveform):
    """Split a waveform into 3 s chunks, zero-padding the last one.

    Returns ``(chunks, valid_frames)`` where ``valid_frames[k]`` counts the
    video frames of chunk ``k`` backed by real audio.
    """
    x = np.asarray(waveform, dtype=np.float32)
    size = CHUNK_SECONDS * SAMPLE_RATE
    n = max(1, math.ceil(x.size / size))
    padded = np.zeros(n * size, dtype=np.float32)
    padded[: x.size] = x
    chunks = padded.reshape(n, size)
    valid = [min(CHUNK_FRAMES, max(0, math.ceil((x.size - k * size) * FPS / SAMPLE_RATE))) for k in range(n)]
    return chunks, valid


def read_wav(path):
    """Read 16 kHz 16-bit mono PCM into float32 samples in [-1, 1]."""
    with wave.open(str(path), "rb") as f:
        if f.getframerate() != SAMPLE_RATE:
            raise InvalidInputError(f"{path}: expected {SAMPLE_RATE} Hz, got {f.getframerate()}")
        if f.getnchannels() != 1 or f.getsampwidth() != 2:
            raise InvalidInputError(f"{path}: expected 16-bit mono PCM")
        data = f.readframes(f.getnframes())
    return np.frombuffer(data, dtype="<i2").astype(np.float32) / 32768.0


def write_wav(path, samples):
    pcm = np.clip(np.round(np.asarray(samples) * 32767.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as f:
        f.setnchannels(1)
        f.setsampwidth(2)
        f.setframerate(SAMPLE_RATE)
        f.writeframes(pcm.tobytes())


def save_mel(path, mel):
    """Little-endian float32 payload behind an 8-byte ``(T_mel, 80)`` header."""
    mel = np.asarray(mel, dtype="<f4")
    with open(path, "wb") as f:
        f.write(struct.pack("<II", *mel.shape))
        f.write(mel.tobytes())


def load_mel(path):
    with open(path, "rb") as f:
        rows, cols = struct.unpack("<II", f.read(8))
        data = np.frombuffer(f.read(), dtype="<f4")
    if data.size != rows * cols:
        raise InvalidInputError(f"{path}: payload holds {data.size} values, header says {rows}x{cols}")
    return data.reshape(rows, cols).astype(np.float32)
