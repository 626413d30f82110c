"""Trainable speech encoders: the 0.2 s local window encoder and contextual providers."""

import numpy as np
import torch
from torch import nn
import torch.nn.functional as F

from . import audio
from .exceptions import InvalidInputError

MEL_SCALE = 12.0
CHUNK_MEL_ROWS = audio.num_mel_frames(audio.CHUNK_SECONDS * audio.SAMPLE_RATE)


def normalize_mel(mel):
    """Shift log-mel so digital silence maps to 0 and speech to roughly [0, 1.5]."""
    return (np.asarray(mel, dtype=np.float32) - audio.pad_value()) / MEL_SCALE


def frame_windows(mel_norm, frames, centered=True):
    """Stack normalized 16-row windows for ``frames``; out-of-range rows are silence (0)."""
    mel_norm = np.asarray(mel_norm, dtype=np.float32)
    t_mel = mel_norm.shape[0]
    out = np.zeros((len(frames), audio.WINDOW_ROWS, mel_norm.shape[1]), dtype=np.float32)
    shift = 2 if centered else 0
    for i, t in enumerate(frames):
        start = audio._round_half_up((t - shift) * audio.MEL_PER_FRAME)
        lo, hi = max(start, 0), min(start + audio.WINDOW_ROWS, t_mel)
        if hi > lo:
            out[i, lo - start:hi - start] = mel_norm[lo:hi]
    return out


def conv_block(cin, cout, stride=1):
    return nn.Sequential(
        nn.Conv2d(cin, cout, 3, stride, 1, bias=False),
        nn.BatchNorm2d(cout),
        nn.LeakyReLU(0.2, inplace=True),
    )


class LocalSpeechEncoder(nn.Module):
    """16×80 mel window → ``dim``-d vector."""

    def __init__(self, dim=256, width=16):
        super().__init__()
        self.net = nn.Sequential(
            conv_block(1, width),
            conv_block(width, width * 2, (1, 2)),   # 16×40
            conv_block(width * 2, width * 4, 2),    # 8×20
            conv_block(width * 4, width * 4, 2),    # 4×10
            conv_block(width * 4, width * 8, 2),    # 2×5
        )
        self.proj = nn.Linear(width * 8 * 2 * 5, dim)
        self.dim = dim

    def forward(self, windows):
        x = self.net(windows.unsqueeze(1))
        return self.proj(x.flatten(1))


class ContextualProvider(nn.Module):
    """Small sequence encoder over a 3 s chunk, emitting 75 per-frame vectors.

    Stands in for a large pretrained audio-visual encoder behind the same
    chunk-in, per-frame-features-out contract.
    """

    def __init__(self, dim=256, hidden=64, heads=4):
        super().__init__()
        self.dim = dim
        self.inp = nn.Conv1d(audio.N_MELS, hidden, 5, padding=2)
        self.attn = nn.TransformerEncoderLayer(
            hidden, heads, dim_feedforward=hidden * 2, dropout=0.0, batch_first=True
        )
        self.pos = nn.Parameter(torch.zeros(1, audio.CHUNK_FRAMES, hidden))
        self.out = nn.Linear(hidden, dim)

    def forward_mel(self, chunk_mels):
        """``(B, 237, 80)`` normalized chunk mels → ``(B, 75, dim)``."""
        x = F.leaky_relu(self.inp(chunk_mels.transpose(1, 2)), 0.2)
        x = F.adaptive_avg_pool1d(x, audio.CHUNK_FRAMES).transpose(1, 2)
        x = self.attn(x + self.pos)
        return self.out(x)

    def contextual_features(self, chunk):
        return contextual_features(self, chunk)


class ZeroProvider(nn.Module):
    """Constant-zero provider with the same interface; useful for ablations and tests."""

    def __init__(self, dim=256):
        super().__init__()
        self.dim = dim

    def forward_mel(self, chunk_mels):
        return chunk_mels.new_zeros(chunk_mels.shape[0], audio.CHUNK_FRAMES, self.dim)


def chunk_mels(waveform):
    """Normalized mel for every 3 s chunk of a clip: ``(n_chunks, 237, 80)`` plus valid frame counts."""
    chunks, valid = audio.split_chunks(waveform)
    mels = np.stack([normalize_mel(audio.compute_mel(c)) for c in chunks])
    return mels, valid


def contextual_features(provider, chunk):
    """Run ``provider`` on one waveform chunk of at most 3 s.

    Returns ``(features, padded)``: a ``(75, dim)`` array and a boolean flag per
    frame marking entries that lie in zero padding.
    """
    chunk = np.asarray(chunk, dtype=np.float32)
    size = audio.CHUNK_SECONDS * audio.SAMPLE_RATE
    if chunk.ndim != 1 or chunk.size > size:
        raise InvalidInputError(f"expected a mono chunk of at most {size} samples, got {chunk.shape}")
    mels, valid = chunk_mels(chunk)
    with torch.no_grad():
        feats = provider.forward_mel(torch.from_numpy(mels[:1]))[0].numpy()
    padded = np.arange(audio.CHUNK_FRAMES) >= valid[0]
    return feats, padded


def clip_contextual(provider, mels, num_frames):
    """Per-video-frame contextual features for a whole clip from its chunk mels."""
    feats = provider.forward_mel(torch.as_tensor(mels))
    return feats.reshape(-1, feats.shape[-1])[:num_frames]
