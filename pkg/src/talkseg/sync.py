"""Segmentation-domain lip-sync expert.

A two-tower network embeds ``T_v`` lower-half one-hot masks and a 0.2 s mel
window into a shared 512-d space; their clamped cosine is the sync
probability and binary cross-entropy over it is the training loss.
"""

from dataclasses import dataclass
import math

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted
import torch
from torch import nn
import torch.nn.functional as F

from . import audio
from .checkpoint import load_checkpoint, save_checkpoint
from .exceptions import InvalidInputError, TrainingDivergenceError
from .masks import one_hot
from .speech import conv_block, frame_windows, normalize_mel

T_V = 5
EMBED_DIM = 512
EPS = 1e-8
EPS_P = 1e-7


def sync_probability(s, m, eps=EPS, eps_p=EPS_P):
    """Clamped cosine similarity of speech and mask embeddings.

    Works on numpy vectors or on batched torch tensors (last axis = embedding).
    """
    if isinstance(s, torch.Tensor):
        if s.shape != m.shape:
            raise InvalidInputError(f"embedding shapes differ: {tuple(s.shape)} vs {tuple(m.shape)}")
        denom = torch.clamp(s.norm(dim=-1) * m.norm(dim=-1), min=eps)
        return torch.clamp((s * m).sum(-1) / denom, eps_p, 1.0)
    s = np.asarray(s, dtype=np.float64)
    m = np.asarray(m, dtype=np.float64)
    if s.shape != m.shape:
        raise InvalidInputError(f"embedding shapes differ: {s.shape} vs {m.shape}")
    denom = max(np.linalg.norm(s) * np.linalg.norm(m), eps)
    return float(np.clip(s @ m / denom, eps_p, 1.0))


def sync_loss(p, labels):
    """Mean binary cross-entropy: ``-log p`` for synced pairs, ``-log(1-p)`` otherwise."""
    if isinstance(p, torch.Tensor):
        if p.numel() == 0:
            raise InvalidInputError("sync loss needs a non-empty batch")
        y = torch.as_tensor(labels, dtype=p.dtype)
        q = torch.clamp(p, EPS_P, 1.0 - EPS_P)
        return -(y * torch.log(q) + (1 - y) * torch.log1p(-q)).mean()
    p = np.atleast_1d(np.asarray(p, dtype=np.float64))
    y = np.atleast_1d(np.asarray(labels, dtype=np.float64))
    if p.size == 0:
        raise InvalidInputError("sync loss needs a non-empty batch")
    if p.shape != y.shape:
        raise InvalidInputError(f"{p.size} scores for {y.size} labels")
    q = np.clip(p, EPS_P, 1.0 - EPS_P)
    return float(np.mean(-(y * np.log(q) + (1 - y) * np.log1p(-q))))


class SyncNetwork(nn.Module):
    def __init__(self, num_classes=12, resolution=64, width=16, t_v=T_V):
        super().__init__()
        if resolution % 32:
            raise InvalidInputError(f"sync expert needs resolution divisible by 32, got {resolution}")
        self.in_channels = t_v * num_classes
        self.num_classes = num_classes
        self.t_v = t_v
        w = width
        self.mask_net = nn.Sequential(
            conv_block(self.in_channels, w * 2),
            conv_block(w * 2, w * 4, 2),
            conv_block(w * 4, w * 8, 2),
            conv_block(w * 8, w * 8, 2),
            conv_block(w * 8, w * 16, 2),
        )
        mh, mw = resolution // 32, resolution // 16
        self.mask_proj = nn.Linear(w * 16 * mh * mw, EMBED_DIM)
        self.speech_net = nn.Sequential(
            conv_block(1, w * 2),
            conv_block(w * 2, w * 4, (1, 2)),
            conv_block(w * 4, w * 8, 2),
            conv_block(w * 8, w * 8, 2),
            conv_block(w * 8, w * 16, 2),
        )
        self.speech_proj = nn.Linear(w * 16 * 2 * 5, EMBED_DIM)

    def embed_masks(self, masks):
        """``(B, T_v*C, H/2, W)`` lower-half stacks → ``(B, 512)`` non-negative embeddings."""
        if masks.shape[1] != self.in_channels:
            raise InvalidInputError(
                f"mask encoder expects {self.in_channels} channels, got {masks.shape[1]}"
            )
        return F.relu(self.mask_proj(self.mask_net(masks).flatten(1)))

    def embed_speech(self, windows):
        return F.relu(self.speech_proj(self.speech_net(windows.unsqueeze(1)).flatten(1)))

    def forward(self, masks, windows):
        return sync_probability(self.embed_speech(windows), self.embed_masks(masks))


def lower_half_stack(onehots):
    """``(..., T_v, C, H, W)`` → ``(..., T_v*C, H/2, W)`` lower halves stacked on channels."""
    h = onehots.shape[-2]
    low = onehots[..., h // 2:, :]
    return low.reshape(*low.shape[:-4], -1, *low.shape[-2:])


@dataclass
class SyncSample:
    mask_window: np.ndarray   # (T_v*C, H/2, W)
    speech: np.ndarray        # (16, 80) normalized mel
    label: int
    clip: int
    frame: int
    audio_clip: int
    audio_frame: int


class PairSampler:
    """Draws balanced synced / unsynced pairs from prepared clips."""

    def __init__(self, clips, num_classes=12, min_offset=5):
        self.clips = [c for c in clips if c.num_frames >= T_V + 10]
        if not self.clips:
            raise InvalidInputError(f"no clip has the {T_V + 10} frames needed for sync pairs")
        self.num_classes = num_classes
        self.min_offset = min_offset
        self._onehot = [
            np.stack([one_hot(l, num_classes) for l in c.labels]).astype(np.float32) for c in self.clips
        ]
        self._mel = [normalize_mel(c.mel) for c in self.clips]

    def draw(self, rng):
        """Pick ``(clip, frame, audio_clip, audio_frame, label)`` indices."""
        ci = int(rng.integers(len(self.clips)))
        last = self.clips[ci].num_frames - T_V
        t = int(rng.integers(last + 1))
        if rng.random() < 0.5:
            return ci, t, ci, t, 1
        if len(self.clips) > 1 and rng.random() < 0.5:
            cj = int(rng.choice([j for j in range(len(self.clips)) if j != ci]))
            return ci, t, cj, int(rng.integers(self.clips[cj].num_frames - T_V + 1)), 0
        choices = [u for u in range(last + 1) if abs(u - t) >= self.min_offset]
        return ci, t, ci, int(rng.choice(choices)), 0

    def sample(self, rng):
        ci, t, cj, u, label = self.draw(rng)
        return self.build(ci, t, cj, u, label)

    def build(self, ci, t, cj, u, label):
        masks = lower_half_stack(self._onehot[ci][t:t + T_V])
        speech = frame_windows(self._mel[cj], [u], centered=False)[0]
        return SyncSample(masks, speech, label, ci, t, cj, u)

    def batch(self, rng, n):
        samples = [self.sample(rng) for _ in range(n)]
        return collate(samples)


def sample_pair(clips, rng, num_classes=12):
    """One :class:`SyncSample` drawn from ``clips``."""
    return PairSampler(clips, num_classes).sample(rng)


def collate(samples):
    masks = torch.from_numpy(np.stack([s.mask_window for s in samples]))
    speech = torch.from_numpy(np.stack([s.speech for s in samples]))
    labels = torch.tensor([s.label for s in samples], dtype=torch.float32)
    return masks, speech, labels


class SyncExpert(BaseEstimator):
    """Trainable lip-sync discriminator with a scikit-learn style surface."""

    def __init__(self, num_classes=12, resolution=64, width=16, steps=2000, batch_size=8,
                 lr=1e-4, eval_every=500, eval_samples=800, seed=0):
        self.num_classes = num_classes
        self.resolution = resolution
        self.width = width
        self.steps = steps
        self.batch_size = batch_size
        self.lr = lr
        self.eval_every = eval_every
        self.eval_samples = eval_samples
        self.seed = seed

    def _build(self):
        torch.manual_seed(self.seed)
        return SyncNetwork(self.num_classes, self.resolution, self.width)

    def fit(self, clips, eval_clips=None, log=None):
        """Train on ``clips``; held-out accuracy on ``eval_clips`` is logged every ``eval_every`` steps."""
        rng = np.random.default_rng([self.seed, 101])
        self.network_ = self._build()
        sampler = PairSampler(clips, self.num_classes)
        held_out = None
        if eval_clips:
            held_out = PairSampler(eval_clips, self.num_classes).batch(
                np.random.default_rng([self.seed, 202]), self.eval_samples)
        opt = torch.optim.Adam(self.network_.parameters(), lr=self.lr)
        self.history_ = []
        self.network_.train()
        for step in range(1, self.steps + 1):
            masks, speech, labels = sampler.batch(rng, self.batch_size)
            loss = sync_loss(self.network_(masks, speech), labels)
            if not torch.isfinite(loss):
                raise TrainingDivergenceError(
                    f"sync expert loss became {loss.item()} at step {step}", {"step": step})
            opt.zero_grad()
            loss.backward()
            opt.step()
            if held_out is not None and (step % self.eval_every == 0 or step == self.steps):
                acc = self._accuracy(*held_out)
                record = {"module": "syncnet", "step": step, "loss": loss.item(), "accuracy": acc}
                self.history_.append(record)
                if log is not None:
                    log(record)
        self.network_.eval()
        self.steps_done_ = self.steps
        self.accuracy_ = self.history_[-1]["accuracy"] if self.history_ else float("nan")
        return self

    def _accuracy(self, masks, speech, labels):
        was_training = self.network_.training
        self.network_.eval()
        with torch.no_grad():
            p = torch.cat([self.network_(m, s) for m, s in zip(masks.split(200), speech.split(200))])
        self.network_.train(was_training)
        return float(((p > 0.5).float() == labels).float().mean())

    def predict_proba(self, masks, speech):
        """Sync probabilities for batched ``(B, T_v*C, H/2, W)`` masks and ``(B, 16, 80)`` windows."""
        check_is_fitted(self, "network_")
        with torch.no_grad():
            return self.network_(torch.as_tensor(masks, dtype=torch.float32),
                                 torch.as_tensor(speech, dtype=torch.float32)).numpy()

    def predict(self, masks, speech):
        return (self.predict_proba(masks, speech) > 0.5).astype(np.int64)

    def score(self, clips, num_samples=800, seed=0):
        """Held-out binary accuracy at threshold 0.5 on freshly drawn balanced pairs."""
        check_is_fitted(self, "network_")
        batch = PairSampler(clips, self.num_classes).batch(np.random.default_rng([seed, 303]), num_samples)
        return self._accuracy(*batch)

    def freeze(self):
        check_is_fitted(self, "network_")
        self.network_.eval()
        for p in self.network_.parameters():
            p.requires_grad_(False)
        return self.network_

    def save(self, path, config_hash=""):
        check_is_fitted(self, "network_")
        return save_checkpoint(
            path, "syncnet", self.network_.state_dict(), config_hash, self.steps_done_,
            extra={"C": self.num_classes, "T_v": T_V, "params": self.get_params(),
                   "accuracy": self.accuracy_},
        )

    @classmethod
    def load(cls, path, config_hash=None):
        header, data = load_checkpoint(path, "syncnet", config_hash)
        est = cls(**header["params"])
        est.network_ = est._build()
        est.network_.load_state_dict(data["state"])
        est.network_.eval()
        est.steps_done_ = header["step"]
        est.accuracy_ = header.get("accuracy", math.nan)
        return est
