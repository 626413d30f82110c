"""Speech-driven talking segmentation generation.

A U-Net takes the channel-stacked pose source (lower half occluded) and
identity reference masks, receives the fused speech embedding at its
bottleneck, and predicts per-pixel class logits. Training uses a
region-weighted cross-entropy, optionally joined by the frozen sync expert's
loss on soft lower-half predictions.
"""

from dataclasses import dataclass
import logging

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted
import torch
from torch import nn
import torch.nn.functional as F

from . import audio
from ._validation import check_label_map
from .checkpoint import load_checkpoint, save_checkpoint
from .exceptions import InvalidInputError, TrainingDivergenceError
from .masks import compute_class_weights, one_hot
from .speech import (
    ContextualProvider, LocalSpeechEncoder, ZeroProvider, chunk_mels, conv_block,
    frame_windows, normalize_mel,
)
from .sync import T_V, lower_half_stack, sync_loss

logger = logging.getLogger(__name__)


def ce_loss(logits, target):
    """Mean per-pixel negative log-likelihood of ``target`` under ``softmax(logits)``.

    ``logits`` is ``(N, C, H, W)``, ``target`` is ``(N, H, W)``.
    """
    return weighted_ce_loss(logits, target, None)


def weighted_ce_loss(logits, target, weights):
    logits = torch.as_tensor(logits)
    target = torch.as_tensor(target, dtype=torch.long)
    c = logits.shape[1]
    if target.numel() and (int(target.min()) < 0 or int(target.max()) >= c):
        raise InvalidInputError(f"target label outside [0, {c})")
    nll = -torch.gather(F.log_softmax(logits, dim=1), 1, target.unsqueeze(1)).squeeze(1)
    if weights is not None:
        nll = nll * torch.as_tensor(weights, dtype=logits.dtype)[target]
    return nll.mean()


def l1_label_loss(logits, target):
    """Ablation baseline: L1 between the first logit channel and the integer label."""
    return (logits[:, 0] - torch.as_tensor(target, dtype=logits.dtype)).abs().mean()


def soft_labels(logits, loss):
    """Differentiable per-class probabilities used as the expert's mask input."""
    if loss == "l1":
        c = logits.shape[1]
        ids = torch.arange(c, dtype=logits.dtype).view(1, c, 1, 1)
        return F.relu(1.0 - (logits[:, :1] - ids).abs())
    return F.softmax(logits, dim=1)


def decode_logits(logits, loss="ce"):
    if loss == "l1":
        c = logits.shape[1]
        return torch.clamp(torch.round(logits[:, 0]), 0, c - 1).long()
    return logits.argmax(1)


class UNet(nn.Module):
    """Mask-pair U-Net with speech injected at the bottleneck."""

    def __init__(self, num_classes=12, resolution=64, depth=4, base_width=16, speech_dim=512):
        super().__init__()
        if resolution % (2 ** depth):
            raise InvalidInputError(f"resolution {resolution} not divisible by 2**{depth}")
        widths = [base_width * min(2 ** i, 8) for i in range(depth + 1)]
        self.inp = nn.Sequential(conv_block(2 * num_classes, widths[0]), conv_block(widths[0], widths[0]))
        self.down = nn.ModuleList(conv_block(widths[i], widths[i + 1], 2) for i in range(depth))
        self.speech = nn.Linear(speech_dim, widths[-1])
        self.fuse = conv_block(2 * widths[-1], widths[-1])
        self.up = nn.ModuleList(
            nn.ConvTranspose2d(widths[i + 1], widths[i], 4, 2, 1) for i in reversed(range(depth))
        )
        self.merge = nn.ModuleList(conv_block(2 * widths[i], widths[i]) for i in reversed(range(depth)))
        self.out = nn.Conv2d(widths[0], num_classes, 1)

    def forward(self, masks, speech):
        x = self.inp(masks)
        skips = [x]
        for layer in self.down:
            x = layer(x)
            skips.append(x)
        s = F.leaky_relu(self.speech(speech), 0.2)[:, :, None, None].expand_as(x)
        x = self.fuse(torch.cat([x, s], 1))
        for up, merge, skip in zip(self.up, self.merge, reversed(skips[:-1])):
            x = merge(torch.cat([up(x), skip], 1))
        return self.out(x)


class TSGNetwork(nn.Module):
    def __init__(self, num_classes=12, resolution=64, depth=4, base_width=16, d_local=256,
                 d_ctx=256, provider="trainable"):
        super().__init__()
        self.local = LocalSpeechEncoder(d_local)
        if provider == "trainable":
            self.provider = ContextualProvider(d_ctx)
        elif provider == "zero":
            self.provider = ZeroProvider(d_ctx)
        else:
            raise InvalidInputError(f"unknown contextual provider {provider!r}")
        self.unet = UNet(num_classes, resolution, depth, base_width, d_local + d_ctx)

    def speech_embedding(self, windows, contextual):
        return torch.cat([self.local(windows), contextual], 1)

    def forward(self, mask_pairs, windows, contextual):
        return self.unet(mask_pairs, self.speech_embedding(windows, contextual))


@dataclass
class TSGLossReport:
    wce: float
    sync: float
    total: float


class _ClipTensors:
    """Per-clip tensors prepared once for training and generation."""

    def __init__(self, labels, waveform, num_classes):
        self.labels = np.asarray(labels)
        self.onehot = np.stack([one_hot(l, num_classes) for l in self.labels]).astype(np.float32)
        mel = audio.compute_mel(waveform)
        self.mel_norm = normalize_mel(mel)
        self.chunks = torch.from_numpy(chunk_mels(waveform)[0])

    @property
    def num_frames(self):
        return self.labels.shape[0]


class TalkingSegmentationGenerator(BaseEstimator):
    """Speech → segmentation-sequence estimator."""

    def __init__(self, num_classes=12, resolution=64, depth=4, base_width=16, d_local=256, d_ctx=256,
                 provider="trainable", loss="ce", phase1_steps=1500, phase2_steps=1000,
                 batch_windows=2, lr=1e-4, beta1=0.5, beta2=0.999, lambda_sync=0.03,
                 use_syncnet=True, autoregressive=False, seed=0):
        self.num_classes = num_classes
        self.resolution = resolution
        self.depth = depth
        self.base_width = base_width
        self.d_local = d_local
        self.d_ctx = d_ctx
        self.provider = provider
        self.loss = loss
        self.phase1_steps = phase1_steps
        self.phase2_steps = phase2_steps
        self.batch_windows = batch_windows
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.lambda_sync = lambda_sync
        self.use_syncnet = use_syncnet
        self.autoregressive = autoregressive
        self.seed = seed

    def _build(self):
        torch.manual_seed(self.seed)
        return TSGNetwork(self.num_classes, self.resolution, self.depth, self.base_width,
                          self.d_local, self.d_ctx, self.provider)

    # -- training -------------------------------------------------------
    def _batch(self, data, rng):
        """Sample ``batch_windows`` runs of ``T_V`` consecutive frames."""
        pairs, windows, ctx_idx, targets, sync_windows = [], [], [], [], []
        chunk_keys = {}
        for _ in range(self.batch_windows):
            ci = int(rng.integers(len(data)))
            clip = data[ci]
            t0 = int(rng.integers(clip.num_frames - T_V + 1))
            for f in range(t0, t0 + T_V):
                ref = int(rng.integers(clip.num_frames - 1))
                ref += ref >= f
                pose = clip.onehot[f].copy()
                pose[:, self.resolution // 2:] = 0
                pairs.append(np.concatenate([pose, clip.onehot[ref]]))
                targets.append(clip.labels[f])
                key = (ci, f // audio.CHUNK_FRAMES)
                ctx_idx.append((chunk_keys.setdefault(key, len(chunk_keys)), f % audio.CHUNK_FRAMES))
            windows.append(frame_windows(clip.mel_norm, range(t0, t0 + T_V), centered=True))
            sync_windows.append(frame_windows(clip.mel_norm, [t0], centered=False)[0])
        chunks = torch.stack([data[ci].chunks[k] for (ci, k) in chunk_keys])
        return (
            torch.from_numpy(np.stack(pairs)),
            torch.from_numpy(np.concatenate(windows)),
            chunks,
            torch.tensor(ctx_idx),
            torch.from_numpy(np.stack(targets)),
            torch.from_numpy(np.stack(sync_windows)),
        )

    def train_step(self, batch, expert=None, lambda_sync=0.0):
        """One optimizer update; returns a :class:`TSGLossReport`."""
        pairs, windows, chunks, ctx_idx, targets, sync_windows = batch
        ctx_all = self.network_.provider.forward_mel(chunks)
        contextual = ctx_all[ctx_idx[:, 0], ctx_idx[:, 1]]
        logits = self.network_(pairs, windows, contextual)
        if self.loss == "l1":
            wce = l1_label_loss(logits, targets)
        else:
            wce = weighted_ce_loss(logits, targets, self.class_weights_t_)
        sync = torch.zeros(())
        if lambda_sync > 0 and expert is not None:
            probs = soft_labels(logits, self.loss)
            stacked = lower_half_stack(probs.view(-1, T_V, *probs.shape[1:]))
            p = sync_probability_batch(expert, stacked, sync_windows)
            sync = sync_loss(p, torch.ones_like(p))
        total = wce + lambda_sync * sync
        if not torch.isfinite(total):
            raise TrainingDivergenceError(
                f"TSG loss became non-finite (wce={float(wce)}, sync={float(sync)})",
                {"wce": float(wce), "sync": float(sync)},
            )
        self.optimizer_.zero_grad()
        total.backward()
        self.optimizer_.step()
        return TSGLossReport(wce.item(), sync.item(), total.item())

    def fit(self, clips, expert=None, log=None):
        """Two-phase training: cross-entropy only, then cross-entropy plus sync loss."""
        self.class_weights_ = compute_class_weights(
            [l for c in clips for l in c.labels], self.num_classes)
        self.class_weights_t_ = torch.tensor(self.class_weights_, dtype=torch.float32)
        self.network_ = self._build()
        self.optimizer_ = torch.optim.Adam(self.network_.parameters(), lr=self.lr,
                                           betas=(self.beta1, self.beta2))
        data = [_ClipTensors(c.labels, c.waveform, self.num_classes) for c in clips]
        data = [d for d in data if d.num_frames >= T_V + 1]
        if not data:
            raise InvalidInputError("TSG training needs clips longer than T_v frames")
        frozen = expert.freeze() if (expert is not None and self.use_syncnet) else None
        rng = np.random.default_rng([self.seed, 404])
        self.network_.train()
        self.history_ = []
        total_steps = self.phase1_steps + self.phase2_steps
        for step in range(1, total_steps + 1):
            phase2 = step > self.phase1_steps
            lam = self.lambda_sync if (phase2 and frozen is not None) else 0.0
            report = self.train_step(self._batch(data, rng), frozen, lam)
            if step % 100 == 0 or step == total_steps:
                record = {"module": "tsg", "step": step, "phase": 2 if phase2 else 1,
                          "wce": report.wce, "sync": report.sync, "total": report.total}
                self.history_.append(record)
                if log is not None:
                    log(record)
        self.network_.eval()
        self.steps_done_ = total_steps
        del self.optimizer_
        return self

    # -- inference ------------------------------------------------------
    def forward(self, pose_labels, reference_labels, waveform=None, frames=None, clip_tensors=None):
        """Logits for ``frames`` (default all) of a clip, given ground-truth pose labels."""
        check_is_fitted(self, "network_")
        data = clip_tensors or _ClipTensors(pose_labels, waveform, self.num_classes)
        frames = list(range(data.num_frames)) if frames is None else list(frames)
        ref = one_hot(check_label_map(reference_labels, self.num_classes), self.num_classes)
        with torch.no_grad():
            ctx = self._contextual(data)
            pairs = []
            for f in frames:
                pose = data.onehot[f].copy()
                pose[:, self.resolution // 2:] = 0
                pairs.append(np.concatenate([pose, ref]))
            windows = frame_windows(data.mel_norm, frames, centered=True)
            return self.network_(torch.from_numpy(np.stack(pairs).astype(np.float32)),
                                 torch.from_numpy(windows), ctx[frames])

    def _contextual(self, data):
        feats = self.network_.provider.forward_mel(data.chunks)
        return feats.reshape(-1, feats.shape[-1])

    def generate_sequence(self, identity_mask, waveform, num_frames=None, pose_labels=None,
                          autoregressive=None):
        """Generate one label map per video frame.

        ``pose_labels`` supplies ground-truth pose sources (self-driven mode).
        In autoregressive mode each frame's pose source is the previous output,
        seeded with ``identity_mask``.
        """
        check_is_fitted(self, "network_")
        identity_mask = check_label_map(identity_mask, self.num_classes, "identity_mask")
        if identity_mask.shape != (self.resolution, self.resolution):
            raise InvalidInputError(f"identity mask must be {self.resolution}x{self.resolution}")
        autoregressive = self.autoregressive if autoregressive is None else autoregressive
        wav = np.asarray(waveform, dtype=np.float32)
        available = wav.size * audio.FPS // audio.SAMPLE_RATE
        if num_frames is None:
            num_frames = len(pose_labels) if pose_labels is not None else available
        if num_frames > available:
            raise InvalidInputError(f"audio covers {available} frames, {num_frames} requested")
        if not autoregressive and pose_labels is None:
            raise InvalidInputError("self-driven generation needs ground-truth pose labels")
        ref = one_hot(identity_mask, self.num_classes)
        poses = pose_labels if not autoregressive else np.repeat(identity_mask[None], num_frames, 0)
        data = _ClipTensors(np.asarray(poses)[:num_frames], wav, self.num_classes)
        with torch.no_grad():
            ctx = self._contextual(data)
            windows = torch.from_numpy(frame_windows(data.mel_norm, range(num_frames), centered=True))
            if not autoregressive:
                return self._run(data, ref, windows, ctx, range(num_frames))
            out = []
            prev = identity_mask
            for f in range(num_frames):
                data.onehot[f] = one_hot(prev, self.num_classes)
                prev = self._run(data, ref, windows, ctx, [f])[0]
                out.append(prev)
            return np.stack(out)

    def _run(self, data, ref, windows, ctx, frames, chunk=32):
        frames = list(frames)
        out = []
        for i in range(0, len(frames), chunk):
            sel = frames[i:i + chunk]
            pairs = []
            for f in sel:
                pose = data.onehot[f].copy()
                pose[:, self.resolution // 2:] = 0
                pairs.append(np.concatenate([pose, ref]))
            logits = self.network_(torch.from_numpy(np.stack(pairs).astype(np.float32)),
                                   windows[sel], ctx[sel])
            out.append(decode_logits(logits, self.loss).numpy())
        return np.concatenate(out)

    def predict(self, clip, reference_frame=0):
        """Self-driven generation for a :class:`~talkseg.io.Clip`."""
        return self.generate_sequence(clip.labels[reference_frame], clip.waveform,
                                      pose_labels=clip.labels)

    # -- persistence ----------------------------------------------------
    def save(self, path, config_hash=""):
        check_is_fitted(self, "network_")
        return save_checkpoint(
            path, "tsg", {"network": self.network_.state_dict(), "class_weights": self.class_weights_},
            config_hash, self.steps_done_, extra={"params": self.get_params()},
        )

    @classmethod
    def load(cls, path, config_hash=None):
        header, data = load_checkpoint(path, "tsg", config_hash)
        est = cls(**header["params"])
        est.network_ = est._build()
        est.network_.load_state_dict(data["state"]["network"])
        est.network_.eval()
        est.class_weights_ = np.asarray(data["state"]["class_weights"])
        est.class_weights_t_ = torch.tensor(est.class_weights_, dtype=torch.float32)
        est.steps_done_ = header["step"]
        return est


def sync_probability_batch(network, stacked_masks, windows):
    from .sync import sync_probability

    return sync_probability(network.embed_speech(windows), network.embed_masks(stacked_masks))
