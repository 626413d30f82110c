"""Encoder + generator pair trained to re-render frames from masks and region codes."""

import math

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted
import torch
import torch.nn.functional as F

from .._validation import check_image, check_label_map
from ..checkpoint import load_checkpoint, save_checkpoint
from ..exceptions import ConfigurationError, InvalidInputError, TrainingDivergenceError
from .encoder import RegionStyleEncoder
from .generator import MaskGuidedGenerator, num_style_layers
from .losses import (
    Discriminator, IdentityEmbedder, RendererInverseParser, SGIProviders,
    discriminator_loss, r1_penalty, sgi_loss,
)


def prior_mask_sample(num_frames, target_idx, rng, radius=15, include_target=True):
    """Index of a frame within ``radius`` of ``target_idx``, uniform over the clipped window."""
    if num_frames < 2:
        raise InvalidInputError("prior sampling needs a clip with at least 2 frames")
    if not 0 <= target_idx < num_frames:
        raise InvalidInputError(f"target index {target_idx} outside clip of {num_frames} frames")
    lo, hi = max(0, target_idx - radius), min(num_frames - 1, target_idx + radius)
    choices = np.arange(lo, hi + 1)
    if not include_target:
        choices = choices[choices != target_idx]
    return int(rng.choice(choices))


def _images_to_tensor(images):
    x = torch.as_tensor(np.asarray(images, dtype=np.float32))
    return x.permute(0, 3, 1, 2).contiguous()


def psnr_batch(a, b):
    mse = ((a - b) ** 2).flatten(1).mean(1).clamp_min(1e-10)
    return (10 * torch.log10(1.0 / mse)).clamp_max(100.0)


class SegmentationGuidedInjector(BaseEstimator):
    """Region style encoder and mask-guided generator with a scikit-learn style surface.

    ``transform`` maps reference frames and their masks to ``(N, C, L, D)``
    style codes; ``generate`` renders frames for new masks from those codes.
    """

    def __init__(self, num_classes=12, resolution=64, style_dim=512, steps=3000, batch_size=8,
                 lr=5e-4, beta1=0.9, beta2=0.999, prior_learning=True, prior_range=15,
                 w_pixel=1.0, w_perceptual=0.8, w_id=0.1, w_parsing=1.0, w_adversarial=0.02,
                 r1_gamma=10.0, r1_every=16, id_steps=300, eval_every=500, lr_schedule="cosine", seed=0):
        self.num_classes = num_classes
        self.resolution = resolution
        self.style_dim = style_dim
        self.steps = steps
        self.batch_size = batch_size
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.prior_learning = prior_learning
        self.prior_range = prior_range
        self.w_pixel = w_pixel
        self.w_perceptual = w_perceptual
        self.w_id = w_id
        self.w_parsing = w_parsing
        self.w_adversarial = w_adversarial
        self.r1_gamma = r1_gamma
        self.r1_every = r1_every
        self.id_steps = id_steps
        self.eval_every = eval_every
        self.lr_schedule = lr_schedule
        self.seed = seed

    @property
    def loss_weights(self):
        return {"pixel": self.w_pixel, "perceptual": self.w_perceptual, "id": self.w_id,
                "parsing": self.w_parsing, "adversarial": self.w_adversarial}

    def _build(self, num_identities):
        torch.manual_seed(self.seed)
        layers = num_style_layers(self.resolution)
        self.encoder_ = RegionStyleEncoder(self.num_classes, self.resolution, layers, self.style_dim)
        self.generator_ = MaskGuidedGenerator(self.resolution, self.style_dim)
        self.discriminator_ = Discriminator(self.resolution)
        self.id_embedder_ = IdentityEmbedder(max(num_identities, 1))

    def _providers(self):
        return SGIProviders(self.discriminator_, self.id_embedder_, RendererInverseParser())

    def _fit_id_embedder(self, images, identities, rng):
        opt = torch.optim.Adam(self.id_embedder_.parameters(), lr=1e-3)
        for _ in range(self.id_steps):
            idx = rng.integers(len(images), size=32)
            loss = F.cross_entropy(self.id_embedder_.logits(images[idx]), identities[idx])
            opt.zero_grad()
            loss.backward()
            opt.step()
        self.id_embedder_.eval()
        for p in self.id_embedder_.parameters():
            p.requires_grad_(False)

    def fit(self, clips, eval_clips=None, log=None):
        """Train on ``clips`` (each with ``images`` and ``labels``); log held-out PSNR."""
        if not clips:
            raise InvalidInputError("no training clips")
        rng = np.random.default_rng([self.seed, 404])
        seeds = sorted({c.identity_seed for c in clips})
        self._build(len(seeds))
        images = [_images_to_tensor(c.images) for c in clips]
        labels = [torch.as_tensor(np.asarray(c.labels), dtype=torch.long) for c in clips]
        offsets = np.cumsum([0] + [c.num_frames for c in clips])
        flat_images, flat_labels = torch.cat(images), torch.cat(labels)
        ids = torch.cat([torch.full((c.num_frames,), seeds.index(c.identity_seed)) for c in clips])
        self._fit_id_embedder(flat_images, ids, rng)

        providers = self._providers()
        weights = self.loss_weights
        g_params = list(self.encoder_.parameters()) + list(self.generator_.parameters())
        g_opt = torch.optim.Adam(g_params, lr=self.lr, betas=(self.beta1, self.beta2))
        d_opt = torch.optim.Adam(self.discriminator_.parameters(), lr=self.lr, betas=(self.beta1, self.beta2))
        schedules = [torch.optim.lr_scheduler.LambdaLR(o, self._lr_factor) for o in (g_opt, d_opt)]
        held_out = self._eval_batch(eval_clips) if eval_clips else None
        self.history_ = []
        for step in range(1, self.steps + 1):
            src, tgt = self._draw(clips, offsets, rng)
            src_img, src_lab = flat_images[src], flat_labels[src]
            tgt_img, tgt_lab = flat_images[tgt], flat_labels[tgt]
            out = self.generator_(tgt_lab, self.encoder_(src_img, src_lab))
            report = sgi_loss(out, tgt_img, tgt_lab, providers, weights, self.num_classes)
            if not torch.isfinite(report.total):
                raise TrainingDivergenceError(
                    f"injector loss became {report.total.item()} at step {step}",
                    {"step": step, **report.as_floats()})
            g_opt.zero_grad()
            report.total.backward()
            g_opt.step()
            if self.w_adversarial:
                d_loss = discriminator_loss(self.discriminator_, tgt_img, out)
                if self.r1_every and step % self.r1_every == 0:
                    d_loss = d_loss + 0.5 * self.r1_gamma * self.r1_every * r1_penalty(self.discriminator_, tgt_img)
                d_opt.zero_grad()
                d_loss.backward()
                d_opt.step()
            for sched in schedules:
                sched.step()
            if step % self.eval_every == 0 or step == self.steps:
                record = {"module": "sgi", "step": step, **report.as_floats()}
                if held_out is not None:
                    record["psnr"] = self._psnr(*held_out)
                self.history_.append(record)
                if log is not None:
                    log(record)
        self.steps_done_ = self.steps
        self.psnr_ = self.history_[-1].get("psnr", math.nan) if self.history_ else math.nan
        self._freeze()
        return self

    def _lr_factor(self, step):
        if self.lr_schedule == "constant":
            return 1.0
        if self.lr_schedule == "cosine":
            return 0.5 * (1.0 + math.cos(math.pi * min(step / max(self.steps, 1), 1.0)))
        raise ConfigurationError(f"unknown lr schedule {self.lr_schedule!r}")

    def _draw(self, clips, offsets, rng):
        src, tgt = [], []
        for _ in range(self.batch_size):
            c = int(rng.integers(len(clips)))
            t = int(rng.integers(clips[c].num_frames))
            s = prior_mask_sample(clips[c].num_frames, t, rng, self.prior_range) if self.prior_learning else t
            src.append(offsets[c] + s)
            tgt.append(offsets[c] + t)
        return np.array(src), np.array(tgt)

    def _eval_batch(self, clips, per_clip=4):
        imgs, labs = [], []
        for c in clips:
            idx = np.linspace(0, c.num_frames - 1, per_clip).round().astype(int)
            imgs.append(_images_to_tensor(c.images[idx]))
            labs.append(torch.as_tensor(np.asarray(c.labels)[idx], dtype=torch.long))
        return torch.cat(imgs), torch.cat(labs)

    def _psnr(self, images, labels):
        with torch.no_grad():
            out = self.generator_(labels, self.encoder_(images, labels))
        return float(psnr_batch(out, images).mean())

    def _freeze(self):
        for net in (self.encoder_, self.generator_, self.discriminator_, self.id_embedder_):
            net.eval()
            for p in net.parameters():
                p.requires_grad_(False)

    def _check(self, images, labels):
        images = np.asarray(images, dtype=np.float32)
        labels = np.asarray(labels)
        if images.ndim == 3:
            images, labels = images[None], labels[None]
        for img, lab in zip(images, labels):
            check_image(img, "image", self.resolution)
            check_label_map(lab, self.num_classes, "mask")
        return _images_to_tensor(images), torch.as_tensor(labels, dtype=torch.long)

    def transform(self, images, labels):
        """Style codes ``(N, C, L, D)`` for frames ``(N, H, W, 3)`` and masks ``(N, H, W)``."""
        check_is_fitted(self, "encoder_")
        x, lab = self._check(images, labels)
        with torch.no_grad():
            return self.encoder_(x, lab).numpy()

    def generate(self, labels, codes):
        """Frames ``(N, H, W, 3)`` in [0, 1] for masks ``(N, H, W)`` and codes ``(N, C, L, D)``."""
        check_is_fitted(self, "generator_")
        labels = np.asarray(labels)
        codes = np.asarray(codes, dtype=np.float32)
        if labels.ndim == 2:
            labels = labels[None]
        if codes.ndim == 3:
            codes = np.broadcast_to(codes, (len(labels),) + codes.shape)
        if len(codes) != len(labels):
            raise InvalidInputError(f"{len(codes)} code sets for {len(labels)} masks")
        for lab in labels:
            check_label_map(lab, self.num_classes, "mask")
        out = []
        with torch.no_grad():
            for i in range(0, len(labels), 16):
                lab = torch.as_tensor(labels[i:i + 16], dtype=torch.long)
                out.append(self.generator_(lab, torch.from_numpy(np.ascontiguousarray(codes[i:i + 16]))))
        return torch.cat(out).permute(0, 2, 3, 1).numpy()

    def reconstruct(self, images, labels):
        return self.generate(labels, self.transform(images, labels))

    def score(self, clips, per_clip=4):
        """Mean reconstruction PSNR (dB) over evenly spaced frames of ``clips``."""
        check_is_fitted(self, "generator_")
        return self._psnr(*self._eval_batch(clips, per_clip))

    def save(self, path, config_hash=""):
        check_is_fitted(self, "generator_")
        state = {"encoder": self.encoder_.state_dict(), "generator": self.generator_.state_dict(),
                 "discriminator": self.discriminator_.state_dict(),
                 "id_embedder": self.id_embedder_.state_dict()}
        return save_checkpoint(
            path, "sgi", state, config_hash, self.steps_done_,
            extra={"params": self.get_params(), "psnr": self.psnr_,
                   "num_identities": self.id_embedder_.head.out_features},
        )

    @classmethod
    def load(cls, path, config_hash=None):
        header, data = load_checkpoint(path, "sgi", config_hash)
        est = cls(**header["params"])
        est._build(header["num_identities"])
        for name in ("encoder", "generator", "discriminator", "id_embedder"):
            getattr(est, name + "_").load_state_dict(data["state"][name])
        est.steps_done_ = header["step"]
        est.psnr_ = header.get("psnr", math.nan)
        est._freeze()
        return est
