"""Image, mask, sync and distribution metrics.

Everything here is a pure function of its inputs. Distribution scores
(``fid``, ``fvd``, ``lpips_distance``) use a fixed, seeded random conv
embedder, so their values only support relative comparisons.
"""

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
import torch
from torch import nn

from .exceptions import InvalidInputError, UndefinedMetricError
from .masks import BROW, EYE, INNER_MOUTH, LOWER_LIP, MOUTH_CLASSES, NOSE, UPPER_LIP
from .speech import frame_windows, normalize_mel
from .sync import T_V, lower_half_stack

PSNR_CAP = 100.0
LUMA = np.array([0.299, 0.587, 0.114])
FACE_REGIONS = (UPPER_LIP, LOWER_LIP, INNER_MOUTH, EYE, BROW, NOSE)
MOUTH_REGIONS = (UPPER_LIP, LOWER_LIP, INNER_MOUTH)
KEYPOINTS = ("centroid", "top", "bottom", "left", "right")


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise InvalidInputError(f"shapes differ: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b, max_val=1.0):
    """Peak signal-to-noise ratio in dB, capped at 100 for identical inputs."""
    a, b = _pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(max_val ** 2 / mse))


def to_luma(image):
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 3 and image.shape[-1] == 3:
        return image @ LUMA
    if image.ndim != 2:
        raise InvalidInputError(f"expected an H×W or H×W×3 image, got shape {image.shape}")
    return image


def ssim(a, b, window=8, k1=0.01, k2=0.03, max_val=1.0):
    """Mean SSIM over all ``window``×``window`` sliding windows of the luma planes."""
    a, b = _pair(a, b)
    a, b = to_luma(a), to_luma(b)
    if min(a.shape) < window:
        raise InvalidInputError(f"image {a.shape} smaller than the {window}-pixel window")
    wa = sliding_window_view(a, (window, window))
    wb = sliding_window_view(b, (window, window))
    mu_a, mu_b = wa.mean((-2, -1)), wb.mean((-2, -1))
    var_a, var_b = wa.var((-2, -1)), wb.var((-2, -1))
    cov = (wa * wb).mean((-2, -1)) - mu_a * mu_b
    c1, c2 = (k1 * max_val) ** 2, (k2 * max_val) ** 2
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def region_keypoints(mask, region):
    """``(5, 2)`` (row, col) keypoints of ``region``: centroid, then top/bottom/left/right extremes.

    Extremes sit on the outermost row (column) of the region, at the mean
    column (row) of its pixels there. Returns ``None`` for an absent region.
    """
    ys, xs = np.nonzero(np.asarray(mask) == region)
    if ys.size == 0:
        return None
    top, bottom, left, right = ys.min(), ys.max(), xs.min(), xs.max()
    return np.array([
        [ys.mean(), xs.mean()],
        [top, xs[ys == top].mean()],
        [bottom, xs[ys == bottom].mean()],
        [ys[xs == left].mean(), left],
        [ys[xs == right].mean(), right],
    ])


def landmarks(mask, regions=FACE_REGIONS):
    """Keypoints of every present region in ``regions``."""
    out = {}
    for r in regions:
        kp = region_keypoints(mask, r)
        if kp is not None:
            out[r] = kp
    return out


def landmark_distance(pred, gt, scope="face", penalty=16.0):
    """Mean keypoint distance over the scope's regions present in ``gt``.

    A region missing from ``pred`` contributes ``penalty`` per keypoint.
    """
    pred, gt = np.asarray(pred), np.asarray(gt)
    if pred.shape != gt.shape:
        raise InvalidInputError(f"mask shapes differ: {pred.shape} vs {gt.shape}")
    regions = {"face": FACE_REGIONS, "mouth": MOUTH_REGIONS}.get(scope)
    if regions is None:
        raise InvalidInputError(f"unknown landmark scope {scope!r}")
    ref = landmarks(gt, regions)
    if not ref:
        raise UndefinedMetricError(f"ground truth has none of the {scope} regions")
    cand = landmarks(pred, regions)
    dists = []
    for r, kp in ref.items():
        if r in cand:
            dists.extend(np.linalg.norm(cand[r] - kp, axis=1))
        else:
            dists.extend([penalty] * len(KEYPOINTS))
    return float(np.mean(dists))


@dataclass
class GaussianStats:
    mu: np.ndarray
    sigma: np.ndarray

    @classmethod
    def from_samples(cls, x):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or len(x) < 2:
            raise InvalidInputError(f"need an (N >= 2, D) sample matrix, got shape {x.shape}")
        return cls(x.mean(0), np.atleast_2d(np.cov(x, rowvar=False)))


def _psd_sqrt(m):
    vals, vecs = np.linalg.eigh((m + m.T) / 2)
    return (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T


def frechet_distance(p, q):
    """``|mu_p - mu_q|^2 + tr(S_p + S_q - 2 (S_p S_q)^(1/2))`` via symmetric eigendecompositions."""
    if p.mu.shape != q.mu.shape or p.sigma.shape != q.sigma.shape:
        raise InvalidInputError(f"dimension mismatch: {p.mu.shape} vs {q.mu.shape}")
    root_p = _psd_sqrt(p.sigma)
    inner = root_p @ q.sigma @ root_p
    vals = np.linalg.eigvalsh((inner + inner.T) / 2)
    cross = np.sqrt(np.clip(vals, 0.0, None)).sum()
    diff = p.mu - q.mu
    value = float(diff @ diff + np.trace(p.sigma) + np.trace(q.sigma) - 2.0 * cross)
    return max(value, 0.0)


def temporal_consistency(frames, masks=None, max_val=1.0):
    """Inter-frame change statistics.

    ``mean_diff``/``max_diff`` are the mean and max over consecutive pairs of
    the mean absolute pixel difference; ``mouth_area_smoothness`` is the mean
    absolute change of the mouth-class pixel count (needs ``masks``).
    """
    frames = np.asarray(frames, dtype=np.float64)
    if len(frames) < 2:
        raise UndefinedMetricError("temporal statistics need at least 2 frames")
    pair = np.abs(np.diff(frames, axis=0)).reshape(len(frames) - 1, -1).mean(1)
    out = {"mean_diff": float(pair.mean()), "max_diff": float(pair.max())}
    if masks is not None:
        area = np.isin(np.asarray(masks), MOUTH_CLASSES).reshape(len(masks), -1).sum(1)
        out["mouth_area_smoothness"] = float(np.abs(np.diff(area)).mean())
    return out


def sync_confidence(masks, mel, expert):
    """Mean expert sync probability over every ``T_v``-frame window of ``masks``."""
    masks = np.asarray(masks)
    if len(masks) < T_V:
        raise InvalidInputError(f"sync confidence needs at least {T_V} frames, got {len(masks)}")
    c = expert.num_classes
    onehot = np.eye(c, dtype=np.float32)[masks].transpose(0, 3, 1, 2)
    idx = list(range(len(masks) - T_V + 1))
    windows = frame_windows(normalize_mel(mel), idx, centered=False)
    stacks = np.stack([lower_half_stack(onehot[t:t + T_V]) for t in idx])
    return float(np.mean(expert.predict_proba(stacks, windows)))


def mouth_miou(pred, gt):
    """Mean over the mouth classes of IoU accumulated across all given frames."""
    pred, gt = np.asarray(pred), np.asarray(gt)
    if pred.shape != gt.shape:
        raise InvalidInputError(f"mask shapes differ: {pred.shape} vs {gt.shape}")
    ious = []
    for c in MOUTH_CLASSES:
        union = np.sum((pred == c) | (gt == c))
        if union:
            ious.append(np.sum((pred == c) & (gt == c)) / union)
    if not ious:
        raise UndefinedMetricError("no mouth pixels in prediction or ground truth")
    return float(np.mean(ious))


def upper_half_agreement(pred, gt):
    pred, gt = np.asarray(pred), np.asarray(gt)
    if pred.shape != gt.shape:
        raise InvalidInputError(f"mask shapes differ: {pred.shape} vs {gt.shape}")
    h = pred.shape[-2] // 2
    return float(np.mean(pred[..., :h, :] == gt[..., :h, :]))


class RandomConvEmbedder(nn.Module):
    """Frozen, seeded conv net used as a stand-in feature extractor."""

    def __init__(self, seed=0, width=16, dim=64):
        super().__init__()
        gen = torch.Generator().manual_seed(seed)
        chans = [3, width, width * 2, width * 4]
        self.convs = nn.ModuleList(nn.Conv2d(a, b, 3, 2, 1) for a, b in zip(chans, chans[1:]))
        self.proj = nn.Linear(width * 4, dim)
        for p in self.parameters():
            p.requires_grad_(False)
            p.copy_(torch.randn(p.shape, generator=gen) / np.sqrt(max(p[0].numel(), 1)))

    def layers(self, images):
        x = torch.as_tensor(np.asarray(images, dtype=np.float32)).permute(0, 3, 1, 2) * 2 - 1
        out = []
        for conv in self.convs:
            x = torch.relu(conv(x))
            out.append(x)
        return out

    def forward(self, images):
        with torch.no_grad():
            return self.proj(self.layers(images)[-1].mean((2, 3))).numpy().astype(np.float64)


def fid(real, fake, embedder=None):
    """Fréchet distance between embedded frame sets ``(N, H, W, 3)``."""
    embedder = embedder or RandomConvEmbedder()
    return frechet_distance(GaussianStats.from_samples(embedder(real)),
                            GaussianStats.from_samples(embedder(fake)))


def _video_features(videos, embedder):
    feats = []
    for v in videos:
        f = embedder(v)
        feats.append(np.concatenate([f.mean(0), np.abs(np.diff(f, axis=0)).mean(0)]))
    return np.stack(feats)


def fvd(real_videos, fake_videos, embedder=None):
    """Fréchet distance between video-level features: mean frame feature and mean temporal change."""
    embedder = embedder or RandomConvEmbedder()
    return frechet_distance(GaussianStats.from_samples(_video_features(real_videos, embedder)),
                            GaussianStats.from_samples(_video_features(fake_videos, embedder)))


def lpips_distance(a, b, embedder=None):
    """Mean over layers of the squared distance between channel-normalized activations."""
    embedder = embedder or RandomConvEmbedder()
    a, b = _pair(a, b)
    with torch.no_grad():
        total = 0.0
        layers_a, layers_b = embedder.layers(a), embedder.layers(b)
        for fa, fb in zip(layers_a, layers_b):
            fa = fa / (fa.norm(dim=1, keepdim=True) + 1e-10)
            fb = fb / (fb.norm(dim=1, keepdim=True) + 1e-10)
            total += float(((fa - fb) ** 2).sum(1).mean())
    return total / len(layers_a)
