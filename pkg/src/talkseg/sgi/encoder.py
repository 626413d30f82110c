"""Multi-scale encoder, per-region pooling and the shared style MLP."""

from dataclasses import dataclass

import torch
from torch import nn
import torch.nn.functional as F

from ..exceptions import InvalidInputError

STRIDES = (8, 16, 32)


def _block(cin, cout, stride):
    return nn.Sequential(nn.Conv2d(cin, cout, 3, stride, 1), nn.LeakyReLU(0.2, inplace=True))


class PyramidEncoder(nn.Module):
    """Bottom-up conv stack with a top-down feature-pyramid merge.

    Emits three maps at strides 8, 16 and 32, finest first.
    """

    def __init__(self, resolution=64, width=32, out_width=64):
        super().__init__()
        if resolution % 32:
            raise InvalidInputError(f"encoder resolution must be a multiple of 32, got {resolution}")
        self.resolution = resolution
        self.out_width = out_width
        self.stem = nn.Sequential(_block(3, width, 1), _block(width, width, 2))       # /2
        self.c2 = _block(width, width * 2, 2)                                         # /4
        self.c3 = _block(width * 2, width * 2, 2)                                     # /8
        self.c4 = _block(width * 2, width * 4, 2)                                     # /16
        self.c5 = _block(width * 4, width * 4, 2)                                     # /32
        self.lateral = nn.ModuleList([
            nn.Conv2d(width * 2, out_width, 1),
            nn.Conv2d(width * 4, out_width, 1),
            nn.Conv2d(width * 4, out_width, 1),
        ])
        self.smooth = nn.ModuleList(nn.Conv2d(out_width, out_width, 3, 1, 1) for _ in range(3))

    def forward(self, images):
        if images.shape[-2:] != (self.resolution, self.resolution):
            raise InvalidInputError(
                f"encoder expects {self.resolution}x{self.resolution} images, got {tuple(images.shape[-2:])}"
            )
        x = self.c2(self.stem(images * 2.0 - 1.0))
        c3 = self.c3(x)
        c4 = self.c4(c3)
        c5 = self.c5(c4)
        p5 = self.lateral[2](c5)
        p4 = self.lateral[1](c4) + F.interpolate(p5, scale_factor=2, mode="nearest")
        p3 = self.lateral[0](c3) + F.interpolate(p4, scale_factor=2, mode="nearest")
        return [s(p) for s, p in zip(self.smooth, (p3, p4, p5))]


@dataclass
class RegionFeature:
    u: list              # per scale: (B, C, ch) pooled vectors
    present: torch.Tensor  # (B, C) bool, region has >= 1 pixel


def region_fractions(labels, num_classes, size):
    """Fraction of each ``stride``-block covered by each region: ``(B, C, size, size)``."""
    onehot = F.one_hot(labels, num_classes).permute(0, 3, 1, 2).to(torch.float64)
    stride = labels.shape[-1] // size
    return F.avg_pool2d(onehot, stride) if stride > 1 else onehot


def pool_regions(pyramid, labels, num_classes, defaults=None):
    """Average each feature map over the pixels of every region.

    A full-resolution pixel contributes the feature of the cell containing it,
    so ``u[i][b, j]`` is the mean of ``pyramid[i]`` over pixels labeled ``j``,
    i.e. an area-weighted average of the cells overlapping region ``j``.
    Regions without pixels take ``defaults[i][j]`` (zeros when not given).
    """
    labels = torch.as_tensor(labels, dtype=torch.long)
    if labels.ndim == 2:
        labels = labels[None]
    out = []
    counts = F.one_hot(labels, num_classes).sum((1, 2))
    present = counts > 0
    for i, feat in enumerate(pyramid):
        if feat.ndim == 3:
            feat = feat[None]
        if labels.shape[-1] % feat.shape[-1]:
            raise InvalidInputError(f"mask width {labels.shape[-1]} not a multiple of {feat.shape[-1]}")
        w = region_fractions(labels, num_classes, feat.shape[-1]).to(feat.dtype)
        sums = torch.einsum("bjhw,bchw->bjc", w, feat)
        mass = w.sum((2, 3))
        u = sums / mass.clamp_min(1e-12)[..., None]
        fill = torch.zeros_like(u) if defaults is None else defaults[i][None].expand_as(u).to(u.dtype)
        out.append(torch.where(present[..., None], u, fill))
    return RegionFeature(out, present)


class StyleMLP(nn.Module):
    """Shared per-region MLP from concatenated multi-scale vectors to an L×D code grid."""

    def __init__(self, in_dim, num_layers, style_dim=512, hidden=512):
        super().__init__()
        self.num_layers = num_layers
        self.style_dim = style_dim
        self.net = nn.Sequential(
            nn.Linear(in_dim, hidden), nn.LeakyReLU(0.2),
            nn.Linear(hidden, hidden), nn.LeakyReLU(0.2),
            nn.Linear(hidden, num_layers * style_dim),
        )

    def forward(self, features):
        x = torch.cat(features.u, dim=-1)
        return self.net(x).view(*x.shape[:-1], self.num_layers, self.style_dim)


class RegionStyleEncoder(nn.Module):
    """Image + mask → ``(B, C, L, D)`` style codes."""

    def __init__(self, num_classes=12, resolution=64, num_layers=10, style_dim=512, width=32,
                 pyramid_width=64):
        super().__init__()
        self.num_classes = num_classes
        self.pyramid = PyramidEncoder(resolution, width, pyramid_width)
        self.defaults = nn.ParameterList(
            nn.Parameter(torch.zeros(num_classes, pyramid_width)) for _ in STRIDES
        )
        self.mlp = StyleMLP(pyramid_width * len(STRIDES), num_layers, style_dim)

    def forward(self, images, labels, return_features=False):
        feats = pool_regions(self.pyramid(images), labels, self.num_classes, list(self.defaults))
        codes = self.mlp(feats)
        return (codes, feats) if return_features else codes

