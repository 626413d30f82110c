"""Mask-guided style generator with spatially varying modulation.

Every styled layer reads its modulation vector per pixel from a *style map*:
the layer's affine transform is applied to each region's code and the result
is broadcast onto the pixels of that region in the mask, downsampled to the
layer's resolution. Changing one region's code therefore only alters the
style map on that region's pixels, and the image only within the generator's
receptive reach of them.
"""

import math

import torch
from torch import nn
import torch.nn.functional as F

from ..exceptions import InvalidInputError


def num_style_layers(resolution):
    return 2 * int(math.log2(resolution)) - 2


def downsample_labels(labels, size):
    """Top-left-anchored nearest downsampling of a ``(B, H, W)`` label batch."""
    step = labels.shape[-1] // size
    return labels[:, ::step, ::step]


def style_map(region_styles, labels, size):
    """Broadcast ``(B, C, ch)`` per-region vectors to ``(B, ch, size, size)``."""
    low = downsample_labels(labels, size)
    b, c, ch = region_styles.shape
    idx = low.reshape(b, -1, 1).expand(-1, -1, ch)
    return torch.gather(region_styles, 1, idx).transpose(1, 2).reshape(b, ch, size, size)


class StyledLayer(nn.Module):
    """Modulated conv whose per-pixel style comes from a region style map.

    ``kind`` is ``"conv"`` (3×3, same size), ``"up"`` (4×4 transposed,
    stride 2) or ``"rgb"`` (1×1, no demodulation, no activation).
    """

    def __init__(self, cin, cout, style_dim, kind):
        super().__init__()
        self.kind = kind
        k = {"conv": 3, "up": 4, "rgb": 1}[kind]
        shape = (cin, cout, k, k) if kind == "up" else (cout, cin, k, k)
        self.weight = nn.Parameter(torch.randn(shape) / math.sqrt(cin * k * k))
        self.bias = nn.Parameter(torch.zeros(cout))
        self.affine = nn.Linear(style_dim, cin)
        nn.init.normal_(self.affine.weight, std=1.0 / math.sqrt(style_dim))
        nn.init.ones_(self.affine.bias)
        self.demodulate = kind != "rgb"

    def forward(self, x, codes, labels):
        region_styles = self.affine(codes)                      # (B, C, cin)
        s = style_map(region_styles, labels, x.shape[-1])       # (B, cin, h, w)
        xs = x * s
        if self.kind == "up":
            y = F.conv_transpose2d(xs, self.weight, stride=2, padding=1)
            wsq = self.weight.pow(2).sum((2, 3)).t()            # (cout, cin)
        else:
            y = F.conv2d(xs, self.weight, padding=self.weight.shape[-1] // 2)
            wsq = self.weight.pow(2).sum((2, 3))
        if self.demodulate:
            d = torch.rsqrt(F.conv2d(s.pow(2), wsq[..., None, None]) + 1e-8)
            if self.kind == "up":
                d = F.interpolate(d, scale_factor=2, mode="nearest")
            y = y * d
        y = y + self.bias.view(1, -1, 1, 1)
        return y if self.kind == "rgb" else F.leaky_relu(y, 0.2) * math.sqrt(2)


DEFAULT_CHANNELS = {4: 64, 8: 64, 16: 64, 32: 48, 64: 32, 128: 32, 256: 32}


class MaskGuidedGenerator(nn.Module):
    """Constant 4×4 input, per-resolution (up, conv, to-RGB) stages, skip-summed RGB."""

    def __init__(self, resolution=64, style_dim=512, channels=None):
        super().__init__()
        if resolution < 8 or resolution & (resolution - 1):
            raise InvalidInputError(f"generator resolution must be a power of two >= 8, got {resolution}")
        ch = dict(DEFAULT_CHANNELS, **(channels or {}))
        self.resolution = resolution
        self.num_layers = num_style_layers(resolution)
        self.const = nn.Parameter(torch.randn(1, ch[4], 4, 4))
        self.conv4 = StyledLayer(ch[4], ch[4], style_dim, "conv")
        self.rgb4 = StyledLayer(ch[4], 3, style_dim, "rgb")
        self.ups = nn.ModuleList()
        self.convs = nn.ModuleList()
        self.rgbs = nn.ModuleList()
        res = 8
        while res <= resolution:
            self.ups.append(StyledLayer(ch[res // 2], ch[res], style_dim, "up"))
            self.convs.append(StyledLayer(ch[res], ch[res], style_dim, "conv"))
            self.rgbs.append(StyledLayer(ch[res], 3, style_dim, "rgb"))
            res *= 2

    def forward(self, labels, codes):
        """``labels`` ``(B, H, W)`` long, ``codes`` ``(B, C, L, D)`` → images ``(B, 3, H, W)`` in [0, 1]."""
        if labels.shape[-1] != self.resolution or labels.shape[-2] != self.resolution:
            raise InvalidInputError(
                f"mask must be {self.resolution}x{self.resolution}, got {tuple(labels.shape[-2:])}"
            )
        if codes.shape[2] != self.num_layers:
            raise InvalidInputError(f"codes carry {codes.shape[2]} layers, generator needs {self.num_layers}")
        x = self.const.expand(labels.shape[0], -1, -1, -1)
        x = self.conv4(x, codes[:, :, 0], labels)
        rgb = self.rgb4(x, codes[:, :, 1], labels)
        i = 1
        for up, conv, to_rgb in zip(self.ups, self.convs, self.rgbs):
            x = up(x, codes[:, :, i], labels)
            x = conv(x, codes[:, :, i + 1], labels)
            rgb = F.interpolate(rgb, scale_factor=2, mode="bilinear", align_corners=False)
            rgb = rgb + to_rgb(x, codes[:, :, i + 2], labels)
            i += 2
        return torch.sigmoid(rgb)

    def op_plan(self):
        """Ordered ``(resolution, op, style_layer)`` records describing the forward pass."""
        plan = [(4, "conv", 0), (4, "rgb", 1)]
        res, i = 8, 1
        while res <= self.resolution:
            plan += [(res, "up", i), (res, "conv", i + 1), (res, "rgb_up", None), (res, "rgb", i + 2)]
            res *= 2
            i += 2
        return plan


# One-axis site interval reached in an op's output grid from an input interval.
def _conv(span):
    return span[0] - 1, span[1] + 1


def _up(span):
    # 4x4/stride-2 transposed conv and 2x bilinear (half-pixel) share this reach
    return 2 * span[0] - 1, 2 * span[1] + 2


def _union(a, b):
    if a is None:
        return b
    if b is None:
        return a
    return min(a[0], b[0]), max(a[1], b[1])


def _layer_reach(generator):
    """Per styled layer: ``(layer, style_map_size, lo, hi)``.

    A change at style-map site ``k`` of that layer can only alter output
    pixels ``scale * k + [lo, hi]`` along each axis, ``scale`` being the
    output resolution over the style-map size.
    """
    plan = generator.op_plan()
    out = []
    for k, (res, op, layer) in enumerate(plan):
        if layer is None:
            continue
        feat = {"conv": (-1, 1), "up": (-1, 2), "rgb": None}[op]
        rgb = (0, 0) if op == "rgb" else None
        for _, op2, _ in plan[k + 1:]:
            if op2 == "up":
                feat = _up(feat) if feat else None
            elif op2 == "conv":
                feat = _conv(feat) if feat else None
            elif op2 == "rgb_up":
                rgb = _up(rgb) if rgb else None
            elif op2 == "rgb":
                rgb = _union(rgb, feat)
        size = res // 2 if op == "up" else res
        out.append((layer, size) + rgb)
    return out


def receptive_radius(generator):
    """Chebyshev radius ``R`` (output pixels) bounding the effect of one region's codes.

    A style change enters a layer at style-map sites whose top-left sampled
    mask pixel carries the region. Starting from site 0 of each styled layer,
    the reached interval is followed through the feature path and the RGB
    skip path to the output grid; ``R`` is the largest excursion from pixel 0.
    """
    return max(max(-lo, hi) for _, _, lo, hi in _layer_reach(generator))


def influence_mask(generator, labels, region):
    """Boolean ``(H, W)`` map of output pixels a change to ``region``'s codes may alter.

    Tighter than the ``R`` ball: only style-map sites that actually sample
    the region contribute, each with its own layer's reach.
    """
    labels = torch.as_tensor(labels)
    if labels.ndim == 2:
        labels = labels[None]
    n = generator.resolution
    hit = torch.zeros(n, n, dtype=torch.bool)
    for _, size, lo, hi in _layer_reach(generator):
        scale = n // size
        ys, xs = torch.nonzero(downsample_labels(labels, size)[0] == region, as_tuple=True)
        for y, x in zip(ys.tolist(), xs.tolist()):
            hit[max(scale * y + lo, 0):scale * y + hi + 1, max(scale * x + lo, 0):scale * x + hi + 1] = True
    return hit.numpy()
