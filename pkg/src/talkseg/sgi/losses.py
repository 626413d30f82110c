"""Training objectives for the injector and the small networks that feed them."""

from dataclasses import dataclass, fields

import torch
from torch import nn
import torch.nn.functional as F

from ..exceptions import ConfigurationError, InvalidInputError
from ..tsg import ce_loss

LOSS_TERMS = ("pixel", "perceptual", "id", "parsing", "adversarial")
DEFAULT_WEIGHTS = {"pixel": 1.0, "perceptual": 0.8, "id": 0.1, "parsing": 1.0, "adversarial": 0.02}


class Discriminator(nn.Module):
    """Strided conv critic; its intermediate activations double as perceptual features."""

    def __init__(self, resolution=64, width=32):
        super().__init__()
        chans = [3, width, width * 2, width * 4, width * 4]
        self.blocks = nn.ModuleList(
            nn.Sequential(nn.Conv2d(a, b, 3, 2, 1), nn.LeakyReLU(0.2)) for a, b in zip(chans, chans[1:])
        )
        side = resolution // 16
        self.head = nn.Linear(chans[-1] * side * side, 1)

    def features(self, images):
        out, x = [], images * 2.0 - 1.0
        for block in self.blocks:
            x = block(x)
            out.append(x)
        return out

    def forward(self, images):
        return self.head(self.features(images)[-1].flatten(1)).squeeze(1)


class IdentityEmbedder(nn.Module):
    """Tiny face-identity network: unit-norm embedding plus a classification head for training."""

    def __init__(self, num_identities, dim=64, width=16):
        super().__init__()
        self.net = nn.Sequential(
            nn.Conv2d(3, width, 3, 2, 1), nn.ReLU(),
            nn.Conv2d(width, width * 2, 3, 2, 1), nn.ReLU(),
            nn.Conv2d(width * 2, width * 4, 3, 2, 1), nn.ReLU(),
            nn.AdaptiveAvgPool2d(1), nn.Flatten(), nn.Linear(width * 4, dim),
        )
        self.head = nn.Linear(dim, num_identities)

    def forward(self, images):
        return self.net(images * 2.0 - 1.0)

    def logits(self, images):
        return self.head(self.forward(images))


class RendererInverseParser:
    """Labels pixels by nearest region color, colors measured on a reference frame.

    The synthetic renderer paints each region in one per-identity color with
    mild shading, so the mean color of each region in a labeled reference frame
    inverts it. Logits are ``-||x - mu_c||^2 / tau``; regions missing from the
    reference get a large negative logit.
    """

    def __init__(self, tau=0.01, absent_logit=-1e4):
        self.tau = tau
        self.absent_logit = absent_logit

    def region_colors(self, reference, mask, num_classes):
        onehot = F.one_hot(mask, num_classes).permute(0, 3, 1, 2).to(reference.dtype)
        count = onehot.sum((2, 3))
        colors = torch.einsum("bchw,bkhw->bck", onehot, reference) / count.clamp_min(1)[..., None]
        return colors, count > 0

    def __call__(self, images, reference, mask, num_classes):
        colors, present = self.region_colors(reference.detach(), mask, num_classes)
        dist = ((images[:, None] - colors[..., None, None]) ** 2).sum(2)     # (B, C, H, W)
        logits = -dist / self.tau
        return torch.where(present[..., None, None], logits, torch.full_like(logits, self.absent_logit))


@dataclass
class SGIProviders:
    discriminator: object = None
    id_embedder: object = None
    parser: object = None

    def perceptual(self, images):
        return self.discriminator.features(images)


@dataclass
class SGILossReport:
    pixel: torch.Tensor
    perceptual: torch.Tensor
    id: torch.Tensor
    parsing: torch.Tensor
    adversarial: torch.Tensor
    total: torch.Tensor

    def as_floats(self):
        return {f.name: float(getattr(self, f.name).detach()) for f in fields(self)}


_NEEDS = {"perceptual": "discriminator", "id": "id_embedder", "parsing": "parser", "adversarial": "discriminator"}


def sgi_loss(output, target, mask, providers, weights=None, num_classes=12):
    """Weighted sum of pixel, perceptual, identity, parsing and adversarial terms.

    ``output``/``target`` are ``(B, 3, H, W)`` in [0, 1], ``mask`` ``(B, H, W)``.
    Terms with zero weight are reported as 0 and need no provider.
    """
    if output.shape != target.shape:
        raise InvalidInputError(f"output {tuple(output.shape)} and target {tuple(target.shape)} differ")
    weights = dict(DEFAULT_WEIGHTS if weights is None else weights)
    unknown = set(weights) - set(LOSS_TERMS)
    if unknown:
        raise ConfigurationError(f"unknown loss terms: {sorted(unknown)}")
    for term, provider in _NEEDS.items():
        if weights.get(term, 0.0) and getattr(providers, provider, None) is None:
            raise ConfigurationError(f"loss term {term!r} has weight {weights[term]} but no {provider}")
    zero = output.new_zeros(())
    terms = dict.fromkeys(LOSS_TERMS, zero)
    terms["pixel"] = (output - target).abs().mean()
    if weights.get("perceptual", 0.0):
        fo, ft = providers.perceptual(output), providers.perceptual(target)
        terms["perceptual"] = sum((a - b.detach()).abs().mean() for a, b in zip(fo, ft)) / len(fo)
    if weights.get("id", 0.0):
        eo, et = providers.id_embedder(output), providers.id_embedder(target).detach()
        terms["id"] = (1.0 - F.cosine_similarity(eo, et, dim=1)).mean()
    if weights.get("parsing", 0.0):
        terms["parsing"] = ce_loss(providers.parser(output, target, mask, num_classes), mask)
    if weights.get("adversarial", 0.0):
        terms["adversarial"] = F.softplus(-providers.discriminator(output)).mean()
    total = sum(weights.get(k, 0.0) * terms[k] for k in LOSS_TERMS)
    return SGILossReport(total=total, **terms)


def discriminator_loss(discriminator, real, fake):
    return F.softplus(-discriminator(real)).mean() + F.softplus(discriminator(fake.detach())).mean()


def r1_penalty(discriminator, real):
    real = real.detach().requires_grad_(True)
    (grad,) = torch.autograd.grad(discriminator(real).sum(), real, create_graph=True)
    return grad.pow(2).flatten(1).sum(1).mean()
