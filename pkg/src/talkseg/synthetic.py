"""Procedural talking-face corpus with exact masks and articulation-driven audio.

Faces are layered 2-D region layouts. A per-frame mouth-opening parameter
(the *articulation*) deforms the lips and modulates the loudness and pitch of
a harmonic tone, so the audio carries recoverable lip information.
"""

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import audio
from .exceptions import InvalidInputError
from .masks import (
    BACKGROUND, BROW, DEFAULT_PALETTE, EAR, EYE, GLASSES, HAIR, INNER_MOUTH,
    LOWER_LIP, NECK, NOSE, SKIN, UPPER_LIP,
)

SAMPLES_PER_FRAME = audio.SAMPLE_RATE // audio.FPS


@dataclass
class SyntheticClipSpec:
    identity_seed: int
    num_frames: int
    articulation: np.ndarray
    resolution: int = 64
    name: str = ""
    split: str = "train"

    def __post_init__(self):
        self.articulation = np.asarray(self.articulation, dtype=np.float64)
        if self.articulation.shape != (self.num_frames,):
            raise InvalidInputError(
                f"articulation has {self.articulation.shape} entries for {self.num_frames} frames"
            )
        if np.any((self.articulation < 0) | (self.articulation > 1)):
            raise InvalidInputError("articulation must lie in [0, 1]")
        if self.resolution < 32 or self.resolution % 16:
            raise InvalidInputError(f"resolution {self.resolution} must be a multiple of 16 >= 32")
        if not self.name:
            self.name = f"id{self.identity_seed:03d}"


def random_articulation(num_frames, rng):
    """Smooth syllable-like mouth-opening trajectory in [0, 1]."""
    knots_t = [0]
    while knots_t[-1] < num_frames:
        knots_t.append(knots_t[-1] + int(rng.integers(3, 7)))
    knots_v = np.where(rng.random(len(knots_t)) < 0.3, 0.0, rng.uniform(0.15, 1.0, len(knots_t)))
    traj = np.interp(np.arange(num_frames), knots_t, knots_v)
    kernel = np.array([0.25, 0.5, 0.25])
    traj = np.convolve(np.pad(traj, 1, mode="edge"), kernel, mode="valid")
    return np.clip(traj, 0.0, 1.0)


def make_clip_specs(num_identities, num_frames, seed=0, resolution=64, split="train",
                    identity_offset=0, tag=""):
    rng = np.random.default_rng([seed, identity_offset, len(split)])
    specs = []
    for i in range(num_identities):
        ident = identity_offset + i
        specs.append(SyntheticClipSpec(
            identity_seed=ident,
            num_frames=num_frames,
            articulation=random_articulation(num_frames, rng),
            resolution=resolution,
            name=f"id{ident:03d}{tag}",
            split=split,
        ))
    return specs


@dataclass
class Identity:
    seed: int
    geometry: dict = field(default_factory=dict)
    colors: np.ndarray = None  # (12, 3)
    f0: float = 150.0
    hair_freq: float = 0.5

    @classmethod
    def from_seed(cls, seed):
        rng = np.random.default_rng([7919, seed])
        g = {
            "cx": 32 + rng.uniform(-2, 2),
            "cy": 29 + rng.uniform(-1.5, 1.5),
            "fa": rng.uniform(14, 16.5),
            "fb": rng.uniform(18, 20.5),
            "hair_drop": rng.uniform(0.2, 0.9),
            "eye_dx": rng.uniform(6.5, 8.0),
            "eye_rx": rng.uniform(3.0, 4.0),
            "eye_ry": rng.uniform(1.6, 2.4),
            "brow_dy": rng.uniform(3.5, 4.5),
            "mouth_dy": rng.uniform(10.5, 12.0),
            "mouth_w": rng.uniform(6.0, 8.0),
            "lip_top": rng.uniform(2.0, 3.0),
            "lip_bot": rng.uniform(2.5, 3.5),
            "glasses": bool(rng.random() < 0.5),
        }
        colors = np.empty((12, 3))
        skin = np.array([0.85, 0.65, 0.5]) * rng.uniform(0.55, 1.1) + rng.uniform(-0.05, 0.05, 3)
        colors[SKIN] = skin
        colors[EAR] = skin * 0.92
        colors[NECK] = skin * 0.85
        colors[NOSE] = skin * rng.uniform(1.02, 1.12)
        colors[BACKGROUND] = rng.uniform(0.05, 0.95, 3)
        colors[HAIR] = rng.uniform(0.02, 0.8, 3)
        colors[BROW] = colors[HAIR] * rng.uniform(0.5, 0.9)
        colors[EYE] = np.array([0.95, 0.95, 0.95]) * rng.uniform(0.15, 0.45) + rng.uniform(0, 0.3, 3)
        colors[GLASSES] = rng.uniform(0.0, 0.9, 3)
        colors[UPPER_LIP] = np.array([0.75, 0.3, 0.35]) * rng.uniform(0.7, 1.15) + rng.uniform(-0.08, 0.08, 3)
        colors[LOWER_LIP] = colors[UPPER_LIP] * rng.uniform(0.85, 1.1)
        colors[INNER_MOUTH] = np.array([0.35, 0.05, 0.08]) + rng.uniform(0, 0.25, 3)
        return cls(seed, g, np.clip(colors, 0.02, 0.98), float(rng.uniform(100, 220)),
                   float(rng.uniform(0.6, 1.4)))


def _ellipse(yy, xx, cy, cx, ry, rx):
    return ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0


def render_labels(identity, articulation, resolution=64):
    """Canonical label map for one frame."""
    s = resolution / 64.0
    g = identity.geometry
    yy, xx = np.mgrid[0:resolution, 0:resolution].astype(np.float64) / s + 0.5 / s
    cx, cy, fa, fb = g["cx"], g["cy"], g["fa"], g["fb"]
    lab = np.full((resolution, resolution), BACKGROUND, dtype=np.int64)

    lab[(np.abs(xx - cx) <= fa * 0.55) & (yy >= cy + fb * 0.5)] = NECK
    hair = _ellipse(yy, xx, cy - fb * 0.25, cx, fb * 0.95, fa + 3.0)
    hair &= yy <= cy + fb * g["hair_drop"]
    lab[hair] = HAIR
    for side in (-1, 1):
        lab[_ellipse(yy, xx, cy + 1.0, cx + side * fa, 4.5, 2.8)] = EAR
    lab[_ellipse(yy, xx, cy + 1.0, cx, fb, fa) & (yy >= cy - fb * 0.62)] = SKIN

    eye_y = cy - 3.0
    for side in (-1, 1):
        ex = cx + side * g["eye_dx"]
        lab[_ellipse(yy, xx, eye_y - g["brow_dy"], ex, 1.3, g["eye_rx"] + 0.8)] = BROW
        if g["glasses"]:
            outer = (np.abs(xx - ex) <= g["eye_rx"] + 2.2) & (np.abs(yy - eye_y) <= g["eye_ry"] + 1.6)
            inner = (np.abs(xx - ex) <= g["eye_rx"] + 1.1) & (np.abs(yy - eye_y) <= g["eye_ry"] + 0.6)
            lab[outer & ~inner] = GLASSES
        lab[_ellipse(yy, xx, eye_y, ex, g["eye_ry"], g["eye_rx"])] = EYE
    if g["glasses"]:
        bridge = (np.abs(xx - cx) <= g["eye_dx"] - g["eye_rx"] - 1.1) & (np.abs(yy - (eye_y - 0.5)) <= 0.6)
        lab[bridge] = GLASSES

    lab[_ellipse(yy, xx, cy + 3.5, cx, 4.2, 2.4)] = NOSE

    opening = 0.5 + 8.5 * float(articulation)
    my = cy + g["mouth_dy"]
    mw = g["mouth_w"]
    top = my - opening / 2
    bot = my + opening / 2
    lab[_ellipse(yy, xx, top, cx, g["lip_top"], mw) & (yy <= top)] = UPPER_LIP
    lab[_ellipse(yy, xx, bot, cx, g["lip_bot"], mw * 0.92) & (yy >= bot)] = LOWER_LIP
    lab[_ellipse(yy, xx, my, cx, opening / 2, mw * 0.85)] = INNER_MOUTH
    return lab


def render_image(identity, labels):
    """RGB float image in [0, 1] from a label map and identity colors."""
    res = labels.shape[0]
    img = identity.colors[labels].copy()
    yy, xx = np.mgrid[0:res, 0:res] / res
    img *= (1.06 - 0.12 * yy)[..., None]
    stripes = 0.03 * np.sin(2 * np.pi * identity.hair_freq * 8 * (xx + 0.5 * yy))
    img[labels == HAIR] += stripes[labels == HAIR][:, None]
    return np.clip(img, 0.0, 1.0)


def synthesize_audio(identity, articulation, rng):
    """Harmonic tone whose loudness and pitch follow the articulation track."""
    n_frames = len(articulation)
    n = n_frames * SAMPLES_PER_FRAME
    t_frames = (np.arange(n_frames) + 0.5) * SAMPLES_PER_FRAME
    a = np.interp(np.arange(n), t_frames, articulation)
    amp = 0.03 * np.exp(2.5 * a)
    f0 = identity.f0 * (1.0 + 0.3 * a)
    phase = 2 * np.pi * np.cumsum(f0) / audio.SAMPLE_RATE
    tone = sum(np.sin(k * phase) / k for k in range(1, 9))
    wav = amp * tone / 2.0 + 0.004 * rng.standard_normal(n)
    return np.clip(wav, -1.0, 1.0).astype(np.float32)


def render_clip(spec, seed=0):
    """Return ``(images, labels, waveform)`` for one clip spec."""
    identity = Identity.from_seed(spec.identity_seed)
    labels = np.stack([render_labels(identity, a, spec.resolution) for a in spec.articulation])
    images = np.stack([render_image(identity, lab) for lab in labels])
    rng = np.random.default_rng([seed, spec.identity_seed, spec.num_frames, 17])
    # round-trip through 16-bit PCM so in-memory and on-disk corpora agree
    wav = np.round(synthesize_audio(identity, spec.articulation, rng) * 32767.0) / 32768.0
    return images, labels, wav.astype(np.float32)


def lip_separation(labels):
    """Vertical distance between the lower- and upper-lip centroids, in pixels.

    Centroids average over many pixels, so this tracks the opening far more
    finely than a row count at low resolution.
    """
    yu = np.nonzero(labels == UPPER_LIP)[0]
    yl = np.nonzero(labels == LOWER_LIP)[0]
    if yu.size == 0 or yl.size == 0:
        return 0.0
    return float(yl.mean() - yu.mean())


def generate_corpus(specs, out_dir, seed=0, workers=1):
    """Render clips to disk and write ``manifest.json``; returns the manifest dict."""
    from . import io as tio

    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / "palette.txt").write_text(DEFAULT_PALETTE.to_manifest())
    except OSError as exc:
        raise tio.CorpusIOError(f"cannot write corpus to {out}: {exc}") from exc

    def build(spec):
        images, labels, wav = render_clip(spec, seed)
        clip_dir = out / "clips" / spec.name
        tio.write_frames(clip_dir / "frames", images)
        tio.write_masks(clip_dir / "masks", labels)
        audio.write_wav(clip_dir / "audio.wav", wav)
        audio.save_mel(clip_dir / "mel.bin", audio.compute_mel(wav))
        np.save(clip_dir / "articulation.npy", spec.articulation)
        return {
            "name": spec.name,
            "identity_seed": spec.identity_seed,
            "num_frames": spec.num_frames,
            "resolution": spec.resolution,
            "split": spec.split,
            "path": f"clips/{spec.name}",
        }

    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(workers) as pool:
            entries = list(pool.map(build, specs))
    else:
        entries = [build(s) for s in specs]
    manifest = {"format": 1, "seed": seed, "palette": "palette.txt", "clips": entries}
    tio.write_json(out / "manifest.json", manifest)
    return manifest


def build_clips(specs, seed=0):
    """Render clips straight into memory (same content as :func:`generate_corpus`)."""
    from .io import Clip

    clips = []
    for spec in specs:
        images, labels, wav = render_clip(spec, seed)
        images = np.round(images * 255.0).astype(np.float32) / 255.0
        clips.append(Clip(spec.name, spec.identity_seed, spec.split, images, labels, wav,
                          audio.compute_mel(wav)))
    return clips
