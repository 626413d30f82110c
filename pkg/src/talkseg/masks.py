"""Segmentation masks: class palette, raw-parser merging, one-hot codecs and edits.

Label maps are plain ``(H, W)`` integer arrays and one-hot masks are
``(C, H, W)`` uint8 arrays. Occluded pixels of a pose source carry an
all-zero column instead of a dedicated label.
"""

from dataclasses import dataclass, field
import hashlib

import numpy as np

from ._validation import check_label_map
from .exceptions import InvalidInputError

CANONICAL_CLASSES = (
    "BACKGROUND",
    "SKIN",
    "BROW",
    "EYE",
    "GLASSES",
    "EAR",
    "NOSE",
    "INNER_MOUTH",
    "UPPER_LIP",
    "LOWER_LIP",
    "NECK",
    "HAIR",
)

# 19-class face-parser ids (CelebAMask-HQ ordering).
RAW_CLASSES = (
    "background", "skin", "l_brow", "r_brow", "l_eye", "r_eye", "eye_g",
    "l_ear", "r_ear", "ear_r", "nose", "mouth", "u_lip", "l_lip", "neck",
    "neck_l", "cloth", "hair", "hat",
)

_RAW_TO_CANONICAL = {
    "background": "BACKGROUND",
    "skin": "SKIN",
    "l_brow": "BROW",
    "r_brow": "BROW",
    "l_eye": "EYE",
    "r_eye": "EYE",
    "eye_g": "GLASSES",
    "l_ear": "EAR",
    "r_ear": "EAR",
    "ear_r": "EAR",
    "nose": "NOSE",
    "mouth": "INNER_MOUTH",
    "u_lip": "UPPER_LIP",
    "l_lip": "LOWER_LIP",
    "neck": "NECK",
    "neck_l": "NECK",
    "cloth": "BACKGROUND",
    "hair": "HAIR",
    "hat": "HAIR",
}

BACKGROUND, SKIN, BROW, EYE, GLASSES, EAR, NOSE, INNER_MOUTH, UPPER_LIP, LOWER_LIP, NECK, HAIR = range(12)
MOUTH_CLASSES = (INNER_MOUTH, UPPER_LIP, LOWER_LIP)


@dataclass(frozen=True)
class ClassPalette:
    labels: tuple = CANONICAL_CLASSES
    merge_table: dict = field(default_factory=lambda: {
        raw_id: CANONICAL_CLASSES.index(_RAW_TO_CANONICAL[name])
        for raw_id, name in enumerate(RAW_CLASSES)
    })

    def __post_init__(self):
        if len(set(self.labels)) != len(self.labels):
            raise InvalidInputError("palette labels must be unique")
        if sorted(self.merge_table) != list(range(len(RAW_CLASSES))):
            raise InvalidInputError("merge_table must be total over raw ids 0..18")
        targets = set(self.merge_table.values())
        if targets != set(range(len(self.labels))):
            raise InvalidInputError("merge targets must cover exactly the palette ids")

    @property
    def num_classes(self):
        return len(self.labels)

    def index(self, name):
        if isinstance(name, (int, np.integer)):
            if not 0 <= name < self.num_classes:
                raise InvalidInputError(f"region id {name} outside [0, {self.num_classes})")
            return int(name)
        try:
            return self.labels.index(str(name).upper())
        except ValueError:
            raise InvalidInputError(f"unknown region {name!r}") from None

    def lookup_table(self):
        return np.array([self.merge_table[i] for i in range(len(RAW_CLASSES))], dtype=np.int64)

    def to_manifest(self):
        """Text manifest with one ``raw_id -> canonical_name`` line per raw id."""
        lines = [f"{raw_id} -> {self.labels[c]}" for raw_id, c in sorted(self.merge_table.items())]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_manifest(cls, text):
        table = {}
        names = []
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            raw, _, name = line.partition("->")
            name = name.strip()
            table[int(raw)] = name
            if name not in names:
                names.append(name)
        ordered = tuple(n for n in CANONICAL_CLASSES if n in names) + tuple(
            n for n in names if n not in CANONICAL_CLASSES
        )
        return cls(labels=ordered, merge_table={k: ordered.index(v) for k, v in table.items()})

    def digest(self):
        return hashlib.sha256(self.to_manifest().encode()).hexdigest()


DEFAULT_PALETTE = ClassPalette()


def merge_classes(raw_map, palette=DEFAULT_PALETTE):
    """Map a 19-class parser output onto the canonical palette ids."""
    raw = np.asarray(raw_map)
    bad = raw[(raw < 0) | (raw >= len(RAW_CLASSES))]
    if bad.size:
        raise InvalidInputError(f"raw label {int(bad.flat[0])} outside [0, {len(RAW_CLASSES)})")
    raw = check_label_map(raw, len(RAW_CLASSES), name="raw_map")
    return palette.lookup_table()[raw]


def one_hot(labels, num_classes=12):
    labels = check_label_map(labels, num_classes)
    out = np.zeros((num_classes,) + labels.shape, dtype=np.uint8)
    np.put_along_axis(out, labels[None], 1, axis=0)
    return out


def decode(onehot):
    """Per-pixel argmax of a (C, H, W) mask or logit grid."""
    arr = np.asarray(onehot)
    if arr.ndim != 3:
        raise InvalidInputError(f"expected (C, H, W), got shape {arr.shape}")
    return np.argmax(arr, axis=0).astype(np.int64)


def compute_class_weights(corpus, num_classes=12, eps_area=1e-6, clip=(0.1, 10.0)):
    """Inverse-area region weights normalized to mean 1, then clipped."""
    corpus = list(corpus)
    if not corpus:
        raise InvalidInputError("class weights need a non-empty corpus")
    counts = np.zeros(num_classes, dtype=np.float64)
    total = 0
    for m in corpus:
        m = check_label_map(m, num_classes)
        counts += np.bincount(m.ravel(), minlength=num_classes)
        total += m.size
    inv = 1.0 / (counts / total + eps_area)
    w = inv / inv.mean()
    return np.clip(w, *clip)


def occlude_lower_half(mask):
    """Zero every channel in rows ``>= H // 2``."""
    mask = np.asarray(mask)
    if mask.ndim != 3 or mask.shape[1] < 2:
        raise InvalidInputError(f"expected (C, H>=2, W) mask, got shape {mask.shape}")
    out = mask.copy()
    out[:, mask.shape[1] // 2:, :] = 0
    return out


@dataclass(frozen=True)
class MaskPair:
    pose_source: np.ndarray
    identity_reference: np.ndarray

    def __post_init__(self):
        p, r = self.pose_source, self.identity_reference
        if p.shape != r.shape:
            raise InvalidInputError(f"pose source {p.shape} and reference {r.shape} differ")
        if np.any(p[:, p.shape[1] // 2:, :]):
            raise InvalidInputError("pose source lower half must be occluded")

    @classmethod
    def from_labels(cls, target, reference, num_classes=12):
        return cls(occlude_lower_half(one_hot(target, num_classes)), one_hot(reference, num_classes))

    def stacked(self):
        return np.concatenate([self.pose_source, self.identity_reference], axis=0)


def downsample(labels, target_h, target_w):
    """Nearest-neighbour downsampling anchored at the top-left pixel of each block."""
    labels = np.asarray(labels)
    h, w = labels.shape
    if target_h <= 0 or target_w <= 0 or h % target_h or w % target_w:
        raise InvalidInputError(f"{target_h}x{target_w} does not divide {h}x{w}")
    return labels[:: h // target_h, :: w // target_w].copy()


EDIT_KINDS = ("region_texture_swap", "blink", "background_swap")


@dataclass(frozen=True)
class EditSpec:
    """One local-edit instruction.

    ``payload`` is a ``(y0, x0, y1, x1)`` half-open stencil for ``blink`` and a
    reference identifier (frame id or image path) for the swap kinds.
    ``frames`` optionally restricts the edit to an inclusive frame range.
    """

    kind: str
    region_id: int
    payload: object = None
    frames: tuple = None

    def __post_init__(self):
        if self.kind not in EDIT_KINDS:
            raise InvalidInputError(f"unknown edit kind {self.kind!r}")
        if not 0 <= int(self.region_id) < DEFAULT_PALETTE.num_classes:
            raise InvalidInputError(f"region id {self.region_id} outside palette")
        if self.kind == "blink":
            y0, x0, y1, x1 = (int(v) for v in self.payload)
            if y1 < y0 or x1 < x0:
                raise InvalidInputError(f"blink stencil {self.payload} is inverted")
        if self.kind == "background_swap" and self.region_id != BACKGROUND:
            raise InvalidInputError("background_swap must target BACKGROUND")

    def active(self, frame_idx):
        if self.frames is None:
            return True
        lo, hi = self.frames
        return lo <= frame_idx <= hi

    def to_record(self):
        name = DEFAULT_PALETTE.labels[self.region_id]
        if self.kind == "blink":
            payload = ",".join(str(int(v)) for v in self.payload)
        else:
            payload = str(self.payload if self.payload is not None else "-")
        rec = f"{self.kind} {name} {payload}"
        if self.frames is not None:
            rec += f" frames={self.frames[0]}-{self.frames[1]}"
        return rec

    @classmethod
    def from_record(cls, line, palette=DEFAULT_PALETTE):
        parts = line.split()
        if len(parts) < 3:
            raise InvalidInputError(f"edit record needs 'kind region payload': {line!r}")
        kind, region, payload, *rest = parts
        region_id = palette.index(int(region) if region.isdigit() else region)
        if kind == "blink":
            payload = tuple(int(v) for v in payload.split(","))
            if len(payload) != 4:
                raise InvalidInputError(f"blink stencil needs 4 integers: {line!r}")
        frames = None
        for opt in rest:
            key, _, value = opt.partition("=")
            if key != "frames":
                raise InvalidInputError(f"unknown edit option {opt!r}")
            lo, _, hi = value.partition("-")
            frames = (int(lo), int(hi or lo))
        return cls(kind, region_id, payload, frames)


def parse_edit_specs(text, palette=DEFAULT_PALETTE):
    return [
        EditSpec.from_record(line, palette)
        for line in text.splitlines()
        if line.strip() and not line.lstrip().startswith("#")
    ]


def face_bbox(labels):
    """Half-open bounding box of all non-background pixels, or None."""
    ys, xs = np.nonzero(np.asarray(labels) != BACKGROUND)
    if ys.size == 0:
        return None
    return int(ys.min()), int(xs.min()), int(ys.max()) + 1, int(xs.max()) + 1


def apply_edit(labels, spec, num_classes=12):
    """Apply a mask-level edit; swap edits act on style codes and leave the map as is."""
    labels = check_label_map(labels, num_classes)
    if not isinstance(spec, EditSpec):
        raise InvalidInputError(f"expected EditSpec, got {type(spec).__name__}")
    if spec.kind != "blink":
        return labels.copy()
    y0, x0, y1, x1 = spec.payload
    out = labels.copy()
    if y1 <= y0 or x1 <= x0:
        return out
    box = face_bbox(labels)
    if box is not None:
        fy0, fx0, fy1, fx1 = box
        if y0 < fy0 or x0 < fx0 or y1 > fy1 or x1 > fx1:
            raise InvalidInputError(f"blink stencil {spec.payload} leaves face box {box}")
    window = out[y0:y1, x0:x1]
    window[window == EYE] = SKIN
    return out
