"""On-disk formats: frame/mask directories, manifests and the in-memory corpus."""

from dataclasses import dataclass
import json
from pathlib import Path

import numpy as np
from PIL import Image

from . import audio
from .exceptions import InvalidInputError, TalkSegError


class CorpusIOError(TalkSegError, OSError):
    exit_code = 4


def frame_name(idx):
    return f"frame_{idx:05d}.png"


def write_frames(directory, images):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for i, img in enumerate(images):
        arr = np.clip(np.round(np.asarray(img) * 255.0), 0, 255).astype(np.uint8)
        Image.fromarray(arr, mode="RGB").save(directory / frame_name(i))


def write_masks(directory, labels):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for i, lab in enumerate(labels):
        Image.fromarray(np.asarray(lab, dtype=np.uint8), mode="L").save(directory / frame_name(i))


def _sorted_pngs(directory):
    directory = Path(directory)
    if not directory.is_dir():
        raise CorpusIOError(f"{directory} is not a directory")
    files = sorted(directory.glob("*.png"))
    if not files:
        raise InvalidInputError(f"{directory} holds no .png frames")
    return files


def read_frames(directory):
    return np.stack([
        np.asarray(Image.open(f).convert("RGB"), dtype=np.float32) / 255.0 for f in _sorted_pngs(directory)
    ])


def read_image(path):
    return np.asarray(Image.open(path).convert("RGB"), dtype=np.float32) / 255.0


def write_image(path, image):
    arr = np.clip(np.round(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(path)


def read_mask(path):
    return np.asarray(Image.open(path), dtype=np.int64)


def read_masks(directory):
    return np.stack([np.asarray(Image.open(f), dtype=np.int64) for f in _sorted_pngs(directory)])


def write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except OSError as exc:
        raise CorpusIOError(f"cannot read {path}: {exc}") from exc


def append_jsonl(path, record):
    with open(path, "a") as f:
        f.write(json.dumps(record, sort_keys=True) + "\n")


def read_jsonl(path):
    return [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]


@dataclass
class Clip:
    name: str
    identity_seed: int
    split: str
    images: np.ndarray   # (T, H, W, 3) float32 in [0, 1]
    labels: np.ndarray   # (T, H, W) int64
    waveform: np.ndarray
    mel: np.ndarray      # (T_mel, 80)

    @property
    def num_frames(self):
        return self.labels.shape[0]


def load_clip(clip_dir, name=None, identity_seed=-1, split="test"):
    clip_dir = Path(clip_dir)
    wav = audio.read_wav(clip_dir / "audio.wav")
    mel_path = clip_dir / "mel.bin"
    mel = audio.load_mel(mel_path) if mel_path.exists() else audio.compute_mel(wav)
    images = read_frames(clip_dir / "frames") if (clip_dir / "frames").is_dir() else None
    return Clip(name or clip_dir.name, identity_seed, split, images,
                read_masks(clip_dir / "masks"), wav, mel)


def load_corpus(corpus_dir, split=None):
    corpus_dir = Path(corpus_dir)
    manifest = read_json(corpus_dir / "manifest.json")
    clips = []
    for entry in manifest["clips"]:
        if split is not None and entry["split"] != split:
            continue
        clips.append(load_clip(corpus_dir / entry["path"], entry["name"], entry["identity_seed"], entry["split"]))
    return clips
