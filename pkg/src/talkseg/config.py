"""Run configuration: flat ``key = value`` files with includes and env overrides."""

import hashlib
import os
from pathlib import Path

from .exceptions import ConfigurationError

ENV_PREFIX = "TALKSEG_"

DEFAULTS = {
    "seed": 0,
    "resolution": 64,
    "num_classes": 12,
    # synthetic corpus
    "corpus.identities": 8,
    "corpus.frames": 200,
    "corpus.test_frames": 75,
    # lip-sync expert
    "syncnet.steps": 2000,
    "syncnet.batch_size": 8,
    "syncnet.lr": 1e-4,
    "syncnet.eval_every": 500,
    "syncnet.eval_samples": 800,
    "syncnet.width": 16,
    # talking segmentation generator
    "tsg.phase1_steps": 1500,
    "tsg.phase2_steps": 1000,
    "tsg.batch_windows": 2,
    "tsg.lr": 1e-4,
    "tsg.beta1": 0.5,
    "tsg.beta2": 0.999,
    "tsg.lambda_sync": 0.03,
    "tsg.use_syncnet": True,
    "tsg.loss": "ce",
    "tsg.provider": "trainable",
    "tsg.depth": 4,
    "tsg.base_width": 16,
    "tsg.d_local": 256,
    "tsg.d_ctx": 256,
    "tsg.autoregressive": False,
    # style injection
    "sgi.steps": 3000,
    "sgi.batch_size": 8,
    "sgi.lr": 5e-4,
    "sgi.beta1": 0.9,
    "sgi.beta2": 0.999,
    "sgi.style_dim": 512,
    "sgi.prior_learning": True,
    "sgi.prior_range": 15,
    "sgi.w_pixel": 1.0,
    "sgi.w_perceptual": 0.8,
    "sgi.w_id": 0.1,
    "sgi.w_parsing": 1.0,
    "sgi.w_adversarial": 0.02,
    "sgi.r1_gamma": 10.0,
    "sgi.r1_every": 16,
    "sgi.id_steps": 300,
    "sgi.eval_every": 500,
    "sgi.lr_schedule": "cosine",
    # evaluation
    "eval.lmd_penalty": 16.0,
}


def _coerce(key, raw, template):
    if isinstance(template, bool):
        low = str(raw).strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigurationError(f"{key}: expected a boolean, got {raw!r}")
    try:
        if isinstance(template, int):
            return int(raw)
        if isinstance(template, float):
            return float(raw)
    except (TypeError, ValueError):
        raise ConfigurationError(f"{key}: cannot parse {raw!r} as {type(template).__name__}") from None
    return str(raw).strip()


class RunConfig(dict):
    """Typed mapping over :data:`DEFAULTS`; unknown keys are rejected."""

    def __init__(self, values=None, **overrides):
        super().__init__(DEFAULTS)
        for key, value in {**(values or {}), **overrides}.items():
            self[key.replace("__", ".")] = value

    def __setitem__(self, key, value):
        if key not in DEFAULTS:
            raise ConfigurationError(f"unknown config key {key!r}")
        super().__setitem__(key, _coerce(key, value, DEFAULTS[key]))

    def update(self, other=(), **kw):
        for k, v in dict(other, **kw).items():
            self[k] = v

    def replace(self, **overrides):
        out = RunConfig(dict(self))
        for k, v in overrides.items():
            out[k.replace("__", ".")] = v
        return out

    def section(self, prefix):
        return {k[len(prefix) + 1:]: v for k, v in self.items() if k.startswith(prefix + ".")}

    def to_text(self):
        return "".join(f"{k} = {_format(v)}\n" for k, v in sorted(self.items()))

    def digest(self):
        return hashlib.sha256(self.to_text().encode()).hexdigest()

    @classmethod
    def from_file(cls, path, env=None):
        cfg = cls(_read(Path(path), set()))
        cfg.apply_env(os.environ if env is None else env)
        return cfg

    def apply_env(self, env):
        for name, value in env.items():
            if name.startswith(ENV_PREFIX):
                key = name[len(ENV_PREFIX):].lower().replace("__", ".")
                self[key] = value
        return self


def _format(v):
    return repr(v) if isinstance(v, float) else str(v).lower() if isinstance(v, bool) else str(v)


def _read(path, seen):
    path = path.resolve()
    if path in seen:
        raise ConfigurationError(f"include cycle through {path}")
    seen = seen | {path}
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("include "):
            values.update(_read(path.parent / line[len("include "):].strip(), seen))
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigurationError(f"{path}:{lineno}: expected 'key = value'")
        values[key.strip()] = value.strip()
    return values
