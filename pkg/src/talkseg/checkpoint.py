"""Versioned checkpoint container shared by all trainable stages.

Layout: 4-byte magic ``TSCK``, little-endian uint32 header length, UTF-8 JSON
header, then a ``torch.save`` payload.
"""

import io
import json
from pathlib import Path
import struct

import torch

from .exceptions import CheckpointMismatchError
from .masks import DEFAULT_PALETTE

MAGIC = b"TSCK"
FORMAT_VERSION = 1


def save_checkpoint(path, module, state, config_hash, step, extra=None, optimizer=None):
    header = {
        "format_version": FORMAT_VERSION,
        "module": module,
        "step": int(step),
        "config_hash": config_hash,
        "palette_hash": DEFAULT_PALETTE.digest(),
        **(extra or {}),
    }
    buf = io.BytesIO()
    torch.save({"state": state, "optimizer": optimizer}, buf)
    blob = json.dumps(header, sort_keys=True).encode()
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(MAGIC + struct.pack("<I", len(blob)) + blob + buf.getvalue())
    return header


def read_header(path):
    with open(path, "rb") as f:
        if f.read(4) != MAGIC:
            raise CheckpointMismatchError(f"{path} is not a checkpoint container")
        (n,) = struct.unpack("<I", f.read(4))
        return json.loads(f.read(n))


def load_checkpoint(path, module=None, config_hash=None):
    """Return ``(header, payload)``; header fields are verified before unpickling."""
    with open(path, "rb") as f:
        if f.read(4) != MAGIC:
            raise CheckpointMismatchError(f"{path} is not a checkpoint container")
        (n,) = struct.unpack("<I", f.read(4))
        header = json.loads(f.read(n))
        payload = f.read()
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointMismatchError(f"{path}: unsupported format {header.get('format_version')}")
    if module is not None and header["module"] != module:
        raise CheckpointMismatchError(f"{path} holds module {header['module']!r}, expected {module!r}")
    if header["palette_hash"] != DEFAULT_PALETTE.digest():
        raise CheckpointMismatchError(f"{path}: palette hash mismatch")
    if config_hash is not None and header["config_hash"] != config_hash:
        raise CheckpointMismatchError(
            f"{path}: config hash {header['config_hash'][:12]} != expected {config_hash[:12]}"
        )
    data = torch.load(io.BytesIO(payload), map_location="cpu", weights_only=False)
    return header, data
