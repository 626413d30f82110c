"""Region-level edits on style codes and rendered frames."""

import numpy as np

from ..exceptions import InvalidInputError
from ..masks import BACKGROUND


def swap_region_codes(src, ref, region_id):
    """Copy of ``src`` codes with row ``region_id`` taken from ``ref``.

    Works on a single ``(C, L, D)`` grid or a batch ``(N, C, L, D)``.
    """
    src = np.asarray(src)
    ref = np.asarray(ref)
    if src.shape[-3:] != ref.shape[-3:]:
        raise InvalidInputError(f"code grids differ: {src.shape[-3:]} vs {ref.shape[-3:]}")
    c = src.shape[-3]
    if not 0 <= int(region_id) < c:
        raise InvalidInputError(f"region {region_id} outside [0, {c})")
    out = src.copy()
    out[..., region_id, :, :] = np.broadcast_to(ref, np.broadcast_shapes(src.shape, ref.shape))[..., region_id, :, :]
    return out


def swap_background(frame, mask, background):
    """Hard composite: BACKGROUND pixels from ``background``, all others from ``frame``."""
    frame = np.asarray(frame)
    background = np.asarray(background)
    mask = np.asarray(mask)
    if frame.shape != background.shape:
        raise InvalidInputError(f"background {background.shape} does not match frame {frame.shape}")
    if mask.shape != frame.shape[:2]:
        raise InvalidInputError(f"mask {mask.shape} does not match frame {frame.shape[:2]}")
    return np.where((mask == BACKGROUND)[..., None], background, frame)
