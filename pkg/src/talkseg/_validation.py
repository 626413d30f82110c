import numpy as np

from .exceptions import InvalidInputError


def check_label_map(labels, num_classes, name="labels"):
    """Return ``labels`` as a 2-D int64 array, validating range and shape."""
    arr = np.asarray(labels)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise InvalidInputError(f"{name} must be a non-empty 2-D grid, got shape {arr.shape}")
    if not np.issubdtype(arr.dtype, np.integer):
        if not np.all(np.mod(arr, 1) == 0):
            raise InvalidInputError(f"{name} must hold integer labels")
    arr = arr.astype(np.int64)
    bad = arr[(arr < 0) | (arr >= num_classes)]
    if bad.size:
        raise InvalidInputError(
            f"{name} contains label {int(bad.flat[0])} outside [0, {num_classes})"
        )
    return arr


def check_label_stack(labels, num_classes, name="labels"):
    """Like :func:`check_label_map` but for an (N, H, W) stack."""
    arr = np.asarray(labels)
    if arr.ndim != 3:
        raise InvalidInputError(f"{name} must be (N, H, W), got shape {arr.shape}")
    for i in range(arr.shape[0]):
        check_label_map(arr[i], num_classes, name=f"{name}[{i}]")
    return arr.astype(np.int64)


def check_image(image, name="image", resolution=None):
    """Validate an H×W×3 float image in [0, 1]."""
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise InvalidInputError(f"{name} must be H×W×3, got shape {arr.shape}")
    if resolution is not None and arr.shape[:2] != (resolution, resolution):
        raise InvalidInputError(
            f"{name} must be {resolution}×{resolution}, got {arr.shape[0]}×{arr.shape[1]}"
        )
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} contains non-finite values")
    return arr


def check_same_shape(a, b, names=("a", "b")):
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise InvalidInputError(f"{names[0]} shape {a.shape} != {names[1]} shape {b.shape}")
    return a, b


def check_positive_int(value, name):
    if int(value) != value or value <= 0:
        raise InvalidInputError(f"{name} must be a positive integer, got {value!r}")
    return int(value)
