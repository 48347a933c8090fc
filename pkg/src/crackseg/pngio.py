"""8-bit PNG I/O for images and binary masks.

Images come back as float64 [3,H,W] scaled to [0,1]; masks as [H,W]
arrays in {0,1}, binarized at 128/255. Only 8-bit grayscale and RGB PNGs
are accepted; higher bit depths and palette images are rejected so a
silently rescaled mask can never slip through.
"""

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import ConfigError, ShapeError

MASK_CUTOFF = 128  # of 255


def _read_8bit(path: str) -> np.ndarray:
    try:
        with Image.open(path) as im:
            if im.format != "PNG":
                raise ConfigError(f"{path}: not a PNG file "
                                  f"(got {im.format})")
            if im.mode not in ("L", "RGB"):
                raise ConfigError(
                    f"{path}: unsupported PNG mode {im.mode!r}; "
                    f"need 8-bit grayscale (L) or RGB")
            return np.asarray(im, dtype=np.float64)
    except (UnidentifiedImageError, OSError) as exc:
        raise ConfigError(f"cannot read PNG {path}: {exc}") from None


def load_image(path: str) -> np.ndarray:
    """PNG -> [3,H,W] float64 in [0,1]; grayscale is replicated."""
    arr = _read_8bit(path)
    if arr.ndim == 2:
        arr = np.stack([arr, arr, arr])
    else:
        arr = arr.transpose(2, 0, 1)
    return arr / 255.0


def load_mask(path: str) -> np.ndarray:
    """PNG -> [H,W] float64 in {0,1}, thresholded at 128 of 255."""
    arr = _read_8bit(path)
    if arr.ndim == 3:
        arr = arr.mean(axis=2)
    return (arr >= MASK_CUTOFF).astype(np.float64)


def save_png(path: str, array: np.ndarray) -> None:
    """Write floats in [0,1] as 8-bit PNG.

    Accepts [H,W] or [1,H,W] (grayscale) and [3,H,W] (RGB). Values are
    clipped, so probability maps can be written directly.
    """
    arr = np.asarray(array, dtype=np.float64)
    if arr.ndim == 3 and arr.shape[0] == 1:
        arr = arr[0]
    if arr.ndim == 2:
        mode = "L"
    elif arr.ndim == 3 and arr.shape[0] == 3:
        arr = arr.transpose(1, 2, 0)
        mode = "RGB"
    else:
        raise ShapeError(f"cannot write PNG from shape {arr.shape}; "
                         f"need [H,W], [1,H,W], or [3,H,W]")
    quantized = np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(quantized, mode=mode).save(path, format="PNG")
