"""Raster fundamentals: unit-float images, bilinear sampling, masks, PNG I/O.

Images are numpy arrays, float32 in [0, 1], shape (H, W) for single channel
or (H, W, 3) for color.  8-bit values exist only at the PNG boundary.
Continuous coordinates put sample centers at integers: sample (i, j) lives
at x = j, y = i.
"""

from __future__ import annotations

import numpy as np
from PIL import Image

from panofix.errors import ImageIOError

EQUIRECT_ASPECT_SLACK = 2  # |W - 2H| tolerated, real captures are off by a pixel


def as_float(img: np.ndarray) -> np.ndarray:
    """uint8 -> float32 in [0,1]; float input is passed through as float32."""
    if img.dtype == np.uint8:
        return img.astype(np.float32) / 255.0
    return np.asarray(img, dtype=np.float32)


def to_uint8(img: np.ndarray) -> np.ndarray:
    """Quantize unit floats to 8 bit, rounding half away from zero."""
    scaled = np.asarray(img, dtype=np.float64) * 255.0
    rounded = np.floor(scaled + 0.5)  # values are non-negative here
    return np.clip(rounded, 0, 255).astype(np.uint8)


def check_equirect(img: np.ndarray) -> None:
    """Validate the 2:1 equirectangular aspect (small slack for odd widths)."""
    h, w = img.shape[:2]
    if abs(w - 2 * h) > EQUIRECT_ASPECT_SLACK:
        raise ValueError(f"not an equirectangular image: {w}x{h} (want width == 2*height)")


def sample_bilinear(img: np.ndarray, x, y, wrap_x: bool = False) -> np.ndarray:
    """Bilinear sample at subpixel (x, y).

    x and y may be scalars or arrays of equal shape.  y is clamped to
    [0, H-1]; x wraps modulo W when wrap_x is set, otherwise it is clamped.
    Returns float samples with the image's channel layout.
    """
    h, w = img.shape[:2]
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)

    if wrap_x:
        x = np.mod(x, w)
    else:
        x = np.clip(x, 0.0, w - 1.0)
    y = np.clip(y, 0.0, h - 1.0)

    x0 = np.floor(x).astype(np.int64)
    y0 = np.floor(y).astype(np.int64)
    fx = x - x0
    fy = y - y0

    if wrap_x:
        x0 = np.mod(x0, w)
        x1 = np.mod(x0 + 1, w)
    else:
        x0 = np.clip(x0, 0, w - 1)
        x1 = np.clip(x0 + 1, 0, w - 1)
    y0 = np.clip(y0, 0, h - 1)
    y1 = np.clip(y0 + 1, 0, h - 1)

    if img.ndim == 3:
        fx = fx[..., None]
        fy = fy[..., None]

    v00 = img[y0, x0].astype(np.float64)
    v01 = img[y0, x1].astype(np.float64)
    v10 = img[y1, x0].astype(np.float64)
    v11 = img[y1, x1].astype(np.float64)

    top = v00 * (1.0 - fx) + v01 * fx
    bot = v10 * (1.0 - fx) + v11 * fx
    return top * (1.0 - fy) + bot * fy


def read_image(path) -> np.ndarray:
    """Read an 8-bit PNG as unit-float array, (H, W) gray or (H, W, 3) color."""
    try:
        with Image.open(path) as im:
            mode = im.mode
            if mode in ("I", "I;16", "I;16B", "I;16L", "F"):
                raise ImageIOError(f"{path}: unsupported bit depth (mode {mode})")
            if mode == "P":
                im = im.convert("RGB")
                mode = "RGB"
            if mode in ("RGBA", "LA"):
                raise ImageIOError(f"{path}: unsupported channel count (mode {mode})")
            if mode not in ("L", "RGB", "1"):
                raise ImageIOError(f"{path}: unsupported mode {mode}")
            if mode == "1":
                im = im.convert("L")
            arr = np.asarray(im, dtype=np.uint8)
    except ImageIOError:
        raise
    except Exception as exc:
        raise ImageIOError(f"{path}: cannot read image ({exc})") from exc
    return as_float(arr)


def write_image(img: np.ndarray, path) -> None:
    """Write a unit-float (or uint8) image as an 8-bit PNG."""
    arr = img if img.dtype == np.uint8 else to_uint8(img)
    if arr.ndim not in (2, 3) or (arr.ndim == 3 and arr.shape[2] != 3):
        raise ImageIOError(f"{path}: image must have 1 or 3 channels")
    Image.fromarray(arr).save(path, format="PNG")


def read_mask(path) -> np.ndarray:
    """Read a single-channel PNG mask (0 = false, 255 = true) as bool array."""
    arr = read_image(path)
    if arr.ndim != 2:
        raise ImageIOError(f"{path}: mask must be single channel")
    return arr > 0.5


def write_mask(mask: np.ndarray, path) -> None:
    """Write a bool mask as a single-channel PNG (0/255)."""
    Image.fromarray(np.where(mask, 255, 0).astype(np.uint8)).save(path, format="PNG")


def read_ids(path) -> np.ndarray:
    """Read a single-channel PNG of raw category ids (no unit-float scaling)."""
    try:
        with Image.open(path) as im:
            if im.mode not in ("L", "P"):
                raise ImageIOError(f"{path}: label map must be a single-channel 8-bit PNG")
            arr = np.asarray(im.convert("L") if im.mode == "P" else im, dtype=np.uint8)
    except ImageIOError:
        raise
    except Exception as exc:
        raise ImageIOError(f"{path}: cannot read label map ({exc})") from exc
    return arr


def write_ids(ids: np.ndarray, path) -> None:
    Image.fromarray(ids.astype(np.uint8)).save(path, format="PNG")
