"""In-memory image types and basic raster operations.

Images are stored as float64 numpy arrays with intensities in [0, 1]:
grayscale as (h, w), RGB as (h, w, 3), row-major.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from PIL import Image

# ITU-R BT.601 luma weights for RGB -> grayscale.
_BT601 = np.array([0.299, 0.587, 0.114])


class ImageError(ValueError):
    pass


@dataclass(frozen=True)
class GrayImage:
    """Single-channel image, intensities in [0, 1], at least 3x3."""

    data: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.data, dtype=np.float64)
        if d.ndim != 2:
            raise ImageError(f"grayscale image must be 2-D, got shape {d.shape}")
        if d.shape[0] < 3 or d.shape[1] < 3:
            raise ImageError("image too small")
        if not np.isfinite(d).all() or d.min() < 0.0 or d.max() > 1.0:
            raise ImageError("intensities must be finite and in [0, 1]")
        object.__setattr__(self, "data", d)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class RgbImage:
    """Three-channel image, all channels in [0, 1]."""

    data: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.data, dtype=np.float64)
        if d.ndim != 3 or d.shape[2] != 3:
            raise ImageError(f"RGB image must be (h, w, 3), got shape {d.shape}")
        if not np.isfinite(d).all() or d.min() < 0.0 or d.max() > 1.0:
            raise ImageError("channels must be finite and in [0, 1]")
        object.__setattr__(self, "data", d)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


def to_gray(img: RgbImage) -> GrayImage:
    """RGB -> grayscale with BT.601 weights."""
    g = img.data @ _BT601
    return GrayImage(np.clip(g, 0.0, 1.0))


def bilinear_resize(data: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resampling with half-pixel-centered source coordinates.

    Output pixel (i, j) samples the source at
    ((i + 0.5) * h/out_h - 0.5, (j + 0.5) * w/out_w - 0.5), clamped to the
    source grid.
    """
    h, w = data.shape[:2]
    ys = (np.arange(out_h) + 0.5) * (h / out_h) - 0.5
    xs = (np.arange(out_w) + 0.5) * (w / out_w) - 0.5
    ys = np.clip(ys, 0.0, h - 1.0)
    xs = np.clip(xs, 0.0, w - 1.0)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    if data.ndim == 3:
        fy = fy[..., None]
        fx = fx[..., None]
    a = data[np.ix_(y0, x0)]
    b = data[np.ix_(y0, x1)]
    c = data[np.ix_(y1, x0)]
    d = data[np.ix_(y1, x1)]
    top = a + (b - a) * fx
    bot = c + (d - c) * fx
    return top + (bot - top) * fy


def load_png(path) -> RgbImage:
    """Decode a PNG into an RgbImage; raises ImageError on failure."""
    try:
        with Image.open(path) as im:
            rgb = im.convert("RGB")
            arr = np.asarray(rgb, dtype=np.float64) / 255.0
    except Exception as exc:
        raise ImageError(f"cannot decode image {path}: {exc}") from exc
    return RgbImage(arr)


def save_png(img: RgbImage, path) -> None:
    arr = np.clip(np.round(img.data * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(path, format="PNG")


def gray_to_rgb(gray: np.ndarray) -> RgbImage:
    """Replicate a [0,1] grayscale array into three channels."""
    return RgbImage(np.repeat(np.clip(gray, 0.0, 1.0)[:, :, None], 3, axis=2))
