"""Per-image quality signals.

Three analytic signals (clarity, entropy, luminance) computed directly from
pixels, plus two model-based signals (aesthetic, watermark) obtained through
pluggable scorers. The five scores together form the conditioning vector
attached to every corpus sample.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .images import GrayImage, ImageError, RgbImage, bilinear_resize, to_gray

ATTRIBUTES = ("aes", "wat", "cla", "ent", "luma")

# Valid ranges per attribute (clarity is unbounded above before clipping).
SCORE_RANGES = {
    "aes": (0.0, 10.0),
    "wat": (0.0, 1.0),
    "cla": (0.0, math.inf),
    "ent": (0.0, 8.0),
    "luma": (0.0, 1.0),
}


@dataclass(frozen=True)
class QualityVector:
    """Five-dimensional per-sample quality label (aes, wat, cla, ent, luma)."""

    aes: float
    wat: float
    cla: float
    ent: float
    luma: float

    def __post_init__(self):
        for name in ATTRIBUTES:
            v = getattr(self, name)
            lo, hi = SCORE_RANGES[name]
            if not (math.isfinite(v) and lo <= v <= hi):
                raise ValueError(f"score {name}={v} outside [{lo}, {hi}]")

    def as_array(self) -> np.ndarray:
        return np.array([self.aes, self.wat, self.cla, self.ent, self.luma])

    def replace(self, **kwargs) -> "QualityVector":
        vals = {k: getattr(self, k) for k in ATTRIBUTES}
        vals.update(kwargs)
        return QualityVector(**vals)

    @classmethod
    def from_array(cls, a) -> "QualityVector":
        return cls(*(float(v) for v in a))


@dataclass(frozen=True)
class ScorerHandle:
    """Named deterministic scorer mapping (image, sample id) -> score."""

    name: str
    score_fn: Callable[[RgbImage, Optional[str]], float]

    def score(self, img: RgbImage, sample_id: Optional[str] = None) -> float:
        return float(self.score_fn(img, sample_id))


def scale_normalize(img: GrayImage, target_long_side: int) -> GrayImage:
    """Resize so the longest side equals target_long_side (aspect preserved).

    The short side is rounded half-up; images already at target are returned
    unchanged. Bilinear resampling.
    """
    if target_long_side < 3:
        raise ValueError("target_long_side must be >= 3")
    h, w = img.height, img.width
    long_side = max(h, w)
    if long_side == target_long_side:
        return img
    scale = target_long_side / long_side
    if h >= w:
        new_h = target_long_side
        new_w = math.floor(w * scale + 0.5)
    else:
        new_w = target_long_side
        new_h = math.floor(h * scale + 0.5)
    if min(new_h, new_w) < 3:
        raise ImageError("image too small")
    return GrayImage(np.clip(bilinear_resize(img.data, new_h, new_w), 0.0, 1.0))


def clarity(img: GrayImage) -> float:
    """Population variance of the 3x3 Laplacian response on interior pixels.

    Kernel [[0,1,0],[1,-4,1],[0,1,0]]; no boundary padding. The caller is
    expected to scale-normalize first.
    """
    d = img.data
    lap = (
        d[:-2, 1:-1] + d[2:, 1:-1] + d[1:-1, :-2] + d[1:-1, 2:]
        - 4.0 * d[1:-1, 1:-1]
    )
    return float(np.var(lap))


def entropy(img: GrayImage) -> float:
    """Shannon entropy (bits) of the 256-bin intensity histogram."""
    bins = np.floor(img.data * 255.999).astype(np.int64)
    counts = np.bincount(bins.ravel(), minlength=256)
    p = counts[counts > 0] / bins.size
    return float(max(0.0, -np.sum(p * np.log2(p))))


def luminance(img: RgbImage) -> float:
    """Mean of the HSV V channel, i.e. mean over pixels of max(r, g, b)."""
    return float(img.data.max(axis=2).mean())


def label_sample(
    rgb: RgbImage,
    aes_scorer: ScorerHandle,
    wat_scorer: ScorerHandle,
    target_long_side: int = 512,
    sample_id: Optional[str] = None,
) -> QualityVector:
    """Compute the full five-score label for one image.

    Clarity and entropy are computed on the scale-normalized BT.601
    grayscale; luminance on the original RGB pixels.
    """
    gray = scale_normalize(to_gray(rgb), target_long_side)
    s_aes = aes_scorer.score(rgb, sample_id)
    if not 0.0 <= s_aes <= 10.0:
        raise ValueError(f"scorer {aes_scorer.name!r} returned {s_aes}, outside [0, 10]")
    s_wat = wat_scorer.score(rgb, sample_id)
    if not 0.0 <= s_wat <= 1.0:
        raise ValueError(f"scorer {wat_scorer.name!r} returned {s_wat}, outside [0, 1]")
    return QualityVector(
        aes=s_aes,
        wat=s_wat,
        cla=clarity(gray),
        ent=entropy(gray),
        luma=luminance(rgb),
    )


# --- stub scorers ----------------------------------------------------------
#
# Stand-ins for the neural aesthetic / watermark predictors: a deterministic
# heuristic pair for pipeline tests, and a sidecar-file scorer that looks up
# precomputed scores by sample id.

def _heuristic_aes(img: RgbImage, _sid=None) -> float:
    # Composition proxy: dominant gradient orientation mapped onto [0, 10].
    # Deliberately scale-invariant so the score stays independent of overall
    # contrast/spread, which the entropy signal already covers.
    g = to_gray(img).data
    gy = float(np.diff(g, axis=0).mean())
    gx = float(np.diff(g, axis=1).mean())
    return 10.0 * (math.atan2(gy, gx) + math.pi) / (2.0 * math.pi)


def _corner_tag_wat(img: RgbImage, _sid=None) -> float:
    # Watermark proxy: a solid near-white tag in the top-left corner scores
    # 1; anything dimmer or textured falls off steeply, so the score stays
    # independent of ordinary image content.
    patch = img.data[:3, :3].max(axis=2)
    return float(np.clip(1.0 - 20.0 * (1.0 - patch.min()), 0.0, 1.0))


def heuristic_aes_scorer() -> ScorerHandle:
    return ScorerHandle("heuristic-aes", _heuristic_aes)


def corner_tag_wat_scorer() -> ScorerHandle:
    return ScorerHandle("corner-tag-wat", _corner_tag_wat)


def sidecar_scorer(name: str, path) -> ScorerHandle:
    """Scorer reading precomputed scores keyed by sample id from a JSON file."""
    with open(path, "r", encoding="utf-8") as fh:
        table = {str(k): float(v) for k, v in json.load(fh).items()}

    def fn(_img: RgbImage, sample_id: Optional[str]) -> float:
        if sample_id is None or sample_id not in table:
            raise KeyError(f"scorer {name!r}: no sidecar score for id {sample_id!r}")
        return table[sample_id]

    return ScorerHandle(name, fn)
