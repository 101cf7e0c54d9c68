"""Corpus manifest construction, threshold filtering, and score statistics.

The manifest is a JSONL file binding each sample (image path + class label)
to its five quality scores. Filtering reproduces the classic filter-first
protocol: keep a record only if every score passes its threshold.
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .images import ImageError, load_png
from .signals import ATTRIBUTES, QualityVector, ScorerHandle, label_sample

log = logging.getLogger(__name__)

MANIFEST_FIELDS = ("id", "image_ref", "class_label", "s_aes", "s_wat", "s_cla", "s_ent", "s_luma")

# Attribute ranges used for histogram binning (clarity capped at its clip value).
HIST_RANGES = {
    "aes": (0.0, 10.0),
    "wat": (0.0, 1.0),
    "cla": (0.0, 3000.0),
    "ent": (0.0, 8.0),
    "luma": (0.0, 1.0),
}


@dataclass(frozen=True)
class SampleRecord:
    id: str
    image_ref: str
    class_label: int
    quality: QualityVector


@dataclass(frozen=True)
class Manifest:
    records: Tuple[SampleRecord, ...]
    provenance: str = ""

    def __len__(self) -> int:
        return len(self.records)


@dataclass(frozen=True)
class FilterThresholds:
    aes_min: float
    wat_max: float
    cla_min: float
    ent_min: float
    luma_min: float
    luma_max: float

    def __post_init__(self):
        if not self.luma_min < self.luma_max:
            raise ValueError("luma_min must be < luma_max")

    def keeps(self, q: QualityVector) -> bool:
        return (
            q.aes >= self.aes_min
            and q.wat <= self.wat_max
            and q.cla >= self.cla_min
            and q.ent >= self.ent_min
            and self.luma_min <= q.luma <= self.luma_max
        )


# Threshold presets for the standard retention-ratio sweep. The watermark
# column is an upper bound on watermark probability: looser bound, larger
# retained fraction.
FILTER_PRESETS: Dict[str, FilterThresholds] = {
    "ratio5": FilterThresholds(5.0, 0.3, 800.0, 6.0, 0.1, 0.9),
    "ratio30": FilterThresholds(4.0, 0.5, 600.0, 4.0, 0.1, 0.9),
    "ratio50": FilterThresholds(3.5, 0.6, 500.0, 3.0, 0.1, 0.9),
    "ratio65": FilterThresholds(3.0, 0.7, 400.0, 2.0, 0.1, 0.9),
    "ratio80": FilterThresholds(3.0, 0.8, 200.0, 2.0, 0.1, 0.9),
}


def config_digest(config: dict) -> str:
    return hashlib.sha256(
        json.dumps(config, sort_keys=True, separators=(",", ":")).encode()
    ).hexdigest()


def build_manifest(
    entries: Sequence[Tuple[str, str, int]],
    aes_scorer: ScorerHandle,
    wat_scorer: ScorerHandle,
    target_long_side: int = 512,
    workers: int = 1,
    provenance: str = "",
) -> Manifest:
    """Label every (id, image_path, class_label) entry into a manifest.

    Undecodable images are skipped with a logged reason; duplicate ids are a
    hard error. Output ordering is canonical (sorted by id) so the result is
    independent of worker count and input order.
    """
    ids = [e[0] for e in entries]
    if len(set(ids)) != len(ids):
        dupes = sorted({i for i in ids if ids.count(i) > 1})
        raise ValueError(f"duplicate sample ids: {dupes}")

    def one(entry) -> Optional[SampleRecord]:
        sid, path, label = entry
        try:
            img = load_png(path)
            q = label_sample(img, aes_scorer, wat_scorer, target_long_side, sample_id=sid)
        except (ImageError, ValueError, KeyError) as exc:
            log.warning("skipping %s: %s", sid, exc)
            return None
        return SampleRecord(sid, str(path), int(label), q)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, entries))
    else:
        results = [one(e) for e in entries]
    records = sorted((r for r in results if r is not None), key=lambda r: r.id)
    return Manifest(tuple(records), provenance)


def apply_filter(manifest: Manifest, t: FilterThresholds) -> Manifest:
    """Keep only records passing every threshold; order preserved."""
    kept = tuple(r for r in manifest.records if t.keeps(r.quality))
    return Manifest(kept, manifest.provenance)


def score_histograms(manifest: Manifest, bins: int = 20) -> List[dict]:
    """Per-attribute histograms over the declared score ranges.

    Returns rows {attribute, bin_lo, bin_hi, count, proportion}; proportions
    are zero for an empty manifest.
    """
    if bins < 1:
        raise ValueError("bins must be >= 1")
    n = len(manifest.records)
    rows = []
    for attr in ATTRIBUTES:
        lo, hi = HIST_RANGES[attr]
        values = np.array(
            [min(getattr(r.quality, attr), hi) for r in manifest.records]
        )
        edges = np.linspace(lo, hi, bins + 1)
        counts, _ = (
            np.histogram(values, bins=edges) if n else (np.zeros(bins, dtype=int), edges)
        )
        for b in range(bins):
            rows.append(
                {
                    "attribute": attr,
                    "bin_lo": float(edges[b]),
                    "bin_hi": float(edges[b + 1]),
                    "count": int(counts[b]),
                    "proportion": counts[b] / n if n else 0.0,
                }
            )
    return rows


def write_histogram_csv(rows: List[dict], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(
            fh, fieldnames=["attribute", "bin_lo", "bin_hi", "count", "proportion"]
        )
        writer.writeheader()
        writer.writerows(rows)


# --- manifest serialization ------------------------------------------------


def _fmt(v: float) -> float:
    # 9 significant digits, round-tripped so json emits the short form.
    return float(f"{v:.9g}")


def record_to_json(r: SampleRecord) -> str:
    obj = {
        "id": r.id,
        "image_ref": r.image_ref,
        "class_label": r.class_label,
        "s_aes": _fmt(r.quality.aes),
        "s_wat": _fmt(r.quality.wat),
        "s_cla": _fmt(r.quality.cla),
        "s_ent": _fmt(r.quality.ent),
        "s_luma": _fmt(r.quality.luma),
    }
    return json.dumps(obj, separators=(", ", ": "))


def save_manifest(manifest: Manifest, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in manifest.records:
            fh.write(record_to_json(r) + "\n")


def load_manifest(path, provenance: str = "") -> Manifest:
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            records.append(
                SampleRecord(
                    id=str(obj["id"]),
                    image_ref=str(obj["image_ref"]),
                    class_label=int(obj["class_label"]),
                    quality=QualityVector(
                        aes=obj["s_aes"],
                        wat=obj["s_wat"],
                        cla=obj["s_cla"],
                        ent=obj["s_ent"],
                        luma=obj["s_luma"],
                    ),
                )
            )
    ids = [r.id for r in records]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate ids in manifest")
    return Manifest(tuple(records), provenance)


def median_quality(manifest: Manifest) -> QualityVector:
    """Attribute-wise median of the manifest's scores (neutral operating point)."""
    if not manifest.records:
        raise ValueError("empty manifest")
    arr = np.stack([r.quality.as_array() for r in manifest.records])
    return QualityVector.from_array(np.median(arr, axis=0))
