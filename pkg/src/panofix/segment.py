"""Label-map ingestion, category selection, masks, and a sky-only fallback.

Semantic segmentation itself is external: label maps arrive as id PNGs with
a text palette ("id,name" per line).  Categories are matched across the two
images by palette name, never by raw id.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from panofix.errors import SegmentationError, ValidationError
from panofix.imgcore import read_ids

UNLABELED = 255
SKY_NAME = "sky"


@dataclass
class LabelMap:
    ids: np.ndarray  # (H, W) uint8, 255 = unlabeled
    palette: dict  # id -> category name

    def __post_init__(self):
        present = set(np.unique(self.ids).tolist()) - {UNLABELED}
        orphans = sorted(present - set(self.palette))
        if orphans:
            raise SegmentationError(f"label ids without palette entry: {orphans}")

    @property
    def shape(self):
        return self.ids.shape

    def id_of(self, name):
        for i, n in self.palette.items():
            if n == name:
                return i
        return None

    def resized_to(self, shape) -> "LabelMap":
        """Nearest-neighbor rescale to (H, W); identity when already matching."""
        if self.ids.shape == tuple(shape):
            return self
        h, w = shape
        sh, sw = self.ids.shape
        ri = np.clip(np.round(np.arange(h) * sh / h).astype(int), 0, sh - 1)
        rj = np.clip(np.round(np.arange(w) * sw / w).astype(int), 0, sw - 1)
        return LabelMap(self.ids[np.ix_(ri, rj)], dict(self.palette))


@dataclass
class CategorySelection:
    """Sky plus at most four further ids, ordered by pixel count."""

    sky_id: int
    kept_ids: list = field(default_factory=list)

    def __post_init__(self):
        if self.sky_id in self.kept_ids:
            raise ValueError("sky id cannot appear in kept_ids")
        if len(self.kept_ids) != len(set(self.kept_ids)):
            raise ValueError("kept_ids must be distinct")


def load_palette(path) -> dict:
    palette = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split(",", 1)
            if len(parts) != 2:
                raise ValidationError(f"{path}: line {lineno}: expected 'id,name'")
            try:
                cid = int(parts[0])
            except ValueError as exc:
                raise ValidationError(f"{path}: line {lineno}: bad id {parts[0]!r}") from exc
            if not 0 <= cid <= 254:
                raise ValidationError(f"{path}: line {lineno}: id {cid} out of range 0..254")
            palette[cid] = parts[1].strip()
    return palette


def load_labels(path, palette_path) -> LabelMap:
    """Read an id PNG plus its palette file into a validated LabelMap."""
    return LabelMap(read_ids(path), load_palette(palette_path))


def select_categories(gen_labels: LabelMap, gen_cover: np.ndarray) -> CategorySelection:
    """Sky plus the four most frequent non-sky categories among covered pixels.

    Count ties break toward the smaller id.  Fewer than four available keeps
    them all.
    """
    sky_id = gen_labels.id_of(SKY_NAME)
    if sky_id is None:
        raise SegmentationError("no 'sky' category in palette; sky path cannot run")
    ids = gen_labels.ids[gen_cover]
    counts = np.bincount(ids, minlength=256)
    candidates = [
        (int(-counts[i]), i) for i in sorted(gen_labels.palette)
        if i != sky_id and counts[i] > 0
    ]
    candidates.sort()
    return CategorySelection(sky_id=sky_id, kept_ids=[i for _, i in candidates[:4]])


def category_mask(labels: LabelMap, cid, extra_cover=None) -> np.ndarray:
    """Pixels of a category, optionally intersected with a coverage mask."""
    mask = labels.ids == cid
    if extra_cover is not None:
        mask = mask & extra_cover
    return mask


def erode_mask(mask: np.ndarray, px: int = 1) -> np.ndarray:
    """Shrink a mask to keep boundary-mixed pixels out of histograms."""
    if px <= 0 or not mask.any():
        return mask
    return ndimage.binary_erosion(mask, iterations=px, border_value=1)


def match_categories_by_name(pre: LabelMap, gen: LabelMap, selection: CategorySelection):
    """Pair kept categories across the two maps by palette name.

    Returns (pairs, unmatched_names): pairs is a list of
    (name, pre_id, gen_id); kept categories missing in the pre-captured
    palette land in unmatched_names and fall back to the residual region.
    """
    pairs = []
    unmatched = []
    for gid in selection.kept_ids:
        name = gen.palette[gid]
        pid = pre.id_of(name)
        if pid is None:
            unmatched.append(name)
        else:
            pairs.append((name, pid, gid))
    return pairs, unmatched


def fallback_sky_segment(img: np.ndarray) -> LabelMap:
    """Heuristic sky/other split for running without an external segmenter.

    Each column is scanned from the top row; pixels stay sky while they are
    blue-dominant or bright and low-saturation, and while the vertical
    change is small.  The first failure ends sky for that column.
    """
    h, w = img.shape[:2]
    if img.ndim == 3:
        r, g, b = img[..., 0], img[..., 1], img[..., 2]
        mx = np.maximum(np.maximum(r, g), b)
        mn = np.minimum(np.minimum(r, g), b)
        sat = np.where(mx > 1e-6, (mx - mn) / np.maximum(mx, 1e-6), 0.0)
        blue_dom = (b >= r) & (b >= g) & (b > 0.25)
        flat_bright = (sat < 0.15) & (mx > 0.55)
        skyish = blue_dom | flat_bright
        lum = 0.299 * r + 0.587 * g + 0.114 * b
    else:
        lum = img
        skyish = img > 0.55
    grad = np.abs(np.diff(lum, axis=0, prepend=lum[:1]))
    smooth = grad < 0.08
    ok = skyish & smooth
    # single connected run per column starting at the top
    run = np.cumprod(ok, axis=0).astype(bool)
    ids = np.where(run, 0, 1).astype(np.uint8)
    return LabelMap(ids, {0: SKY_NAME, 1: "other"})
