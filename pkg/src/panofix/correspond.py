"""Feature detection, binary-descriptor matching, and match CSV ingestion.

The detector contract is "repeatable multi-scale keypoints with a
rotation-normalized binary descriptor"; ORB (OpenCV) fulfills it.  Matching
is mutual nearest neighbor with a Lowe ratio test on Hamming distance.
"""

from __future__ import annotations

from dataclasses import dataclass

import cv2
import numpy as np

from panofix.errors import ValidationError
from panofix.imgcore import to_uint8

DEFAULT_RATIO = 0.7
DEFAULT_MAX_POINTS = 4000


@dataclass
class Keypoints:
    """Detected keypoints plus their binary descriptors."""

    positions: np.ndarray  # (N, 2) subpixel x, y
    scales: np.ndarray  # (N,)
    orientations: np.ndarray  # (N,) radians
    descriptors: np.ndarray  # (N, D) uint8

    def __len__(self):
        return len(self.positions)


def _to_gray_u8(img: np.ndarray) -> np.ndarray:
    arr = to_uint8(img) if img.dtype != np.uint8 else img
    if arr.ndim == 3:
        arr = cv2.cvtColor(arr, cv2.COLOR_RGB2GRAY)
    return arr


def detect_and_describe(img: np.ndarray, max_points: int = DEFAULT_MAX_POINTS,
                        mask: np.ndarray | None = None) -> Keypoints:
    """Detect keypoints sorted by response strength, strongest first.

    mask (bool, optional) restricts detection; it is eroded a few pixels so
    keypoints do not sit on artificial mask boundaries.  A featureless image
    yields an empty result, not an error.
    """
    gray = _to_gray_u8(img)
    det = cv2.ORB_create(nfeatures=max(max_points, 1))
    cv_mask = None
    if mask is not None:
        cv_mask = np.where(mask, 255, 0).astype(np.uint8)
        cv_mask = cv2.erode(cv_mask, np.ones((9, 9), np.uint8))
    kps, desc = det.detectAndCompute(gray, cv_mask)
    if not kps:
        return Keypoints(
            positions=np.zeros((0, 2)), scales=np.zeros(0),
            orientations=np.zeros(0), descriptors=np.zeros((0, 32), dtype=np.uint8),
        )
    # stable ordering: response desc, then position as tie-break
    order = sorted(
        range(len(kps)),
        key=lambda i: (-kps[i].response, kps[i].pt[1], kps[i].pt[0], kps[i].size),
    )[:max_points]
    return Keypoints(
        positions=np.array([kps[i].pt for i in order], dtype=np.float64),
        scales=np.array([kps[i].size for i in order], dtype=np.float64),
        orientations=np.array([np.deg2rad(kps[i].angle) for i in order], dtype=np.float64),
        descriptors=desc[order].astype(np.uint8),
    )


def _hamming_nn2(a: np.ndarray, b: np.ndarray):
    """Per-row best and second-best Hamming neighbors of a in b.

    Returns (best_idx, best_dist, second_dist); second_dist is inf when b
    has a single descriptor.
    """
    dist, idx = cv2.batchDistance(
        a, b, cv2.CV_32S, K=min(2, len(b)), normType=cv2.NORM_HAMMING,
    )
    best_idx = idx[:, 0].astype(np.int64)
    best = dist[:, 0].astype(np.float64)
    second = dist[:, 1].astype(np.float64) if dist.shape[1] > 1 else np.full(len(a), np.inf)
    return best_idx, best, second


def match(a: Keypoints, b: Keypoints, ratio: float = DEFAULT_RATIO):
    """Mutual-nearest matches passing the ratio test.

    Returns (pa, pb, scores): matched positions in a and b plus a score in
    (0, 1] that grows as the descriptor distance shrinks.
    """
    if len(a) == 0 or len(b) == 0:
        return np.zeros((0, 2)), np.zeros((0, 2)), np.zeros(0)
    if a.descriptors.shape[1] != b.descriptors.shape[1]:
        raise ValidationError(
            f"descriptor length mismatch: {a.descriptors.shape[1]} vs {b.descriptors.shape[1]}"
        )
    nn_ab, best, second_a = _hamming_nn2(a.descriptors, b.descriptors)
    nn_ba, _, second_b = _hamming_nn2(b.descriptors, a.descriptors)
    idx_a = np.arange(len(a))
    mutual = nn_ba[nn_ab] == idx_a

    # ratio test on both sides so match(a, b) mirrors match(b, a)
    ratio_ok = best < ratio * np.maximum(second_a, 1e-9)
    ratio_ok &= best < ratio * np.maximum(second_b[nn_ab], 1e-9)

    keep = mutual & ratio_ok
    pa = a.positions[keep]
    pb = b.positions[nn_ab[keep]]
    nbits = a.descriptors.shape[1] * 8
    scores = 1.0 - best[keep] / nbits
    return pa, pb, scores


def make_matcher(max_points: int = DEFAULT_MAX_POINTS, ratio: float = DEFAULT_RATIO):
    """Bind detection + matching into a (img_a, img_b[, mask_a]) callable."""

    def matcher(img_a, img_b, mask_a=None, mask_b=None):
        ka = detect_and_describe(img_a, max_points, mask=mask_a)
        kb = detect_and_describe(img_b, max_points, mask=mask_b)
        pa, pb, _ = match(ka, kb, ratio)
        return pa, pb

    return matcher


def load_matches(path, shape_a=None, shape_b=None):
    """Load a matches CSV with header xa,ya,xb,yb[,score].

    shape_a / shape_b are optional (H, W) bounds; rows falling outside are
    rejected with their line number.  Returns (pa, pb, scores).
    """
    pa, pb, scores = [], [], []
    with open(path, newline="") as fh:
        header = fh.readline().strip().lower().replace(" ", "")
        cols = header.split(",")
        if cols[:4] != ["xa", "ya", "xb", "yb"] or len(cols) > 5 or (
            len(cols) == 5 and cols[4] != "score"
        ):
            raise ValidationError(f"{path}: bad header {header!r}, want xa,ya,xb,yb[,score]")
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) not in (4, 5):
                raise ValidationError(f"{path}: line {lineno}: expected 4 or 5 fields")
            try:
                vals = [float(p) for p in parts]
            except ValueError as exc:
                raise ValidationError(f"{path}: line {lineno}: {exc}") from exc
            xa, ya, xb, yb = vals[:4]
            sc = vals[4] if len(vals) == 5 else 1.0
            for (x, y, shape, name) in ((xa, ya, shape_a, "a"), (xb, yb, shape_b, "b")):
                if shape is not None:
                    hh, ww = shape[:2]
                    if not (0 <= x <= ww - 1 and 0 <= y <= hh - 1):
                        raise ValidationError(
                            f"{path}: line {lineno}: point ({x}, {y}) outside image {name}"
                        )
                elif x < 0 or y < 0:
                    raise ValidationError(
                        f"{path}: line {lineno}: negative coordinate in image {name}"
                    )
            if sc < 0:
                raise ValidationError(f"{path}: line {lineno}: negative score")
            pa.append((xa, ya))
            pb.append((xb, yb))
            scores.append(sc)
    return (
        np.array(pa, dtype=np.float64).reshape(-1, 2),
        np.array(pb, dtype=np.float64).reshape(-1, 2),
        np.array(scores, dtype=np.float64),
    )
