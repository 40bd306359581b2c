"""Synthetic evaluation harness: relit test cases with known ground truth.

A case takes a base equirect image plus its label map, applies per-category
tone curves and a synthetic replacement sky to produce the "current" scene,
and derives the phone panorama from it through the inverse of a known
scale/translation transform with a limited coverage window.  Running the
pipeline on (stale base, derived panorama) should reproduce the current
scene, so errors are measurable.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from panofix.align import SimilarityTransform2D
from panofix.imgcore import sample_bilinear
from panofix.segment import UNLABELED, LabelMap


@dataclass
class SyntheticSpec:
    """Recipe for one synthetic case.

    tone_curves: category name -> (gain, bias) applied to unit floats.
    sky: (top_color, horizon_color) for a vertical gradient, or None.
    coverage: (x0, x1, y0, y1) window in panorama columns/rows; x may wrap
    when x0 > x1.
    transform: true panorama -> pre-captured mapping.
    """

    tone_curves: dict = field(default_factory=dict)
    sky: tuple | None = ((0.45, 0.62, 0.92), (0.80, 0.88, 0.98))
    coverage: tuple | None = None
    transform: SimilarityTransform2D = field(default_factory=SimilarityTransform2D.identity)
    seed: int = 0
    noise: float = 0.0


@dataclass
class SyntheticCase:
    precap: np.ndarray
    pre_labels: LabelMap
    panorama: np.ndarray
    cover: np.ndarray
    gen_labels: LabelMap
    ground_truth: np.ndarray
    transform: SimilarityTransform2D


def _paint_sky(img, sky_mask, top_color, horizon_color):
    out = img.copy()
    if not sky_mask.any():
        return out
    h = img.shape[0]
    rows = np.nonzero(sky_mask.any(axis=1))[0]
    lo, hi = rows.min(), rows.max()
    t = (np.arange(h) - lo) / max(hi - lo, 1)
    t = np.clip(t, 0.0, 1.0)[:, None]
    grad = (1.0 - t) * np.asarray(top_color) + t * np.asarray(horizon_color)
    grad_img = np.broadcast_to(grad[:, None, :], img.shape)
    out[sky_mask] = grad_img[sky_mask].astype(np.float32)
    return out


def make_synthetic_case(base: np.ndarray, labels: LabelMap,
                        spec: SyntheticSpec) -> SyntheticCase:
    """Build (precap, panorama, gen labels, ground truth) from one base image."""
    if base.shape[:2] != labels.shape:
        raise ValueError("base image and labels must share dimensions")
    h, w = base.shape[:2]
    rng = np.random.default_rng(spec.seed)

    current = np.asarray(base, dtype=np.float32).copy()
    for name, (gain, bias) in spec.tone_curves.items():
        cid = labels.id_of(name)
        if cid is None:
            continue
        mask = labels.ids == cid
        current[mask] = np.clip(current[mask] * gain + bias, 0.0, 1.0)
    sky_id = labels.id_of("sky")
    if spec.sky is not None and sky_id is not None:
        current = _paint_sky(current, labels.ids == sky_id, *spec.sky)

    # panorama = current scene pulled back through the inverse transform
    t = spec.transform
    xx, yy = np.meshgrid(np.arange(w, dtype=np.float64),
                         np.arange(h, dtype=np.float64))
    sx_map, sy_map = t.apply(xx, yy, w=w)
    pano = sample_bilinear(current, sx_map, sy_map, wrap_x=True).astype(np.float32)
    if spec.noise > 0:
        pano = np.clip(pano + rng.normal(0.0, spec.noise, pano.shape), 0.0, 1.0)
        pano = pano.astype(np.float32)

    gi = np.clip(np.round(sy_map).astype(np.int64), 0, h - 1)
    gj = np.mod(np.round(sx_map).astype(np.int64), w)
    gen_ids = labels.ids[gi, gj]

    cover = np.ones((h, w), dtype=bool)
    if spec.coverage is not None:
        x0, x1, y0, y1 = spec.coverage
        cover[:] = False
        cols = np.arange(w)
        in_x = (cols >= x0) & (cols <= x1) if x0 <= x1 else (cols >= x0) | (cols <= x1)
        cover[y0:y1 + 1, in_x] = True
    gen_ids = np.where(cover, gen_ids, UNLABELED).astype(np.uint8)
    pano = np.where(cover[..., None] if pano.ndim == 3 else cover, pano, 0.0)
    pano = pano.astype(np.float32)

    return SyntheticCase(
        precap=np.asarray(base, dtype=np.float32).copy(),
        pre_labels=labels,
        panorama=pano,
        cover=cover,
        gen_labels=LabelMap(gen_ids, dict(labels.palette)),
        ground_truth=current,
        transform=t,
    )


def score(result: np.ndarray, ground_truth: np.ndarray, labels: LabelMap,
          uncorrected: np.ndarray | None = None, category_names=None) -> dict:
    """Per-category error metrics against the ground truth.

    Returns a dict with per-category mean abs error and CDF L-infinity
    distance, the sky-region error, and (when uncorrected is given) the
    improvement ratio 1 - median_err(result)/median_err(uncorrected) over
    non-sky labeled pixels.
    """
    if result.shape != ground_truth.shape:
        raise ValueError("result and ground truth dimensions differ")
    if result.shape[:2] != labels.shape:
        raise ValueError("labels dimensions differ from images")

    res = np.asarray(result, dtype=np.float64)
    gt = np.asarray(ground_truth, dtype=np.float64)
    err = np.abs(res - gt)
    per_pixel = err.mean(axis=-1) if err.ndim == 3 else err

    metrics = {"categories": {}}
    sky_id = labels.id_of("sky")
    names = category_names or [n for _, n in sorted(labels.palette.items())]
    for name in names:
        cid = labels.id_of(name)
        if cid is None:
            continue
        mask = labels.ids == cid
        if not mask.any():
            continue
        metrics["categories"][name] = {
            "mae": float(per_pixel[mask].mean()),
            "cdf_linf": _cdf_linf(res, gt, mask),
        }
    if sky_id is not None and (labels.ids == sky_id).any():
        metrics["sky_mae"] = float(per_pixel[labels.ids == sky_id].mean())

    nonsky = (labels.ids != UNLABELED)
    if sky_id is not None:
        nonsky &= labels.ids != sky_id
    metrics["nonsky_median_err"] = float(np.median(per_pixel[nonsky])) if nonsky.any() else 0.0
    if uncorrected is not None and nonsky.any():
        unc = np.abs(np.asarray(uncorrected, dtype=np.float64) - gt)
        unc_pp = unc.mean(axis=-1) if unc.ndim == 3 else unc
        base_med = float(np.median(unc_pp[nonsky]))
        if base_med > 0:
            metrics["improvement_ratio"] = 1.0 - metrics["nonsky_median_err"] / base_med
        else:
            metrics["improvement_ratio"] = 0.0
    return metrics


def _cdf_linf(a: np.ndarray, b: np.ndarray, mask: np.ndarray) -> float:
    """Max over channels of the Kolmogorov distance between masked CDFs."""
    qa = np.clip(np.floor(a * 255.0 + 0.5), 0, 255).astype(np.int64)
    qb = np.clip(np.floor(b * 255.0 + 0.5), 0, 255).astype(np.int64)
    worst = 0.0
    channels = a.shape[2] if a.ndim == 3 else 1
    for c in range(channels):
        va = (qa[..., c] if a.ndim == 3 else qa)[mask]
        vb = (qb[..., c] if b.ndim == 3 else qb)[mask]
        ca = np.cumsum(np.bincount(va, minlength=256)) / va.size
        cb = np.cumsum(np.bincount(vb, minlength=256)) / vb.size
        worst = max(worst, float(np.max(np.abs(ca - cb))))
    return worst
