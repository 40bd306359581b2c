"""End-to-end orchestration of the correction pipeline.

Stage order: ingest/stitch panorama -> match + iterative alignment ->
segmentation ingest -> per-category intensity correction -> sky copy ->
sky repair.  Intermediate artifacts are numbered by the corresponding
processing step (2..7) when dumping is enabled.
"""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from panofix import align, correspond, segment, sky, stitch, tone
from panofix.errors import (
    PanofixError,
    SegmentationError,
    StageError,
    ValidationError,
)
from panofix.imgcore import (
    check_equirect,
    read_image,
    read_mask,
    write_image,
    write_mask,
)

log = logging.getLogger(__name__)


@dataclass
class PipelineConfig:
    precap: str = ""
    panorama: str | None = None
    frames_dir: str | None = None
    h_fov_deg: float = 110.0
    cover: str | None = None
    labels_pre: str | None = None
    labels_gen: str | None = None
    palette: str | None = None
    matches: str | None = None
    transform: str = "similarity"  # similarity | affine | homography
    ransac_iters: int = 2000
    inlier_px: float = 3.0
    rounds: int = 3
    eps: float = 0.5
    zenith_fov_deg: float = 150.0
    patch_size: int = 9
    max_points: int = 4000
    ratio: float = 0.7
    feather: bool = False
    membrane: bool = False
    uniform_scale: bool = False
    fallback_sky: bool = False
    skip_sky: bool = False
    out_dir: str = "out"
    dump: bool = False
    seed: int = 42

    def validate(self):
        if not self.precap:
            raise ValidationError("--precap is required")
        if (self.panorama is None) == (self.frames_dir is None):
            raise ValidationError("give exactly one of --panorama or --frames")
        for name in ("precap", "panorama", "frames_dir", "cover", "labels_pre",
                     "labels_gen", "palette", "matches"):
            value = getattr(self, name)
            if value is not None and value != "" and not Path(value).exists():
                raise ValidationError(f"{name}: path does not exist: {value}")
        if self.transform not in ("similarity", "affine", "homography"):
            raise ValidationError(f"unknown transform kind {self.transform!r}")
        if not self.fallback_sky:
            missing = [n for n in ("labels_pre", "labels_gen", "palette")
                       if getattr(self, n) is None]
            if missing:
                raise ValidationError(
                    f"label inputs required without --fallback-sky: {missing}")
        if self.rounds < 1:
            raise ValidationError("rounds must be >= 1")


@dataclass
class RunReport:
    timings: dict = field(default_factory=dict)
    match_counts: dict = field(default_factory=dict)
    inlier_counts: dict = field(default_factory=dict)
    transform: dict = field(default_factory=dict)
    cdf_distances: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)

    def to_text(self) -> str:
        lines = ["panofix run report", "==================", ""]
        lines.append("stage timings (s):")
        for k, v in self.timings.items():
            lines.append(f"  {k}: {_sig(v)}")
        lines.append("")
        if self.match_counts:
            lines.append("matches / inliers:")
            for k in self.match_counts:
                inl = self.inlier_counts.get(k, "-")
                lines.append(f"  {k}: {self.match_counts[k]} matches, {inl} inliers")
            lines.append("")
        if self.transform:
            lines.append("composed transform:")
            for k, v in self.transform.items():
                lines.append(f"  {k}: {_sig(v)}")
            lines.append("")
        if self.cdf_distances:
            lines.append("per-category CDF L-inf distance (before -> after):")
            for name, (before, after) in self.cdf_distances.items():
                lines.append(f"  {name}: {_sig(before)} -> {_sig(after)}")
            lines.append("")
        lines.append(f"warnings ({len(self.warnings)}):")
        for wmsg in self.warnings:
            lines.append(f"  - {wmsg}")
        return "\n".join(lines) + "\n"

    def to_kv(self) -> str:
        flat = {}
        for k, v in self.timings.items():
            flat[f"timing.{k}"] = _sig(v)
        for k, v in self.match_counts.items():
            flat[f"matches.{k}"] = v
        for k, v in self.inlier_counts.items():
            flat[f"inliers.{k}"] = v
        for k, v in self.transform.items():
            flat[f"transform.{k}"] = _sig(v)
        for name, (before, after) in self.cdf_distances.items():
            flat[f"cdf.{name}.before"] = _sig(before)
            flat[f"cdf.{name}.after"] = _sig(after)
        flat["warnings"] = len(self.warnings)
        return "\n".join(f"{k}={v}" for k, v in flat.items()) + "\n"


def _sig(v, digits=6):
    if isinstance(v, float):
        return float(f"{v:.{digits}g}")
    return v


class _Stage:
    """Context manager: times a stage and wraps its errors with the name."""

    def __init__(self, report, name):
        self.report = report
        self.name = name

    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc, tb):
        self.report.timings[self.name] = time.perf_counter() - self.t0
        if exc is not None and isinstance(exc, PanofixError) and not isinstance(
                exc, (StageError, ValidationError)):
            raise StageError(self.name, exc) from exc
        return False


def run(config: PipelineConfig):
    """Execute the full correction; returns (corrected image, report).

    Category and sky degradations downgrade to warnings; hard stage errors
    raise StageError carrying the stage name.
    """
    config.validate()
    report = RunReport()
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    precap = read_image(config.precap)
    check_equirect(precap)
    h, w = precap.shape[:2]

    # (2) panorama: stitch frames or ingest a pre-stitched equirect
    with _Stage(report, "stitch"):
        if config.panorama is not None:
            pano = read_image(config.panorama)
            if config.cover:
                cover = read_mask(config.cover)
                if cover.shape != pano.shape[:2]:
                    raise ValidationError("coverage mask size differs from panorama")
            else:
                cover = np.ones(pano.shape[:2], dtype=bool)
        else:
            frame_paths = sorted(Path(config.frames_dir).glob("*.png"))
            if len(frame_paths) < 2:
                raise ValidationError("frames dir must contain >= 2 PNG frames")
            fs = stitch.FrameSet([read_image(p) for p in frame_paths],
                                 math.radians(config.h_fov_deg))
            matcher = correspond.make_matcher(config.max_points, config.ratio)
            chain = stitch.estimate_rotations(fs, matcher, seed=config.seed)
            pano, cover = stitch.composite_panorama(fs, chain, h,
                                                    feather=config.feather)
    if config.dump:
        write_image(pano, out_dir / "stage2_panorama.png")
        write_mask(cover, out_dir / "stage2_coverage.png")

    # (3) feature matching + iterative alignment
    with _Stage(report, "align"):
        pano_aligned, cover_aligned, composed = _align_stage(
            config, report, pano, cover, precap)
    report.transform = composed.as_dict()
    with open(out_dir / "transform.json", "w") as fh:
        json.dump(composed.as_dict(), fh, indent=2)
    if config.dump:
        write_image(pano_aligned, out_dir / "stage3_aligned.png")
        write_mask(cover_aligned, out_dir / "stage3_coverage.png")

    # (4) segmentation ingest (or heuristic sky fallback)
    with _Stage(report, "segment"):
        pre_labels, gen_labels_warped, selection = _segment_stage(
            config, report, precap, pano, cover, composed, cover_aligned)
    if config.dump and pre_labels is not None:
        from panofix.imgcore import write_ids
        write_ids(pre_labels.ids, out_dir / "stage4_labels_pre.png")
        write_ids(gen_labels_warped.ids, out_dir / "stage4_labels_gen.png")

    # (5) intensity correction for non-sky categories
    with _Stage(report, "intensity"):
        if selection is not None:
            corrected, warns, residual = tone.correct_intensity(
                precap, pre_labels, pano_aligned, gen_labels_warped,
                cover_aligned, selection, membrane=config.membrane,
            )
            report.warnings.extend(warns)
            _collect_cdf_distances(report, precap, corrected, pano_aligned,
                                   pre_labels, gen_labels_warped,
                                   cover_aligned, selection)
        else:
            corrected = precap.copy()
    if config.dump:
        write_image(corrected, out_dir / "stage5_intensity.png")

    # (6)+(7) sky copy and repair
    with _Stage(report, "sky"):
        if config.skip_sky or selection is None:
            result = corrected
            if selection is None:
                report.warnings.append("segmentation unavailable; sky stage skipped")
        else:
            result = _sky_stage(config, report, out_dir, corrected,
                                pano_aligned, cover_aligned,
                                pre_labels, gen_labels_warped)

    write_image(result, out_dir / "stage7_result.png")
    with open(out_dir / "report.txt", "w") as fh:
        fh.write(report.to_text())
    with open(out_dir / "report.kv", "w") as fh:
        fh.write(report.to_kv())
    return result, report


def _align_stage(config, report, pano, cover, precap):
    h, w = precap.shape[:2]
    if config.matches:
        pa, pb, _ = correspond.load_matches(config.matches,
                                            shape_a=pano.shape, shape_b=precap.shape)
        report.match_counts["round1"] = len(pa)
        if config.rounds > 1:
            report.warnings.append(
                "precomputed matches: alignment limited to a single round")
        t, inl = align.fit_scale_translation(
            pa, pb, w, iters=config.ransac_iters, inlier_px=config.inlier_px,
            seed=config.seed, uniform_scale=config.uniform_scale)
        report.inlier_counts["round1"] = int(inl.sum())
        warped, wcover = align.warp_panorama(pano, cover, t, w, h)
        return warped, wcover, t

    if config.transform != "similarity":
        # comparison mode: single-round plain affine/homography fit
        matcher = correspond.make_matcher(config.max_points, config.ratio)
        pa, pb = matcher(pano, precap)
        report.match_counts["round1"] = len(pa)
        t_alt = align.fit_alt(pa, pb, config.transform,
                              iters=config.ransac_iters,
                              inlier_px=config.inlier_px, seed=config.seed)
        warped, wcover = _warp_alt(pano, cover, t_alt, w, h)
        report.warnings.append(
            f"{config.transform} comparison mode: no wraparound handling")
        return warped, wcover, align.SimilarityTransform2D.identity()

    counts = {}
    base_matcher = correspond.make_matcher(config.max_points, config.ratio)

    def matcher(img_a, img_b, mask_a=None):
        pa, pb = base_matcher(img_a, img_b, mask_a=mask_a)
        counts[f"round{len(counts) + 1}"] = len(pa)
        return pa, pb

    warped, wcover, composed = align.iterative_align(
        pano, cover, precap, matcher, rounds=config.rounds, eps=config.eps,
        iters=config.ransac_iters, inlier_px=config.inlier_px,
        seed=config.seed, uniform_scale=config.uniform_scale)
    report.match_counts.update(counts)
    return warped, wcover, composed


def _warp_alt(pano, cover, t_alt, dst_w, dst_h):
    """Reverse-mapped warp for the comparison transforms (no wrap)."""
    from panofix.imgcore import sample_bilinear
    inv = np.linalg.inv(t_alt.matrix)
    xx, yy = np.meshgrid(np.arange(dst_w, dtype=np.float64),
                         np.arange(dst_h, dtype=np.float64))
    ones = np.ones_like(xx)
    pts = np.stack([xx, yy, ones], axis=-1) @ inv.T
    xs = pts[..., 0] / pts[..., 2]
    ys = pts[..., 1] / pts[..., 2]
    h_src, w_src = pano.shape[:2]
    valid = (xs >= 0) & (xs <= w_src - 1) & (ys >= 0) & (ys <= h_src - 1)
    xs_c = np.clip(np.nan_to_num(xs), 0, w_src - 1)
    ys_c = np.clip(np.nan_to_num(ys), 0, h_src - 1)
    ci = np.clip(np.round(ys_c).astype(np.int64), 0, h_src - 1)
    cj = np.clip(np.round(xs_c).astype(np.int64), 0, w_src - 1)
    valid &= cover[ci, cj]
    out = np.zeros((dst_h, dst_w) + pano.shape[2:], dtype=np.float32)
    samples = sample_bilinear(pano, xs_c, ys_c).astype(np.float32)
    out[valid] = samples[valid]
    return out, valid


def _segment_stage(config, report, precap, pano, cover, composed, cover_aligned):
    h, w = precap.shape[:2]
    if config.fallback_sky and config.labels_pre is None:
        pre_labels = segment.fallback_sky_segment(precap)
        gen_labels_pano = segment.fallback_sky_segment(pano)
    else:
        pre_labels = segment.load_labels(config.labels_pre, config.palette)
        gen_labels_pano = segment.load_labels(config.labels_gen, config.palette)
        if pre_labels.shape != precap.shape[:2]:
            report.warnings.append("pre label map rescaled to image size")
            pre_labels = pre_labels.resized_to(precap.shape[:2])
        if gen_labels_pano.shape != pano.shape[:2]:
            report.warnings.append("gen label map rescaled to panorama size")
            gen_labels_pano = gen_labels_pano.resized_to(pano.shape[:2])

    warped_ids, _ = align.warp_labels(gen_labels_pano.ids, cover, composed, w, h)
    warped_ids = np.where(cover_aligned, warped_ids, segment.UNLABELED).astype(np.uint8)
    gen_labels_warped = segment.LabelMap(warped_ids, dict(gen_labels_pano.palette))
    try:
        selection = segment.select_categories(gen_labels_warped, cover_aligned)
    except SegmentationError as exc:
        report.warnings.append(str(exc))
        return pre_labels, gen_labels_warped, None
    return pre_labels, gen_labels_warped, selection


def _collect_cdf_distances(report, precap, corrected, pano_aligned,
                           pre_labels, gen_labels, cover, selection):
    pairs, _ = segment.match_categories_by_name(pre_labels, gen_labels, selection)
    for name, pid, gid in pairs:
        pre_mask = pre_labels.ids == pid
        ref_mask = (gen_labels.ids == gid) & cover
        if not pre_mask.any() or not ref_mask.any():
            continue
        before = _cdf_linf_masks(precap, pre_mask, pano_aligned, ref_mask)
        after = _cdf_linf_masks(corrected, pre_mask, pano_aligned, ref_mask)
        report.cdf_distances[name] = (before, after)


def _cdf_linf_masks(img_a, mask_a, img_b, mask_b):
    ca = tone.cdf(img_a, mask_a)
    cb = tone.cdf(img_b, mask_b)
    return float(np.max(np.abs(ca - cb)))


def _sky_stage(config, report, out_dir, corrected, pano_aligned, cover_aligned,
               pre_labels, gen_labels_warped):
    plan = sky.build_sky_plan(pre_labels, gen_labels_warped, cover_aligned,
                              zenith_fov_deg=config.zenith_fov_deg,
                              pre_shape=corrected.shape[:2])
    if config.dump:
        write_mask(plan.copy_mask, out_dir / "stage6_sky_copy_mask.png")
        write_mask(plan.hole_mask, out_dir / "stage6_sky_hole_mask.png")
    if not plan.copy_mask.any() and not plan.hole_mask.any():
        report.warnings.append("empty sky; sky stage is a no-op")
        return corrected
    result = sky.copy_sky(corrected, pano_aligned, plan)
    if config.feather:
        result = _feather_copy_edge(result, corrected, plan)
    if config.dump:
        write_image(result, out_dir / "stage6_sky_copied.png")
    if plan.hole_mask.any():
        if not plan.copy_mask.any():
            report.warnings.append(
                "panorama covers no sky; inpainting skipped, stale sky kept")
            return result
        params = sky.InpaintParams(patch_size=config.patch_size, seed=config.seed)
        result, _ = sky.repair_sky(result, plan, params)
    return result


def _feather_copy_edge(result, before, plan, width=2):
    """Linear blend over a thin band at the copied-sky boundary."""
    from scipy import ndimage
    inside = ndimage.distance_transform_edt(plan.copy_mask)
    band = plan.copy_mask & (inside <= width)
    if not band.any():
        return result
    alpha = np.clip(inside / float(width + 1), 0.0, 1.0)
    out = result.copy()
    a = alpha[band][:, None] if result.ndim == 3 else alpha[band]
    out[band] = (a * result[band] + (1.0 - a) * before[band]).astype(np.float32)
    return out
