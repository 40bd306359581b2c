"""Sky replacement: copy the current sky, inpaint what the panorama missed.

The uncovered sky is filled by greedy exemplar inpainting (priority =
patch confidence x isophote data term, patches copied verbatim from the
current-sky source).  Because the sky sits in the distorted top of the
equirect frame, the main fill happens in a zenith-facing perspective view;
a second equirect-domain pass catches low-latitude leftovers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import cv2
import numpy as np
from scipy import ndimage

from panofix.errors import InpaintError
from panofix.projection import (
    PerspectiveView,
    extract_perspective,
    insert_perspective,
    zenith_view,
)
from panofix.segment import category_mask


@dataclass
class InpaintParams:
    patch_size: int = 9
    seed: int = 0

    def __post_init__(self):
        if self.patch_size < 3 or self.patch_size % 2 == 0:
            raise ValueError("patch_size must be odd and >= 3")


@dataclass
class SkyPlan:
    """copy_mask: sky pixels the panorama provides; hole_mask: the rest."""

    copy_mask: np.ndarray
    hole_mask: np.ndarray
    zenith: PerspectiveView

    def __post_init__(self):
        if (self.copy_mask & self.hole_mask).any():
            raise ValueError("copy and hole masks overlap")


def build_sky_plan(pre_labels, gen_labels, gen_cover, zenith_fov_deg=150.0,
                   pre_shape=None) -> SkyPlan:
    """Split the pre-captured sky into panorama-covered and missing parts.

    gen_labels must already be registered to the pre-captured frame (use
    align.warp_labels); gen_cover is the warped panorama coverage.
    """
    shape = pre_shape or pre_labels.shape
    pre_sky_id = pre_labels.id_of("sky")
    gen_sky_id = gen_labels.id_of("sky")
    if pre_sky_id is None or pre_labels.shape != tuple(shape):
        pre_sky = np.zeros(shape, dtype=bool)
    else:
        pre_sky = category_mask(pre_labels, pre_sky_id)
    if gen_sky_id is None:
        gen_sky = np.zeros(shape, dtype=bool)
    else:
        gen_sky = category_mask(gen_labels, gen_sky_id, gen_cover)
    copy_mask = pre_sky & gen_sky
    hole_mask = pre_sky & ~copy_mask
    return SkyPlan(copy_mask, hole_mask, zenith_view(shape[0], zenith_fov_deg))


def copy_sky(precap: np.ndarray, gen_warped: np.ndarray, plan: SkyPlan) -> np.ndarray:
    """Overwrite copy_mask pixels with the warped panorama; others untouched."""
    out = precap.copy()
    out[plan.copy_mask] = gen_warped[plan.copy_mask]
    return out


def _window_sums(mask_f: np.ndarray, ph: int, pw: int) -> np.ndarray:
    """Sum of mask over every (ph, pw) window, indexed by window top-left."""
    integ = np.zeros((mask_f.shape[0] + 1, mask_f.shape[1] + 1))
    np.cumsum(np.cumsum(mask_f, axis=0), axis=1, out=integ[1:, 1:])
    return integ[ph:, pw:] - integ[:-ph, pw:] - integ[ph:, :-pw] + integ[:-ph, :-pw]


def _masked_ssd(work: np.ndarray, templ: np.ndarray, known: np.ndarray):
    """SSD of the masked template against every window, top-left indexed.

    Uses the expansion sum(m*(S-T)^2) = corr(S^2, m) - 2*corr(S, m*T) +
    sum(m*T^2); cv2.filter2D with anchor (0, 0) yields top-left-aligned
    window sums.
    """
    ph, pw = known.shape
    m = known.astype(np.float32)
    if work.ndim == 3:
        s2 = np.sum(work.astype(np.float32) ** 2, axis=2)
        a = cv2.filter2D(s2, cv2.CV_32F, m, anchor=(0, 0),
                         borderType=cv2.BORDER_CONSTANT)
        b = np.zeros_like(s2)
        for c in range(work.shape[2]):
            b += cv2.filter2D(work[..., c].astype(np.float32), cv2.CV_32F,
                              m * templ[..., c], anchor=(0, 0),
                              borderType=cv2.BORDER_CONSTANT)
        t2 = float(np.sum(m[..., None] * templ ** 2))
    else:
        s2 = work.astype(np.float32) ** 2
        a = cv2.filter2D(s2, cv2.CV_32F, m, anchor=(0, 0),
                         borderType=cv2.BORDER_CONSTANT)
        b = cv2.filter2D(work.astype(np.float32), cv2.CV_32F, m * templ,
                         anchor=(0, 0), borderType=cv2.BORDER_CONSTANT)
        t2 = float(np.sum(m * templ ** 2))
    h, w = work.shape[:2]
    return (a - 2.0 * b + t2)[: h - ph + 1, : w - pw + 1]


def _luminance(img: np.ndarray) -> np.ndarray:
    if img.ndim == 3:
        return 0.299 * img[..., 0] + 0.587 * img[..., 1] + 0.114 * img[..., 2]
    return np.asarray(img, dtype=np.float64)


def inpaint_exemplar(img: np.ndarray, hole: np.ndarray, source: np.ndarray,
                     p: InpaintParams) -> np.ndarray:
    """Greedy exemplar-based fill of hole pixels from source patches.

    Every filled value is copied from a source pixel; fill order follows
    the confidence x data priority; SSD argmin ties break toward the lowest
    linear index, so the result is deterministic.
    """
    if (hole & source).any():
        raise ValueError("hole and source masks overlap")
    h, w = img.shape[:2]
    ps = p.patch_size
    half = ps // 2

    full_sums = _window_sums(source.astype(np.float64), ps, ps)
    if not (full_sums > ps * ps - 0.5).any():
        raise InpaintError(
            f"source region cannot supply a single {ps}x{ps} patch")

    work = np.asarray(img, dtype=np.float32).copy()
    fill = hole.copy()
    confidence = (~hole).astype(np.float32)
    kernel = np.ones((ps, ps), np.float32)
    cross = ndimage.generate_binary_structure(2, 1)

    while fill.any():
        front = fill & ndimage.binary_dilation(~fill, structure=cross)
        if not front.any():  # hole with no known neighbor anywhere: fill blind
            front = fill
        # confidence term: patch sum of confidence / full patch area
        conf_sum = cv2.filter2D(confidence, cv2.CV_32F, kernel,
                                borderType=cv2.BORDER_CONSTANT)
        conf_term = conf_sum / float(ps * ps)

        # data term: |isophote . front normal| at front pixels
        gray = _luminance(work)
        gray_masked = gray.copy()
        gray_masked[fill] = np.nan
        gy, gx = np.gradient(gray_masked)
        gy = np.nan_to_num(gy)
        gx = np.nan_to_num(gx)
        ny, nx = np.gradient(fill.astype(np.float64))
        nn = np.hypot(ny, nx)
        nn[nn == 0] = 1.0
        data_term = np.abs(gx * (ny / nn) - gy * (nx / nn)) + 1e-3

        priority = np.where(front, conf_term * data_term, -1.0)
        target = np.unravel_index(int(np.argmax(priority)), priority.shape)
        ty, tx = target

        y0, y1 = max(0, ty - half), min(h, ty + half + 1)
        x0, x1 = max(0, tx - half), min(w, tx + half + 1)
        templ = work[y0:y1, x0:x1]
        known = ~fill[y0:y1, x0:x1]
        ph, pw = known.shape

        if ph == ps and pw == ps:
            sums = full_sums
        else:
            sums = _window_sums(source.astype(np.float64), ph, pw)
        valid = sums > ph * pw - 0.5
        if not valid.any():
            raise InpaintError(
                f"source region cannot supply a {ph}x{pw} patch")
        ssd = _masked_ssd(work, templ, known)
        ssd = np.where(valid, ssd, np.inf)
        sy, sx = np.unravel_index(int(np.argmin(ssd)), ssd.shape)

        patch_src = work[sy:sy + ph, sx:sx + pw]
        unknown = fill[y0:y1, x0:x1]
        region = work[y0:y1, x0:x1]
        region[unknown] = patch_src[unknown]
        confidence[y0:y1, x0:x1][unknown] = conf_term[ty, tx]
        fill[y0:y1, x0:x1] = False
    return work


def repair_sky(img: np.ndarray, plan: SkyPlan, p: InpaintParams,
               equirect_source=None):
    """Fill the missing sky: zenith-perspective pass, then equirect pass.

    equirect_source defaults to the copied current sky (plan.copy_mask).
    Returns (result, remaining_after_zenith) where the second element is the
    hole mask left for the equirect pass (diagnostics).
    """
    if not plan.hole_mask.any():
        return img.copy(), np.zeros_like(plan.hole_mask)
    source = plan.copy_mask if equirect_source is None else equirect_source
    if not source.any():
        raise InpaintError("no current-sky source pixels to inpaint from")

    view = plan.zenith
    persp = extract_perspective(img, view)
    hole_p = extract_perspective(plan.hole_mask.astype(np.float32), view) > 0.01
    source_p = extract_perspective(source.astype(np.float32), view) > 0.999
    source_p &= ~hole_p

    written = np.zeros(img.shape[:2], dtype=bool)
    out = img.copy()
    if hole_p.any():
        try:
            filled = inpaint_exemplar(persp, hole_p, source_p, p)
            # the filled view is defined everywhere (non-hole pixels hold the
            # original extract), so insert with full validity and restrict
            # the writes to the hole: this reaches hole pixels whose view
            # footprint is thin, and never touches anything outside the hole
            inserted, written = insert_perspective(
                img, filled, view, np.ones(hole_p.shape, dtype=bool))
            written &= plan.hole_mask
            out[written] = inserted[written]
        except InpaintError:
            pass  # fall through: everything goes to the equirect pass

    remaining = plan.hole_mask & ~written
    if remaining.any():
        out = inpaint_exemplar(out, remaining, source & ~remaining, p)
    return out, remaining
