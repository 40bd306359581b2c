"""Panorama assembly from look-around video frames under a pure-rotation model.

Consecutive frames are matched, a rotation is fit to bearing vectors with
RANSAC + orthogonal Procrustes, rotations are chained, and frames are
composited onto the sphere with last-write-wins (an optional feather blend
softens overlap seams).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from panofix.errors import StitchError
from panofix.projection import PerspectiveView, insert_perspective, extract_perspective

MIN_STITCH_INLIERS = 8


@dataclass
class FrameSet:
    frames: list  # ordered RasterImages, equal dimensions
    h_fov: float  # radians, shared intrinsics

    def __post_init__(self):
        if len(self.frames) < 1:
            raise ValueError("FrameSet needs at least one frame")
        h0, w0 = self.frames[0].shape[:2]
        for f in self.frames[1:]:
            if f.shape[:2] != (h0, w0):
                raise ValueError("all frames must share dimensions")
        if not 0.0 < self.h_fov < math.pi:
            raise ValueError("h_fov must be in (0, pi)")

    def view(self, rotation=None) -> PerspectiveView:
        h, w = self.frames[0].shape[:2]
        yaw, pitch, roll = rotation if rotation is not None else (0.0, 0.0, 0.0)
        return PerspectiveView(yaw=yaw, pitch=pitch, roll=roll,
                               h_fov=self.h_fov, width=w, height=h)


@dataclass
class RotationChain:
    """Per-frame (yaw, pitch, roll) relative to frame 0 (frame 0 = identity)."""

    rotations: list = field(default_factory=list)


def _bearings(pts, w, h, h_fov):
    f = (w / 2.0) / math.tan(h_fov / 2.0)
    x = (pts[:, 0] - (w - 1) / 2.0) / f
    y = ((h - 1) / 2.0 - pts[:, 1]) / f
    d = np.column_stack([x, y, np.ones(len(pts))])
    return d / np.linalg.norm(d, axis=1, keepdims=True)


def _procrustes(da, db):
    """Rotation R minimizing ||R @ da_i - db_i|| over unit bearings."""
    m = db.T @ da
    u, _, vt = np.linalg.svd(m)
    d = np.sign(np.linalg.det(u @ vt))
    return u @ np.diag([1.0, 1.0, d]) @ vt


def _euler_from_matrix(r):
    """Invert PerspectiveView.rotation(): R = Ry(yaw) Rx(-pitch-ish) Rz(roll)."""
    # forward axis in world frame
    pitch = math.asin(max(-1.0, min(1.0, r[1, 2])))
    cy = r[2, 2]
    sy = r[0, 2]
    yaw = math.atan2(sy, cy)
    roll = math.atan2(r[1, 0], r[1, 1])
    return yaw, pitch, roll


def fit_rotation(pa, pb, w, h, h_fov, iters=500, inlier_deg=1.0, seed=0):
    """RANSAC rotation fit between bearing vectors of two matched frames.

    Returns (R, inlier_mask) with R mapping frame-a bearings onto frame-b.
    """
    if len(pa) < 2:
        return None, np.zeros(len(pa), dtype=bool)
    da = _bearings(np.asarray(pa, dtype=np.float64), w, h, h_fov)
    db = _bearings(np.asarray(pb, dtype=np.float64), w, h, h_fov)
    n = len(da)
    rng = np.random.default_rng(seed)
    cos_thresh = math.cos(math.radians(inlier_deg))

    best_mask = None
    best_count = -1
    for _ in range(iters):
        idx = rng.choice(n, size=2, replace=False)
        r = _procrustes(da[idx], db[idx])
        agree = np.einsum("ij,ij->i", da @ r.T, db)
        mask = agree > cos_thresh
        c = int(mask.sum())
        if c > best_count:
            best_count = c
            best_mask = mask
    if best_count < 2:
        return None, np.zeros(n, dtype=bool)
    r = _procrustes(da[best_mask], db[best_mask])
    agree = np.einsum("ij,ij->i", da @ r.T, db)
    mask = agree > cos_thresh
    return _procrustes(da[mask], db[mask]) if mask.sum() >= 2 else r, mask


def estimate_rotations(fs: FrameSet, matcher, iters=500, inlier_deg=1.0, seed=0) -> RotationChain:
    """Chain relative rotations over consecutive frame pairs.

    matcher(frame_i, frame_j) -> (pa, pb).  A pair with fewer than 8 inlier
    matches is a stitch break naming the first frame of the pair.
    """
    h, w = fs.frames[0].shape[:2]
    cumulative = np.eye(3)
    rots = [(0.0, 0.0, 0.0)]
    for i in range(len(fs.frames) - 1):
        pa, pb = matcher(fs.frames[i], fs.frames[i + 1])
        r, mask = fit_rotation(pa, pb, w, h, fs.h_fov, iters=iters,
                               inlier_deg=inlier_deg, seed=seed + i)
        if r is None or int(mask.sum()) < MIN_STITCH_INLIERS:
            raise StitchError(i)
        # r maps bearings of frame i onto frame i+1 in camera coords; the
        # camera-to-world rotation of frame i+1 is R_i composed with r^-1.
        cumulative = cumulative @ r.T
        rots.append(_euler_from_matrix(cumulative))
    return RotationChain(rots)


def composite_panorama(fs: FrameSet, chain: RotationChain, out_height: int,
                       feather: bool = False, feather_px: int = 32):
    """Project every frame onto the equirect sphere, later frames on top.

    Returns (panorama, coverage).  With feather on, overlap regions blend
    linearly over a band instead of hard last-write.
    """
    if len(chain.rotations) != len(fs.frames):
        raise ValueError("rotation chain does not cover all frames")
    out_w = 2 * out_height
    pano = np.zeros((out_height, out_w, 3) if fs.frames[0].ndim == 3
                    else (out_height, out_w), dtype=np.float32)
    cover = np.zeros((out_height, out_w), dtype=bool)
    full = np.ones(fs.frames[0].shape[:2], dtype=bool)

    for frame, rot in zip(fs.frames, chain.rotations):
        view = fs.view(rot)
        if not feather:
            pano, written = insert_perspective(pano, frame, view, full)
            cover |= written
            continue
        contrib, written = insert_perspective(np.zeros_like(pano), frame, view, full)
        overlap = written & cover
        fresh = written & ~cover
        pano[fresh] = contrib[fresh]
        if overlap.any():
            # linear ramp from the old content toward the new frame's interior
            dist = ndimage.distance_transform_edt(written)
            alpha = np.clip(dist / float(feather_px), 0.0, 1.0)
            if pano.ndim == 3:
                alpha = alpha[..., None]
            blend = pano * (1.0 - alpha) + contrib * alpha
            pano[overlap] = blend[overlap]
        cover |= written
    return pano, cover
