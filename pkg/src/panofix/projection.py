"""Equirectangular <-> unit direction <-> perspective (pinhole) conversions.

Angular convention for a W x H equirect image (W == 2H):
    longitude  lam = 2*pi*(u + 0.5)/W - pi
    latitude   phi = pi/2 - pi*(v + 0.5)/H
World frame: x right, y up, z forward; lam = 0, phi = 0 is +z.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from panofix.imgcore import sample_bilinear


@dataclass(frozen=True)
class PerspectiveView:
    """Pinhole view inside the sphere: orientation, horizontal FOV, size."""

    yaw: float = 0.0
    pitch: float = 0.0
    roll: float = 0.0
    h_fov: float = math.radians(90.0)
    width: int = 512
    height: int = 512

    def __post_init__(self):
        if not 0.0 < self.h_fov < math.pi:
            raise ValueError(f"h_fov must be in (0, pi), got {self.h_fov}")
        if self.width < 1 or self.height < 1:
            raise ValueError("view size must be positive")

    @property
    def focal(self) -> float:
        return (self.width / 2.0) / math.tan(self.h_fov / 2.0)

    def rotation(self) -> np.ndarray:
        """Camera-to-world rotation, applied yaw (about +y) then pitch
        (positive looks up) then roll about the view axis."""
        cy, sy = math.cos(self.yaw), math.sin(self.yaw)
        cp, sp = math.cos(self.pitch), math.sin(self.pitch)
        cr, sr = math.cos(self.roll), math.sin(self.roll)
        r_yaw = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
        r_pitch = np.array([[1, 0, 0], [0, cp, sp], [0, -sp, cp]])
        r_roll = np.array([[cr, -sr, 0], [sr, cr, 0], [0, 0, 1]])
        return r_yaw @ r_pitch @ r_roll


def zenith_view(height: int, h_fov_deg: float = 150.0) -> PerspectiveView:
    """Square view aimed straight up, used to undistort the polar sky region.

    With the default 150 degree FOV the view reaches down to 15 degrees of
    latitude at the frame edges; lower sky is handled in equirect domain.
    """
    return PerspectiveView(
        yaw=0.0, pitch=math.pi / 2.0, roll=0.0,
        h_fov=math.radians(h_fov_deg), width=height, height=height,
    )


def dir_from_equirect(u, v, w: int, h: int) -> np.ndarray:
    """Pixel coordinates -> unit direction(s), shape (..., 3)."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    lam = 2.0 * np.pi * (u + 0.5) / w - np.pi
    phi = np.pi / 2.0 - np.pi * (v + 0.5) / h
    cphi = np.cos(phi)
    return np.stack([cphi * np.sin(lam), np.sin(phi), cphi * np.cos(lam)], axis=-1)


def equirect_from_dir(d: np.ndarray, w: int, h: int):
    """Unit direction(s) -> pixel coordinates (u, v); u in [0, W)."""
    d = np.asarray(d, dtype=np.float64)
    lam = np.arctan2(d[..., 0], d[..., 2])
    phi = np.arcsin(np.clip(d[..., 1], -1.0, 1.0))
    u = np.mod((lam + np.pi) * w / (2.0 * np.pi) - 0.5, w)
    v = (np.pi / 2.0 - phi) * h / np.pi - 0.5
    return u, v


def _camera_rays(view: PerspectiveView) -> np.ndarray:
    """Unit rays in camera frame for every pixel of the view, (H, W, 3)."""
    f = view.focal
    px, py = np.meshgrid(
        np.arange(view.width, dtype=np.float64),
        np.arange(view.height, dtype=np.float64),
    )
    x = (px - (view.width - 1) / 2.0) / f
    y = ((view.height - 1) / 2.0 - py) / f
    z = np.ones_like(x)
    rays = np.stack([x, y, z], axis=-1)
    return rays / np.linalg.norm(rays, axis=-1, keepdims=True)


def extract_perspective(src: np.ndarray, view: PerspectiveView) -> np.ndarray:
    """Render the perspective view by sampling the equirect source (wrap on)."""
    h, w = src.shape[:2]
    rays = _camera_rays(view) @ view.rotation().T
    u, v = equirect_from_dir(rays, w, h)
    out = sample_bilinear(src, u, v, wrap_x=True)
    return out.astype(np.float32)


def project_to_view(view: PerspectiveView, dirs: np.ndarray):
    """World directions -> (px, py, inside) for the view's image plane."""
    cam = dirs @ view.rotation()  # R^T applied to rows
    z = cam[..., 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        px = view.focal * cam[..., 0] / z + (view.width - 1) / 2.0
        py = (view.height - 1) / 2.0 - view.focal * cam[..., 1] / z
    inside = (
        (z > 1e-9)
        & (px >= 0.0) & (px <= view.width - 1.0)
        & (py >= 0.0) & (py <= view.height - 1.0)
    )
    return px, py, inside


def insert_perspective(
    dst: np.ndarray,
    patch: np.ndarray,
    view: PerspectiveView,
    valid: np.ndarray,
):
    """Write the patch back into the equirect image (reverse mapping).

    Destination pixels whose direction falls inside the frustum and lands on
    valid patch pixels (all four bilinear neighbors valid) take the patch
    sample.  Returns (result, written) where written marks updated pixels.
    """
    h, w = dst.shape[:2]
    if patch.shape[:2] != (view.height, view.width):
        raise ValueError("patch dimensions do not match view")
    if valid.shape != (view.height, view.width):
        raise ValueError("valid mask dimensions do not match view")

    uu, vv = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    dirs = dir_from_equirect(uu, vv, w, h)
    px, py, inside = project_to_view(view, dirs)

    px = np.where(inside, px, 0.0)
    py = np.where(inside, py, 0.0)
    validity = sample_bilinear(valid.astype(np.float32), px, py, wrap_x=False)
    written = inside & (validity > 0.999)

    samples = sample_bilinear(patch, px, py, wrap_x=False).astype(np.float32)
    out = dst.copy()
    out[written] = samples[written]
    return out, written
