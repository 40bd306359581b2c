"""Shared synthetic fixtures: a textured equirect scene with labels."""

import numpy as np
from scipy import ndimage

from panofix.segment import UNLABELED, LabelMap

PALETTE = {0: "sky", 1: "building", 2: "tree", 3: "earth", 4: "plant"}


def _noise(shape, rng, blur=1.5):
    return ndimage.gaussian_filter(rng.random(shape), blur)


def make_scene(height=128, seed=0, skyline=0.42):
    """Textured equirect test scene (W = 2H) plus a matching label map.

    Latitude bands: sky on top with a wavy skyline, then building/tree
    blocks alternating with longitude, then earth with plant patches and an
    unlabeled strip at the very bottom.
    """
    h = height
    w = 2 * height
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:h, 0:w]

    ids = np.full((h, w), UNLABELED, np.uint8)
    wave = (0.06 * h * np.sin(2 * np.pi * xx[0] / w * 3)).astype(int)
    sky_bottom = (skyline * h + wave)[None, :].repeat(h, axis=0)
    sky = yy < sky_bottom
    ids[sky] = 0

    ground_start = int(0.72 * h)
    mid = ~sky & (yy < ground_start)
    # alternate building/tree in longitude blocks
    block = ((xx // (w // 8)) % 2) == 0
    ids[mid & block] = 1
    ids[mid & ~block] = 2
    ground = yy >= ground_start
    ids[ground] = 3
    plant = ground & (_noise((h, w), rng, 3) > 0.52)
    ids[plant] = 4
    ids[yy >= int(0.94 * h)] = UNLABELED  # tripod / nadir area

    img = np.zeros((h, w, 3), np.float32)
    base_colors = {
        0: (0.55, 0.68, 0.90),
        1: (0.55, 0.50, 0.47),
        2: (0.22, 0.42, 0.20),
        3: (0.48, 0.40, 0.30),
        4: (0.30, 0.50, 0.25),
        UNLABELED: (0.25, 0.25, 0.28),
    }
    tex = _noise((h, w), rng, 1.0)
    for cid, color in base_colors.items():
        m = ids == cid
        amp = 0.05 if cid == 0 else 0.35
        shade = 1.0 + amp * (tex[m] - 0.5) * 2.0
        img[m] = np.clip(np.asarray(color)[None, :] * shade[:, None], 0, 1)
    # strong corner features inside building blocks for AKAZE
    grid = ((xx // 9 + yy // 9) % 2 == 0)
    strong = (ids == 1) & grid
    img[strong] *= 0.55
    # speckles on ground
    speck = (_noise((h, w), rng, 0.8) > 0.62) & (ids >= 2) & (ids <= 4)
    img[speck] = np.clip(img[speck] * 1.5, 0, 1)
    return np.clip(img, 0, 1).astype(np.float32), LabelMap(ids, dict(PALETTE))
