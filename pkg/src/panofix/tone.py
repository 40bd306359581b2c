"""Non-sky intensity correction: per-category CDF matching + Poisson leveling.

Histograms are collected over 8-bit quantized values per RGB channel.  The
residual region (unmatched / unlabeled categories) is leveled by solving a
discrete Poisson equation whose guidance is the gradient field of the
original pre-captured image, with Dirichlet values taken from the already
corrected surroundings.  The Laplacian stencil wraps horizontally because
the domain is a 360 degree image.
"""

from __future__ import annotations

import logging

import numpy as np
from scipy import ndimage, sparse
from scipy.sparse.linalg import cg

from panofix.errors import EmptyCategoryError, PoissonError
from panofix.imgcore import as_float, to_uint8
from panofix.segment import (
    UNLABELED,
    category_mask,
    erode_mask,
    match_categories_by_name,
)

log = logging.getLogger(__name__)

CG_RTOL = 1e-10
CG_MAXITER = 10000


def cdf(img: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Normalized cumulative histogram over masked pixels, (C, 256)."""
    if not mask.any():
        raise EmptyCategoryError("empty category: no pixels under mask")
    q = to_uint8(img)
    if q.ndim == 2:
        q = q[..., None]
    vals = q[mask]  # (N, C)
    out = np.empty((vals.shape[1], 256), dtype=np.float64)
    for c in range(vals.shape[1]):
        hist = np.bincount(vals[:, c], minlength=256).astype(np.float64)
        out[c] = np.cumsum(hist) / hist.sum()
    return out


def match_lut(src_cdf: np.ndarray, ref_cdf: np.ndarray) -> np.ndarray:
    """LUT[v] = smallest w with ref_cdf[w] >= src_cdf[v]; monotone by design."""
    if src_cdf.shape != ref_cdf.shape:
        raise ValueError("CDF shapes differ")
    lut = np.empty_like(src_cdf, dtype=np.uint8)
    for c in range(src_cdf.shape[0]):
        # searchsorted('left') on a non-decreasing ref gives the min index
        idx = np.searchsorted(ref_cdf[c], src_cdf[c] - 1e-12, side="left")
        lut[c] = np.clip(idx, 0, 255).astype(np.uint8)
    return lut


def apply_lut(img: np.ndarray, mask: np.ndarray, lut: np.ndarray) -> np.ndarray:
    """Map masked pixels through the per-channel LUT; others bit-identical."""
    out = as_float(img).copy()
    q = to_uint8(img)
    single = q.ndim == 2
    if single:
        q = q[..., None]
    for c in range(q.shape[2]):
        mapped = as_float(lut[c][q[..., c][mask]])
        if single:
            out[mask] = mapped
        else:
            out[..., c][mask] = mapped
    return out


def _components_with_wrap(region: np.ndarray):
    """Connected components of the region, 4-connectivity, x-wrapping."""
    labels, n = ndimage.label(region)
    if n > 1:
        # union labels that touch across the vertical seam
        parent = list(range(n + 1))

        def find(a):
            while parent[a] != a:
                parent[a] = parent[parent[a]]
                a = parent[a]
            return a

        left = labels[:, 0]
        right = labels[:, -1]
        for a, b in zip(left, right):
            if a and b and find(a) != find(b):
                parent[find(a)] = find(b)
        remap = np.array([find(a) for a in range(n + 1)])
        labels = remap[labels]
    return labels


def poisson_level(img: np.ndarray, region: np.ndarray, guide: np.ndarray,
                  membrane: bool = False, rtol: float = CG_RTOL,
                  maxiter: int = CG_MAXITER):
    """Solve Laplacian(f) = Laplacian(guide) inside region, f = img outside.

    With membrane=True the guidance is zero (pure harmonic interpolation).
    Vertical edges clamp (the pole rows are their own neighbors); horizontal
    edges wrap.  Returns the image with the region replaced; raises
    PoissonError if any connected component has no boundary pixel.
    """
    if not region.any():
        return img.copy()
    h, w = region.shape
    labels = _components_with_wrap(region)
    for comp in np.unique(labels):
        if comp == 0:
            continue
        comp_mask = labels == comp
        if not (_neighbor_count_outside(comp_mask, region) > 0).any():
            raise PoissonError("unconstrained region: component without boundary pixels")

    idx = -np.ones((h, w), dtype=np.int64)
    ys, xs = np.nonzero(region)
    n = len(ys)
    idx[ys, xs] = np.arange(n)

    rows, cols, vals = [], [], []
    rhs_boundary = np.zeros((n,) + ((img.shape[2],) if img.ndim == 3 else ()), dtype=np.float64)
    imgf = np.asarray(img, dtype=np.float64)

    diag = np.zeros(n)
    for dy, dx in ((-1, 0), (1, 0), (0, -1), (0, 1)):
        ny = ys + dy
        nx = xs + dx
        if dy != 0:
            exists = (ny >= 0) & (ny < h)  # vertical: clamped, no pole wrap
        else:
            exists = np.ones(n, dtype=bool)
            nx = np.mod(nx, w)
        diag += exists.astype(np.float64)
        ne = exists
        nyc = np.clip(ny, 0, h - 1)
        inner = ne & (idx[nyc, nx] >= 0) & region[nyc, nx]
        outer = ne & ~region[nyc, nx]
        rows.append(np.nonzero(inner)[0])
        cols.append(idx[nyc[inner], nx[inner]])
        vals.append(-np.ones(int(inner.sum())))
        if outer.any():
            rhs_boundary[np.nonzero(outer)[0]] += imgf[nyc[outer], nx[outer]]

    rows = np.concatenate([np.arange(n)] + rows)
    cols = np.concatenate([np.arange(n)] + cols)
    vals = np.concatenate([diag] + vals)
    a = sparse.csr_matrix((vals, (rows, cols)), shape=(n, n))

    if membrane:
        guidance = np.zeros_like(rhs_boundary)
    else:
        gf = np.asarray(guide, dtype=np.float64)
        guidance = _guidance_rhs(gf, ys, xs, h, w)

    out = imgf.copy()
    channels = img.shape[2] if img.ndim == 3 else 1
    for c in range(channels):
        b = (guidance[..., c] if img.ndim == 3 else guidance) + (
            rhs_boundary[..., c] if img.ndim == 3 else rhs_boundary
        )
        x0 = np.full(n, b.mean() / max(diag.mean(), 1.0))
        sol, info = cg(a, b, x0=x0, rtol=rtol, maxiter=maxiter)
        if info > 0:
            log.warning("Poisson CG stopped at %d iterations without full convergence", info)
        if img.ndim == 3:
            out[ys, xs, c] = sol
        else:
            out[ys, xs] = sol
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def _guidance_rhs(gf: np.ndarray, ys, xs, h, w):
    """Laplacian of the guide at region pixels, matching the system stencil."""
    def one(chan):
        vals = np.zeros(len(ys))
        deg = np.zeros(len(ys))
        for dy, dx in ((-1, 0), (1, 0), (0, -1), (0, 1)):
            ny = ys + dy
            nx = np.mod(xs + dx, w)
            if dy != 0:
                exists = (ny >= 0) & (ny < h)
            else:
                exists = np.ones(len(ys), dtype=bool)
            nyc = np.clip(ny, 0, h - 1)
            deg += exists
            vals -= np.where(exists, chan[nyc, nx], 0.0)
        return deg * chan[ys, xs] + vals

    if gf.ndim == 3:
        return np.stack([one(gf[..., c]) for c in range(gf.shape[2])], axis=-1)
    return one(gf)


def _neighbor_count_outside(comp_mask: np.ndarray, region: np.ndarray) -> np.ndarray:
    """Per-pixel count of 4-neighbors (x-wrapped) outside the region."""
    outside = (~region).astype(np.int32)
    up = np.vstack([np.zeros((1, region.shape[1]), np.int32), outside[:-1]])
    down = np.vstack([outside[1:], np.zeros((1, region.shape[1]), np.int32)])
    left = np.roll(outside, 1, axis=1)
    right = np.roll(outside, -1, axis=1)
    total = up + down + left + right
    return np.where(comp_mask, total, 0)


def correct_intensity(precap, pre_labels, gen_warped, gen_labels, gen_cover,
                      selection, membrane=False, dump_cdfs=None):
    """Per-category histogram matching, then Poisson leveling of the rest.

    pre_labels / gen_labels are LabelMaps registered to precap / the warped
    panorama; selection holds sky + kept ids from the generated image.
    Returns (corrected, warnings, residual_mask).
    """
    warnings = []
    corrected = np.asarray(precap, dtype=np.float32).copy()
    pairs, unmatched = match_categories_by_name(pre_labels, gen_labels, selection)
    for name in unmatched:
        warnings.append(f"category '{name}' present only in the generated image; "
                        "left to Poisson leveling")

    matched_pre = np.zeros(precap.shape[:2], dtype=bool)
    cdf_dump = {}
    for name, pid, gid in pairs:
        pre_mask = category_mask(pre_labels, pid)
        ref_mask = category_mask(gen_labels, gid, gen_cover)
        pre_hist_mask = erode_mask(pre_mask)
        ref_hist_mask = erode_mask(ref_mask)
        try:
            src = cdf(precap, pre_hist_mask)
            ref = cdf(gen_warped, ref_hist_mask)
        except EmptyCategoryError:
            warnings.append(f"category '{name}' empty after masking; "
                            "left to Poisson leveling")
            continue
        lut = match_lut(src, ref)
        corrected = apply_lut(corrected, pre_mask, lut)
        matched_pre |= pre_mask
        cdf_dump[name] = (src, ref, lut)

    sky_pre_id = pre_labels.id_of("sky")
    sky_mask = category_mask(pre_labels, sky_pre_id) if sky_pre_id is not None \
        else np.zeros(precap.shape[:2], dtype=bool)
    residual = ~matched_pre & ~sky_mask
    if residual.any() and matched_pre.any():
        corrected = poisson_level(corrected, residual, precap, membrane=membrane)
    elif residual.any():
        warnings.append("no matched categories; residual left unleveled")

    if dump_cdfs is not None:
        _dump_cdfs(cdf_dump, dump_cdfs)
    return corrected, warnings, residual


def _dump_cdfs(cdf_dump, path_prefix):
    for name, (src, ref, lut) in cdf_dump.items():
        rows = ["value," + ",".join(
            f"src_c{c},ref_c{c},lut_c{c}" for c in range(src.shape[0]))]
        for v in range(256):
            cells = [str(v)]
            for c in range(src.shape[0]):
                cells += [f"{src[c, v]:.6g}", f"{ref[c, v]:.6g}", str(int(lut[c, v]))]
            rows.append(",".join(cells))
        with open(f"{path_prefix}_{name}.csv", "w") as fh:
            fh.write("\n".join(rows) + "\n")
