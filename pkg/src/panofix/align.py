"""Registration of the generated panorama onto the pre-captured equirect.

The alignment model is per-axis scale plus translation, with the horizontal
axis treated modulo image width (content pushed past an edge reappears on
the opposite side).  Affine and homography fits are provided for comparison
only and deliberately ignore the wraparound.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from panofix.errors import AlignmentError
from panofix.imgcore import sample_bilinear

MIN_INLIERS = 4


@dataclass(frozen=True)
class SimilarityTransform2D:
    """(x, y) -> (sx*x + tx mod W, sy*y + ty)."""

    sx: float
    sy: float
    tx: float
    ty: float

    def __post_init__(self):
        if self.sx <= 0 or self.sy <= 0:
            raise ValueError("scales must be positive")

    def apply(self, x, y, w=None):
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        xo = self.sx * x + self.tx
        if w is not None:
            xo = np.mod(xo, w)
        return xo, self.sy * y + self.ty

    def inverse(self) -> "SimilarityTransform2D":
        return SimilarityTransform2D(
            1.0 / self.sx, 1.0 / self.sy, -self.tx / self.sx, -self.ty / self.sy
        )

    def then(self, other: "SimilarityTransform2D") -> "SimilarityTransform2D":
        """Composition: apply self first, then other."""
        return SimilarityTransform2D(
            other.sx * self.sx,
            other.sy * self.sy,
            other.sx * self.tx + other.tx,
            other.sy * self.ty + other.ty,
        )

    @staticmethod
    def identity() -> "SimilarityTransform2D":
        return SimilarityTransform2D(1.0, 1.0, 0.0, 0.0)

    def as_dict(self) -> dict:
        return {"sx": self.sx, "sy": self.sy, "tx": self.tx, "ty": self.ty}


@dataclass(frozen=True)
class AltTransform:
    """Plain 3x3 transform for the comparison mode (no wrap handling)."""

    kind: str  # "affine" | "homography"
    matrix: np.ndarray

    def apply(self, x, y):
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        m = self.matrix
        xo = m[0, 0] * x + m[0, 1] * y + m[0, 2]
        yo = m[1, 0] * x + m[1, 1] * y + m[1, 2]
        wo = m[2, 0] * x + m[2, 1] * y + m[2, 2]
        return xo / wo, yo / wo


def wrap_diff(d, w):
    """Signed difference reduced to [-W/2, W/2)."""
    return np.mod(np.asarray(d, dtype=np.float64) + w / 2.0, w) - w / 2.0


def corner_displacement(t_est: SimilarityTransform2D, t_ref: SimilarityTransform2D,
                        w: int, h: int) -> float:
    """Max displacement over the four image corners, wrap-aware in x."""
    cx = np.array([0.0, w - 1.0, 0.0, w - 1.0])
    cy = np.array([0.0, 0.0, h - 1.0, h - 1.0])
    xe, ye = t_est.apply(cx, cy)
    xr, yr = t_ref.apply(cx, cy)
    dx = wrap_diff(xe - xr, w)
    return float(np.max(np.hypot(dx, ye - yr)))


def _check_matches(pa, pb, minimum):
    pa = np.asarray(pa, dtype=np.float64)
    pb = np.asarray(pb, dtype=np.float64)
    if pa.ndim != 2 or pa.shape[1] != 2 or pa.shape != pb.shape:
        raise ValueError("matches must be two (N, 2) arrays of equal shape")
    if pa.shape[0] < minimum:
        raise AlignmentError(f"alignment failed: need >= {minimum} matches, got {pa.shape[0]}")
    return pa, pb


def _ls_scale_translation(p, q):
    """Closed-form 1D fit of q ~= s*p + t."""
    pm = p.mean()
    qm = q.mean()
    var = np.sum((p - pm) ** 2)
    if var < 1e-12:
        return 1.0, qm - pm
    s = np.sum((p - pm) * (q - qm)) / var
    return s, qm - s * pm


def fit_scale_translation(pa, pb, w, iters=2000, inlier_px=3.0, seed=0,
                          uniform_scale=False):
    """RANSAC + least squares for the scale/translation model with x wrap.

    pa are panorama points, pb the corresponding pre-captured points; w is
    the destination (pre-captured) width.  Returns (transform, inlier_mask).
    """
    pa, pb = _check_matches(pa, pb, 2)
    n = pa.shape[0]
    rng = np.random.default_rng(seed)

    i = rng.integers(0, n, size=iters)
    j = rng.integers(0, n - 1, size=iters)
    j = np.where(j >= i, j + 1, j)  # j != i

    dpx = pa[j, 0] - pa[i, 0]
    dpy = pa[j, 1] - pa[i, 1]
    dqy = pb[j, 1] - pb[i, 1]

    # Horizontal deltas in the target are ambiguous modulo W: try all three
    # unwrappings of each sample pair.
    base_dqx = pb[j, 0] - pb[i, 0]
    sx_list, tx_list, sy_list, ty_list = [], [], [], []
    with np.errstate(divide="ignore", invalid="ignore"):
        sy = dqy / dpy
        ty = pb[i, 1] - sy * pa[i, 1]
        for k in (-1.0, 0.0, 1.0):
            sx = (base_dqx + k * w) / dpx
            tx = np.mod(pb[i, 0] - sx * pa[i, 0], w)
            sx_list.append(sx)
            tx_list.append(tx)
            sy_list.append(sy)
            ty_list.append(ty)
    sx = np.concatenate(sx_list)
    tx = np.concatenate(tx_list)
    sy = np.concatenate(sy_list)
    ty = np.concatenate(ty_list)

    # scales far from 1 are never plausible for phone-panorama alignment;
    # dropping them keeps the residual matrix small
    ok = (
        np.isfinite(sx) & np.isfinite(sy)
        & (sx > 1.0 / 16.0) & (sx < 16.0) & (sy > 1.0 / 16.0) & (sy < 16.0)
    )
    if not ok.any():
        raise AlignmentError("alignment failed: no valid RANSAC hypotheses")
    sx, sy, tx, ty = sx[ok], sy[ok], tx[ok], ty[ok]

    rx = wrap_diff(sx[:, None] * pa[None, :, 0] + tx[:, None] - pb[None, :, 0], w)
    ry = sy[:, None] * pa[None, :, 1] + ty[:, None] - pb[None, :, 1]
    inl = (rx * rx + ry * ry) < inlier_px * inlier_px
    counts = inl.sum(axis=1)
    best = int(np.argmax(counts))
    if counts[best] < MIN_INLIERS:
        raise AlignmentError(f"alignment failed: only {int(counts[best])} inliers")

    cur = SimilarityTransform2D(sx[best], sy[best], np.mod(tx[best], w), ty[best])
    mask = inl[best]

    # Two refit rounds: unwrap target x near the current prediction, solve the
    # closed-form least squares on inliers, refresh the inlier set.
    for _ in range(2):
        px, py = pa[mask, 0], pa[mask, 1]
        qx, qy = pb[mask, 0], pb[mask, 1]
        pred_x = cur.sx * px + cur.tx
        qx_unwrapped = qx + w * np.round((pred_x - qx) / w)
        if uniform_scale:
            # joint scale: minimize sum over both axes with sx == sy
            p = np.concatenate([px, py])
            q = np.concatenate([qx_unwrapped, qy])
            pm_x, pm_y = px.mean(), py.mean()
            qm_x, qm_y = qx_unwrapped.mean(), qy.mean()
            num = np.sum((px - pm_x) * (qx_unwrapped - qm_x)) + np.sum((py - pm_y) * (qy - qm_y))
            den = np.sum((px - pm_x) ** 2) + np.sum((py - pm_y) ** 2)
            s = num / den if den > 1e-12 else 1.0
            nsx = nsy = s
            ntx = qm_x - s * pm_x
            nty = qm_y - s * pm_y
        else:
            nsx, ntx = _ls_scale_translation(px, qx_unwrapped)
            nsy, nty = _ls_scale_translation(py, qy)
        if nsx <= 0 or nsy <= 0:
            break
        cur = SimilarityTransform2D(nsx, nsy, np.mod(ntx, w), nty)
        rx = wrap_diff(cur.sx * pa[:, 0] + cur.tx - pb[:, 0], w)
        ry = cur.sy * pa[:, 1] + cur.ty - pb[:, 1]
        mask = (rx * rx + ry * ry) < inlier_px * inlier_px
        if mask.sum() < MIN_INLIERS:
            raise AlignmentError("alignment failed: inliers collapsed during refit")

    return cur, mask


def _fit_affine_ls(pa, pb):
    n = pa.shape[0]
    a = np.zeros((2 * n, 6))
    a[0::2, 0] = pa[:, 0]
    a[0::2, 1] = pa[:, 1]
    a[0::2, 2] = 1.0
    a[1::2, 3] = pa[:, 0]
    a[1::2, 4] = pa[:, 1]
    a[1::2, 5] = 1.0
    b = pb.reshape(-1)
    sol, *_ = np.linalg.lstsq(a, b, rcond=None)
    m = np.eye(3)
    m[0, :] = sol[0:3]
    m[1, :] = sol[3:6]
    return m


def _normalize_points(p):
    c = p.mean(axis=0)
    d = np.sqrt(((p - c) ** 2).sum(axis=1)).mean()
    if d < 1e-12:
        raise AlignmentError("degenerate configuration: coincident points")
    s = np.sqrt(2.0) / d
    t = np.array([[s, 0, -s * c[0]], [0, s, -s * c[1]], [0, 0, 1.0]])
    ph = np.column_stack([p, np.ones(len(p))]) @ t.T
    return ph[:, :2], t


def _fit_homography_dlt(pa, pb):
    pan, ta = _normalize_points(pa)
    pbn, tb = _normalize_points(pb)
    n = pa.shape[0]
    a = np.zeros((2 * n, 9))
    x, y = pan[:, 0], pan[:, 1]
    u, v = pbn[:, 0], pbn[:, 1]
    a[0::2, 0] = -x
    a[0::2, 1] = -y
    a[0::2, 2] = -1.0
    a[0::2, 6] = u * x
    a[0::2, 7] = u * y
    a[0::2, 8] = u
    a[1::2, 3] = -x
    a[1::2, 4] = -y
    a[1::2, 5] = -1.0
    a[1::2, 6] = v * x
    a[1::2, 7] = v * y
    a[1::2, 8] = v
    _, sv, vt = np.linalg.svd(a)
    if sv[-2] < 1e-10 * max(sv[0], 1.0):
        raise AlignmentError("degenerate configuration for homography")
    h = vt[-1].reshape(3, 3)
    m = np.linalg.inv(tb) @ h @ ta
    if abs(m[2, 2]) < 1e-12:
        raise AlignmentError("degenerate homography (vanishing scale)")
    return m / m[2, 2]


def fit_alt(pa, pb, kind, iters=2000, inlier_px=3.0, seed=0):
    """RANSAC + least-squares affine or homography fit, no wrap handling."""
    if kind not in ("affine", "homography"):
        raise ValueError(f"unknown transform kind: {kind}")
    minimal = 3 if kind == "affine" else 4
    pa, pb = _check_matches(pa, pb, minimal)
    n = pa.shape[0]

    # reject globally collinear inputs
    if np.linalg.matrix_rank(pa - pa.mean(axis=0), tol=1e-8) < 2:
        raise AlignmentError("degenerate configuration: collinear points")

    rng = np.random.default_rng(seed)
    best_mask = None
    best_count = -1
    for _ in range(iters):
        idx = rng.choice(n, size=minimal, replace=False)
        try:
            if kind == "affine":
                m = _fit_affine_ls(pa[idx], pb[idx])
            else:
                m = _fit_homography_dlt(pa[idx], pb[idx])
        except (AlignmentError, np.linalg.LinAlgError):
            continue
        t = AltTransform(kind, m)
        qx, qy = t.apply(pa[:, 0], pa[:, 1])
        r2 = (qx - pb[:, 0]) ** 2 + (qy - pb[:, 1]) ** 2
        mask = np.isfinite(r2) & (r2 < inlier_px * inlier_px)
        c = int(mask.sum())
        if c > best_count:
            best_count = c
            best_mask = mask
    if best_count < max(MIN_INLIERS, minimal):
        raise AlignmentError(f"alignment failed: only {max(best_count, 0)} inliers")

    if kind == "affine":
        m = _fit_affine_ls(pa[best_mask], pb[best_mask])
    else:
        m = _fit_homography_dlt(pa[best_mask], pb[best_mask])
    return AltTransform(kind, m)


def _source_coords(t: SimilarityTransform2D, w_dst, h_dst, w_src):
    """Candidate source x for every destination pixel, ascending source x.

    Returns (xs_list, ys) where each xs in xs_list is an (H, W) array of the
    k-th unwrapping (NaN where out of the source range).
    """
    inv_sx = 1.0 / t.sx
    xx, yy = np.meshgrid(np.arange(w_dst, dtype=np.float64),
                         np.arange(h_dst, dtype=np.float64))
    ys = (yy - t.ty) / t.sy
    k_lo = int(np.floor((t.tx - (w_dst - 1)) / w_dst))
    k_hi = int(np.ceil((t.sx * (w_src - 1) + t.tx) / w_dst))
    xs_list = []
    for k in range(k_lo, k_hi + 1):
        xs = (xx + k * w_dst - t.tx) * inv_sx
        xs[(xs < 0.0) | (xs > w_src - 1.0)] = np.nan
        xs_list.append(xs)
    return xs_list, ys


def warp_panorama(pano, cover, t: SimilarityTransform2D, dst_w, dst_h):
    """Reverse-mapped warp with horizontal wrap.

    Where the warped panorama overlaps itself across the seam (wider than
    360 degrees after scaling) the pixel coming from the smaller source x
    wins.  Returns (warped, warped_coverage).
    """
    h_src, w_src = pano.shape[:2]
    xs_list, ys = _source_coords(t, dst_w, dst_h, w_src)
    y_ok = (ys >= 0.0) & (ys <= h_src - 1.0)
    ys_c = np.clip(ys, 0.0, h_src - 1.0)

    out_shape = (dst_h, dst_w, 3) if pano.ndim == 3 else (dst_h, dst_w)
    out = np.zeros(out_shape, dtype=np.float32)
    out_cover = np.zeros((dst_h, dst_w), dtype=bool)
    cov = cover.astype(np.float32)

    for xs in xs_list:  # ascending source x: first hit wins
        valid = y_ok & np.isfinite(xs) & ~out_cover
        if not valid.any():
            continue
        xs_c = np.nan_to_num(xs)
        # nearest-neighbor coverage lookup
        ci = np.clip(np.round(ys_c).astype(np.int64), 0, h_src - 1)
        cj = np.clip(np.round(xs_c).astype(np.int64), 0, w_src - 1)
        valid &= cov[ci, cj] > 0.5
        if not valid.any():
            continue
        samples = sample_bilinear(pano, xs_c, ys_c, wrap_x=False).astype(np.float32)
        out[valid] = samples[valid]
        out_cover |= valid
    return out, out_cover


def warp_labels(ids, cover, t: SimilarityTransform2D, dst_w, dst_h, fill=255):
    """Nearest-neighbor label warp with the same wrap/overlap rules."""
    h_src, w_src = ids.shape
    xs_list, ys = _source_coords(t, dst_w, dst_h, w_src)
    y_ok = (ys >= 0.0) & (ys <= h_src - 1.0)
    ri = np.clip(np.round(ys).astype(np.int64), 0, h_src - 1)

    out = np.full((dst_h, dst_w), fill, dtype=ids.dtype)
    done = np.zeros((dst_h, dst_w), dtype=bool)
    for xs in xs_list:
        valid = y_ok & np.isfinite(xs) & ~done
        if not valid.any():
            continue
        rj = np.clip(np.round(np.nan_to_num(xs)).astype(np.int64), 0, w_src - 1)
        valid &= cover[ri, rj]
        out[valid] = ids[ri[valid], rj[valid]]
        done |= valid
    return out, done


def iterative_align(pano, cover, precap, matcher, rounds=3, eps=0.5,
                    iters=2000, inlier_px=3.0, seed=0, uniform_scale=False):
    """Repeat {match -> fit -> warp} composing transforms.

    matcher(img_a, img_b[, mask_a]) -> (pa, pb) point arrays; img_a is the
    current warped panorama (mask_a its coverage), img_b the pre-captured
    image.  The warp is always a single resample from the original panorama
    using the composed transform.  Returns (warped, warped_cover,
    composed_transform).
    """
    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    dst_h, dst_w = precap.shape[:2]
    total = SimilarityTransform2D.identity()
    cur, cur_cover = warp_panorama(pano, cover, total, dst_w, dst_h)
    identity = SimilarityTransform2D.identity()

    for rnd in range(1, rounds + 1):
        try:
            pa, pb = matcher(cur, precap, cur_cover)
        except TypeError:
            pa, pb = matcher(cur, precap)
        try:
            inc, _ = fit_scale_translation(
                pa, pb, dst_w, iters=iters, inlier_px=inlier_px,
                seed=seed + rnd, uniform_scale=uniform_scale,
            )
        except AlignmentError as exc:
            raise AlignmentError(f"{exc} (round {rnd})") from exc
        total = total.then(inc)
        cur, cur_cover = warp_panorama(pano, cover, total, dst_w, dst_h)
        if corner_displacement(inc, identity, dst_w, dst_h) < eps:
            break
    return cur, cur_cover, total
