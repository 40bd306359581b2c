"""Acceptance gate: one test (and one printed verdict line) per criterion.

Run with `pytest tests/test_acceptance.py -s` to see every verdict line.
"""

import math
import time

import cv2
import numpy as np
import pytest
from scipy import ndimage

from helpers import PALETTE, make_scene
from panofix import tone
from panofix.align import (
    SimilarityTransform2D,
    corner_displacement,
    fit_alt,
    fit_scale_translation,
    wrap_diff,
)
from panofix.harness import SyntheticSpec, make_synthetic_case, score
from panofix.pipeline import run as run_pipeline
from panofix.projection import (
    PerspectiveView,
    dir_from_equirect,
    equirect_from_dir,
    extract_perspective,
    insert_perspective,
)
from panofix.segment import LabelMap, select_categories
from panofix.sky import InpaintParams, build_sky_plan, inpaint_exemplar, repair_sky
from test_pipeline import base_config, write_case
from test_tone import dense_poisson_solve


def verdict(name, ok, detail=""):
    line = f"[acceptance] {name}: {'PASS' if ok else 'FAIL'}"
    if detail:
        line += f"  ({detail})"
    print(line)
    assert ok, line


def _alignment_trials(n_trials=200, w=905, h=453, n=400, outlier_frac=0.3,
                      noise_px=1.0, seed=2024):
    rng = np.random.default_rng(seed)
    trials = []
    for _ in range(n_trials):
        t = SimilarityTransform2D(
            rng.uniform(0.8, 1.3), rng.uniform(0.8, 1.3),
            rng.uniform(-w / 4, w / 4), rng.uniform(-h / 8, h / 8))
        pa = np.column_stack([rng.uniform(0, w, n), rng.uniform(0, h, n)])
        xb, yb = t.apply(pa[:, 0], pa[:, 1], w=w)
        pb = np.column_stack([xb, yb]) + rng.normal(0, noise_px, (n, 2))
        k = int(outlier_frac * n)
        idx = rng.choice(n, k, replace=False)
        pb[idx] = np.column_stack([rng.uniform(0, w, k), rng.uniform(0, h, k)])
        pb[:, 0] = np.mod(pb[:, 0], w)
        straddles = bool((np.abs(xb - np.mod(xb, w)) > 1e-9).any()) or t.tx < 0
        trials.append((t, pa, pb, straddles))
    return trials


@pytest.fixture(scope="module")
def alignment_trials():
    return _alignment_trials()


@pytest.fixture(scope="module")
def alignment_fits(alignment_trials):
    w, h = 905, 453
    t0 = time.perf_counter()
    fits = [fit_scale_translation(pa, pb, w, iters=500, seed=i)[0]
            for i, (t, pa, pb, _) in enumerate(alignment_trials)]
    elapsed = time.perf_counter() - t0
    errs = [corner_displacement(est, t, w, h)
            for est, (t, _, _, _) in zip(fits, alignment_trials)]
    return fits, np.asarray(errs), elapsed


def test_alignment_recovery(alignment_trials, alignment_fits):
    """200 trials, 30% outliers, 1 px noise: >= 95% within 0.5 px, < 5 s."""
    fits, errs, elapsed = alignment_fits
    w, h = 905, 453
    ok_frac = float(np.mean(errs <= 0.5))
    # seam-straddling trials must land on tx mod W, not a +/-W alias
    alias_free = all(
        abs(wrap_diff(est.tx - t.tx, w)) <= abs(wrap_diff(est.tx - t.tx + w, w)) + 1e-9
        and corner_displacement(est, t, w, h) <= 0.5
        for est, (t, _, _, s) in zip(fits, alignment_trials) if s)
    verdict("alignment-recovery",
            ok_frac >= 0.95 and elapsed < 5.0 and alias_free,
            f"{ok_frac:.1%} within 0.5 px, {elapsed:.2f}s")


def test_similarity_vs_homography(alignment_trials, alignment_fits):
    """Similarity corner error <= homography's in >= 90% of the trials."""
    _, sim_errs, _ = alignment_fits
    w, h = 905, 453
    cx = np.array([0.0, w - 1.0, 0.0, w - 1.0])
    cy = np.array([0.0, 0.0, h - 1.0, h - 1.0])
    wins = 0
    for i, (t, pa, pb, _) in enumerate(alignment_trials):
        try:
            alt = fit_alt(pa, pb, "homography", iters=150, seed=i)
            hx, hy = alt.apply(cx, cy)
            tx, ty = t.apply(cx, cy, w=w)
            herr = float(np.max(np.hypot(wrap_diff(hx - tx, w), hy - ty)))
        except Exception:
            herr = np.inf
        if sim_errs[i] <= herr:
            wins += 1
    frac = wins / len(alignment_trials)
    verdict("similarity-vs-homography", frac >= 0.90, f"similarity wins {frac:.1%}")


def test_histogram_matching():
    """Per-category, per-channel CDF L-inf <= 2/256 on masks >= 1e4 px."""
    rng = np.random.default_rng(11)
    h, w = 200, 400
    base = rng.uniform(0.1, 0.9, (h, w, 3)).astype(np.float32)
    gen = np.clip(base * 1.05 + 0.03, 0, 1).astype(np.float32)
    ids = np.zeros((h, w), np.uint8)
    ids[50:100] = 1
    ids[100:150] = 2
    ids[150:] = 3
    palette = {0: "sky", 1: "building", 2: "tree", 3: "earth"}
    labels = LabelMap(ids, palette)
    cover = np.ones((h, w), bool)
    selection = select_categories(labels, cover)
    corrected, warns, _ = tone.correct_intensity(
        base, labels, gen, labels, cover, selection)
    worst = 0.0
    for cid in (1, 2, 3):
        mask = ids == cid
        assert mask.sum() >= 10_000
        d = float(np.max(np.abs(tone.cdf(corrected, mask) - tone.cdf(gen, mask))))
        worst = max(worst, d)
    verdict("histogram-matching", worst <= 2.0 / 256.0 and not warns,
            f"worst CDF L-inf {worst * 256:.3f}/256")


def _stencil_residual(sol, img, region, guide, membrane=False):
    """Relative residual of the 5-point system (x wrap, y clamp), float64."""
    h, w = region.shape
    ys, xs = np.nonzero(region)
    lhs = np.zeros(len(ys))
    rhs = np.zeros(len(ys))
    solf = np.asarray(sol, dtype=np.float64)
    imgf = np.asarray(img, dtype=np.float64)
    gf = np.zeros_like(imgf) if membrane else np.asarray(guide, dtype=np.float64)
    for dy, dx in ((-1, 0), (1, 0), (0, -1), (0, 1)):
        ny = ys + dy
        nx = np.mod(xs + dx, w)
        exists = (ny >= 0) & (ny < h) if dy != 0 else np.ones(len(ys), bool)
        nyc = np.clip(ny, 0, h - 1)
        inner = exists & region[nyc, nx]
        outer = exists & ~region[nyc, nx]
        lhs += exists * solf[ys, xs] - np.where(inner, solf[nyc, nx], 0.0)
        rhs += np.where(outer, imgf[nyc, nx], 0.0)
        rhs += np.where(exists, gf[ys, xs] - gf[nyc, nx], 0.0)
    return float(np.linalg.norm(lhs - rhs) / max(np.linalg.norm(rhs), 1e-30))


def test_poisson_solver(rng):
    h, w = 64, 128
    img = ndimage.gaussian_filter(rng.random((h, w)), 2.0).astype(np.float32)
    img = (0.3 + 0.4 * img).astype(np.float32)
    guide = ndimage.gaussian_filter(rng.random((h, w)), 3.0).astype(np.float32)
    guide = (0.3 + 0.4 * guide).astype(np.float32)

    blob = ndimage.binary_dilation(rng.random((h, w)) > 0.995, iterations=6)
    blob[0] = blob[-1] = False
    seam = np.zeros((h, w), bool)
    seam[20:50, 110:] = True
    seam[20:50, :15] = True
    small = np.zeros((h, w), bool)
    small[5:69 - 5, 30:94] = True  # 54x64 block for the dense comparison

    worst_res = 0.0
    for region in (blob, seam, small):
        sol = tone.poisson_level(img, region, guide)
        worst_res = max(worst_res, _stencil_residual(sol, img, region, guide))
    residual_ok = worst_res < 1e-6

    dense_err = 0.0
    for region in (seam, small):
        sol = tone.poisson_level(img, region, guide)
        ys, xs, dense = dense_poisson_solve(img, region, guide, h, w)
        dense_err = max(dense_err, float(np.abs(sol[ys, xs] - dense).max()))
    dense_ok = dense_err < 1e-5

    const = np.full((h, w), 0.375, np.float32)
    filled = tone.poisson_level(const, blob, const, membrane=True)
    const_err = float(np.abs(filled - 0.375).max())
    const_ok = const_err < 1e-8

    principle_ok = True
    ring_struct = ndimage.generate_binary_structure(2, 1)
    for k in range(100):
        r = np.random.default_rng(k)
        hh, ww = 20, 40
        im = r.random((hh, ww)).astype(np.float32)
        y0, x0 = int(r.integers(1, 10)), int(r.integers(0, ww))
        reg = np.zeros((hh, ww), bool)
        cols = np.mod(np.arange(x0, x0 + int(r.integers(4, 14))), ww)
        rows = np.arange(y0, y0 + int(r.integers(4, 9)))
        reg[np.ix_(rows, cols)] = True
        sol = tone.poisson_level(im, reg, im, membrane=True)
        ring = ndimage.binary_dilation(reg, structure=ring_struct) & ~reg
        # wrap the ring across the seam too
        ring |= np.roll(reg, 1, axis=1) & ~reg
        ring |= np.roll(reg, -1, axis=1) & ~reg
        lo, hi = im[ring].min(), im[ring].max()
        if sol[reg].min() < lo - 1e-6 or sol[reg].max() > hi + 1e-6:
            principle_ok = False
            break
    verdict("poisson-solver",
            residual_ok and dense_ok and const_ok and principle_ok,
            f"residual {worst_res:.2e}, dense {dense_err:.2e}, "
            f"const {const_err:.2e}, max-principle {'ok' if principle_ok else 'violated'}")


def test_projection_roundtrip(rng):
    h, w = 128, 256
    img = ndimage.gaussian_filter(rng.random((h, w, 3)), (2.0, 2.0, 0))
    img = img.astype(np.float32)
    view = PerspectiveView(yaw=0.4, pitch=0.25, h_fov=math.radians(100),
                           width=160, height=120)
    persp = extract_perspective(img, view)
    inserted, written = insert_perspective(
        np.zeros_like(img), persp, view, np.ones((120, 160), bool))
    mse = float(np.mean((inserted[written] - img[written]) ** 2))
    psnr = 10.0 * math.log10(1.0 / mse)

    u = rng.uniform(0, w, 10_000)
    # pixel centers sit at integers; latitude is valid for v in [-0.5, h-0.5)
    v = rng.uniform(-0.5, h - 0.5, 10_000)
    d = dir_from_equirect(u, v, w, h)
    u2, v2 = equirect_from_dir(d, w, h)
    rt = float(np.max(np.hypot(wrap_diff(u2 - u, w), v2 - v)))
    verdict("projection-roundtrip", psnr > 40.0 and rt < 1e-6,
            f"PSNR {psnr:.1f} dB, roundtrip {rt:.2e} px")


def test_sky_fill():
    h, w = 96, 192
    img = np.zeros((h, w, 3), np.float32)
    t = np.linspace(0, 1, h)[:, None]
    img[..., 0] = 0.35 + 0.3 * t
    img[..., 1] = 0.5 + 0.25 * t
    img[..., 2] = 0.95 - 0.25 * t
    img[h // 2:] = 0.2
    ids = np.ones((h, w), np.uint8)
    ids[: h // 2] = 0
    labels = LabelMap(ids, {0: "sky", 1: "other"})
    cover = np.ones((h, w), bool)
    cover[:10] = False          # polar cap never seen
    cover[:, 60:110] = False    # plus a missing swath down to the horizon
    plan = build_sky_plan(labels, labels, cover)

    stale = img.copy()
    stale[plan.hole_mask] = (1.0, 0.0, 1.0)  # magenta marker
    out, _ = repair_sky(stale, plan, InpaintParams(patch_size=7))
    marker = np.all(np.isclose(out[plan.hole_mask], (1.0, 0.0, 1.0)), axis=-1)
    holes_left = int(marker.sum())

    src = img[plan.copy_mask]
    filled = out[plan.hole_mask]
    tol = 2.0 / 255.0
    copy_only = all(
        filled[:, c].min() >= src[:, c].min() - tol
        and filled[:, c].max() <= src[:, c].max() + tol
        for c in range(3))

    yy = np.linspace(0.2, 0.8, 50)[:, None]
    truth = np.tile(yy, (1, 50)).astype(np.float32)
    truth += np.random.default_rng(0).normal(0, 0.01, truth.shape).astype(np.float32)
    truth = np.clip(truth, 0, 1)
    hole = np.zeros((50, 50), bool)
    hole[15:35, 20:45] = True
    damaged = truth.copy()
    damaged[hole] = 0.0
    rec = inpaint_exemplar(damaged, hole, ~hole, InpaintParams(patch_size=7))
    holdout = float(np.abs(rec[hole] - truth[hole]).mean())

    verdict("sky-fill",
            holes_left == 0 and copy_only and holdout < 8.0 / 255.0,
            f"{holes_left} hole px left, copy-only {copy_only}, "
            f"holdout {holdout * 255:.2f}/255")


def test_end_to_end_relight(tmp_path):
    """905x453 synthetic relight: >= 70% median error reduction, < 120 s."""
    cv2.setNumThreads(1)
    img, labels = make_scene(453, seed=5)
    img = img[:, :905]
    labels = LabelMap(labels.ids[:, :905].copy(), dict(labels.palette))
    spec = SyntheticSpec(
        tone_curves={"building": (1.25, 0.05), "tree": (0.8, -0.03),
                     "earth": (1.2, 0.06), "plant": (0.85, 0.0)},
        transform=SimilarityTransform2D(1.08, 1.04, 40.0, -6.0))
    case = make_synthetic_case(img, labels, spec)
    paths = write_case(tmp_path, case)
    t0 = time.perf_counter()
    out, _ = run_pipeline(base_config(paths, tmp_path / "out"))
    elapsed = time.perf_counter() - t0
    m = score(out, case.ground_truth, case.pre_labels, uncorrected=case.precap)
    ratio = m["improvement_ratio"]
    verdict("end-to-end-relight", ratio >= 0.70 and elapsed < 120.0,
            f"median error reduced {ratio:.1%}, {elapsed:.1f}s")


def test_determinism(tmp_path):
    img, labels = make_scene(128, seed=1)
    spec = SyntheticSpec(
        tone_curves={"building": (1.15, 0.02), "tree": (0.9, -0.02)},
        transform=SimilarityTransform2D(1.05, 1.02, 12.0, -3.0))
    case = make_synthetic_case(img, labels, spec)
    paths = write_case(tmp_path, case)
    blobs = []
    for sub in ("a", "b"):
        run_pipeline(base_config(paths, tmp_path / sub))
        blobs.append(((tmp_path / sub / "stage7_result.png").read_bytes(),
                      (tmp_path / sub / "transform.json").read_bytes()))
    same = blobs[0] == blobs[1]
    verdict("determinism", same, "byte-identical result and transform")


def test_degradation_earth_vs_grass(tmp_path):
    """Label-name disagreement completes with a warning, never aborts."""
    img, labels = make_scene(128, seed=1)
    case = make_synthetic_case(img, labels, SyntheticSpec(tone_curves={}))
    palette = dict(PALETTE)
    palette[5] = "grass"
    case.gen_labels.ids[case.gen_labels.ids == 3] = 5
    paths = write_case(tmp_path, case, palette)
    try:
        _, report = run_pipeline(base_config(paths, tmp_path / "out"))
        warned = any("grass" in w for w in report.warnings)
        poissoned = "earth" not in report.cdf_distances
        verdict("degradation-earth-vs-grass", warned and poissoned,
                "completed with warning; mismatched region left to leveling")
    except Exception as exc:  # noqa: BLE001 - any abort fails the criterion
        verdict("degradation-earth-vs-grass", False, f"aborted: {exc!r}")
