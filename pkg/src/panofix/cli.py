"""Command line entry points: run, synth, score.

Exit codes: 0 success, 1 validation error, 2 stage failure.
"""

from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import click
import numpy as np

from panofix import harness
from panofix.align import SimilarityTransform2D
from panofix.errors import PanofixError, StageError, ValidationError
from panofix.imgcore import read_image, write_image, write_mask
from panofix.pipeline import PipelineConfig, run as run_pipeline
from panofix.segment import load_labels


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Enable debug logging.")
def main(verbose):
    """Correct a pre-captured omnidirectional image from a phone panorama."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )


@main.command("run")
@click.option("--precap", required=True, help="Pre-captured equirect PNG.")
@click.option("--panorama", default=None, help="Pre-stitched panorama PNG.")
@click.option("--cover", default=None, help="Panorama coverage mask PNG.")
@click.option("--frames", "frames_dir", default=None,
              help="Directory of numbered video-frame PNGs (alternative to --panorama).")
@click.option("--hfov", "h_fov_deg", default=110.0, show_default=True,
              help="Horizontal FOV of the frames, degrees.")
@click.option("--labels-pre", default=None, help="Label map PNG for the pre-captured image.")
@click.option("--labels-gen", default=None, help="Label map PNG for the panorama.")
@click.option("--palette", default=None, help="Palette file, 'id,name' per line.")
@click.option("--matches", default=None, help="Precomputed matches CSV (xa,ya,xb,yb[,score]).")
@click.option("--transform", default="similarity", show_default=True,
              type=click.Choice(["similarity", "affine", "homography"]))
@click.option("--rounds", default=3, show_default=True)
@click.option("--ransac-iters", default=2000, show_default=True)
@click.option("--inlier-px", default=3.0, show_default=True)
@click.option("--eps", default=0.5, show_default=True)
@click.option("--zenith-fov", "zenith_fov_deg", default=150.0, show_default=True)
@click.option("--patch-size", default=9, show_default=True)
@click.option("--seed", default=42, show_default=True)
@click.option("--out", "out_dir", required=True, help="Output directory.")
@click.option("--dump", is_flag=True, help="Write every intermediate artifact.")
@click.option("--feather", is_flag=True, help="Feather blends at overlap/sky seams.")
@click.option("--membrane", is_flag=True, help="Zero-guidance Poisson leveling.")
@click.option("--uniform-scale", is_flag=True, help="Force sx == sy in alignment.")
@click.option("--fallback-sky", is_flag=True,
              help="Heuristic sky-only segmentation instead of label maps.")
@click.option("--skip-sky", is_flag=True, help="Skip the sky stage entirely.")
def cmd_run(**kwargs):
    """Run the full correction pipeline."""
    config = PipelineConfig(**kwargs)
    try:
        _, report = run_pipeline(config)
    except ValidationError as exc:
        click.echo(f"validation error: {exc}", err=True)
        sys.exit(1)
    except StageError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)
    for wmsg in report.warnings:
        click.echo(f"warning: {wmsg}", err=True)
    click.echo(f"done; result written to {Path(config.out_dir) / 'stage7_result.png'}")


@main.command("synth")
@click.option("--base", required=True, help="Base equirect PNG (the 'true' scene).")
@click.option("--labels", required=True, help="Label map PNG for the base image.")
@click.option("--palette", required=True, help="Palette file, 'id,name' per line.")
@click.option("--sx", default=1.1, show_default=True)
@click.option("--sy", default=1.05, show_default=True)
@click.option("--tx", default=25.0, show_default=True)
@click.option("--ty", default=-6.0, show_default=True)
@click.option("--gain", default=1.25, show_default=True,
              help="Relight gain applied to every non-sky category.")
@click.option("--bias", default=0.05, show_default=True)
@click.option("--coverage", default=None,
              help="x0,x1,y0,y1 panorama coverage window (x wraps when x0 > x1).")
@click.option("--seed", default=0, show_default=True)
@click.option("--out", "out_dir", required=True)
def cmd_synth(base, labels, palette, sx, sy, tx, ty, gain, bias, coverage,
              seed, out_dir):
    """Build a synthetic relight case with known ground truth."""
    try:
        base_img = read_image(base)
        label_map = load_labels(labels, palette)
        curves = {name: (gain, bias) for name in label_map.palette.values()
                  if name != "sky"}
        cov = tuple(int(v) for v in coverage.split(",")) if coverage else None
        spec = harness.SyntheticSpec(
            tone_curves=curves, coverage=cov, seed=seed,
            transform=SimilarityTransform2D(sx, sy, tx, ty),
        )
        case = harness.make_synthetic_case(base_img, label_map, spec)
    except (PanofixError, ValueError) as exc:
        click.echo(f"validation error: {exc}", err=True)
        sys.exit(1)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_image(case.precap, out / "precap.png")
    write_image(case.panorama, out / "panorama.png")
    write_mask(case.cover, out / "cover.png")
    write_image(case.ground_truth, out / "ground_truth.png")
    from panofix.imgcore import write_ids
    write_ids(case.pre_labels.ids, out / "labels_pre.png")
    write_ids(case.gen_labels.ids, out / "labels_gen.png")
    with open(out / "truth.json", "w") as fh:
        json.dump(case.transform.as_dict(), fh, indent=2)
    click.echo(f"synthetic case written to {out}")


@main.command("score")
@click.option("--result", required=True)
@click.option("--truth", required=True)
@click.option("--labels", required=True)
@click.option("--palette", required=True)
@click.option("--uncorrected", default=None)
def cmd_score(result, truth, labels, palette, uncorrected):
    """Score a corrected image against the synthetic ground truth."""
    try:
        res = read_image(result)
        gt = read_image(truth)
        label_map = load_labels(labels, palette)
        unc = read_image(uncorrected) if uncorrected else None
        metrics = harness.score(res, gt, label_map, uncorrected=unc)
    except (PanofixError, ValueError) as exc:
        click.echo(f"validation error: {exc}", err=True)
        sys.exit(1)
    click.echo(json.dumps(metrics, indent=2))


if __name__ == "__main__":
    main()
