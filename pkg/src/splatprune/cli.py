"""Command-line interface: ``splatprune {render,diagnose,prune,metrics,poses}``.

Every subcommand validates its inputs before doing any work, never writes
to an input path, and exits 0 only when every per-item operation
succeeded. Failures are reported on stderr as a JSON object
``{"errors": [{"item": ..., "message": ...}, ...]}`` and the exit code is 1
(2 for command-line usage errors).
"""

from __future__ import annotations

import argparse
import csv
import io as _io
import json
import logging
import math
import re
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from splatprune import io as sio
from splatprune.metrics import PSNR_CAP, PatchSpec, local_pearson_loss, psnr, ssim
from splatprune.modality import MIN_DIP_SAMPLES
from splatprune.plotting import histogram_counts, plot_delta_histogram, plot_depth_panels
from splatprune.poses import PoseSampler, estimate_axis, sample_novel_poses
from splatprune.pruner import (
    PruneConfig,
    diagnose_views,
    prune_floaters,
    relative_diff,
    threshold_from_dip,
    threshold_percentile,
)
from splatprune.raster import RenderOptions, render

log = logging.getLogger("splatprune")

EPILOG = """\
defaults: a=97 and b=-8 (threshold curve percentile = a*exp(b*mean_dip)),
patch size 128 px with half of the patch grid sampled per image, novel-view
angles drawn uniformly from [-10, 10] degrees.

reserved settings: lambda_depth and lambda_sds weight the depth-correlation
and score-distillation terms during training. Training is out of scope for
this tool, so they are documented here only and accepted by no subcommand.
"""


class CliError(Exception):
    """Fatal problem with the inputs; reported before any output is written."""

    def __init__(self, item: str, message: str):
        super().__init__(message)
        self.item = item
        self.message = message


@dataclass
class Outcome:
    errors: list[dict] = field(default_factory=list)

    def fail(self, item, message):
        log.error("%s: %s", item, message)
        self.errors.append({"item": str(item), "message": str(message)})

    def attempt(self, item, fn: Callable, *args, **kwargs):
        """Run one per-item step; record a failure instead of raising."""
        try:
            return fn(*args, **kwargs)
        except (ValueError, OSError) as err:
            self.fail(item, err)
            return None


def _safe_name(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]+", "_", name) or "view"


def _need_file(path: Path, what: str):
    if not path.is_file():
        raise CliError(str(path), f"{what} not found")


def _need_dir(path: Path, what: str):
    if not path.is_dir():
        raise CliError(str(path), f"{what} is not a directory")


def _make_dir(path: Path):
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as err:
        raise CliError(str(path), f"cannot create output directory: {err}") from None


def _same_file(a: Path, b: Path) -> bool:
    return a.resolve() == b.resolve()


def _load_inputs(scene_path: Path, cameras_path: Path):
    _need_file(scene_path, "scene")
    _need_file(cameras_path, "camera file")
    try:
        scene = sio.read_ply(scene_path)
    except (ValueError, OSError) as err:
        raise CliError(str(scene_path), str(err)) from None
    try:
        cameras = sio.read_cameras(cameras_path)
    except (ValueError, OSError) as err:
        raise CliError(str(cameras_path), str(err)) from None
    if not cameras:
        raise CliError(str(cameras_path), "camera file lists no cameras")
    return scene, cameras


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return repr(x) if math.isfinite(x) else str(x)
    return str(x)


def _write_csv(path: Path | None, header: Sequence[str], rows: Sequence[Sequence]) -> str:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    text = buf.getvalue()
    if path is not None:
        path.write_text(text)
    return text


def _prune_config(args) -> PruneConfig:
    try:
        return PruneConfig(a=args.a, b=args.b, power_thresh=args.power_thresh)
    except ValueError as err:
        raise CliError("config", str(err)) from None


# ---------------------------------------------------------------------------
# render


def cmd_render(args) -> Outcome:
    scene, cameras = _load_inputs(Path(args.scene), Path(args.cameras))
    try:
        opts = RenderOptions(tile_size=args.tile_size, background=tuple(args.background))
    except ValueError as err:
        raise CliError("config", str(err)) from None
    out = Path(args.outdir)
    dirs = {k: out / k for k in ("color", "d_alpha", "d_mode")}
    for d in dirs.values():
        _make_dir(d)
    if args.figures:
        _make_dir(out / "figures")

    result = Outcome()
    for cam in cameras:
        name = _safe_name(cam.image_name)
        r = result.attempt(cam.image_name, render, scene, cam, opts)
        if r is None:
            continue
        result.attempt(cam.image_name, sio.write_png, dirs["color"] / f"{name}.png", r.color)
        result.attempt(cam.image_name, sio.write_pfm, dirs["d_alpha"] / f"{name}.pfm", r.d_alpha)
        result.attempt(cam.image_name, sio.write_pfm, dirs["d_mode"] / f"{name}.pfm", r.d_mode)
        if args.figures:
            result.attempt(
                cam.image_name,
                plot_depth_panels,
                r.d_alpha,
                r.d_mode,
                relative_diff(r),
                out / "figures" / f"{name}.png",
                title=cam.image_name,
            )
        print(f"{cam.image_name}\t{name}.png")
    return result


# ---------------------------------------------------------------------------
# diagnose

SUMMARY_HEADER = ("view", "status", "n_positive", "dip", "percentile", "tau")


def cmd_diagnose(args) -> Outcome:
    scene, cameras = _load_inputs(Path(args.scene), Path(args.cameras))
    cfg = _prune_config(args)
    out = Path(args.outdir)
    _make_dir(out)
    result = Outcome()
    if len(scene) == 0:
        result.fail(args.scene, "scene has no gaussians")
        return result

    views, _, d_bar = diagnose_views(scene, cameras)
    perc = threshold_percentile(d_bar, cfg) if d_bar is not None else None
    rows = []
    for view in views:
        name = _safe_name(view.name)
        status = "skipped" if view.skipped else "ok"
        # skipped views still get a cutoff when they have positive values,
        # exactly as the prune pass treats them
        tau = threshold_from_dip(view.delta, d_bar, cfg) if perc is not None and view.n_positive else None
        counts, edges = histogram_counts(view.delta, args.bins)
        _write_csv(
            out / f"hist_{name}.csv",
            ("bin_lo", "bin_hi", "count"),
            [(float(edges[i]), float(edges[i + 1]), int(c)) for i, c in enumerate(counts)],
        )
        if args.figures:
            result.attempt(
                view.name,
                plot_delta_histogram,
                view.delta,
                out / f"hist_{name}.png",
                threshold=tau,
                dip=view.dip,
                title=view.name,
                bins=args.bins,
            )
        rows.append((view.name, status, view.n_positive, view.dip, perc if tau is not None else None, tau))
    rows.append(("mean", "ok" if d_bar is not None else "skipped", sum(v.n_positive for v in views), d_bar, perc, None))
    text = _write_csv(out / "summary.csv", SUMMARY_HEADER, rows)
    sys.stdout.write(text)
    if d_bar is None:
        log.warning("every view had fewer than %d positive differences; mean dip undefined", MIN_DIP_SAMPLES)
    return result


# ---------------------------------------------------------------------------
# prune


def cmd_prune(args) -> Outcome:
    scene_path, out_ply = Path(args.scene), Path(args.output)
    if out_ply.exists() and _same_file(scene_path, out_ply):
        raise CliError(str(out_ply), "output path equals the input scene; refusing to overwrite inputs")
    scene, cameras = _load_inputs(scene_path, Path(args.cameras))
    cfg = _prune_config(args)
    if len(scene) == 0:
        raise CliError(str(scene_path), "cannot prune an empty scene")
    report_dir = Path(args.report_dir) if args.report_dir else out_ply.with_name(out_ply.stem + "_report")
    _make_dir(out_ply.parent if str(out_ply.parent) else Path("."))
    _make_dir(report_dir)

    result = Outcome()
    rep = prune_floaters(scene, cameras, cfg)
    result.attempt(str(out_ply), sio.write_ply, scene, out_ply)
    view_records = []
    for view in rep.views:
        name = _safe_name(view.name)
        result.attempt(view.name, sio.write_pfm, report_dir / f"delta_{name}.pfm", view.delta)
        mask = view.mask if view.mask is not None else np.zeros(view.delta.shape, dtype=bool)
        result.attempt(view.name, sio.write_png, report_dir / f"mask_{name}.png", mask.astype(np.float64))
        if args.figures:
            result.attempt(
                view.name,
                plot_delta_histogram,
                view.delta,
                report_dir / f"hist_{name}.png",
                threshold=view.threshold,
                dip=view.dip,
                title=view.name,
            )
        view_records.append(
            {
                "view": view.name,
                "skipped": view.skipped,
                "n_positive": view.n_positive,
                "dip": view.dip,
                "tau": view.threshold,
                "mask_pixels": int(mask.sum()),
                "selected": sorted(view.selected),
            }
        )
    report = {
        "a": cfg.a,
        "b": cfg.b,
        "power_thresh": cfg.power_thresh,
        "mean_dip": rep.d_bar,
        "percentile": rep.percentile,
        "n_before": rep.n_before,
        "n_pruned": rep.n_pruned,
        "n_after": len(scene),
        "pruned_ids": rep.pruned_ids.tolist(),
        "views": view_records,
    }
    result.attempt("report", (report_dir / "report.json").write_text, json.dumps(report, indent=2) + "\n")
    print(f"pruned {rep.n_pruned} of {rep.n_before} gaussians -> {out_ply}")
    return result


# ---------------------------------------------------------------------------
# metrics

METRIC_HEADER = ("image", "psnr", "ssim", "depth_loss")


def _image_metrics(rendered: Path, truth: Path):
    a = sio.read_png(rendered)
    b = sio.read_png(truth)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: rendered {a.shape[:2]} vs ground truth {b.shape[:2]}")
    return min(psnr(a, b), PSNR_CAP), ssim(a, b)


def _depth_metric(rendered: Path, mono: Path, spec: PatchSpec):
    d = sio.read_pfm(rendered)
    ref = sio.read_depth_pfm(mono).values
    ref = sio.resample_depth(ref, *d.shape)
    return local_pearson_loss(d, ref, spec)


def cmd_metrics(args) -> Outcome:
    rendered, truth = Path(args.rendered), Path(args.ground_truth)
    _need_dir(rendered, "rendered image directory")
    _need_dir(truth, "ground-truth directory")
    depth_dir = Path(args.depth_dir) if args.depth_dir else None
    rdepth_dir = None
    if depth_dir is not None:
        _need_dir(depth_dir, "depth directory")
        rdepth_dir = Path(args.rendered_depth_dir) if args.rendered_depth_dir else rendered.parent / "d_alpha"
        _need_dir(rdepth_dir, "rendered depth directory")
    try:
        spec = PatchSpec(box_p=args.box_p, p_corr=args.p_corr, seed=args.seed)
    except ValueError as err:
        raise CliError("config", str(err)) from None

    result = Outcome()
    images = sorted(rendered.glob("*.png"))
    if not images:
        raise CliError(str(rendered), "no PNG images found")
    rows = []
    for img in images:
        gt = truth / img.name
        if not gt.is_file():
            result.fail(img.name, f"no ground-truth image {gt}")
            continue
        scores = result.attempt(img.name, _image_metrics, img, gt)
        if scores is None:
            continue
        loss = None
        if depth_dir is not None:
            loss = result.attempt(img.name, _depth_metric, rdepth_dir / f"{img.stem}.pfm", depth_dir / f"{img.stem}.pfm", spec)
        rows.append((img.name, scores[0], scores[1], loss))
    if rows:
        mean = ["mean", float(np.mean([r[1] for r in rows])), float(np.mean([r[2] for r in rows]))]
        losses = [r[3] for r in rows if r[3] is not None]
        mean.append(float(np.mean(losses)) if losses else None)
        rows.append(tuple(mean))
    text = _write_csv(Path(args.output) if args.output else None, METRIC_HEADER, rows)
    sys.stdout.write(text)
    return result


# ---------------------------------------------------------------------------
# poses


def cmd_poses(args) -> Outcome:
    cam_path, out = Path(args.cameras), Path(args.output)
    _need_file(cam_path, "camera file")
    if args.k < 1:
        raise CliError("k", "k must be at least 1")
    if out.exists() and _same_file(cam_path, out):
        raise CliError(str(out), "output path equals the input camera file; refusing to overwrite inputs")
    try:
        cameras = sio.read_cameras(cam_path)
        axis = estimate_axis(cameras, column=args.up_column)
        sampler = PoseSampler(
            tuple(axis.tolist()), (args.theta_min, args.theta_max), seed=args.seed, center=tuple(args.center)
        )
    except ValueError as err:
        raise CliError(str(cam_path), str(err)) from None
    _make_dir(out.parent if str(out.parent) else Path("."))
    result = Outcome()
    novel = sample_novel_poses(cameras, sampler, args.k)
    result.attempt(str(out), sio.write_cameras, novel, out)
    print(f"wrote {len(novel)} cameras to {out}")
    return result


# ---------------------------------------------------------------------------
# argument parsing


def _add_prune_flags(p):
    p.add_argument("--a", type=float, default=97.0, help="threshold curve scale, published setting")
    p.add_argument("--b", type=float, default=-8.0, help="threshold curve decay, published setting")
    p.add_argument(
        "--power-thresh",
        type=float,
        default=1.0 / 255.0,
        help="minimum alpha at the pixel for a gaussian to be selected",
    )


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = argparse.ArgumentParser(
        prog="splatprune",
        description="Render gaussian splat scenes, diagnose and prune floaters.",
        epilog=EPILOG,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("render", help="colour and depth maps per camera", formatter_class=fmt)
    p.add_argument("scene", help="3DGS binary PLY")
    p.add_argument("cameras", help="camera JSON file")
    p.add_argument("outdir")
    p.add_argument("--tile-size", type=int, default=16)
    p.add_argument("--background", type=float, nargs=3, default=[0.0, 0.0, 0.0], metavar=("R", "G", "B"))
    p.add_argument("--figures", action="store_true", help="also write depth panel PNGs")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("diagnose", help="relative-difference histograms and dip statistics", formatter_class=fmt)
    p.add_argument("scene")
    p.add_argument("cameras")
    p.add_argument("outdir")
    _add_prune_flags(p)
    p.add_argument("--bins", type=int, default=64)
    p.add_argument("--no-figures", dest="figures", action="store_false", help="skip histogram PNGs")
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("prune", help="remove floaters and write the repaired scene", formatter_class=fmt)
    p.add_argument("scene")
    p.add_argument("cameras")
    p.add_argument("output", help="repaired PLY path")
    p.add_argument("--report-dir", default=None, help="default: <output stem>_report next to the output")
    _add_prune_flags(p)
    p.add_argument("--no-figures", dest="figures", action="store_false", help="skip histogram PNGs")
    p.set_defaults(func=cmd_prune)

    p = sub.add_parser("metrics", help="PSNR, SSIM and patch depth correlation loss", formatter_class=fmt)
    p.add_argument("rendered", help="directory of rendered PNGs")
    p.add_argument("ground_truth", help="directory of reference PNGs with matching names")
    p.add_argument("--depth-dir", default=None, help="monocular depth PFMs named <image stem>.pfm")
    p.add_argument(
        "--rendered-depth-dir", default=None, help="rendered depth PFMs; default: d_alpha next to RENDERED"
    )
    p.add_argument("--box-p", type=int, default=128, help="patch side in pixels, published setting")
    p.add_argument("--p-corr", type=float, default=0.5, help="fraction of the patch grid sampled, published setting")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", default=None, help="also write the table to this CSV")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("poses", help="novel cameras rotated about the mean camera axis", formatter_class=fmt)
    p.add_argument("cameras")
    p.add_argument("output")
    p.add_argument("--k", type=int, required=True, help="number of cameras to generate")
    p.add_argument("--theta-min", type=float, default=-10.0, help="degrees, published setting")
    p.add_argument("--theta-max", type=float, default=10.0, help="degrees, published setting")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--up-column", type=int, default=0, choices=(0, 1, 2), help="rotation column taken as up")
    p.add_argument("--center", type=float, nargs=3, default=[0.0, 0.0, 0.0], metavar=("X", "Y", "Z"))
    p.set_defaults(func=cmd_poses)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        outcome = args.func(args)
    except CliError as err:
        outcome = Outcome()
        outcome.fail(err.item, err.message)
    if outcome.errors:
        sys.stderr.write(json.dumps({"errors": outcome.errors}) + "\n")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
