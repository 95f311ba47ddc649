"""Command-line entry points: degrade, train, infer, evaluate, make-extractor."""
import argparse
import csv
import logging
import os
import sys

import numpy as np

from . import imaging, metrics, reference
from .checkpoint import Checkpoint, CheckpointError
from .losses import ConfigError, load_extractor, random_extractor, save_extractor
from .training import (
    Pipeline,
    TrainConfig,
    TrainingDiverged,
    load_image_dir,
    train_edge_stage,
    train_sr_stage,
)

log = logging.getLogger("edgesr")


def _crop_to_multiple(img, scale):
    h, w = img.shape[:2]
    return img[: h - h % scale, : w - w % scale]


def _png_stems(directory):
    return {
        os.path.splitext(n)[0]: os.path.join(directory, n)
        for n in sorted(os.listdir(directory))
        if n.lower().endswith(".png")
    }


def cmd_degrade(args):
    if not os.path.isdir(args.input_dir):
        log.error("input directory not found: %s", args.input_dir)
        return 1
    os.makedirs(args.output_dir, exist_ok=True)
    rows = []
    for stem, path in _png_stems(args.input_dir).items():
        try:
            hr = imaging.read_png(path)
        except OSError as exc:
            log.warning("skipping unreadable %s: %s", path, exc)
            continue
        cropped = _crop_to_multiple(hr, args.scale)
        if cropped.shape[0] == 0 or cropped.shape[1] == 0:
            log.warning("skipping %s: smaller than scale %d", path, args.scale)
            continue
        if cropped.shape != hr.shape:
            log.warning("%s: cropped %dx%d -> %dx%d to be divisible by %d", stem,
                        hr.shape[0], hr.shape[1], cropped.shape[0], cropped.shape[1], args.scale)
        lr = imaging.degrade(cropped, args.scale, args.sigma_blur)
        name = f"{stem}.png"
        imaging.write_png(os.path.join(args.output_dir, name), lr)
        rows.append((name, os.path.basename(path), args.scale, args.sigma_blur,
                     cropped.shape[0], cropped.shape[1]))
    if not rows:
        log.error("no readable PNG images in %s", args.input_dir)
        return 1
    with open(os.path.join(args.output_dir, "manifest.csv"), "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["lr_file", "hr_file", "scale", "sigma", "hr_height", "hr_width"])
        writer.writerows(rows)
    print(f"wrote {len(rows)} LR images to {args.output_dir}")
    return 0


def _train_config(args):
    overrides = {
        "scale": args.scale,
        "seed": args.seed,
        "canny_sigma": args.sigma_canny,
        "degrade_sigma": args.sigma_blur,
    }
    if args.config:
        return TrainConfig.from_file(args.config, **overrides)
    return TrainConfig(**{k: v for k, v in overrides.items() if v is not None})


def cmd_train(args):
    cfg = _train_config(args)
    images, names = load_image_dir(args.data_dir, min_size=cfg.hr_size)
    if not images:
        log.error("no usable training images (>= %dpx) in %s", cfg.hr_size, args.data_dir)
        return 1
    log.info("training on %d images", len(images))
    resume = Checkpoint.load(args.resume) if args.resume else None
    ckpt_dir = cfg.resolved_checkpoint_dir()
    if args.stage in ("edge", "both"):
        edge_ckpt = train_edge_stage(cfg, images, resume=resume if args.stage == "edge" else None)
        print(f"edge stage finished at step {edge_ckpt.step}: {os.path.join(ckpt_dir, 'edge.pt')}")
    if args.stage in ("sr", "both"):
        if args.stage == "both":
            g1 = edge_ckpt
        elif args.checkpoint:
            g1 = Checkpoint.load(args.checkpoint)
        else:
            log.error("--stage sr needs --checkpoint pointing at a trained edge-stage checkpoint")
            return 1
        sr_ckpt = train_sr_stage(cfg, images, g1, resume=resume if args.stage == "sr" else None)
        print(f"sr stage finished at step {sr_ckpt.step}: {os.path.join(ckpt_dir, 'sr.pt')}")
    return 0


def cmd_infer(args):
    pipeline = Pipeline(args.checkpoint)
    if args.scale is not None and args.scale != pipeline.scale:
        log.error("checkpoint was trained for x%d, but --scale %d was requested", pipeline.scale, args.scale)
        return 1
    if args.sigma_canny is not None:
        pipeline.canny_sigma = args.sigma_canny
    lr = imaging.read_png(args.lr_image)
    if lr.shape[2] == 1:
        lr = np.repeat(lr, 3, axis=2)
    edges, sr = pipeline(lr)
    prefix = args.out_prefix
    os.makedirs(os.path.dirname(os.path.abspath(prefix)), exist_ok=True)
    imaging.write_png(f"{prefix}_sr.png", sr)
    imaging.write_png(f"{prefix}_edges.png", edges)
    written = [f"{prefix}_sr.png", f"{prefix}_edges.png"]
    if args.baselines:
        h, w = sr.shape[:2]
        for method in ("nearest", "bicubic"):
            path = f"{prefix}_{method}.png"
            imaging.write_png(path, imaging.interpolate(lr, h, w, method))
            written.append(path)
    for path in written:
        print(path)
    return 0


def _binary_edges(img):
    plane = img[..., 0] if img.ndim == 3 else img
    return (plane >= 0.5).astype(np.float64)


def evaluate(gt_dir, scale, method=None, pred_dir=None, pred_edges_dir=None, gt_edges_dir=None,
             sigma_blur=1.0, sigma_canny=2.0, dataset=None):
    """Score predictions (or an interpolation baseline) against ground truth.

    Returns ``(report, unpaired)`` where ``unpaired`` lists image ids that
    could not be scored.
    """
    if (method is None) == (pred_dir is None):
        raise ValueError("give exactly one of method or pred_dir")
    gt_files = _png_stems(gt_dir)
    pred_files = _png_stems(pred_dir) if pred_dir else None
    edge_files = _png_stems(pred_edges_dir) if pred_edges_dir else None
    gt_edge_files = _png_stems(gt_edges_dir) if gt_edges_dir else None
    name = dataset or os.path.basename(os.path.normpath(gt_dir))
    report = metrics.MetricsReport(name, scale, method or os.path.basename(os.path.normpath(pred_dir)))
    unpaired = []
    if pred_files is not None:
        unpaired += sorted(set(pred_files) - set(gt_files))
    for stem, gt_path in gt_files.items():
        gt = _crop_to_multiple(imaging.read_png(gt_path), scale)
        if pred_files is None:
            lr = imaging.degrade(gt, scale, sigma_blur)
            pred = imaging.interpolate(lr, gt.shape[0], gt.shape[1], method)
        elif stem in pred_files:
            pred = imaging.read_png(pred_files[stem])
            if pred.shape[:2] != gt.shape[:2]:
                log.warning("%s: prediction %s does not match ground truth %s", stem, pred.shape, gt.shape)
                unpaired.append(stem)
                continue
            if pred.shape[2] != gt.shape[2]:
                pred, gt = _match_channels(pred, gt)
        else:
            unpaired.append(stem)
            continue
        precision = recall = None
        if edge_files is not None:
            if stem not in edge_files:
                unpaired.append(stem)
                continue
            pred_edges = _binary_edges(imaging.read_png(edge_files[stem]))
            if gt_edge_files is not None and stem in gt_edge_files:
                gt_edges = _binary_edges(imaging.read_png(gt_edge_files[stem]))
            else:
                gray = gt if gt.shape[2] == 1 else imaging.to_grayscale(gt)
                gt_edges = imaging.canny(gray, sigma_canny)
            precision, recall = metrics.edge_precision_recall(pred_edges, gt_edges[: pred_edges.shape[0], : pred_edges.shape[1]])
        report.add(stem, metrics.psnr(pred, gt), metrics.ssim(pred, gt), precision, recall)
    return report, unpaired


def _match_channels(a, b):
    if a.shape[2] == 1:
        a = np.repeat(a, 3, axis=2)
    if b.shape[2] == 1:
        b = np.repeat(b, 3, axis=2)
    return a, b


def cmd_evaluate(args):
    try:
        report, unpaired = evaluate(
            args.gt_dir, args.scale, method=args.method, pred_dir=args.pred_dir,
            pred_edges_dir=args.pred_edges_dir, gt_edges_dir=args.gt_edges_dir,
            sigma_blur=args.sigma_blur, sigma_canny=args.sigma_canny, dataset=args.dataset,
        )
    except (ValueError, OSError) as exc:
        log.error("%s", exc)
        return 1
    for stem in unpaired:
        log.warning("unpaired image: %s", stem)
    if not report.per_image:
        log.error("no image pairs to evaluate")
        return 1
    refs = reference.lookup(dataset=report.dataset_name, scale=args.scale)
    text = report.to_text(refs)
    out = args.out_prefix
    os.makedirs(os.path.dirname(os.path.abspath(out)), exist_ok=True)
    with open(f"{out}.csv", "w") as f:
        f.write(report.to_csv())
    with open(f"{out}.txt", "w") as f:
        f.write(text)
    sys.stdout.write(text)
    return 0


def cmd_make_extractor(args):
    if args.torchvision_weights:
        model = load_extractor(args.torchvision_weights)
    else:
        log.warning("writing a RANDOMLY initialised VGG-19 trunk (width %.3g); "
                    "use --torchvision-weights for ImageNet features", args.width)
        model = random_extractor(args.width, args.seed)
    save_extractor(args.out, model)
    print(args.out)
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="edgesr", description="Edge-guided two-stage super-resolution")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, scale_required=False):
        p.add_argument("--scale", type=int, choices=imaging.SUPPORTED_SCALES, required=scale_required)
        p.add_argument("--sigma-blur", type=float, default=None, help="Gaussian width of the HR->LR blur")
        p.add_argument("--sigma-canny", type=float, default=None, help="Canny smoothing width")

    p = sub.add_parser("degrade", help="blur + subsample a directory of HR PNGs")
    p.add_argument("input_dir")
    p.add_argument("output_dir")
    common(p, scale_required=True)
    p.set_defaults(func=cmd_degrade)

    p = sub.add_parser("train", help="train the edge stage, the SR stage, or both")
    p.add_argument("data_dir", help="directory of HR PNG images")
    p.add_argument("--stage", choices=("edge", "sr", "both"), default="both")
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--checkpoint", help="edge-stage checkpoint (for --stage sr)")
    p.add_argument("--resume", help="checkpoint to resume the selected stage from")
    p.add_argument("--seed", type=int)
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="super-resolve one LR PNG")
    p.add_argument("lr_image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out-prefix", required=True)
    p.add_argument("--baselines", action="store_true", help="also write nearest and bicubic upscales")
    common(p)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("evaluate", help="PSNR/SSIM (and edge precision/recall) report")
    p.add_argument("gt_dir")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--pred-dir")
    group.add_argument("--method", choices=("bicubic", "nearest", "bilinear"))
    p.add_argument("--pred-edges-dir", help="predicted edge maps; enables precision/recall")
    p.add_argument("--gt-edges-dir", help="ground-truth edge maps (default: Canny of the HR image)")
    p.add_argument("--dataset", help="dataset name for the report (default: gt_dir name)")
    p.add_argument("--out-prefix", default="report")
    common(p, scale_required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("make-extractor", help="write a feature-extractor weight file")
    p.add_argument("out")
    p.add_argument("--torchvision-weights", help="torchvision vgg19 state dict to convert")
    p.add_argument("--width", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_make_extractor)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if args.command in ("degrade", "evaluate"):
        args.sigma_blur = 1.0 if args.sigma_blur is None else args.sigma_blur
        args.sigma_canny = 2.0 if args.sigma_canny is None else args.sigma_canny
    try:
        return args.func(args)
    except (ConfigError, CheckpointError, TrainingDiverged, ValueError) as exc:
        log.error("%s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
