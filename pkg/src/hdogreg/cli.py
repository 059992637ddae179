"""Command-line interface.

Every subcommand reads an optional JSON config, applies ``--set KEY=VALUE``
overrides and writes fixed-name outputs into ``--output-dir``. Multi-image
commands take a JSON manifest (a list of objects); relative paths in it are
resolved against the manifest's directory.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import clustering, io
from .combiner import combine_masks
from .config import PipelineConfig
from .errors import DataError, FormatError, HDoGRegError, ParameterError
from .hessian_blob import hdog_segment, label_components
from .image import GrayImage
from .metrics import (
    ScoredImage,
    detection_table,
    default_thresholds,
    froc_from_table,
    froc_svg,
    iou_per_object,
    mean_iou_per_image,
    operating_point,
    pauc_bootstrap,
    curve_pauc,
)
from .phantom import PhantomSpec, generate
from .proximity import proximity_map
from .regressor import PatchSet, extract_patches, load_external_proximity, predict_full, train

log = logging.getLogger("hdogreg")

DEFAULT_P_THR = 0.5


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _write_csv(path: Path, header, rows):
    lines = [",".join(header)]
    lines += [",".join(_fmt(v) for v in row) for row in rows]
    io._write_bytes(path, ("\n".join(lines) + "\n").encode("utf-8"))


def _write_kv(path: Path, items: dict):
    text = "".join(f"{k}={_fmt(v)}\n" for k, v in items.items())
    io._write_bytes(path, text.encode("utf-8"))


def _load_manifest(path) -> tuple[list[dict], Path]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except FileNotFoundError:
        raise FormatError(f"{path}: no such file") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: not valid JSON ({exc})") from None
    if not isinstance(data, list) or not all(isinstance(e, dict) for e in data):
        raise FormatError(f"{path}: manifest must be a JSON list of objects")
    if not data:
        raise DataError(f"{path}: manifest is empty")
    return data, Path(path).resolve().parent


def _entry_path(entry: dict, key: str, base: Path, required: bool = True):
    if key not in entry:
        if required:
            raise FormatError(f"manifest entry {entry!r} lacks {key!r}")
        return None
    p = Path(entry[key])
    return p if p.is_absolute() else base / p


def _p_thr(cfg: PipelineConfig) -> float:
    if cfg.p_thr is None:
        log.info("p_thr not set; using %s", DEFAULT_P_THR)
        return DEFAULT_P_THR
    return cfg.p_thr


def _check_shape(a, b, what):
    if np.shape(a) != np.shape(b):
        raise DataError(f"{what}: shapes {np.shape(a)} and {np.shape(b)} differ")


# --- subcommands ----------------------------------------------------------


def cmd_hdog(args, cfg: PipelineConfig, out: Path):
    image = io.read_image(args.image, args.pixel_spacing)
    mask, blobs = hdog_segment(image, cfg.hdog(), threads=args.threads)
    io.write_mask_pgm(out / "candidates.pgm", mask)
    _write_blobs(out / "blobs.csv", blobs)


def _write_blobs(path, blobs):
    _write_csv(path, ["x", "y", "sigma", "response"], [(b.x, b.y, b.sigma, b.response) for b in blobs])


def cmd_proximity(args, cfg, out):
    ann = io.read_mask(args.annotations)
    io.write_mcf1(out / "proximity.mcf", proximity_map(ann, cfg.proximity()), cfg.pixel_spacing_mm)


def _training_sets(entries, base, cfg):
    train_sets, val_sets = [], []
    for e in entries:
        image = io.read_image(_entry_path(e, "image", base), cfg.pixel_spacing_mm)
        target_path = _entry_path(e, "proximity", base, required=False)
        if target_path is not None:
            target, _ = load_external_proximity(target_path)
        else:
            target = proximity_map(io.read_mask(_entry_path(e, "annotations", base)), cfg.proximity())
        _check_shape(image.data, target, f"training entry {e.get('image')}")
        val = e.get("split") == "val"
        ps = extract_patches(image, target, cfg.patch_size, cfg.patch_stride, require_positive=not val)
        (val_sets if val else train_sets).append(ps)
    if not train_sets:
        raise DataError("manifest has no training entries")
    patches = PatchSet.concatenate(train_sets)
    if len(patches) == 0:
        raise DataError("no training patch contains a positive target pixel")
    validation = PatchSet.concatenate(val_sets) if val_sets else None
    return patches, validation


def cmd_train(args, cfg, out):
    entries, base = _load_manifest(args.manifest)
    patches, validation = _training_sets(entries, base, cfg)
    result = train(patches, cfg.regressor(), augment=cfg.augment, validation=validation)
    io.save_model(out / "model.mcm", result.model)
    rows = []
    for epoch, loss in enumerate(result.losses):
        val = result.val_iou[epoch] if epoch < len(result.val_iou) else ""
        rows.append((epoch, loss, val))
    _write_csv(out / "losses.csv", ["epoch", "loss", "val_iou"], rows)


def _predict(model_path, image, cfg, threads):
    model = io.load_model(model_path)
    return predict_full(model, image, cfg.tile, cfg.tile_overlap, threads=threads)


def cmd_predict(args, cfg, out):
    image = io.read_image(args.image, args.pixel_spacing)
    prox = _predict(args.model, image, cfg, args.threads)
    io.write_mcf1(out / "proximity.mcf", prox, image.pixel_spacing_mm)


def cmd_combine(args, cfg, out):
    cand = io.read_mask(args.candidates)
    prox, _ = load_external_proximity(args.proximity)
    _check_shape(cand, prox, "combine")
    final = combine_masks(cand, prox, _p_thr(cfg), cfg.o_thr, cfg.overlap_mode)
    io.write_mask_pgm(out / "final.pgm", final)


def _proximity_for(args, image: GrayImage, cfg):
    sources = [s for s in (args.model, args.proximity_map, args.annotations) if s]
    if len(sources) != 1:
        raise ParameterError("segment needs exactly one of --model, --proximity-map or --annotations")
    if args.model:
        return _predict(args.model, image, cfg, args.threads)
    if args.proximity_map:
        return load_external_proximity(args.proximity_map)[0]
    return proximity_map(io.read_mask(args.annotations), cfg.proximity())


def cmd_segment(args, cfg, out):
    image = io.read_image(args.image, args.pixel_spacing)
    prox = _proximity_for(args, image, cfg)
    _check_shape(image.data, prox, "segment")
    cand, blobs = hdog_segment(image, cfg.hdog(), threads=args.threads)
    final = combine_masks(cand, prox, _p_thr(cfg), cfg.o_thr, cfg.overlap_mode)
    io.write_mask_pgm(out / "candidates.pgm", cand)
    io.write_mcf1(out / "proximity.mcf", prox, image.pixel_spacing_mm)
    io.write_mask_pgm(out / "final.pgm", final)
    _write_blobs(out / "blobs.csv", blobs)


def cmd_eval_iou(args, cfg, out):
    entries, base = _load_manifest(args.manifest)
    rows, per_image, per_object = [], [], []
    for i, e in enumerate(entries):
        pred = io.read_mask(_entry_path(e, "prediction", base))
        ref_labels = io.read_labels(_entry_path(e, "reference", base))
        _check_shape(pred, ref_labels, f"entry {i}")
        img_iou = mean_iou_per_image(pred, ref_labels > 0)
        obj_mean, obj_values = iou_per_object(label_components(pred)[0], ref_labels)
        per_image.append(img_iou)
        per_object += list(obj_values)
        rows.append((e.get("id", i), img_iou, "" if obj_mean is None else obj_mean, len(obj_values)))
    _write_csv(out / "iou.csv", ["id", "iou_image", "iou_object_mean", "n_objects"], rows)
    summary = {
        "images": len(entries),
        "iou_image_mean": float(np.mean(per_image)),
        "iou_image_std": float(np.std(per_image)),
        "objects": len(per_object),
        "iou_object_mean": float(np.mean(per_object)) if per_object else "",
        "iou_object_std": float(np.std(per_object)) if per_object else "",
    }
    _write_kv(out / "iou_summary.txt", summary)


def cmd_eval_froc(args, cfg, out):
    entries, base = _load_manifest(args.manifest)
    images = []
    for i, e in enumerate(entries):
        cand = io.read_mask(_entry_path(e, "candidates", base))
        prox, _ = load_external_proximity(_entry_path(e, "proximity", base))
        ref = io.read_labels(_entry_path(e, "reference", base))
        _check_shape(cand, prox, f"entry {i}")
        _check_shape(cand, ref, f"entry {i}")
        images.append(ScoredImage(label_components(cand)[0], prox, ref, cfg.pixel_spacing_mm))
    table = detection_table(
        images, default_thresholds(cfg.froc_thresholds), cfg.match_rule(), cfg.o_thr, cfg.overlap_mode, args.threads
    )
    curve = froc_from_table(table)
    _write_csv(
        out / "froc.csv",
        ["p_thr", "tp", "fp", "fn", "tpr", "fp_per_cm2"],
        [(p.p_thr, p.tp, p.fp, p.fn, p.tpr, p.fp_per_cm2) for p in curve.points],
    )
    fp_range = (0.0, cfg.pauc_fp_max)
    op = operating_point(curve)
    summary = {"pauc": curve_pauc(curve, fp_range)}
    if table.n_images >= 2:
        boot = pauc_bootstrap(table, fp_range, cfg.bootstrap_samples, cfg.seed)
        summary.update(
            pauc_mean=boot.pauc_mean, pauc_low95=boot.pauc_low95, pauc_high95=boot.pauc_high95,
            bootstrap_samples=boot.samples,
        )
    summary.update(
        seed=cfg.seed, fp_min=fp_range[0], fp_max=fp_range[1],
        operating_p_thr=op.p_thr, operating_tpr=op.tpr, operating_fp_per_cm2=op.fp_per_cm2,
    )
    _write_kv(out / "pauc.txt", summary)
    if args.svg:
        io._write_bytes(out / "froc.svg", froc_svg(curve).encode("utf-8"))


def cmd_cluster(args, cfg, out):
    entries, base = _load_manifest(args.manifest)
    images = []
    for i, e in enumerate(entries):
        mask = io.read_mask(_entry_path(e, "mask", base))
        labels = e.get("labels", [])
        if isinstance(labels, str):
            labels = [labels]
        objs = clustering.describe_objects(mask, cfg.pixel_spacing_mm)
        images.append(clustering.ImageObjects(str(e.get("id", i)), objs, tuple(labels)))
    params = clustering.OpticsParams(cfg.optics_min_samples, cfg.optics_max_eps_mm, cfg.optics_eps_cut_mm)
    if cfg.tune_trials:
        result, _ = clustering.tune_optics(
            images, cfg.tune_trials, cfg.seed, cfg.kmeans_k, cfg.kmeans_restarts
        )
        if result is None:
            raise DataError("no parameter draw produced enough labelled clusters to score")
    else:
        result = clustering.characterize(images, params, cfg.kmeans_k, cfg.seed, cfg.kmeans_restarts)
    header = ["cluster_id", "image_id", *clustering.FEATURE_NAMES]
    _write_csv(
        out / "features.csv",
        header,
        [(i, img, *row) for i, (img, row) in enumerate(zip(result.cluster_image, result.features))],
    )
    if result.groups is not None:
        _write_csv(
            out / "kmeans.csv",
            ["cluster_id", "image_id", "group"],
            [(i, img, int(g)) for i, (img, g) in enumerate(zip(result.cluster_image, result.groups))],
        )
    p = result.params
    summary = {
        "clusters": len(result.features),
        "min_samples": p.min_samples,
        "max_eps_mm": p.max_eps,
        "eps_cut_mm": p.eps_cut,
        "k": cfg.kmeans_k,
        "homogeneity": "" if result.homogeneity is None else result.homogeneity,
    }
    _write_kv(out / "homogeneity.txt", summary)


def cmd_phantom(args, cfg, out):
    overrides = {}
    if args.spec:
        try:
            overrides = json.loads(Path(args.spec).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise FormatError(f"{args.spec}: no such file") from None
        except json.JSONDecodeError as exc:
            raise FormatError(f"{args.spec}: not valid JSON ({exc})") from None
    try:
        spec = replace(PhantomSpec(pixel_spacing_mm=cfg.pixel_spacing_mm), **overrides)
    except TypeError as exc:
        raise ParameterError(f"phantom spec: {exc}") from None
    ph = generate(spec, cfg.seed)
    io.write_image_pgm(out / "image.pgm", ph.image)
    io.write_mask_pgm(out / "truth.pgm", ph.truth_mask)
    io.write_mcf1(out / "labels.mcf", ph.truth_labels, spec.pixel_spacing_mm)
    io.write_mask_pgm(out / "annotations.pgm", ph.annotations)
    _write_csv(
        out / "blobs.csv",
        ["x", "y", "radius", "contrast", "cluster"],
        [(*map(float, b), int(c)) for b, c in zip(ph.blobs, ph.blob_cluster)],
    )
    _write_kv(out / "phantom.txt", {"seed": cfg.seed, "objects": ph.n_objects,
                                    "distribution": ";".join(ph.distribution_labels)})


# --- parser ---------------------------------------------------------------


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="JSON configuration file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
    p.add_argument("--threads", type=int, default=1, help="worker threads (results do not depend on it)")
    p.add_argument("--seed", type=int, help="overrides the config seed")
    p.add_argument("--output-dir", default=".", help="directory for outputs")
    p.add_argument("--pixel-spacing", type=float, help="pixel spacing in mm for PGM inputs")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hdogreg", description="Microcalcification segmentation pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("hdog", help="candidate mask and blob list")
    p.add_argument("image")
    p.set_defaults(func=cmd_hdog)

    p = sub.add_parser("proximity", help="proximity map from an annotation mask")
    p.add_argument("annotations")
    p.set_defaults(func=cmd_proximity)

    p = sub.add_parser("train", help="train the proximity regressor from a manifest")
    p.add_argument("manifest")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="proximity map from a trained model")
    p.add_argument("model")
    p.add_argument("image")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("combine", help="fuse a candidate mask with a proximity map")
    p.add_argument("candidates")
    p.add_argument("proximity")
    p.set_defaults(func=cmd_combine)

    p = sub.add_parser("segment", help="full pipeline on one image")
    p.add_argument("image")
    p.add_argument("--model")
    p.add_argument("--proximity-map")
    p.add_argument("--annotations", help="build the proximity map from annotations")
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("eval", help="evaluation")
    esub = p.add_subparsers(dest="metric", required=True)
    q = esub.add_parser("iou", help="pixel and object IoU")
    q.add_argument("manifest")
    q.set_defaults(func=cmd_eval_iou)
    _common(q)
    q = esub.add_parser("froc", help="FROC curve and partial AUC")
    q.add_argument("manifest")
    q.add_argument("--svg", action="store_true", help="also write froc.svg")
    q.set_defaults(func=cmd_eval_froc)
    _common(q)

    p = sub.add_parser("cluster", help="cluster characterization")
    p.add_argument("manifest")
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("phantom", help="synthetic image with ground truth")
    p.add_argument("--spec", help="JSON object of phantom fields")
    p.set_defaults(func=cmd_phantom)

    for name, sp in sub.choices.items():
        if name != "eval":
            _common(sp)
    return parser


def _config(args) -> PipelineConfig:
    cfg = PipelineConfig.load(args.config) if args.config else PipelineConfig()
    cfg = cfg.with_overrides(args.set)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.pixel_spacing is not None:
        cfg = replace(cfg, pixel_spacing_mm=args.pixel_spacing)
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        if args.threads < 1:
            raise ParameterError(f"--threads must be >= 1, got {args.threads}")
        cfg = _config(args)
        out = Path(args.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        args.func(args, cfg, out)
    except HDoGRegError as exc:
        print(f"hdogreg: {exc.category} error: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
