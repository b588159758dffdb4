"""Command line front end: ``rrm mine | loss | eval | selftest | synth``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .cam import DEFAULT_GAMMA, DEFAULT_SCALES, validate_class_set
from .crf import CrfConfig
from .evalkit import confusion, format_iou_table, miou, pseudo_label_report
from .gradcheck import finite_difference, max_relative_error
from .labels import SelectionConfig, mine_reliable_regions
from .losses import EnergyConfig, cross_entropy_masked, energy_loss, joint_seg_loss, soft_filter_weights
from .selftest import run_selftest
from .synth import bright_square, fixture_family
from .tensor_io import (
    atomic_write_bytes,
    read_image,
    read_label_map,
    read_tensor,
    write_image,
    write_label_map,
    write_tensor,
)

EXIT_OK, EXIT_FAILED, EXIT_USAGE = 0, 1, 2


def _round9(obj):
    if isinstance(obj, float):
        return float(f"{obj:.9g}")
    if isinstance(obj, dict):
        return {str(k): _round9(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round9(v) for v in obj]
    return obj


def dumps(obj):
    return json.dumps(_round9(obj), indent=2, sort_keys=True)


def _write_json(path, obj):
    atomic_write_bytes(path, (dumps(obj) + "\n").encode("utf-8"))


def _load_json_or_inline(value, base):
    if value is None:
        return {}
    if isinstance(value, dict):
        return value
    return json.loads((base / value).read_text())


def _add_config_flags(parser, cls, skip=()):
    """One ``--field`` flag (plus a dashed alias) per dataclass field."""
    for f in dataclasses.fields(cls):
        if f.name in skip:
            continue
        kind = type(f.default) if f.default is not None else float
        flags = [f"--{f.name}"]
        if "_" in f.name:
            flags.append(f"--{f.name.replace('_', '-')}")
        parser.add_argument(*flags, dest=f"{cls.__name__}.{f.name}", type=kind, default=None)


def _config_from(cls, base, args):
    merged = dict(base)
    for f in dataclasses.fields(cls):
        v = getattr(args, f"{cls.__name__}.{f.name}", None)
        if v is not None:
            merged[f.name] = v
    if cls is SelectionConfig:
        given = {f: getattr(args, f"SelectionConfig.{f}", None) for f in ("mode", "ratio", "alpha")}
        if given["mode"] is None and (given["alpha"] is None) != (given["ratio"] is None):
            merged["mode"] = "fixed_alpha" if given["alpha"] is not None else "per_class_ratio"
        # the field belonging to the other mode is dropped unless set explicitly
        unused = "ratio" if merged.get("mode") == "fixed_alpha" else "alpha"
        if given[unused] is None:
            merged[unused] = None
    return cls.from_dict(merged)


# -- mine ---------------------------------------------------------------------


def load_manifest(path):
    """Read and validate a mining manifest; paths are resolved against its directory."""
    path = Path(path)
    data = json.loads(path.read_text())
    base = path.parent
    num_classes = int(data.get("num_classes", 20))
    scales = tuple(float(s) for s in data.get("scales", DEFAULT_SCALES))
    records = []
    for i, rec in enumerate(data.get("images", [])):
        rid = str(rec.get("id", f"image{i:04d}"))
        classes = validate_class_set(rec["classes"], num_classes)
        feats = [base / p for p in rec["features"]]
        if len(feats) != len(scales):
            raise ValueError(f"{rid}: {len(feats)} feature tensors for {len(scales)} scales")
        entry = {
            "id": rid,
            "image": base / rec["image"],
            "features": feats,
            "weights": base / rec["weights"],
            "classes": classes,
        }
        for p in [entry["image"], entry["weights"], *feats]:
            if not p.exists():
                raise FileNotFoundError(f"{rid}: missing {p}")
        records.append(entry)
    return {
        "num_classes": num_classes,
        "scales": scales,
        "gamma": float(data.get("gamma", DEFAULT_GAMMA)),
        "selection": _load_json_or_inline(data.get("selection"), base),
        "crf": _load_json_or_inline(data.get("crf"), base),
        "energy": _load_json_or_inline(data.get("energy"), base),
        "images": records,
    }


def _mine_one(rec, manifest, sel, crf_cfg, out_dir):
    image = read_image(rec["image"])
    table = read_tensor(rec["weights"])
    if table.ndim != 2 or table.shape[0] != manifest["num_classes"]:
        raise ValueError(f"weights must be ({manifest['num_classes']}, D), got {table.shape}")
    weights = table[[c - 1 for c in rec["classes"]]]
    feats = [read_tensor(p) for p in rec["features"]]
    final = mine_reliable_regions(feats, weights, image, rec["classes"], manifest["gamma"], sel, crf_cfg)
    write_label_map(final, out_dir / f"{rec['id']}.png", manifest["num_classes"])
    report = pseudo_label_report(final, final)
    sidecar = {
        "id": rec["id"],
        "image": str(rec["image"]),
        "classes": list(rec["classes"]),
        "labeled_ratio": report["labeled_ratio"],
        "per_class_ratio": {c: v["ratio"] for c, v in report["per_class"].items()},
        "config": {
            "scales": list(manifest["scales"]),
            "gamma": manifest["gamma"],
            "selection": sel.to_dict(),
            "crf": crf_cfg.to_dict(),
        },
    }
    _write_json(out_dir / f"{rec['id']}.json", sidecar)
    return sidecar


def _worker_count():
    raw = os.environ.get("RRM_THREADS", "0").strip() or "0"
    n = int(raw)
    if n < 0:
        raise ValueError(f"RRM_THREADS must be >= 0, got {n}")
    return n


def cmd_mine(args):
    manifest = load_manifest(args.manifest)
    sel = _config_from(SelectionConfig, manifest["selection"], args)
    crf_cfg = _config_from(CrfConfig, manifest["crf"], args)
    if args.gamma is not None:
        manifest["gamma"] = args.gamma
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    def run(rec):
        try:
            return rec["id"], _mine_one(rec, manifest, sel, crf_cfg, out_dir), None
        except Exception as exc:  # recorded per image; the batch keeps going
            return rec["id"], None, f"{type(exc).__name__}: {exc}"

    workers = _worker_count()
    if workers == 0:
        results = [run(r) for r in manifest["images"]]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, manifest["images"]))

    errors = [{"id": rid, "error": err} for rid, _, err in results if err]
    for e in errors:
        print(f"error: {e['id']}: {e['error']}", file=sys.stderr)
    if errors:
        _write_json(out_dir / "errors.json", errors)
    summary = {
        "images": len(results),
        "succeeded": len(results) - len(errors),
        "failed": len(errors),
        "labeled_ratio": {rid: side["labeled_ratio"] for rid, side, _ in results if side},
    }
    print(dumps(summary))
    return EXIT_FAILED if errors else EXIT_OK


# -- loss ---------------------------------------------------------------------


def cmd_loss(args):
    probs = read_tensor(args.probs).astype(np.float64)
    if probs.ndim != 3:
        raise ValueError(f"probabilities must be (C, H, W), got {probs.shape}")
    image = read_image(args.image)
    labels = read_label_map(args.labels, num_classes=probs.shape[0] - 1)
    base = json.loads(Path(args.config).read_text()) if args.config else {}
    if args.brute:
        base["fast_path"] = "brute"
    elif args.lattice:
        base["fast_path"] = "lattice"
    cfg = _config_from(EnergyConfig, base, args)

    ce = cross_entropy_masked(probs, labels)
    en = energy_loss(probs, image, labels, cfg)
    out = {"ce": ce.value, "energy": en.value, "joint": ce.value + en.value}
    failed = False

    if args.grad_out:
        write_tensor(ce.grad + en.grad, args.grad_out)

    if args.check_grad:
        s = soft_filter_weights(probs, labels, cfg.soft_filter == "enabled")
        stop = cfg.soft_filter_grad == "stop"
        analytic = joint_seg_loss(probs, image, labels, cfg).grad

        def total(q):
            e = energy_loss(q, image, labels, cfg, soft_weights=s if stop else None).value
            return e + cross_entropy_masked(q, labels).value

        rng = np.random.default_rng(args.seed)
        n = probs.size
        idx = np.sort(rng.choice(n, size=min(n, args.fd_samples), replace=False))
        numeric = finite_difference(total, probs, h=args.fd_step, indices=idx)
        err = max_relative_error(analytic, numeric)
        out["grad_check"] = {"max_rel_error": err, "samples": int(len(idx)), "step": args.fd_step}
        failed |= not err <= 1e-4

    if args.compare_paths:
        brute = energy_loss(probs, image, labels, dataclasses.replace(cfg, fast_path="brute"))
        lat = energy_loss(probs, image, labels, dataclasses.replace(cfg, fast_path="lattice"))
        rel = abs(lat.value - brute.value) / max(abs(brute.value), 1e-300)
        grad_rel = float(np.linalg.norm(lat.grad - brute.grad) / max(np.linalg.norm(brute.grad), 1e-300))
        ok = rel <= args.tolerance and grad_rel <= args.tolerance
        out["path_comparison"] = {
            "brute_energy": brute.value,
            "lattice_energy": lat.value,
            "value_rel_diff": rel,
            "grad_rel_l2": grad_rel,
            "tolerance": args.tolerance,
            "pass": ok,
        }
        failed |= not ok

    print(dumps(out))
    return EXIT_FAILED if failed else EXIT_OK


# -- eval ---------------------------------------------------------------------


def cmd_eval(args):
    pred_dir, gt_dir = Path(args.pred_dir), Path(args.gt_dir)
    preds = {p.name for p in pred_dir.glob("*.png")}
    gts = {p.name for p in gt_dir.glob("*.png")}
    if preds != gts:
        missing = sorted(preds ^ gts)
        print(f"error: unmatched files: {', '.join(missing[:10])}", file=sys.stderr)
        return EXIT_FAILED
    k = args.num_classes + 1
    cm = np.zeros((k, k), dtype=np.int64)
    for name in sorted(preds):
        gt = read_label_map(gt_dir / name, args.num_classes)
        pred = read_label_map(pred_dir / name, args.num_classes)
        cm += confusion(gt, pred, args.num_classes)
    mean, ious = miou(cm)
    if args.json:
        print(dumps({
            "images": len(preds),
            "miou": mean,
            "iou": {c: (None if np.isnan(v) else float(v)) for c, v in enumerate(ious)},
        }))
    else:
        print(format_iou_table(ious, mean))
    return EXIT_OK


# -- selftest / synth -----------------------------------------------------------


def cmd_selftest(args):
    base = json.loads(Path(args.config).read_text()) if args.config else {}
    cfg = _config_from(EnergyConfig, base, args)
    return EXIT_OK if run_selftest(args.seed, cfg) else EXIT_FAILED


def cmd_synth(args):
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    fixtures = (
        fixture_family(args.count, seed=args.seed)
        if args.family
        else [bright_square(seed=args.seed + i) for i in range(args.count)]
    )
    num_classes = 20
    records = []
    for i, fx in enumerate(fixtures):
        rid = f"synth{i:03d}"
        write_image(fx.image, out / f"{rid}.png")
        write_label_map(fx.gt, out / f"{rid}_gt.png", num_classes)
        table = np.zeros((num_classes, fx.weights.shape[1]), dtype=np.float32)
        for row, c in zip(fx.weights, fx.classes):
            table[c - 1] = row
        write_tensor(table, out / f"{rid}_weights.rrmt")
        names = []
        for s, f in zip(fx.scales, fx.features):
            name = f"{rid}_s{s:g}.rrmt"
            write_tensor(f, out / name)
            names.append(name)
        records.append({
            "id": rid,
            "image": f"{rid}.png",
            "classes": list(fx.classes),
            "features": names,
            "weights": f"{rid}_weights.rrmt",
        })
    manifest = {
        "num_classes": num_classes,
        "scales": list(fixtures[0].scales) if fixtures else list(DEFAULT_SCALES),
        "gamma": DEFAULT_GAMMA,
        "images": records,
    }
    _write_json(out / "manifest.json", manifest)
    print(dumps({"written": len(records), "manifest": str(out / "manifest.json")}))
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="rrm", description="Pseudo-label mining and dense energy loss toolkit")
    parser.add_argument("--version", action="version", version=f"rrm {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("mine", help="mine reliable pseudo labels for every image in a manifest")
    p.add_argument("manifest")
    p.add_argument("out_dir")
    p.add_argument("--gamma", type=float, default=None)
    _add_config_flags(p, SelectionConfig)
    _add_config_flags(p, CrfConfig)
    p.set_defaults(func=cmd_mine)

    p = sub.add_parser("loss", help="evaluate the joint segmentation loss")
    p.add_argument("--probs", required=True, help="(C, H, W) probability tensor")
    p.add_argument("--image", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--config", help="EnergyConfig JSON")
    _add_config_flags(p, EnergyConfig)
    path = p.add_mutually_exclusive_group()
    path.add_argument("--brute", action="store_true", help="exact filtering")
    path.add_argument("--lattice", action="store_true", help="lattice filtering")
    p.add_argument("--grad-out", dest="grad_out")
    p.add_argument("--check-grad", dest="check_grad", action="store_true")
    p.add_argument("--fd-samples", dest="fd_samples", type=int, default=64)
    p.add_argument("--fd-step", dest="fd_step", type=float, default=1e-5)
    p.add_argument("--compare-paths", dest="compare_paths", action="store_true")
    p.add_argument("--tolerance", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_loss)

    p = sub.add_parser("eval", help="mIoU of predicted label maps against ground truth")
    p.add_argument("pred_dir")
    p.add_argument("gt_dir")
    p.add_argument("--num-classes", "--num_classes", dest="num_classes", type=int, default=20)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("selftest", help="run the embedded property checks")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", help="EnergyConfig JSON")
    _add_config_flags(p, EnergyConfig)
    p.set_defaults(func=cmd_selftest)

    p = sub.add_parser("synth", help="write synthetic fixtures and a manifest")
    p.add_argument("out_dir")
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--family", action="store_true", help="harder randomized variants")
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError, KeyError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
