"""Command-line front end: gen-data, explain, benchmark, render.

Every command is deterministic from (arguments, seed) except wall-clock
timing fields. Output directories are guarded against partial results: each
command drops an ``INCOMPLETE`` marker file on entry and removes it on
success, so an interrupted or failed run is always recognizable.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric error.
The ``DETXPLAIN_LOG`` environment variable sets the log level (DEBUG, INFO,
WARNING, ERROR).
"""

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .config import DETECTOR_CHOICES, RunConfig, load_run_config
from .dataio import jsonable, load_dataset, read_sal, write_dataset, write_sal
from .detectors import SyntheticDetector
from .errors import (ConfigurationError, DataError, DegenerateInputError,
                     DetXplainError, NumericError)
from .imaging import SaliencyMap
from .metrics import run_benchmark
from .minicnn import MiniCNN
from .render import render_heatmap_overlay, save_png
from .runner import STATUS_OK, check_methods, param_float, param_int, run_many
from .synthetic import generate_dataset_scenes

log = logging.getLogger("detxplain")

INCOMPLETE_MARKER = "INCOMPLETE"


def build_detector(cfg: RunConfig):
    """Construct the configured detector, applying ``detector.*`` params."""
    kwargs = {}
    for name, getter in (("tau", param_float), ("nms_iou", param_float),
                         ("input_size", param_int), ("stride", param_int),
                         ("proposal_count", param_int)):
        value = getter(cfg.params, f"detector.{name}", None)
        if value is not None:
            kwargs[name] = value
    if cfg.detector == "minicnn":
        return MiniCNN(**kwargs)
    return SyntheticDetector(**kwargs)


def _begin_out(out) -> Path:
    if out is None:
        raise ConfigurationError("an output directory is required (--out)")
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    marker = out_dir / INCOMPLETE_MARKER
    marker.write_text("this run has not finished; treat outputs as partial\n")
    return out_dir


def _finish_out(out_dir: Path) -> None:
    marker = out_dir / INCOMPLETE_MARKER
    if marker.exists():
        marker.unlink()


def _load_config(args, **overrides) -> RunConfig:
    return load_run_config(
        getattr(args, "config", None),
        dataset=getattr(args, "dataset", None),
        detector=getattr(args, "detector", None),
        methods=getattr(args, "methods", None),
        metrics=getattr(args, "metrics", None),
        out=getattr(args, "out", None),
        seed=getattr(args, "seed", None),
        workers=getattr(args, "workers", None),
        **overrides)


def cmd_gen_data(args) -> int:
    if args.count < 1:
        raise ConfigurationError(f"count must be >= 1, got {args.count}")
    cfg = _load_config(args)
    out_dir = _begin_out(cfg.out)
    scenes = generate_dataset_scenes(args.count, args.height, args.width,
                                     cfg.seed)
    write_dataset(out_dir, scenes)
    _finish_out(out_dir)
    log.info("wrote %d scenes to %s", args.count, out_dir)
    return 0


def _select_images(images, image_ids):
    if not image_ids:
        return images
    by_id = {img.image_id: img for img in images}
    missing = [i for i in image_ids if i not in by_id]
    if missing:
        raise DataError(f"unknown image ids: {', '.join(missing)} "
                        f"(dataset has {len(images)} images)")
    return [by_id[i] for i in image_ids]


def cmd_explain(args) -> int:
    cfg = _load_config(args)
    if cfg.dataset is None:
        raise ConfigurationError("a dataset directory is required (--dataset)")
    images = _select_images(load_dataset(cfg.dataset), args.image_ids)
    detector = build_detector(cfg)
    check_methods(detector, cfg.methods)

    out_dir = _begin_out(cfg.out)
    per_image = run_many(detector, images, cfg.methods, master_seed=cfg.seed,
                         workers=cfg.workers, params=cfg.params)
    for image, results in zip(images, per_image):
        entries = []
        for result in results:
            artifacts = []
            if result.status == STATUS_OK:
                stem = result.artifact_name
                write_sal(out_dir / f"{stem}.sal1", result.values)
                overlay = render_heatmap_overlay(
                    image, SaliencyMap(values=result.values,
                                       method_name=result.method),
                    boxes=list(image.boxes or []))
                save_png(out_dir / f"{stem}.png", overlay)
                artifacts = [f"{stem}.sal1", f"{stem}.png"]
            entry = {"method": result.method, "status": result.status,
                     "seconds": result.seconds, "artifacts": artifacts}
            if result.detection_index is not None:
                entry["detection_index"] = result.detection_index
            entry.update(jsonable(result.info))
            entries.append(entry)
        payload = {"image_id": image.image_id, "detector": cfg.detector,
                   "seed": cfg.seed, "results": entries}
        with open(out_dir / f"{image.image_id}.json", "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
    _finish_out(out_dir)
    log.info("explained %d images into %s", len(images), out_dir)
    return 0


def cmd_benchmark(args) -> int:
    cfg = _load_config(args)
    if cfg.dataset is None:
        raise ConfigurationError("a dataset directory is required (--dataset)")
    images = load_dataset(cfg.dataset)
    detector = build_detector(cfg)
    check_methods(detector, cfg.methods)

    out_dir = _begin_out(cfg.out)
    report, per_image = run_benchmark(images, detector, cfg.methods,
                                      cfg.metrics, master_seed=cfg.seed,
                                      workers=cfg.workers, params=cfg.params)
    (out_dir / "report.csv").write_text(report.to_csv())
    (out_dir / "aggregates.json").write_text(report.to_json())
    sal_dir = out_dir / "sal"
    sal_dir.mkdir(exist_ok=True)
    for image, results in zip(images, per_image):
        for method in cfg.methods:
            lead = next(r for r in results if r.method == method)
            if lead.status == STATUS_OK:
                write_sal(sal_dir / f"{lead.artifact_name}.sal1", lead.values)
    _finish_out(out_dir)
    print(report.table())
    return 0


def cmd_render(args) -> int:
    cfg = _load_config(args)
    if cfg.dataset is None:
        raise ConfigurationError("a dataset directory is required (--dataset)")
    if cfg.out is None:
        raise ConfigurationError("the directory holding .sal1 files is "
                                 "required (--out)")
    images = {img.image_id: img for img in load_dataset(cfg.dataset)}
    out_dir = Path(cfg.out)
    sal_files = sorted(out_dir.rglob("*.sal1"))
    if not sal_files:
        raise DataError(f"{out_dir}: no .sal1 files to render")
    rendered = 0
    for sal_path in sal_files:
        stem = sal_path.stem
        image_id = stem.split("_", 1)[0]
        image = images.get(image_id)
        if image is None:
            log.warning("%s: no image %r in dataset, skipped", sal_path,
                        image_id)
            continue
        values = read_sal(sal_path)
        overlay = render_heatmap_overlay(
            image, SaliencyMap(values=abs(values), method_name=stem),
            boxes=list(image.boxes or []))
        save_png(sal_path.with_suffix(".png"), overlay)
        rendered += 1
    log.info("rendered %d overlays under %s", rendered, out_dir)
    return 0


def _add_common_flags(sub, *names):
    if "dataset" in names:
        sub.add_argument("--dataset", help="dataset directory (with annotations.json)")
    if "detector" in names:
        sub.add_argument("--detector", choices=DETECTOR_CHOICES,
                         help="detector to explain (default: minicnn)")
    if "methods" in names:
        sub.add_argument("--methods", help="comma-separated method names")
    if "metrics" in names:
        sub.add_argument("--metrics", help="comma-separated metric names")
    if "out" in names:
        sub.add_argument("--out", help="output directory")
    if "seed" in names:
        sub.add_argument("--seed", type=int, help="master seed (default: 0)")
    if "workers" in names:
        sub.add_argument("--workers", type=int,
                         help="parallel worker processes (default: 1)")
    if "config" in names:
        sub.add_argument("--config", help="key = value config file; flags override")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="detxplain",
        description="Explain and evaluate two-stage object detectors.")
    commands = parser.add_subparsers(dest="command", required=True)

    gen = commands.add_parser("gen-data",
                              help="generate a synthetic nodule dataset")
    gen.add_argument("count", type=int, help="number of scenes")
    gen.add_argument("height", type=int, nargs="?", default=128)
    gen.add_argument("width", type=int, nargs="?", default=128)
    _add_common_flags(gen, "out", "seed", "config")
    gen.set_defaults(func=cmd_gen_data)

    explain = commands.add_parser("explain",
                                  help="produce saliency maps and overlays")
    explain.add_argument("image_ids", nargs="*", metavar="image_id",
                         help="image ids to explain (default: all)")
    _add_common_flags(explain, "dataset", "detector", "methods", "out",
                      "seed", "workers", "config")
    explain.set_defaults(func=cmd_explain)

    bench = commands.add_parser("benchmark",
                                help="run methods and metrics over a dataset")
    _add_common_flags(bench, "dataset", "detector", "methods", "metrics",
                      "out", "seed", "workers", "config")
    bench.set_defaults(func=cmd_benchmark)

    render = commands.add_parser("render",
                                 help="re-render overlays from saved .sal1 files")
    _add_common_flags(render, "dataset", "out", "config")
    render.set_defaults(func=cmd_render)
    return parser


def _configure_logging() -> None:
    name = os.environ.get("DETXPLAIN_LOG", "WARNING").upper()
    level = getattr(logging, name, None)
    if not isinstance(level, int):
        level = logging.WARNING
    logging.basicConfig(level=level,
                        format="%(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    _configure_logging()
    args = build_parser().parse_args(argv)
    try:
        return int(args.func(args) or 0)
    except ConfigurationError as err:
        log.error("configuration error: %s", err)
        return 2
    except DataError as err:
        log.error("data error: %s", err)
        return 3
    except (NumericError, DegenerateInputError) as err:
        log.error("numeric error: %s", err)
        return 4
    except DetXplainError as err:
        log.error("internal error: %s", err)
        return 4


if __name__ == "__main__":
    sys.exit(main())
