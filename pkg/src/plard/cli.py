"""``plard`` command line: synthetic data, ADT images, training, inference, evaluation.

Exit codes: 0 success, 1 validation failure, 2 I/O failure, 3 numerical
failure.  Reports are JSON, images PNG.  Heavy modules are imported inside
the command functions so ``--threads`` can set the BLAS thread variables
before numpy loads.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

log = logging.getLogger("plard")

THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")


def _errors():
    from . import errors

    return errors


# ---------------------------------------------------------------------------
# Run configuration
# ---------------------------------------------------------------------------


@dataclass
class EvalOptions:
    bev: bool = False
    homography: Optional[list] = None  # 3x3 image -> grid; derived from calibration when absent
    grid_shape: Optional[list] = None
    x_range: tuple = (6.0, 46.0)
    y_range: tuple = (-10.0, 10.0)
    resolution: float = 0.1

    def __post_init__(self) -> None:
        err = _errors()
        if self.homography is not None:
            if self.grid_shape is None or len(self.grid_shape) != 2:
                raise err.ValidationError("eval.homography needs eval.grid_shape [rows, cols]")
            if len([v for row in self.homography for v in row]) != 9:
                raise err.ValidationError("eval.homography must be 3x3")
        if self.resolution <= 0:
            raise err.ValidationError("eval.resolution must be positive")
        self.x_range = tuple(float(v) for v in self.x_range)
        self.y_range = tuple(float(v) for v in self.y_range)
        if self.x_range[0] >= self.x_range[1] or self.y_range[0] >= self.y_range[1]:
            raise err.ValidationError("eval ranges must be increasing")


@dataclass
class RunConfig:
    train: dict = field(default_factory=dict)
    eval: dict = field(default_factory=dict)
    ablation: dict = field(default_factory=dict)
    train_dir: Optional[str] = None
    val_dir: Optional[str] = None
    test_dir: Optional[str] = None
    output_dir: str = "plard_out"

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        err = _errors()
        if not isinstance(d, dict):
            raise err.ValidationError("config must be a JSON object")
        unknown = sorted(set(d) - {f.name for f in fields(cls)})
        if unknown:
            raise err.ValidationError(f"unknown config keys: {unknown}")
        cfg = cls(**d)
        cfg.train_config()
        cfg.eval_options()
        cfg.ablation_config()
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        err = _errors()
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise err.InputError(f"cannot read config {path}: {exc}") from exc
        except ValueError as exc:
            raise err.ValidationError(f"config {path} is not valid JSON: {exc}") from exc
        return cls.from_dict(doc)

    def train_config(self):
        from .pipeline import TrainConfig

        return TrainConfig.from_dict(self.train)

    def eval_options(self) -> EvalOptions:
        err = _errors()
        unknown = sorted(set(self.eval) - {f.name for f in fields(EvalOptions)})
        if unknown:
            raise err.ValidationError(f"unknown eval keys: {unknown}")
        return EvalOptions(**self.eval)

    def ablation_config(self):
        from .ablation import AblationConfig

        return AblationConfig.from_dict(self.ablation)


def _require_dir(path, what: str) -> Path:
    p = Path(path)
    if not p.is_dir():
        raise _errors().InputError(f"{what} {p} is not a directory")
    return p


def _require_file(path, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise _errors().InputError(f"{what} {p} does not exist")
    return p


def _output_dir(path) -> Path:
    p = Path(path)
    if p.exists() and not p.is_dir():
        raise _errors().InputError(f"output {p} exists and is not a directory")
    p.mkdir(parents=True, exist_ok=True)
    return p


def _write_json(path, doc) -> None:
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _run_config(args) -> RunConfig:
    if args.config is None:
        raise _errors().ValidationError(f"'{args.command}' needs --config")
    return RunConfig.load(args.config)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_adt(args) -> int:
    from PIL import Image

    from .adt import adt_transform, rasterize_altitude
    from .lidar_io import load_calibration, load_point_cloud, project

    cloud = load_point_cloud(_require_file(args.cloud, "point cloud"))
    calib = load_calibration(_require_file(args.calib, "calibration"))
    out = Path(args.out)
    if out.parent != Path("") and not out.parent.is_dir():
        raise _errors().InputError(f"output directory {out.parent} does not exist")
    pts = project(cloud, calib, args.width, args.height)
    amap = rasterize_altitude(pts, args.width, args.height)
    res = adt_transform(amap, args.window, fixed_m=args.fixed_m)
    Image.fromarray(res.rescaled, "L").save(out)
    side = {"max_value": res.max_value, "occupied_pixels": int(amap.occupancy.sum()),
            "width": args.width, "height": args.height, "window": args.window}
    _write_json(out.with_suffix(".json"), side)
    log.info("ADT image %s: %d occupied pixels, max %.4g", out, side["occupied_pixels"], res.max_value)
    return 0


def cmd_synth(args) -> int:
    from .synthscene import CameraConfig, generate_dataset, save_dataset

    out = _output_dir(args.out)
    camera = CameraConfig(width=args.width, height=args.height)
    bundles, manifest = generate_dataset(args.count, args.seed or 0, args.corruption, camera)
    save_dataset(bundles, manifest, out)
    log.info("wrote %d scenes to %s", len(bundles), out)
    return 0


def cmd_train(args) -> int:
    from dataclasses import replace

    from . import autodiff as ad
    from .pipeline import build_model, checkpoint_metadata, evaluate, prepare_samples, train
    from .synthscene import load_dataset

    run = _run_config(args)
    config = run.train_config()
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    if run.train_dir is None:
        raise _errors().ValidationError("config needs train_dir")
    train_dir = _require_dir(run.train_dir, "train_dir")
    val_dir = _require_dir(run.val_dir, "val_dir") if run.val_dir else None
    test_dir = _require_dir(run.test_dir, "test_dir") if run.test_dir else None
    out = _output_dir(run.output_dir)

    samples = prepare_samples(load_dataset(train_dir), config.input_mode, config.window)
    val = prepare_samples(load_dataset(val_dir), config.input_mode, config.window) if val_dir else None
    model = build_model(config)
    result = train(model, samples, config, val)
    ad.save_checkpoint(out / "checkpoint.bin", model.params, checkpoint_metadata(config, result))
    _write_json(out / "train_log.json", {"epochs": result.log, "best_epoch": result.best_epoch,
                                         "best_val_maxf": result.best_val_maxf})
    if test_dir is not None:
        test = prepare_samples(load_dataset(test_dir), config.input_mode, config.window)
        _write_json(out / "test_report.json", evaluate(model, test).to_dict())
    log.info("checkpoint written to %s", out / "checkpoint.bin")
    return 0


def cmd_infer(args) -> int:
    import numpy as np

    from .evalkit import save_confidence_png
    from .pipeline import load_model, predict, prepare_sample
    from .synthscene import load_scene, scene_dirs

    ckpt = _require_file(args.checkpoint, "checkpoint")
    dirs = scene_dirs(_require_dir(args.scenes, "scene directory"))
    out = _output_dir(args.out)
    model, meta = load_model(ckpt)
    mode = meta["model"]["input_mode"]
    window = meta.get("train", {}).get("window", 7)
    timings: list = []
    for d in dirs:
        sample = prepare_sample(load_scene(d), mode, window)
        (prob,) = predict(model, [sample], batch_size=1, timings=timings)
        save_confidence_png(out / f"{d.name}.png", prob)
    # timings go to the log only so the output directory stays reproducible
    log.info("%d predictions, median %.4f s/im", len(dirs), float(np.median(timings)) if timings else 0.0)
    return 0


def _eval_options(args) -> EvalOptions:
    opts = RunConfig.load(args.config).eval_options() if args.config else EvalOptions()
    if args.bev:
        opts.bev = True
    return opts


def cmd_eval(args) -> int:
    from .evalkit import BevMapping, accumulate, aggregate, ground_bev_mapping, load_confidence_png, to_bev
    from .synthscene import load_scene, scene_dirs

    pred_dir = _require_dir(args.pred, "prediction directory")
    dirs = scene_dirs(_require_dir(args.gt, "ground-truth directory"))
    opts = _eval_options(args)
    for d in dirs:
        _require_file(pred_dir / f"{d.name}.png", "prediction")
    persp, bev, cats = [], [], []
    for d in dirs:
        scene = load_scene(d)
        prob = load_confidence_png(pred_dir / f"{d.name}.png")
        persp.append(accumulate(prob, scene.gt))
        cats.append(scene.category)
        if opts.bev:
            if opts.homography is not None:
                mapping = BevMapping(opts.homography, tuple(opts.grid_shape))
            else:
                mapping = ground_bev_mapping(scene.calib.sensor_to_image(), opts.x_range, opts.y_range,
                                             opts.resolution)
            bev.append(accumulate(to_bev(prob, mapping), to_bev(scene.gt, mapping, labels=True)))
    report = {"perspective": aggregate(persp, cats).to_dict(), "scenes": len(dirs)}
    if opts.bev:
        report["bev"] = aggregate(bev, cats).to_dict()
    text = json.dumps(report, indent=2, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def cmd_overlay(args) -> int:
    import numpy as np
    from PIL import Image

    from .evalkit import load_confidence_png

    _require_file(args.image, "image")
    _require_file(args.pred, "prediction")
    try:
        image = np.asarray(Image.open(args.image).convert("RGB"), dtype=np.float64)
    except OSError as exc:
        raise _errors().InputError(f"cannot read image {args.image}: {exc}") from exc
    prob = load_confidence_png(args.pred)
    if prob.shape != image.shape[:2]:
        raise _errors().ShapeMismatch(f"prediction {prob.shape} does not match image {image.shape[:2]}")
    a = (args.alpha * prob)[..., None]
    green = np.array([0.0, 255.0, 0.0])
    out = np.floor((1 - a) * image + a * green + 0.5).astype(np.uint8)
    Image.fromarray(out, "RGB").save(args.out)
    return 0


def cmd_ablate(args) -> int:
    from . import ablation as ab

    run = _run_config(args)
    cfg = run.ablation_config()
    out = _output_dir(run.output_dir)
    seeds = args.seeds if args.seeds else [args.seed]
    runs = [ab.run_ablation(cfg, seed=s) for s in seeds]
    maxf = ab.median_maxf(runs)
    extra = {"config": {"ablation": run.ablation, "seeds": [s for s in seeds if s is not None]},
             "median_maxf": maxf, "ordering_holds": ab.ordering_holds(maxf)}
    if len(runs) > 1:
        extra["runs"] = [json.loads(ab.to_json(r))["variants"] for r in runs[1:]]
    (out / "ablation.md").write_text(ab.to_markdown(runs[0]), encoding="utf-8")
    (out / "ablation.json").write_text(ab.to_json(runs[0], extra), encoding="utf-8")
    sys.stdout.write(ab.to_markdown(runs[0]))
    return 0


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    def global_flags(parser, default):
        parser.add_argument("--config", default=default, help="run configuration JSON")
        parser.add_argument("--seed", type=int, default=default, help="override the training / generation seed")
        parser.add_argument("--threads", type=int, default=default, help="BLAS thread count")
        parser.add_argument("--verbose", "-v", action="store_true",
                            default=False if default is None else default)

    p = argparse.ArgumentParser(prog="plard", description=__doc__.splitlines()[0])
    global_flags(p, None)
    # accepted after the subcommand too; SUPPRESS keeps the top-level value when absent
    common = argparse.ArgumentParser(add_help=False)
    global_flags(common, argparse.SUPPRESS)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("adt", parents=[common], help="point cloud + calibration -> ADT image")
    s.add_argument("--cloud", required=True)
    s.add_argument("--calib", required=True)
    s.add_argument("--width", type=int, required=True)
    s.add_argument("--height", type=int, required=True)
    s.add_argument("--window", type=int, default=7)
    s.add_argument("--fixed-m", action="store_true", help="divide by window^2 - 1 instead of the occupied count")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_adt)

    s = sub.add_parser("synth", parents=[common], help="generate a synthetic dataset")
    s.add_argument("--count", type=int, required=True)
    s.add_argument("--corruption", type=float, default=0.0)
    s.add_argument("--width", type=int, default=320)
    s.add_argument("--height", type=int, default=96)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("train", parents=[common], help="train a model from --config")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("infer", parents=[common], help="write 8-bit road probability PNGs")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--scenes", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_infer)

    s = sub.add_parser("eval", parents=[common], help="score prediction PNGs against a dataset")
    s.add_argument("--pred", required=True)
    s.add_argument("--gt", required=True)
    s.add_argument("--bev", action="store_true", help="also score on the ground-plane grid")
    s.add_argument("--out", help="report path (stdout when omitted)")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("overlay", parents=[common], help="blend road probability in green over an image")
    s.add_argument("--image", required=True)
    s.add_argument("--pred", required=True)
    s.add_argument("--alpha", type=float, default=0.6)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_overlay)

    s = sub.add_parser("ablate", parents=[common], help="train and compare the four input / fusion variants")
    s.add_argument("--seeds", type=int, nargs="+", help="training seeds; MaxF is reported as the median")
    s.set_defaults(func=cmd_ablate)
    return p


def main(argv: Optional[list] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads is not None:
        if args.threads < 1:
            sys.stderr.write("plard: --threads must be >= 1\n")
            return 1
        for var in THREAD_VARS:
            os.environ[var] = str(args.threads)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s", stream=sys.stderr)
    err = _errors()
    try:
        return args.func(args)
    except err.PlardError as exc:
        sys.stderr.write(f"plard {args.command}: {type(exc).__name__}: {exc}\n")
        return exc.exit_code
    except OSError as exc:
        sys.stderr.write(f"plard {args.command}: IOError: {exc}\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
