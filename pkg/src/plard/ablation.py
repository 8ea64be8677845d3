"""Four-variant ablation: image only, late-fused projections, late-fused ADT, ADT with FSA."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Optional

import numpy as np

from .errors import ValidationError
from .pipeline import TrainConfig, build_model, evaluate, predict, prepare_samples, train
from .synthscene import CameraConfig, generate_dataset

log = logging.getLogger(__name__)

# (row label, input_mode, fusion)
VARIANTS = (
    ("Img", "none", "fsa"),
    ("Img+L-Proj", "lproj", "concat"),
    ("Img+L-ADT", "adt", "concat"),
    ("Img+L-ADT+FSA", "adt", "fsa"),
)

# desk-scale training recipe shared by all four variants
DEFAULT_TRAIN = {
    "epochs": 60,
    "lr_start": 1e-2,
    "lr_end": 1e-4,
    "stage_channels": [8, 16, 32, 64, 64],
    "lidar_divisor": 2,
    "val_every": 5,
}
METRICS = ("max_f", "ap", "pre", "rec", "fpr", "fnr")


@dataclass
class AblationConfig:
    train_count: int = 64
    val_count: int = 16
    test_count: int = 32
    corruption_level: float = 0.7
    data_seed: int = 2024
    width: int = 160
    height: int = 48
    train: dict = field(default_factory=lambda: dict(DEFAULT_TRAIN))

    def __post_init__(self) -> None:
        if min(self.train_count, self.test_count) < 1 or self.val_count < 0:
            raise ValidationError("dataset sizes must be positive")
        if self.width % 16 or self.height % 16:
            raise ValidationError("width and height must be divisible by 16")
        self.base_train_config()  # validate early

    def base_train_config(self) -> TrainConfig:
        return TrainConfig.from_dict(self.train)

    @classmethod
    def from_dict(cls, d: dict) -> "AblationConfig":
        unknown = sorted(set(d) - {f.name for f in fields(cls)})
        if unknown:
            raise ValidationError(f"unknown ablation config keys: {unknown}")
        return cls(**d)


@dataclass
class VariantResult:
    name: str
    metrics: dict
    median_seconds: float
    best_epoch: int
    final_loss: float


def make_splits(cfg: AblationConfig):
    camera = CameraConfig(width=cfg.width, height=cfg.height)
    # distinct seeds per split keep the three sets disjoint
    tr, _ = generate_dataset(cfg.train_count, cfg.data_seed, cfg.corruption_level, camera)
    va = generate_dataset(cfg.val_count, cfg.data_seed + 1, cfg.corruption_level, camera)[0] if cfg.val_count else []
    te, _ = generate_dataset(cfg.test_count, cfg.data_seed + 2, cfg.corruption_level, camera)
    return tr, va, te


def run_variant(name: str, input_mode: str, fusion: str, base: TrainConfig, splits) -> VariantResult:
    tr, va, te = splits
    config = replace(base, input_mode=input_mode, fusion=fusion)
    train_s = prepare_samples(tr, input_mode, config.window)
    val_s = prepare_samples(va, input_mode, config.window) if va else None
    test_s = prepare_samples(te, input_mode, config.window)
    model = build_model(config)
    result = train(model, train_s, config, val_s)
    report = evaluate(model, test_s)
    timings: list = []
    predict(model, test_s, batch_size=1, timings=timings)
    log.info("%s: MaxF %.2f (best epoch %d)", name, report.max_f, result.best_epoch)
    return VariantResult(name, report.metrics(), float(np.median(timings)), result.best_epoch,
                         result.log[-1]["loss"])


def run_ablation(cfg: AblationConfig, seed: Optional[int] = None, splits=None) -> list[VariantResult]:
    """Train and test every variant on one shared dataset.

    ``seed`` overrides the training seed (initialisation and shuffling); the
    data stay fixed.
    """
    base = cfg.base_train_config()
    if seed is not None:
        base = replace(base, seed=seed)
    splits = splits if splits is not None else make_splits(cfg)
    return [run_variant(name, mode, fusion, base, splits) for name, mode, fusion in VARIANTS]


def ordering_holds(maxf: dict, margin: float = 2.0) -> bool:
    """The expected ranking: FSA >= ADT >= Img, ADT >= Proj, FSA - Img >= margin."""
    return (maxf["Img+L-ADT+FSA"] >= maxf["Img+L-ADT"] >= maxf["Img"]
            and maxf["Img+L-ADT"] >= maxf["Img+L-Proj"]
            and maxf["Img+L-ADT+FSA"] - maxf["Img"] >= margin)


def median_maxf(runs: list[list[VariantResult]]) -> dict:
    names = [r.name for r in runs[0]]
    return {n: float(np.median([[r.metrics["max_f"] for r in run if r.name == n][0] for run in runs]))
            for n in names}


def to_markdown(results: list[VariantResult]) -> str:
    head = "| Variant | MaxF | AP | PRE | REC | FPR | FNR | Speed (s/im) |"
    rule = "|---|---|---|---|---|---|---|---|"
    rows = [head, rule]
    for r in results:
        m = r.metrics
        rows.append(f"| {r.name} | " + " | ".join(f"{m[k]:.2f}" for k in METRICS) + f" | {r.median_seconds:.4f} |")
    return "\n".join(rows) + "\n"


def to_json(results: list[VariantResult], extra: Optional[dict] = None) -> str:
    doc = {"variants": [asdict(r) for r in results]}
    if extra:
        doc.update(extra)
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"
