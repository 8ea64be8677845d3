"""Scene -> tensors, training loop, batched prediction and evaluation."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Optional, Sequence

import numpy as np

from . import autodiff as ad
from .adt import adt_transform, direct_projection, rasterize_altitude
from .errors import EmptyDataset, NumericalError, ShapeMismatch, ValidationError
from .evalkit import EvalReport, accumulate, aggregate, quantize_confidence
from .lidar_io import project
from .model import (
    INPUT_MODES,
    LossWeights,
    ModelConfig,
    PlardModel,
    StreamConfig,
    forward,
    one_hot_target,
    total_loss,
)
from .synthscene import SceneBundle

log = logging.getLogger(__name__)


@dataclass
class Sample:
    image: np.ndarray  # (3, H, W) in [0, 1]
    lidar: Optional[np.ndarray]  # (C, H, W) in [0, 1] or None
    labels: np.ndarray  # (H, W) uint8
    category: str = "UM"


def lidar_input(bundle: SceneBundle, input_mode: str, window: int = 7) -> Optional[np.ndarray]:
    """The LiDAR-stream input of a scene for ``input_mode``."""
    if input_mode == "none":
        return None
    pts = project(bundle.cloud, bundle.calib, bundle.width, bundle.height)
    if input_mode == "adt":
        amap = rasterize_altitude(pts, bundle.width, bundle.height)
        return adt_transform(amap, window).rescaled[None].astype(np.float64) / 255.0
    if input_mode == "lproj":
        return direct_projection(pts, bundle.cloud, bundle.width, bundle.height).channels.copy()
    raise ValidationError(f"input_mode must be one of {INPUT_MODES}")


def prepare_sample(bundle: SceneBundle, input_mode: str, window: int = 7) -> Sample:
    image = bundle.image.astype(np.float64).transpose(2, 0, 1) / 255.0
    return Sample(image, lidar_input(bundle, input_mode, window), bundle.gt.copy(), bundle.category)


def prepare_samples(bundles: Sequence[SceneBundle], input_mode: str, window: int = 7) -> list[Sample]:
    return [prepare_sample(b, input_mode, window) for b in bundles]


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


@dataclass
class TrainConfig:
    epochs: int = 30
    lr_start: float = 1e-4
    lr_end: float = 1e-6
    lr_power: float = 0.9
    lam: float = 0.1
    loss_weights: LossWeights = field(default_factory=LossWeights)
    seed: int = 0
    stage_channels: tuple = (16, 32, 64, 128, 128)
    lidar_divisor: int = 8
    dilation_schedule: tuple = (1, 1, 1, 1, 1)
    input_mode: str = "adt"
    fusion: str = "fsa"
    batch_size: int = 1
    momentum: float = 0.9
    weight_decay: float = 0.0
    window: int = 7
    brightness_perturbation: float = 0.0
    val_every: int = 1

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise ValidationError("epochs must be >= 1")
        if self.lr_start <= 0 or self.lr_end <= 0:
            raise ValidationError("learning rates must be positive")
        if self.batch_size < 1:
            raise ValidationError("batch_size must be >= 1")
        if not 0.0 <= self.brightness_perturbation < 1.0:
            raise ValidationError("brightness_perturbation must be in [0, 1)")
        self.stage_channels = tuple(int(c) for c in self.stage_channels)
        self.dilation_schedule = tuple(int(d) for d in self.dilation_schedule)
        self.model_config()  # validates channel and mode settings

    def model_config(self) -> ModelConfig:
        stream = StreamConfig(self.stage_channels, self.lidar_divisor, self.dilation_schedule)
        return ModelConfig(stream, self.input_mode, self.fusion, self.lam)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lambda"] = d.pop("lam")
        d["stage_channels"] = list(self.stage_channels)
        d["dilation_schedule"] = list(self.dilation_schedule)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "lambda" in d:
            d["lam"] = d.pop("lambda")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ValidationError(f"unknown training config keys: {unknown}")
        lw = d.get("loss_weights")
        if lw is not None and not isinstance(lw, LossWeights):
            if isinstance(lw, dict):
                bad = sorted(set(lw) - {"parsing", "lidar", "aux"})
                if bad:
                    raise ValidationError(f"unknown loss weight keys: {bad}")
                d["loss_weights"] = LossWeights(**{k: float(v) for k, v in lw.items()})
            else:
                d["loss_weights"] = LossWeights(*[float(v) for v in lw])
        try:
            return cls(**d)
        except TypeError as exc:
            raise ValidationError(str(exc)) from exc


def poly_lr(iteration: int, total: int, lr_start: float, lr_end: float, power: float = 0.9) -> float:
    """Polynomial decay from ``lr_start`` (iteration 0) to ``lr_end`` (last iteration)."""
    if total <= 1:
        return lr_start
    frac = min(iteration, total - 1) / (total - 1)
    return lr_end + (lr_start - lr_end) * (1.0 - frac) ** power


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


@dataclass
class TrainResult:
    log: list
    best_state: dict
    best_epoch: int
    best_val_maxf: Optional[float]
    seconds: float = 0.0


def _stack(samples: Sequence[Sample], idx: Sequence[int]):
    image = np.stack([samples[i].image for i in idx])
    lidar = None if samples[idx[0]].lidar is None else np.stack([samples[i].lidar for i in idx])
    labels = np.stack([samples[i].labels for i in idx])
    return image, lidar, labels


def _check_consistent(samples: Sequence[Sample], config: TrainConfig) -> None:
    shape = samples[0].image.shape
    for s in samples:
        if s.image.shape != shape or s.labels.shape != shape[1:]:
            raise ShapeMismatch("all training samples must share one image size")
        if (s.lidar is None) != (config.input_mode == "none"):
            raise ShapeMismatch("sample LiDAR inputs do not match input_mode")


def train(
    model: PlardModel,
    samples: Sequence[Sample],
    config: TrainConfig,
    val_samples: Optional[Sequence[Sample]] = None,
    on_epoch: Optional[Callable[[dict], None]] = None,
) -> TrainResult:
    """Seeded momentum SGD with polynomial learning-rate decay.

    The returned ``best_state`` holds the parameters of the epoch with the
    highest validation MaxF, or of the final epoch without validation data.
    The model is left holding ``best_state``.
    """
    samples = list(samples)
    if not samples:
        raise EmptyDataset("training set is empty")
    _check_consistent(samples, config)
    rng = np.random.default_rng([config.seed, 7])
    opt = ad.SGD(model.params, config.momentum, config.weight_decay)
    steps_per_epoch = math.ceil(len(samples) / config.batch_size)
    total = config.epochs * steps_per_epoch
    history = []
    best_state = model.params.state()
    best_epoch, best_maxf = 0, None
    t0 = time.perf_counter()
    it = 0
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(samples))
        losses = []
        for s in range(steps_per_epoch):
            idx = order[s * config.batch_size : (s + 1) * config.batch_size]
            image, lidar, labels = _stack(samples, idx)
            if config.brightness_perturbation:
                gain = rng.uniform(1 - config.brightness_perturbation, 1 + config.brightness_perturbation,
                                   size=(len(idx), 1, 1, 1))
                image = np.clip(image * gain, 0.0, 1.0)
            target, ignore = one_hot_target(labels)
            loss = total_loss(forward(model, image, lidar), target, config.loss_weights, ignore)
            value = loss.item()
            if not math.isfinite(value):
                raise NumericalError(f"non-finite loss at epoch {epoch}, step {s}")
            model.params.zero_grad()
            loss.backward()
            opt.step(poly_lr(it, total, config.lr_start, config.lr_end, config.lr_power))
            losses.append(value)
            it += 1
        entry = {"epoch": epoch, "loss": float(np.mean(losses)),
                 "lr": poly_lr(it - 1, total, config.lr_start, config.lr_end, config.lr_power)}
        if val_samples and (epoch % config.val_every == 0 or epoch == config.epochs):
            maxf = evaluate(model, val_samples).max_f
            entry["val_maxf"] = maxf
            if best_maxf is None or maxf > best_maxf:
                best_maxf, best_epoch = maxf, epoch
                best_state = model.params.state()
        elif not val_samples:
            best_epoch = epoch
        history.append(entry)
        log.info("epoch %d loss %.5f%s", epoch, entry["loss"],
                 f" val MaxF {entry['val_maxf']:.2f}" if "val_maxf" in entry else "")
        if on_epoch is not None:
            on_epoch(entry)
    if not val_samples:
        best_state = model.params.state()
    model.params.load_state(best_state)
    return TrainResult(history, best_state, best_epoch, best_maxf, time.perf_counter() - t0)


# ---------------------------------------------------------------------------
# Inference and evaluation
# ---------------------------------------------------------------------------


def predict(model: PlardModel, samples: Sequence[Sample], batch_size: int = 4,
            timings: Optional[list] = None) -> list[np.ndarray]:
    """Road probability maps ``(H, W)`` for each sample.

    When ``timings`` is given, per-image forward times (seconds) are appended.
    """
    out = []
    for start in range(0, len(samples), batch_size):
        idx = list(range(start, min(start + batch_size, len(samples))))
        image, lidar, _ = _stack(samples, idx)
        t0 = time.perf_counter()
        prob = forward(model, image, lidar).parsing.data[:, 1]
        if timings is not None:
            timings.extend([(time.perf_counter() - t0) / len(idx)] * len(idx))
        out.extend(prob[i].copy() for i in range(len(idx)))
    return out


def evaluate_maps(probs: Sequence[np.ndarray], labels: Sequence[np.ndarray],
                  categories: Optional[Sequence[str]] = None, quantize: bool = True) -> EvalReport:
    """Pooled metrics; probabilities are first quantised as a prediction PNG would be."""
    confs = [accumulate(quantize_confidence(p) if quantize else p, g) for p, g in zip(probs, labels)]
    return aggregate(confs, categories)


def evaluate(model: PlardModel, samples: Sequence[Sample], quantize: bool = True) -> EvalReport:
    probs = predict(model, samples)
    return evaluate_maps(probs, [s.labels for s in samples], [s.category for s in samples], quantize)


def build_model(config: TrainConfig) -> PlardModel:
    return PlardModel(config.model_config(), seed=config.seed)


def checkpoint_metadata(config: TrainConfig, result: Optional[TrainResult] = None) -> dict:
    meta = {"model": config.model_config().to_dict(), "train": config.to_dict()}
    if result is not None:
        meta["best_epoch"] = result.best_epoch
        meta["best_val_maxf"] = result.best_val_maxf
        meta["loss_log"] = [e["loss"] for e in result.log]
    return meta


def load_model(path) -> tuple[PlardModel, dict]:
    """Rebuild a model from a checkpoint written with :func:`checkpoint_metadata`."""
    meta, state = ad.load_checkpoint(path)
    if "model" not in meta:
        raise ValidationError(f"{path}: checkpoint lacks a model description")
    model = PlardModel(ModelConfig.from_dict(meta["model"]), seed=0)
    if list(state) != model.params.names():
        raise ShapeMismatch(f"{path}: parameter names do not match the model")
    model.params.load_state(state)
    return model, meta
