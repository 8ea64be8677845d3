"""Two-stream road-detection network with feature-space LiDAR adaptation.

A visual stream and a thinner LiDAR stream each run five convolution stages.
From stage 2 on, the LiDAR features of a stage are lifted to the visual width,
modulated element-wise by ``alpha`` and shifted by ``beta`` (both predicted
from the concatenated visual and lifted LiDAR features by 1x1 convolutions),
and injected residually into the visual stream with weight ``lam``.  The fused
stage-5 features feed a context-pooling parsing head; the fused stage-4
features and the LiDAR stage-5 features feed auxiliary heads.

The ``concat`` fusion mode is the baseline without feature adaptation: the
final LiDAR features are concatenated to the visual features in front of the
parsing head.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import ConvLayer, ParameterStore, Tensor
from .errors import ShapeMismatch, ValidationError

NUM_STAGES = 5
NUM_CLASSES = 2
INPUT_MODES = ("adt", "lproj", "none")
FUSION_MODES = ("fsa", "concat")
LIDAR_INPUT_CHANNELS = {"adt": 1, "lproj": 3, "none": 0}


@dataclass(frozen=True)
class StreamConfig:
    stage_channels: tuple = (16, 32, 64, 128, 128)
    lidar_divisor: int = 8
    dilation_schedule: tuple = (1, 1, 1, 1, 1)

    def __post_init__(self) -> None:
        object.__setattr__(self, "stage_channels", tuple(int(c) for c in self.stage_channels))
        object.__setattr__(self, "dilation_schedule", tuple(int(d) for d in self.dilation_schedule))
        if len(self.stage_channels) != NUM_STAGES:
            raise ValidationError(f"need {NUM_STAGES} stage widths, got {len(self.stage_channels)}")
        if len(self.dilation_schedule) != NUM_STAGES:
            raise ValidationError(f"need {NUM_STAGES} dilations, got {len(self.dilation_schedule)}")
        if self.lidar_divisor < 1:
            raise ValidationError("lidar_divisor must be >= 1")
        for c in self.stage_channels:
            if c <= 0 or c % self.lidar_divisor:
                raise ValidationError(f"stage width {c} not divisible by lidar_divisor {self.lidar_divisor}")
        if any(d < 1 for d in self.dilation_schedule):
            raise ValidationError("dilations must be >= 1")

    @property
    def lidar_channels(self) -> tuple:
        return tuple(c // self.lidar_divisor for c in self.stage_channels)


@dataclass(frozen=True)
class ModelConfig:
    stream: StreamConfig = field(default_factory=StreamConfig)
    input_mode: str = "adt"
    fusion: str = "fsa"
    lam: float = 0.1

    def __post_init__(self) -> None:
        if self.input_mode not in INPUT_MODES:
            raise ValidationError(f"input_mode must be one of {INPUT_MODES}")
        if self.fusion not in FUSION_MODES:
            raise ValidationError(f"fusion must be one of {FUSION_MODES}")

    def to_dict(self) -> dict:
        return {
            "stage_channels": list(self.stream.stage_channels),
            "lidar_divisor": self.stream.lidar_divisor,
            "dilation_schedule": list(self.stream.dilation_schedule),
            "input_mode": self.input_mode,
            "fusion": self.fusion,
            "lambda": self.lam,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        stream = StreamConfig(tuple(d["stage_channels"]), int(d["lidar_divisor"]),
                              tuple(d.get("dilation_schedule", (1,) * NUM_STAGES)))
        return cls(stream, d["input_mode"], d.get("fusion", "fsa"), float(d["lambda"]))


@dataclass(frozen=True)
class LossWeights:
    parsing: float = 1.0
    lidar: float = 0.4
    aux: float = 0.16

    def __post_init__(self) -> None:
        if min(self.parsing, self.lidar, self.aux) < 0:
            raise ValidationError("loss weights must be non-negative")


class FsaModule:
    """Three 1x1 convolutions: lift LiDAR features, then predict ``alpha`` and ``beta``."""

    def __init__(self, proj: ConvLayer, alpha_head: ConvLayer, beta_head: ConvLayer):
        self.proj = proj
        self.alpha_head = alpha_head
        self.beta_head = beta_head

    @classmethod
    def create(cls, params: ParameterStore, prefix: str, vis_ch: int, lidar_ch: int) -> "FsaModule":
        return cls(
            params.conv(f"{prefix}.proj", lidar_ch, vis_ch, 1),
            params.conv(f"{prefix}.alpha", 2 * vis_ch, vis_ch, 1),
            params.conv(f"{prefix}.beta", 2 * vis_ch, vis_ch, 1),
        )


def fsa_forward(f_vis: Tensor, f_lidar: Tensor, module: FsaModule) -> Tensor:
    """Adapt LiDAR features: ``alpha * proj(f_lidar) + beta``."""
    if f_vis.shape[0] != f_lidar.shape[0] or f_vis.shape[2:] != f_lidar.shape[2:]:
        raise ShapeMismatch(f"FSA inputs disagree: {f_vis.shape} vs {f_lidar.shape}")
    if f_vis.shape[1] != module.proj.out_channels or f_lidar.shape[1] != module.proj.in_channels:
        raise ShapeMismatch("FSA channel counts do not match the module")
    f_proj = module.proj(f_lidar)
    both = ad.concat_channels(f_vis, f_proj)
    alpha = module.alpha_head(both)
    beta = module.beta_head(both)
    return ad.add(ad.mul_elementwise(alpha, f_proj), beta)


def cascaded_fuse(f_vis: Tensor, adapted: Tensor, lam: float) -> Tensor:
    """Residual injection ``f_vis + lam * adapted``."""
    if f_vis.shape != adapted.shape:
        raise ShapeMismatch(f"fusion inputs disagree: {f_vis.shape} vs {adapted.shape}")
    return ad.add(f_vis, ad.scale(adapted, lam))


class Stage:
    """[2x2 max-pool] -> conv3x3 -> ReLU -> conv3x3 -> ReLU."""

    def __init__(self, params: ParameterStore, prefix: str, in_ch: int, out_ch: int, pool: bool, dilation: int = 1):
        self.pool = pool
        self.conv1 = params.conv(f"{prefix}.conv1", in_ch, out_ch, 3, dilation=dilation)
        self.conv2 = params.conv(f"{prefix}.conv2", out_ch, out_ch, 3, dilation=dilation)

    def __call__(self, x: Tensor) -> Tensor:
        if self.pool:
            x = ad.maxpool2(x)
        return ad.relu(self.conv2(ad.relu(self.conv1(x))))


@dataclass
class Outputs:
    parsing: Tensor
    aux: Tensor
    lidar: Optional[Tensor]


class PlardModel:
    def __init__(self, config: ModelConfig = ModelConfig(), seed: int = 0):
        self.config = config
        self.params = ParameterStore(seed)
        p = self.params
        vis = config.stream.stage_channels
        # visual stream and its heads come first so an image-only model built
        # with the same seed shares these initial weights exactly
        self.vis_stages = []
        in_ch = 3
        for k in range(NUM_STAGES):
            self.vis_stages.append(Stage(p, f"vis.s{k + 1}", in_ch, vis[k], pool=k > 0))
            in_ch = vis[k]
        head_in = vis[-1]
        if self.uses_lidar and config.fusion == "concat":
            head_in += config.stream.lidar_channels[-1]
        self.parsing_head = p.conv("head.parsing", 2 * head_in, NUM_CLASSES, 1)
        self.aux_head = p.conv("head.aux", vis[3], NUM_CLASSES, 1)

        self.lidar_stages = []
        self.fsa: dict[int, FsaModule] = {}
        self.lidar_head = None
        if self.uses_lidar:
            lid = config.stream.lidar_channels
            in_ch = LIDAR_INPUT_CHANNELS[config.input_mode]
            for k in range(NUM_STAGES):
                self.lidar_stages.append(
                    Stage(p, f"lidar.s{k + 1}", in_ch, lid[k], pool=k > 0,
                          dilation=config.stream.dilation_schedule[k])
                )
                in_ch = lid[k]
            self.lidar_head = p.conv("head.lidar", lid[-1], NUM_CLASSES, 1)
            if config.fusion == "fsa":
                for k in range(1, NUM_STAGES):
                    self.fsa[k + 1] = FsaModule.create(p, f"fsa.s{k + 1}", vis[k], lid[k])

    @property
    def uses_lidar(self) -> bool:
        return self.config.input_mode != "none"

    @property
    def fused_stages(self) -> list[int]:
        return sorted(self.fsa)

    def __call__(self, image, lidar=None) -> Outputs:
        return forward(self, image, lidar)


def _classify(head: ConvLayer, x: Tensor, h: int, w: int) -> Tensor:
    return ad.softmax_channels(ad.upsample_bilinear(head(x), h, w))


def _context_head(head: ConvLayer, x: Tensor, h: int, w: int) -> Tensor:
    ctx = ad.expand_spatial(ad.spatial_mean(x), x.shape[2], x.shape[3])
    return _classify(head, ad.concat_channels(x, ctx), h, w)


def forward(model: PlardModel, image, lidar=None) -> Outputs:
    """Run both streams stage by stage and return three probability maps.

    Args:
        image: ``(B, 3, H, W)`` values in [0, 1]; H and W divisible by 16.
        lidar: ``(B, C_l, H, W)`` LiDAR representation, or None for the
            image-only configuration.
    """
    image = ad.as_tensor(image)
    b, c, h, w = image.shape
    if c != 3:
        raise ShapeMismatch(f"image must have 3 channels, got {c}")
    if h % 16 or w % 16:
        raise ShapeMismatch(f"image size {h}x{w} must be divisible by 16")
    if model.uses_lidar:
        if lidar is None:
            raise ShapeMismatch("this model needs a LiDAR input")
        lidar = ad.as_tensor(lidar)
        expected = (b, LIDAR_INPUT_CHANNELS[model.config.input_mode], h, w)
        if lidar.shape != expected:
            raise ShapeMismatch(f"LiDAR input {lidar.shape} != {expected}")

    v = image
    l = lidar if model.uses_lidar else None
    fused4 = None
    for k in range(1, NUM_STAGES + 1):
        v = model.vis_stages[k - 1](v)
        if l is not None:
            l = model.lidar_stages[k - 1](l)
            if k in model.fsa:
                v = cascaded_fuse(v, fsa_forward(v, l, model.fsa[k]), model.config.lam)
        if k == 4:
            fused4 = v

    head_in = v
    if l is not None and model.config.fusion == "concat":
        head_in = ad.concat_channels(v, l)
    y_parsing = _context_head(model.parsing_head, head_in, h, w)
    y_aux = _classify(model.aux_head, fused4, h, w)
    y_lidar = _classify(model.lidar_head, l, h, w) if l is not None else None
    return Outputs(y_parsing, y_aux, y_lidar)


def one_hot_target(labels: np.ndarray, ignore_value: int = 255) -> tuple[np.ndarray, np.ndarray]:
    """``(B, H, W)`` labels {0, 1, ignore} -> one-hot ``(B, 2, H, W)`` and ignore mask."""
    labels = np.asarray(labels)
    ignore = labels == ignore_value
    road = (labels == 1) & ~ignore
    target = np.stack([(~road & ~ignore), road], axis=1).astype(np.float64)
    return target, ignore


def total_loss(
    outputs: Outputs,
    target: np.ndarray,
    weights: LossWeights = LossWeights(),
    ignore_mask: Optional[np.ndarray] = None,
) -> Tensor:
    """Weighted sum of the parsing, LiDAR and auxiliary cross-entropies."""
    terms = [(weights.parsing, ad.cross_entropy_log10(outputs.parsing, target, ignore_mask)),
             (weights.aux, ad.cross_entropy_log10(outputs.aux, target, ignore_mask))]
    if outputs.lidar is not None:
        terms.append((weights.lidar, ad.cross_entropy_log10(outputs.lidar, target, ignore_mask)))
    return ad.weighted_sum(terms)


def fsa_mac_formula(c: int, divisor: int, h: int, w: int) -> int:
    """Closed-form MACs of one FSA module: lift + two heads over 2C inputs."""
    return (c // divisor) * c * h * w + 2 * (2 * c * c * h * w)
