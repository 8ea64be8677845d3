"""KITTI-style road-detection evaluation.

Confidence maps are thresholded at evenly spaced levels ``i / (T - 1)``; a
pixel counts as predicted road when ``confidence >= threshold``.  Confusion
counts are pooled over scenes before any metric is computed.  MaxF is the
best F1 over the sweep, and precision, recall, FPR and FNR are reported at
that working point.  AP averages interpolated precision (best precision at
recall >= r) over the 41 recall anchors ``0, 0.025, ..., 1``.

Label maps use ``ROAD = 1``, ``NON_ROAD = 0`` and ``IGNORE = 255``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np
from PIL import Image

from .errors import DimensionMismatch, EmptyInput, InputError, NoPositives, SingularHomography

NON_ROAD = 0
ROAD = 1
IGNORE = 255
DEFAULT_THRESHOLDS = 256
AP_ANCHORS = np.linspace(0.0, 1.0, 41)
CATEGORIES = ("UM", "UMM", "UU")

# KITTI ground-truth colours: magenta road, red non-road, black unlabelled
KITTI_GT_COLORS = {
    (255, 0, 255): ROAD,
    (255, 0, 0): NON_ROAD,
    (0, 0, 0): IGNORE,
}


def thresholds(count: int = DEFAULT_THRESHOLDS) -> np.ndarray:
    if count < 2:
        raise ValueError("need at least two thresholds")
    return np.arange(count, dtype=np.float64) / (count - 1)


@dataclass
class Confusion:
    """Pooled confusion counts per threshold.

    ``tp[i]``/``fp[i]`` count pixels predicted road at threshold ``i``.
    """

    tp: np.ndarray
    fp: np.ndarray
    positives: int
    negatives: int

    @property
    def n_thresholds(self) -> int:
        return self.tp.shape[0]

    @property
    def fn(self) -> np.ndarray:
        return self.positives - self.tp

    @property
    def tn(self) -> np.ndarray:
        return self.negatives - self.fp

    def __add__(self, other: "Confusion") -> "Confusion":
        if self.n_thresholds != other.n_thresholds:
            raise DimensionMismatch("cannot pool confusions with different threshold counts")
        return Confusion(self.tp + other.tp, self.fp + other.fp,
                         self.positives + other.positives, self.negatives + other.negatives)

    @classmethod
    def empty(cls, count: int = DEFAULT_THRESHOLDS) -> "Confusion":
        return cls(np.zeros(count, dtype=np.int64), np.zeros(count, dtype=np.int64), 0, 0)


def accumulate(pred: np.ndarray, gt: np.ndarray, count: int = DEFAULT_THRESHOLDS) -> Confusion:
    """Confusion counts of one confidence map against one label map.

    Pixels labelled IGNORE, and pixels whose confidence is NaN (out of view
    after a BEV warp), are excluded.
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise DimensionMismatch(f"prediction {pred.shape} vs ground truth {gt.shape}")
    valid = (gt != IGNORE) & ~np.isnan(pred)
    p = pred[valid]
    road = gt[valid] == ROAD
    th = thresholds(count)
    # number of thresholds each pixel clears (p >= t_0 .. t_{k-1})
    level = np.searchsorted(th, p, side="right")
    pos_hist = np.bincount(level[road], minlength=count + 1)
    neg_hist = np.bincount(level[~road], minlength=count + 1)
    # predicted road at threshold i <=> level > i
    tp = pos_hist[::-1].cumsum()[::-1][1:]
    fp = neg_hist[::-1].cumsum()[::-1][1:]
    return Confusion(tp.astype(np.int64), fp.astype(np.int64), int(road.sum()), int((~road).sum()))


@dataclass
class EvalReport:
    max_f: float
    ap: float
    pre: float
    rec: float
    fpr: float
    fnr: float
    threshold_at_maxf: float
    per_category: dict = field(default_factory=dict)
    degenerate: bool = False
    ap_anchors: int = len(AP_ANCHORS)

    def metrics(self) -> dict:
        return {k: getattr(self, k) for k in ("max_f", "ap", "pre", "rec", "fpr", "fnr")}

    def to_dict(self) -> dict:
        d = asdict(self)
        d["per_category"] = {k: (v.to_dict() if isinstance(v, EvalReport) else v)
                             for k, v in self.per_category.items()}
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _safe_div(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    num = np.asarray(num, dtype=np.float64)
    den = np.asarray(den, dtype=np.float64)
    out = np.zeros(np.broadcast(num, den).shape)
    np.divide(num, den, out=out, where=den > 0)
    return out


def curves(conf: Confusion) -> dict:
    """Precision, recall, F1 and FPR at every threshold (fractions, not %)."""
    tp = conf.tp.astype(np.float64)
    fp = conf.fp.astype(np.float64)
    precision = _safe_div(tp, tp + fp)
    recall = _safe_div(tp, np.full_like(tp, conf.positives))
    f1 = _safe_div(2.0 * precision * recall, precision + recall)
    fpr = _safe_div(fp, np.full_like(fp, conf.negatives))
    return {"precision": precision, "recall": recall, "f1": f1, "fpr": fpr}


def average_precision(precision: np.ndarray, recall: np.ndarray, anchors: np.ndarray = AP_ANCHORS) -> float:
    total = 0.0
    for r in anchors:
        ok = recall >= r
        total += precision[ok].max() if ok.any() else 0.0
    return total / len(anchors)


def metrics_from_confusion(conf: Confusion, allow_degenerate: bool = False) -> EvalReport:
    """Metrics (in %) at the MaxF working point.

    Raises NoPositives when no road pixel was counted, unless
    ``allow_degenerate`` is set, in which case a report flagged ``degenerate``
    with NaN recall-derived fields is returned.
    """
    if conf.positives == 0:
        if not allow_degenerate:
            raise NoPositives("ground truth contains no road pixels")
        nan = float("nan")
        c = curves(conf)
        i = int(np.argmin(c["fpr"]))
        return EvalReport(nan, nan, nan, nan, 100.0 * float(c["fpr"][i]), nan,
                          float(thresholds(conf.n_thresholds)[i]), degenerate=True)
    c = curves(conf)
    i = int(np.argmax(c["f1"]))
    pre, rec = float(c["precision"][i]), float(c["recall"][i])
    fnr = float(_safe_div(conf.fn[i], conf.positives))
    return EvalReport(
        max_f=100.0 * float(c["f1"][i]),
        ap=100.0 * average_precision(c["precision"], c["recall"]),
        pre=100.0 * pre,
        rec=100.0 * rec,
        fpr=100.0 * float(c["fpr"][i]),
        fnr=100.0 * fnr,
        threshold_at_maxf=float(thresholds(conf.n_thresholds)[i]),
    )


def compute_metrics(pred: np.ndarray, gt: np.ndarray, n_thresholds: int = DEFAULT_THRESHOLDS,
                    allow_degenerate: bool = False) -> EvalReport:
    return metrics_from_confusion(accumulate(pred, gt, n_thresholds), allow_degenerate)


def aggregate(confusions: Sequence[Confusion], categories: Optional[Sequence[str]] = None) -> EvalReport:
    """Pool confusion counts overall and per category, then compute metrics."""
    confusions = list(confusions)
    if not confusions:
        raise EmptyInput("nothing to aggregate")
    if categories is not None and len(categories) != len(confusions):
        raise DimensionMismatch("one category label per confusion required")
    total = confusions[0]
    for c in confusions[1:]:
        total = total + c
    report = metrics_from_confusion(total, allow_degenerate=True)
    if categories is not None:
        groups: dict[str, Confusion] = {}
        for cat, c in zip(categories, confusions):
            groups[cat] = groups[cat] + c if cat in groups else c
        report.per_category = {cat: metrics_from_confusion(groups[cat], allow_degenerate=True)
                               for cat in sorted(groups)}
    return report


# ---------------------------------------------------------------------------
# Birds-eye view
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BevMapping:
    """Homography from perspective pixels ``(u, v, 1)`` to BEV grid cells ``(col, row, 1)``."""

    homography: np.ndarray
    grid_shape: tuple

    def __post_init__(self) -> None:
        hmat = np.asarray(self.homography, dtype=np.float64).reshape(3, 3)
        scale = np.abs(hmat).max()
        if scale == 0 or abs(np.linalg.det(hmat / scale)) < 1e-12:
            raise SingularHomography("BEV homography is not invertible")
        object.__setattr__(self, "homography", hmat)
        object.__setattr__(self, "grid_shape", (int(self.grid_shape[0]), int(self.grid_shape[1])))


def ground_bev_mapping(sensor_to_image: np.ndarray, x_range: tuple, y_range: tuple,
                       resolution: float) -> BevMapping:
    """BEV grid over the z = 0 ground plane of the sensor frame.

    Grid row 0 is the far edge (``x = x_range[1]``); column 0 is the left edge
    (``y = y_range[1]``).  Cell centres sit at half-cell offsets.
    """
    rows = int(round((x_range[1] - x_range[0]) / resolution))
    cols = int(round((y_range[1] - y_range[0]) / resolution))
    # grid (col, row, 1) -> ground (x, y, 1); cell (c, r) covers [c, c+1) x [r, r+1)
    grid_to_ground = np.array([
        [0.0, -resolution, x_range[1]],
        [-resolution, 0.0, y_range[1]],
        [0.0, 0.0, 1.0],
    ])
    p = np.asarray(sensor_to_image, dtype=np.float64)
    ground_to_image = p[:, [0, 1, 3]]
    image_to_grid = np.linalg.inv(ground_to_image @ grid_to_ground)
    return BevMapping(image_to_grid, (rows, cols))


def to_bev(values: np.ndarray, bev: BevMapping, labels: bool = False) -> np.ndarray:
    """Inverse-warp a perspective map onto the BEV grid.

    Each grid cell centre is mapped back through the inverse homography.
    Confidence maps use bilinear sampling and mark out-of-view cells NaN;
    label maps use nearest sampling and mark them IGNORE.
    """
    values = np.asarray(values)
    h, w = values.shape
    rows, cols = bev.grid_shape
    inv = np.linalg.inv(bev.homography)
    gc, gr = np.meshgrid(np.arange(cols) + 0.5, np.arange(rows) + 0.5)
    pts = np.stack([gc.ravel(), gr.ravel(), np.ones(gc.size)])
    src = inv @ pts
    with np.errstate(divide="ignore", invalid="ignore"):
        u = src[0] / src[2] - 0.5
        v = src[1] / src[2] - 0.5
    ahead = src[2] > 0
    if labels:
        ui = np.floor(u + 0.5)
        vi = np.floor(v + 0.5)
        ok = ahead & (ui >= 0) & (ui < w) & (vi >= 0) & (vi < h)
        out = np.full(rows * cols, IGNORE, dtype=values.dtype if values.dtype != bool else np.uint8)
        out[ok] = values[vi[ok].astype(int), ui[ok].astype(int)]
        return out.reshape(rows, cols)
    ok = ahead & (u >= -0.5) & (u <= w - 0.5) & (v >= -0.5) & (v <= h - 0.5)
    uc = np.clip(u[ok], 0, w - 1)
    vc = np.clip(v[ok], 0, h - 1)
    u0 = np.minimum(np.floor(uc).astype(int), w - 1)
    v0 = np.minimum(np.floor(vc).astype(int), h - 1)
    u1 = np.minimum(u0 + 1, w - 1)
    v1 = np.minimum(v0 + 1, h - 1)
    fu = uc - u0
    fv = vc - v0
    img = values.astype(np.float64)
    sample = (img[v0, u0] * (1 - fu) * (1 - fv) + img[v0, u1] * fu * (1 - fv)
              + img[v1, u0] * (1 - fu) * fv + img[v1, u1] * fu * fv)
    out = np.full(rows * cols, np.nan)
    out[ok] = sample
    return out.reshape(rows, cols)


# ---------------------------------------------------------------------------
# Files
# ---------------------------------------------------------------------------


def load_gt_png(path, colors: Mapping[tuple, int] = KITTI_GT_COLORS) -> np.ndarray:
    """Map colour triples of a ground-truth PNG to ROAD / NON_ROAD / IGNORE.

    Unlisted colours are treated as IGNORE.
    """
    try:
        rgb = np.asarray(Image.open(path).convert("RGB"), dtype=np.int64)
    except OSError as exc:
        raise InputError(f"cannot read ground truth {path}: {exc}") from exc
    key = (rgb[..., 0] << 16) | (rgb[..., 1] << 8) | rgb[..., 2]
    out = np.full(key.shape, IGNORE, dtype=np.uint8)
    for (r, g, b), label in colors.items():
        out[key == ((r << 16) | (g << 8) | b)] = label
    return out


def save_gt_png(path, labels: np.ndarray) -> None:
    inverse = {label: color for color, label in KITTI_GT_COLORS.items()}
    rgb = np.zeros(labels.shape + (3,), dtype=np.uint8)
    for label, color in inverse.items():
        rgb[labels == label] = color
    Image.fromarray(rgb, "RGB").save(path)


def save_confidence_png(path, prob: np.ndarray) -> None:
    """Store road probability quantised to 8 bits."""
    q = np.floor(np.clip(prob, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    Image.fromarray(q, "L").save(path)


def quantize_confidence(prob: np.ndarray) -> np.ndarray:
    """The values a confidence PNG decodes to."""
    return np.floor(np.clip(prob, 0.0, 1.0) * 255.0 + 0.5) / 255.0


def load_confidence_png(path) -> np.ndarray:
    try:
        q = np.asarray(Image.open(path).convert("L"), dtype=np.float64)
    except OSError as exc:
        raise InputError(f"cannot read prediction {path}: {exc}") from exc
    return q / 255.0
