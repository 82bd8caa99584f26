"""Surrogate water masks via Gaussian-mixture thresholding, plus the
mask-agreement metric suite and quality gates."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from PIL import Image
from scipy import ndimage

from .errors import DegenerateInput, DimensionMismatch, EmptyInput

log = logging.getLogger("hydrocurate.segval")

VARIANCE_FLOOR = 1e-6

# Rec. 709 luma weights; scalar "pixel intensity" for RGB inputs.
_LUMA = np.array([0.2126, 0.7152, 0.0722])


@dataclass
class PixelGrid:
    """Row-major intensity grid with values in [0, 1]."""

    width: int
    height: int
    channels: int
    data: np.ndarray  # shape (height, width, channels)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        expected = (self.height, self.width, self.channels)
        if self.data.shape != expected:
            raise ValueError(f"data shape {self.data.shape} != {expected}")
        if self.channels not in (1, 3):
            raise ValueError("channels must be 1 or 3")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("pixel values must be finite")
        if self.data.min() < 0.0 or self.data.max() > 1.0:
            raise ValueError("pixel values must lie in [0, 1]")

    @classmethod
    def from_image_file(cls, path) -> "PixelGrid":
        img = Image.open(path)
        if img.mode not in ("L", "RGB"):
            img = img.convert("RGB")
        arr = np.asarray(img, dtype=np.float64) / 255.0
        if arr.ndim == 2:
            arr = arr[:, :, None]
        h, w, c = arr.shape
        return cls(width=w, height=h, channels=c, data=arr)


@dataclass
class BinaryMask:
    """Boolean water mask; True marks water."""

    width: int
    height: int
    bits: np.ndarray  # shape (height, width), bool

    def __post_init__(self):
        self.bits = np.asarray(self.bits, dtype=bool)
        if self.bits.shape != (self.height, self.width):
            raise ValueError(f"bits shape {self.bits.shape} != {(self.height, self.width)}")

    @classmethod
    def from_image_file(cls, path) -> "BinaryMask":
        """Candidate-mask convention: any nonzero pixel counts as water."""
        arr = np.asarray(Image.open(path))
        if arr.ndim == 3:
            bits = arr.any(axis=2)
        else:
            bits = arr != 0
        h, w = bits.shape
        return cls(width=w, height=h, bits=bits)


@dataclass
class GmmModel:
    k: int
    weights: np.ndarray          # (k,)
    means: np.ndarray            # (k, d)
    variances: np.ndarray        # (k, d), diagonal
    log_likelihood_trace: list[float] = field(default_factory=list)
    converged: bool = True


def pixel_features(image: PixelGrid, mode: str = "luminance") -> np.ndarray:
    """Per-pixel feature rows: scalar luminance (default) or raw RGB."""
    flat = image.data.reshape(-1, image.channels)
    if mode == "luminance":
        if image.channels == 1:
            return flat.copy()
        return (flat @ _LUMA)[:, None]
    if mode == "rgb":
        if image.channels != 3:
            raise ValueError("rgb feature mode needs a 3-channel grid")
        return flat.copy()
    raise ValueError(f"unknown feature mode {mode!r}")


def _log_gaussian_diag(x: np.ndarray, means: np.ndarray, variances: np.ndarray) -> np.ndarray:
    # x: (n, d); returns (n, k) log densities under each diagonal component.
    diff = x[:, None, :] - means[None, :, :]
    return -0.5 * (
        np.sum(np.log(2.0 * np.pi * variances), axis=1)[None, :]
        + np.sum(diff * diff / variances[None, :, :], axis=2)
    )


def _log_responsibilities(x, weights, means, variances):
    joint = _log_gaussian_diag(x, means, variances) + np.log(weights)[None, :]
    norm = np.logaddexp.reduce(joint, axis=1)
    return joint - norm[:, None], float(np.sum(norm))


def _kmeanspp_centers(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    centers = [x[rng.integers(n)]]
    for _ in range(1, k):
        d2 = np.min(
            np.sum((x[:, None, :] - np.asarray(centers)[None, :, :]) ** 2, axis=2), axis=1
        )
        total = d2.sum()
        if total <= 0.0:
            centers.append(x[rng.integers(n)])
            continue
        centers.append(x[rng.choice(n, p=d2 / total)])
    return np.asarray(centers)


def fit_gmm(
    samples: np.ndarray,
    k: int = 2,
    seed: int = 0,
    max_iter: int = 200,
    tol: float = 1e-6,
    variance_floor: float = VARIANCE_FLOOR,
) -> GmmModel:
    """Diagonal-covariance EM from a k-means++ style start.

    Deterministic for a given seed. Stopping short of convergence is not an
    error: the best model comes back with ``converged=False``.
    """
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    n, d = x.shape
    if k < 2:
        raise ValueError("k must be at least 2")
    if n < 10 * k:
        raise ValueError(f"need at least {10 * k} samples for k={k}, got {n}")
    if np.all(x == x[0]):
        raise DegenerateInput("all samples identical; no mixture to fit")

    rng = np.random.default_rng(seed)
    means = _kmeanspp_centers(x, k, rng)
    base_var = np.maximum(np.var(x, axis=0), variance_floor)
    variances = np.tile(base_var, (k, 1))
    weights = np.full(k, 1.0 / k)

    trace: list[float] = []
    converged = False
    for _ in range(max_iter):
        log_resp, loglik = _log_responsibilities(x, weights, means, variances)
        trace.append(loglik)
        if len(trace) > 1 and trace[-1] - trace[-2] < tol:
            converged = True
            break
        resp = np.exp(log_resp)
        counts = resp.sum(axis=0)
        counts = np.maximum(counts, 1e-12)
        weights = counts / n
        means = (resp.T @ x) / counts[:, None]
        diff2 = (x[:, None, :] - means[None, :, :]) ** 2
        variances = np.einsum("nk,nkd->kd", resp, diff2) / counts[:, None]
        variances = np.maximum(variances, variance_floor)

    return GmmModel(
        k=k,
        weights=weights,
        means=means,
        variances=variances,
        log_likelihood_trace=trace,
        converged=converged,
    )


def component_posteriors(model: GmmModel, features: np.ndarray) -> np.ndarray:
    x = np.asarray(features, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    log_resp, _ = _log_responsibilities(x, model.weights, model.means, model.variances)
    return np.exp(log_resp)


def _component_luminance(model: GmmModel) -> np.ndarray:
    if model.means.shape[1] == 3:
        return model.means @ _LUMA
    return model.means[:, 0]


def gmm_mask(
    image: PixelGrid,
    model: GmmModel,
    water_component: str = "lowest_mean",
    feature_mode: Optional[str] = None,
) -> BinaryMask:
    """Maximum-posterior assignment, then pick the water component.

    ``lowest_mean`` takes the component with the darkest mean;
    ``bottom_region`` prefers the component owning the largest connected
    region touching the bottom edge, falling back to ``lowest_mean``.
    """
    mode = feature_mode or ("rgb" if model.means.shape[1] == 3 else "luminance")
    features = pixel_features(image, mode)
    labels = component_posteriors(model, features).argmax(axis=1)
    labels = labels.reshape(image.height, image.width)

    water_idx = int(np.argmin(_component_luminance(model)))
    if water_component == "bottom_region":
        best_area = 0
        for comp in range(model.k):
            comp_mask = labels == comp
            regions, n_regions = ndimage.label(comp_mask)
            if n_regions == 0:
                continue
            bottom_ids = np.unique(regions[-1, :])
            bottom_ids = bottom_ids[bottom_ids != 0]
            if bottom_ids.size == 0:
                continue
            area = max(int(np.sum(regions == rid)) for rid in bottom_ids)
            if area > best_area:
                best_area = area
                water_idx = comp
    elif water_component != "lowest_mean":
        raise ValueError(f"unknown water component strategy {water_component!r}")

    return BinaryMask(width=image.width, height=image.height, bits=labels == water_idx)


@dataclass(frozen=True)
class SegMetrics:
    """Pixel confusion counts and the derived agreement ratios.

    A ratio is None exactly when its denominator is zero.
    """

    tp: int
    fp: int
    fn: int
    tn: int
    iou: Optional[float]
    dice: Optional[float]
    precision: Optional[float]
    recall: Optional[float]
    accuracy: Optional[float]
    specificity: Optional[float]

    @classmethod
    def from_counts(cls, tp: int, fp: int, fn: int, tn: int) -> "SegMetrics":
        def ratio(num, den):
            return None if den == 0 else num / den

        return cls(
            tp=tp, fp=fp, fn=fn, tn=tn,
            iou=ratio(tp, tp + fp + fn),
            dice=ratio(2 * tp, 2 * tp + fp + fn),
            precision=ratio(tp, tp + fp),
            recall=ratio(tp, tp + fn),
            accuracy=ratio(tp + tn, tp + fp + fn + tn),
            specificity=ratio(tn, tn + fp),
        )


RATIO_FIELDS = ("iou", "dice", "precision", "recall", "accuracy", "specificity")


def compare_masks(candidate: BinaryMask, reference: BinaryMask) -> SegMetrics:
    """Confusion counts with the candidate as prediction, reference as truth."""
    if (candidate.width, candidate.height) != (reference.width, reference.height):
        raise DimensionMismatch(
            f"candidate {candidate.width}x{candidate.height} vs "
            f"reference {reference.width}x{reference.height}"
        )
    c = candidate.bits
    r = reference.bits
    tp = int(np.count_nonzero(c & r))
    fp = int(np.count_nonzero(c & ~r))
    fn = int(np.count_nonzero(~c & r))
    tn = int(np.count_nonzero(~c & ~r))
    return SegMetrics.from_counts(tp, fp, fn, tn)


@dataclass(frozen=True)
class SegGates:
    """Strict lower bounds a comparison must clear to count as reliable."""

    iou: float = 0.5
    dice: float = 0.2
    precision: float = 0.1
    recall: float = 0.2


def gate_segmentation(metrics: SegMetrics, gates: SegGates = SegGates()) -> bool:
    """All four strict inequalities must hold; undefined fields fail."""
    for name in ("iou", "dice", "precision", "recall"):
        value = getattr(metrics, name)
        if value is None or value <= getattr(gates, name):
            return False
    return True


def water_fraction(mask: BinaryMask) -> float:
    total = mask.width * mask.height
    return float(np.count_nonzero(mask.bits)) / total if total else 0.0


def gate_coverage(fraction: float, threshold: float = 0.20) -> bool:
    """Inclusive: at least `threshold` of the pixels must be water."""
    return fraction >= threshold


@dataclass(frozen=True)
class MetricSummary:
    mean: Optional[float]
    stddev: Optional[float]
    count: int
    excluded: int
    single: bool = False


def summarize_metrics(all_metrics: list[SegMetrics]) -> dict[str, MetricSummary]:
    """Population mean and sample standard deviation per ratio field.

    Undefined entries are excluded per metric, with the exclusion count
    reported; a single defined value reports stddev 0 with a flag.
    """
    if not all_metrics:
        raise EmptyInput("no metrics to summarize")
    out: dict[str, MetricSummary] = {}
    for name in RATIO_FIELDS:
        values = [getattr(m, name) for m in all_metrics]
        defined = np.array([v for v in values if v is not None], dtype=np.float64)
        excluded = len(values) - defined.size
        if defined.size == 0:
            out[name] = MetricSummary(None, None, 0, excluded)
        elif defined.size == 1:
            out[name] = MetricSummary(float(defined[0]), 0.0, 1, excluded, single=True)
        else:
            out[name] = MetricSummary(
                float(defined.mean()), float(defined.std(ddof=1)), int(defined.size), excluded
            )
    return out
