"""Pixel-level localization quality assessment for oriented bounding boxes."""
from obq.consistency import (
    LiteConfig,
    MetricKind,
    PixelSet,
    QualityReport,
    activated_pixels,
    batch_quality,
    integrate,
    lite_quality,
    lite_select,
    lite_subsample,
    localized_heatmap,
    quality,
    self_encoding,
)
from obq.geometry import OrientedBox, contains, corners, exact_iou, mc_iou
from obq.heatmap import Grid, Heatmap, centerness_label, gaussian_params, global_label, phi, sample
from obq.loss import LossConfig, ld_grad, ld_loss, ld_pointwise, total_loss

__all__ = [
    "Grid", "Heatmap", "LiteConfig", "LossConfig", "MetricKind", "OrientedBox", "PixelSet",
    "QualityReport", "activated_pixels", "batch_quality", "centerness_label", "contains",
    "corners", "exact_iou", "gaussian_params", "global_label", "integrate", "ld_grad",
    "ld_loss", "ld_pointwise", "lite_quality", "lite_select", "lite_subsample",
    "localized_heatmap", "mc_iou", "phi", "quality", "sample", "self_encoding", "total_loss",
]
