"""Evaluation metrics: mouth landmark distance (plain and velocity),
mouth-area IoU, flow-warped temporal consistency, and sample diversity.

Optical flow is an input here (precomputed files or the zero-flow
provider); flow estimation itself is out of scope.
"""

from __future__ import annotations

import numpy as np
import cv2

from .errors import (
    DegeneratePolygon,
    LengthMismatch,
    ShapeMismatch,
    TooFewSamples,
    TooShort,
)

TCM_EPS = 1e-8


def lmd(pred: np.ndarray, gt: np.ndarray) -> float:
    """Mean Euclidean distance between paired mouth points, [T, 40, 3]."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape or pred.ndim != 3 or pred.shape[2] != 3:
        raise ShapeMismatch(f"mouth sequences must share a [T, N, 3] shape: {pred.shape} vs {gt.shape}")
    return float(np.linalg.norm(pred - gt, axis=2).mean())


def lmd_v(pred: np.ndarray, gt: np.ndarray) -> float:
    """Mouth-distance on first temporal differences; offset-invariant."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape or pred.ndim != 3:
        raise ShapeMismatch(f"mouth sequences must share a [T, N, 3] shape: {pred.shape} vs {gt.shape}")
    if pred.shape[0] < 2:
        raise TooShort("velocity metric needs at least 2 frames")
    return lmd(np.diff(pred, axis=0), np.diff(gt, axis=0))


def _rasterize(polygon: np.ndarray, origin: np.ndarray, scale: float, size: int) -> np.ndarray:
    mask = np.zeros((size, size), dtype=np.uint8)
    pts = np.round((polygon - origin) * scale).astype(np.int32)
    cv2.fillPoly(mask, [pts], 1)
    return mask.astype(bool)


def polygon_iou(pred_poly: np.ndarray, gt_poly: np.ndarray, grid: int = 256) -> float:
    """IoU of two simple polygons, rasterized on a shared grid."""
    pred_poly = np.asarray(pred_poly, dtype=np.float64)
    gt_poly = np.asarray(gt_poly, dtype=np.float64)
    for poly in (pred_poly, gt_poly):
        if poly.ndim != 2 or poly.shape[0] < 3 or poly.shape[1] != 2:
            raise DegeneratePolygon(f"polygon must be [>=3, 2], got {poly.shape}")
    both = np.vstack([pred_poly, gt_poly])
    lo, hi = both.min(axis=0), both.max(axis=0)
    extent = float(max(hi[0] - lo[0], hi[1] - lo[1], 1e-9))
    margin = 0.02 * extent
    origin = lo - margin
    scale = (grid - 1) / (extent + 2 * margin)
    a = _rasterize(pred_poly, origin, scale, grid)
    b = _rasterize(gt_poly, origin, scale, grid)
    union = np.count_nonzero(a | b)
    if union == 0:
        raise DegeneratePolygon("both polygons rasterized to empty masks")
    return float(np.count_nonzero(a & b) / union)


def mouth_iou(pred_polys: np.ndarray, gt_polys: np.ndarray, grid: int = 256) -> float:
    """Mean per-frame IoU between outer-mouth polygons, [T, N, 2] each."""
    pred_polys = np.asarray(pred_polys, dtype=np.float64)
    gt_polys = np.asarray(gt_polys, dtype=np.float64)
    if pred_polys.shape[0] != gt_polys.shape[0]:
        raise ShapeMismatch(f"frame counts differ: {pred_polys.shape[0]} vs {gt_polys.shape[0]}")
    return float(np.mean([polygon_iou(p, g, grid=grid) for p, g in zip(pred_polys, gt_polys)]))


def warp_bilinear(image: np.ndarray, flow: np.ndarray) -> np.ndarray:
    """Backward-warp an image by a per-pixel flow field.

    Output pixel (y, x) samples the input at (y + flow[y,x,1], x + flow[y,x,0])
    with bilinear interpolation; sample coordinates clamp at the borders.
    """
    image = np.asarray(image, dtype=np.float64)
    flow = np.asarray(flow, dtype=np.float64)
    h, w = image.shape[:2]
    if flow.shape[:2] != (h, w) or flow.shape[2] != 2:
        raise ShapeMismatch(f"flow {flow.shape} does not match image {image.shape}")
    ys, xs = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    sx = np.clip(xs + flow[..., 0], 0, w - 1)
    sy = np.clip(ys + flow[..., 1], 0, h - 1)
    x0 = np.floor(sx).astype(int)
    y0 = np.floor(sy).astype(int)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = sx - x0
    fy = sy - y0
    if image.ndim == 3:
        fx = fx[..., None]
        fy = fy[..., None]
    return (
        image[y0, x0] * (1 - fx) * (1 - fy)
        + image[y0, x1] * fx * (1 - fy)
        + image[y1, x0] * (1 - fx) * fy
        + image[y1, x1] * fx * fy
    )


def tcm(reference: np.ndarray, generated: np.ndarray, ref_flows: np.ndarray, gen_flows: np.ndarray) -> float:
    """Temporal consistency: mean over t of exp(1 - ratio_t), where ratio_t
    compares warped-frame residual energy of the reference vs the generated
    video. Both residuals are regularized by the same epsilon so identical
    inputs score exactly 1.
    """
    reference = np.asarray(reference, dtype=np.float64)
    generated = np.asarray(generated, dtype=np.float64)
    if reference.shape[0] != generated.shape[0]:
        raise LengthMismatch(f"frame counts differ: {reference.shape[0]} vs {generated.shape[0]}")
    t_frames = reference.shape[0]
    if t_frames < 2:
        raise LengthMismatch("temporal consistency needs at least 2 frames")
    if len(ref_flows) != t_frames - 1 or len(gen_flows) != t_frames - 1:
        raise LengthMismatch("need one flow field per consecutive frame pair")

    scores = []
    for t in range(1, t_frames):
        ref_res = reference[t] - warp_bilinear(reference[t - 1], ref_flows[t - 1])
        gen_res = generated[t] - warp_bilinear(generated[t - 1], gen_flows[t - 1])
        ratio = (np.sum(ref_res**2) + TCM_EPS) / (np.sum(gen_res**2) + TCM_EPS)
        scores.append(np.exp(-(ratio - 1.0)))
    return float(np.mean(scores))


def zero_flow(height: int, width: int) -> np.ndarray:
    """Flow provider for static scenes."""
    return np.zeros((height, width, 2))


def diversity(samples: np.ndarray) -> float:
    """Mean per-coordinate variance across S sampled sequences [S, T, N, 3]."""
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 4:
        raise ShapeMismatch(f"samples must be [S, T, N, 3], got {samples.shape}")
    if samples.shape[0] < 2:
        raise TooFewSamples("diversity needs at least 2 samples")
    if np.all(samples == samples[0]):
        return 0.0  # keep bit-identical samples at exactly zero (np.var rounds)
    return float(np.var(samples, axis=0).mean())


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB between same-range images."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatch(f"image shapes differ: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0:
        return float("inf")
    return float(10.0 * np.log10(peak**2 / mse))
