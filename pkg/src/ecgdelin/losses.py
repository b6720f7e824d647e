"""Segmentation losses: smoothed Dice, boundary Dice, differentiable F1.

The two structural losses rest on edge detection phrased as convolution with
fixed, non-trainable kernels so gradients flow through the standard machinery:
the 3-tap step detector (-1, 0, +1) and its dilated variant (-1, 0, ..., 0, +1)
of odd length n.  Edge maps are computed with full zero padding (n - 1 on each
side) so runs touching a record boundary carry the same edge mass as interior
runs.

Region counting uses the 3-tap detector: on a binary mask each boundary of a
run excites two adjacent windows with unit magnitude, so the total absolute
response of a run is 4, and dividing the summed response by 4 counts runs
exactly (runs of length >= 2 separated by gaps >= 2).  Soft predictions give
fractional counts, which is what keeps the count-based F1 differentiable.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import DiffTensor
from .errors import ConfigError, ShapeError

EDGE_MASS_PER_REGION = 4.0  # 2 boundaries x 2-sample detector response


def prewitt_kernel(dtype=np.float64) -> DiffTensor:
    """The 3-tap step detector (-1, 0, +1), shaped for single-channel conv."""
    return DiffTensor(np.array([[[-1.0, 0.0, 1.0]]], dtype=dtype), name="K_F1")


def boundary_kernel(n: int, dtype=np.float64) -> DiffTensor:
    """The dilated step detector (-1, 0, ..., 0, +1) of odd length n >= 3."""
    n = int(n)
    if n < 3 or n % 2 == 0:
        raise ConfigError(f"boundary kernel length must be odd and >= 3, got {n}")
    taps = np.zeros((1, 1, n), dtype=dtype)
    taps[0, 0, 0] = -1.0
    taps[0, 0, -1] = 1.0
    return DiffTensor(taps, name=f"K_Bound({n})")


def edge_map(x, kernel: DiffTensor) -> DiffTensor:
    """Absolute edge response per channel, fully zero-padded.

    Input (B, C, L) gives output (B, C, L + n - 1) for an n-tap kernel; the
    kernel is applied to every channel independently.
    """
    x = ad.astensor(x)
    if x.ndim != 3:
        raise ShapeError(f"expected (batch, channel, length), got {x.shape}")
    b, c, n = x.shape
    k = kernel.shape[-1]
    flat = ad.reshape(x, (b * c, 1, n))
    resp = ad.conv1d(flat, kernel, padding=k - 1)
    return ad.reshape(ad.absolute(resp), (b, c, resp.shape[-1]))


def soft_region_count(x) -> DiffTensor:
    """Per batch-channel region count: summed edge response over 4.

    Exact (to float rounding) on binary masks whose runs and interior gaps
    are at least 2 samples long; real-valued on soft inputs.
    """
    e = edge_map(x, prewitt_kernel())
    return ad.mul(ad.tsum(e, axis=-1), 1.0 / EDGE_MASS_PER_REGION)


def _check_pair(pred, gt) -> tuple[DiffTensor, DiffTensor]:
    p = ad.astensor(pred)
    g = ad.astensor(gt).detach()
    if p.shape != g.shape:
        raise ShapeError(f"prediction shape {p.shape} != target shape {g.shape}")
    if p.ndim != 3:
        raise ShapeError(f"expected (batch, channel, length), got {p.shape}")
    return p, g


def dice_loss(pred, gt, eps: float = 1.0) -> DiffTensor:
    """Smoothed Dice loss, per channel, averaged over channels and batch.

    Per (batch, channel): 1 - (2 sum(p g) + eps) / (sum(p) + sum(g) + eps).
    Gradients reach the prediction only.
    """
    p, g = _check_pair(pred, gt)
    inter = ad.tsum(ad.mul(p, g), axis=-1)
    denom = ad.add(ad.tsum(p, axis=-1), ad.tsum(g, axis=-1))
    dice = ad.div(ad.add(ad.mul(inter, 2.0), eps), ad.add(denom, eps))
    return ad.tmean(1.0 - dice)


def boundary_loss(pred, gt, n: int = 11, eps: float = 1.0) -> DiffTensor:
    """Dice loss between absolute edge maps of prediction and target.

    The detector length n sets how wide a band around each target boundary
    still yields overlap, hence how far away a predicted boundary can be
    while receiving a useful gradient.
    """
    p, g = _check_pair(pred, gt)
    kernel = boundary_kernel(n, dtype=p.dtype if np.issubdtype(p.dtype, np.floating) else np.float64)
    return dice_loss(edge_map(p, kernel), edge_map(g, kernel).data, eps=eps)


def f1_instance_loss(pred, gt, eps: float = 1.0) -> DiffTensor:
    """Smoothed F1 over soft region counts, averaged over channels and batch.

    With per-(batch, channel) counts GT and P:
    TP = |GT - max(GT - P, 0)|, FP = max(P - GT, 0), FN = max(GT - P, 0),
    loss = 1 - (2 TP + eps) / (2 TP + FP + FN + eps).
    For non-negative counts TP reduces to min(GT, P).
    """
    p, g = _check_pair(pred, gt)
    p_count = soft_region_count(p)
    g_count = soft_region_count(g)
    fn = ad.clamp_min(ad.add(g_count, ad.mul(p_count, -1.0)), 0.0)
    fp = ad.clamp_min(ad.add(p_count, ad.mul(g_count, -1.0)), 0.0)
    tp = ad.absolute(ad.add(g_count, ad.mul(fn, -1.0)))
    two_tp = ad.mul(tp, 2.0)
    score = ad.div(ad.add(two_tp, eps), ad.add(ad.add(two_tp, ad.add(fp, fn)), eps))
    return ad.tmean(1.0 - score)
