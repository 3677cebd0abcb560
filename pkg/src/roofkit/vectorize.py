"""Algebraic raster-to-vector conversion.

Every function accepts soft (probability) inputs and is built from finite
differences, ReLU and weighted means, so it is piecewise smooth in its
inputs.  Arrays may carry leading batch dimensions: an orientation image is
``(..., 3, H, W)`` and a mask ``(..., H, W)``.
"""

from __future__ import annotations

import numpy as np

from .model import (
    CH_BG,
    CH_LR,
    CH_TB,
    PrimitiveType,
    RasterBundle,
    RoofkitError,
    RoofPrimitive,
)

SIDE_NAMES = ("left", "right", "top", "bottom")
GABLE_FRACTION = 0.05
ABSENT_EPS = 1e-6


def mask_from_orientation(orientation) -> np.ndarray:
    """Primitive mask probability: one minus the background channel."""
    orientation = np.asarray(orientation)
    return 1.0 - orientation[..., CH_BG, :, :]


def _axis_derivative(mask: np.ndarray, axis: int) -> np.ndarray:
    """Backward difference with zero padding on both ends.

    Entry k is ``mask[k] - mask[k-1]`` for k in 0..n, so rising edges land on
    the first inside index and falling edges one past the last inside index.
    """
    axis = axis % mask.ndim
    n = mask.shape[axis]

    def sl(a, b):
        idx = [slice(None)] * mask.ndim
        idx[axis] = slice(a, b)
        return tuple(idx)

    shape = list(mask.shape)
    shape[axis] = n + 1
    d = np.empty(shape, dtype=np.result_type(mask.dtype, np.float32))
    d[sl(0, 1)] = mask[sl(0, 1)]
    np.subtract(mask[sl(1, n)], mask[sl(0, n - 1)], out=d[sl(1, n)])
    np.negative(mask[sl(n - 1, n)], out=d[sl(n, n + 1)])
    return d


def _as_float(a) -> np.ndarray:
    a = np.asarray(a)
    return a if a.dtype.kind == "f" else a.astype(float)


def boundary_response(mask, side: str) -> np.ndarray:
    """ReLU'd derivative response whose weighted mean locates ``side``.

    Shape is the mask shape with one extra entry along the differenced axis.
    """
    mask = _as_float(mask)
    if side in ("left", "right"):
        d = _axis_derivative(mask, mask.ndim - 1)
    elif side in ("top", "bottom"):
        d = _axis_derivative(mask, mask.ndim - 2)
    else:
        raise RoofkitError(f"unknown side {side!r}")
    if side in ("left", "top"):
        return np.maximum(d, 0.0)
    return np.maximum(-d, 0.0)


def _axis_profiles(mask: np.ndarray, horizontal: bool):
    """Rising and falling responses summed across the other axis.

    ``horizontal`` selects x (left/right); otherwise y (top/bottom).  Uses
    relu(-d) = relu(d) - d, and the summed derivative is the derivative of
    the summed mask, so only one full-size ReLU pass is needed.
    """
    axis = mask.ndim - 1 if horizontal else mask.ndim - 2
    other = -2 if horizontal else -1
    d = _axis_derivative(mask, axis)
    rise = np.maximum(d, 0.0, out=d).sum(axis=other)
    net = _axis_derivative(mask.sum(axis=other), mask.ndim - 2)
    fall = rise - net
    return rise, np.maximum(fall, 0.0, out=fall)


def _weighted_mean(prof: np.ndarray, side: str):
    coords = np.arange(prof.shape[-1], dtype=prof.dtype)
    total = prof.sum(axis=-1)
    if np.any(total <= 0):
        raise RoofkitError(f"no boundary response on the {side} side")
    out = (prof @ coords) / total
    return float(out) if np.ndim(out) == 0 else out


def _profile(mask: np.ndarray, side: str) -> np.ndarray:
    """Response summed over the axis orthogonal to ``side``'s coordinate."""
    r = boundary_response(mask, side)
    if side in ("left", "right"):
        return r.sum(axis=-2)
    return r.sum(axis=-1)


def boundary_coordinate(mask, side: str):
    """Weighted-mean boundary coordinate; raises if the mask gives no response."""
    return _weighted_mean(_profile(_as_float(mask), side), side)


def vectorize_box(orientation):
    """(left, right, top, bottom) of the primitive in an orientation image."""
    mask = _as_float(mask_from_orientation(orientation))
    rise_x, fall_x = _axis_profiles(mask, True)
    rise_y, fall_y = _axis_profiles(mask, False)
    return (
        _weighted_mean(rise_x, "left"),
        _weighted_mean(fall_x, "right"),
        _weighted_mean(rise_y, "top"),
        _weighted_mean(fall_y, "bottom"),
    )


def vectorize_angles(orientation, angle):
    """Facet angles (angle_lr, angle_tb) in radians.

    Weighted average of the cosine image, weights from the matching
    orientation channel, followed by arccos.  A side whose total weight is
    below ``ABSENT_EPS`` per pixel is reported as ``None`` (scalar input)
    or ``nan`` (batched input).
    """
    orientation = _as_float(orientation)
    angle = _as_float(angle)
    npix = angle.shape[-1] * angle.shape[-2]
    out = []
    for ch in (CH_LR, CH_TB):
        w = orientation[..., ch, :, :]
        sw = w.sum(axis=(-2, -1))
        swa = np.einsum("...ij,...ij->...", w, angle)
        absent = sw <= ABSENT_EPS * npix
        mean = np.clip(swa / np.where(absent, 1.0, sw), 0.0, 1.0)
        theta = np.where(absent, np.nan, np.arccos(mean))
        if np.ndim(theta) == 0:
            out.append(None if absent else float(theta))
        else:
            out.append(theta)
    return tuple(out)


def type_counts(orientation):
    """Winner-takes-all pixel counts (S_b for top/bottom, S_g for left/right)."""
    orientation = np.asarray(orientation)
    lr = orientation[..., CH_LR, :, :]
    tb = orientation[..., CH_TB, :, :]
    bg = orientation[..., CH_BG, :, :]
    # argmax semantics: the first maximal channel wins
    lr_wins = lr >= np.maximum(tb, bg)
    tb_wins = (tb >= bg) & ~lr_wins
    s_b = tb_wins.sum(axis=(-2, -1))
    s_g = lr_wins.sum(axis=(-2, -1))
    return s_b, s_g


def classify_counts(s_b, s_g):
    """Vectorized type rule; returns (horizontal, hip) boolean arrays."""
    s_b = np.asarray(s_b)
    s_g = np.asarray(s_g)
    if np.any(s_b + s_g == 0):
        raise RoofkitError("orientation image is all background")
    horizontal = s_b >= s_g
    minority = np.where(horizontal, s_g, s_b)
    hip = minority > GABLE_FRACTION * (s_b + s_g)
    return horizontal, hip


def classify_type(orientation) -> PrimitiveType:
    s_b, s_g = type_counts(orientation)
    horizontal, hip = classify_counts(s_b, s_g)
    return PrimitiveType.from_parts(bool(horizontal), bool(hip))


def vectorize_primitive(bundle: RasterBundle) -> RoofPrimitive:
    left, right, top, bottom = vectorize_box(bundle.orientation)
    a_lr, a_tb = vectorize_angles(bundle.orientation, bundle.angle)
    ptype = classify_type(bundle.orientation)
    return RoofPrimitive(
        left, top, right, bottom, ptype,
        angle_lr=0.0 if a_lr is None else a_lr,
        angle_tb=0.0 if a_tb is None else a_tb,
    )


def response_report(orientation) -> list[dict]:
    """Per-side diagnostics of the derivative responses (for CSV reports)."""
    mask = mask_from_orientation(orientation)
    rows = []
    for side in SIDE_NAMES:
        prof = _profile(mask, side)
        total = float(prof.sum())
        peak = int(np.argmax(prof))
        rows.append(
            {
                "side": side,
                "total_response": total,
                "coordinate": float(prof @ np.arange(len(prof)) / total) if total > 0 else float("nan"),
                "peak_index": peak,
                "peak_response": float(prof[peak]),
                "support": int(np.count_nonzero(prof)),
            }
        )
    return rows
