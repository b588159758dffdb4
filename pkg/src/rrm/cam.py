"""Class activation maps, multi-scale fusion and foreground/background probabilities."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .tensor_io import resize_bilinear

DEFAULT_SCALES = (0.5, 1.0, 1.5, 2.0)
DEFAULT_GAMMA = 4.0


def validate_class_set(classes: Sequence[int], num_classes: int | None = None) -> tuple[int, ...]:
    """Return the foreground class ids as a tuple; background (0) is implicit."""
    ids = tuple(int(c) for c in classes)
    if not ids:
        raise ValueError("class set must contain at least one foreground class")
    if len(set(ids)) != len(ids):
        raise ValueError(f"duplicate class ids in {ids}")
    upper = num_classes if num_classes is not None else 254
    if any(c < 1 or c > upper for c in ids):
        raise ValueError(f"foreground class ids must lie in 1..{upper}, got {ids}")
    return ids


def cam_from_features(features, weights, out_h, out_w, clamp=True):
    """Per-class activation maps at the requested resolution.

    Parameters
    ----------
    features : (D, H', W') array
        Last-layer feature maps.
    weights : (K, D) array
        Classifier weight vector for each of the K foreground classes.
    out_h, out_w : int
        Reference (image) resolution.
    clamp : bool
        Zero out negative responses after resizing.

    Returns
    -------
    (K, out_h, out_w) float64 array
    """
    f = np.asarray(features, dtype=np.float64)
    w = np.atleast_2d(np.asarray(weights, dtype=np.float64))
    if f.ndim != 3:
        raise ValueError(f"features must be (D, H, W), got {f.shape}")
    if w.shape[1] != f.shape[0]:
        raise ValueError(f"weights have {w.shape[1]} channels, features have {f.shape[0]}")
    raw = np.einsum("kd,dhw->khw", w, f)
    cam = resize_bilinear(raw, out_h, out_w)
    if clamp:
        cam = np.maximum(cam, 0.0)
    return cam


def multiscale_cam(cams):
    """Mean of per-scale CAM stacks already resized to the same resolution."""
    stacks = [np.asarray(c, dtype=np.float64) for c in cams]
    if not stacks:
        raise ValueError("need at least one CAM stack")
    shape = stacks[0].shape
    for s in stacks[1:]:
        if s.shape != shape:
            raise ValueError(f"CAM stack shapes differ: {shape} vs {s.shape}")
    return np.sum(stacks, axis=0) / len(stacks)


def normalize_fg(cam):
    """Divide each class map by its maximum; all-zero maps stay zero."""
    m = np.asarray(cam, dtype=np.float64)
    if np.any(m < 0):
        raise ValueError("CAM must be nonnegative before normalization")
    peak = m.reshape(m.shape[0], -1).max(axis=1)
    out = np.zeros_like(m)
    nz = peak > 0
    out[nz] = m[nz] / peak[nz, None, None]
    return out


def background_prob(p_fg, gamma=DEFAULT_GAMMA):
    """Background score ``(1 - max_c p_fg)^gamma`` per pixel."""
    if not gamma > 1:
        raise ValueError(f"gamma must be > 1, got {gamma}")
    p = np.asarray(p_fg, dtype=np.float64)
    if p.ndim == 2:
        p = p[None]
    return (1.0 - p.max(axis=0)) ** gamma


def concat_fg_bg(p_fg, p_bg):
    """Stack background (channel 0) on top of the foreground channels."""
    fg = np.asarray(p_fg, dtype=np.float64)
    bg = np.asarray(p_bg, dtype=np.float64)
    if fg.ndim != 3 or bg.shape != fg.shape[1:]:
        raise ValueError(f"shape mismatch: fg {fg.shape}, bg {bg.shape}")
    return np.concatenate([bg[None], fg], axis=0)


def fg_bg_probabilities(feature_stacks, weights, out_h, out_w, gamma=DEFAULT_GAMMA):
    """Features at each scale -> fused, normalized (K+1, H, W) probability map."""
    cams = [cam_from_features(f, weights, out_h, out_w) for f in feature_stacks]
    p_fg = normalize_fg(multiscale_cam(cams))
    return concat_fg_bg(p_fg, background_prob(p_fg, gamma))
