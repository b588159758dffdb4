"""Fully connected CRF with Gaussian pairwise kernels, solved by mean-field updates."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from .lattice import build_lattice

BRUTE_FORCE_CAP = 4096
_ROW_BLOCK = 256


@dataclass(frozen=True)
class CrfConfig:
    iterations: int = 10
    w_smooth: float = 3.0
    sxy_smooth: float = 3.0
    w_appear: float = 10.0
    sxy_appear: float = 80.0
    srgb_appear: float = 13.0
    compat: float = 1.0

    def __post_init__(self):
        if isinstance(self.iterations, bool) or int(self.iterations) != self.iterations:
            raise ValueError(f"iterations must be an integer, got {self.iterations!r}")
        if self.iterations < 1:
            raise ValueError(f"iterations must be >= 1, got {self.iterations}")
        for name in ("sxy_smooth", "sxy_appear", "srgb_appear"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be a positive bandwidth, got {v}")
        for name in ("w_smooth", "w_appear", "compat"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ValueError(f"{name} must be finite and >= 0, got {v}")

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        return _from_dict(cls, d)


def _from_dict(cls, d):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(d) - names
    if unknown:
        raise ValueError(f"unknown {cls.__name__} fields: {sorted(unknown)}")
    return cls(**d)


def position_features(h, w):
    """(H, W, 2) array of (row, col) pixel coordinates."""
    yy, xx = np.mgrid[0:h, 0:w]
    return np.stack([yy, xx], axis=-1).astype(np.float64)


def bilateral_features(image):
    """(H, W, 5) array: row, col, r, g, b (colors on the 0..255 scale)."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"image must be H x W x 3, got {img.shape}")
    return np.concatenate([position_features(*img.shape[:2]), img], axis=-1)


def bilateral_bandwidths(sxy, srgb):
    return np.array([sxy, sxy, srgb, srgb, srgb], dtype=np.float64)


def _scaled(features, bandwidths):
    f = np.asarray(features, dtype=np.float64)
    bw = np.broadcast_to(np.asarray(bandwidths, dtype=np.float64), (f.shape[-1],))
    if np.any(~(bw > 0)):
        raise ValueError(f"bandwidths must be > 0, got {bw}")
    return f.reshape(-1, f.shape[-1]) / bw


def gaussian_kernel_matrix(features, bandwidths, cap=BRUTE_FORCE_CAP):
    """Dense (N, N) matrix exp(-|f_i - f_j|^2 / 2) with a zero diagonal."""
    f = _scaled(features, bandwidths)
    n = f.shape[0]
    if n > cap:
        raise ValueError(f"{n} pixels exceed the brute-force cap of {cap}")
    k = np.empty((n, n))
    for start in range(0, n, _ROW_BLOCK):
        block = f[start : start + _ROW_BLOCK]
        diff = block[:, None, :] - f[None, :, :]
        k[start : start + len(block)] = np.exp(-0.5 * np.einsum("ijk,ijk->ij", diff, diff))
    np.fill_diagonal(k, 0.0)
    return k


def gaussian_filter_bruteforce(values, features, bandwidths, cap=BRUTE_FORCE_CAP):
    """Exact self-excluded Gaussian filtering of (C, H, W) values.

    ``features`` is (H, W, d) in raw units and ``bandwidths`` has length d.
    """
    v = np.asarray(values, dtype=np.float64)
    k = gaussian_kernel_matrix(features, bandwidths, cap)
    return (v.reshape(v.shape[0], -1) @ k).reshape(v.shape)


def gaussian_filter_fast(values, features, bandwidths):
    """Lattice approximation of :func:`gaussian_filter_bruteforce`."""
    v = np.asarray(values, dtype=np.float64)
    lattice = build_lattice(_scaled(features, bandwidths))
    flat = v.reshape(v.shape[0], -1)
    return (lattice.filter(flat) - flat).reshape(v.shape)


class KernelFilter:
    """Self-excluded Gaussian filter over fixed pixel features, reusable across calls.

    ``method`` is "brute", "lattice" or "auto" (brute when the pixel count is
    within ``cap``).
    """

    def __init__(self, features, bandwidths, method="auto", cap=BRUTE_FORCE_CAP, weight=1.0):
        f = np.asarray(features)
        self.shape = f.shape[:-1]
        n = int(np.prod(self.shape))
        if method == "auto":
            method = "brute" if n <= cap else "lattice"
        if method == "brute":
            self._matrix = weight * gaussian_kernel_matrix(features, bandwidths, cap)
            self._lattice = None
        elif method == "lattice":
            self._matrix = None
            self._lattice = build_lattice(_scaled(features, bandwidths))
            self._weight = weight
        else:
            raise ValueError(f"unknown filter method {method!r}")
        self.method = method

    def __add__(self, other):
        if self.method != "brute" or other.method != "brute":
            return NotImplemented
        out = object.__new__(KernelFilter)
        out.shape, out.method, out._lattice = self.shape, "brute", None
        out._matrix = self._matrix + other._matrix
        return out

    def __call__(self, values):
        v = np.asarray(values, dtype=np.float64)
        flat = v.reshape(v.shape[0], -1)
        if self._matrix is not None:
            out = flat @ self._matrix
        else:
            out = self._weight * (self._lattice.filter(flat) - flat)
        return out.reshape(v.shape)


def _softmax0(logits):
    m = np.max(logits, axis=0, keepdims=True)
    e = np.exp(logits - m)
    return e / e.sum(axis=0, keepdims=True)


def _pairwise_filter(image, cfg, method, cap):
    h, w = image.shape[:2]
    filters = []
    if cfg.w_smooth > 0:
        filters.append(
            KernelFilter(position_features(h, w), [cfg.sxy_smooth] * 2, method, cap, cfg.w_smooth)
        )
    if cfg.w_appear > 0:
        filters.append(
            KernelFilter(
                bilateral_features(image),
                bilateral_bandwidths(cfg.sxy_appear, cfg.srgb_appear),
                method,
                cap,
                cfg.w_appear,
            )
        )
    if len(filters) == 2 and all(f.method == "brute" for f in filters):
        return [filters[0] + filters[1]]
    return filters


def crf_inference(unary_probs, image, cfg=None, method="auto", cap=BRUTE_FORCE_CAP, callback=None):
    """Mean-field inference with Potts compatibility.

    Parameters
    ----------
    unary_probs : (L, H, W) array
        Nonnegative class evidence; normalized per pixel before use.
    image : (H, W, 3) uint8 array
    cfg : CrfConfig
    method : {"auto", "brute", "lattice"}
        Filtering path for the pairwise messages.
    callback : callable, optional
        Called as ``callback(iteration, Q)`` after every update.

    Returns
    -------
    (L, H, W) float64 marginals Q, each pixel summing to 1.
    """
    cfg = cfg or CrfConfig()
    u = np.asarray(unary_probs, dtype=np.float64)
    img = np.asarray(image)
    if u.ndim != 3:
        raise ValueError(f"unary must be (L, H, W), got {u.shape}")
    if img.shape[:2] != u.shape[1:]:
        raise ValueError(f"unary {u.shape[1:]} and image {img.shape[:2]} sizes differ")
    if np.any(u < 0) or not np.all(np.isfinite(u)):
        raise ValueError("unary probabilities must be finite and nonnegative")
    total = u.sum(axis=0)
    if np.any(total <= 0):
        bad = np.argwhere(total <= 0)[0]
        raise ValueError(f"unary is zero for every class at pixel {tuple(bad)}")
    q = u / total
    with np.errstate(divide="ignore"):
        log_u = np.log(q)

    filters = _pairwise_filter(img, cfg, method, cap)
    for it in range(cfg.iterations):
        if filters:
            msg = sum(f(q) for f in filters)
            # Potts: energy of label l is compat * sum of messages for all other labels
            penalty = cfg.compat * (msg.sum(axis=0, keepdims=True) - msg)
            q = _softmax0(log_u - penalty)
        else:
            q = _softmax0(log_u)
        if callback is not None:
            callback(it, q)
    return q


def crf_label(unary_probs, image, cfg=None, method="auto", cap=BRUTE_FORCE_CAP):
    """Per-pixel argmax of the CRF marginals; ties go to the lowest index."""
    q = crf_inference(unary_probs, image, cfg, method, cap)
    return np.argmax(q, axis=0).astype(np.uint8)
