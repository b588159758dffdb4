"""Segmentation losses with analytic gradients.

All probability inputs are (C, H, W) arrays with channel 0 the background.
Gradients are taken with respect to those probabilities.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .crf import BRUTE_FORCE_CAP, KernelFilter, _from_dict, bilateral_bandwidths, bilateral_features
from .tensor_io import UNLABELED

NORMALIZATIONS = ("pixel_count", "kernel_sum")
SOFT_FILTER_MODES = ("enabled", "disabled")
SOFT_FILTER_GRADS = ("stop", "subgradient")
FAST_PATHS = ("auto", "brute", "lattice")


class LossValueGrad(NamedTuple):
    value: float
    grad: np.ndarray


@dataclass(frozen=True)
class EnergyConfig:
    sigma_d: float = 15.0
    sigma_r: float = 100.0
    normalization: str = "pixel_count"
    soft_filter: str = "enabled"
    # "stop" treats the soft filter as a constant; "subgradient" differentiates through the max
    soft_filter_grad: str = "stop"
    fast_path: str = "auto"
    brute_cap: int = BRUTE_FORCE_CAP

    def __post_init__(self):
        for name in ("sigma_d", "sigma_r"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be a positive bandwidth, got {v!r}")
        _choice("normalization", self.normalization, NORMALIZATIONS)
        _choice("soft_filter", self.soft_filter, SOFT_FILTER_MODES)
        _choice("soft_filter_grad", self.soft_filter_grad, SOFT_FILTER_GRADS)
        _choice("fast_path", self.fast_path, FAST_PATHS)
        if int(self.brute_cap) != self.brute_cap or self.brute_cap < 1:
            raise ValueError(f"brute_cap must be a positive integer, got {self.brute_cap!r}")

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        return _from_dict(cls, d)


def _choice(name, value, allowed):
    if value not in allowed:
        raise ValueError(f"{name} must be one of {allowed}, got {value!r}")


def softmax(scores, axis=0):
    """Numerically stable softmax over ``axis`` (class scores to probabilities)."""
    s = np.asarray(scores, dtype=np.float64)
    shifted = s - np.max(s, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def _check_pair(p, labels):
    p = np.asarray(p, dtype=np.float64)
    lab = np.asarray(labels)
    if p.ndim != 3 or lab.shape != p.shape[1:]:
        raise ValueError(f"probabilities {p.shape} and labels {lab.shape} do not match")
    valid = (lab == UNLABELED) | ((lab >= 0) & (lab < p.shape[0]))
    if not np.all(valid):
        raise ValueError(f"labels must be in 0..{p.shape[0] - 1} or {UNLABELED}")
    return p, lab


def cross_entropy_masked(p_net, labels) -> LossValueGrad:
    """Cross entropy on labeled pixels, averaged separately over background
    and foreground pixels and the two averages summed."""
    p, lab = _check_pair(p_net, labels)
    grad = np.zeros_like(p)
    value = 0.0
    h_idx, w_idx = np.nonzero(lab != UNLABELED)
    cls = lab[h_idx, w_idx].astype(np.int64)
    picked = p[cls, h_idx, w_idx]
    if np.any(picked <= 0):
        raise ValueError("zero probability on the labeled class (log singularity)")
    for group in (cls == 0, cls != 0):
        n = int(group.sum())
        if n == 0:
            continue
        value += float(-np.log(picked[group]).sum() / n)
        grad[cls[group], h_idx[group], w_idx[group]] = -1.0 / (n * picked[group])
    return LossValueGrad(value, grad)


def soft_filter_weights(p_net, labels, enabled=True):
    """S(i) = 1 - max_c P(i) on labeled pixels, 1 elsewhere."""
    p, lab = _check_pair(p_net, labels)
    s = np.ones(p.shape[1:])
    if enabled:
        mask = lab != UNLABELED
        s[mask] = 1.0 - p.max(axis=0)[mask]
    return s


def _energy_filter(image, cfg):
    feats = bilateral_features(image)
    bw = bilateral_bandwidths(cfg.sigma_d, cfg.sigma_r)
    return KernelFilter(feats, bw, method=cfg.fast_path, cap=cfg.brute_cap)


def _normalizer(filt, shape, cfg):
    n = int(np.prod(shape))
    if cfg.normalization == "pixel_count":
        return float(n)
    # mean self-excluded kernel mass per pixel; constant in P so gradients are unaffected
    mass = filt(np.ones((1,) + tuple(shape)))
    return float(mass.sum() / n)


def energy_loss(p_net, image, labels, cfg=None, soft_weights=None) -> LossValueGrad:
    """Dense energy loss in its Potts form with gradient w.r.t. ``p_net``.

    value = (1/W) sum_i S(i) sum_c P^c(i) sum_{j != i} k(i, j) (1 - P^c(j))

    ``soft_weights`` overrides S; by default it is computed from ``p_net``
    and ``labels``.
    """
    cfg = cfg or EnergyConfig()
    p, lab = _check_pair(p_net, labels)
    img = np.asarray(image)
    if img.shape[:2] != p.shape[1:]:
        raise ValueError(f"image {img.shape[:2]} and probabilities {p.shape[1:]} differ in size")
    rows = p.sum(axis=0)
    if np.max(np.abs(rows - 1.0)) > 1e-4:
        raise ValueError("probability rows must sum to 1 within 1e-4")
    if soft_weights is None:
        s = soft_filter_weights(p, lab, cfg.soft_filter == "enabled")
    else:
        s = np.asarray(soft_weights, dtype=np.float64)
        if s.shape != p.shape[1:]:
            raise ValueError(f"soft weights {s.shape} do not match {p.shape[1:]}")

    filt = _energy_filter(img, cfg)
    norm = _normalizer(filt, p.shape[1:], cfg)
    c = p.shape[0]
    filtered = filt(np.concatenate([1.0 - p, s[None] * p], axis=0)) / norm
    disagree, weighted = filtered[:c], filtered[c:]

    per_pixel = (p * disagree).sum(axis=0)
    value = float((s * per_pixel).sum())
    # kernel symmetry k(i, j) = k(j, i) turns the second term into a filter of S * P
    grad = s[None] * disagree - weighted
    if cfg.soft_filter_grad == "subgradient" and cfg.soft_filter == "enabled" and soft_weights is None:
        mask = lab != UNLABELED
        top = np.argmax(p, axis=0)
        hh, ww = np.nonzero(mask)
        grad[top[hh, ww], hh, ww] -= per_pixel[hh, ww]
    return LossValueGrad(value, grad)


def energy_pairwise_reference(p_net, image, labels=None, cfg=None):
    """Literal pixel-pair, class-pair evaluation of the dense energy loss.

    Evaluates sum_i sum_{j != i} S(i) sum_{a != b} G(i, j) P^a(i) P^b(j)
    with plain Python loops. Only meant as an oracle on small images.
    """
    cfg = cfg or EnergyConfig()
    p = np.asarray(p_net, dtype=np.float64)
    c, h, w = p.shape
    n = h * w
    if n > cfg.brute_cap:
        raise ValueError(f"{n} pixels exceed the brute-force cap of {cfg.brute_cap}")
    if labels is None:
        labels = np.full((h, w), UNLABELED, dtype=np.uint8)
    s = soft_filter_weights(p, labels, cfg.soft_filter == "enabled").ravel().tolist()
    img = np.asarray(image, dtype=np.float64).reshape(n, 3).tolist()
    probs = p.reshape(c, n).T.tolist()
    pos = [(i // w, i % w) for i in range(n)]
    two_d2 = 2.0 * cfg.sigma_d**2
    two_r2 = 2.0 * cfg.sigma_r**2

    kernel = [[0.0] * n for _ in range(n)]
    for i in range(n):
        yi, xi = pos[i]
        ri, gi, bi = img[i]
        for j in range(n):
            if j == i:
                continue
            yj, xj = pos[j]
            rj, gj, bj = img[j]
            dd = (yi - yj) ** 2 + (xi - xj) ** 2
            dr = (ri - rj) ** 2 + (gi - gj) ** 2 + (bi - bj) ** 2
            kernel[i][j] = math.exp(-dd / two_d2 - dr / two_r2)

    if cfg.normalization == "pixel_count":
        norm = float(n)
    else:
        norm = sum(sum(row) for row in kernel) / n

    total = 0.0
    for i in range(n):
        pi = probs[i]
        acc = 0.0
        for j in range(n):
            if j == i:
                continue
            pj = probs[j]
            cross = 0.0
            for a in range(c):
                for b in range(c):
                    if a != b:
                        cross += pi[a] * pj[b]
            acc += kernel[i][j] / norm * cross
        total += s[i] * acc
    return total


def joint_seg_loss(p_net, image, labels, cfg=None) -> LossValueGrad:
    ce = cross_entropy_masked(p_net, labels)
    en = energy_loss(p_net, image, labels, cfg)
    return LossValueGrad(ce.value + en.value, ce.grad + en.grad)


def classification_loss(scores, present) -> LossValueGrad:
    """Multi-label logistic loss over N class scores, averaged over classes.

    ``present`` holds the foreground class ids (1..N) in the image.
    """
    s = np.asarray(scores, dtype=np.float64).ravel()
    n = s.size
    if n < 1:
        raise ValueError("need at least one class score")
    y = np.zeros(n)
    for c in present:
        if not 1 <= int(c) <= n:
            raise ValueError(f"present class {c} outside 1..{n}")
        y[int(c) - 1] = 1.0
    # log(sigmoid(s)) = -log1p(exp(-s)), computed without overflow
    log_pos = -np.logaddexp(0.0, -s)
    log_neg = -np.logaddexp(0.0, s)
    value = float(-(y * log_pos + (1.0 - y) * log_neg).sum() / n)
    sig = np.exp(log_pos)
    return LossValueGrad(value, (sig - y) / n)
