"""Confident CAM labels intersected with CRF labels to give partial pseudo labels."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .cam import DEFAULT_GAMMA, cam_from_features, multiscale_cam, normalize_fg, background_prob, concat_fg_bg, validate_class_set
from .crf import BRUTE_FORCE_CAP, CrfConfig, _from_dict, crf_label
from .tensor_io import UNLABELED

SELECTION_MODES = ("per_class_ratio", "fixed_alpha")


@dataclass(frozen=True)
class SelectionConfig:
    """How confident pixels are picked from the fused probability map.

    ``per_class_ratio`` keeps the top ``ratio`` fraction of each argmax group;
    ``fixed_alpha`` keeps pixels whose max probability exceeds ``alpha``.
    """

    mode: str = "per_class_ratio"
    ratio: float | None = 0.4
    alpha: float | None = None

    def __post_init__(self):
        if self.mode not in SELECTION_MODES:
            raise ValueError(f"mode must be one of {SELECTION_MODES}, got {self.mode!r}")
        if self.mode == "per_class_ratio":
            if self.alpha is not None:
                raise ValueError("alpha is only used in fixed_alpha mode")
            if self.ratio is None or not (0 < self.ratio <= 1):
                raise ValueError(f"ratio must be in (0, 1], got {self.ratio!r}")
        else:
            if self.ratio is not None:
                raise ValueError("ratio is only used in per_class_ratio mode")
            # alpha >= 1 is accepted and simply selects nothing
            if self.alpha is None or not (math.isfinite(self.alpha) and self.alpha > 0):
                raise ValueError(f"alpha must be a positive number, got {self.alpha!r}")

    @classmethod
    def fixed(cls, alpha):
        return cls(mode="fixed_alpha", ratio=None, alpha=alpha)

    @classmethod
    def per_class(cls, ratio=0.4):
        return cls(mode="per_class_ratio", ratio=ratio, alpha=None)

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if d.get("mode") == "fixed_alpha":
            d.setdefault("ratio", None)
        return _from_dict(cls, d)


def cam_label(prob, sel=None):
    """Channel index of confident pixels, 255 elsewhere."""
    sel = sel or SelectionConfig()
    p = np.asarray(prob, dtype=np.float64)
    if p.ndim != 3:
        raise ValueError(f"probabilities must be (L, H, W), got {p.shape}")
    top = np.argmax(p, axis=0)
    conf = p.max(axis=0)
    out = np.full(top.shape, UNLABELED, dtype=np.uint8)
    if sel.mode == "fixed_alpha":
        keep = conf > sel.alpha
        out[keep] = top[keep]
        return out

    flat_top = top.ravel()
    flat_conf = conf.ravel()
    flat_out = out.ravel()
    for c in np.unique(flat_top):
        idx = np.flatnonzero(flat_top == c)
        k = math.ceil(sel.ratio * len(idx))
        # stable sort keeps row-major order among equal confidences
        order = np.argsort(-flat_conf[idx], kind="stable")
        flat_out[idx[order[:k]]] = c
    return flat_out.reshape(top.shape)


def intersect_labels(cam_labels, crf_labels):
    """Keep a label only where the CAM and CRF label maps agree."""
    a = np.asarray(cam_labels)
    b = np.asarray(crf_labels)
    if a.shape != b.shape:
        raise ValueError(f"label maps differ in size: {a.shape} vs {b.shape}")
    out = np.full(a.shape, UNLABELED, dtype=np.uint8)
    agree = (a == b) & (a != UNLABELED)
    out[agree] = a[agree]
    return out


class MiningResult(NamedTuple):
    prob: np.ndarray  # (K+1, H, W) fused fg/bg probabilities, channel order
    cam_labels: np.ndarray  # channel indices or 255
    crf_labels: np.ndarray  # channel indices
    final: np.ndarray  # class ids or 255


def mine_with_details(
    feature_stacks: Sequence[np.ndarray],
    weights,
    image,
    classes: Sequence[int],
    gamma=DEFAULT_GAMMA,
    sel: SelectionConfig | None = None,
    crf_cfg: CrfConfig | None = None,
    crf_method="auto",
    crf_cap=BRUTE_FORCE_CAP,
) -> MiningResult:
    """Run the whole mining chain and keep the intermediate maps.

    ``feature_stacks`` holds one (D, H', W') feature map per image scale and
    ``weights`` the (K, D) classifier rows for ``classes`` in the same order.
    """
    classes = validate_class_set(classes)
    img = np.asarray(image)
    if not feature_stacks:
        raise ValueError("need feature maps for at least one scale")
    w = np.atleast_2d(np.asarray(weights, dtype=np.float64))
    if w.shape[0] != len(classes):
        raise ValueError(f"{w.shape[0]} weight rows for {len(classes)} classes")
    h, wd = img.shape[:2]
    cams = [cam_from_features(f, w, h, wd) for f in feature_stacks]
    p_fg = normalize_fg(multiscale_cam(cams))
    prob = concat_fg_bg(p_fg, background_prob(p_fg, gamma))
    i_cam = cam_label(prob, sel)
    i_crf = crf_label(prob, img, crf_cfg, crf_method, crf_cap)
    agreed = intersect_labels(i_cam, i_crf)
    lut = np.full(256, UNLABELED, dtype=np.uint8)
    lut[0] = 0
    lut[1 : len(classes) + 1] = classes
    return MiningResult(prob, i_cam, i_crf, lut[agreed])


def mine_reliable_regions(feature_stacks, weights, image, classes, gamma=DEFAULT_GAMMA, sel=None, crf_cfg=None, **kw):
    """Pseudo ground truth: class ids on reliable pixels, 255 elsewhere."""
    return mine_with_details(feature_stacks, weights, image, classes, gamma, sel, crf_cfg, **kw).final
