"""Synthetic images with hand-built backbone features, for tests and demos.

Each fixture is a dark canvas with one bright square object. Feature maps
carry a Gaussian bump over the object (optionally offset), an optional weaker
bump over a same-colored distractor patch, a constant channel and noise.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cam import DEFAULT_SCALES

FEATURE_STRIDE = 4


@dataclass
class Fixture:
    image: np.ndarray  # (H, W, 3) uint8
    features: list  # one (D, h_s, w_s) float32 array per scale
    scales: tuple
    weights: np.ndarray  # (K, D) rows for ``classes``
    classes: tuple
    gt: np.ndarray  # (H, W) uint8, class ids
    meta: dict = field(default_factory=dict)


def _bump(hs, ws, h, w, center, spread):
    # feature cell i lands on image row i*(h-1)/(hs-1) under corner-aligned resizing
    ys = np.arange(hs) * ((h - 1) / (hs - 1)) if hs > 1 else np.zeros(1)
    xs = np.arange(ws) * ((w - 1) / (ws - 1)) if ws > 1 else np.zeros(1)
    d2 = (ys[:, None] - center[0]) ** 2 + (xs[None, :] - center[1]) ** 2
    return np.exp(-d2 / (2.0 * spread**2))


def bright_square(
    seed=0,
    size=48,
    square=16,
    top_left=None,
    class_id=1,
    scales=DEFAULT_SCALES,
    color_noise=0.0,
    cam_offset=(0.0, 0.0),
    distractor=False,
    feature_noise=0.02,
):
    """Build one fixture.

    ``top_left`` defaults to the centered square. ``cam_offset`` shifts the
    activation bump relative to the square center (in pixels).
    """
    rng = np.random.default_rng(seed)
    h = w = size
    if top_left is None:
        top_left = ((h - square) // 2, (w - square) // 2)
    r0, c0 = top_left
    canvas = np.full((h, w, 3), 40.0)
    canvas[r0 : r0 + square, c0 : c0 + square] = 215.0
    gt = np.zeros((h, w), dtype=np.uint8)
    gt[r0 : r0 + square, c0 : c0 + square] = class_id

    patch = None
    if distractor:
        # same-colored patch in the corner farthest from the object
        side = square // 2
        cy, cx = r0 + square / 2, c0 + square / 2
        corners = [(2, 2), (2, w - 2 - side), (h - 2 - side, 2), (h - 2 - side, w - 2 - side)]
        pr, pc = max(corners, key=lambda rc: (rc[0] + side / 2 - cy) ** 2 + (rc[1] + side / 2 - cx) ** 2)
        if pr < r0 + square and r0 < pr + side and pc < c0 + square and c0 < pc + side:
            raise ValueError("object too large for a non-overlapping distractor")
        patch = (pr, pc, side)
        canvas[pr : pr + side, pc : pc + side] = 205.0

    if color_noise:
        canvas += rng.normal(scale=color_noise, size=canvas.shape)
    image = np.clip(np.rint(canvas), 0, 255).astype(np.uint8)

    center = (r0 + (square - 1) / 2 + cam_offset[0], c0 + (square - 1) / 2 + cam_offset[1])
    spread = square / 2.5
    feats = []
    for s in scales:
        hs = max(2, int(round(s * h / FEATURE_STRIDE)))
        ws = max(2, int(round(s * w / FEATURE_STRIDE)))
        obj = _bump(hs, ws, h, w, center, spread)
        if patch is not None:
            pc_center = (patch[0] + (patch[2] - 1) / 2, patch[1] + (patch[2] - 1) / 2)
            obj = obj + 0.55 * _bump(hs, ws, h, w, pc_center, patch[2] / 2.0)
        stack = np.stack(
            [
                obj,
                np.ones((hs, ws)),
                rng.normal(scale=1.0, size=(hs, ws)),
                rng.normal(scale=1.0, size=(hs, ws)),
            ]
        )
        stack[0] += rng.normal(scale=feature_noise, size=(hs, ws))
        feats.append(stack.astype(np.float32))
    weights = np.array([[1.0, -0.05, 0.01, -0.01]], dtype=np.float32)
    return Fixture(
        image=image,
        features=feats,
        scales=tuple(scales),
        weights=weights,
        classes=(class_id,),
        gt=gt,
        meta={"top_left": [int(r0), int(c0)], "square": int(square), "distractor": patch is not None},
    )


def fixture_family(n=6, seed=0, size=48):
    """Harder variants: random placement, CAM offset, distractor patch, color noise."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        square = int(rng.integers(12, 19))
        r0 = int(rng.integers(4, size - square - 4))
        c0 = int(rng.integers(4, size - square - 4))
        offset = tuple(rng.uniform(-3.0, 3.0, size=2))
        out.append(
            bright_square(
                seed=int(rng.integers(0, 2**31)),
                size=size,
                square=square,
                top_left=(r0, c0),
                class_id=int(rng.integers(1, 21)),
                color_noise=25.0,
                cam_offset=offset,
                distractor=True,
            )
        )
    return out


def random_loss_instance(rng, h=8, w=8, classes=3, labeled_fraction=0.5):
    """Random probabilities (rows on the simplex), RGB image and partial labels."""
    p = rng.dirichlet(np.full(classes, 2.0), size=(h, w)).transpose(2, 0, 1)
    image = rng.integers(0, 256, size=(h, w, 3), dtype=np.uint8)
    labels = rng.integers(0, classes, size=(h, w)).astype(np.uint8)
    labels[rng.random((h, w)) >= labeled_fraction] = 255
    return p, image, labels


def random_filter_instance(rng, h=32, w=32, channels=3):
    """Random values in [0, 1) and a uniformly random RGB image."""
    values = rng.random((channels, h, w))
    image = rng.integers(0, 256, size=(h, w, 3), dtype=np.uint8)
    return values, image
