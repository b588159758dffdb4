"""Property checks run by ``rrm selftest`` on seeded random instances."""

from __future__ import annotations

import numpy as np

from .crf import CrfConfig, bilateral_bandwidths, bilateral_features, crf_inference, gaussian_filter_bruteforce, gaussian_filter_fast
from .gradcheck import finite_difference, max_relative_error
from .losses import EnergyConfig, cross_entropy_masked, energy_loss, energy_pairwise_reference, soft_filter_weights
from .synth import random_filter_instance, random_loss_instance


def fmt(x):
    return f"{x:.9g}"


def _potts_identity(rng, cfg):
    worst = 0.0
    for _ in range(3):
        p, img, lab = random_loss_instance(rng)
        fast = energy_loss(p, img, lab, cfg).value
        ref = energy_pairwise_reference(p, img, lab, cfg)
        worst = max(worst, abs(fast - ref) / max(abs(ref), 1e-300))
    return worst, 1e-9


def _filter_oracle(rng, cfg):
    worst = 0.0
    for _ in range(2):
        values, img = random_filter_instance(rng, 16, 16)
        feats = bilateral_features(img)
        bw = bilateral_bandwidths(cfg.sigma_d, cfg.sigma_r)
        exact = gaussian_filter_bruteforce(values, feats, bw)
        approx = gaussian_filter_fast(values, feats, bw)
        worst = max(worst, float(np.linalg.norm(approx - exact) / np.linalg.norm(exact)))
    return worst, 0.05


def _gradient_check(rng, cfg):
    p, img, lab = random_loss_instance(rng, 6, 6)
    s = soft_filter_weights(p, lab, cfg.soft_filter == "enabled")
    fixed = EnergyConfig(**{**cfg.to_dict(), "soft_filter_grad": "stop"})
    analytic = energy_loss(p, img, lab, fixed).grad + cross_entropy_masked(p, lab).grad

    def total(q):
        return energy_loss(q, img, lab, fixed, soft_weights=s).value + cross_entropy_masked(q, lab).value

    numeric = finite_difference(total, p)
    return max_relative_error(analytic, numeric), 1e-4


def _crf_normalization(rng, cfg):
    unary = rng.random((3, 12, 12)) + 1e-3
    img = rng.integers(0, 256, size=(12, 12, 3), dtype=np.uint8)
    worst = [0.0]

    def track(_, q):
        worst[0] = max(worst[0], float(np.max(np.abs(q.sum(axis=0) - 1.0))))

    crf_inference(unary, img, CrfConfig(iterations=5), method="brute", callback=track)
    return worst[0], 1e-6


def _crf_zero_weights(rng, cfg):
    unary = rng.random((4, 10, 10)) + 1e-3
    img = rng.integers(0, 256, size=(10, 10, 3), dtype=np.uint8)
    q = crf_inference(unary, img, CrfConfig(iterations=3, w_smooth=0.0, w_appear=0.0))
    return float(np.max(np.abs(q - unary / unary.sum(axis=0)))), 1e-9


PROPERTIES = [
    ("potts_identity", _potts_identity),
    ("filter_oracle", _filter_oracle),
    ("gradient_check", _gradient_check),
    ("crf_normalization", _crf_normalization),
    ("crf_zero_weights", _crf_zero_weights),
]


def run_selftest(seed=0, cfg=None, out=print):
    """Run every property; returns True when all pass."""
    cfg = cfg or EnergyConfig()
    ok = True
    for index, (name, check) in enumerate(PROPERTIES):
        rng = np.random.default_rng([seed, index])
        err, tol = check(rng, cfg)
        passed = err <= tol
        ok &= passed
        out(f"{'PASS' if passed else 'FAIL'} {name} error={fmt(err)} tol={fmt(tol)}")
    out(f"{'OK' if ok else 'FAILED'} seed={seed}")
    return ok
