"""Faithfulness and similarity metrics.

Deletion/insertion curves with trapezoidal AUC, Average Drop / Average
Increase, windowed SSIM, and MSE. Curve masking works in normalized-input
space: deleted pixels become zeros there (the dataset mean in pixel space).
"""

from dataclasses import dataclass, field

import numpy as np

from .inference import forward_probs
from .tensor_core import gaussian_blur_2d, gaussian_kernel_1d

SSIM_WINDOW_SIGMA = 1.5   # 11x11 window: radius ceil(3*1.5) = 5
SSIM_C1 = (0.01 * 1.0) ** 2
SSIM_C2 = (0.03 * 1.0) ** 2


@dataclass
class Curve:
    """Class probability vs. masked fraction, fractions 0..1 inclusive."""
    fractions: np.ndarray
    probs: np.ndarray

    def normalized(self, anchor_index):
        """Probabilities divided by the unperturbed endpoint's value."""
        anchor = self.probs[anchor_index]
        if anchor <= 0:
            raise ValueError("cannot normalize by a non-positive probability")
        return Curve(self.fractions.copy(), self.probs / anchor)


@dataclass
class EvalReport:
    """Per-image evaluation rows for one method plus their aggregates.

    Aggregates are plain means of the per-image entries; AD/AI are reported
    as percentages.
    """
    method: str
    per_image: list = field(default_factory=list)

    def aggregate(self):
        rows = self.per_image
        if not rows:
            return {}
        ad, ai = average_drop_increase(
            [(r["full_prob"], r["masked_prob"]) for r in rows])
        return {
            "ad_percent": ad,
            "ai_percent": ai,
            "auc_del": float(np.mean([r["auc_del"] for r in rows])),
            "auc_ins": float(np.mean([r["auc_ins"] for r in rows])),
            "t_infer_ms": float(np.mean([r["explain_ms"] for r in rows])),
        }

    def to_dict(self):
        return {"aggregate": self.aggregate(),
                "per_image": [{k: v for k, v in r.items()
                               if k not in ("curves", "partition")}
                              for r in self.per_image]}


def top_fraction_mask(m, fraction):
    """Boolean mask of the floor(fraction*H*W) most salient pixels.

    Ties break toward the lower linear pixel index, so masks are
    deterministic and nested across growing fractions.
    """
    m = np.asarray(m)
    if not 0.0 <= fraction <= 1.0:
        raise ValueError(f"fraction {fraction} outside [0, 1]")
    k = int(np.floor(fraction * m.size))
    mask = np.zeros(m.size, dtype=bool)
    if k > 0:
        order = np.argsort(-m.ravel(), kind="stable")
        mask[order[:k]] = True
    return mask.reshape(m.shape)


def deletion_curve(model, image, m, steps, class_idx):
    """Probability decay while zeroing the top k/steps salient pixels."""
    if steps < 1:
        raise ValueError("steps must be >= 1")
    image = np.asarray(image, dtype=np.float32)
    fractions = np.arange(steps + 1, dtype=np.float64) / steps
    probs = np.empty(steps + 1, dtype=np.float64)
    for k in range(steps + 1):
        mask = top_fraction_mask(m, fractions[k])
        x = image.copy()
        x[mask] = 0.0
        probs[k] = forward_probs(model, x, class_idx)
    return Curve(fractions, probs)


def insertion_curve(model, image, m, steps, class_idx, blur_sigma=10.0):
    """Probability rise while restoring salient pixels onto a blurred copy."""
    if steps < 1:
        raise ValueError("steps must be >= 1")
    image = np.asarray(image, dtype=np.float32)
    base = gaussian_blur_2d(image, blur_sigma)
    fractions = np.arange(steps + 1, dtype=np.float64) / steps
    probs = np.empty(steps + 1, dtype=np.float64)
    for k in range(steps + 1):
        mask = top_fraction_mask(m, fractions[k])
        x = base.copy()
        x[mask] = image[mask]
        probs[k] = forward_probs(model, x, class_idx)
    return Curve(fractions, probs)


def auc(curve):
    """Trapezoidal area under (fractions, probs)."""
    return float(np.trapezoid(curve.probs, curve.fractions))


def average_drop_increase(pairs):
    """AD/AI percentages over (full-image prob Y, masked prob O) pairs."""
    pairs = list(pairs)
    if not pairs:
        raise ValueError("no probability pairs")
    drops = []
    incs = []
    for y, o in pairs:
        if y <= 0:
            raise ValueError(f"full-image probability must be positive, got {y}")
        drops.append(max(0.0, y - o) / y)
        incs.append(1.0 if o > y else 0.0)
    return 100.0 * float(np.mean(drops)), 100.0 * float(np.mean(incs))


def _window_stats(a, kernel):
    from . import backend
    x = np.ascontiguousarray(a, dtype=np.float64)
    x = backend.gaussian_filter_axis0(x, kernel)
    x = backend.gaussian_filter_axis0(np.ascontiguousarray(x.T), kernel)
    return x.T


def ssim(a, b):
    """Mean local SSIM, 11x11 Gaussian window (sigma 1.5), L = 1.

    Border windows renormalize over in-bounds taps, so every pixel
    contributes one local score.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.ndim != 2:
        raise ValueError("ssim expects 2-d maps")
    kernel = gaussian_kernel_1d(SSIM_WINDOW_SIGMA)
    mu_a = _window_stats(a, kernel)
    mu_b = _window_stats(b, kernel)
    var_a = _window_stats(a * a, kernel) - mu_a * mu_a
    var_b = _window_stats(b * b, kernel) - mu_b * mu_b
    cov = _window_stats(a * b, kernel) - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + SSIM_C1) * (2.0 * cov + SSIM_C2)
    den = (mu_a * mu_a + mu_b * mu_b + SSIM_C1) * (var_a + var_b + SSIM_C2)
    return float(np.mean(num / den))


def mse(a, b):
    """Mean squared difference."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))
