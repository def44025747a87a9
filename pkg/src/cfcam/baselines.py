"""Reference CAM methods: Grad-CAM, Grad-CAM++, Score-CAM, Ablation-CAM.

Grad-CAM and Grad-CAM++ are pure functions of bundle tensors; Score-CAM and
Ablation-CAM run forward passes through a ModelHandle.
"""

from dataclasses import dataclass

import numpy as np

from .errors import EmptyValidSetError
from .tensor_core import bilinear_upsample, relu_normalize


@dataclass
class GradientPowers:
    """Elementwise gradient powers g1, g1^2, g1^3 (H', W', C)."""
    g1: np.ndarray
    g2: np.ndarray
    g3: np.ndarray

    @classmethod
    def from_g1(cls, g1):
        g1 = np.asarray(g1, dtype=np.float32)
        return cls(g1=g1, g2=g1 * g1, g3=g1 * g1 * g1)

    def check(self, atol=1e-5):
        assert self.g1.shape == self.g2.shape == self.g3.shape
        if not np.allclose(self.g2, self.g1 * self.g1, atol=atol, rtol=1e-5):
            raise ValueError("g2 is not the elementwise square of g1")
        if not np.allclose(self.g3, self.g1 * self.g1 * self.g1,
                           atol=atol, rtol=1e-5):
            raise ValueError("g3 is not the elementwise cube of g1")


def grad_cam(f, g1):
    """Weights are spatial means of the gradients."""
    f = np.asarray(f)
    g1 = np.asarray(g1)
    if f.shape != g1.shape:
        raise ValueError(f"shape mismatch: {f.shape} vs {g1.shape}")
    w = g1.astype(np.float64).mean(axis=(0, 1))
    return relu_normalize(np.tensordot(f.astype(np.float64), w, axes=([2], [0])))


def grad_cam_pp(f, powers):
    """Closed-form Grad-CAM++ from elementwise gradient powers.

    alpha = g2 / (2*g2 + sum_hw(F) * g3) with 0/0 -> 0, channel weight is
    sum_hw(alpha * relu(g1)).
    """
    f = np.asarray(f, dtype=np.float64)
    g1 = powers.g1.astype(np.float64)
    g2 = powers.g2.astype(np.float64)
    g3 = powers.g3.astype(np.float64)
    if f.shape != g1.shape:
        raise ValueError(f"shape mismatch: {f.shape} vs {g1.shape}")
    fsum = f.sum(axis=(0, 1))
    denom = 2.0 * g2 + fsum[None, None, :] * g3
    alpha = np.divide(g2, denom, out=np.zeros_like(g2), where=denom != 0.0)
    w = (alpha * np.maximum(g1, 0.0)).sum(axis=(0, 1))
    return relu_normalize(np.tensordot(f, w, axes=([2], [0])))


def _softmax(x):
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(x - x.max())
    return e / e.sum()


def score_cam(model, image, f, class_idx):
    """Score-CAM: channel weights from confidence gains of masked inputs.

    Each non-constant channel is upsampled to image size, min-max scaled,
    and used as a multiplicative mask on the (normalized-space) image; its
    raw weight is the class probability of the masked input minus that of
    the all-zero input. Weights are softmaxed over the surviving channels.
    """
    from .inference import forward_probs

    image = np.asarray(image)
    f = np.asarray(f)
    if f.shape[2] < 1:
        raise ValueError("feature stack has no channels")
    h, w = image.shape[:2]
    base = forward_probs(model, np.zeros_like(image), class_idx)
    cic = {}
    for i in range(f.shape[2]):
        up = bilinear_upsample(f[:, :, i], h, w).astype(np.float64)
        lo, hi = up.min(), up.max()
        if hi <= lo:
            continue
        mask = (up - lo) / (hi - lo)
        masked = image * mask[:, :, None].astype(image.dtype)
        cic[i] = forward_probs(model, masked, class_idx) - base
    if not cic:
        raise EmptyValidSetError("every activation channel is constant")
    idx = sorted(cic)
    sm = _softmax([cic[i] for i in idx])
    weights = np.zeros(f.shape[2], dtype=np.float64)
    weights[idx] = sm
    return relu_normalize(np.tensordot(f.astype(np.float64), weights,
                                       axes=([2], [0])))


def ablation_cam(head, f, class_idx):
    """Ablation-CAM: per-channel score drop when the channel is zeroed.

    Issues exactly C+1 head forward passes. The slope denominator is
    |y| + 1e-8 to guard near-zero base scores.
    """
    f = np.asarray(f, dtype=np.float32)
    feats = np.ascontiguousarray(f.transpose(2, 0, 1))[None]  # (1, C, H', W')
    y = float(head.forward(feats)[class_idx])
    c = f.shape[2]
    w = np.empty(c, dtype=np.float64)
    for i in range(c):
        ablated = feats.copy()
        ablated[0, i] = 0.0
        yi = float(head.forward(ablated)[class_idx])
        w[i] = (y - yi) / (abs(y) + 1e-8)
    return relu_normalize(np.tensordot(f.astype(np.float64), w, axes=([2], [0])))
