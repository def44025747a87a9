"""Gradient-noise robustness harness.

Gaussian noise is injected into the bundle's first-order gradients at a
sweep of levels; each gradient-based method regenerates its heatmap and is
scored by SSIM/MSE against its clean heatmap. One noise draw per
(bundle, level, trial) is shared by all methods, and every draw's stream is
derived from (seed, bundle id, level index, trial index) so results do not
depend on execution order.
"""

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .errors import CfcamError
from .methods import GRADIENT_METHODS, compute_heatmap, heatmap_at_image_size
from .metrics import mse, ssim

DEFAULT_LEVELS = tuple(float(s) for s in range(1, 11))


@dataclass(frozen=True)
class NoiseSpec:
    levels: tuple = DEFAULT_LEVELS
    mode: str = "relative"   # "relative": scale by std of the gradients
    trials: int = 5
    seed: int = 0

    def __post_init__(self):
        if any(s < 0 for s in self.levels):
            raise ValueError("noise levels must be non-negative")
        if self.mode not in ("relative", "absolute"):
            raise ValueError(f"unknown noise mode {self.mode!r}")
        if self.trials < 1:
            raise ValueError("need at least one trial per level")


@dataclass
class RobustnessCurves:
    levels: tuple
    mean_ssim: dict = field(default_factory=dict)  # method -> list per level
    mean_mse: dict = field(default_factory=dict)

    def rows(self):
        """(method, sigma, mean_ssim, mean_mse) rows for CSV emission."""
        out = []
        for method in sorted(self.mean_ssim):
            for i, sigma in enumerate(self.levels):
                out.append((method, sigma, self.mean_ssim[method][i],
                            self.mean_mse[method][i]))
        return out


def perturb_gradients(g, sigma, mode="relative", seed=0):
    """g + N(0, s^2) elementwise; s = sigma, or sigma*std(g) in relative mode."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    g = np.asarray(g, dtype=np.float32)
    if sigma == 0:
        return g.copy()
    s = float(sigma) * float(g.astype(np.float64).std()) \
        if mode == "relative" else float(sigma)
    rng = np.random.default_rng(seed)
    noise = rng.normal(0.0, s, size=g.shape)
    return (g.astype(np.float64) + noise).astype(np.float32)


def _stream(seed, bundle_id, level_idx, trial_idx):
    digest = hashlib.sha256(bundle_id.encode("utf-8")).digest()
    bundle_key = int.from_bytes(digest[:8], "little")
    return np.random.SeedSequence([seed, bundle_key, level_idx, trial_idx])


def _sweep_one_bundle(bundle, methods, spec, params):
    """Per-(method, level) SSIM/MSE sums over this bundle's trials."""
    n_levels = len(spec.levels)
    acc_ssim = {m: np.zeros(n_levels) for m in methods}
    acc_mse = {m: np.zeros(n_levels) for m in methods}
    clean = {}
    for m in methods:
        heatmap, _ = compute_heatmap(m, bundle, params)
        clean[m] = heatmap_at_image_size(heatmap, bundle)
    for li, sigma in enumerate(spec.levels):
        for trial in range(spec.trials):
            stream = _stream(spec.seed, bundle.bundle_id, li, trial)
            g1p = perturb_gradients(bundle.powers.g1, sigma, spec.mode,
                                    seed=stream)
            for m in methods:
                heatmap, _ = compute_heatmap(m, bundle, params,
                                             g1_override=g1p)
                noisy = heatmap_at_image_size(heatmap, bundle)
                acc_ssim[m][li] += ssim(clean[m], noisy)
                acc_mse[m][li] += mse(clean[m], noisy)
    return acc_ssim, acc_mse


def robustness_sweep(bundles, methods, spec, params=None, jobs=1):
    """Mean SSIM/MSE per (method, level) across bundles and trials.

    Bundles may be processed in parallel (`jobs`); per-trial noise streams
    are keyed by bundle id, so partial sums combine in list order and the
    result never depends on scheduling.
    """
    methods = list(methods)
    bad = [m for m in methods if m not in GRADIENT_METHODS]
    if bad:
        raise CfcamError(f"robustness sweep is for gradient-based methods; "
                         f"got {bad} (allowed: {', '.join(GRADIENT_METHODS)})")
    bundles = list(bundles)
    if not bundles:
        raise CfcamError("no bundles to sweep")
    if jobs > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            partials = list(pool.map(
                lambda b: _sweep_one_bundle(b, methods, spec, params), bundles))
    else:
        partials = [_sweep_one_bundle(b, methods, spec, params)
                    for b in bundles]
    n_levels = len(spec.levels)
    acc_ssim = {m: np.zeros(n_levels) for m in methods}
    acc_mse = {m: np.zeros(n_levels) for m in methods}
    for part_ssim, part_mse in partials:
        for m in methods:
            acc_ssim[m] += part_ssim[m]
            acc_mse[m] += part_mse[m]
    denom = len(bundles) * spec.trials
    return RobustnessCurves(
        levels=tuple(spec.levels),
        mean_ssim={m: list(acc_ssim[m] / denom) for m in methods},
        mean_mse={m: list(acc_mse[m] / denom) for m in methods})
