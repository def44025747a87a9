"""Method registry: name -> heatmap computation over an opened bundle."""

import time

import numpy as np

from .baselines import GradientPowers, ablation_cam, grad_cam, grad_cam_pp, score_cam
from .cfcam import CfCamParams, cf_cam_details
from .tensor_core import bilinear_upsample

CF_CAM = "cf-cam"
GRAD_CAM = "grad-cam"
GRAD_CAM_PP = "grad-cam++"
SCORE_CAM = "score-cam"
ABLATION_CAM = "ablation-cam"

GRADIENT_METHODS = (CF_CAM, GRAD_CAM, GRAD_CAM_PP)
FORWARD_METHODS = (SCORE_CAM, ABLATION_CAM)
ALL_METHODS = GRADIENT_METHODS + FORWARD_METHODS


def compute_heatmap(method, bundle, params=None, g1_override=None,
                    ablation_arm=None, kmeans_k=None, seed=0):
    """Heatmap at feature resolution, plus a details dict.

    `g1_override` substitutes the first-order gradients (robustness sweeps);
    Grad-CAM++ powers are recomputed from the override so they stay
    consistent. `ablation_arm` is None, "no-l2", or "kmeans".
    """
    params = params or CfCamParams()
    f = bundle.features
    g1 = bundle.powers.g1 if g1_override is None else np.asarray(
        g1_override, dtype=np.float32)
    details = {}
    if method == CF_CAM:
        use_l2 = ablation_arm != "no-l2"
        algorithm = "kmeans" if ablation_arm == "kmeans" else "dbscan"
        heatmap, partition, weights = cf_cam_details(
            f, g1, params, use_l2=use_l2, algorithm=algorithm,
            kmeans_k=kmeans_k, seed=seed)
        details["partition"] = partition
        details["weights"] = weights
    elif method == GRAD_CAM:
        heatmap = grad_cam(f, g1)
    elif method == GRAD_CAM_PP:
        powers = (bundle.powers if g1_override is None
                  else GradientPowers.from_g1(g1))
        heatmap = grad_cam_pp(f, powers)
    elif method == SCORE_CAM:
        heatmap = score_cam(bundle.graphs.full, bundle.image, f,
                            bundle.class_index)
    elif method == ABLATION_CAM:
        heatmap = ablation_cam(bundle.graphs.head, f, bundle.class_index)
    else:
        raise ValueError(f"unknown method {method!r} "
                         f"(expected one of {', '.join(ALL_METHODS)})")
    return heatmap, details


def compute_heatmap_timed(method, bundle, **kwargs):
    """Like compute_heatmap, adding wall-clock milliseconds to the details."""
    t0 = time.perf_counter()
    heatmap, details = compute_heatmap(method, bundle, **kwargs)
    details["explain_ms"] = 1000.0 * (time.perf_counter() - t0)
    return heatmap, details


def heatmap_at_image_size(heatmap, bundle):
    h, w = bundle.pixels.shape[:2]
    return bilinear_upsample(heatmap, h, w)
