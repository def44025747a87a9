"""CF-CAM saliency engine: clustering, gradient filtering, CAM baselines,
faithfulness metrics, and gradient-noise robustness evaluation."""

from .baselines import GradientPowers, ablation_cam, grad_cam, grad_cam_pp, score_cam
from .bundle import ExplainBundle, open_bundle, validate_bundle
from .cfcam import CfCamParams, ChannelWeights, cf_cam, cf_cam_details
from .clustering import (ChannelPartition, ClusteringParams, dbscan,
                         derive_eps, derive_minpts, pairwise_distances,
                         partition_channels, select_dominant)
from .errors import (ArrayFileError, BundleValidationError, CfcamError,
                     DegenerateClusteringError, EmptyValidSetError,
                     InferenceError, ModelLoadError, UnsupportedOpsetError)
from .inference import (ModelBundleGraphs, ModelHandle, compose_check,
                        forward_probs, load_model)
from .metrics import (Curve, auc, average_drop_increase, deletion_curve,
                      insertion_curve, mse, ssim, top_fraction_mask)
from .robustness import NoiseSpec, RobustnessCurves, perturb_gradients, robustness_sweep
from .tensor_core import (bilinear_upsample, channel_l2_norms, gaussian_blur_2d,
                          load_array_file, percentile, relu_normalize,
                          save_array_file)

__version__ = "0.1.0"
