"""Gradient filtering stage and CAM assembly.

Per cluster, the per-position gradient values across the cluster's channels
form a sequence (ascending channel order) that is smoothed with a 1-D
Gaussian; spatial means of the smoothed maps give clustered-channel scores,
spatial means of raw gradients give dominant-channel scores. Scores are
softmax-normalized (two-stage by default) and the heatmap is the
ReLU-normalized weighted sum of the feature channels.
"""

from dataclasses import dataclass, field

import numpy as np

from . import backend
from .clustering import ClusteringParams, partition_channels
from .errors import EmptyValidSetError
from .tensor_core import gaussian_kernel_1d, relu_normalize

PROV_DOMINANT = "dominant"
PROV_CLUSTER = "cluster"
PROV_ZERO = "zero"


@dataclass(frozen=True)
class CfCamParams:
    sigma_filter: float = 5.0
    clustering: ClusteringParams = field(default_factory=ClusteringParams)
    single_softmax: bool = False

    def __post_init__(self):
        if self.sigma_filter <= 0:
            raise ValueError(f"sigma_filter must be positive, got {self.sigma_filter}")


@dataclass
class ChannelWeights:
    """Per-channel combination weights; zero exactly on noise channels."""
    omega: np.ndarray
    provenance: list

    def check(self):
        valid = self.omega[[p != PROV_ZERO for p in self.provenance]]
        assert abs(valid.sum() - 1.0) <= 1e-6, "valid weights must sum to 1"
        zero = self.omega[[p == PROV_ZERO for p in self.provenance]]
        assert (zero == 0.0).all(), "noise weights must be exactly zero"


def gather_cluster_sequences(g, cluster):
    """Stack the cluster's gradient maps in ascending channel order.

    Returns an (n_k, H', W') array; the per-position sequence at (h, w) is
    out[:, h, w].
    """
    channels = sorted(cluster)
    if not channels:
        raise ValueError("cluster is empty")
    return np.stack([g[:, :, i] for i in channels]), channels


def gaussian_filter_1d(seq, sigma):
    """Smooth a 1-D sequence with the truncated, renormalized Gaussian."""
    seq = np.ascontiguousarray(seq, dtype=np.float64).reshape(-1, 1)
    kernel = gaussian_kernel_1d(sigma)
    return backend.gaussian_filter_axis0(seq, kernel)[:, 0]


def filter_cluster_gradients(g, cluster, sigma):
    """Cross-channel smoothing of one cluster's gradients.

    The i-th channel's filtered map takes the i-th slot of every position's
    smoothed sequence. Returns (filtered (n_k, H', W'), channels).
    """
    stack, channels = gather_cluster_sequences(g, cluster)
    nk, h, w = stack.shape
    kernel = gaussian_kernel_1d(sigma)
    flat = np.ascontiguousarray(stack.reshape(nk, h * w), dtype=np.float64)
    filtered = backend.gaussian_filter_axis0(flat, kernel)
    return filtered.reshape(nk, h, w), channels


def clustered_weight(filtered_map):
    """Spatial mean of a filtered gradient map."""
    return float(np.asarray(filtered_map, dtype=np.float64).mean())


def dominant_weight(raw_map):
    """Spatial mean of a raw (unfiltered) gradient map."""
    return float(np.asarray(raw_map, dtype=np.float64).mean())


def _softmax(x):
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(x - x.max())
    return e / e.sum()


def normalize_weights(alphas, clustered_idx, betas, dominant_idx,
                      num_channels, single_softmax=False):
    """Combine clustered and dominant scores into per-channel weights.

    Default is the two-stage scheme: softmax over the clustered scores
    first, then one softmax over those renormalized values together with
    the raw dominant scores. `single_softmax=True` skips the first stage.
    Noise channels get exactly zero.
    """
    alphas = list(alphas)
    betas = list(betas)
    if len(alphas) != len(clustered_idx) or len(betas) != len(dominant_idx):
        raise ValueError("scores and channel index lists disagree")
    if not alphas and not betas:
        raise EmptyValidSetError("all channels are noise; no weights to form")
    if alphas and not single_softmax:
        alpha_tilde = _softmax(alphas)
    else:
        alpha_tilde = np.asarray(alphas, dtype=np.float64)
    logits = np.concatenate([alpha_tilde, np.asarray(betas, dtype=np.float64)])
    w = _softmax(logits)
    omega = np.zeros(num_channels, dtype=np.float64)
    provenance = [PROV_ZERO] * num_channels
    for local, ch in enumerate(clustered_idx):
        omega[ch] = w[local]
        provenance[ch] = PROV_CLUSTER
    off = len(clustered_idx)
    for local, ch in enumerate(dominant_idx):
        omega[ch] = w[off + local]
        provenance[ch] = PROV_DOMINANT
    return ChannelWeights(omega=omega, provenance=provenance)


def assemble_cam(f, weights):
    """Heatmap = relu_normalize(sum_i omega_i * F_i) at feature resolution."""
    f = np.asarray(f)
    if weights.omega.shape[0] != f.shape[2]:
        raise ValueError("weight vector length must equal channel count")
    m = np.tensordot(f.astype(np.float64), weights.omega, axes=([2], [0]))
    return relu_normalize(m)


def compute_weights(g, partition, sigma_filter, single_softmax=False):
    """Scores for every valid channel of a partition (filtering included)."""
    clustered_idx = []
    alphas = []
    for cluster in partition.clusters:
        filtered, channels = filter_cluster_gradients(g, cluster, sigma_filter)
        for local, ch in enumerate(channels):
            clustered_idx.append(ch)
            alphas.append(clustered_weight(filtered[local]))
    dominant_idx = sorted(partition.dominant)
    betas = [dominant_weight(g[:, :, j]) for j in dominant_idx]
    return normalize_weights(alphas, clustered_idx, betas, dominant_idx,
                             partition.num_channels,
                             single_softmax=single_softmax)


def cf_cam(f, g, params=None):
    """Full pipeline: partition, filter, weight, assemble."""
    heatmap, _, _ = cf_cam_details(f, g, params)
    return heatmap


def cf_cam_details(f, g, params=None, *, use_l2=True, algorithm="dbscan",
                   kmeans_k=None, seed=0):
    """Like `cf_cam` but also returns the partition and weights.

    The keyword arguments select the ablation arms (no-L2 / K-Means).
    """
    params = params or CfCamParams()
    f = np.asarray(f)
    g = np.asarray(g)
    if f.shape != g.shape:
        raise ValueError(f"feature/gradient shape mismatch: {f.shape} vs {g.shape}")
    partition = partition_channels(f, params.clustering, use_l2=use_l2,
                                   algorithm=algorithm, kmeans_k=kmeans_k,
                                   seed=seed)
    weights = compute_weights(g, partition, params.sigma_filter,
                              single_softmax=params.single_softmax)
    return assemble_cam(f, weights), partition, weights
