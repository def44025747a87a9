"""Channel clustering stage: L2 dominant selection, DBSCAN over the rest.

Channels are split into dominant (L2 norm >= the p1-percentile threshold),
clustered (DBSCAN groups over the remaining channels), and noise. K-Means
is available only as the clustering-algorithm ablation arm.
"""

from dataclasses import dataclass

import numpy as np

from . import backend
from .errors import DegenerateClusteringError
from .tensor_core import channel_l2_norms, percentile

LABEL_DOMINANT = "dominant"
LABEL_NOISE = "noise"


@dataclass(frozen=True)
class ClusteringParams:
    """Percentile knobs for the clustering stage (defaults per the method)."""
    p1: float = 75.0
    p2: float = 10.0

    def __post_init__(self):
        for name in ("p1", "p2"):
            v = getattr(self, name)
            if not 0.0 <= v <= 100.0:
                raise ValueError(f"{name}={v} outside [0, 100]")


@dataclass
class ChannelPartition:
    """Disjoint channel groups covering 0..C-1.

    `labels[i]` is "dominant", "noise", or the integer cluster id.
    """
    dominant: list
    clusters: list
    noise: list
    labels: list
    tau: float = 0.0
    eps: float = 0.0
    minpts: int = 0

    @property
    def num_channels(self):
        return len(self.labels)

    @property
    def valid(self):
        """Dominant plus clustered channel indices, ascending."""
        out = set(self.dominant)
        for c in self.clusters:
            out.update(c)
        return sorted(out)

    def check(self):
        """Raise AssertionError if the partition does not tile 0..C-1."""
        seen = list(self.dominant) + list(self.noise)
        for c in self.clusters:
            seen.extend(c)
        assert sorted(seen) == list(range(self.num_channels)), "partition must tile channels"
        for i, lab in enumerate(self.labels):
            if lab == LABEL_DOMINANT:
                assert i in self.dominant
            elif lab == LABEL_NOISE:
                assert i in self.noise
            else:
                assert i in self.clusters[lab]

    def to_dict(self):
        return {
            "dominant": [int(i) for i in self.dominant],
            "clusters": [[int(i) for i in c] for c in self.clusters],
            "noise": [int(i) for i in self.noise],
            "tau": self.tau,
            "eps": self.eps,
            "minpts": self.minpts,
        }


def select_dominant(f, p1):
    """Split channels at the p1-percentile of their L2 norms.

    Returns (dominant, rest, tau); the threshold is inclusive, so ties at
    tau count as dominant.
    """
    norms = channel_l2_norms(f)
    tau = percentile(norms, p1)
    dominant = [i for i in range(norms.size) if norms[i] >= tau]
    rest = [i for i in range(norms.size) if norms[i] < tau]
    return dominant, rest, tau


def pairwise_distances(f, rest):
    """Euclidean distance matrix between the flattened `rest` channels."""
    rest = list(rest)
    if not rest:
        raise ValueError("rest channel set is empty")
    h, w, _ = f.shape
    x = np.ascontiguousarray(
        f.astype(np.float64).transpose(2, 0, 1).reshape(-1, h * w)[rest])
    return backend.pairwise_euclidean(x)


def derive_eps(dist, p2):
    """p2-percentile of the strict upper triangle of the distance matrix."""
    n = dist.shape[0]
    if n < 2:
        raise DegenerateClusteringError(
            f"need at least 2 channels to derive eps, got {n}")
    iu = np.triu_indices(n, k=1)
    return percentile(dist[iu], p2)


def derive_minpts(c):
    """MinPts = max(2, ceil(0.01 * C)); integer arithmetic avoids FP drift."""
    if c < 1:
        raise ValueError(f"channel count must be >= 1, got {c}")
    return max(2, (c + 99) // 100)


def dbscan(dist, eps, minpts):
    """DBSCAN over a precomputed distance matrix.

    A point is core when its eps-neighborhood (which includes itself, since
    the diagonal is zero) holds at least `minpts` points. Returns int labels
    with -1 for noise; cluster ids are renumbered so that ids ascend with
    each cluster's lowest member index.
    """
    dist = np.ascontiguousarray(dist, dtype=np.float64)
    labels = backend.dbscan_labels(dist, float(eps), int(minpts))
    return _canonicalize(labels)


def _canonicalize(labels):
    """Renumber cluster ids by ascending lowest-member index."""
    labels = np.asarray(labels, dtype=np.int64).copy()
    firsts = {}
    for idx, lab in enumerate(labels):
        if lab >= 0 and lab not in firsts:
            firsts[lab] = idx
    order = sorted(firsts, key=lambda lab: firsts[lab])
    remap = {old: new for new, old in enumerate(order)}
    for i in range(labels.size):
        if labels[i] >= 0:
            labels[i] = remap[labels[i]]
    return labels


def kmeans_labels(dist_rows, k, iters=50, seed=0):
    """Lloyd's K-Means over row vectors; deterministic k-means++ init.

    Ablation-arm substitute for DBSCAN: every point gets a cluster, there
    is no noise label.
    """
    x = np.asarray(dist_rows, dtype=np.float64)
    n = x.shape[0]
    k = max(1, min(k, n))
    rng = np.random.default_rng(seed)
    centers = _kmeanspp_init(x, k, rng)
    labels = np.zeros(n, dtype=np.int64)
    for _ in range(iters):
        d2 = ((x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new_labels = d2.argmin(axis=1)
        for ci in range(k):
            members = new_labels == ci
            if members.any():
                centers[ci] = x[members].mean(axis=0)
            else:
                # re-seed an empty cluster at the point farthest from its center
                far = d2.min(axis=1).argmax()
                centers[ci] = x[far]
                new_labels[far] = ci
        if np.array_equal(new_labels, labels):
            labels = new_labels
            break
        labels = new_labels
    return _canonicalize(labels)


def _kmeanspp_init(x, k, rng):
    n = x.shape[0]
    centers = np.empty((k, x.shape[1]), dtype=np.float64)
    first = int(rng.integers(n))
    centers[0] = x[first]
    d2 = ((x - centers[0]) ** 2).sum(axis=1)
    for ci in range(1, k):
        total = d2.sum()
        if total <= 0:
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=d2 / total))
        centers[ci] = x[idx]
        d2 = np.minimum(d2, ((x - centers[ci]) ** 2).sum(axis=1))
    return centers


def partition_channels(f, params, *, use_l2=True, algorithm="dbscan",
                       kmeans_k=None, seed=0):
    """Run the full clustering stage on an (H', W', C) activation stack.

    `use_l2=False` (ablation) sends every channel to clustering; with
    `algorithm="kmeans"` the noise set is always empty. Fewer than 2
    non-dominant channels cannot be clustered and become noise.
    """
    f = np.asarray(f)
    c = f.shape[2]
    if use_l2:
        dominant, rest, tau = select_dominant(f, params.p1)
    else:
        dominant, rest, tau = [], list(range(c)), 0.0
    minpts = derive_minpts(c)
    labels = [LABEL_DOMINANT if i in set(dominant) else LABEL_NOISE
              for i in range(c)]
    clusters = []
    noise = []
    eps = 0.0
    if len(rest) < 2:
        noise = list(rest)
    else:
        dist = pairwise_distances(f, rest)
        if algorithm == "dbscan":
            eps = derive_eps(dist, params.p2)
            raw = dbscan(dist, eps, minpts)
        elif algorithm == "kmeans":
            h, w, _ = f.shape
            rows = f.astype(np.float64).transpose(2, 0, 1).reshape(-1, h * w)[rest]
            k = kmeans_k if kmeans_k is not None else _dbscan_cluster_count(
                dist, params.p2, minpts)
            raw = kmeans_labels(rows, k, seed=seed)
        else:
            raise ValueError(f"unknown clustering algorithm {algorithm!r}")
        n_clusters = int(raw.max()) + 1 if (raw >= 0).any() else 0
        clusters = [[] for _ in range(n_clusters)]
        for local, ch in enumerate(rest):
            lab = int(raw[local])
            if lab < 0:
                noise.append(ch)
            else:
                clusters[lab].append(ch)
                labels[ch] = lab
    part = ChannelPartition(dominant=dominant, clusters=clusters, noise=noise,
                            labels=labels, tau=tau, eps=eps, minpts=minpts)
    part.check()
    return part


def _dbscan_cluster_count(dist, p2, minpts):
    try:
        eps = derive_eps(dist, p2)
    except DegenerateClusteringError:
        return 1
    raw = dbscan(dist, eps, minpts)
    n = int(raw.max()) + 1 if (raw >= 0).any() else 0
    return max(1, n)
