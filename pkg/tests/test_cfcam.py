import math

import numpy as np
import pytest

from cfcam.cfcam import (CfCamParams, assemble_cam, cf_cam, cf_cam_details,
                         clustered_weight, compute_weights, dominant_weight,
                         filter_cluster_gradients, gather_cluster_sequences,
                         gaussian_filter_1d, normalize_weights)
from cfcam.clustering import ClusteringParams, partition_channels
from cfcam.errors import EmptyValidSetError
from cfcam.tensor_core import gaussian_kernel_1d, relu_normalize


def filter_oracle(seq, sigma):
    """Direct truncated+renormalized convolution of one sequence."""
    k = gaussian_kernel_1d(sigma)
    r = (k.size - 1) // 2
    n = len(seq)
    out = np.empty(n)
    for i in range(n):
        acc = 0.0
        wsum = 0.0
        for u in range(-r, r + 1):
            j = i + u
            if 0 <= j < n:
                acc += k[u + r] * seq[j]
                wsum += k[u + r]
        out[i] = acc / wsum
    return out


# ---------------------------------------------------------------------------
# sequences and 1-D filtering


def test_gather_singleton_cluster():
    g = np.arange(8, dtype=np.float32).reshape(2, 2, 2)
    stack, channels = gather_cluster_sequences(g, {1})
    assert channels == [1]
    np.testing.assert_array_equal(stack[0], g[:, :, 1])


def test_gather_orders_by_channel_index():
    g = np.zeros((2, 2, 3), dtype=np.float32)
    g[:, :, 1] = 2.0
    g[:, :, 2] = 4.0
    stack, channels = gather_cluster_sequences(g, {2, 1})
    assert channels == [1, 2]
    for h in range(2):
        for w in range(2):
            assert stack[:, h, w].tolist() == [2.0, 4.0]


def test_filter_constant_sequence_unchanged():
    seq = np.full(9, 1.7)
    np.testing.assert_allclose(gaussian_filter_1d(seq, 2.0), seq, rtol=1e-12)


def test_filter_length_one_unchanged():
    np.testing.assert_allclose(gaussian_filter_1d(np.array([3.0]), 5.0), [3.0])


def test_filter_impulse_matches_direct_convolution():
    seq = np.array([0.0, 0.0, 1.0, 0.0, 0.0])
    np.testing.assert_allclose(gaussian_filter_1d(seq, 1.0),
                               filter_oracle(seq, 1.0), atol=1e-12)


def test_filter_random_matches_direct_convolution():
    rng = np.random.default_rng(51)
    for _ in range(50):
        n = int(rng.integers(1, 40))
        seq = rng.normal(size=n)
        sigma = float(rng.uniform(0.3, 6.0))
        np.testing.assert_allclose(gaussian_filter_1d(seq, sigma),
                                   filter_oracle(seq, sigma), atol=1e-10)


# ---------------------------------------------------------------------------
# cluster gradient filtering


def test_filter_cluster_singleton_identity():
    rng = np.random.default_rng(53)
    g = rng.normal(size=(3, 3, 4)).astype(np.float32)
    filtered, channels = filter_cluster_gradients(g, {2}, sigma=5.0)
    assert channels == [2]
    np.testing.assert_allclose(filtered[0], g[:, :, 2], atol=1e-12)


def test_filter_cluster_identical_channels_fixed_point():
    g = np.zeros((2, 2, 3), dtype=np.float32)
    for c in range(3):
        g[:, :, c] = [[1.0, -2.0], [0.5, 4.0]]
    filtered, _ = filter_cluster_gradients(g, {0, 1, 2}, sigma=1.0)
    for c in range(3):
        np.testing.assert_allclose(filtered[c], g[:, :, 0], atol=1e-12)


def test_filter_cluster_matches_per_position_oracle():
    rng = np.random.default_rng(59)
    for _ in range(30):
        c = int(rng.integers(1, 9))
        g = rng.normal(size=(2, 2, c)).astype(np.float32)
        cluster = sorted(rng.choice(c, size=int(rng.integers(1, c + 1)),
                                    replace=False).tolist())
        sigma = float(rng.uniform(0.5, 6.0))
        filtered, channels = filter_cluster_gradients(g, cluster, sigma)
        for h in range(2):
            for w in range(2):
                seq = np.array([float(g[h, w, i]) for i in channels])
                want = filter_oracle(seq, sigma)
                got = filtered[:, h, w]
                np.testing.assert_allclose(got, want, atol=1e-6)


# ---------------------------------------------------------------------------
# weights


def test_clustered_weight_is_spatial_mean():
    assert clustered_weight(np.ones((3, 3))) == 1.0
    assert clustered_weight(np.array([[1.0, 3.0], [5.0, 7.0]])) == 4.0
    assert clustered_weight(np.array([[2.0, -2.0], [1.0, -1.0]])) == 0.0


def test_dominant_weight_matches_clustered_weight_on_raw():
    rng = np.random.default_rng(61)
    m = rng.normal(size=(4, 5))
    assert dominant_weight(m) == clustered_weight(m)
    assert dominant_weight(np.zeros((2, 2))) == 0.0
    assert dominant_weight(np.ones((2, 2))) == 1.0


def test_normalize_weights_single_dominant():
    w = normalize_weights([], [], [0.37], [0], 1)
    assert w.omega.tolist() == [1.0]
    assert w.provenance == ["dominant"]


def test_normalize_weights_two_equal_clustered():
    w = normalize_weights([0.4, 0.4], [0, 1], [], [], 2)
    np.testing.assert_allclose(w.omega, [0.5, 0.5])


def test_normalize_weights_two_stage_hand_example():
    # clustered alphas (0, ln 2) -> stage one gives (1/3, 2/3);
    # stage two softmaxes (1/3, 2/3, 0) with the dominant beta 0
    w = normalize_weights([0.0, math.log(2.0)], [0, 1], [0.0], [2], 3)
    np.testing.assert_allclose(
        w.omega,
        [0.321321919852769, 0.448440863799041, 0.230237216348190],
        atol=1e-6)
    assert w.omega.sum() == pytest.approx(1.0, abs=1e-12)


def test_normalize_weights_noise_zero_and_sum_one():
    rng = np.random.default_rng(67)
    for _ in range(200):
        c = int(rng.integers(1, 20))
        idx = rng.permutation(c)
        n_cl = int(rng.integers(0, c + 1))
        n_dom = int(rng.integers(0 if n_cl else 1, c - n_cl + 1))
        clustered = sorted(idx[:n_cl].tolist())
        dom = sorted(idx[n_cl:n_cl + n_dom].tolist())
        w = normalize_weights(rng.normal(size=n_cl).tolist(), clustered,
                              rng.normal(size=n_dom).tolist(), dom, c)
        w.check()
        valid = set(clustered) | set(dom)
        assert w.omega[[i for i in range(c) if i not in valid]].sum() == 0.0
        assert abs(w.omega.sum() - 1.0) <= 1e-6
        assert (w.omega >= 0.0).all()


def test_normalize_weights_all_noise_raises():
    with pytest.raises(EmptyValidSetError):
        normalize_weights([], [], [], [], 4)


def test_single_softmax_flag_skips_first_stage():
    a = [0.2, 1.1]
    b = [0.4]
    w = normalize_weights(a, [0, 1], b, [2], 3, single_softmax=True)
    logits = np.array(a + b)
    expected = np.exp(logits) / np.exp(logits).sum()
    np.testing.assert_allclose(w.omega, expected, atol=1e-12)


# ---------------------------------------------------------------------------
# assembly


def _weights(omega, provenance):
    from cfcam.cfcam import ChannelWeights
    return ChannelWeights(omega=np.asarray(omega, dtype=np.float64),
                          provenance=provenance)


def test_assemble_single_channel():
    rng = np.random.default_rng(71)
    f = rng.normal(size=(3, 3, 1)).astype(np.float32)
    out = assemble_cam(f, _weights([1.0], ["dominant"]))
    np.testing.assert_allclose(out, relu_normalize(f[:, :, 0]), atol=1e-7)


def test_assemble_two_identical_channels_convexity():
    rng = np.random.default_rng(73)
    plane = rng.normal(size=(4, 4)).astype(np.float32)
    f = np.stack([plane, plane], axis=2)
    out = assemble_cam(f, _weights([0.5, 0.5], ["cluster", "cluster"]))
    np.testing.assert_allclose(out, relu_normalize(plane), atol=1e-7)


def test_assemble_all_negative_sum_is_zero_map():
    f = -np.ones((2, 2, 2), dtype=np.float32)
    out = assemble_cam(f, _weights([0.5, 0.5], ["cluster", "cluster"]))
    assert (out == 0.0).all()


# ---------------------------------------------------------------------------
# full pipeline


def test_cf_cam_single_channel_reduces_to_normalized_feature():
    rng = np.random.default_rng(79)
    f = rng.normal(size=(4, 4, 1)).astype(np.float32)
    g = rng.normal(size=(4, 4, 1)).astype(np.float32)
    out = cf_cam(f, g)
    np.testing.assert_allclose(out, relu_normalize(f[:, :, 0]), atol=1e-7)


def _eight_channel_fixture():
    f = np.zeros((2, 2, 8), dtype=np.float32)
    f[:, :, 0] = 10.0
    f[:, :, 1] = 11.0
    base = np.array([[1.0, 0.0], [0.0, 0.0]])
    for i, ch in enumerate((2, 3, 4, 5)):
        f[:, :, ch] = base + 0.01 * i
    f[0, 0, 6] = 5.0
    f[0, 1, 7] = 7.0
    rng = np.random.default_rng(83)
    g = rng.normal(size=(2, 2, 8)).astype(np.float32)
    return f, g


def test_cf_cam_fixture_matches_hand_composed_pipeline():
    f, g = _eight_channel_fixture()
    params = CfCamParams(sigma_filter=1.0,
                         clustering=ClusteringParams(p1=75, p2=40))
    got, partition, weights = cf_cam_details(f, g, params)

    # hand composition: partition is dominant {0,1}, cluster {2,3,4,5},
    # noise {6,7} (verified in the clustering tests)
    alphas = []
    for slot, ch in enumerate([2, 3, 4, 5]):
        seqs = np.empty((2, 2, 4))
        for h in range(2):
            for w in range(2):
                seqs[h, w] = filter_oracle(
                    np.array([float(g[h, w, c]) for c in (2, 3, 4, 5)]), 1.0)
        alphas.append(seqs[:, :, slot].mean())
    betas = [float(g[:, :, j].mean()) for j in (0, 1)]
    tilde = np.exp(alphas) / np.exp(alphas).sum()
    logits = np.concatenate([tilde, betas])
    omega_valid = np.exp(logits) / np.exp(logits).sum()
    omega = np.zeros(8)
    omega[[2, 3, 4, 5]] = omega_valid[:4]
    omega[[0, 1]] = omega_valid[4:]
    expected = relu_normalize(
        np.tensordot(f.astype(np.float64), omega, axes=([2], [0])))
    np.testing.assert_allclose(got, expected, atol=1e-6)
    np.testing.assert_allclose(weights.omega, omega, atol=1e-9)


def test_cf_cam_output_in_unit_range():
    rng = np.random.default_rng(89)
    for _ in range(10):
        f = rng.normal(size=(5, 5, 12)).astype(np.float32)
        g = rng.normal(size=(5, 5, 12)).astype(np.float32)
        out = cf_cam(f, g)
        assert out.min() >= 0.0 and out.max() <= 1.0
        assert float(out.max()) in (0.0, 1.0)


def test_cf_cam_deterministic():
    rng = np.random.default_rng(97)
    f = rng.normal(size=(6, 6, 16)).astype(np.float32)
    g = rng.normal(size=(6, 6, 16)).astype(np.float32)
    assert cf_cam(f, g).tobytes() == cf_cam(f, g).tobytes()


def test_cf_cam_scale_invariant_in_features():
    # P max-normalizes, so positively rescaling F leaves M unchanged
    rng = np.random.default_rng(101)
    f = rng.normal(size=(4, 4, 8)).astype(np.float32)
    g = rng.normal(size=(4, 4, 8)).astype(np.float32)
    params = CfCamParams()
    base, part, w = cf_cam_details(f, g, params)
    scaled_map = np.tensordot((3.0 * f).astype(np.float64), w.omega,
                              axes=([2], [0]))
    np.testing.assert_allclose(relu_normalize(scaled_map), base, atol=1e-6)


def test_cf_cam_sigma_to_zero_equals_identity_filtering():
    rng = np.random.default_rng(103)
    f = rng.normal(size=(4, 4, 10)).astype(np.float32)
    g = rng.normal(size=(4, 4, 10)).astype(np.float32)
    params_tiny = CfCamParams(sigma_filter=1e-3)
    got, partition, w_tiny = cf_cam_details(f, g, params_tiny)

    # identity filtering: alphas are spatial means of raw gradients
    alphas = []
    clustered = []
    for cluster in partition.clusters:
        for ch in sorted(cluster):
            clustered.append(ch)
            alphas.append(float(g[:, :, ch].astype(np.float64).mean()))
    dom = sorted(partition.dominant)
    betas = [float(g[:, :, j].astype(np.float64).mean()) for j in dom]
    w_id = normalize_weights(alphas, clustered, betas, dom, 10)
    np.testing.assert_allclose(w_tiny.omega, w_id.omega, atol=1e-9)
    np.testing.assert_allclose(got, assemble_cam(f, w_id), atol=1e-7)


def test_cf_cam_permutation_equivariance():
    # block-rotate channels; the permutation keeps each group's internal
    # ascending order, so sequences and hence weights just relabel
    f, g = _eight_channel_fixture()
    params = CfCamParams(sigma_filter=1.0,
                         clustering=ClusteringParams(p1=75, p2=40))
    base, _, w_base = cf_cam_details(f, g, params)
    perm = np.array([6, 7, 0, 1, 2, 3, 4, 5])  # old index -> new position
    fp = f[:, :, perm]
    gp = g[:, :, perm]
    out, _, w_perm = cf_cam_details(fp, gp, params)
    np.testing.assert_allclose(w_perm.omega, w_base.omega[perm], atol=1e-9)
    np.testing.assert_allclose(out, base, atol=1e-6)


def test_singleton_clusters_reduce_to_double_softmax_of_means():
    # every cluster a singleton and no dominant channels: filtering is the
    # identity, so weights are the two-stage softmax of spatial means
    rng = np.random.default_rng(107)
    g = rng.normal(size=(3, 3, 4)).astype(np.float32)
    f = rng.normal(size=(3, 3, 4)).astype(np.float32)

    from cfcam.clustering import ChannelPartition
    part = ChannelPartition(dominant=[], clusters=[[0], [1], [2], [3]],
                            noise=[], labels=[0, 1, 2, 3])
    w = compute_weights(g, part, sigma_filter=5.0)
    means = [float(g[:, :, c].astype(np.float64).mean()) for c in range(4)]
    tilde = np.exp(means) / np.exp(means).sum()
    expected = np.exp(tilde) / np.exp(tilde).sum()
    np.testing.assert_allclose(w.omega, expected, atol=1e-12)
