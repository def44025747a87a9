from pathlib import Path

import numpy as np
import pytest

from cfcam.baselines import (GradientPowers, ablation_cam, grad_cam,
                             grad_cam_pp, score_cam)
from cfcam.bundle import open_bundle
from cfcam.errors import EmptyValidSetError
from cfcam.inference import forward_probs
from cfcam.tensor_core import bilinear_upsample, relu_normalize

FIXTURES = Path(__file__).parent / "fixtures" / "bundles"


@pytest.fixture(scope="module")
def bundle():
    return open_bundle(FIXTURES / "bundle_000")


# ---------------------------------------------------------------------------
# grad-cam


def test_grad_cam_single_channel_uniform_gradient():
    rng = np.random.default_rng(0)
    f = rng.normal(size=(4, 4, 1)).astype(np.float32)
    g = np.full((4, 4, 1), 0.7, np.float32)
    np.testing.assert_allclose(grad_cam(f, g), relu_normalize(f[:, :, 0]),
                               atol=1e-7)


def test_grad_cam_zero_gradients():
    rng = np.random.default_rng(1)
    f = rng.normal(size=(3, 3, 4)).astype(np.float32)
    out = grad_cam(f, np.zeros_like(f))
    assert (out == 0.0).all()


def test_grad_cam_matches_direct_formula():
    rng = np.random.default_rng(2)
    f = rng.normal(size=(3, 2, 5)).astype(np.float32)
    g = rng.normal(size=(3, 2, 5)).astype(np.float32)
    w = [float(g[:, :, c].astype(np.float64).mean()) for c in range(5)]
    expected = relu_normalize(sum(w[c] * f[:, :, c].astype(np.float64)
                                  for c in range(5)))
    np.testing.assert_allclose(grad_cam(f, g), expected, atol=1e-7)


# ---------------------------------------------------------------------------
# grad-cam++


def test_grad_cam_pp_zero_gradients_guarded():
    rng = np.random.default_rng(3)
    f = rng.normal(size=(4, 4, 3)).astype(np.float32)
    powers = GradientPowers.from_g1(np.zeros_like(f))
    out = grad_cam_pp(f, powers)
    assert (out == 0.0).all()


def test_grad_cam_pp_uniform_gradient_closed_form():
    # F all ones, g1 = c on one channel: alpha = 1/(2 + HW*c) everywhere,
    # weight = HW*c*alpha, heatmap = normalized single channel
    h = w = 3
    c_val = 0.5
    f = np.ones((h, w, 1), np.float32)
    powers = GradientPowers.from_g1(np.full((h, w, 1), c_val, np.float32))
    out = grad_cam_pp(f, powers)
    np.testing.assert_allclose(out, np.ones((h, w)), atol=1e-7)
    # alpha itself, via the formula pieces
    alpha = c_val ** 2 / (2 * c_val ** 2 + h * w * c_val ** 3)
    assert alpha == pytest.approx(1.0 / (2 + h * w * c_val))


def test_grad_cam_pp_alpha_nonnegative_when_denominator_positive():
    rng = np.random.default_rng(4)
    g1 = np.abs(rng.normal(size=(4, 4, 6))).astype(np.float32) + 0.1
    f = np.abs(rng.normal(size=(4, 4, 6))).astype(np.float32)
    powers = GradientPowers.from_g1(g1)
    g2, g3 = powers.g2.astype(np.float64), powers.g3.astype(np.float64)
    denom = 2 * g2 + f.astype(np.float64).sum((0, 1)) * g3
    assert (denom > 0).all()
    alpha = g2 / denom
    assert np.isfinite(alpha).all() and (alpha >= 0).all()


def test_gradient_powers_validation():
    rng = np.random.default_rng(5)
    g1 = rng.normal(size=(3, 3, 2)).astype(np.float32)
    good = GradientPowers.from_g1(g1)
    good.check()
    bad = GradientPowers(g1=g1, g2=g1 * g1 + 0.1, g3=g1 ** 3)
    with pytest.raises(ValueError, match="square"):
        bad.check()


# ---------------------------------------------------------------------------
# score-cam


def test_score_cam_all_constant_channels_error(bundle):
    f = np.ones((16, 16, 4), np.float32)
    with pytest.raises(EmptyValidSetError):
        score_cam(bundle.graphs.full, bundle.image, f, bundle.class_index)


def test_score_cam_single_varying_channel_gets_weight_one(bundle):
    rng = np.random.default_rng(6)
    f = np.zeros((16, 16, 3), np.float32)
    f[:, :, 1] = rng.random((16, 16))
    out = score_cam(bundle.graphs.full, bundle.image, f, bundle.class_index)
    np.testing.assert_allclose(out, relu_normalize(f[:, :, 1]), atol=1e-6)


def test_score_cam_matches_reference_loop(bundle):
    f = bundle.features[:, :, :5]
    got = score_cam(bundle.graphs.full, bundle.image, f, bundle.class_index)

    h, w = bundle.image.shape[:2]
    base = forward_probs(bundle.graphs.full, np.zeros_like(bundle.image),
                         bundle.class_index)
    cic = []
    for i in range(f.shape[2]):
        up = bilinear_upsample(f[:, :, i], h, w).astype(np.float64)
        lo, hi = up.min(), up.max()
        assert hi > lo
        mask = ((up - lo) / (hi - lo)).astype(np.float32)
        masked = bundle.image * mask[:, :, None]
        cic.append(forward_probs(bundle.graphs.full, masked,
                                 bundle.class_index) - base)
    weights = np.exp(cic - np.max(cic))
    weights /= weights.sum()
    expected = relu_normalize(np.tensordot(f.astype(np.float64), weights,
                                           axes=([2], [0])))
    np.testing.assert_allclose(got, expected, atol=1e-6)


def test_score_cam_deterministic(bundle):
    f = bundle.features[:, :, :4]
    a = score_cam(bundle.graphs.full, bundle.image, f, bundle.class_index)
    b = score_cam(bundle.graphs.full, bundle.image, f, bundle.class_index)
    assert a.tobytes() == b.tobytes()


# ---------------------------------------------------------------------------
# ablation-cam


def test_ablation_cam_pass_count(bundle):
    before = bundle.graphs.head.calls
    ablation_cam(bundle.graphs.head, bundle.features, bundle.class_index)
    c = bundle.features.shape[2]
    assert bundle.graphs.head.calls - before == c + 1


def test_ablation_cam_linear_head_analytic():
    from cfcam._onnx import Graph, Node
    from cfcam.inference import ModelHandle

    rng = np.random.default_rng(7)
    c, h, w = 5, 4, 4
    scores = rng.normal(size=c).astype(np.float32)
    # head: GlobalAveragePool -> Flatten -> Gemm == sum_i s_i * mean(F_i)
    nodes = [Node("GlobalAveragePool", "gap", ["features"], ["pooled"], {}),
             Node("Flatten", "fl", ["pooled"], ["flat"], {}),
             Node("Gemm", "fc", ["flat", "w", "b"], ["y"], {})]
    graph = Graph(name="linear", nodes=nodes,
                  initializers={"w": np.stack([scores, 2 * scores], axis=1),
                                "b": np.zeros(2, np.float32)},
                  inputs=[("features", [1, c, h, w])],
                  outputs=[("y", [1, 2])])
    head = ModelHandle(path="<memory>", graph_name="linear",
                       input_name="features", input_shape=(1, c, h, w),
                       output_name="y", num_outputs=2, opset=13, _graph=graph)

    f = rng.normal(size=(h, w, c)).astype(np.float32)
    got = ablation_cam(head, f, 0)
    means = f.astype(np.float64).mean(axis=(0, 1))
    y = float((scores * means).sum())
    wexp = scores * means / (abs(y) + 1e-8)
    expected = relu_normalize(np.tensordot(f.astype(np.float64), wexp,
                                           axes=([2], [0])))
    np.testing.assert_allclose(got, expected, atol=1e-5)
    assert head.calls == c + 1


def test_ablation_cam_irrelevant_channel_zero_weight():
    from cfcam._onnx import Graph, Node
    from cfcam.inference import ModelHandle

    c, h, w = 3, 2, 2
    weights = np.array([[1.0, 0.0, 2.0], [0.5, 0.0, 0.5]],
                       np.float32).T  # channel 1 never contributes
    nodes = [Node("GlobalAveragePool", "gap", ["features"], ["pooled"], {}),
             Node("Flatten", "fl", ["pooled"], ["flat"], {}),
             Node("Gemm", "fc", ["flat", "w", "b"], ["y"], {})]
    graph = Graph(name="lin", nodes=nodes,
                  initializers={"w": weights, "b": np.zeros(2, np.float32)},
                  inputs=[("features", [1, c, h, w])], outputs=[("y", [1, 2])])
    head = ModelHandle(path="<memory>", graph_name="lin",
                       input_name="features", input_shape=(1, c, h, w),
                       output_name="y", num_outputs=2, opset=13, _graph=graph)
    f = np.abs(np.random.default_rng(8).normal(size=(h, w, c))).astype(np.float32)
    ablation_cam(head, f, 0)  # smoke: runs C+1 passes

    feats = np.ascontiguousarray(f.transpose(2, 0, 1))[None]
    y = float(head.forward(feats)[0])
    ablated = feats.copy()
    ablated[0, 1] = 0.0
    y1 = float(head.forward(ablated)[0])
    assert (y - y1) / (abs(y) + 1e-8) == pytest.approx(0.0, abs=1e-7)


# ---------------------------------------------------------------------------
# cross-method contracts


def test_all_methods_emit_unit_range_heatmaps(bundle):
    from cfcam.methods import ALL_METHODS, compute_heatmap
    for method in ALL_METHODS:
        out, _ = compute_heatmap(method, bundle)
        assert out.min() >= 0.0 and out.max() <= 1.0
        assert float(out.max()) in (0.0, 1.0), method


def test_grad_cam_argmax_agrees_with_degenerate_cf_cam():
    # all channels dominant + single softmax: weights are a softmax of the
    # grad-cam weights; the top pixel almost always survives the monotone
    # reweighting when all weights are positive
    from cfcam.cfcam import CfCamParams, cf_cam_details
    from cfcam.clustering import ClusteringParams

    rng = np.random.default_rng(9)
    params = CfCamParams(clustering=ClusteringParams(p1=0.0),
                         single_softmax=True)
    agree = tried = 0
    while tried < 200:
        f = rng.normal(size=(5, 5, 6)).astype(np.float32)
        g = np.abs(rng.normal(size=(5, 5, 6))).astype(np.float32)
        if not (g.astype(np.float64).mean((0, 1)) > 0).all():
            continue
        gc = grad_cam(f, g)
        cf, part, _ = cf_cam_details(f, g, params)
        assert len(part.dominant) == f.shape[2]
        if gc.max() == 0 or cf.max() == 0:
            continue
        tried += 1
        agree += int(np.argmax(gc) == np.argmax(cf))
    assert agree >= 0.9 * tried

    # exact sub-case: equal per-channel gradient means make the softmax
    # uniform, so the two heatmaps coincide completely
    f = rng.normal(size=(5, 5, 6)).astype(np.float32)
    g = np.full((5, 5, 6), 0.3, np.float32)
    np.testing.assert_allclose(grad_cam(f, g), cf_cam_details(f, g, params)[0],
                               atol=1e-6)
