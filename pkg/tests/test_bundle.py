import json
import shutil
from pathlib import Path

import numpy as np
import pytest

from cfcam.bundle import (VALIDATION_RULES, discover_bundles, open_bundle,
                          validate_bundle)
from cfcam.errors import BundleValidationError
from cfcam.tensor_core import load_array_file, save_array_file

FIXTURES = Path(__file__).parent / "fixtures" / "bundles"
BUNDLE = FIXTURES / "bundle_000"


def _copy_bundle(tmp_path, src=BUNDLE):
    dst = tmp_path / src.name
    shutil.copytree(src, dst)
    return dst


def test_fixture_bundle_opens_clean():
    bundle = open_bundle(BUNDLE)
    assert bundle.features.ndim == 3
    assert bundle.features.shape == bundle.powers.g1.shape
    assert bundle.pixels.shape == (32, 32, 3)
    assert 0 <= bundle.class_index < 10


def test_validate_report_all_pass_with_fixed_rule_count():
    report = validate_bundle(open_bundle(BUNDLE))
    assert report.ok
    assert len(report.results) == len(VALIDATION_RULES)
    assert tuple(r for r, _, _ in report.results) == VALIDATION_RULES


def test_bad_powers_rejected_and_named(tmp_path):
    broken = _copy_bundle(tmp_path)
    g2 = load_array_file(broken / "g2.npy")
    save_array_file(broken / "g2.npy", g2 + 0.25)
    with pytest.raises(BundleValidationError, match="power-consistency"):
        open_bundle(broken)
    report = validate_bundle(open_bundle(broken, validate=False))
    failed = dict((r, d) for r, d in report.failures())
    assert set(failed) == {"power-consistency"}
    assert "g2" in failed["power-consistency"]


def test_unknown_manifest_version_rejected(tmp_path):
    broken = _copy_bundle(tmp_path)
    manifest = json.loads((broken / "manifest.json").read_text())
    manifest["version"] = "cfcam-bundle/999"
    (broken / "manifest.json").write_text(json.dumps(manifest))
    with pytest.raises(BundleValidationError, match="version"):
        open_bundle(broken)


def test_missing_file_rejected(tmp_path):
    broken = _copy_bundle(tmp_path)
    (broken / "g3.npy").unlink()
    with pytest.raises(BundleValidationError, match="g3.npy"):
        open_bundle(broken)


def test_shape_mismatch_rejected(tmp_path):
    broken = _copy_bundle(tmp_path)
    save_array_file(broken / "g1.npy", np.zeros((4, 4, 16), np.float32))
    with pytest.raises(BundleValidationError, match="shape"):
        open_bundle(broken)


def _zero_initializer_bytes(path, name, shape):
    """Zero a float initializer in-place by locating its raw payload."""
    raw = bytearray(path.read_bytes())
    from cfcam._onnx import parse_model
    model = parse_model(bytes(raw))
    weights = model.graph.initializers[name]
    assert weights.shape == shape
    payload = np.ascontiguousarray(weights, dtype="<f4").tobytes()
    pos = bytes(raw).find(payload)
    assert pos > 0
    raw[pos:pos + len(payload)] = bytes(len(payload))
    path.write_bytes(bytes(raw))


def test_zeroed_head_fails_only_composition(tmp_path):
    broken = _copy_bundle(tmp_path)
    _zero_initializer_bytes(broken / "head.onnx", "fc.weight", (10, 16))
    report = validate_bundle(open_bundle(broken, validate=False))
    failed = [r for r, _ in report.failures()]
    assert failed == ["graph-composition"]


def test_validated_bundle_supports_every_engine_operation():
    # no late missing-data errors: every method and metric entry point runs
    from cfcam.inference import forward_probs
    from cfcam.methods import ALL_METHODS, compute_heatmap, heatmap_at_image_size
    from cfcam.metrics import auc, deletion_curve

    bundle = open_bundle(BUNDLE)
    for method in ALL_METHODS:
        heatmap, _ = compute_heatmap(method, bundle)
        up = heatmap_at_image_size(heatmap, bundle)
        assert up.shape == bundle.pixels.shape[:2]
    curve = deletion_curve(bundle.graphs.full, bundle.image, up, 3,
                           bundle.class_index)
    assert 0.0 <= auc(curve) <= 1.0
    assert forward_probs(bundle.graphs.full, bundle.image,
                         bundle.class_index) > 0.0


def test_discover_bundles_finds_fixtures():
    dirs = discover_bundles(FIXTURES)
    assert len(dirs) >= 20
    assert discover_bundles(BUNDLE) == [BUNDLE]
