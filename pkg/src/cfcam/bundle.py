"""The explain-bundle directory contract between exporter and engine.

Layout: manifest.json, image.png, F.npy, g1.npy, g2.npy, g3.npy,
full.onnx, backbone.onnx, head.onnx. The manifest pins the bundle version,
target class, class score, normalization constants, tensor/graph file
names, and the graph opset. See docs/bundle_format.md for a worked example.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .baselines import GradientPowers
from .errors import ArrayFileError, BundleValidationError, CfcamError
from .inference import ModelBundleGraphs, compose_check, forward_probs, load_model
from .tensor_core import load_array_file, load_image_png

BUNDLE_VERSION = "cfcam-bundle/1"
COMPOSE_TOLERANCE = 1e-4
PROB_PARITY_TOLERANCE = 1e-4
POWER_TOLERANCE = 1e-5

VALIDATION_RULES = (
    "manifest-version",
    "files-present",
    "tensor-shapes",
    "power-consistency",
    "graph-composition",
    "class-prob-parity",
)


@dataclass
class ExplainBundle:
    directory: Path
    manifest: dict
    pixels: np.ndarray        # (H, W, 3) raw pixels in [0, 1]
    image: np.ndarray         # (H, W, 3) normalized-input-space pixels
    features: np.ndarray      # (H', W', C)
    powers: GradientPowers
    graphs: ModelBundleGraphs

    @property
    def bundle_id(self):
        return self.directory.name

    @property
    def class_index(self):
        return int(self.manifest["class_index"])

    @property
    def class_logit(self):
        return float(self.manifest["class_logit"])

    @property
    def class_prob(self):
        v = self.manifest.get("class_prob")
        return None if v is None else float(v)


@dataclass
class ValidationReport:
    results: list = field(default_factory=list)  # (rule, passed, detail)

    def add(self, rule, passed, detail=""):
        self.results.append((rule, bool(passed), detail))

    @property
    def ok(self):
        return all(passed for _, passed, _ in self.results)

    def failures(self):
        return [(r, d) for r, passed, d in self.results if not passed]

    def to_dict(self):
        return {"ok": self.ok,
                "rules": [{"rule": r, "passed": p, "detail": d}
                          for r, p, d in self.results]}


def open_bundle(directory, validate=True):
    """Load a bundle directory; raises BundleValidationError on violations.

    With validate=False only structural problems (missing/corrupt files,
    shape mismatches) raise; invariant violations such as inconsistent
    gradient powers or a broken graph composition are left for
    `validate_bundle` to report.
    """
    directory = Path(directory)
    violations = []
    manifest_path = directory / "manifest.json"
    if not manifest_path.is_file():
        raise BundleValidationError(f"{directory}: missing manifest.json",
                                    ["missing manifest.json"])
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise BundleValidationError(f"{directory}: unreadable manifest ({exc})",
                                    [f"manifest parse error: {exc}"])
    version = manifest.get("version")
    if version != BUNDLE_VERSION:
        raise BundleValidationError(
            f"{directory}: unknown bundle version {version!r} "
            f"(engine expects {BUNDLE_VERSION!r})",
            [f"version {version!r}"])

    names = [manifest.get("image", "image.png")]
    tensors = manifest.get("tensors", {})
    graphs_entry = manifest.get("graphs", {})
    for key in ("features", "grad", "grad_sq", "grad_cube"):
        names.append(tensors.get(key, ""))
    for key in ("full", "backbone", "head"):
        names.append(graphs_entry.get(key, ""))
    missing = [n for n in names if not n or not (directory / n).is_file()]
    if missing:
        raise BundleValidationError(
            f"{directory}: missing files {missing}",
            [f"missing file {n}" for n in missing])

    try:
        feats = load_array_file(directory / tensors["features"])
        g1 = load_array_file(directory / tensors["grad"])
        g2 = load_array_file(directory / tensors["grad_sq"])
        g3 = load_array_file(directory / tensors["grad_cube"])
    except ArrayFileError as exc:
        raise BundleValidationError(f"{directory}: {exc}", [str(exc)])
    shapes = {feats.shape, g1.shape, g2.shape, g3.shape}
    if len(shapes) != 1 or feats.ndim != 3:
        raise BundleValidationError(
            f"{directory}: tensor shapes disagree or are not 3-d: "
            f"F{feats.shape} g1{g1.shape} g2{g2.shape} g3{g3.shape}",
            ["tensor shape mismatch"])

    pixels = load_image_png(directory / manifest.get("image", "image.png"))
    norm = manifest.get("normalization", {})
    mean = np.asarray(norm.get("mean", [0.0, 0.0, 0.0]), dtype=np.float32)
    std = np.asarray(norm.get("std", [1.0, 1.0, 1.0]), dtype=np.float32)
    image = (pixels - mean) / std

    input_sig = manifest.get("input", {})
    expected_input = input_sig.get("shape")
    opset = manifest.get("opset")
    hs, ws, cs = feats.shape
    try:
        full = load_model(directory / graphs_entry["full"],
                          expected_input_shape=expected_input,
                          expected_opset=opset)
        backbone = load_model(directory / graphs_entry["backbone"],
                              expected_input_shape=expected_input,
                              expected_opset=opset)
        head = load_model(directory / graphs_entry["head"],
                          expected_input_shape=[1, cs, hs, ws],
                          expected_opset=opset)
    except CfcamError as exc:
        raise BundleValidationError(f"{directory}: {exc}", [str(exc)])
    if expected_input is not None:
        ih, iw = expected_input[2], expected_input[3]
        if (ih, iw) != pixels.shape[:2]:
            raise BundleValidationError(
                f"{directory}: image is {pixels.shape[:2]}, graphs expect {(ih, iw)}",
                ["image/graph size mismatch"])

    bundle = ExplainBundle(directory=directory, manifest=manifest,
                           pixels=pixels, image=image.astype(np.float32),
                           features=feats,
                           powers=GradientPowers(g1=g1, g2=g2, g3=g3),
                           graphs=ModelBundleGraphs(full, backbone, head))
    if validate:
        report = validate_bundle(bundle)
        if not report.ok:
            msgs = [f"{rule}: {detail}" for rule, detail in report.failures()]
            raise BundleValidationError(
                f"{directory}: bundle validation failed ({'; '.join(msgs)})",
                msgs)
    return bundle


def validate_bundle(bundle):
    """Run the fixed rule set; returns a pass/fail report per rule."""
    report = ValidationReport()
    report.add("manifest-version",
               bundle.manifest.get("version") == BUNDLE_VERSION,
               f"version={bundle.manifest.get('version')!r}")
    report.add("files-present", True, "checked during open")
    shapes_ok = (bundle.features.ndim == 3
                 and bundle.features.shape == bundle.powers.g1.shape
                 == bundle.powers.g2.shape == bundle.powers.g3.shape)
    report.add("tensor-shapes", shapes_ok, f"F shape {bundle.features.shape}")

    g1, g2, g3 = bundle.powers.g1, bundle.powers.g2, bundle.powers.g3
    sq_ok = np.allclose(g2, g1 * g1, atol=POWER_TOLERANCE, rtol=1e-5)
    cu_ok = np.allclose(g3, g1 * g1 * g1, atol=POWER_TOLERANCE, rtol=1e-5)
    detail = []
    if not sq_ok:
        detail.append("g2 != g1*g1")
    if not cu_ok:
        detail.append("g3 != g1*g1*g1")
    report.add("power-consistency", sq_ok and cu_ok, "; ".join(detail))

    try:
        dev = compose_check(bundle.graphs, bundle.image)
        report.add("graph-composition", dev <= COMPOSE_TOLERANCE,
                   f"max deviation {dev:.3e}")
    except CfcamError as exc:
        report.add("graph-composition", False, str(exc))

    recorded = bundle.class_prob
    if recorded is None:
        report.add("class-prob-parity", True, "no recorded probability")
    else:
        try:
            engine = forward_probs(bundle.graphs.full, bundle.image,
                                   bundle.class_index)
            report.add("class-prob-parity",
                       abs(engine - recorded) <= PROB_PARITY_TOLERANCE,
                       f"recorded {recorded:.6f} vs engine {engine:.6f}")
        except CfcamError as exc:
            report.add("class-prob-parity", False, str(exc))
    return report


def discover_bundles(root):
    """Sorted list of bundle directories under `root` (manifest present)."""
    root = Path(root)
    if (root / "manifest.json").is_file():
        return [root]
    return sorted(p.parent for p in root.glob("*/manifest.json"))
