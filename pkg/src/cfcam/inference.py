"""Forward-pass execution over the bundle's serialized model graphs.

Gradients never flow here; they arrive precomputed in the bundle. A
ModelHandle serves one in-flight forward at a time and counts invocations
(the curve and Ablation-CAM pass-count contracts are checked against it).
"""

from dataclasses import dataclass, field

import numpy as np

from ._onnx import parse_model, run_graph, validate_ops
from .errors import InferenceError, ModelLoadError


@dataclass
class ModelHandle:
    path: str
    graph_name: str
    input_name: str
    input_shape: tuple
    output_name: str
    num_outputs: int
    opset: int
    calls: int = 0
    _graph: object = field(default=None, repr=False)

    def forward_raw(self, x):
        """Run one forward pass; returns the output with its graph shape."""
        x = np.ascontiguousarray(x, dtype=np.float32)
        if x.ndim == len(self.input_shape) - 1:
            x = x[None]
        if x.ndim != len(self.input_shape) or any(
                e not in (-1, a) for e, a in zip(self.input_shape, x.shape)):
            raise InferenceError(
                f"input shape {x.shape} does not match signature {self.input_shape}")
        self.calls += 1
        out = run_graph(self._graph, {self.input_name: x})[self.output_name]
        return np.asarray(out, dtype=np.float32)

    def forward(self, x):
        """Run one forward pass; returns the output flattened to 1-D."""
        return self.forward_raw(x).reshape(-1)


@dataclass
class ModelBundleGraphs:
    full: ModelHandle
    backbone: ModelHandle
    head: ModelHandle


def load_model(path, expected_input_shape=None, expected_opset=None):
    """Parse an ONNX file into an executable handle.

    `expected_*` values come from the bundle manifest; mismatches are
    load errors, as are unsupported operators or opsets.
    """
    try:
        with open(path, "rb") as fh:
            model = parse_model(fh.read())
    except OSError as exc:
        raise ModelLoadError(f"cannot read model file {path}: {exc}") from exc
    graph = model.graph
    validate_ops(graph)
    if not graph.inputs or not graph.outputs:
        raise ModelLoadError(f"{path}: graph lacks declared inputs/outputs")
    in_name, in_shape = graph.inputs[0]
    out_name, out_shape = graph.outputs[0]
    if in_shape is None:
        raise ModelLoadError(f"{path}: graph input has no shape")
    if expected_input_shape is not None and list(in_shape) != list(expected_input_shape):
        raise ModelLoadError(
            f"{path}: input signature {in_shape} does not match "
            f"manifest {list(expected_input_shape)}")
    if expected_opset is not None and model.opset != expected_opset:
        raise ModelLoadError(
            f"{path}: opset {model.opset} does not match manifest {expected_opset}")
    num_out = int(out_shape[-1]) if out_shape else -1
    return ModelHandle(path=str(path), graph_name=graph.name,
                       input_name=in_name, input_shape=tuple(in_shape),
                       output_name=out_name, num_outputs=num_out,
                       opset=model.opset, _graph=graph)


def _to_batch(x):
    x = np.asarray(x, dtype=np.float32)
    if x.ndim == 3 and x.shape[2] == 3:
        # (H, W, 3) image -> (1, 3, H, W)
        x = np.ascontiguousarray(x.transpose(2, 0, 1))[None]
    return x


def forward_probs(model, x, class_idx):
    """Softmax probability of `class_idx` for one input.

    3-d inputs with a trailing extent of 3 are treated as (H, W, 3) images;
    anything else must already match the graph signature (minus an optional
    batch dim).
    """
    logits = model.forward(_to_batch(x)).astype(np.float64)
    if not 0 <= class_idx < logits.size:
        raise InferenceError(f"class index {class_idx} out of range "
                             f"for {logits.size} logits")
    e = np.exp(logits - logits.max())
    return float(e[class_idx] / e.sum())


def softmax_probs(model, x):
    """All class probabilities for one input."""
    logits = model.forward(_to_batch(x)).astype(np.float64)
    e = np.exp(logits - logits.max())
    return e / e.sum()


def compose_check(graphs, probe):
    """Max-abs deviation between full(x) and head(backbone(x))."""
    probe = _to_batch(probe)
    direct = graphs.full.forward(probe)
    feats = graphs.backbone.forward_raw(probe)
    composed = graphs.head.forward(feats)
    return float(np.max(np.abs(direct - composed)))
