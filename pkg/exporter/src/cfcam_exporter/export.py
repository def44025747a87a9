"""Bundle export: hook a target layer, capture activations and gradients,
split the model into full/backbone/head graphs, and write the bundle dir."""

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .onnx_writer import OPSET, export_chain
from .toymodel import IMAGENET_MEAN, IMAGENET_STD

BUNDLE_VERSION = "cfcam-bundle/1"


@dataclass
class ExportSpec:
    model: object             # module with ordered_layers(), or checkpoint path
    image_path: str
    out_dir: str
    target_layer: str = None  # default: last conv layer
    class_index: int = None   # default: argmax
    mean: tuple = IMAGENET_MEAN
    std: tuple = IMAGENET_STD


def _load_model(spec):
    if isinstance(spec.model, (str, Path)):
        from .toymodel import ToyConvNet
        model = ToyConvNet()
        model.load_state_dict(torch.load(spec.model, weights_only=True))
        return model
    return spec.model


def _resolve_target(layers, name):
    names = [n for n, _ in layers]
    if name is None:
        conv_names = [n for n, m in layers if isinstance(m, torch.nn.Conv2d)]
        if not conv_names:
            raise ValueError("model has no convolutional layer to hook")
        return conv_names[-1]
    if name not in names:
        raise ValueError(f"no layer named {name!r}; available: {', '.join(names)}")
    return name


def load_image_pixels(path):
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0


def export_bundle(spec):
    """Write one bundle directory for (model, image, class); returns its path."""
    model = _load_model(spec)
    model.eval()
    layers = model.ordered_layers()
    target = _resolve_target(layers, spec.target_layer)
    target_pos = [n for n, _ in layers].index(target)

    out_dir = Path(spec.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    pixels = load_image_pixels(spec.image_path)
    # round-trip through the stored PNG so recorded values and the engine
    # see bit-identical pixels
    Image.fromarray(np.round(pixels * 255.0).astype(np.uint8)).save(
        out_dir / "image.png")
    pixels = load_image_pixels(out_dir / "image.png")

    mean = np.asarray(spec.mean, dtype=np.float32)
    std = np.asarray(spec.std, dtype=np.float32)
    x = torch.from_numpy(
        np.ascontiguousarray(((pixels - mean) / std).transpose(2, 0, 1))[None])

    captured = {}
    module = dict(layers)[target]
    handle = module.register_forward_hook(
        lambda mod, inp, out: captured.__setitem__("acts", out))
    try:
        logits = model(x)
    finally:
        handle.remove()
    feats = captured.get("acts")
    if feats is None:
        raise ValueError(f"target layer {target!r} did not fire during forward")
    if feats.dim() != 4:
        raise ValueError(f"target layer {target!r} output is {feats.dim()}-d, "
                         "expected 4-d (batch, channels, H', W')")
    if logits.dim() != 2:
        raise ValueError("model output must be (batch, classes)")
    num_classes = logits.shape[1]
    class_index = (int(logits[0].argmax()) if spec.class_index is None
                   else int(spec.class_index))
    if not 0 <= class_index < num_classes:
        raise ValueError(f"class index {class_index} out of range "
                         f"(model has {num_classes} classes)")
    logit = logits[0, class_index]
    grad = torch.autograd.grad(logit, feats)[0]

    probs = torch.softmax(logits[0].detach(), dim=0).numpy()
    f_hwc = feats.detach()[0].numpy().transpose(1, 2, 0)
    g1 = grad[0].numpy().transpose(1, 2, 0).astype(np.float32)
    g2 = g1 * g1
    g3 = g1 * g1 * g1

    _save_f32(out_dir / "F.npy", f_hwc)
    _save_f32(out_dir / "g1.npy", g1)
    _save_f32(out_dir / "g2.npy", g2)
    _save_f32(out_dir / "g3.npy", g3)

    h, w = pixels.shape[:2]
    input_shape = [1, 3, h, w]
    export_chain(out_dir / "full.onnx", layers, input_shape,
                 graph_name="full")
    export_chain(out_dir / "backbone.onnx", layers[:target_pos + 1],
                 input_shape, graph_name="backbone")
    hp, wp, cp = f_hwc.shape
    export_chain(out_dir / "head.onnx", layers[target_pos + 1:],
                 [1, cp, hp, wp], input_name="features", graph_name="head")

    _check_split_composition(model, layers, target_pos, x)

    manifest = {
        "version": BUNDLE_VERSION,
        "created_by": "cfcam-exporter/0.1.0",
        "class_index": class_index,
        "class_logit": float(logit.detach()),
        "class_prob": float(probs[class_index]),
        "gradient_convention": "logit",
        "target_layer": target,
        "opset": OPSET,
        "normalization": {"mean": [float(v) for v in mean],
                          "std": [float(v) for v in std]},
        "image": "image.png",
        "tensors": {"features": "F.npy", "grad": "g1.npy",
                    "grad_sq": "g2.npy", "grad_cube": "g3.npy"},
        "graphs": {"full": "full.onnx", "backbone": "backbone.onnx",
                   "head": "head.onnx"},
        "input": {"name": "input", "shape": input_shape},
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2,
                                                      sort_keys=True) + "\n")
    return out_dir


def _save_f32(path, array):
    np.save(path, np.ascontiguousarray(array, dtype=np.float32))


def _check_split_composition(model, layers, target_pos, x, tol=1e-4):
    with torch.no_grad():
        full = model(x)
        cur = x
        for _, mod in layers[:target_pos + 1]:
            cur = mod(cur)
        for _, mod in layers[target_pos + 1:]:
            cur = mod(cur)
        dev = float((full - cur).abs().max())
    if dev > tol:
        raise RuntimeError(f"backbone/head split does not compose: "
                           f"max deviation {dev:.3e}")
