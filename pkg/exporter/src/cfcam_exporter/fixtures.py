"""Fixture generation: train the toy model once, emit a batch of bundles."""

import hashlib
import json
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .export import ExportSpec, export_bundle
from .toymodel import TARGET_LAYER, make_dataset, normalize_batch, train_toy_model


def export_fixture_model(out_dir, count=24, seed=0, min_prob=0.6):
    """Train the fixture CNN and export `count` bundles under out_dir.

    Bundles come from correctly-classified test images with class
    probability >= min_prob, so the explanation target is meaningful.
    Returns a metadata dict (accuracy, bundle list, checksums).
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    model, accuracy = train_toy_model(seed=seed)
    torch.save(model.state_dict(), out_dir / "toymodel.pt")

    pool_x, pool_y = make_dataset(count * 6, seed=seed + 100)
    with torch.no_grad():
        probs = torch.softmax(model(normalize_batch(pool_x)), dim=1).numpy()
    pred = probs.argmax(axis=1)
    conf = probs[np.arange(len(pool_y)), pool_y]
    eligible = np.nonzero((pred == pool_y) & (conf >= min_prob))[0]
    if eligible.size < count:
        eligible = np.nonzero(pred == pool_y)[0]
    if eligible.size < count:
        raise RuntimeError(f"only {eligible.size} usable fixture images; "
                           f"model accuracy {accuracy:.3f} too low")

    bundles = []
    for i, idx in enumerate(eligible[:count]):
        bundle_dir = out_dir / f"bundle_{i:03d}"
        bundle_dir.mkdir(exist_ok=True)
        img_path = bundle_dir / "source.png"
        Image.fromarray(np.round(pool_x[idx] * 255.0).astype(np.uint8)).save(
            img_path)
        export_bundle(ExportSpec(model=model, image_path=str(img_path),
                                 out_dir=str(bundle_dir),
                                 target_layer=TARGET_LAYER))
        img_path.unlink()
        bundles.append(bundle_dir.name)

    meta = {
        "seed": seed,
        "test_accuracy": accuracy,
        "bundles": bundles,
        "graph_checksums": _graph_checksums(out_dir / bundles[0]),
    }
    (out_dir / "fixtures.json").write_text(json.dumps(meta, indent=2,
                                                      sort_keys=True) + "\n")
    return meta


def _graph_checksums(bundle_dir):
    out = {}
    for name in ("full.onnx", "backbone.onnx", "head.onnx"):
        digest = hashlib.sha256((Path(bundle_dir) / name).read_bytes())
        out[name] = digest.hexdigest()
    return out
