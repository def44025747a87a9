"""Explain-bundle exporter: hooks, gradient powers, split ONNX graphs."""

from .export import ExportSpec, export_bundle
from .fixtures import export_fixture_model
from .toymodel import ToyConvNet, make_dataset, train_toy_model

__version__ = "0.1.0"
