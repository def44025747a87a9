"""Serialize a feed-forward torch module chain as an ONNX protobuf file.

Writes the wire format directly (field numbers from onnx.proto), pinned to
ir_version 7 / opset 13, with weights as raw-data initializers. Supported
layers: Conv2d, BatchNorm2d (eval), ReLU, MaxPool2d, AdaptiveAvgPool2d(1),
Flatten, Linear.
"""

import struct

import numpy as np
import torch
from torch import nn

OPSET = 13
IR_VERSION = 7

_FLOAT = 1
_INT64 = 7

_ATTR_FLOAT = 1
_ATTR_INT = 2
_ATTR_INTS = 7


def _varint(v):
    out = bytearray()
    while True:
        byte = v & 0x7F
        v >>= 7
        if v:
            out.append(byte | 0x80)
        else:
            out.append(byte)
            return bytes(out)


def _tag(field, wtype):
    return _varint((field << 3) | wtype)


def _f_varint(field, v):
    return _tag(field, 0) + _varint(v)


def _f_bytes(field, payload):
    return _tag(field, 2) + _varint(len(payload)) + payload


def _f_string(field, s):
    return _f_bytes(field, s.encode("utf-8"))


def _f_float32(field, v):
    return _tag(field, 5) + struct.pack("<f", v)


def _tensor(name, array):
    array = np.asarray(array)
    if array.dtype == np.int64:
        dtype, raw = _INT64, array.astype("<i8").tobytes()
    else:
        dtype, raw = _FLOAT, np.ascontiguousarray(array, dtype="<f4").tobytes()
    msg = b"".join(_f_varint(1, d) for d in array.shape)
    msg += _f_varint(2, dtype)
    msg += _f_string(8, name)
    msg += _f_bytes(9, raw)
    return msg


def _attr_int(name, v):
    return _f_string(1, name) + _f_varint(3, v) + _f_varint(20, _ATTR_INT)


def _attr_ints(name, values):
    msg = _f_string(1, name)
    for v in values:
        msg += _f_varint(8, v)
    return msg + _f_varint(20, _ATTR_INTS)


def _attr_float(name, v):
    return _f_string(1, name) + _f_float32(2, v) + _f_varint(20, _ATTR_FLOAT)


def _node(op_type, inputs, outputs, name, attrs=()):
    msg = b"".join(_f_string(1, i) for i in inputs)
    msg += b"".join(_f_string(2, o) for o in outputs)
    msg += _f_string(3, name)
    msg += _f_string(4, op_type)
    msg += b"".join(_f_bytes(5, a) for a in attrs)
    return msg


def _value_info(name, shape):
    dims = b"".join(_f_bytes(1, _f_varint(1, d)) for d in shape)
    shape_msg = dims
    tensor_type = _f_varint(1, _FLOAT) + _f_bytes(2, shape_msg)
    type_msg = _f_bytes(1, tensor_type)
    return _f_string(1, name) + _f_bytes(2, type_msg)


def _graph(name, nodes, initializers, inputs, outputs):
    msg = b"".join(_f_bytes(1, n) for n in nodes)
    msg += _f_string(2, name)
    msg += b"".join(_f_bytes(5, t) for t in initializers)
    msg += b"".join(_f_bytes(11, v) for v in inputs)
    msg += b"".join(_f_bytes(12, v) for v in outputs)
    return msg


def _model(graph):
    msg = _f_varint(1, IR_VERSION)
    msg += _f_string(2, "cfcam-exporter")
    msg += _f_string(3, "0.1.0")
    msg += _f_bytes(7, graph)
    opset = _f_string(1, "") + _f_varint(2, OPSET)
    msg += _f_bytes(8, opset)
    return msg


def _emit_layer(name, module, inp, out):
    """ONNX node(s) + initializers for one torch layer."""
    nodes, inits = [], []
    if isinstance(module, nn.Conv2d):
        if module.dilation != (1, 1) or module.groups != 1:
            raise ValueError(f"{name}: only plain Conv2d is supported")
        w_name, b_name = f"{name}.weight", f"{name}.bias"
        inits.append(_tensor(w_name, module.weight.detach().numpy()))
        bias = (module.bias.detach().numpy() if module.bias is not None
                else np.zeros(module.out_channels, dtype=np.float32))
        inits.append(_tensor(b_name, bias))
        ph, pw = module.padding
        attrs = [_attr_ints("dilations", [1, 1]),
                 _attr_int("group", 1),
                 _attr_ints("kernel_shape", list(module.kernel_size)),
                 _attr_ints("pads", [ph, pw, ph, pw]),
                 _attr_ints("strides", list(module.stride))]
        nodes.append(_node("Conv", [inp, w_name, b_name], [out], name, attrs))
    elif isinstance(module, nn.BatchNorm2d):
        pieces = {}
        for suffix, tensor in (("scale", module.weight), ("bias", module.bias),
                               ("mean", module.running_mean),
                               ("var", module.running_var)):
            pname = f"{name}.{suffix}"
            pieces[suffix] = pname
            inits.append(_tensor(pname, tensor.detach().numpy()))
        nodes.append(_node(
            "BatchNormalization",
            [inp, pieces["scale"], pieces["bias"], pieces["mean"], pieces["var"]],
            [out], name, [_attr_float("epsilon", module.eps)]))
    elif isinstance(module, nn.ReLU):
        nodes.append(_node("Relu", [inp], [out], name))
    elif isinstance(module, nn.MaxPool2d):
        k = module.kernel_size
        s = module.stride or k
        p = module.padding
        k = (k, k) if isinstance(k, int) else k
        s = (s, s) if isinstance(s, int) else s
        p = (p, p) if isinstance(p, int) else p
        attrs = [_attr_ints("kernel_shape", list(k)),
                 _attr_ints("pads", [p[0], p[1], p[0], p[1]]),
                 _attr_ints("strides", list(s))]
        nodes.append(_node("MaxPool", [inp], [out], name, attrs))
    elif isinstance(module, nn.AdaptiveAvgPool2d):
        if module.output_size not in (1, (1, 1)):
            raise ValueError(f"{name}: only global average pooling is supported")
        nodes.append(_node("GlobalAveragePool", [inp], [out], name))
    elif isinstance(module, nn.Flatten):
        nodes.append(_node("Flatten", [inp], [out], name,
                           [_attr_int("axis", module.start_dim)]))
    elif isinstance(module, nn.Linear):
        w_name, b_name = f"{name}.weight", f"{name}.bias"
        inits.append(_tensor(w_name, module.weight.detach().numpy()))
        bias = (module.bias.detach().numpy() if module.bias is not None
                else np.zeros(module.out_features, dtype=np.float32))
        inits.append(_tensor(b_name, bias))
        attrs = [_attr_float("alpha", 1.0), _attr_float("beta", 1.0),
                 _attr_int("transA", 0), _attr_int("transB", 1)]
        nodes.append(_node("Gemm", [inp, w_name, b_name], [out], name, attrs))
    else:
        raise ValueError(f"{name}: cannot export layer type "
                         f"{type(module).__name__}")
    return nodes, inits


def export_chain(path, layers, input_shape, input_name="input",
                 graph_name="graph"):
    """Write the layer chain as one ONNX graph; returns the output shape.

    `layers` is an ordered list of (name, module) applied sequentially.
    The output shape is found with a dry torch forward pass.
    """
    nodes, inits = [], []
    current = input_name
    for name, module in layers:
        out = f"{name}_out"
        layer_nodes, layer_inits = _emit_layer(name, module, current, out)
        nodes.extend(layer_nodes)
        inits.extend(layer_inits)
        current = out

    with torch.no_grad():
        probe = torch.zeros(*input_shape)
        for _, module in layers:
            probe = module(probe)
    out_shape = list(probe.shape)

    graph = _graph(graph_name, nodes, inits,
                   [_value_info(input_name, list(input_shape))],
                   [_value_info(current, out_shape)])
    with open(path, "wb") as fh:
        fh.write(_model(graph))
    return out_shape
