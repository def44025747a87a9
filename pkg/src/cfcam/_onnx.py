"""Minimal ONNX model reader and numpy executor.

Parses the protobuf wire format directly (no onnx dependency) for the
message subset a classifier graph needs, and evaluates a pinned opset-13
operator subset: Conv, Relu, MaxPool, GlobalAveragePool, Flatten, Reshape,
Gemm, MatMul, Add, BatchNormalization. Anything else is rejected with a
clear error instead of a wrong answer.
"""

import struct
from dataclasses import dataclass, field

import numpy as np

from . import backend
from .errors import InferenceError, ModelLoadError, UnsupportedOpsetError

MAX_SUPPORTED_OPSET = 13

_WT_VARINT = 0
_WT_I64 = 1
_WT_LEN = 2
_WT_I32 = 5


def _read_varint(buf, pos):
    result = 0
    shift = 0
    while True:
        if pos >= len(buf):
            raise ModelLoadError("truncated varint")
        b = buf[pos]
        pos += 1
        result |= (b & 0x7F) << shift
        if not b & 0x80:
            return result, pos
        shift += 7
        if shift > 70:
            raise ModelLoadError("varint too long")


def _signed(v):
    return v - (1 << 64) if v >= (1 << 63) else v


def _scan(buf):
    """Split a message into {field_number: [(wire_type, payload), ...]}."""
    fields = {}
    pos = 0
    n = len(buf)
    while pos < n:
        tag, pos = _read_varint(buf, pos)
        fnum, wtype = tag >> 3, tag & 7
        if wtype == _WT_VARINT:
            val, pos = _read_varint(buf, pos)
        elif wtype == _WT_I64:
            if pos + 8 > n:
                raise ModelLoadError("truncated fixed64")
            val = buf[pos:pos + 8]
            pos += 8
        elif wtype == _WT_LEN:
            length, pos = _read_varint(buf, pos)
            if pos + length > n:
                raise ModelLoadError("truncated length-delimited field")
            val = buf[pos:pos + length]
            pos += length
        elif wtype == _WT_I32:
            if pos + 4 > n:
                raise ModelLoadError("truncated fixed32")
            val = buf[pos:pos + 4]
            pos += 4
        else:
            raise ModelLoadError(f"unsupported wire type {wtype}")
        fields.setdefault(fnum, []).append((wtype, val))
    return fields


def _ints(fields, num):
    """Repeated int64 field, accepting both packed and unpacked encodings."""
    out = []
    for wtype, val in fields.get(num, []):
        if wtype == _WT_VARINT:
            out.append(_signed(val))
        elif wtype == _WT_LEN:
            pos = 0
            while pos < len(val):
                v, pos = _read_varint(val, pos)
                out.append(_signed(v))
        else:
            raise ModelLoadError("bad encoding for repeated int field")
    return out


def _int(fields, num, default=None):
    vals = _ints(fields, num)
    return vals[-1] if vals else default


def _bytes(fields, num, default=None):
    recs = fields.get(num, [])
    return recs[-1][1] if recs else default


def _string(fields, num, default=None):
    raw = _bytes(fields, num)
    return raw.decode("utf-8") if raw is not None else default


def _strings(fields, num):
    return [v.decode("utf-8") for _, v in fields.get(num, [])]


def _float32(fields, num, default=None):
    recs = fields.get(num, [])
    if not recs:
        return default
    return struct.unpack("<f", recs[-1][1])[0]


@dataclass
class Attribute:
    name: str
    f: float = None
    i: int = None
    s: bytes = None
    t: object = None
    ints: list = field(default_factory=list)
    floats: list = field(default_factory=list)


@dataclass
class Node:
    op_type: str
    name: str
    inputs: list
    outputs: list
    attrs: dict


@dataclass
class Graph:
    name: str
    nodes: list
    initializers: dict
    inputs: list   # (name, shape)
    outputs: list  # (name, shape)


@dataclass
class Model:
    ir_version: int
    opset: int
    graph: Graph


_TENSOR_FLOAT = 1
_TENSOR_INT64 = 7


def _parse_tensor(buf):
    f = _scan(buf)
    dims = _ints(f, 1)
    dtype = _int(f, 2, _TENSOR_FLOAT)
    name = _string(f, 8, "")
    raw = _bytes(f, 9)
    if dtype == _TENSOR_FLOAT:
        if raw is not None:
            arr = np.frombuffer(raw, dtype="<f4")
        else:
            packed = _bytes(f, 4, b"")
            arr = np.frombuffer(packed, dtype="<f4")
        arr = arr.astype(np.float32)
    elif dtype == _TENSOR_INT64:
        if raw is not None:
            arr = np.frombuffer(raw, dtype="<i8").astype(np.int64)
        else:
            arr = np.array(_ints(f, 7), dtype=np.int64)
    else:
        raise ModelLoadError(f"unsupported tensor data_type {dtype}")
    if dims:
        arr = arr.reshape(dims)
    return name, np.ascontiguousarray(arr)


def _parse_attribute(buf):
    f = _scan(buf)
    name = _string(f, 1, "")
    attr = Attribute(name=name)
    if 2 in f:
        attr.f = _float32(f, 2)
    if 3 in f:
        attr.i = _int(f, 3)
    if 4 in f:
        attr.s = _bytes(f, 4)
    if 5 in f:
        attr.t = _parse_tensor(_bytes(f, 5))[1]
    if 7 in f:
        attr.floats = [struct.unpack("<f", v)[0] for _, v in f[7]]
    if 8 in f:
        attr.ints = _ints(f, 8)
    return attr


def _parse_value_info(buf):
    f = _scan(buf)
    name = _string(f, 1, "")
    shape = None
    type_buf = _bytes(f, 2)
    if type_buf is not None:
        tf = _scan(type_buf)
        tensor_buf = _bytes(tf, 1)
        if tensor_buf is not None:
            ttf = _scan(tensor_buf)
            shape_buf = _bytes(ttf, 2)
            if shape_buf is not None:
                dims = []
                for _, dim_buf in _scan(shape_buf).get(1, []):
                    df = _scan(dim_buf)
                    dims.append(_int(df, 1, -1))
                shape = dims
    return name, shape


def _parse_node(buf):
    f = _scan(buf)
    attrs = {}
    for _, abuf in f.get(5, []):
        a = _parse_attribute(abuf)
        attrs[a.name] = a
    return Node(op_type=_string(f, 4, ""), name=_string(f, 3, ""),
                inputs=_strings(f, 1), outputs=_strings(f, 2), attrs=attrs)


def _parse_graph(buf):
    f = _scan(buf)
    nodes = [_parse_node(b) for _, b in f.get(1, [])]
    initializers = {}
    for _, tbuf in f.get(5, []):
        name, arr = _parse_tensor(tbuf)
        initializers[name] = arr
    inputs = [_parse_value_info(b) for _, b in f.get(11, [])]
    outputs = [_parse_value_info(b) for _, b in f.get(12, [])]
    return Graph(name=_string(f, 2, ""), nodes=nodes,
                 initializers=initializers, inputs=inputs, outputs=outputs)


def parse_model(data):
    """Parse serialized ModelProto bytes; rejects opsets newer than pinned."""
    try:
        f = _scan(data)
    except ModelLoadError as exc:
        raise ModelLoadError(f"not a parsable ONNX file: {exc}") from exc
    graph_buf = _bytes(f, 7)
    if graph_buf is None:
        raise ModelLoadError("ONNX file has no graph")
    opset = None
    for _, ob in f.get(8, []):
        of = _scan(ob)
        domain = _string(of, 1, "")
        if domain in ("", "ai.onnx"):
            opset = _int(of, 2)
    if opset is None:
        raise ModelLoadError("ONNX file declares no default-domain opset")
    if opset > MAX_SUPPORTED_OPSET:
        raise UnsupportedOpsetError(
            f"graph requires opset {opset}, engine supports <= {MAX_SUPPORTED_OPSET}")
    return Model(ir_version=_int(f, 1, 0), opset=opset,
                 graph=_parse_graph(graph_buf))


# ---------------------------------------------------------------------------
# execution


def _attr_ints(node, name, default):
    a = node.attrs.get(name)
    return list(a.ints) if a is not None else list(default)


def _attr_int(node, name, default):
    a = node.attrs.get(name)
    return a.i if a is not None and a.i is not None else default


def _attr_float(node, name, default):
    a = node.attrs.get(name)
    return a.f if a is not None and a.f is not None else default


def _op_conv(node, x, w, b=None):
    if _attr_int(node, "group", 1) != 1:
        raise InferenceError("grouped Conv is not supported")
    if any(d != 1 for d in _attr_ints(node, "dilations", (1, 1))):
        raise InferenceError("dilated Conv is not supported")
    sh, sw = _attr_ints(node, "strides", (1, 1))
    pads = _attr_ints(node, "pads", (0, 0, 0, 0))
    pt, pl, pb, pr = pads
    if b is None:
        b = np.zeros(w.shape[0], dtype=np.float32)
    x = np.ascontiguousarray(x, dtype=np.float32)
    w = np.ascontiguousarray(w, dtype=np.float32)
    b = np.ascontiguousarray(b, dtype=np.float32)
    return backend.conv2d(x, w, b, sh, sw, pt, pl, pb, pr)


def _op_maxpool(node, x):
    kh, kw = _attr_ints(node, "kernel_shape", None)
    sh, sw = _attr_ints(node, "strides", (1, 1))
    pt, pl, pb, pr = _attr_ints(node, "pads", (0, 0, 0, 0))
    if _attr_int(node, "ceil_mode", 0) != 0:
        raise InferenceError("MaxPool ceil_mode is not supported")
    return backend.maxpool2d(np.ascontiguousarray(x, dtype=np.float32),
                             kh, kw, sh, sw, pt, pl, pb, pr)


def _op_gemm(node, a, b, c=None):
    alpha = _attr_float(node, "alpha", 1.0)
    beta = _attr_float(node, "beta", 1.0)
    if _attr_int(node, "transA", 0):
        a = a.T
    if _attr_int(node, "transB", 0):
        b = b.T
    y = alpha * (a @ b)
    if c is not None:
        y = y + beta * c
    return y.astype(np.float32)


def _op_flatten(node, x):
    axis = _attr_int(node, "axis", 1)
    lead = int(np.prod(x.shape[:axis])) if axis > 0 else 1
    return np.ascontiguousarray(x).reshape(lead, -1)


def _op_reshape(node, x, shape):
    target = []
    for i, s in enumerate(shape.tolist()):
        target.append(x.shape[i] if s == 0 else int(s))
    return np.ascontiguousarray(x).reshape(target)


def _op_batchnorm(node, x, scale, bias, mean, var):
    eps = _attr_float(node, "epsilon", 1e-5)
    shape = (1, -1) + (1,) * (x.ndim - 2)
    inv = 1.0 / np.sqrt(var.astype(np.float64) + eps)
    out = (x.astype(np.float64) - mean.reshape(shape)) * (scale * inv).reshape(shape)
    return (out + bias.reshape(shape)).astype(np.float32)


def run_graph(graph, feeds):
    """Execute the graph's nodes in file order; returns {output_name: array}."""
    values = dict(graph.initializers)
    values.update(feeds)
    for node in graph.nodes:
        try:
            args = [values[name] for name in node.inputs if name]
        except KeyError as exc:
            raise InferenceError(f"node {node.name!r} wants unknown input {exc}")
        op = node.op_type
        if op == "Conv":
            out = _op_conv(node, *args)
        elif op == "Relu":
            out = np.maximum(args[0], 0)
        elif op == "MaxPool":
            out = _op_maxpool(node, args[0])
        elif op == "GlobalAveragePool":
            out = args[0].mean(axis=(2, 3), keepdims=True).astype(np.float32)
        elif op == "Flatten":
            out = _op_flatten(node, args[0])
        elif op == "Reshape":
            out = _op_reshape(node, *args)
        elif op == "Gemm":
            out = _op_gemm(node, *args)
        elif op == "MatMul":
            out = (args[0] @ args[1]).astype(np.float32)
        elif op == "Add":
            out = (args[0] + args[1]).astype(np.float32)
        elif op == "BatchNormalization":
            out = _op_batchnorm(node, *args)
        else:
            raise InferenceError(f"unsupported operator {op!r}")
        values[node.outputs[0]] = out
    return {name: values[name] for name, _ in graph.outputs}


def validate_ops(graph):
    """Reject graphs containing operators the executor does not implement."""
    supported = {"Conv", "Relu", "MaxPool", "GlobalAveragePool", "Flatten",
                 "Reshape", "Gemm", "MatMul", "Add", "BatchNormalization"}
    for node in graph.nodes:
        if node.op_type not in supported:
            raise ModelLoadError(f"unsupported operator {node.op_type!r} "
                                 f"in node {node.name!r}")
