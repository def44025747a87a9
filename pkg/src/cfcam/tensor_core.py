"""Array-file IO and the shared numeric primitives.

Tensors are plain numpy float32 arrays, row-major, finite. Array files are
NPY v1.0 (little-endian float32 or float64; float64 is narrowed to float32
on load). All functions here are pure and thread-safe.
"""

import ast
import struct

import numpy as np
from PIL import Image as PILImage

from . import backend
from .errors import ArrayFileError

_NPY_MAGIC = b"\x93NUMPY"


def save_array_file(path, array):
    """Write a float32 NPY v1.0 file (C-order, little-endian)."""
    a = np.ascontiguousarray(array, dtype="<f4")
    if a.ndim == 0:
        raise ArrayFileError("zero-dimensional arrays are not supported")
    header = ("{'descr': '<f4', 'fortran_order': False, 'shape': "
              + _shape_repr(a.shape) + ", }")
    # pad so the data block starts on a 64-byte boundary
    pad = 64 - ((len(_NPY_MAGIC) + 4 + len(header) + 1) % 64)
    header = header + " " * (pad % 64) + "\n"
    with open(path, "wb") as fh:
        fh.write(_NPY_MAGIC)
        fh.write(bytes([1, 0]))
        fh.write(struct.pack("<H", len(header)))
        fh.write(header.encode("latin1"))
        fh.write(a.tobytes())


def load_array_file(path):
    """Read an NPY v1.0 float array; returns a C-order float32 ndarray."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 10 or raw[:6] != _NPY_MAGIC:
        raise ArrayFileError(f"{path}: not an NPY file (bad magic)")
    if raw[6:8] != bytes([1, 0]):
        raise ArrayFileError(f"{path}: unsupported NPY version {raw[6]}.{raw[7]}")
    (hlen,) = struct.unpack("<H", raw[8:10])
    if len(raw) < 10 + hlen:
        raise ArrayFileError(f"{path}: truncated header")
    try:
        header = ast.literal_eval(raw[10:10 + hlen].decode("latin1"))
        descr = header["descr"]
        fortran = header["fortran_order"]
        shape = tuple(header["shape"])
    except Exception as exc:
        raise ArrayFileError(f"{path}: malformed header ({exc})") from exc
    if descr not in ("<f4", "<f8"):
        raise ArrayFileError(f"{path}: unsupported dtype {descr!r} "
                             "(need little-endian float32/float64)")
    if fortran:
        raise ArrayFileError(f"{path}: fortran-order arrays are not supported")
    if len(shape) == 0 or any((not isinstance(s, int)) or s <= 0 for s in shape):
        raise ArrayFileError(f"{path}: invalid shape {shape}")
    itemsize = 4 if descr == "<f4" else 8
    expected = itemsize * int(np.prod(shape))
    payload = raw[10 + hlen:]
    if len(payload) < expected:
        raise ArrayFileError(f"{path}: truncated payload "
                             f"({len(payload)} bytes, expected {expected})")
    if len(payload) > expected:
        raise ArrayFileError(f"{path}: {len(payload) - expected} trailing bytes")
    a = np.frombuffer(payload, dtype=descr).reshape(shape)
    a = np.ascontiguousarray(a, dtype=np.float32)
    if not np.isfinite(a).all():
        raise ArrayFileError(f"{path}: non-finite values in payload")
    return a


def _shape_repr(shape):
    if len(shape) == 1:
        return f"({shape[0]},)"
    return "(" + ", ".join(str(s) for s in shape) + ")"


def load_image_png(path):
    """Read an 8-bit RGB PNG as float32 pixels in [0, 1], shape (H, W, 3)."""
    with PILImage.open(path) as im:
        rgb = im.convert("RGB")
        return np.asarray(rgb, dtype=np.float32) / 255.0


def save_image_png(path, pixels):
    """Write float pixels in [0, 1] (H, W, 3) as an 8-bit RGB PNG."""
    arr = np.clip(np.asarray(pixels, dtype=np.float64), 0.0, 1.0)
    u8 = np.round(arr * 255.0).astype(np.uint8)
    PILImage.fromarray(u8, mode="RGB").save(path, format="PNG")


def percentile(values, p):
    """Linear-interpolation percentile of a non-empty finite value set."""
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size == 0:
        raise ValueError("percentile of empty value set")
    if not 0.0 <= p <= 100.0:
        raise ValueError(f"percentile p={p} outside [0, 100]")
    return float(np.percentile(v, p))


def channel_l2_norms(f):
    """Per-channel L2 norm of an (H', W', C) activation stack."""
    f = np.asarray(f)
    if f.ndim != 3:
        raise ValueError(f"expected a 3-d (H, W, C) tensor, got ndim={f.ndim}")
    return np.sqrt(np.einsum("hwc,hwc->c", f.astype(np.float64),
                             f.astype(np.float64)))


def relu_normalize(m):
    """ReLU then scale to [0, 1]; an all-non-positive map becomes all zeros."""
    m = np.asarray(m)
    if m.ndim != 2:
        raise ValueError(f"expected a 2-d map, got ndim={m.ndim}")
    out = np.maximum(m.astype(np.float64), 0.0)
    peak = out.max() if out.size else 0.0
    if peak > 0.0:
        out /= peak
    return out.astype(np.float32)


def bilinear_upsample(m, out_h, out_w):
    """Resize a 2-d map with half-pixel-centered bilinear interpolation."""
    m = np.asarray(m)
    if m.ndim != 2:
        raise ValueError(f"expected a 2-d map, got ndim={m.ndim}")
    if out_h <= 0 or out_w <= 0:
        raise ValueError(f"invalid target size {out_h}x{out_w}")
    if out_h < m.shape[0] or out_w < m.shape[1]:
        raise ValueError("bilinear_upsample cannot shrink the input")
    out = backend.bilinear_resize(np.ascontiguousarray(m, dtype=np.float64),
                                  out_h, out_w)
    return out.astype(np.float32)


def gaussian_kernel_1d(sigma):
    """Gaussian taps exp(-t^2/2s^2) for t in [-ceil(3s), ceil(3s)], sum 1."""
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    radius = int(np.ceil(3.0 * sigma))
    t = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(t * t) / (2.0 * sigma * sigma))
    return k / k.sum()


def gaussian_blur_2d(img, sigma):
    """Separable Gaussian blur, truncated kernel renormalized at borders.

    Accepts (H, W) maps or (H, W, C) images; channels blur independently.
    """
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    img = np.asarray(img)
    kernel = gaussian_kernel_1d(sigma)
    if img.ndim == 2:
        return _blur_plane(img, kernel).astype(np.float32)
    if img.ndim == 3:
        out = np.empty(img.shape, dtype=np.float32)
        for c in range(img.shape[2]):
            out[:, :, c] = _blur_plane(img[:, :, c], kernel)
        return out
    raise ValueError(f"expected a 2-d or 3-d array, got ndim={img.ndim}")


def _blur_plane(plane, kernel):
    a = np.ascontiguousarray(plane, dtype=np.float64)
    a = backend.gaussian_filter_axis0(a, kernel)
    a = backend.gaussian_filter_axis0(np.ascontiguousarray(a.T), kernel)
    return a.T
