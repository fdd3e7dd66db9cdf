"""Exact integer tensors, quantization, and the VMM ground-truth oracle.

Everything downstream of :func:`quantize` is 64-bit integer arithmetic, so
results are reproducible bit for bit across runs and platforms. The safe
envelope (no int64 overflow anywhere in the simulator) is rows <= 1024,
weight precision <= 16 bits, activation precision <= 16 bits.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass, field, replace

import numpy as np

MAX_BITS = 16          # quantizer / simulator precision envelope
CONTAINER_MAX_BITS = 32  # a tensor may declare headroom beyond the envelope


def int_range(bits: int, signed: bool) -> tuple[int, int]:
    """Inclusive (lo, hi) value range of a `bits`-wide integer."""
    if signed:
        return -(1 << (bits - 1)), (1 << (bits - 1)) - 1
    return 0, (1 << bits) - 1


def _to_int64(values) -> np.ndarray:
    arr = np.asarray(values)
    if arr.size and not np.issubdtype(arr.dtype, np.integer):
        if np.issubdtype(arr.dtype, np.floating) and np.all(arr == np.trunc(arr)):
            arr = arr.astype(np.int64)
        else:
            raise ValueError("tensor data must be integral; quantize floats first")
    return np.ascontiguousarray(arr, dtype=np.int64)


@dataclass(frozen=True, eq=False)
class QuantTensor:
    """Integer tensor with declared precision and signedness.

    `data` is flat; `shape` is the logical shape. Instances are immutable
    (the backing array is marked read-only) and safe to share across threads.
    `scale` is the dequantization step recorded by :func:`quantize`; it is
    carried along for bookkeeping only and never enters integer arithmetic.
    """

    shape: tuple[int, ...]
    data: np.ndarray
    bits: int
    signed: bool
    scale: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "shape", tuple(int(s) for s in self.shape))
        data = _to_int64(self.data).reshape(-1)
        if not (1 <= self.bits <= CONTAINER_MAX_BITS):
            raise ValueError(f"bits must be in [1, {CONTAINER_MAX_BITS}], got {self.bits}")
        n = 1
        for s in self.shape:
            if s <= 0:
                raise ValueError(f"non-positive dimension in shape {self.shape}")
            n *= s
        if n != data.size:
            raise ValueError(f"shape {self.shape} needs {n} values, got {data.size}")
        lo, hi = int_range(self.bits, self.signed)
        if data.size and (data.min() < lo or data.max() > hi):
            raise ValueError(
                f"values outside {'signed' if self.signed else 'unsigned'} "
                f"{self.bits}-bit range [{lo}, {hi}]"
            )
        data.flags.writeable = False
        object.__setattr__(self, "data", data)

    def __eq__(self, other):
        if not isinstance(other, QuantTensor):
            return NotImplemented
        return (self.shape == other.shape and self.bits == other.bits
                and self.signed == other.signed and self.scale == other.scale
                and np.array_equal(self.data, other.data))

    __hash__ = None

    @classmethod
    def from_array(cls, arr, bits: int, signed: bool, scale: float = 1.0) -> "QuantTensor":
        arr = np.asarray(arr)
        return cls(arr.shape, arr.reshape(-1), bits, signed, scale)

    def asarray(self) -> np.ndarray:
        """Read-only int64 view reshaped to `shape`."""
        return self.data.reshape(self.shape)

    @property
    def range(self) -> tuple[int, int]:
        return int_range(self.bits, self.signed)

    def to_dict(self) -> dict:
        return {
            "shape": list(self.shape),
            "bits": self.bits,
            "signed": self.signed,
            "scale": self.scale,
            "data": encode_i64(self.data),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "QuantTensor":
        return cls(
            shape=tuple(d["shape"]),
            data=decode_i64(d["data"]),
            bits=int(d["bits"]),
            signed=bool(d["signed"]),
            scale=float(d.get("scale", 1.0)),
        )

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "QuantTensor":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def encode_i64(arr: np.ndarray) -> str:
    """Base64 of little-endian int64 values (the on-disk tensor payload)."""
    return base64.b64encode(np.ascontiguousarray(arr, dtype="<i8").tobytes()).decode("ascii")


def decode_i64(blob: str) -> np.ndarray:
    return np.frombuffer(base64.b64decode(blob), dtype="<i8").astype(np.int64)


def round_half_away(x: np.ndarray) -> np.ndarray:
    """Round to nearest integer, ties away from zero."""
    return np.copysign(np.floor(np.abs(x) + 0.5), x)


def quantize(values, bits: int, signed: bool) -> QuantTensor:
    """Symmetric linear quantization of real values onto a `bits`-wide grid.

    The scale maps the largest magnitude onto the positive end of the range;
    rounding is half-away-from-zero and out-of-range results saturate. The
    chosen scale is recorded on the returned tensor.
    """
    if not (1 <= bits <= MAX_BITS):
        raise ValueError(f"bits must be in [1, {MAX_BITS}], got {bits}")
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        raise ValueError("cannot quantize an empty array")
    lo, hi = int_range(bits, signed)
    if signed:
        qmax = hi
    else:
        if arr.min() < 0:
            raise ValueError("negative values cannot be quantized unsigned")
        qmax = hi
    max_abs = float(np.max(np.abs(arr)))
    scale = max_abs / qmax if max_abs > 0 else 1.0
    q = round_half_away(arr / scale)
    q = np.clip(q, lo, hi).astype(np.int64)
    return QuantTensor(arr.shape, q.reshape(-1), bits, signed, scale)


def exact_matmul(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Integer x @ w with int64 accumulation and no truncation."""
    x = np.asarray(x, dtype=np.int64)
    w = np.asarray(w, dtype=np.int64)
    if x.shape[-1] != w.shape[0]:
        raise ValueError(f"dimension mismatch: x has {x.shape[-1]} columns, w has {w.shape[0]} rows")
    return x @ w


def matmul_oracle(x: QuantTensor, w: QuantTensor) -> np.ndarray:
    """Ground-truth column outputs: out[j] = sum_i w[i, j] * x[i].

    This is the reference every crossbar path is checked against; it is exact
    wide-integer arithmetic with no device model in the loop.
    """
    if len(w.shape) != 2:
        raise ValueError(f"weight tensor must be 2-D, got shape {w.shape}")
    xv = x.asarray().reshape(-1)
    if xv.shape[0] != w.shape[0]:
        raise ValueError(f"dimension mismatch: input length {xv.shape[0]}, weight rows {w.shape[0]}")
    return exact_matmul(xv, w.asarray())


@dataclass(frozen=True)
class LayerSpec:
    """One network layer: a fully-connected matrix or a convolution.

    Conv layers carry the geometry needed to lower them to a single matrix
    (`vmm_matrix`) so both the oracle and the crossbar run the same VMM.
    `out_shift` is the deterministic post-ReLU right-shift used to requantize
    activations back to the input precision between layers.
    """

    kind: str
    weight: QuantTensor
    in_shape: tuple[int, ...] = ()
    out_channels: int = 0
    kernel: tuple[int, int] = (0, 0)
    stride: int = 1
    padding: int = 0
    out_shift: int = 0
    relu: bool = True

    def __post_init__(self):
        object.__setattr__(self, "in_shape", tuple(int(v) for v in self.in_shape))
        object.__setattr__(self, "kernel", tuple(int(v) for v in self.kernel))
        if self.kind == "fc":
            if len(self.weight.shape) != 2:
                raise ValueError("fc weight must be (in_features, out_features)")
        elif self.kind == "conv":
            if len(self.weight.shape) != 4:
                raise ValueError("conv weight must be (out_ch, in_ch, kh, kw)")
            oc, ic, kh, kw = self.weight.shape
            if (oc, kh, kw) != (self.out_channels, *self.kernel):
                raise ValueError("conv weight shape disagrees with out_channels/kernel")
            if len(self.in_shape) != 3 or self.in_shape[0] != ic:
                raise ValueError("conv in_shape must be (in_ch, h, w) matching the kernel")
            if self.stride < 1 or self.padding < 0:
                raise ValueError("invalid conv stride/padding")
            oh, ow = self.out_hw
            if oh <= 0 or ow <= 0:
                raise ValueError("conv output would be empty for this geometry")
        else:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.out_shift < 0:
            raise ValueError("out_shift must be >= 0")

    @property
    def out_hw(self) -> tuple[int, int]:
        _, h, w = self.in_shape
        kh, kw = self.kernel
        oh = (h + 2 * self.padding - kh) // self.stride + 1
        ow = (w + 2 * self.padding - kw) // self.stride + 1
        return oh, ow

    @property
    def in_features(self) -> int:
        if self.kind == "fc":
            return self.weight.shape[0]
        c, h, w = self.in_shape
        return c * h * w

    @property
    def out_features(self) -> int:
        if self.kind == "fc":
            return self.weight.shape[1]
        oh, ow = self.out_hw
        return self.out_channels * oh * ow

    def vmm_matrix(self) -> np.ndarray:
        """The layer as a 2-D (rows, cols) integer matrix for VMM execution."""
        if self.kind == "fc":
            return self.weight.asarray()
        oc = self.out_channels
        return self.weight.asarray().reshape(oc, -1).T.copy()

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "weight": self.weight.to_dict(),
             "out_shift": self.out_shift, "relu": self.relu}
        if self.kind == "conv":
            d.update(in_shape=list(self.in_shape), out_channels=self.out_channels,
                     kernel=list(self.kernel), stride=self.stride, padding=self.padding)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "LayerSpec":
        return cls(
            kind=d["kind"],
            weight=QuantTensor.from_dict(d["weight"]),
            in_shape=tuple(d.get("in_shape", ())),
            out_channels=int(d.get("out_channels", 0)),
            kernel=tuple(d.get("kernel", (0, 0))),
            stride=int(d.get("stride", 1)),
            padding=int(d.get("padding", 0)),
            out_shift=int(d.get("out_shift", 0)),
            relu=bool(d.get("relu", True)),
        )

    def with_weight(self, weight: QuantTensor) -> "LayerSpec":
        return replace(self, weight=weight)


def im2col_array(arr: np.ndarray, layer: LayerSpec) -> np.ndarray:
    """Array-level patch extraction backing :func:`im2col`."""
    if layer.kind != "conv":
        raise ValueError("im2col applies to conv layers only")
    arr = np.asarray(arr, dtype=np.int64)
    if arr.shape != layer.in_shape:
        raise ValueError(f"input shape {arr.shape} does not match layer in_shape {layer.in_shape}")
    c, h, w = layer.in_shape
    kh, kw = layer.kernel
    s, p = layer.stride, layer.padding
    oh, ow = layer.out_hw
    padded = np.zeros((c, h + 2 * p, w + 2 * p), dtype=np.int64)
    padded[:, p:p + h, p:p + w] = arr
    rows = np.empty((oh * ow, c * kh * kw), dtype=np.int64)
    idx = 0
    for i in range(oh):
        for j in range(ow):
            patch = padded[:, i * s:i * s + kh, j * s:j * s + kw]
            rows[idx] = patch.reshape(-1)
            idx += 1
    return rows


def im2col(inp: QuantTensor, layer: LayerSpec) -> QuantTensor:
    """Lower a conv input to a patch matrix so Conv(inp) = patches @ kernel.

    Row p of the result is the flattened (in_ch, kh, kw) receptive field of
    output position p (row-major over output height then width); zero padding
    contributes zeros.
    """
    rows = im2col_array(inp.asarray(), layer)
    return QuantTensor.from_array(rows, inp.bits, inp.signed, inp.scale)
