"""Quantized inference: the exact reference path and the crossbar path.

Both paths share activation handling (ReLU, right-shift requantization back
to the input precision) and differ only in how each layer's VMM is computed,
so with correct keys they must agree bit for bit.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .crossbar import SCHEME_BIASED, CrossbarConfig
from .decode import compute_bias
from .mapping import KeyStore, MappedModel, TileKey
from .tensors import LayerSpec, QuantTensor, exact_matmul, im2col_array, int_range


@dataclass
class NetworkModel:
    """An ordered stack of quantized layers ending in a classifier head."""

    layers: list[LayerSpec]
    num_classes: int
    input_bits: int = 8

    def __post_init__(self):
        if not self.layers:
            raise ValueError("model needs at least one layer")
        if not (1 <= self.input_bits <= 16):
            raise ValueError("input_bits must be in [1, 16]")
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.out_features != nxt.in_features:
                raise ValueError(
                    f"layer chain broken: {prev.out_features} outputs feed "
                    f"{nxt.in_features} inputs")
        if self.layers[-1].out_features != self.num_classes:
            raise ValueError("last layer width must equal num_classes")

    @property
    def in_features(self) -> int:
        return self.layers[0].in_features

    def to_dict(self) -> dict:
        return {"num_classes": self.num_classes, "input_bits": self.input_bits,
                "layers": [l.to_dict() for l in self.layers]}

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkModel":
        return cls(layers=[LayerSpec.from_dict(l) for l in d["layers"]],
                   num_classes=int(d["num_classes"]),
                   input_bits=int(d.get("input_bits", 8)))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "NetworkModel":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class Dataset:
    """Input vectors with integer class labels."""

    inputs: QuantTensor          # (samples, features), unsigned
    labels: np.ndarray           # (samples,)

    def __post_init__(self):
        labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        if len(self.inputs.shape) != 2:
            raise ValueError("dataset inputs must be (samples, features)")
        if labels.shape != (self.inputs.shape[0],):
            raise ValueError("one label per sample is required")
        labels.flags.writeable = False
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return self.inputs.shape[0]

    def to_dict(self) -> dict:
        return {"inputs": self.inputs.to_dict(), "labels": self.labels.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Dataset":
        return cls(inputs=QuantTensor.from_dict(d["inputs"]),
                   labels=np.array(d["labels"], dtype=np.int64))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "Dataset":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _as_batch(x, in_features: int) -> tuple[np.ndarray, bool]:
    arr = np.asarray(x, dtype=np.int64)
    single = arr.ndim == 1
    if single:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != in_features:
        raise ValueError(f"input must have {in_features} features, got shape {arr.shape}")
    return arr, single


def _requantize(acc: np.ndarray, layer: LayerSpec, input_bits: int) -> np.ndarray:
    """Shared post-VMM activation: ReLU, right shift, saturate to input grid."""
    if not layer.relu:
        return acc
    acc = np.maximum(acc, 0)
    if layer.out_shift:
        acc = acc >> layer.out_shift
    return np.minimum(acc, int_range(input_bits, signed=False)[1])


def _layer_vmm_input(layer: LayerSpec, acts: np.ndarray) -> np.ndarray:
    """Rows to drive through the layer's VMM matrix: one per output position."""
    if layer.kind == "fc":
        return acts
    patch_width = layer.vmm_matrix().shape[0]
    if acts.shape[0] == 0:
        return np.empty((0, patch_width), dtype=np.int64)
    patches = [im2col_array(a.reshape(layer.in_shape), layer) for a in acts]
    return np.concatenate(patches, axis=0)


def _layer_vmm_output(layer: LayerSpec, rows_out: np.ndarray, batch: int) -> np.ndarray:
    if layer.kind == "fc":
        return rows_out
    oh, ow = layer.out_hw
    per = oh * ow
    out = rows_out.reshape(batch, per, layer.out_channels)
    return np.transpose(out, (0, 2, 1)).reshape(batch, layer.out_features)


def infer_reference(model: NetworkModel, x) -> np.ndarray:
    """Ground-truth class scores via exact integer matmuls."""
    acts, single = _as_batch(x, model.in_features)
    for layer in model.layers:
        rows = _layer_vmm_input(layer, acts)
        out = exact_matmul(rows, layer.vmm_matrix())
        acts = _requantize(_layer_vmm_output(layer, out, acts.shape[0]), layer,
                           model.input_bits)
    return acts[0] if single else acts


def _tile_forward(mapped_tile, key: TileKey, x_tile: np.ndarray,
                  config: CrossbarConfig) -> np.ndarray:
    """Decoded, combined column outputs of one group stack for a batch.

    Implements the per-block dataflow: raw partials of each protection block
    are decoded (bias subtraction or sign flip, keyed per block and column)
    before blocks accumulate and groups combine. Per-block input sums come
    from the sum-of-inputs column where the geometry has one.
    """
    wc = config.weight_cols
    tiles = mapped_tile.tiles
    if config.scheme == SCHEME_BIASED:
        cells = np.stack([t.cells[:, :wc] for t in tiles])
    else:
        pos = np.stack([t.cells_pos[:, :wc] for t in tiles])
        neg = np.stack([t.cells_neg[:, :wc] for t in tiles])
    bits = key.transform_bits.astype(bool)
    batch = x_tile.shape[0]
    acc = np.zeros((batch, config.groups, wc), dtype=np.int64)
    total_sum = np.zeros(batch, dtype=np.int64)
    br = config.block_rows
    for b in range(config.blocks):
        xb = x_tile[:, b * br:(b + 1) * br]
        bsum = xb.sum(axis=1)
        total_sum += bsum
        if config.scheme == SCHEME_BIASED:
            parts = np.einsum("br,grc->bgc", xb, cells[:, b * br:(b + 1) * br, :])
            bias = (bsum << config.device_bits) - bsum
            acc += np.where(bits[b][None, None, :], bias[:, None, None] - parts, parts)
        else:
            parts = (np.einsum("br,grc->bgc", xb, pos[:, b * br:(b + 1) * br, :])
                     - np.einsum("br,grc->bgc", xb, neg[:, b * br:(b + 1) * br, :]))
            acc += np.where(bits[b][None, None, :], -parts, parts)
    radix = config.radix_weights()
    combined = np.tensordot(acc, radix, axes=(1, 0))
    if config.scheme == SCHEME_BIASED:
        combined = combined - config.bias_offset * total_sum[:, None]
    return combined


def _mapped_layer_vmm(layer, keys_for_layer, rows_in: np.ndarray,
                      config: CrossbarConfig) -> np.ndarray:
    m, n = layer.shape
    out = np.zeros((rows_in.shape[0], n), dtype=np.int64)
    for mt, key in zip(layer.mapped_tiles, keys_for_layer.tiles):
        (r0, r1), (c0, c1) = mt.row_span, mt.col_span
        x_tile = np.zeros((rows_in.shape[0], config.rows), dtype=np.int64)
        x_tile[:, key.row_mask] = rows_in[:, r0:r1]
        tile_out = _tile_forward(mt, key, x_tile, config)
        out[:, c0:c1] += tile_out[:, key.col_mask]
    return out


def infer_mapped(mapped: MappedModel, keys: KeyStore, x,
                 batch_size: int = 128) -> np.ndarray:
    """Class scores through the crossbar pipeline under the given keys.

    Wrong key values are legal (that is exactly the adversary's situation);
    wrong key shapes are not. Fake (padding) rows are driven with zero input
    and fake column outputs are dropped, so padding never perturbs results.
    """
    if len(keys.layers) != len(mapped.layers):
        raise ValueError("key store and mapped model disagree on layer count")
    for lk, ml in zip(keys.layers, mapped.layers):
        if len(lk.tiles) != len(ml.mapped_tiles):
            raise ValueError("key store and mapped model disagree on tile count")
    acts, single = _as_batch(x, mapped.layers[0].skeleton.in_features)
    outs = []
    for start in range(0, acts.shape[0], batch_size):
        outs.append(_infer_mapped_batch(mapped, keys, acts[start:start + batch_size]))
    scores = np.concatenate(outs, axis=0) if outs else np.empty((0, mapped.num_classes))
    return scores[0] if single else scores


def _infer_mapped_batch(mapped: MappedModel, keys: KeyStore, acts: np.ndarray) -> np.ndarray:
    for layer, lk in zip(mapped.layers, keys.layers):
        skel = layer.skeleton
        ref_layer = skel.as_layer(np.zeros(layer.shape, dtype=np.int64))
        rows = _layer_vmm_input(ref_layer, acts)
        out = _mapped_layer_vmm(layer, lk, rows, mapped.config)
        acts = _requantize(_layer_vmm_output(ref_layer, out, acts.shape[0]), ref_layer,
                           mapped.input_bits)
    return acts


def predict(scores: np.ndarray) -> np.ndarray:
    """Class decisions from score rows (ties go to the lowest class index)."""
    scores = np.atleast_2d(scores)
    return scores.argmax(axis=1)


def accuracy(scores: np.ndarray, labels: np.ndarray) -> float:
    labels = np.asarray(labels)
    if labels.size == 0:
        raise ValueError("cannot score an empty dataset")
    return float((predict(scores) == labels).mean())


def evaluate_reference(model: NetworkModel, dataset: Dataset) -> float:
    return accuracy(infer_reference(model, dataset.inputs.asarray()), dataset.labels)


def evaluate_mapped(mapped: MappedModel, keys: KeyStore, dataset: Dataset) -> float:
    return accuracy(infer_mapped(mapped, keys, dataset.inputs.asarray()), dataset.labels)
