"""Post-ADC decoding: restore true column partials from observed outputs.

Under the biased scheme a complemented column's output is recovered by
subtracting it from a bias built out of the sum of inputs; under the
differential scheme the recovery is a sign flip. Hardware-wise these are a
subtractor plus a 2:1 selector, or an inverter plus a 2:1 selector, sitting
behind each ADC; here they are exact integer operations. Decoding happens
per protection block, before partials from different blocks are accumulated
and before the per-group shift-and-add combine.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .crossbar import SCHEME_BIASED, SCHEME_DIFFERENTIAL, CrossbarConfig


def compute_bias(sum_inputs: int, device_bits: int) -> int:
    """Decode bias for one activated segment: (2^device_bits - 1) * sum.

    Computed as a shift and a subtraction, which is how the datapath gets it
    from the sum-of-inputs column without a multiplier.
    """
    if sum_inputs < 0:
        raise ValueError("sum of inputs cannot be negative")
    s = int(sum_inputs)
    return (s << device_bits) - s


def decode_scheme1(observed, bias, key_bit):
    """Biased-scheme decode: bias - observed when the key says transformed."""
    if isinstance(key_bit, (bool, int)) and np.isscalar(observed):
        return bias - observed if key_bit else observed
    observed = np.asarray(observed, dtype=np.int64)
    return np.where(np.asarray(key_bit, dtype=bool), np.asarray(bias) - observed, observed)


def decode_scheme2(observed, key_bit):
    """Differential-scheme decode: sign flip when the key says transformed."""
    if isinstance(key_bit, (bool, int)) and np.isscalar(observed):
        return -observed if key_bit else observed
    observed = np.asarray(observed, dtype=np.int64)
    return np.where(np.asarray(key_bit, dtype=bool), -observed, observed)


@dataclass
class DecoderContext:
    """Per-tile decode state: scheme, device precision, and the key bits.

    `start_segment` refreshes the cached bias from a new segment's sum of
    inputs; the bias is computed once per segment, not per column. Contexts
    are per inference stream and must not be shared across concurrent inputs.
    """

    scheme: int
    device_bits: int
    key_bits: np.ndarray  # (blocks, weight_cols)
    current_bias: int = 0

    def start_segment(self, sum_inputs: int) -> int:
        self.current_bias = compute_bias(sum_inputs, self.device_bits)
        return self.current_bias

    def key_bit(self, block: int, column: int) -> bool:
        return bool(self.key_bits[block, column])

    def decode(self, observed: int, block: int, column: int) -> int:
        if self.scheme == SCHEME_BIASED:
            return int(decode_scheme1(observed, self.current_bias, self.key_bit(block, column)))
        return int(decode_scheme2(observed, self.key_bit(block, column)))


def group_segments_to_blocks(seg_partials: np.ndarray, seg_sums: np.ndarray,
                             config: CrossbarConfig):
    """Accumulate per-segment outputs into per-block outputs.

    `seg_partials` is (groups, segments, columns) of raw ADC values in row
    order; segments must tile the blocks exactly (block_rows is a multiple of
    wl_active, so a block is a whole number of segments). Returns
    (groups, blocks, columns) partials and (blocks,) input sums.
    """
    segs_per_block, rem = divmod(config.block_rows, config.wl_active)
    expected = config.blocks * segs_per_block
    seg_partials = np.asarray(seg_partials, dtype=np.int64)
    seg_sums = np.asarray(seg_sums, dtype=np.int64)
    if rem or seg_partials.ndim != 3 or seg_partials.shape[1] != expected:
        raise ValueError(
            f"expected {expected} segments of {config.wl_active} rows "
            f"({segs_per_block} per block), got shape {seg_partials.shape}")
    if seg_sums.shape != (expected,):
        raise ValueError("one input sum per segment is required")
    g, _, cols = seg_partials.shape
    blocked = seg_partials.reshape(g, config.blocks, segs_per_block, cols).sum(axis=2)
    block_sums = seg_sums.reshape(config.blocks, segs_per_block).sum(axis=1)
    return blocked, block_sums


def decode_block_pipeline(block_partials: np.ndarray, block_sums: np.ndarray,
                          key_bits: np.ndarray, config: CrossbarConfig) -> np.ndarray:
    """Decode per-block column outputs and accumulate them across blocks.

    `block_partials` is (groups, blocks, weight_cols); the key bit of a
    (block, column) is shared by all groups. The result (groups, weight_cols)
    feeds the shift-and-add combine.
    """
    block_partials = np.asarray(block_partials, dtype=np.int64)
    key_bits = np.asarray(key_bits)
    if block_partials.shape != (config.groups, config.blocks, config.weight_cols):
        raise ValueError(
            f"block partials must be {(config.groups, config.blocks, config.weight_cols)}, "
            f"got {block_partials.shape}")
    if key_bits.shape != (config.blocks, config.weight_cols):
        raise ValueError("key bits must be (blocks, weight_cols)")
    if config.scheme == SCHEME_BIASED:
        block_sums = np.asarray(block_sums, dtype=np.int64)
        if block_sums.shape != (config.blocks,):
            raise ValueError("one input sum per block is required")
        bias = np.array([compute_bias(int(s), config.device_bits) for s in block_sums],
                        dtype=np.int64)
        decoded = decode_scheme1(block_partials, bias[None, :, None],
                                 key_bits[None, :, :])
    else:
        decoded = decode_scheme2(block_partials, key_bits[None, :, :])
    return decoded.sum(axis=1)
