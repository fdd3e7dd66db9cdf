"""Crossbar-level simulation: programming, segment VMMs, and slice combining.

A processing element (PE) holds `groups` crossbar groups; each group stores
one positional slice of the weights. Under the biased scheme (1) a group is a
single crossbar, under the differential scheme (2) it is a positive/negative
crossbar pair whose column currents subtract in the analog domain. ADCs and
DACs are ideal here: wordline segmentation (`wl_active`) is the only converter
constraint carried into the arithmetic, and every value is an exact integer.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass, replace

import numpy as np

SCHEME_BIASED = 1
SCHEME_DIFFERENTIAL = 2

MAX_ROWS = 1024          # documented overflow-safe envelope (with <=16-bit data)
MAX_WEIGHT_BITS = 16


class GeometryError(ValueError):
    """Raised for inconsistent crossbar geometry or block partitioning."""


@dataclass(frozen=True)
class CrossbarConfig:
    """Geometry and precision of one crossbar group stack (one PE).

    `cols` counts physical bitlines including the sum-of-inputs column when
    `sum_column` is set; the weight payload then occupies `cols - 1` bitlines.
    `block_rows` is the protection block height and must be a multiple of
    `wl_active`, the number of wordlines driven per conversion step.
    """

    rows: int = 256
    cols: int = 256
    device_bits: int = 1
    groups: int = 8
    wl_active: int = 16
    block_rows: int = 32
    scheme: int = SCHEME_BIASED
    sum_column: bool = True
    adc_per_group: int = 16

    def __post_init__(self):
        if self.scheme not in (SCHEME_BIASED, SCHEME_DIFFERENTIAL):
            raise GeometryError(f"scheme must be 1 or 2, got {self.scheme}")
        if self.rows < 1 or self.cols < 1:
            raise GeometryError("crossbar must have at least one row and column")
        if self.rows > MAX_ROWS:
            raise GeometryError(f"rows > {MAX_ROWS} exceeds the exactness envelope")
        if self.device_bits < 1 or self.groups < 1:
            raise GeometryError("device_bits and groups must be >= 1")
        if self.weight_bits > MAX_WEIGHT_BITS:
            raise GeometryError(
                f"device_bits*groups = {self.weight_bits} exceeds {MAX_WEIGHT_BITS}-bit weights"
            )
        if not (1 <= self.wl_active <= self.rows):
            raise GeometryError("wl_active must be in [1, rows]")
        if self.block_rows % self.wl_active != 0:
            raise GeometryError(
                f"block_rows ({self.block_rows}) must be an integer multiple of "
                f"wl_active ({self.wl_active})"
            )
        if self.rows % self.block_rows != 0:
            raise GeometryError(
                f"rows ({self.rows}) must split into whole blocks of {self.block_rows}"
            )
        if self.scheme == SCHEME_BIASED and not self.sum_column:
            raise GeometryError("the biased scheme needs a sum-of-inputs column to decode")
        if self.sum_column and self.cols < 2:
            raise GeometryError("need at least one weight column besides the sum column")
        if self.adc_per_group < 1:
            raise GeometryError("adc_per_group must be >= 1")

    @property
    def weight_bits(self) -> int:
        """Total weight precision: device_bits per group times groups."""
        return self.device_bits * self.groups

    @property
    def blocks(self) -> int:
        return self.rows // self.block_rows

    @property
    def weight_cols(self) -> int:
        return self.cols - 1 if self.sum_column else self.cols

    @property
    def sum_col_index(self) -> int | None:
        return self.cols - 1 if self.sum_column else None

    @property
    def levels(self) -> int:
        """Distinct programmable conductance levels per device."""
        return 1 << self.device_bits

    @property
    def bias_offset(self) -> int:
        """Shift added to signed weights under the biased scheme."""
        return 1 << (self.weight_bits - 1) if self.scheme == SCHEME_BIASED else 0

    def radix_weights(self) -> np.ndarray:
        """Positional factor of each group's partial: levels^(groups-1-g)."""
        exps = np.arange(self.groups - 1, -1, -1, dtype=np.int64)
        return (1 << (self.device_bits * exps)).astype(np.int64)

    def to_dict(self) -> dict:
        return {
            "rows": self.rows, "cols": self.cols, "device_bits": self.device_bits,
            "groups": self.groups, "wl_active": self.wl_active,
            "block_rows": self.block_rows, "scheme": self.scheme,
            "sum_column": self.sum_column, "adc_per_group": self.adc_per_group,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CrossbarConfig":
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d})

    def replace(self, **kw) -> "CrossbarConfig":
        return replace(self, **kw)


def _check_cells(arr: np.ndarray, config: CrossbarConfig, name: str) -> np.ndarray:
    arr = np.ascontiguousarray(arr, dtype=np.int64)
    if arr.shape != (config.rows, config.cols):
        raise GeometryError(f"{name} must be {(config.rows, config.cols)}, got {arr.shape}")
    if arr.size and (arr.min() < 0 or arr.max() >= config.levels):
        raise ValueError(f"{name} holds levels outside [0, {config.levels - 1}]")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class CrossbarTile:
    """Programmed conductance state of one crossbar group.

    Scheme 1 uses `cells`; scheme 2 uses the `cells_pos`/`cells_neg` pair.
    When `sum_col_index` is set, that column is fixed all-ones (on the
    positive crossbar for scheme 2) and computes the sum of inputs.
    """

    config: CrossbarConfig
    cells: np.ndarray | None = None
    cells_pos: np.ndarray | None = None
    cells_neg: np.ndarray | None = None

    def __post_init__(self):
        cfg = self.config
        if cfg.scheme == SCHEME_BIASED:
            if self.cells is None or self.cells_pos is not None or self.cells_neg is not None:
                raise ValueError("scheme 1 tiles carry a single `cells` array")
            object.__setattr__(self, "cells", _check_cells(self.cells, cfg, "cells"))
            arrays = [self.cells]
        else:
            if self.cells is not None or self.cells_pos is None or self.cells_neg is None:
                raise ValueError("scheme 2 tiles carry `cells_pos` and `cells_neg`")
            object.__setattr__(self, "cells_pos", _check_cells(self.cells_pos, cfg, "cells_pos"))
            object.__setattr__(self, "cells_neg", _check_cells(self.cells_neg, cfg, "cells_neg"))
            arrays = [self.cells_pos]
        if cfg.sum_column:
            j = cfg.sum_col_index
            if not np.all(arrays[0][:, j] == 1):
                raise ValueError("sum-of-inputs column must be fixed all-ones")
            if cfg.scheme == SCHEME_DIFFERENTIAL and not np.all(self.cells_neg[:, j] == 0):
                raise ValueError("sum-of-inputs column on the negative crossbar must be zero")

    @property
    def sum_col_index(self) -> int | None:
        return self.config.sum_col_index

    def signed_cells(self) -> np.ndarray:
        """Effective per-cell value: `cells` or pos - neg for pairs."""
        if self.config.scheme == SCHEME_BIASED:
            return self.cells
        return self.cells_pos - self.cells_neg


def _with_sum_column(weight_cells: np.ndarray, config: CrossbarConfig, ones: bool) -> np.ndarray:
    full = np.empty((config.rows, config.cols), dtype=np.int64)
    full[:, :config.weight_cols] = weight_cells
    if config.sum_column:
        full[:, config.sum_col_index] = 1 if ones else 0
    return full


def program_tile(slices, config: CrossbarConfig) -> list[CrossbarTile]:
    """Program per-group weight slices into crossbar tiles.

    `slices` has one entry per group, most significant slice first. Scheme 1
    entries are (rows, weight_cols) level matrices; scheme 2 entries are
    (pos, neg) pairs of such matrices. The sum-of-inputs column, when
    configured, is appended automatically.
    """
    slices = list(slices)
    if len(slices) != config.groups:
        raise ValueError(f"expected {config.groups} slices, got {len(slices)}")
    tiles = []
    for g, entry in enumerate(slices):
        if config.scheme == SCHEME_BIASED:
            cells = np.asarray(entry, dtype=np.int64)
            _check_weight_slice(cells, config, f"slice {g}")
            tiles.append(CrossbarTile(config, cells=_with_sum_column(cells, config, ones=True)))
        else:
            pos, neg = entry
            pos = np.asarray(pos, dtype=np.int64)
            neg = np.asarray(neg, dtype=np.int64)
            _check_weight_slice(pos, config, f"slice {g} (positive)")
            _check_weight_slice(neg, config, f"slice {g} (negative)")
            tiles.append(CrossbarTile(
                config,
                cells_pos=_with_sum_column(pos, config, ones=True),
                cells_neg=_with_sum_column(neg, config, ones=False),
            ))
    return tiles


def _check_weight_slice(arr: np.ndarray, config: CrossbarConfig, name: str) -> None:
    if arr.shape != (config.rows, config.weight_cols):
        raise ValueError(
            f"{name} must be {(config.rows, config.weight_cols)}, got {arr.shape}"
        )
    if arr.size and (arr.min() < 0 or arr.max() >= config.levels):
        raise ValueError(f"{name} holds levels outside the device range")


def _row_slice(rows, config: CrossbarConfig) -> slice:
    start, stop = rows
    if not (0 <= start < stop <= config.rows):
        raise ValueError(f"row range {rows} outside [0, {config.rows})")
    if stop - start > config.wl_active:
        raise ValueError(
            f"segment of {stop - start} rows exceeds wl_active = {config.wl_active}"
        )
    return slice(start, stop)


def xbar_vmm_segment(tile: CrossbarTile, x_seg: np.ndarray, rows) -> np.ndarray:
    """Per-column partial sums for one activated wordline segment.

    `rows` is a (start, stop) range of at most `wl_active` rows; `x_seg`
    supplies the integer inputs for exactly those rows. For differential
    pairs the result is the positive-column current minus the negative one.
    """
    sl = _row_slice(rows, tile.config)
    x_seg = np.asarray(x_seg, dtype=np.int64)
    if x_seg.shape != (sl.stop - sl.start,):
        raise ValueError(f"input segment must have {sl.stop - sl.start} entries")
    if tile.config.scheme == SCHEME_BIASED:
        return x_seg @ tile.cells[sl]
    return x_seg @ tile.cells_pos[sl] - x_seg @ tile.cells_neg[sl]


def sum_of_inputs(x_seg) -> int:
    """Sum of an input segment, computed as an all-ones column VMM.

    Physically this is an ordinary bitline whose devices are all programmed
    to level 1, so it shares the crossbar datapath and its result is
    available wherever the column outputs are.
    """
    x_seg = np.asarray(x_seg, dtype=np.int64)
    ones = np.ones_like(x_seg)
    return int(x_seg @ ones)


def shift_add_combine(partials, config: CrossbarConfig) -> np.ndarray:
    """Recombine per-group partial outputs into full-precision columns.

    Group g carries positional weight levels^(groups-1-g): group 0 is the
    most significant slice.
    """
    partials = np.asarray(partials, dtype=np.int64)
    if partials.shape[0] != config.groups:
        raise ValueError(f"expected {config.groups} group partials, got {partials.shape[0]}")
    radix = config.radix_weights()
    return np.tensordot(radix, partials, axes=(0, 0))


def slice_levels(values, config: CrossbarConfig) -> np.ndarray:
    """Split non-negative integers into per-group device levels, MSB first.

    Inverse of :func:`shift_add_combine` on stored values: stacking the
    returned digits back with the group radix reproduces the input exactly.
    """
    values = np.asarray(values, dtype=np.int64)
    if values.size and values.min() < 0:
        raise ValueError("only non-negative values can be sliced onto devices")
    if values.size and values.max() >= (1 << config.weight_bits):
        raise ValueError(f"values exceed {config.weight_bits}-bit storage")
    shifts = config.device_bits * np.arange(config.groups - 1, -1, -1, dtype=np.int64)
    mask = config.levels - 1
    return (values[None, ...] >> shifts.reshape(-1, *([1] * values.ndim))) & mask


def segment_ranges(config: CrossbarConfig):
    """(start, stop) row ranges of consecutive wl_active-wide segments."""
    step = config.wl_active
    return [(r, min(r + step, config.rows)) for r in range(0, config.rows, step)]


# ---------------------------------------------------------------------------
# Tile dumps: the conductance image an adversary can read out.
# ---------------------------------------------------------------------------

def _encode_cells(arr: np.ndarray) -> str:
    return base64.b64encode(np.ascontiguousarray(arr, dtype="<u2").tobytes()).decode("ascii")


def _decode_cells(blob: str, config: CrossbarConfig) -> np.ndarray:
    arr = np.frombuffer(base64.b64decode(blob), dtype="<u2").astype(np.int64)
    return arr.reshape(-1, config.rows, config.cols)


def dump_tiles(tiles: list[CrossbarTile]) -> dict:
    """JSON-ready conductance dump of one group stack."""
    config = tiles[0].config
    doc = {"config": config.to_dict()}
    if config.scheme == SCHEME_BIASED:
        doc["cells"] = _encode_cells(np.stack([t.cells for t in tiles]))
    else:
        doc["cells_pos"] = _encode_cells(np.stack([t.cells_pos for t in tiles]))
        doc["cells_neg"] = _encode_cells(np.stack([t.cells_neg for t in tiles]))
    return doc


def load_tiles(doc: dict) -> list[CrossbarTile]:
    config = CrossbarConfig.from_dict(doc["config"])
    tiles = []
    if config.scheme == SCHEME_BIASED:
        stack = _decode_cells(doc["cells"], config)
        if stack.shape[0] != config.groups:
            raise ValueError("tile dump does not hold one crossbar per group")
        for g in range(config.groups):
            tiles.append(CrossbarTile(config, cells=stack[g]))
    else:
        pos = _decode_cells(doc["cells_pos"], config)
        neg = _decode_cells(doc["cells_neg"], config)
        if pos.shape[0] != config.groups or neg.shape[0] != config.groups:
            raise ValueError("tile dump does not hold one crossbar pair per group")
        for g in range(config.groups):
            tiles.append(CrossbarTile(config, cells_pos=pos[g], cells_neg=neg[g]))
    return tiles


def save_tile_dump(tiles: list[CrossbarTile], path) -> None:
    with open(path, "w") as fh:
        json.dump(dump_tiles(tiles), fh, sort_keys=True)
        fh.write("\n")


def load_tile_dump(path) -> list[CrossbarTile]:
    with open(path) as fh:
        return load_tiles(json.load(fh))
