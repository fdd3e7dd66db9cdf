"""Key generation and protected weight mapping.

Protection works by storing selected columns of weights in complement form:
a stored value v becomes (2^p - 1) - v. Which (block, column) positions are
complemented is the key. Small weight matrices are additionally padded with
random in-range values, with the real row/column positions forming extra key
material. Everything here is deterministic under the key seed.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field

import numpy as np

from .crossbar import (
    SCHEME_BIASED,
    SCHEME_DIFFERENTIAL,
    CrossbarConfig,
    CrossbarTile,
    GeometryError,
    dump_tiles,
    load_tiles,
    program_tile,
    shift_add_combine,
    slice_levels,
)
from .tensors import LayerSpec, QuantTensor, int_range


def encode_scheme1(value, bits: int):
    """Complement of a stored weight: (2^bits - 1) - value. An involution."""
    arr = np.asarray(value, dtype=np.int64)
    top = (1 << bits) - 1
    if arr.size and (arr.min() < 0 or arr.max() > top):
        raise ValueError(f"value outside [0, {top}] for {bits}-bit encoding")
    out = top - arr
    return int(out) if np.isscalar(value) or arr.ndim == 0 else out


def encode_scheme2(level, device_bits: int):
    """Complement of a conductance level; applied to both halves of a pair."""
    return encode_scheme1(level, device_bits)


class KeyStream:
    """Deterministic byte stream: keyed BLAKE2b in counter mode.

    Stands in for keys provisioned from tamper-proof storage; everything
    derived from (seed, label) is reproducible and independent per label.
    """

    def __init__(self, seed: int, label: str):
        self._key = hashlib.blake2b(str(int(seed)).encode(), digest_size=32).digest()
        self._label = label.encode()
        self._counter = 0
        self._buf = b""

    def take(self, n: int) -> bytes:
        while len(self._buf) < n:
            block = hashlib.blake2b(
                self._label + b":" + str(self._counter).encode(),
                key=self._key, digest_size=64).digest()
            self._buf += block
            self._counter += 1
        out, self._buf = self._buf[:n], self._buf[n:]
        return out

    def bits(self, n: int) -> np.ndarray:
        raw = np.frombuffer(self.take((n + 7) // 8), dtype=np.uint8)
        return np.unpackbits(raw)[:n].astype(np.uint8)

    def integers(self, lo: int, hi: int, size: int) -> np.ndarray:
        """`size` uniform integers in [lo, hi], inclusive, rejection-sampled."""
        if hi < lo:
            raise ValueError("empty integer range")
        span = hi - lo + 1
        reject_from = (1 << 64) - ((1 << 64) % span)  # multiples of span fit below this
        out: list[int] = []
        while len(out) < size:
            want = size - len(out)
            raw = np.frombuffer(self.take(8 * (want + 4)), dtype="<u8")
            if reject_from < (1 << 64):
                raw = raw[raw < np.uint64(reject_from)]
            ok = raw[:want]
            out.extend(((ok % span).astype(np.int64) + lo).tolist())
        return np.array(out[:size], dtype=np.int64)

    def subset_mask(self, n: int, k: int) -> np.ndarray:
        """Boolean mask with k of n positions set, uniformly at random."""
        if not (0 <= k <= n):
            raise ValueError(f"cannot place {k} items in {n} slots")
        scores = np.frombuffer(self.take(8 * n), dtype="<u8")
        chosen = np.argsort(scores, kind="stable")[:k]
        mask = np.zeros(n, dtype=bool)
        mask[chosen] = True
        return mask


def _pack_bits(bits: np.ndarray) -> str:
    import base64
    return base64.b64encode(np.packbits(bits.reshape(-1).astype(np.uint8)).tobytes()).decode("ascii")


def _unpack_bits(blob: str, count: int) -> np.ndarray:
    import base64
    raw = np.frombuffer(base64.b64decode(blob), dtype=np.uint8)
    return np.unpackbits(raw)[:count].astype(np.uint8)


@dataclass(frozen=True, eq=False)
class TileKey:
    """Key material for one mapped tile.

    `transform_bits` is (blocks, weight_cols): bit 1 means that block of that
    column is stored in complement form; one bit covers all crossbar groups
    of the tile. `row_mask`/`col_mask` mark which physical rows/columns carry
    real weights (identity-placed leading positions when unprotected).
    """

    transform_bits: np.ndarray
    row_mask: np.ndarray
    col_mask: np.ndarray

    def __post_init__(self):
        tb = np.ascontiguousarray(self.transform_bits, dtype=np.uint8)
        rm = np.ascontiguousarray(self.row_mask, dtype=bool)
        cm = np.ascontiguousarray(self.col_mask, dtype=bool)
        if tb.ndim != 2:
            raise ValueError("transform_bits must be (blocks, weight_cols)")
        if tb.size and tb.max() > 1:
            raise ValueError("transform_bits must be 0/1")
        for a in (tb, rm, cm):
            a.flags.writeable = False
        object.__setattr__(self, "transform_bits", tb)
        object.__setattr__(self, "row_mask", rm)
        object.__setattr__(self, "col_mask", cm)

    @property
    def real_rows(self) -> int:
        return int(self.row_mask.sum())

    @property
    def real_cols(self) -> int:
        return int(self.col_mask.sum())

    @property
    def padded(self) -> bool:
        return not (bool(self.row_mask.all()) and bool(self.col_mask.all()))

    def key_bit_count(self) -> int:
        return int(self.transform_bits.size)

    def to_dict(self) -> dict:
        return {
            "transform_bits": _pack_bits(self.transform_bits),
            "blocks": int(self.transform_bits.shape[0]),
            "weight_cols": int(self.transform_bits.shape[1]),
            "row_mask": _pack_bits(self.row_mask),
            "rows": int(self.row_mask.size),
            "col_mask": _pack_bits(self.col_mask),
            "cols": int(self.col_mask.size),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TileKey":
        k, n = int(d["blocks"]), int(d["weight_cols"])
        return cls(
            transform_bits=_unpack_bits(d["transform_bits"], k * n).reshape(k, n),
            row_mask=_unpack_bits(d["row_mask"], int(d["rows"])).astype(bool),
            col_mask=_unpack_bits(d["col_mask"], int(d["cols"])).astype(bool),
        )


def tile_grid(shape: tuple[int, int], config: CrossbarConfig):
    """(row_span, col_span) tiles covering an (m, n) weight matrix.

    Row chunks of `rows` map to separate PEs whose partial outputs add;
    column chunks of `weight_cols` land on separate PEs side by side.
    """
    m, n = shape
    if m < 1 or n < 1:
        raise ValueError(f"weight matrix {shape} is empty")
    spans = []
    for r0 in range(0, m, config.rows):
        for c0 in range(0, n, config.weight_cols):
            spans.append(((r0, min(r0 + config.rows, m)),
                          (c0, min(c0 + config.weight_cols, n))))
    return spans


@dataclass
class LayerKeys:
    shape: tuple[int, int]
    protected: bool
    tiles: list[TileKey]


@dataclass
class KeyStore:
    """All key material for one mapped model, derived from a single seed."""

    config: CrossbarConfig
    seed: int
    layers: list[LayerKeys] = field(default_factory=list)

    @property
    def scheme(self) -> int:
        return self.config.scheme

    def transform_bit_count(self) -> int:
        return sum(k.key_bit_count() for lk in self.layers for k in lk.tiles)

    def mask_bit_count(self) -> int:
        """Row+column placement bits, counted for padded tiles only."""
        return sum(k.row_mask.size + k.col_mask.size
                   for lk in self.layers for k in lk.tiles if k.padded)

    def to_dict(self) -> dict:
        return {
            "scheme": self.scheme,
            "config": self.config.to_dict(),
            "seed": self.seed,
            "layers": [
                {"shape": list(lk.shape), "protected": lk.protected,
                 "tiles": [t.to_dict() for t in lk.tiles]}
                for lk in self.layers
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "KeyStore":
        store = cls(config=CrossbarConfig.from_dict(d["config"]), seed=int(d["seed"]))
        for lk in d["layers"]:
            store.layers.append(LayerKeys(
                shape=tuple(lk["shape"]),
                protected=bool(lk["protected"]),
                tiles=[TileKey.from_dict(t) for t in lk["tiles"]],
            ))
        return store

    def save(self, path) -> None:
        _write_json(path, self.to_dict())

    @classmethod
    def load(cls, path) -> "KeyStore":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _write_json(path, doc) -> None:
    """Atomic, deterministic JSON write (stable key order, no timestamps)."""
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        json.dump(doc, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")
    os.replace(tmp, path)


def _layer_tile_keys(config: CrossbarConfig, shape, stream_seed: int, label: str,
                     protected: bool) -> list[TileKey]:
    keys = []
    for ti, (rspan, cspan) in enumerate(tile_grid(shape, config)):
        rows_used = rspan[1] - rspan[0]
        cols_used = cspan[1] - cspan[0]
        if protected:
            s = KeyStream(stream_seed, f"{label}/tile{ti}")
            bits = s.bits(config.blocks * config.weight_cols).reshape(
                config.blocks, config.weight_cols)
            row_mask = s.subset_mask(config.rows, rows_used)
            col_mask = s.subset_mask(config.weight_cols, cols_used)
        else:
            bits = np.zeros((config.blocks, config.weight_cols), dtype=np.uint8)
            row_mask = np.arange(config.rows) < rows_used
            col_mask = np.arange(config.weight_cols) < cols_used
        keys.append(TileKey(bits, row_mask, col_mask))
    return keys


def generate_keys(config: CrossbarConfig, shape, seed: int, protected: bool = True) -> KeyStore:
    """Fresh key material for a single weight matrix of the given shape."""
    store = KeyStore(config=config, seed=int(seed))
    store.layers.append(LayerKeys(
        shape=tuple(shape), protected=protected,
        tiles=_layer_tile_keys(config, shape, seed, "layer0", protected)))
    return store


def generate_model_keys(config: CrossbarConfig, model, seed: int,
                        protected_layers=None) -> KeyStore:
    """Key material for every layer of a model.

    `protected_layers` selects which layer indices get live (random) keys;
    the rest are mapped in the clear (zero bits, identity placement).
    None protects everything.
    """
    layer_shapes = [tuple(layer.vmm_matrix().shape) for layer in model.layers]
    if protected_layers is None:
        protected_layers = range(len(layer_shapes))
    protected_layers = set(protected_layers)
    bad = protected_layers - set(range(len(layer_shapes)))
    if bad:
        raise ValueError(f"no such layer indices: {sorted(bad)}")
    store = KeyStore(config=config, seed=int(seed))
    for li, shape in enumerate(layer_shapes):
        prot = li in protected_layers
        store.layers.append(LayerKeys(
            shape=shape, protected=prot,
            tiles=_layer_tile_keys(config, shape, seed, f"layer{li}", prot)))
    return store


def pad_matrix(w: np.ndarray, rows: int, cols: int, rng, row_mask: np.ndarray,
               col_mask: np.ndarray) -> np.ndarray:
    """Embed a small matrix into (rows, cols), filling the rest with decoys.

    Real entries land at the masked positions with their relative order
    preserved; fake entries are uniform over [min(w), max(w)] so they are
    statistically indistinguishable from real weights. `rng` must provide
    integers(lo, hi, size) (inclusive), e.g. a :class:`KeyStream`.
    """
    w = np.asarray(w, dtype=np.int64)
    if w.ndim != 2:
        raise ValueError("pad_matrix expects a 2-D matrix")
    row_mask = np.asarray(row_mask, dtype=bool)
    col_mask = np.asarray(col_mask, dtype=bool)
    if row_mask.size != rows or col_mask.size != cols:
        raise ValueError("mask lengths must equal the padded geometry")
    if int(row_mask.sum()) != w.shape[0] or int(col_mask.sum()) != w.shape[1]:
        raise ValueError(
            f"masks place {int(row_mask.sum())}x{int(col_mask.sum())} real cells "
            f"but the matrix is {w.shape[0]}x{w.shape[1]}"
        )
    if w.shape[0] > rows or w.shape[1] > cols:
        raise ValueError(f"matrix {w.shape} exceeds padded size {(rows, cols)}")
    lo, hi = int(w.min()), int(w.max())
    padded = rng.integers(lo, hi, rows * cols).reshape(rows, cols)
    padded[np.ix_(row_mask, col_mask)] = w
    return padded


def apply_column_transform(levels: np.ndarray, bits: np.ndarray,
                           config: CrossbarConfig) -> np.ndarray:
    """Complement the (block, column) positions selected by the key bits.

    `levels` is (groups, rows, weight_cols); the same bit drives every group
    of a column. Involution: applying twice restores the input.
    """
    if levels.shape != (config.groups, config.rows, config.weight_cols):
        raise ValueError("levels must be (groups, rows, weight_cols)")
    if bits.shape != (config.blocks, config.weight_cols):
        raise ValueError("transform bits must be (blocks, weight_cols)")
    expanded = np.repeat(bits.astype(bool), config.block_rows, axis=0)
    return np.where(expanded[None, :, :], config.levels - 1 - levels, levels)


def _split_differential(padded: np.ndarray, config: CrossbarConfig):
    """Per-digit conductance pairs: magnitude digits on the signed side."""
    mag = slice_levels(np.abs(padded), config)
    pos = np.where(padded >= 0, mag, 0)
    neg = np.where(padded < 0, mag, 0)
    return pos, neg


def _map_padded(padded: np.ndarray, key: TileKey, config: CrossbarConfig) -> list[CrossbarTile]:
    if config.scheme == SCHEME_BIASED:
        levels = slice_levels(padded + config.bias_offset, config)
        levels = apply_column_transform(levels, key.transform_bits, config)
        return program_tile(levels, config)
    pos, neg = _split_differential(padded, config)
    pos = apply_column_transform(pos, key.transform_bits, config)
    neg = apply_column_transform(neg, key.transform_bits, config)
    return program_tile(list(zip(pos, neg)), config)


def unmap_tile(tiles: list[CrossbarTile], key: TileKey,
               config: CrossbarConfig) -> np.ndarray:
    """Read signed weights back out of a group stack under the given key.

    With the mapping key this inverts :func:`_map_padded` exactly; with a
    guessed key it is the adversary's (possibly wrong) reconstruction.
    """
    wc = config.weight_cols
    if config.scheme == SCHEME_BIASED:
        stack = np.stack([t.cells[:, :wc] for t in tiles])
        stack = apply_column_transform(stack, key.transform_bits, config)
        full = shift_add_combine(stack, config) - config.bias_offset
    else:
        pos = np.stack([t.cells_pos[:, :wc] for t in tiles])
        neg = np.stack([t.cells_neg[:, :wc] for t in tiles])
        pos = apply_column_transform(pos, key.transform_bits, config)
        neg = apply_column_transform(neg, key.transform_bits, config)
        full = shift_add_combine(pos - neg, config)
    return full[np.ix_(key.row_mask, key.col_mask)]


@dataclass(frozen=True)
class LayerSkeleton:
    """Layer structure without weights: what the threat model calls public."""

    kind: str
    in_shape: tuple[int, ...]
    out_channels: int
    kernel: tuple[int, int]
    stride: int
    padding: int
    out_shift: int
    relu: bool
    weight_shape: tuple[int, ...]
    weight_bits: int

    @classmethod
    def from_layer(cls, layer: LayerSpec) -> "LayerSkeleton":
        return cls(
            kind=layer.kind, in_shape=layer.in_shape, out_channels=layer.out_channels,
            kernel=layer.kernel, stride=layer.stride, padding=layer.padding,
            out_shift=layer.out_shift, relu=layer.relu,
            weight_shape=tuple(layer.weight.shape), weight_bits=layer.weight.bits,
        )

    @property
    def in_features(self) -> int:
        if self.kind == "fc":
            return self.weight_shape[0]
        c, h, w = self.in_shape
        return c * h * w

    def as_layer(self, vmm_weights: np.ndarray, bits: int | None = None) -> LayerSpec:
        """Rebuild a runnable layer from (rows, cols) VMM-domain weights."""
        bits = self.weight_bits if bits is None else bits
        if self.kind == "fc":
            weight = QuantTensor.from_array(vmm_weights, bits=bits, signed=True)
        else:
            oc = self.out_channels
            weight = QuantTensor.from_array(
                vmm_weights.T.reshape(self.weight_shape), bits=bits, signed=True)
        return LayerSpec(
            kind=self.kind, weight=weight, in_shape=self.in_shape,
            out_channels=self.out_channels, kernel=self.kernel, stride=self.stride,
            padding=self.padding, out_shift=self.out_shift, relu=self.relu,
        )

    def to_dict(self) -> dict:
        return {
            "kind": self.kind, "in_shape": list(self.in_shape),
            "out_channels": self.out_channels, "kernel": list(self.kernel),
            "stride": self.stride, "padding": self.padding,
            "out_shift": self.out_shift, "relu": self.relu,
            "weight_shape": list(self.weight_shape), "weight_bits": self.weight_bits,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LayerSkeleton":
        return cls(
            kind=d["kind"], in_shape=tuple(d["in_shape"]),
            out_channels=int(d["out_channels"]), kernel=tuple(d["kernel"]),
            stride=int(d["stride"]), padding=int(d["padding"]),
            out_shift=int(d["out_shift"]), relu=bool(d["relu"]),
            weight_shape=tuple(d["weight_shape"]), weight_bits=int(d["weight_bits"]),
        )


@dataclass
class MappedTile:
    """One programmed group stack plus where it sits in the layer matrix."""

    row_span: tuple[int, int]
    col_span: tuple[int, int]
    tiles: list[CrossbarTile]


@dataclass
class MappedLayer:
    skeleton: LayerSkeleton
    shape: tuple[int, int]
    mapped_tiles: list[MappedTile]


@dataclass
class MappedModel:
    """A model in its on-crossbar form: conductances plus public structure.

    Deliberately holds no plaintext weights; recovering them requires the
    matching :class:`KeyStore` (or guessing).
    """

    config: CrossbarConfig
    seed: int
    num_classes: int
    input_bits: int
    layers: list[MappedLayer] = field(default_factory=list)
    source_model: str | None = None

    @property
    def scheme(self) -> int:
        return self.config.scheme

    @property
    def bias_offset(self) -> int:
        return self.config.bias_offset

    def save(self, out_dir) -> None:
        os.makedirs(out_dir, exist_ok=True)
        tile_dir = os.path.join(out_dir, "tiles")
        os.makedirs(tile_dir, exist_ok=True)
        manifest = {
            "config": self.config.to_dict(),
            "seed": self.seed,
            "num_classes": self.num_classes,
            "input_bits": self.input_bits,
            "source_model": self.source_model,
            "layers": [],
        }
        for li, layer in enumerate(self.layers):
            entry = {"skeleton": layer.skeleton.to_dict(), "shape": list(layer.shape),
                     "tiles": []}
            for ti, mt in enumerate(layer.mapped_tiles):
                rel = f"tiles/layer{li}_tile{ti}.json"
                _write_json(os.path.join(out_dir, rel), dump_tiles(mt.tiles))
                entry["tiles"].append({
                    "row_span": list(mt.row_span), "col_span": list(mt.col_span),
                    "file": rel,
                })
            manifest["layers"].append(entry)
        _write_json(os.path.join(out_dir, "manifest.json"), manifest)

    @classmethod
    def load(cls, out_dir) -> "MappedModel":
        with open(os.path.join(out_dir, "manifest.json")) as fh:
            manifest = json.load(fh)
        model = cls(
            config=CrossbarConfig.from_dict(manifest["config"]),
            seed=int(manifest["seed"]),
            num_classes=int(manifest["num_classes"]),
            input_bits=int(manifest["input_bits"]),
            source_model=manifest.get("source_model"),
        )
        for entry in manifest["layers"]:
            mts = []
            for t in entry["tiles"]:
                with open(os.path.join(out_dir, t["file"])) as fh:
                    tiles = load_tiles(json.load(fh))
                mts.append(MappedTile(tuple(t["row_span"]), tuple(t["col_span"]), tiles))
            model.layers.append(MappedLayer(
                skeleton=LayerSkeleton.from_dict(entry["skeleton"]),
                shape=tuple(entry["shape"]),
                mapped_tiles=mts,
            ))
        return model


def map_model(model, config: CrossbarConfig, keys: KeyStore) -> MappedModel:
    """Map every layer of a model onto protected crossbar tiles.

    `keys` must have been generated for this model and config. Weight chunks
    smaller than a full tile are padded with decoy values drawn from the key
    seed; transform bits are then applied per (block, column) across all
    crossbar groups.
    """
    if keys.config != config:
        raise GeometryError("key store was generated for a different geometry")
    if len(keys.layers) != len(model.layers):
        raise ValueError(
            f"key store covers {len(keys.layers)} layers, model has {len(model.layers)}")
    mapped = MappedModel(
        config=config, seed=keys.seed, num_classes=model.num_classes,
        input_bits=model.input_bits,
    )
    for li, (layer, lk) in enumerate(zip(model.layers, keys.layers)):
        wmat = layer.vmm_matrix()
        if tuple(wmat.shape) != tuple(lk.shape):
            raise ValueError(
                f"layer {li} is {wmat.shape}, keys were generated for {lk.shape}")
        lo, hi = int_range(config.weight_bits, signed=True)
        if wmat.min() < lo or wmat.max() > hi:
            raise ValueError(
                f"layer {li} weights exceed the signed {config.weight_bits}-bit range")
        spans = tile_grid(wmat.shape, config)
        if len(spans) != len(lk.tiles):
            raise ValueError(f"layer {li}: key store has {len(lk.tiles)} tiles, "
                             f"geometry needs {len(spans)}")
        mts = []
        for ti, ((rspan, cspan), key) in enumerate(zip(spans, lk.tiles)):
            sub = wmat[rspan[0]:rspan[1], cspan[0]:cspan[1]]
            fill = KeyStream(keys.seed, f"layer{li}/tile{ti}/pad")
            padded = pad_matrix(sub, config.rows, config.weight_cols, fill,
                                key.row_mask, key.col_mask)
            mts.append(MappedTile(rspan, cspan, _map_padded(padded, key, config)))
        mapped.layers.append(MappedLayer(
            skeleton=LayerSkeleton.from_layer(layer),
            shape=tuple(wmat.shape),
            mapped_tiles=mts,
        ))
    return mapped


def unmap_model(mapped: MappedModel, keys: KeyStore) -> list[np.ndarray]:
    """Recover each layer's VMM weight matrix under the given keys."""
    if len(keys.layers) != len(mapped.layers):
        raise ValueError("key store and mapped model disagree on layer count")
    out = []
    for layer, lk in zip(mapped.layers, keys.layers):
        m, n = layer.shape
        w = np.zeros((m, n), dtype=np.int64)
        if len(lk.tiles) != len(layer.mapped_tiles):
            raise ValueError("key store and mapped model disagree on tile count")
        for mt, key in zip(layer.mapped_tiles, lk.tiles):
            chunk = unmap_tile(mt.tiles, key, mapped.config)
            (r0, r1), (c0, c1) = mt.row_span, mt.col_span
            if chunk.shape != (r1 - r0, c1 - c0):
                raise ValueError("key masks do not match the tile's logical span")
            w[r0:r1, c0:c1] = chunk
        out.append(w)
    return out
