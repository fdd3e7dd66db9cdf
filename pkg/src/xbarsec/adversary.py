"""The attacker's side: read conductances, guess keys, measure what leaks.

The threat model: the adversary knows the network structure and can read
every conductance value out of the crossbars, but not the key material. They
reconstruct weights under guessed keys and run the extracted model in
software. The harness measures how well such extractions classify, both for
independent random guesses and for the divide-and-conquer strategy of
probing one (block, column) key bit at a time.

Placement masks of padded tiles are key material too; by default the harness
grants them to the adversary so the measured effectiveness isolates the
column-encoding defense (set guess_masks=True to make the adversary guess
them as well, which only strengthens the protection).
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .mapping import KeyStore, LayerKeys, MappedModel, TileKey, unmap_model
from .network import Dataset, NetworkModel, evaluate_reference
from .tensors import QuantTensor

ATTACK_RANDOM = "random-key"
ATTACK_DNC = "divide-and-conquer"
ATTACK_CONTROL = "correct-key control"


@dataclass
class AttackReport:
    """Outcome of an extraction experiment."""

    kind: str
    chance: float
    accuracies: list[float] = field(default_factory=list)
    rows: list[dict] = field(default_factory=list)
    params: dict = field(default_factory=dict)

    @property
    def trials(self) -> int:
        return len(self.accuracies)

    @property
    def mean_accuracy(self) -> float:
        return float(np.mean(self.accuracies)) if self.accuracies else float("nan")

    @property
    def stddev_accuracy(self) -> float:
        return float(np.std(self.accuracies)) if self.accuracies else float("nan")

    def summary(self) -> dict:
        doc = {
            "kind": self.kind,
            "trials": self.trials,
            "mean_accuracy": self.mean_accuracy,
            "stddev_accuracy": self.stddev_accuracy,
            "chance": self.chance,
            "params": self.params,
        }
        if self.kind == ATTACK_DNC and self.rows:
            doc["targets"] = len(self.rows)
            doc["fraction_distinguishable"] = float(
                np.mean([r["distinguishable"] for r in self.rows]))
        return doc

    def save_json(self, path) -> None:
        doc = self.summary()
        doc["per_trial_accuracy"] = self.accuracies
        tmp = f"{path}.tmp"
        with open(tmp, "w") as fh:
            json.dump(doc, fh, sort_keys=True, indent=2)
            fh.write("\n")
        os.replace(tmp, path)

    def save_csv(self, path) -> None:
        """One row per trial (or per probed target for divide-and-conquer)."""
        if self.rows:
            fields = list(self.rows[0].keys())
            rows = self.rows
        else:
            fields = ["trial", "accuracy"]
            rows = [{"trial": i, "accuracy": a} for i, a in enumerate(self.accuracies)]
        tmp = f"{path}.tmp"
        with open(tmp, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=fields)
            writer.writeheader()
            writer.writerows(rows)
        os.replace(tmp, path)


def extract_weights(mapped: MappedModel, guessed_keys: KeyStore) -> list[QuantTensor]:
    """Reconstruct per-layer weights from conductances under guessed keys.

    Exactly inverts the mapping when the guess is right. A wrong transform
    bit reads that block of the column in complement form; under the
    differential scheme that is a sign flip, which can exceed the nominal
    signed range by one value, hence the one extra headroom bit.
    """
    mats = unmap_model(mapped, guessed_keys)
    bits = mapped.config.weight_bits + (1 if mapped.config.scheme == 2 else 0)
    return [QuantTensor.from_array(m, bits=bits, signed=True) for m in mats]


def extracted_network(mapped: MappedModel, guessed_keys: KeyStore) -> NetworkModel:
    """Software re-implementation of the stolen model under guessed keys."""
    weights = extract_weights(mapped, guessed_keys)
    layers = [ml.skeleton.as_layer(w.asarray().reshape(ml.shape), bits=w.bits)
              for ml, w in zip(mapped.layers, weights)]
    return NetworkModel(layers=layers, num_classes=mapped.num_classes,
                        input_bits=mapped.input_bits)


def random_key_guess(keys: KeyStore, rng: np.random.Generator,
                     guess_masks: bool = False) -> KeyStore:
    """A uniform random guess with the same geometry as the installed keys.

    Unprotected layers are mapped in the clear by convention, so the guess
    leaves them alone. Placement masks are copied from the installed keys
    unless `guess_masks` asks for random (order-preserving) placements.
    """
    guess = KeyStore(config=keys.config, seed=-1)
    cfg = keys.config
    for lk in keys.layers:
        tiles = []
        for key in lk.tiles:
            if not lk.protected:
                tiles.append(key)
                continue
            bits = rng.integers(0, 2, key.transform_bits.shape).astype(np.uint8)
            if guess_masks:
                row_mask = _random_mask(rng, cfg.rows, key.real_rows)
                col_mask = _random_mask(rng, cfg.weight_cols, key.real_cols)
            else:
                row_mask, col_mask = key.row_mask, key.col_mask
            tiles.append(TileKey(bits, row_mask, col_mask))
        guess.layers.append(LayerKeys(shape=lk.shape, protected=lk.protected, tiles=tiles))
    return guess


def _random_mask(rng: np.random.Generator, n: int, k: int) -> np.ndarray:
    mask = np.zeros(n, dtype=bool)
    mask[rng.choice(n, size=k, replace=False)] = True
    return mask


def blind_key_guess(mapped: MappedModel, rng) -> KeyStore:
    """A guess built from the mapped model alone, with no key material.

    Transform bits are uniform random for every layer (the guesser cannot
    tell protected layers apart) and placements are assumed to be the
    leading rows/columns of each tile.
    """
    rng = _as_rng(rng)
    cfg = mapped.config
    guess = KeyStore(config=cfg, seed=-1)
    for ml in mapped.layers:
        tiles = []
        for mt in ml.mapped_tiles:
            bits = rng.integers(0, 2, (cfg.blocks, cfg.weight_cols)).astype(np.uint8)
            rows_used = mt.row_span[1] - mt.row_span[0]
            cols_used = mt.col_span[1] - mt.col_span[0]
            tiles.append(TileKey(bits,
                                 np.arange(cfg.rows) < rows_used,
                                 np.arange(cfg.weight_cols) < cols_used))
        guess.layers.append(LayerKeys(shape=ml.shape, protected=True, tiles=tiles))
    return guess


def attack_random_keys(mapped: MappedModel, keys: KeyStore, dataset: Dataset,
                       trials: int, rng, guess_masks: bool = False) -> AttackReport:
    """Extract with fresh uniform random keys `trials` times and score each.

    `keys` contributes only geometry and (by default) placement masks; the
    transform bits the defense actually used are never consulted.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = _as_rng(rng)
    report = AttackReport(kind=ATTACK_RANDOM, chance=1.0 / mapped.num_classes,
                          params={"trials": trials, "guess_masks": guess_masks})
    for t in range(trials):
        guess = random_key_guess(keys, rng, guess_masks=guess_masks)
        acc = evaluate_reference(extracted_network(mapped, guess), dataset)
        report.accuracies.append(acc)
        report.rows.append({"trial": t, "accuracy": acc})
    return report


def attack_correct_keys(mapped: MappedModel, keys: KeyStore, dataset: Dataset,
                        trials: int = 1) -> AttackReport:
    """Control run: extraction under the true keys must match the baseline."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    report = AttackReport(kind=ATTACK_CONTROL, chance=1.0 / mapped.num_classes,
                          params={"trials": trials})
    acc = evaluate_reference(extracted_network(mapped, keys), dataset)
    report.accuracies = [acc] * trials
    report.rows = [{"trial": t, "accuracy": acc} for t in range(trials)]
    return report


def enumerate_targets(keys: KeyStore):
    """All (layer, tile, block, column) key bits of protected layers."""
    out = []
    for li, lk in enumerate(keys.layers):
        if not lk.protected:
            continue
        for ti, key in enumerate(lk.tiles):
            blocks, cols = key.transform_bits.shape
            for b in range(blocks):
                for c in range(cols):
                    out.append((li, ti, b, c))
    return out


def sample_targets(keys: KeyStore, count: int, rng) -> list[tuple[int, int, int, int]]:
    rng = _as_rng(rng)
    universe = enumerate_targets(keys)
    if not universe:
        return []
    idx = rng.choice(len(universe), size=min(count, len(universe)), replace=False)
    return [universe[i] for i in sorted(idx)]


def gap_standard_error(a0: float, a1: float, n: int) -> float:
    """Standard error of an accuracy difference measured on n samples."""
    return math.sqrt((a0 * (1.0 - a0) + a1 * (1.0 - a1)) / n)


def attack_divide_and_conquer(mapped: MappedModel, keys: KeyStore, dataset: Dataset,
                              targets, rng, se_factor: float = 3.0) -> AttackReport:
    """Probe single key bits: is the correct value visible in the accuracy?

    For each (layer, tile, block, column) target the remaining guess is held
    fixed at fresh uniform random values while the target bit is tried both
    ways. The bit counts as distinguishable when the accuracy gap exceeds
    `se_factor` standard errors of the gap on this evaluation set.
    """
    rng = _as_rng(rng)
    report = AttackReport(kind=ATTACK_DNC, chance=1.0 / mapped.num_classes,
                          params={"se_factor": se_factor, "targets": len(targets)})
    n = len(dataset)
    for li, ti, b, c in targets:
        guess = random_key_guess(keys, rng)
        accs = []
        for bit in (0, 1):
            tk = guess.layers[li].tiles[ti]
            bits = tk.transform_bits.copy()
            bits[b, c] = bit
            guess.layers[li].tiles[ti] = TileKey(bits, tk.row_mask, tk.col_mask)
            accs.append(evaluate_reference(extracted_network(mapped, guess), dataset))
        a0, a1 = accs
        gap = abs(a1 - a0)
        se = gap_standard_error(a0, a1, n)
        true_bit = int(keys.layers[li].tiles[ti].transform_bits[b, c])
        distinguishable = gap > se_factor * se
        report.accuracies.extend(accs)
        report.rows.append({
            "layer": li, "tile": ti, "block": b, "column": c,
            "acc_bit0": a0, "acc_bit1": a1, "gap": gap, "stderr": se,
            "true_bit": true_bit, "distinguishable": distinguishable,
        })
    return report


def _as_rng(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def per_layer_sweep(model: NetworkModel, config, dataset: Dataset, trials: int,
                    seed: int, guess_masks: bool = False):
    """Random-key attack effectiveness per protection choice.

    Maps the model once per choice (each single layer, then all layers) and
    reports the extracted-model accuracy for each. Returns a list of
    (label, AttackReport) pairs; the installed keys differ per choice but all
    derive from `seed`.
    """
    from .mapping import generate_model_keys, map_model

    choices = [(f"layer{li}", [li]) for li in range(len(model.layers))]
    choices.append(("all", None))
    results = []
    for ci, (label, protected) in enumerate(choices):
        keys = generate_model_keys(config, model, seed=seed + ci, protected_layers=protected)
        mapped = map_model(model, config, keys)
        report = attack_random_keys(mapped, keys, dataset, trials,
                                    rng=np.random.default_rng([seed, ci]),
                                    guess_masks=guess_masks)
        report.params["protected"] = label
        results.append((label, report))
    return results
