import csv
import json
from types import SimpleNamespace

import numpy as np
import pytest

from xbarsec.adversary import (
    ATTACK_CONTROL,
    ATTACK_DNC,
    ATTACK_RANDOM,
    AttackReport,
    attack_correct_keys,
    attack_divide_and_conquer,
    attack_random_keys,
    extract_weights,
    extracted_network,
    per_layer_sweep,
    random_key_guess,
    sample_targets,
)
from xbarsec.crossbar import SCHEME_BIASED, SCHEME_DIFFERENTIAL, CrossbarConfig
from xbarsec.fixtures import load_dataset, load_model
from xbarsec.mapping import TileKey, encode_scheme1, generate_model_keys, map_model
from xbarsec.network import Dataset, evaluate_reference
from xbarsec.tensors import LayerSpec, QuantTensor


def fc_model(*mats, bits=8):
    layers = [LayerSpec(kind="fc", weight=QuantTensor.from_array(m, bits=bits, signed=True),
                        relu=False) for m in mats]
    return SimpleNamespace(layers=layers, num_classes=mats[-1].shape[1], input_bits=8)


def full_tile_cfg(scheme=SCHEME_BIASED):
    return CrossbarConfig(rows=16, cols=5 if scheme == SCHEME_BIASED else 4,
                          device_bits=1, groups=8, wl_active=4, block_rows=4,
                          scheme=scheme, sum_column=scheme == SCHEME_BIASED)


class TestExtraction:
    @pytest.mark.parametrize("scheme", [SCHEME_BIASED, SCHEME_DIFFERENTIAL])
    def test_correct_keys_recover_exact_weights(self, scheme):
        rng = np.random.default_rng(scheme)
        cfg = full_tile_cfg(scheme)
        w = rng.integers(-128, 128, (16, 4))
        model = fc_model(w)
        keys = generate_model_keys(cfg, model, seed=3)
        mapped = map_model(model, cfg, keys)
        (got,) = extract_weights(mapped, keys)
        assert np.array_equal(got.asarray(), w)

    def test_complement_guess_reads_encoded_column(self):
        # guessing "transformed" for a column stored plain returns its
        # complement (in the biased storage domain)
        rng = np.random.default_rng(4)
        cfg = full_tile_cfg()
        w = rng.integers(-128, 128, (16, 4))
        model = fc_model(w)
        keys = generate_model_keys(cfg, model, seed=0, protected_layers=[])
        mapped = map_model(model, cfg, keys)
        tk = keys.layers[0].tiles[0]
        bits = tk.transform_bits.copy()
        bits[:, 2] = 1
        keys.layers[0].tiles[0] = TileKey(bits, tk.row_mask, tk.col_mask)
        (got,) = extract_weights(mapped, keys)
        expect_col = encode_scheme1(w[:, 2] + cfg.bias_offset, cfg.weight_bits) - cfg.bias_offset
        assert np.array_equal(got.asarray()[:, 2], expect_col)
        others = [0, 1, 3]
        assert np.array_equal(got.asarray()[:, others], w[:, others])

    def test_zero_guess_wrong_exactly_on_transformed_blocks(self):
        rng = np.random.default_rng(5)
        cfg = full_tile_cfg()
        w = rng.integers(-128, 128, (16, 4))
        model = fc_model(w)
        keys = generate_model_keys(cfg, model, seed=6)  # random bits, full tile
        mapped = map_model(model, cfg, keys)
        tk = keys.layers[0].tiles[0]
        zero_guess = generate_model_keys(cfg, model, seed=0, protected_layers=[])
        (got,) = extract_weights(mapped, zero_guess)
        diff = (got.asarray() != w)
        expanded = np.repeat(tk.transform_bits.astype(bool), cfg.block_rows, axis=0)
        # complement of a stored value never equals itself (odd top), so the
        # mismatch mask is exactly the key matrix
        assert np.array_equal(diff, expanded)

    def test_differential_flip_of_extreme_weight_fits_headroom(self):
        cfg = full_tile_cfg(SCHEME_DIFFERENTIAL)
        w = np.full((16, 4), -128)
        model = fc_model(w)
        keys = generate_model_keys(cfg, model, seed=1, protected_layers=[])
        mapped = map_model(model, cfg, keys)
        tk = keys.layers[0].tiles[0]
        ones = np.ones_like(tk.transform_bits)
        keys.layers[0].tiles[0] = TileKey(ones, tk.row_mask, tk.col_mask)
        (got,) = extract_weights(mapped, keys)
        assert got.bits == 9
        assert np.all(got.asarray() == 128)  # sign-flipped readout

    def test_extracted_network_runs(self):
        rng = np.random.default_rng(7)
        cfg = full_tile_cfg()
        w = rng.integers(-128, 128, (16, 3))
        model = fc_model(w)
        keys = generate_model_keys(cfg, model, seed=2)
        mapped = map_model(model, cfg, keys)
        net = extracted_network(mapped, keys)
        x = rng.integers(0, 256, 16)
        assert np.array_equal(
            net.layers[0].weight.asarray(), w)
        assert net.num_classes == 3
        from xbarsec.network import infer_reference
        assert infer_reference(net, x).shape == (3,)


@pytest.fixture(scope="module")
def fixture_setup():
    model = load_model("mlp")
    ds = load_dataset()
    cfg = CrossbarConfig()  # evaluation defaults: 256x256, 8 groups, 1-bit cells
    return model, ds, cfg


class TestRandomKeyAttack:
    def test_unprotected_model_extracts_at_baseline_every_trial(self, fixture_setup):
        model, ds, cfg = fixture_setup
        keys = generate_model_keys(cfg, model, seed=1, protected_layers=[])
        mapped = map_model(model, cfg, keys)
        baseline = evaluate_reference(model, ds)
        rep = attack_random_keys(mapped, keys, ds, trials=3, rng=0)
        assert rep.kind == ATTACK_RANDOM
        assert all(a == baseline for a in rep.accuracies)

    def test_fully_protected_collapses_to_chance(self, fixture_setup):
        model, ds, cfg = fixture_setup
        keys = generate_model_keys(cfg, model, seed=2)
        mapped = map_model(model, cfg, keys)
        rep = attack_random_keys(mapped, keys, ds, trials=10, rng=1)
        assert abs(rep.mean_accuracy - rep.chance) < 0.08

    def test_control_attack_matches_baseline_exactly(self, fixture_setup):
        model, ds, cfg = fixture_setup
        keys = generate_model_keys(cfg, model, seed=3)
        mapped = map_model(model, cfg, keys)
        baseline = evaluate_reference(model, ds)
        rep = attack_correct_keys(mapped, keys, ds)
        assert rep.kind == ATTACK_CONTROL
        assert rep.accuracies == [baseline]

    def test_monotone_protection_coverage(self, fixture_setup):
        # protecting everything is at least as strong (within noise) as any
        # single layer
        model, ds, cfg = fixture_setup
        results = dict(per_layer_sweep(model, cfg, ds, trials=8, seed=5))
        all_mean = results["all"].mean_accuracy
        for label, rep in results.items():
            if label != "all":
                assert all_mean <= rep.mean_accuracy + 0.05, label

    def test_trials_validated(self, fixture_setup):
        model, ds, cfg = fixture_setup
        keys = generate_model_keys(cfg, model, seed=1)
        mapped = map_model(model, cfg, keys)
        with pytest.raises(ValueError, match="trials"):
            attack_random_keys(mapped, keys, ds, trials=0, rng=0)

    def test_guess_masks_also_randomizes_placement(self, fixture_setup):
        model, ds, cfg = fixture_setup
        keys = generate_model_keys(cfg, model, seed=4)
        rng = np.random.default_rng(9)
        guess = random_key_guess(keys, rng, guess_masks=True)
        true_tk = keys.layers[0].tiles[0]
        guess_tk = guess.layers[0].tiles[0]
        assert guess_tk.real_rows == true_tk.real_rows
        assert not np.array_equal(guess_tk.row_mask, true_tk.row_mask)


class TestDivideAndConquer:
    def test_single_protected_column_is_distinguishable(self, fixture_setup):
        model, ds, cfg = fixture_setup
        keys = generate_model_keys(cfg, model, seed=5, protected_layers=[])
        tk = keys.layers[2].tiles[0]
        bits = tk.transform_bits.copy()
        bits[0, 0] = 1  # block 0 holds the identity-placed real rows
        keys.layers[2].tiles[0] = TileKey(bits, tk.row_mask, tk.col_mask)
        keys.layers[2].protected = True
        mapped = map_model(model, cfg, keys)
        rep = attack_divide_and_conquer(mapped, keys, ds, [(2, 0, 0, 0)], rng=1)
        row = rep.rows[0]
        assert row["true_bit"] == 1
        assert row["distinguishable"]
        # the correct bit is the one with the higher accuracy
        assert row["acc_bit1"] > row["acc_bit0"]

    def test_fully_protected_hides_the_bits(self, fixture_setup):
        model, ds, cfg = fixture_setup
        keys = generate_model_keys(cfg, model, seed=6)
        mapped = map_model(model, cfg, keys)
        targets = sample_targets(keys, 25, rng=2)
        rep = attack_divide_and_conquer(mapped, keys, ds, targets, rng=3)
        frac = rep.summary()["fraction_distinguishable"]
        assert frac <= 0.12
        assert abs(rep.mean_accuracy - rep.chance) < 0.08

    def test_empty_schedule_gives_empty_report(self, fixture_setup):
        model, ds, cfg = fixture_setup
        keys = generate_model_keys(cfg, model, seed=7)
        mapped = map_model(model, cfg, keys)
        rep = attack_divide_and_conquer(mapped, keys, ds, [], rng=0)
        assert rep.trials == 0 and rep.rows == []

    def test_sample_targets_cover_protected_layers_only(self, fixture_setup):
        model, ds, cfg = fixture_setup
        keys = generate_model_keys(cfg, model, seed=8, protected_layers=[1])
        targets = sample_targets(keys, 10_000, rng=0)
        assert targets and all(t[0] == 1 for t in targets)


class TestAttackReportFiles:
    def test_csv_and_json_outputs(self, tmp_path):
        rep = AttackReport(kind=ATTACK_RANDOM, chance=0.1,
                           accuracies=[0.1, 0.2, 0.3],
                           rows=[{"trial": i, "accuracy": a}
                                 for i, a in enumerate([0.1, 0.2, 0.3])])
        csv_path = tmp_path / "r.csv"
        json_path = tmp_path / "r.json"
        rep.save_csv(csv_path)
        rep.save_json(json_path)
        with open(csv_path) as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 3 and rows[1]["accuracy"] == "0.2"
        doc = json.loads(json_path.read_text())
        assert doc["trials"] == 3
        assert doc["mean_accuracy"] == pytest.approx(0.2)
        assert doc["per_trial_accuracy"] == [0.1, 0.2, 0.3]
