import numpy as np
import pytest

from xbarsec.crossbar import (
    SCHEME_BIASED,
    SCHEME_DIFFERENTIAL,
    CrossbarConfig,
    segment_ranges,
    sum_of_inputs,
    xbar_vmm_segment,
)
from xbarsec.decode import decode_block_pipeline, group_segments_to_blocks
from xbarsec.mapping import generate_model_keys, map_model
from xbarsec.network import (
    Dataset,
    NetworkModel,
    _tile_forward,
    accuracy,
    evaluate_mapped,
    evaluate_reference,
    infer_mapped,
    infer_reference,
    predict,
)
from xbarsec.tensors import LayerSpec, QuantTensor

from microgen import random_inputs, random_micro_model


def _fc(w, **kw):
    return LayerSpec(kind="fc", weight=QuantTensor.from_array(w, bits=8, signed=True), **kw)


class TestReferencePath:
    def test_identity_layer_returns_input(self):
        model = NetworkModel(layers=[_fc(np.eye(6, dtype=int), relu=False)],
                             num_classes=6)
        x = np.array([5, 0, 250, 3, 9, 1])
        assert infer_reference(model, x).tolist() == x.tolist()

    def test_zero_input_zero_preactivation(self):
        rng = np.random.default_rng(0)
        model = NetworkModel(layers=[_fc(rng.integers(-128, 128, (8, 4)), relu=False)],
                             num_classes=4)
        assert infer_reference(model, np.zeros(8, dtype=int)).tolist() == [0] * 4

    def test_relu_shift_saturation(self):
        w = np.array([[100, -100]])
        model = NetworkModel(
            layers=[_fc(w, relu=True, out_shift=1),
                    _fc(np.eye(2, dtype=int), relu=False)],
            num_classes=2)
        # pre-activation (500, -500) -> relu (500, 0) -> shift (250, 0) -> clip (250, 0)
        got = infer_reference(model, np.array([5]))
        assert got.tolist() == [250, 0]
        # saturation at the 8-bit activation ceiling
        got = infer_reference(model, np.array([12]))
        assert got.tolist() == [255, 0]

    def test_batch_rows_match_single_calls(self):
        rng = np.random.default_rng(1)
        model = NetworkModel(
            layers=[_fc(rng.integers(-50, 50, (10, 6)), out_shift=3),
                    _fc(rng.integers(-50, 50, (6, 3)), relu=False)],
            num_classes=3)
        xs = rng.integers(0, 256, (5, 10))
        batch = infer_reference(model, xs)
        for i in range(5):
            assert batch[i].tolist() == infer_reference(model, xs[i]).tolist()

    def test_shape_mismatch(self):
        model = NetworkModel(layers=[_fc(np.eye(4, dtype=int), relu=False)], num_classes=4)
        with pytest.raises(ValueError, match="features"):
            infer_reference(model, np.zeros(5, dtype=int))

    def test_layer_chain_validated(self):
        with pytest.raises(ValueError, match="chain"):
            NetworkModel(layers=[_fc(np.zeros((4, 3), dtype=int)),
                                 _fc(np.zeros((4, 2), dtype=int), relu=False)],
                         num_classes=2)


class TestTileForwardAgainstSegmentPath:
    @pytest.mark.parametrize("scheme", [SCHEME_BIASED, SCHEME_DIFFERENTIAL])
    def test_fast_path_equals_faithful_segment_path(self, scheme):
        rng = np.random.default_rng(scheme + 20)
        from types import SimpleNamespace
        cfg = CrossbarConfig(rows=16, cols=5 if scheme == SCHEME_BIASED else 4,
                             device_bits=2, groups=4, wl_active=2, block_rows=4,
                             scheme=scheme, sum_column=scheme == SCHEME_BIASED)
        w = rng.integers(-128, 128, (16, 4))
        model = SimpleNamespace(
            layers=[_fc(w, relu=False)], num_classes=4, input_bits=8)
        keys = generate_model_keys(cfg, model, seed=3)
        mapped = map_model(model, cfg, keys)
        mt = mapped.layers[0].mapped_tiles[0]
        key = keys.layers[0].tiles[0]
        x = rng.integers(0, 256, 16)

        # faithful path: per-segment ADC reads grouped into blocks, decoded,
        # then combined
        segs = segment_ranges(cfg)
        seg_parts = np.zeros((cfg.groups, len(segs), cfg.weight_cols), dtype=np.int64)
        seg_sums = np.zeros(len(segs), dtype=np.int64)
        for si, (r0, r1) in enumerate(segs):
            seg_sums[si] = sum_of_inputs(x[r0:r1])
            for g, tile in enumerate(mt.tiles):
                seg_parts[g, si] = xbar_vmm_segment(tile, x[r0:r1], (r0, r1))[:cfg.weight_cols]
        blocked, bsums = group_segments_to_blocks(seg_parts, seg_sums, cfg)
        per_group = decode_block_pipeline(blocked, bsums, key.transform_bits, cfg)
        from xbarsec.crossbar import shift_add_combine
        slow = shift_add_combine(per_group, cfg)
        if scheme == SCHEME_BIASED:
            slow = slow - cfg.bias_offset * int(x.sum())

        fast = _tile_forward(mt, key, x[None, :], cfg)[0]
        assert fast.tolist() == slow.tolist()


class TestMappedEquivalence:
    @pytest.mark.parametrize("scheme", [SCHEME_BIASED, SCHEME_DIFFERENTIAL])
    def test_correct_keys_match_reference(self, scheme):
        rng = np.random.default_rng(100 + scheme)
        for trial in range(8):
            model, cfg = random_micro_model(rng, scheme, max_fc_dim=64)
            keys = generate_model_keys(cfg, model, seed=int(rng.integers(1 << 30)))
            mapped = map_model(model, cfg, keys)
            xs = random_inputs(rng, model, 3)
            ref = infer_reference(model, xs)
            got = infer_mapped(mapped, keys, xs)
            assert np.array_equal(got, ref), f"scheme {scheme} trial {trial}"

    def test_scheme_invariance_same_scores(self):
        rng = np.random.default_rng(55)
        from types import SimpleNamespace
        w1 = rng.integers(-128, 128, (20, 8))
        w2 = rng.integers(-128, 128, (8, 4))
        model = SimpleNamespace(
            layers=[_fc(w1, out_shift=4), _fc(w2, relu=False)],
            num_classes=4, input_bits=8)
        xs = rng.integers(0, 256, (4, 20))
        scores = []
        for scheme in (SCHEME_BIASED, SCHEME_DIFFERENTIAL):
            cfg = CrossbarConfig(rows=32, cols=9, device_bits=1, groups=8,
                                 wl_active=4, block_rows=8, scheme=scheme,
                                 sum_column=scheme == SCHEME_BIASED)
            keys = generate_model_keys(cfg, model, seed=9)
            mapped = map_model(model, cfg, keys)
            scores.append(infer_mapped(mapped, keys, xs))
        assert np.array_equal(scores[0], scores[1])
        ref_model = NetworkModel(layers=model.layers, num_classes=4, input_bits=8)
        assert np.array_equal(scores[0], infer_reference(ref_model, xs))

    def test_determinism_same_seed_same_outputs(self):
        rng = np.random.default_rng(77)
        model, cfg = random_micro_model(rng, SCHEME_BIASED, max_fc_dim=32)
        xs = random_inputs(rng, model, 2)
        runs = []
        for _ in range(2):
            keys = generate_model_keys(cfg, model, seed=123)
            mapped = map_model(model, cfg, keys)
            runs.append(infer_mapped(mapped, keys, xs))
        assert np.array_equal(runs[0], runs[1])


class TestDatasetAndScoring:
    def test_dataset_roundtrip(self, tmp_path):
        rng = np.random.default_rng(2)
        ds = Dataset(
            inputs=QuantTensor.from_array(rng.integers(0, 256, (10, 4)), bits=8, signed=False),
            labels=rng.integers(0, 3, 10))
        p = tmp_path / "ds.json"
        ds.save(p)
        back = Dataset.load(p)
        assert np.array_equal(back.inputs.asarray(), ds.inputs.asarray())
        assert np.array_equal(back.labels, ds.labels)

    def test_accuracy_and_predict(self):
        scores = np.array([[1, 5, 2], [9, 0, 0], [0, 0, 3], [2, 2, 2]])
        assert predict(scores).tolist() == [1, 0, 2, 0]
        assert accuracy(scores, np.array([1, 0, 2, 1])) == 0.75

    def test_empty_dataset_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            accuracy(np.zeros((0, 3)), np.zeros(0))

    def test_evaluate_paths_agree(self):
        rng = np.random.default_rng(31)
        model, cfg = random_micro_model(rng, SCHEME_BIASED, max_fc_dim=32)
        ds = Dataset(
            inputs=QuantTensor.from_array(random_inputs(rng, model, 12),
                                          bits=model.input_bits, signed=False),
            labels=rng.integers(0, model.num_classes, 12))
        keys = generate_model_keys(cfg, model, seed=1)
        mapped = map_model(model, cfg, keys)
        assert evaluate_mapped(mapped, keys, ds) == evaluate_reference(model, ds)
