import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from xbarsec.crossbar import SCHEME_BIASED, SCHEME_DIFFERENTIAL, CrossbarConfig, GeometryError
from xbarsec.overhead import (
    config_security_bits,
    key_storage_bits,
    overhead_table,
    security_bits,
    security_summary,
    unpadded_security_bits,
)


def eval_config(scheme=SCHEME_BIASED):
    return CrossbarConfig(rows=256, cols=257 if scheme == SCHEME_DIFFERENTIAL else 256,
                          scheme=scheme, sum_column=True)


class TestSecurityBits:
    def test_worked_example_exponents(self):
        # 128x128 crossbar split into 8 keyed blocks
        assert security_bits(128, 128, 8, SCHEME_BIASED) == 1016
        assert security_bits(128, 128, 8, SCHEME_DIFFERENTIAL) == 1024

    def test_unpadded_small_matrix(self):
        assert unpadded_security_bits(32, 32, 8) == 128

    def test_config_level_key_bits(self):
        # k = M/x blocks, one column reserved for the input sum
        c1 = CrossbarConfig(rows=128, cols=128, device_bits=1, groups=8,
                            wl_active=8, block_rows=8, scheme=SCHEME_BIASED)
        assert config_security_bits(c1) == 16 * 127
        c2 = CrossbarConfig(rows=128, cols=128, device_bits=1, groups=8,
                            wl_active=8, block_rows=8,
                            scheme=SCHEME_DIFFERENTIAL, sum_column=False)
        assert config_security_bits(c2) == 16 * 128

    def test_geometry_validation(self):
        with pytest.raises(GeometryError):
            security_bits(16, 16, 32, SCHEME_BIASED)
        with pytest.raises(GeometryError):
            unpadded_security_bits(30, 32, 8)

    @given(st.integers(1, 64), st.integers(2, 512))
    @settings(max_examples=60, deadline=None)
    def test_linear_in_blocks_and_cols(self, blocks, cols):
        rows = 2 * blocks  # keep every call's block count within the rows
        s2 = security_bits(rows, cols, blocks, SCHEME_DIFFERENTIAL)
        assert s2 == blocks * cols
        assert security_bits(rows, cols, 2 * blocks, SCHEME_DIFFERENTIAL) == 2 * s2
        assert security_bits(rows, 2 * cols, blocks, SCHEME_DIFFERENTIAL) == 2 * s2
        s1 = security_bits(rows, cols, blocks, SCHEME_BIASED)
        assert s1 == blocks * (cols - 1)


class TestKeyStorage:
    def test_published_per_module_formulas(self):
        cfg = eval_config()
        assert key_storage_bits("date20", cfg) == 3072
        assert key_storage_bits("asp21", cfg) == 2176
        assert key_storage_bits("sram20", cfg) == 2048

    def test_our_per_pe_storage(self):
        # 256x257 differential pair, 32-row blocks: 8 x 256 transform bits
        cfg = eval_config(SCHEME_DIFFERENTIAL)
        assert key_storage_bits("our", cfg) == 8 * 256 == 2048
        # padded tiles add rows+cols placement bits each
        assert key_storage_bits("our", cfg, padded_tiles=2) == 2048 + 2 * (256 + 257)

    def test_unknown_method_rejected(self):
        with pytest.raises(ValueError, match="unknown method"):
            key_storage_bits("nope", eval_config())

    def test_formulas_scale_with_rows(self):
        cfg = CrossbarConfig(rows=128, cols=128, device_bits=1, groups=8,
                             wl_active=16, block_rows=16)
        assert key_storage_bits("date20", cfg) == 48 * 4 * 8
        assert key_storage_bits("asp21", cfg) == 128 * 8 + 8 * 8
        assert key_storage_bits("sram20", cfg) == 128 * 7


class TestOverheadTable:
    def test_scheme1_skips_pair_only_method(self):
        rows = overhead_table(eval_config(SCHEME_BIASED))
        methods = [r.method for r in rows]
        assert methods == ["our", "asp21", "sram20"]

    def test_scheme2_ratios_and_published_literals(self):
        rows = {r.method: r for r in overhead_table(eval_config(SCHEME_DIFFERENTIAL))}
        assert set(rows) == {"our", "date20", "asp21", "sram20"}
        ours = rows["our"].key_storage_bits
        assert ours == 2048
        assert rows["date20"].key_ratio_vs_our == pytest.approx(3072 / 2048)
        # published ratios ride along for display, not forced to match
        assert rows["date20"].published["key_storage"] == 1.43
        assert rows["sram20"].published["area"] == 3439.05

    def test_security_summary_carries_worked_example(self):
        doc = security_summary(eval_config())
        assert doc["worked_example"]["scheme1_log2"] == 1016
        assert doc["worked_example"]["scheme2_log2"] == 1024
        assert doc["unpadded_32x32_log2"] == 128
        assert doc["per_crossbar_key_bits"] == 8 * 255
