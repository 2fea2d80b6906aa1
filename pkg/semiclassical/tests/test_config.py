import json

import pytest

from semiclassical.config import RunConfig, deep_merge, dump_config, load_config, parse_override, read_document
from semiclassical.exceptions import ConfigError


class TestParseOverride:
    def test_nested_json_value(self):
        assert parse_override("selection.c_b=4.5") == {"selection": {"c_b": 4.5}}

    def test_plain_string_value(self):
        assert parse_override("output_dir=runs/x") == {"output_dir": "runs/x"}

    def test_list_value(self):
        assert parse_override("po.alpha=[10, 12]") == {"po": {"alpha": [10, 12]}}

    @pytest.mark.parametrize("text", ["selection.c_b", "=3", "..=3"])
    def test_malformed(self, text):
        with pytest.raises(ConfigError):
            parse_override(text)


class TestDeepMerge:
    def test_sections_merge_and_inputs_untouched(self):
        base = {"grid": {"n_r": 64, "n_theta": 64}, "seed": 0}
        merged = deep_merge(base, {"grid": {"n_r": 128}})
        assert merged == {"grid": {"n_r": 128, "n_theta": 64}, "seed": 0}
        assert base["grid"]["n_r"] == 64


class TestLoadConfig:
    def test_defaults_come_from_settings(self):
        config = load_config()
        assert config.selection.e_ref == 3100.0
        assert config.selection.c_b == 6.0
        assert config.grid.n_r == 128
        assert config.po.alpha == (16.114, 14.123)

    def test_file_then_overrides(self, tmp_path):
        path = tmp_path / "run.json"
        path.write_text(json.dumps({"grid": {"n_r": 64}, "selection": {"e_ref": 2800.0}}))
        config = load_config(path, ["selection.e_ref=2900", "analysis.compare=false"])
        assert config.grid.n_r == 64
        assert config.grid.n_theta == 128
        assert config.selection.e_ref == 2900
        assert config.analysis.compare is False

    def test_toml_document(self, tmp_path):
        path = tmp_path / "run.toml"
        path.write_text('parity = "odd"\n\n[selection]\nc_b = 3.0\n')
        config = load_config(path)
        assert config.parity == "odd"
        assert config.selection.c_b == 3.0

    def test_settings_override(self, settings):
        settings.SCARBASIS_DEFAULTS = {"selection": {"e_ref": 2500.0}}
        assert load_config().selection.e_ref == 2500.0

    def test_dump_reloads_identically(self, tmp_path):
        config = load_config(overrides=["po.seeds=[{\"energy\": 2000, \"theta\": 3.14159}]"])
        path = dump_config(config, tmp_path / "out" / "config.json")
        assert load_config(path) == config


class TestValidation:
    @pytest.mark.parametrize(
        "override",
        [
            "grid.n_r=100",
            "grid.n_theta=16",
            "selection.c_b=-1",
            "selection.e_ref=0",
            "parity=both",
            "po.integ_tol=1e-3",
            "po.step=0",
            "po.alpha=[1.0]",
            "po.seeds=[{\"energy\": 2000, \"strategy\": \"newton\"}]",
            "po.seeds=[{\"theta\": 0.0}]",
            "propagation.tube_min_samples=64",
            "propagation.dt=-1",
            "analysis.match_threshold=0",
            "analysis.reference_states=0",
        ],
    )
    def test_invalid_values(self, override):
        with pytest.raises(ConfigError):
            load_config(overrides=[override])

    def test_unknown_keys(self):
        with pytest.raises(ConfigError):
            load_config(overrides=["selection.cb=3"])
        with pytest.raises(ConfigError):
            load_config(overrides=["verbosity=2"])

    def test_missing_pes_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(overrides=[f"pes_path={json.dumps(str(tmp_path / 'absent.json'))}"])

    def test_missing_config_file(self, tmp_path):
        with pytest.raises(ConfigError):
            read_document(tmp_path / "absent.json")

    def test_unparsable_file(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{grid: 64")
        with pytest.raises(ConfigError):
            read_document(path)


class TestSectionHash:
    def test_hash_tracks_its_own_section(self):
        base = RunConfig.from_dict({})
        changed = RunConfig.from_dict({"selection": {"c_b": 4.0}})
        assert base.section_hash("po") == changed.section_hash("po")
        assert base.section_hash("selection") != changed.section_hash("selection")

    def test_upstream_hashes_chain(self):
        config = RunConfig.from_dict({})
        assert config.section_hash("selection", "a") != config.section_hash("selection", "b")
