"""Experiment config files."""

import json

import pytest

from crowdauction.allocation import K_INF
from crowdauction.config import ExperimentConfig
from crowdauction.errors import ConfigurationError


class TestConfig:
    def test_defaults_round_trip(self, tmp_path):
        cfg = ExperimentConfig()
        path = tmp_path / "c.json"
        cfg.dump(path)
        again = ExperimentConfig.load(path)
        assert again.to_dict() == cfg.to_dict()
        assert again.config_hash() == cfg.config_hash()

    def test_implicit_defaults_hash_equal(self):
        explicit = ExperimentConfig().to_dict()
        assert ExperimentConfig.loads("{}").config_hash() == ExperimentConfig.from_dict(explicit).config_hash()

    def test_hash_sensitive(self):
        assert ExperimentConfig.loads('{"seed": 1}').config_hash() != ExperimentConfig().config_hash()

    def test_inf_written_as_string(self):
        d = ExperimentConfig.loads('{"mechanism": {"k": "inf"}}').to_dict()
        assert d["mechanism"]["k"] == "inf"
        assert d["simulation"]["k_grid"][-1] == "inf"
        json.dumps(d, allow_nan=False)

    def test_sections_parsed(self):
        cfg = ExperimentConfig.loads(
            '{"seed": 7, "simulation": {"n_values": [4], "k_grid": [0, "inf"], "repeats": 3},'
            ' "verify": {"trials": 5, "s_values": [-2]}}'
        )
        assert cfg.simulation.seed == 7
        assert cfg.simulation.k_grid == (0.0, K_INF)
        assert cfg.verify.trials == 5
        assert cfg.mechanism.work() == pytest.approx(100.0)

    @pytest.mark.parametrize(
        "text",
        [
            '{"sed": 1}',
            '{"simulation": {"repeat": 3}}',
            '{"seed": -1}',
            '{"seed": 1.5}',
            '{"seed": true}',
            '{"mechanism": {"rho": 2}}',
            '{"verify": {"s_values": [0.5]}}',
            '{"simulation": {"k_grid": ["lots"]}}',
            '{"simulation": {"rhos": []}}',
            '{"distribution": {"kind": "cauchy"}}',
            "not json",
        ],
    )
    def test_rejects(self, text):
        with pytest.raises(ConfigurationError):
            ExperimentConfig.loads(text)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigurationError):
            ExperimentConfig.load(tmp_path / "absent.json")
