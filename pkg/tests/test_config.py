"""Tests for configuration loading and logging setup"""

import logging

import pytest

from config import DEFAULT_CONFIG_PATH, Config, setup_logging


class TestConfig:
    def test_shipped_file(self):
        config = Config.from_yaml(str(DEFAULT_CONFIG_PATH))
        assert config.default_mode == "auto"
        assert config.max_rational_nonzeros == 20000
        assert config.product_points is True
        assert config.verify_degree == 4

    def test_missing_sections_keep_defaults(self, tmp_path):
        path = tmp_path / "partial.yaml"
        path.write_text("numeric:\n  float_tol: 1.0e-6\n", encoding="utf-8")
        config = Config.from_yaml(str(path))
        assert config.float_tol == pytest.approx(1e-6)
        assert config.degenerate_pivot_limit == Config().degenerate_pivot_limit

    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.yaml"
        path.write_text("", encoding="utf-8")
        assert Config.from_yaml(str(path)).as_dict() == Config().as_dict()

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            Config.from_yaml(str(tmp_path / "absent.yaml"))

    @pytest.mark.parametrize("overrides", [
        {"default_mode": "exact"},
        {"float_tol": 0.0},
        {"verify_degree": 1},
    ])
    def test_validation(self, overrides):
        with pytest.raises(ValueError):
            Config(**overrides).validate()

    def test_tolerances_are_reported(self):
        assert set(Config().tolerances()) == {"float_tol", "dedup_tol", "jacobi_tol", "relative_split_tol"}


class TestLogging:
    def test_file_log_gets_debug_lines(self, tmp_path):
        log_file = tmp_path / "logs" / "run.log"
        root = setup_logging(str(log_file))
        logging.getLogger("beckmann_solver").debug("plan assembled")
        for handler in root.handlers:
            handler.flush()
        text = log_file.read_text(encoding="utf-8")
        assert "Log Started" in text
        assert "plan assembled" in text

    def test_console_level(self):
        root = setup_logging(verbose=True)
        assert [h.level for h in root.handlers] == [logging.INFO]
