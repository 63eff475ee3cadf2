"""
Process settings and logging setup
"""

import json
import logging

from cocarry.config import DevelopmentSettings, ProductionSettings, Settings, TestingSettings, get_settings
from cocarry.startup import configure_logging


def test_environment_selects_settings(monkeypatch):
    monkeypatch.setenv("COCARRY_ENVIRONMENT", "production")
    assert isinstance(get_settings(), ProductionSettings)
    monkeypatch.setenv("COCARRY_ENVIRONMENT", "Testing")
    assert isinstance(get_settings(), TestingSettings)
    monkeypatch.delenv("COCARRY_ENVIRONMENT")
    assert isinstance(get_settings(), DevelopmentSettings)


def test_environment_variables_override(monkeypatch):
    monkeypatch.setenv("COCARRY_BATCH_WORKERS", "6")
    monkeypatch.setenv("COCARRY_LOG_LEVEL", "error")
    settings = Settings()
    assert settings.batch_workers == 6
    assert settings.log_level == "error"
    assert settings.api_v1_prefix == "/api/v1"


def test_json_log_lines(tmp_path):
    log_file = tmp_path / "cocarry.log"
    settings = Settings(log_json=True, log_file=str(log_file), log_format="%(levelname)s %(name)s %(message)s")
    root = logging.getLogger()
    saved = root.handlers[:], root.level
    try:
        configure_logging(settings, level="info", force=True)
        logging.getLogger("cocarry.test").info("stage done")
        for handler in root.handlers:
            handler.flush()
        record = json.loads(log_file.read_text().splitlines()[-1])
        assert record["message"] == "stage done"
        assert record["name"] == "cocarry.test"
    finally:
        for handler in root.handlers:
            handler.close()
        root.handlers[:] = saved[0]
        root.setLevel(saved[1])
