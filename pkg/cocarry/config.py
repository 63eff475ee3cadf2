"""
Process-wide settings for the co-carrying ergonomics toolkit

Scenario-level numbers (weights, gains, tolerances) live in scenario files,
see ``cocarry.scenario``. This module only holds knobs that belong to the
process: logging, output locations, worker counts and the HTTP service.
"""

import os
from typing import Optional

from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Application settings with environment variable support"""

    model_config = SettingsConfigDict(
        env_prefix="COCARRY_",
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=False,
        extra="ignore",
    )

    # Application settings
    app_name: str = Field("Co-Carrying Ergonomics Toolkit")
    app_version: str = Field("1.0.0")
    debug: bool = Field(False)
    environment: str = Field("development")

    # Service settings
    host: str = Field("127.0.0.1")
    port: int = Field(8000)
    reload: bool = Field(False)
    workers: int = Field(1)
    api_v1_prefix: str = Field("/api/v1")

    # Logging settings
    log_level: str = Field("INFO")
    log_format: str = Field("%(asctime)s - %(name)s - %(levelname)s - %(message)s")
    log_json: bool = Field(False)
    log_file: Optional[str] = Field(None)

    # Run settings
    output_directory: str = Field("./runs")
    batch_workers: int = Field(2, ge=1)
    multistart_workers: int = Field(1, ge=1)


class DevelopmentSettings(Settings):
    """Development environment settings"""
    debug: bool = True
    log_level: str = "DEBUG"


class ProductionSettings(Settings):
    """Production environment settings"""
    debug: bool = False
    log_level: str = "WARNING"
    log_json: bool = True
    workers: int = 4


class TestingSettings(Settings):
    """Testing environment settings"""
    log_level: str = "WARNING"
    output_directory: str = "./.test-runs"
    batch_workers: int = 1


def get_settings() -> Settings:
    """
    Get settings based on environment

    Returns:
        Settings instance appropriate for current environment
    """
    environment = os.getenv("COCARRY_ENVIRONMENT", "development").lower()

    if environment == "production":
        return ProductionSettings()
    elif environment == "testing":
        return TestingSettings()
    else:
        return DevelopmentSettings()


# Global settings instance (can be overridden in tests)
current_settings = get_settings()
