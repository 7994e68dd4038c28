"""Configuration management for sdebounds."""

import os
from typing import Any, Dict, Optional

import yaml
from pydantic import BaseModel, field_validator

from .exceptions import ConfigurationError
from .models import QuadratureConfig

DEFAULT_SEED = 20240601


class Settings(BaseModel):
    """Run-wide settings for sdebounds."""

    # Reproducibility
    seed: int = DEFAULT_SEED
    threads: int = 1

    # Quadrature policy
    abs_tol: float = 1e-10
    rel_tol: float = 1e-9
    max_subdivisions: int = 200

    # Verification
    confidence: float = 0.99

    # Output settings
    output_dir: str = "out"
    log_level: str = "INFO"

    @field_validator("seed")
    @classmethod
    def validate_seed(cls, v):
        if not 0 <= v < 2**64:
            raise ValueError("Seed must be a 64-bit unsigned integer")
        return v

    @field_validator("threads", "max_subdivisions")
    @classmethod
    def validate_positive(cls, v):
        if v < 1:
            raise ValueError("Value must be at least 1")
        return v

    @field_validator("abs_tol", "rel_tol")
    @classmethod
    def validate_tolerance(cls, v):
        if v <= 0:
            raise ValueError("Tolerances must be positive")
        return v

    @field_validator("confidence")
    @classmethod
    def validate_confidence(cls, v):
        if not 0 < v < 1:
            raise ValueError("Confidence level must lie in (0, 1)")
        return v

    @field_validator("log_level")
    @classmethod
    def validate_log_level(cls, v):
        level = v.upper()
        if level not in ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"):
            raise ValueError(f"Unknown log level: {v}")
        return level

    @classmethod
    def load(cls, config_file: Optional[str] = None) -> "Settings":
        """Load settings from an optional YAML file and the environment."""
        config_data: Dict[str, Any] = {}

        # Load from config file if provided
        if config_file:
            try:
                with open(config_file, "r", encoding="utf-8") as f:
                    file_config = yaml.safe_load(f)
                    if file_config:
                        config_data.update(file_config)
            except Exception as e:
                raise ConfigurationError(
                    f"Failed to load config file {config_file}: {e}"
                )

        # Override with environment variables
        env_mapping = {
            "SDB_SEED": "seed",
            "SDB_THREADS": "threads",
            "SDB_ABS_TOL": "abs_tol",
            "SDB_REL_TOL": "rel_tol",
            "SDB_MAX_SUBDIVISIONS": "max_subdivisions",
            "SDB_CONFIDENCE": "confidence",
            "SDB_OUTPUT_DIR": "output_dir",
            "SDB_LOG_LEVEL": "log_level",
        }

        for env_var, config_key in env_mapping.items():
            env_value = os.getenv(env_var)
            if env_value is None:
                continue
            # Handle type conversion
            try:
                if config_key in ["seed", "threads", "max_subdivisions"]:
                    config_data[config_key] = int(env_value)
                elif config_key in ["abs_tol", "rel_tol", "confidence"]:
                    config_data[config_key] = float(env_value)
                else:
                    config_data[config_key] = env_value
            except ValueError as e:
                raise ConfigurationError(f"Invalid value for {env_var}: {e}")

        try:
            return cls(**config_data)
        except Exception as e:
            raise ConfigurationError(f"Invalid configuration: {e}")

    def quadrature(self) -> QuadratureConfig:
        """Quadrature policy derived from these settings."""
        return QuadratureConfig(
            abs_tol=self.abs_tol,
            rel_tol=self.rel_tol,
            max_subdivisions=self.max_subdivisions,
        )

    def to_dict(self) -> Dict[str, Any]:
        """Convert settings to dictionary."""
        return self.model_dump()

    def save(self, filepath: str):
        """Save settings to a YAML file."""
        try:
            with open(filepath, "w", encoding="utf-8") as f:
                yaml.dump(self.to_dict(), f, default_flow_style=False)
        except Exception as e:
            raise ConfigurationError(f"Failed to save config file {filepath}: {e}")
