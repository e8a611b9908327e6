"""Configuration package for simulator, tuner and controller settings."""

from .settings import Settings, settings

__all__ = ["Settings", "settings"]
