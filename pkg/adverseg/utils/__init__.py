"""Utility modules for adverseg."""

from adverseg.utils.config import Config

__all__ = ["Config"]
