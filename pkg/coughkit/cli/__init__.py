"""CLI package for coughkit."""

from .app import app

__all__ = ["app"]
