"""Version information for coughkit."""

__version__ = "0.1.0"
