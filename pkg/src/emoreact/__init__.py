"""Joint emotion detection and reaction prediction with logic constraints."""

__version__ = "0.1.0"
