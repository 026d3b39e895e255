"""Boosted margin-maximizing pair matching of slide images to video frames."""

__version__ = "0.1.0"
