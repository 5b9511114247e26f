"""Coded-aperture structured-light depth sensing and dark-world navigation toolkit."""

__version__ = "0.1.0"
