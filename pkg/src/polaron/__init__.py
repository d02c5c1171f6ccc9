"""Anisotropic Choquard-Pekar minimizers and spectral checks of their structure."""

__version__ = "0.1.0"
