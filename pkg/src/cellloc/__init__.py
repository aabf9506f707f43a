"""Provider-side cellular fingerprint localization."""

__version__ = "0.1.0"
