"""Reference sidecar services for the scenetap wire protocols."""

__version__ = "0.1.0"
