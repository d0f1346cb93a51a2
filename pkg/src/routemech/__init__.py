"""Strategy-proof mechanisms for centralized multi-commodity route allocation."""

__version__ = "0.1.0"
