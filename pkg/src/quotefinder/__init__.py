"""Context-aware quote recommendation from a single source document."""

__version__ = "0.1.0"
