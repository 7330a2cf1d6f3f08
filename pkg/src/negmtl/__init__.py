"""Joint negation tagging and document-level sentiment with hard parameter sharing."""

__version__ = "0.1.0"
