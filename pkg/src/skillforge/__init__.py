"""Turn a natural-language task description into a trained control policy."""

__version__ = "0.1.0"
