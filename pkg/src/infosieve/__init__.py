"""Learning minimum-length binary category codes for category discovery."""

__version__ = "0.1.0"
