"""Version information for fuplab."""

__version__ = "0.3.0"
