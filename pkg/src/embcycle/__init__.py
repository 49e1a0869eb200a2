"""Real-time vs batch embedding evolution laboratory."""

__version__ = "0.1.0"
