"""Self-scored curriculum learning for small sequence-to-sequence translators."""

__version__ = "0.1.0"
