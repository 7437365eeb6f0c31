"""Speaker-aware talking-head animation from landmark sequences."""

__version__ = "0.1.0"
